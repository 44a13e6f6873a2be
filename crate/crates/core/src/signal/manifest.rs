//! Dataset manifests: one tab-separated record per utterance.
//!
//! Fields are `clean_path`, `noise_path` (`-` when absent), `snr_db`
//! (`-` when absent), and the split tag. Paths are stored relative to the
//! manifest file and resolved against its directory on load.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::SignalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub clean_path: PathBuf,
    pub noise_path: Option<PathBuf>,
    pub snr_db: Option<f64>,
    pub split: Split,
}

impl ManifestRecord {
    /// Load the clean waveform and the noisy mixture. Noise files are
    /// stored pre-scaled (the recorded `snr_db` is bookkeeping), so the
    /// mixture is the exact sample-wise sum.
    pub fn load_pair(&self) -> Result<(super::AudioBuffer, super::AudioBuffer), SignalError> {
        let clean = super::read_wav(&self.clean_path)?;
        let noisy = match &self.noise_path {
            None => clean.clone(),
            Some(noise_path) => {
                let noise = super::read_wav(noise_path)?;
                if noise.sample_rate != clean.sample_rate {
                    return Err(SignalError::RateMismatch(clean.sample_rate, noise.sample_rate));
                }
                if noise.len() != clean.len() {
                    return Err(SignalError::Wav(format!(
                        "{}: noise length {} does not match clean length {}",
                        noise_path.display(),
                        noise.len(),
                        clean.len()
                    )));
                }
                let sum: Vec<f64> = clean
                    .samples
                    .iter()
                    .zip(&noise.samples)
                    .map(|(c, n)| c + n)
                    .collect();
                super::AudioBuffer::new(sum, clean.sample_rate)?
            }
        };
        Ok((clean, noisy))
    }

    /// Utterance id: the clean file stem.
    pub fn id(&self) -> String {
        self.clean_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Parse a manifest and resolve its paths, verifying every referenced
    /// file exists.
    pub fn load(path: &Path) -> Result<Self, SignalError> {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(SignalError::Manifest {
                    line: line_no,
                    message: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let clean_path = dir.join(fields[0]);
            if !clean_path.is_file() {
                return Err(SignalError::Manifest {
                    line: line_no,
                    message: format!("clean file not found: {}", clean_path.display()),
                });
            }
            let noise_path = match fields[1] {
                "-" => None,
                rel => {
                    let p = dir.join(rel);
                    if !p.is_file() {
                        return Err(SignalError::Manifest {
                            line: line_no,
                            message: format!("noise file not found: {}", p.display()),
                        });
                    }
                    Some(p)
                }
            };
            let snr_db = match fields[2] {
                "-" => None,
                v => {
                    let parsed: f64 = v.parse().map_err(|_| SignalError::Manifest {
                        line: line_no,
                        message: format!("bad snr value {v:?}"),
                    })?;
                    if !parsed.is_finite() {
                        return Err(SignalError::Manifest {
                            line: line_no,
                            message: format!("snr must be finite, got {parsed}"),
                        });
                    }
                    Some(parsed)
                }
            };
            let split = Split::parse(fields[3]).ok_or_else(|| SignalError::Manifest {
                line: line_no,
                message: format!("unknown split tag {:?}", fields[3]),
            })?;
            records.push(ManifestRecord { clean_path, noise_path, snr_db, split });
        }
        Ok(Self { records })
    }

    /// Write records with paths made relative to the manifest directory
    /// where possible.
    pub fn save(&self, path: &Path) -> Result<(), SignalError> {
        let dir = path.parent().unwrap_or_else(|| Path::new(""));
        let mut out = String::new();
        for r in &self.records {
            let clean = relativize(&r.clean_path, dir);
            let noise = r
                .noise_path
                .as_ref()
                .map(|p| relativize(p, dir))
                .unwrap_or_else(|| "-".into());
            let snr = r.snr_db.map(|v| format!("{v:.9}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{clean}\t{noise}\t{snr}\t{}\n", r.split));
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

fn relativize(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{write_wav, AudioBuffer, SAMPLE_RATE};

    fn testdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("sediff-manifest-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn dummy_wav(path: &Path) {
        let audio = AudioBuffer::new(vec![0.1; 64], SAMPLE_RATE).unwrap();
        write_wav(path, &audio).unwrap();
    }

    #[test]
    fn save_load_round_trip() {
        let dir = testdir("round_trip");
        dummy_wav(&dir.join("clean/a.wav"));
        dummy_wav(&dir.join("noise/a.wav"));
        dummy_wav(&dir.join("clean/b.wav"));
        let manifest = Manifest {
            records: vec![
                ManifestRecord {
                    clean_path: dir.join("clean/a.wav"),
                    noise_path: Some(dir.join("noise/a.wav")),
                    snr_db: Some(5.0),
                    split: Split::Train,
                },
                ManifestRecord {
                    clean_path: dir.join("clean/b.wav"),
                    noise_path: None,
                    snr_db: None,
                    split: Split::Test,
                },
            ],
        };
        let path = dir.join("manifest.tsv");
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.split(Split::Train).len(), 1);
        assert_eq!(back.split(Split::Test).len(), 1);
    }

    #[test]
    fn load_rejects_missing_file() {
        let dir = testdir("missing");
        fs::write(dir.join("manifest.tsv"), "ghost.wav\t-\t-\ttrain\n").unwrap();
        let err = Manifest::load(&dir.join("manifest.tsv")).unwrap_err();
        assert!(err.to_string().contains("not found"), "{err}");
    }

    #[test]
    fn load_rejects_bad_fields() {
        let dir = testdir("bad_fields");
        dummy_wav(&dir.join("a.wav"));
        fs::write(dir.join("m1.tsv"), "a.wav\t-\t-\n").unwrap();
        assert!(Manifest::load(&dir.join("m1.tsv")).is_err());
        fs::write(dir.join("m2.tsv"), "a.wav\t-\tloud\ttrain\n").unwrap();
        assert!(Manifest::load(&dir.join("m2.tsv")).is_err());
        fs::write(dir.join("m3.tsv"), "a.wav\t-\t-\tdev\n").unwrap();
        assert!(Manifest::load(&dir.join("m3.tsv")).is_err());
    }
}
