//! Synthetic noisy-speech corpus: a desk-scale stand-in for a recorded
//! dataset.
//!
//! Clean utterances are harmonic tones with pitch vibrato, a syllabic
//! amplitude envelope, inter-syllable silences, and a breath-noise floor.
//! Noise signals cycle through white, pink, and amplitude-modulated white
//! noise. Each pair is mixed at an SNR from the requested list, written as
//! 16-bit WAV, and the manifest records the SNR measured on the quantized
//! pair so re-measurement reproduces it exactly.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mix::{measure_snr, mix_at_snr};
use super::wav::quantize_round_trip;
use super::{write_wav, AudioBuffer, Manifest, ManifestRecord, SignalError, Split, SAMPLE_RATE};

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub duration_secs: f64,
    pub snrs_db: Vec<f64>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { train: 40, valid: 8, test: 50, duration_secs: 2.0, snrs_db: vec![0.0, 5.0, 10.0, 15.0] }
    }
}

/// Speech-like clean signal: stacked harmonics under a syllabic envelope.
pub fn synth_speech<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let f0_base = rng.gen_range(110.0..220.0);
    let vib_rate = rng.gen_range(4.0..6.5);
    let vib_depth = rng.gen_range(0.01..0.04);
    let drift_rate = rng.gen_range(0.15..0.45);
    let drift_depth = rng.gen_range(0.02..0.08);
    let tilt: f64 = rng.gen_range(0.7..1.0);
    let n_harm = 10usize;

    // Syllable grid: voiced bump then a gap, randomized per syllable.
    let syll_rate = rng.gen_range(2.5..4.0);
    let period = (fs / syll_rate) as usize;
    let mut envelope = vec![0.0; len];
    let mut start = 0usize;
    while start < len {
        let voiced = ((period as f64 * rng.gen_range(0.55..0.75)) as usize).max(1);
        let amp = rng.gen_range(0.5..1.0);
        for (i, e) in envelope[start..].iter_mut().take(voiced).enumerate() {
            let phase = i as f64 / voiced as f64;
            *e = amp * 0.5 * (1.0 - (2.0 * PI * phase).cos());
        }
        start += period.max(1);
    }

    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phi = 0.0;
    let mut out = Vec::with_capacity(len);
    for (i, env) in envelope.iter().enumerate() {
        let t = i as f64 / fs;
        let f0 = f0_base
            * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin())
            * (1.0 + drift_depth * (2.0 * PI * drift_rate * t + drift_phase).sin());
        phi += 2.0 * PI * f0 / fs;
        let mut v = 0.0;
        for h in 1..=n_harm {
            let a = tilt.powi(h as i32 - 1) / h as f64;
            v += a * (h as f64 * phi).sin();
        }
        let breath: f64 = rng.sample::<f64, _>(StandardNormal) * 0.01;
        out.push(env * v + env * breath);
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let norm = 0.45 / peak;
        for v in out.iter_mut() {
            *v *= norm;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseKind {
    White,
    Pink,
    Modulated,
}

const NOISE_KINDS: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Modulated];

fn synth_noise<R: Rng + ?Sized>(kind: NoiseKind, len: usize, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Pink => {
            // Voss-McCartney: sum of hold-and-sample rows updated at
            // halving rates.
            let rows = 8;
            let mut values: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            (0..len)
                .map(|i| {
                    for (r, value) in values.iter_mut().enumerate() {
                        if i % (1usize << r) == 0 {
                            *value = rng.sample(StandardNormal);
                        }
                    }
                    values.iter().sum::<f64>() / (rows as f64).sqrt()
                })
                .collect()
        }
        NoiseKind::Modulated => {
            let rate = rng.gen_range(2.0..6.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (0..len)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    let env = 0.55 + 0.45 * (2.0 * PI * rate * t + phase).sin();
                    env * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        }
    };
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let norm = 0.45 / peak;
        for v in out.iter_mut() {
            *v *= norm;
        }
    }
    out
}

/// Generate the corpus under `outdir` (`clean/`, `noise/`, `noisy/` plus
/// `manifest.tsv`) and return the manifest.
pub fn synth_corpus<R: Rng + ?Sized>(
    spec: &CorpusSpec,
    outdir: &Path,
    rng: &mut R,
) -> Result<Manifest, SignalError> {
    let len = (spec.duration_secs * SAMPLE_RATE as f64).round() as usize;
    let mut records = Vec::new();
    let mut snr_cursor = 0usize;
    let mut noise_cursor = 0usize;
    let splits = [
        (Split::Train, spec.train),
        (Split::Valid, spec.valid),
        (Split::Test, spec.test),
    ];
    for (split, count) in splits {
        for i in 0..count {
            let name = format!("{split}_{i:04}.wav");
            let clean_raw = synth_speech(len, rng);
            let noise_raw = synth_noise(NOISE_KINDS[noise_cursor % NOISE_KINDS.len()], len, rng);
            noise_cursor += 1;
            let snr = spec.snrs_db[snr_cursor % spec.snrs_db.len()];
            snr_cursor += 1;

            let clean = AudioBuffer::new(clean_raw, SAMPLE_RATE)?;
            let noise = AudioBuffer::new(noise_raw, SAMPLE_RATE)?;
            let mix = mix_at_snr(&clean, &noise, snr, rng)?;

            // Keep headroom so the quantized sum can never saturate.
            let headroom = 0.98;
            let qc: Vec<f64> = mix
                .clean
                .samples
                .iter()
                .map(|v| quantize_round_trip(v * headroom))
                .collect();
            let qn: Vec<f64> = mix
                .noise
                .samples
                .iter()
                .map(|v| quantize_round_trip(v * headroom))
                .collect();
            let noisy: Vec<f64> = qc.iter().zip(&qn).map(|(c, n)| c + n).collect();
            let measured = measure_snr(&qc, &qn);

            let clean_path = outdir.join("clean").join(&name);
            let noise_path = outdir.join("noise").join(&name);
            let noisy_path = outdir.join("noisy").join(&name);
            write_wav(&clean_path, &AudioBuffer::new(qc, SAMPLE_RATE)?)?;
            write_wav(&noise_path, &AudioBuffer::new(qn, SAMPLE_RATE)?)?;
            write_wav(&noisy_path, &AudioBuffer::new(noisy, SAMPLE_RATE)?)?;

            records.push(ManifestRecord {
                clean_path,
                noise_path: Some(noise_path),
                snr_db: Some(measured),
                split,
            });
        }
    }
    let manifest = Manifest { records };
    manifest.save(&outdir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::read_wav;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn testdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sediff-synth-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn corpus_counts_and_ranges() {
        let dir = testdir("counts");
        let spec = CorpusSpec {
            train: 0,
            valid: 0,
            test: 10,
            duration_secs: 0.5,
            snrs_db: vec![0.0, 5.0, 10.0, 15.0],
        };
        let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(manifest.records.len(), 10);
        assert_eq!(std::fs::read_dir(dir.join("clean")).unwrap().count(), 10);
        assert_eq!(std::fs::read_dir(dir.join("noisy")).unwrap().count(), 10);
        for r in &manifest.records {
            for p in [&r.clean_path, r.noise_path.as_ref().unwrap()] {
                let audio = read_wav(p).unwrap();
                assert_eq!(audio.len(), 8000);
                assert!(audio.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn manifest_snr_matches_remeasured() {
        let dir = testdir("snr");
        let spec = CorpusSpec {
            train: 4,
            valid: 0,
            test: 0,
            duration_secs: 0.5,
            snrs_db: vec![0.0, 7.5],
        };
        let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        for r in &manifest.records {
            let clean = read_wav(&r.clean_path).unwrap();
            let noise = read_wav(r.noise_path.as_ref().unwrap()).unwrap();
            let measured = measure_snr(&clean.samples, &noise.samples);
            let recorded = r.snr_db.unwrap();
            assert!(
                (measured - recorded).abs() < 1e-6,
                "recorded {recorded}, re-measured {measured}"
            );
        }
    }

    #[test]
    fn noisy_export_is_exact_sum() {
        let dir = testdir("sum");
        let spec = CorpusSpec {
            train: 3,
            valid: 0,
            test: 0,
            duration_secs: 0.4,
            snrs_db: vec![0.0],
        };
        let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        for r in &manifest.records {
            let clean = read_wav(&r.clean_path).unwrap();
            let noise = read_wav(r.noise_path.as_ref().unwrap()).unwrap();
            let name = r.clean_path.file_name().unwrap();
            let noisy = read_wav(&dir.join("noisy").join(name)).unwrap();
            for i in 0..clean.len() {
                let sum = clean.samples[i] + noise.samples[i];
                assert!(
                    (noisy.samples[i] - sum).abs() < 1e-12,
                    "sample {i}: {} vs {}",
                    noisy.samples[i],
                    sum
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec { train: 2, valid: 0, test: 0, duration_secs: 0.3, snrs_db: vec![5.0] };
        let d1 = testdir("det1");
        let d2 = testdir("det2");
        synth_corpus(&spec, &d1, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        synth_corpus(&spec, &d2, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        for sub in ["clean", "noise", "noisy"] {
            for i in 0..2 {
                let name = format!("train_{i:04}.wav");
                let a = std::fs::read(d1.join(sub).join(&name)).unwrap();
                let b = std::fs::read(d2.join(sub).join(&name)).unwrap();
                assert_eq!(a, b, "{sub}/{name}");
            }
        }
    }
}
