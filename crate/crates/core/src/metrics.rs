//! Objective quality proxies: scale-invariant SDR and segmental SNR, plus
//! batch evaluation of (clean, enhanced) pairs from a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::signal::{read_wav, AudioBuffer, Manifest, Split};

/// Cap reported when the residual is numerically zero (perfect estimate).
pub const SI_SDR_CAP_DB: f64 = 100.0;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
const SEG_FRAME: usize = 1024;
const SEG_HOP: usize = 512;
/// Frames whose reference mean square falls below this are treated as
/// silence and excluded from the segmental average.
const SEG_SILENCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("signals have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference signal is silent")]
    SilentReference,
    #[error("no frames above the silence floor")]
    AllFramesSilent,
    #[error("missing enhanced files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
    #[error("no test records in manifest")]
    EmptyTestSplit,
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
}

/// Scale-invariant SDR in dB: project the estimate onto the reference and
/// compare target energy against residual energy. Perfect (or perfectly
/// scaled) estimates report the cap value.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64, MetricsError> {
    if reference.len() != estimate.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), estimate.len()));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(MetricsError::SilentReference);
    }
    let dot: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let scale = dot / ref_energy;
    let target_energy = scale * scale * ref_energy;
    let residual_energy: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| {
            let d = e - scale * r;
            d * d
        })
        .sum();
    if residual_energy <= 0.0 || target_energy / residual_energy > 10f64.powf(SI_SDR_CAP_DB / 10.0) {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok(10.0 * (target_energy / residual_energy).log10())
}

/// Mean per-frame SNR in dB over frames with audible reference energy,
/// each frame clamped to [-10, 35] dB.
///
/// The per-frame ratio is the delivered signal's energy against the energy
/// of its deviation from the reference, so a silent estimate reports the
/// clamp floor and an exact one the ceiling.
pub fn segmental_snr(reference: &[f64], estimate: &[f64]) -> Result<f64, MetricsError> {
    if reference.len() != estimate.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), estimate.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut start = 0usize;
    loop {
        let end = (start + SEG_FRAME).min(reference.len());
        let r = &reference[start..end];
        let e = &estimate[start..end];
        let ref_ms: f64 = r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64;
        if ref_ms > SEG_SILENCE_FLOOR {
            let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let est_e: f64 = e.iter().map(|v| v * v).sum();
            let snr = if err <= 0.0 {
                SEG_SNR_MAX_DB
            } else if est_e <= 0.0 {
                SEG_SNR_MIN_DB
            } else {
                (10.0 * (est_e / err).log10()).clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
            };
            sum += snr;
            count += 1;
        }
        if end == reference.len() {
            break;
        }
        start += SEG_HOP;
    }
    if count == 0 {
        return Err(MetricsError::AllFramesSilent);
    }
    Ok(sum / count as f64)
}

/// Scores of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
}

/// Per-utterance scores plus aggregates recomputable from the rows.
#[derive(Debug, Clone, Default)]
pub struct ScoreReport {
    pub utterances: Vec<UtteranceScore>,
}

impl ScoreReport {
    pub fn mean_si_sdr(&self) -> f64 {
        mean(self.utterances.iter().map(|u| u.si_sdr_db))
    }

    pub fn median_si_sdr(&self) -> f64 {
        median(self.utterances.iter().map(|u| u.si_sdr_db).collect())
    }

    pub fn mean_seg_snr(&self) -> f64 {
        mean(self.utterances.iter().map(|u| u.seg_snr_db))
    }

    pub fn median_seg_snr(&self) -> f64 {
        median(self.utterances.iter().map(|u| u.seg_snr_db).collect())
    }

    /// Tab-separated rows plus a summary block.
    pub fn to_table(&self) -> String {
        let mut out = String::from("utterance\tsi_sdr_db\tseg_snr_db\n");
        for u in &self.utterances {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", u.id, u.si_sdr_db, u.seg_snr_db);
        }
        let _ = writeln!(out, "# utterances\t{}", self.utterances.len());
        let _ = writeln!(out, "# mean\t{:.6}\t{:.6}", self.mean_si_sdr(), self.mean_seg_snr());
        let _ = writeln!(out, "# median\t{:.6}\t{:.6}", self.median_si_sdr(), self.median_seg_snr());
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Score every test-split record against `enhanced_dir/<clean stem>.wav`.
/// Missing files are collected exhaustively before erroring.
pub fn evaluate(manifest: &Manifest, enhanced_dir: &Path) -> Result<ScoreReport, MetricsError> {
    let records = manifest.split(Split::Test);
    if records.is_empty() {
        return Err(MetricsError::EmptyTestSplit);
    }
    let mut missing = Vec::new();
    let mut paths = Vec::new();
    for r in &records {
        let name = r.clean_path.file_name().expect("manifest paths have file names");
        let p = enhanced_dir.join(name);
        if !p.is_file() {
            missing.push(p.clone());
        }
        paths.push(p);
    }
    if !missing.is_empty() {
        return Err(MetricsError::MissingFiles(missing));
    }
    let mut report = ScoreReport::default();
    for (r, p) in records.iter().zip(&paths) {
        let clean = read_wav(&r.clean_path)?;
        let enhanced = read_wav(p)?;
        report.utterances.push(score_pair(&r.id(), &clean, &enhanced)?);
    }
    Ok(report)
}

pub fn score_pair(
    id: &str,
    clean: &AudioBuffer,
    enhanced: &AudioBuffer,
) -> Result<UtteranceScore, MetricsError> {
    Ok(UtteranceScore {
        id: id.to_string(),
        si_sdr_db: si_sdr(&clean.samples, &enhanced.samples)?,
        seg_snr_db: segmental_snr(&clean.samples, &enhanced.samples)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(len: usize) -> Vec<f64> {
        (0..len).map(|i| (i as f64 * 0.13).sin() * 0.5).collect()
    }

    #[test]
    fn si_sdr_perfect_and_scaled_estimates_hit_cap() {
        let r = tone(4000);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&r, &doubled).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_orthogonal_equal_energy_noise_is_zero() {
        let r = tone(4000);
        // Build noise orthogonal to r by Gram-Schmidt, scaled to equal energy.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let raw: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let re: f64 = r.iter().map(|v| v * v).sum();
        let dot: f64 = r.iter().zip(&raw).map(|(a, b)| a * b).sum();
        let mut orth: Vec<f64> = raw.iter().zip(&r).map(|(n, a)| n - dot / re * a).collect();
        let oe: f64 = orth.iter().map(|v| v * v).sum();
        let scale = (re / oe).sqrt();
        for v in orth.iter_mut() {
            *v *= scale;
        }
        let est: Vec<f64> = r.iter().zip(&orth).map(|(a, n)| a + n).collect();
        let got = si_sdr(&r, &est).unwrap();
        assert!(got.abs() < 1e-6, "expected 0 dB, got {got}");
    }

    #[test]
    fn si_sdr_scale_invariance_property() {
        let r = tone(2000);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let est: Vec<f64> = r.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        let base = si_sdr(&r, &est).unwrap();
        for scale in [0.1, 0.5, 3.0, 42.0] {
            let scaled: Vec<f64> = est.iter().map(|v| v * scale).collect();
            let got = si_sdr(&r, &scaled).unwrap();
            assert!((got - base).abs() < 1e-9, "scale {scale}: {got} vs {base}");
        }
    }

    #[test]
    fn si_sdr_rejects_silent_reference_and_mismatch() {
        assert!(matches!(si_sdr(&[0.0; 8], &[0.1; 8]), Err(MetricsError::SilentReference)));
        assert!(matches!(si_sdr(&[0.1; 8], &[0.1; 7]), Err(MetricsError::LengthMismatch(8, 7))));
    }

    #[test]
    fn seg_snr_identical_hits_ceiling() {
        let r = tone(4096);
        assert_eq!(segmental_snr(&r, &r).unwrap(), SEG_SNR_MAX_DB);
    }

    #[test]
    fn seg_snr_zero_estimate_hits_floor() {
        let r = tone(4096);
        let z = vec![0.0; 4096];
        assert_eq!(segmental_snr(&r, &z).unwrap(), SEG_SNR_MIN_DB);
    }

    #[test]
    fn seg_snr_tracks_stationary_noise_level() {
        // Constant-envelope reference plus white noise at 10 dB global SNR:
        // every frame sits near 10 dB.
        let len = 160_000;
        let r: Vec<f64> = (0..len).map(|i| (i as f64 * 0.41).sin() * 0.4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let re: f64 = r.iter().map(|v| v * v).sum();
        let ne: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (re / (ne * 10.0)).sqrt();
        for v in noise.iter_mut() {
            *v *= scale;
        }
        let est: Vec<f64> = r.iter().zip(&noise).map(|(a, n)| a + n).collect();
        let got = segmental_snr(&r, &est).unwrap();
        assert!((got - 10.0).abs() < 0.5, "expected ~10 dB, got {got}");
    }

    #[test]
    fn seg_snr_skips_silent_frames() {
        // First half silent, second half voiced and exact: the silent part
        // must not drag the average.
        let mut r = vec![0.0; 8192];
        for (i, v) in r.iter_mut().enumerate().skip(4096) {
            *v = ((i as f64) * 0.2).sin() * 0.5;
        }
        let got = segmental_snr(&r, &r).unwrap();
        assert_eq!(got, SEG_SNR_MAX_DB);
        let silent = vec![0.0; 8192];
        assert!(matches!(segmental_snr(&silent, &silent), Err(MetricsError::AllFramesSilent)));
    }

    #[test]
    fn report_aggregates_match_rows() {
        let report = ScoreReport {
            utterances: vec![
                UtteranceScore { id: "a".into(), si_sdr_db: 1.0, seg_snr_db: 5.0 },
                UtteranceScore { id: "b".into(), si_sdr_db: 3.0, seg_snr_db: 7.0 },
                UtteranceScore { id: "c".into(), si_sdr_db: 10.0, seg_snr_db: 6.0 },
            ],
        };
        assert!((report.mean_si_sdr() - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.median_si_sdr(), 3.0);
        assert_eq!(report.median_seg_snr(), 6.0);
        let table = report.to_table();
        assert!(table.contains("a\t1.000000\t5.000000"));
        assert!(table.contains("# median"));
    }

    #[test]
    fn evaluate_scores_directory() {
        use crate::signal::{write_wav, ManifestRecord, SAMPLE_RATE};
        let dir = std::env::temp_dir().join("sediff-metrics-eval");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(dir.join("enhanced")).unwrap();
        let clean = AudioBuffer::new(tone(4000), SAMPLE_RATE).unwrap();
        let mut records = Vec::new();
        for i in 0..3 {
            let p = dir.join(format!("clean/test_{i}.wav"));
            write_wav(&p, &clean).unwrap();
            write_wav(&dir.join(format!("enhanced/test_{i}.wav")), &clean).unwrap();
            records.push(ManifestRecord {
                clean_path: p,
                noise_path: None,
                snr_db: None,
                split: Split::Test,
            });
        }
        let manifest = Manifest { records };
        let report = evaluate(&manifest, &dir.join("enhanced")).unwrap();
        assert_eq!(report.utterances.len(), 3);
        for u in &report.utterances {
            assert_eq!(u.si_sdr_db, SI_SDR_CAP_DB);
            assert_eq!(u.seg_snr_db, SEG_SNR_MAX_DB);
        }
        // Re-running gives the identical report.
        let again = evaluate(&manifest, &dir.join("enhanced")).unwrap();
        assert_eq!(again.utterances, report.utterances);
    }

    #[test]
    fn evaluate_noisy_copies_match_baseline_scores() {
        // Enhanced files that are plain copies of the noisy mixture score
        // exactly what the (clean, noisy) pair scores.
        use crate::signal::{synth_corpus, CorpusSpec};
        use rand::SeedableRng as _;
        let dir = std::env::temp_dir().join("sediff-metrics-noisy-copies");
        let _ = std::fs::remove_dir_all(&dir);
        let spec = CorpusSpec {
            train: 0,
            valid: 0,
            test: 3,
            duration_secs: 0.3,
            snrs_db: vec![5.0],
        };
        let manifest =
            synth_corpus(&spec, &dir, &mut rand_chacha::ChaCha8Rng::seed_from_u64(41)).unwrap();
        std::fs::create_dir_all(dir.join("enhanced")).unwrap();
        for r in manifest.split(Split::Test) {
            let name = r.clean_path.file_name().unwrap();
            std::fs::copy(dir.join("noisy").join(name), dir.join("enhanced").join(name)).unwrap();
        }
        let report = evaluate(&manifest, &dir.join("enhanced")).unwrap();
        for (u, r) in report.utterances.iter().zip(manifest.split(Split::Test)) {
            let (clean, noisy) = r.load_pair().unwrap();
            let baseline = score_pair(&r.id(), &clean, &noisy).unwrap();
            assert!((u.si_sdr_db - baseline.si_sdr_db).abs() < 1e-9);
            assert!((u.seg_snr_db - baseline.seg_snr_db).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_lists_all_missing_files() {
        use crate::signal::{write_wav, ManifestRecord, SAMPLE_RATE};
        let dir = std::env::temp_dir().join("sediff-metrics-missing");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(dir.join("enhanced")).unwrap();
        let clean = AudioBuffer::new(tone(2000), SAMPLE_RATE).unwrap();
        let mut records = Vec::new();
        for i in 0..4 {
            let p = dir.join(format!("clean/test_{i}.wav"));
            write_wav(&p, &clean).unwrap();
            if i == 1 {
                write_wav(&dir.join(format!("enhanced/test_{i}.wav")), &clean).unwrap();
            }
            records.push(ManifestRecord {
                clean_path: p,
                noise_path: None,
                snr_db: None,
                split: Split::Test,
            });
        }
        let manifest = Manifest { records };
        match evaluate(&manifest, &dir.join("enhanced")) {
            Err(MetricsError::MissingFiles(missing)) => assert_eq!(missing.len(), 3),
            other => panic!("expected MissingFiles, got {other:?}"),
        }
    }
}
