//! Conditioner feature extraction: log linear-magnitude and log Mel spectra.
//!
//! Framing rule shared by both features: Hann window of 1024 with hop 256,
//! reflect padding of (window-hop)/2 = 384 on the left and whatever the
//! frame count needs on the right, so a waveform of `len` samples always
//! yields exactly `ceil(len/256)` frames. Both features apply `ln(1e-5 + v)`
//! compression.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioBuffer, Conditioner, ConditionerKind, SignalError};

pub const WINDOW: usize = 1024;
pub const HOP: usize = 256;
/// One-sided spectrum size for the 1024-point transform.
pub const FFT_BINS: usize = WINDOW / 2 + 1;
const LOG_FLOOR: f64 = 1e-5;
const MEL_BANDS: usize = 80;
const MEL_FMAX: f64 = 8_000.0;

fn hann() -> Vec<f64> {
    (0..WINDOW)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos()))
        .collect()
}

/// Reflect-pad so frame `i` covers `padded[i*HOP .. i*HOP+WINDOW]`.
///
/// Callers guarantee `x.len() >= WINDOW`, which keeps both pads strictly
/// shorter than the signal (left pad 384, right pad at most 639).
fn pad_reflect(x: &[f64], n_frames: usize) -> Vec<f64> {
    let pad_left = (WINDOW - HOP) / 2;
    let needed = (n_frames - 1) * HOP + WINDOW;
    let pad_right = needed - pad_left - x.len();
    let mut out = Vec::with_capacity(needed);
    // Reflection without repeating the edge sample: x[p], ..., x[2], x[1].
    for i in 0..pad_left {
        out.push(x[pad_left - i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad_right {
        out.push(x[x.len() - 2 - i]);
    }
    out
}

/// One-sided magnitude spectra, one row of [`FFT_BINS`] per frame.
fn magnitude_frames(x: &AudioBuffer) -> Result<Vec<Vec<f64>>, SignalError> {
    if x.len() < WINDOW {
        return Err(SignalError::TooShort { len: x.len(), window: WINDOW });
    }
    let n_frames = Conditioner::frames_for_len(x.len());
    let padded = pad_reflect(&x.samples, n_frames);
    let window = hann();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(WINDOW);
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
    for f in 0..n_frames {
        let start = f * HOP;
        for (i, (s, w)) in padded[start..start + WINDOW].iter().zip(&window).enumerate() {
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..FFT_BINS].iter().map(|c| c.norm()).collect());
    }
    Ok(frames)
}

/// Log linear-magnitude spectrogram: `ln(1e-5 + |STFT|)`, 513 bins per frame.
pub fn stft_log_magnitude(x: &AudioBuffer) -> Result<Conditioner, SignalError> {
    let frames = magnitude_frames(x)?;
    let n_frames = frames.len();
    let mut data = Vec::with_capacity(n_frames * FFT_BINS);
    for frame in frames {
        data.extend(frame.iter().map(|m| (LOG_FLOOR + m).ln()));
    }
    Ok(Conditioner::from_rows(ConditionerKind::Linear, n_frames, FFT_BINS, data))
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// 80 triangular filters on the 513-bin grid, HTK Mel scale, 0-8000 Hz,
/// peak value 1. Returned row-major: `bank[band * FFT_BINS + bin]`.
pub fn mel_filterbank(sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(MEL_FMAX);
    let centers: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / WINDOW as f64;
    let mut bank = vec![0.0; MEL_BANDS * FFT_BINS];
    for band in 0..MEL_BANDS {
        let (lo, mid, hi) = (centers[band], centers[band + 1], centers[band + 2]);
        for bin in 0..FFT_BINS {
            let f = bin as f64 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            bank[band * FFT_BINS + bin] = w;
        }
    }
    bank
}

/// Log Mel spectrogram: the filterbank applied to the power spectrum,
/// then `ln(1e-5 + v)`. 80 bands per frame.
pub fn mel_spectrogram(x: &AudioBuffer) -> Result<Conditioner, SignalError> {
    let frames = magnitude_frames(x)?;
    let bank = mel_filterbank(x.sample_rate);
    let n_frames = frames.len();
    let mut data = Vec::with_capacity(n_frames * MEL_BANDS);
    for frame in frames {
        let power: Vec<f64> = frame.iter().map(|m| m * m).collect();
        for band in 0..MEL_BANDS {
            let row = &bank[band * FFT_BINS..(band + 1) * FFT_BINS];
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push((LOG_FLOOR + e).ln());
        }
    }
    Ok(Conditioner::from_rows(ConditionerKind::Mel, n_frames, MEL_BANDS, data))
}
