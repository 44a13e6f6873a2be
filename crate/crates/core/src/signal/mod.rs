//! Waveform I/O, conditioner features, SNR mixing, and dataset plumbing.

mod features;
mod manifest;
mod mix;
mod synth;
mod wav;

pub use features::{mel_filterbank, mel_spectrogram, stft_log_magnitude, FFT_BINS, HOP, WINDOW};
pub use manifest::{Manifest, ManifestRecord, Split};
pub use mix::{mix_at_snr, MixOutcome};
pub use synth::{synth_corpus, synth_speech, CorpusSpec};
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// The canonical sample rate of the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("empty audio buffer")]
    Empty,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("expected {expected} Hz input, got {got} Hz")]
    WrongSampleRate { expected: u32, got: u32 },
    #[error("input of {len} samples is shorter than the {window}-sample analysis window")]
    TooShort { len: usize, window: usize },
    #[error("signals have different sample rates: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("clean signal is silent; SNR undefined")]
    SilentReference,
    #[error("SNR must be finite, got {0}")]
    NonFiniteSnr(f64),
    #[error("wav: {0}")]
    Wav(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("missing file: {0}")]
    MissingFile(std::path::PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A mono waveform with its sample rate. Samples live in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Energy Σx².
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn ensure_rate(&self, expected: u32) -> Result<(), SignalError> {
        if self.sample_rate != expected {
            Err(SignalError::WrongSampleRate { expected, got: self.sample_rate })
        } else {
            Ok(())
        }
    }
}

/// Which feature kind a conditioner carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionerKind {
    /// 80-band log Mel spectrogram (pretraining, computed from clean audio).
    Mel,
    /// 513-bin log linear-magnitude spectrogram (enhancement, from noisy audio).
    Linear,
}

impl ConditionerKind {
    pub fn dim(self) -> usize {
        match self {
            ConditionerKind::Mel => 80,
            ConditionerKind::Linear => FFT_BINS,
        }
    }
}

/// A time-frequency feature matrix aligned to a waveform: `n_frames` rows of
/// `dim` bins, with `n_frames = ceil(len / 256)` under the framing rule in
/// [`stft_log_magnitude`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub kind: ConditionerKind,
    pub n_frames: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl Conditioner {
    /// Raw constructor for custom conditioners (tests, analytic predictors
    /// that ignore the features). Pipeline conditioners come from
    /// [`stft_log_magnitude`] and [`mel_spectrogram`], which also guarantee
    /// the kind/dim pairing.
    pub fn from_rows(kind: ConditionerKind, n_frames: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_frames * dim, "conditioner data length mismatch");
        Self { kind, n_frames, dim, data }
    }

    /// Row-major frame data: `frame(i)[k]` is bin k of frame i.
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of frames the framing rule assigns to a waveform of `len` samples.
    pub fn frames_for_len(len: usize) -> usize {
        len.div_ceil(HOP)
    }
}
