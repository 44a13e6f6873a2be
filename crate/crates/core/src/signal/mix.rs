//! Mixing a noise signal into clean speech at an exact SNR.

use rand::Rng;

use super::{AudioBuffer, SignalError};

/// The result of [`mix_at_snr`]. When the raw mixture peaks above 1, all
/// three signals are scaled down jointly and `gain` records the factor
/// (1.0 otherwise); the SNR is unaffected.
#[derive(Debug, Clone)]
pub struct MixOutcome {
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub noisy: AudioBuffer,
    pub gain: f64,
}

/// Scale `noise` so that `10·log10(‖clean‖²/‖noise‖²)` equals `snr_db`
/// exactly, and add it to `clean`.
///
/// Noise longer than the clean signal is randomly cropped; shorter noise is
/// tiled before cropping. The rng is only consumed when a crop offset is
/// actually drawn.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    rng: &mut R,
) -> Result<MixOutcome, SignalError> {
    if clean.sample_rate != noise.sample_rate {
        return Err(SignalError::RateMismatch(clean.sample_rate, noise.sample_rate));
    }
    if !snr_db.is_finite() {
        return Err(SignalError::NonFiniteSnr(snr_db));
    }
    let clean_energy = clean.energy();
    if clean_energy <= 0.0 {
        return Err(SignalError::SilentReference);
    }

    let len = clean.len();
    let cropped: Vec<f64> = if noise.len() == len {
        noise.samples.clone()
    } else if noise.len() > len {
        let offset = rng.gen_range(0..=noise.len() - len);
        noise.samples[offset..offset + len].to_vec()
    } else {
        let reps = len.div_ceil(noise.len());
        let tiled: Vec<f64> = noise.samples.iter().cycle().take(reps * noise.len()).copied().collect();
        let offset = rng.gen_range(0..=tiled.len() - len);
        tiled[offset..offset + len].to_vec()
    };

    let noise_energy: f64 = cropped.iter().map(|v| v * v).sum();
    if noise_energy <= 0.0 {
        return Err(SignalError::SilentReference);
    }
    // ‖clean‖²/‖scaled‖² = 10^(snr/10)  =>  scale = √(‖clean‖²/(‖noise‖²·10^(snr/10)))
    let scale = (clean_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt();

    let mut clean_out = clean.samples.clone();
    let mut noise_out: Vec<f64> = cropped.iter().map(|v| v * scale).collect();
    let mut noisy: Vec<f64> = clean_out.iter().zip(&noise_out).map(|(c, n)| c + n).collect();

    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if gain < 1.0 {
        for v in clean_out.iter_mut() {
            *v *= gain;
        }
        for v in noise_out.iter_mut() {
            *v *= gain;
        }
        for v in noisy.iter_mut() {
            *v *= gain;
        }
    }

    let rate = clean.sample_rate;
    Ok(MixOutcome {
        clean: AudioBuffer::new(clean_out, rate).expect("scaled clean stays valid"),
        noise: AudioBuffer::new(noise_out, rate).expect("scaled noise stays valid"),
        noisy: AudioBuffer::new(noisy, rate).expect("mixture stays valid"),
        gain,
    })
}

/// Measured SNR of a (clean, noise) pair in dB.
pub(crate) fn measure_snr(clean: &[f64], noise: &[f64]) -> f64 {
    let ce: f64 = clean.iter().map(|v| v * v).sum();
    let ne: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * (ce / ne).log10()
}
