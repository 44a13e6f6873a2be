//! Mini-batch training over manifest corpora: adaptive-moment updates,
//! periodic fixed-seed validation with early stopping, best-checkpoint
//! keeping, and the two-phase pretrain/fine-tune protocol that swaps the
//! conditioner from clean Mel features to noisy spectra.

mod checkpoint;
pub mod profiles;

pub use checkpoint::{Checkpoint, CheckpointError, OptimizerState};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffusion::make_training_pair;
use crate::predictor::{Element, LossItem, PredictorConfig, PredictorError, PredictorParams};
use crate::schedule::NoiseSchedule;
use crate::signal::{
    mel_spectrogram, stft_log_magnitude, AudioBuffer, Conditioner, Manifest, SignalError, Split,
    SAMPLE_RATE, WINDOW,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training loss {loss} at iteration {iter}; best checkpoint preserved at {}", checkpoint.display())]
    Diverged { iter: u64, loss: f64, checkpoint: PathBuf },
    #[error("manifest has no {0} records")]
    EmptySplit(&'static str),
    #[error("utterance {path} has {len} samples, below the minimum {min} (crop length)")]
    UtteranceTooShort { path: PathBuf, len: usize, min: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which conditioner the phase trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    /// Clean signal corrupted; clean Mel spectrogram as conditioner.
    Pretrain,
    /// Clean signal corrupted; paired noisy linear spectrogram as conditioner.
    Finetune,
}

impl TrainPhase {
    pub fn conditioner_dim(self) -> usize {
        match self {
            TrainPhase::Pretrain => 80,
            TrainPhase::Finetune => crate::signal::FFT_BINS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    /// Validation checks without improvement before stopping.
    pub early_stop_patience: usize,
    pub phase: TrainPhase,
    pub seed: u64,
    /// Fixed-length random crop taken from each utterance per example.
    pub crop_len: usize,
    /// Iterations between validation passes.
    pub eval_interval: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::InvalidConfig("patience must be at least 1".into()));
        }
        if self.crop_len < WINDOW {
            return Err(TrainError::InvalidConfig(format!(
                "crop length {} below the {WINDOW}-sample analysis window",
                self.crop_len
            )));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::InvalidConfig("eval interval must be at least 1".into()));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One adaptive-moment update. `learning_rate = 0` leaves the parameters
/// bit-identical (moments still advance).
pub fn adam_step<T: Element>(
    params: &mut PredictorParams<T>,
    grads: &PredictorParams<T>,
    state: &mut OptimizerState<T>,
    learning_rate: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - ADAM_BETA1.powi(t);
    let correction2 = 1.0 - ADAM_BETA2.powi(t);
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let one_minus_b1 = T::from_f64(1.0 - ADAM_BETA1);
    let one_minus_b2 = T::from_f64(1.0 - ADAM_BETA2);
    let eps = T::from_f64(ADAM_EPS);
    let step_size = T::from_f64(learning_rate / correction1);
    let inv_sqrt_c2 = T::from_f64(1.0 / correction2.sqrt());

    let grad_list = grads.tensors();
    let mut idx = 0;
    params.visit_mut(|_, tensor, _| {
        let g = &grad_list[idx].1.data;
        let m = &mut state.first_moment[idx].data;
        let v = &mut state.second_moment[idx].data;
        for i in 0..tensor.data.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_minus_b1 * gi;
            v[i] = b2 * v[i] + one_minus_b2 * gi * gi;
            let vhat_sqrt = v[i].sqrt() * inv_sqrt_c2;
            tensor.data[i] = tensor.data[i] - step_size * m[i] / (vhat_sqrt + eps);
        }
        idx += 1;
    });
}

/// A manifest record loaded into memory.
pub struct LoadedUtterance {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

pub fn load_split(
    manifest: &Manifest,
    split: Split,
    min_len: usize,
) -> Result<Vec<LoadedUtterance>, TrainError> {
    let records = manifest.split(split);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let (clean, noisy) = r.load_pair()?;
        clean.ensure_rate(SAMPLE_RATE)?;
        if clean.len() < min_len {
            return Err(TrainError::UtteranceTooShort {
                path: r.clean_path.clone(),
                len: clean.len(),
                min: min_len,
            });
        }
        out.push(LoadedUtterance { clean: clean.samples, noisy: noisy.samples });
    }
    Ok(out)
}

/// Crop + corrupt + conditioner for one training example. Pretraining
/// conditions on the clean crop's Mel spectrum; fine-tuning on the paired
/// noisy crop's linear spectrum at the same offset.
fn make_example<R: Rng + ?Sized>(
    utt: &LoadedUtterance,
    phase: TrainPhase,
    crop_len: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(crate::diffusion::TrainingPair, Conditioner), TrainError> {
    let max_offset = utt.clean.len() - crop_len;
    let offset = if max_offset == 0 { 0 } else { rng.gen_range(0..=max_offset) };
    let clean = &utt.clean[offset..offset + crop_len];
    let cond = match phase {
        TrainPhase::Pretrain => {
            mel_spectrogram(&AudioBuffer::new(clean.to_vec(), SAMPLE_RATE)?)?
        }
        TrainPhase::Finetune => stft_log_magnitude(&AudioBuffer::new(
            utt.noisy[offset..offset + crop_len].to_vec(),
            SAMPLE_RATE,
        )?)?,
    };
    let pair = make_training_pair(clean, schedule, 0, rng).expect("crop length is positive");
    Ok((pair, cond))
}

/// One optimization step over a freshly drawn batch.
pub fn train_step<T: Element, R: Rng + ?Sized>(
    params: &mut PredictorParams<T>,
    opt: &mut OptimizerState<T>,
    utterances: &[LoadedUtterance],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let mut examples = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let utt = &utterances[rng.gen_range(0..utterances.len())];
        examples.push(make_example(utt, config.phase, config.crop_len, schedule, rng)?);
    }
    let items: Vec<LossItem> =
        examples.iter().map(|(pair, cond)| LossItem { pair, cond }).collect();
    let (loss, grads) = params.loss_and_grad(&items)?;
    adam_step(params, &grads, opt, config.learning_rate);
    Ok(loss)
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Validation loss with frozen corruption: utterance `i` always sees the
/// same crop offset, step, and noise, so successive checks are comparable.
pub fn validation_loss<T: Element>(
    params: &PredictorParams<T>,
    valid: &[LoadedUtterance],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (i, utt) in valid.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7a11d000 + i as u64));
        let (pair, cond) = make_example(utt, config.phase, config.crop_len, schedule, &mut rng)?;
        let (loss, _) = params.loss_and_grad(&[LossItem { pair: &pair, cond: &cond }])?;
        total += loss;
    }
    Ok(total / valid.len() as f64)
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub best_valid_loss: f64,
    pub final_valid_loss: f64,
    pub iters_run: u64,
}

/// Train until max_iters or patience exhaustion, keeping the
/// best-validation checkpoint on disk. Progress lines
/// `iter<TAB>train_loss<TAB>valid_loss` go to `log`.
pub fn train_loop<T: Element>(
    manifest: &Manifest,
    initial: PredictorParams<T>,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let train = load_split(manifest, Split::Train, config.crop_len)?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let valid = load_split(manifest, Split::Valid, config.crop_len)?;
    if valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }

    std::fs::create_dir_all(out_dir)?;
    let best_path = out_dir.join("best.ckpt");
    let mut params = initial;
    let mut opt = OptimizerState::fresh(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best_valid = validation_loss(&params, &valid, schedule, config)?;
    Checkpoint::from_params(&params, schedule, Some(&opt), 0, best_valid).save(&best_path)?;
    writeln!(log, "0\t-\t{best_valid:.6}")?;

    let mut misses = 0usize;
    let mut iter = 0u64;
    let mut last_valid = best_valid;
    while iter < config.max_iters {
        iter += 1;
        let loss = train_step(&mut params, &mut opt, &train, schedule, config, &mut rng)?;
        if !loss.is_finite() {
            writeln!(log, "{iter}\t{loss}\tdiverged")?;
            return Err(TrainError::Diverged { iter, loss, checkpoint: best_path });
        }
        if iter.is_multiple_of(config.eval_interval) || iter == config.max_iters {
            let valid_loss = validation_loss(&params, &valid, schedule, config)?;
            last_valid = valid_loss;
            writeln!(log, "{iter}\t{loss:.6}\t{valid_loss:.6}")?;
            if valid_loss < best_valid {
                best_valid = valid_loss;
                misses = 0;
                Checkpoint::from_params(&params, schedule, Some(&opt), iter, valid_loss)
                    .save(&best_path)?;
            } else {
                misses += 1;
                if misses >= config.early_stop_patience {
                    break;
                }
            }
        } else {
            writeln!(log, "{iter}\t{loss:.6}\t-")?;
        }
    }
    Ok(TrainOutcome {
        checkpoint_path: best_path,
        best_valid_loss: best_valid,
        final_valid_loss: last_valid,
        iters_run: iter,
    })
}

/// The two-phase protocol: pretrain on clean Mel conditioners, reset the
/// conditioner encoder for the 513-bin noisy spectrum, then fine-tune.
/// `pretrain_config.max_iters = 0` degenerates to plain training from
/// scratch: the non-encoder tensors keep their seed initialization and the
/// reset gives the fine-tune phase a fresh 513-dim encoder.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_then_finetune<T: Element>(
    pretrain_manifest: &Manifest,
    finetune_manifest: &Manifest,
    pretrain_config: &TrainConfig,
    finetune_config: &TrainConfig,
    schedule: &NoiseSchedule,
    predictor_config: PredictorConfig,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<TrainOutcome, TrainError> {
    if pretrain_config.phase != TrainPhase::Pretrain
        || finetune_config.phase != TrainPhase::Finetune
    {
        return Err(TrainError::InvalidConfig("phase mismatch in two-phase configs".into()));
    }
    let mut config = predictor_config;
    config.conditioner_dim = TrainPhase::Pretrain.conditioner_dim();
    let init = PredictorParams::<T>::init(config, pretrain_config.seed)?;

    let pretrained = if pretrain_config.max_iters > 0 {
        let outcome = train_loop(
            pretrain_manifest,
            init,
            schedule,
            pretrain_config,
            &out_dir.join("pretrain"),
            log,
        )?;
        Checkpoint::load(&outcome.checkpoint_path)?.params_as::<T>()
    } else {
        init
    };

    let reset = pretrained.reset_conditioner_encoder(
        TrainPhase::Finetune.conditioner_dim(),
        derive_seed(finetune_config.seed, 0xc0de5eed),
    );
    train_loop(finetune_manifest, reset, schedule, finetune_config, &out_dir.join("finetune"), log)
}
