//! Named model/schedule/training presets.
//!
//! `tiny` is the desk-scale profile (10 layers, 16 channels, a 10-step
//! schedule, short crops) meant for CPU experiments; `base` and `large`
//! carry the full-size settings (30 layers; 50- and 200-step schedules;
//! 63 and 128 residual channels) for users with the compute to train them.

use crate::predictor::PredictorConfig;
use crate::schedule::{NoiseSchedule, ScheduleError};

use super::{TrainConfig, TrainPhase};

#[derive(Debug, Clone)]
pub struct Profile {
    pub name: &'static str,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub fast_betas: &'static [f64],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub crop_len: usize,
    make_predictor: fn(usize) -> PredictorConfig,
}

pub const TINY: Profile = Profile {
    name: "tiny",
    steps: 10,
    beta_min: 1e-4,
    beta_max: 0.35,
    fast_betas: &[0.0001, 0.01, 0.1, 0.35],
    learning_rate: 2e-4,
    batch_size: 1,
    crop_len: 2048,
    make_predictor: PredictorConfig::tiny,
};

pub const BASE: Profile = Profile {
    name: "base",
    steps: 50,
    beta_min: 1e-4,
    beta_max: 0.05,
    fast_betas: &[0.0001, 0.001, 0.01, 0.05, 0.2, 0.5],
    learning_rate: 2e-4,
    batch_size: 16,
    crop_len: 16384,
    make_predictor: PredictorConfig::base,
};

pub const LARGE: Profile = Profile {
    name: "large",
    steps: 200,
    beta_min: 1e-4,
    beta_max: 0.02,
    fast_betas: &[0.0001, 0.001, 0.01, 0.05, 0.2, 0.7],
    learning_rate: 2e-4,
    batch_size: 15,
    crop_len: 16384,
    make_predictor: PredictorConfig::large,
};

pub fn by_name(name: &str) -> Option<&'static Profile> {
    match name {
        "tiny" => Some(&TINY),
        "base" => Some(&BASE),
        "large" => Some(&LARGE),
        _ => None,
    }
}

impl Profile {
    pub fn schedule(&self) -> Result<NoiseSchedule, ScheduleError> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }

    pub fn predictor_config(&self, phase: TrainPhase) -> PredictorConfig {
        (self.make_predictor)(phase.conditioner_dim())
    }

    pub fn train_config(&self, phase: TrainPhase, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_iters: 0,
            early_stop_patience: 20,
            phase,
            seed,
            crop_len: self.crop_len,
            eval_interval: 500,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_build_valid_schedules_and_configs() {
        for p in [&TINY, &BASE, &LARGE] {
            let sched = p.schedule().unwrap();
            assert_eq!(sched.steps(), p.steps);
            let cfg = p.predictor_config(TrainPhase::Finetune);
            cfg.validate().unwrap();
            assert_eq!(cfg.conditioner_dim, 513);
            let cfg = p.predictor_config(TrainPhase::Pretrain);
            assert_eq!(cfg.conditioner_dim, 80);
            // Fast schedule aligns against the training schedule.
            let fast = crate::schedule::FastSchedule::align(&sched, p.fast_betas).unwrap();
            assert_eq!(fast.steps(), p.fast_betas.len());
        }
        assert_eq!(BASE.predictor_config(TrainPhase::Finetune).residual_channels, 63);
        assert_eq!(LARGE.predictor_config(TrainPhase::Finetune).residual_channels, 128);
        assert!(by_name("tiny").is_some());
        assert!(by_name("huge").is_none());
    }
}
