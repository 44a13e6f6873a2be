//! Diffusion-based speech enhancement at desk scale.
//!
//! The crate covers the whole pipeline: step-indexed noise schedules
//! ([`schedule`]), the forward corruption process ([`diffusion`]), a
//! dilated-convolution noise predictor with hand-rolled reverse-mode
//! gradients ([`predictor`]), the reverse samplers including the supportive
//! variant that mixes the noisy signal back in at every step ([`sampler`]),
//! waveform/feature plumbing ([`signal`]), training ([`trainer`]),
//! objective quality proxies ([`metrics`]), and a user-runnable invariant
//! suite ([`selfcheck`]).

pub mod diffusion;
pub mod metrics;
pub mod predictor;
pub mod sampler;
pub mod schedule;
pub mod selfcheck;
pub mod signal;
pub mod trainer;

pub use diffusion::{DiffusionState, TrainingPair};
pub use metrics::{ScoreReport, UtteranceScore};
pub use predictor::{
    Element, NoisePredictor, OraclePredictor, PredictorConfig, PredictorParams, StepQuery,
};
pub use sampler::{ReverseTrace, SamplerSpec, ScheduleMode, Variant};
pub use schedule::{FastSchedule, GammaPolicy, NoiseSchedule, ScheduleError};
pub use signal::{AudioBuffer, Conditioner, ConditionerKind, Manifest, ManifestRecord, Split};
pub use trainer::{Checkpoint, OptimizerState, TrainConfig, TrainPhase};
