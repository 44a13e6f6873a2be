//! Reverse-process samplers: the plain reverse chain, the supportive
//! variant that mixes the noisy signal back in at every step, ablation
//! variants that inject the noisy signal at the chain input and/or output,
//! and the short-schedule (fast) analogues of all of them.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::predictor::{NoisePredictor, PredictorError, StepQuery};
use crate::schedule::{srp_sigma_hat, FastSchedule, GammaPolicy, NoiseSchedule, ScheduleError};
use crate::signal::{stft_log_magnitude, AudioBuffer, Conditioner, SignalError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("non-finite state at step {t} (position {position}); |x| exploded")]
    NonFiniteState { t: usize, position: f64 },
    #[error("output mix weight must lie in [0,1], got {0}")]
    BadMixWeight(f64),
    #[error("noisy input is empty")]
    EmptyInput,
}

/// Which reverse variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Plain reverse chain from Gaussian noise.
    Rp,
    /// Plain chain, but started from the noisy signal instead of Gaussian.
    RpNIn,
    /// Plain chain; output mixed with the noisy signal.
    RpNOut,
    /// Both input and output injection.
    RpNInOut,
    /// Supportive reverse process: noisy signal mixed in at every step.
    Srp,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rp" => Some(Variant::Rp),
            "rp-nin" => Some(Variant::RpNIn),
            "rp-nout" => Some(Variant::RpNOut),
            "rp-ninout" => Some(Variant::RpNInOut),
            "srp" => Some(Variant::Srp),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rp => "rp",
            Variant::RpNIn => "rp-nin",
            Variant::RpNOut => "rp-nout",
            Variant::RpNInOut => "rp-ninout",
            Variant::Srp => "srp",
        }
    }
}

/// Full training schedule or a short user variance schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    Full,
    Fast { user_betas: Vec<f64> },
}

/// Everything `enhance` needs to know about how to sample.
#[derive(Debug, Clone)]
pub struct SamplerSpec {
    pub variant: Variant,
    pub schedule_mode: ScheduleMode,
    pub gamma_policy: GammaPolicy,
    /// Weight on the noisy signal in the final mix of the N_out variants.
    pub output_mix_weight: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Srp,
            schedule_mode: ScheduleMode::Full,
            gamma_policy: GammaPolicy::default(),
            output_mix_weight: 0.2,
        }
    }
}

/// Optional per-step diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ReverseTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub position: f64,
    pub eps_norm: f64,
    pub state_norm: f64,
}

impl ReverseTrace {
    fn record(trace: &mut Option<&mut ReverseTrace>, position: f64, eps: &[f64], x: &[f64]) {
        if let Some(t) = trace.as_deref_mut() {
            t.records.push(TraceRecord {
                position,
                eps_norm: l2(eps),
                state_norm: l2(x),
            });
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("position\teps_norm\tstate_norm\n");
        for r in &self.records {
            out.push_str(&format!("{:.6}\t{:.6}\t{:.6}\n", r.position, r.eps_norm, r.state_norm));
        }
        out
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn check_finite(x: &[f64], t: usize, position: f64) -> Result<(), SamplerError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SamplerError::NonFiniteState { t, position })
    }
}

fn mu_from_parts(x: &[f64], eps_hat: &[f64], alpha: f64, beta: f64, alpha_bar: f64) -> Vec<f64> {
    let c1 = 1.0 / alpha.sqrt();
    let c2 = beta / (1.0 - alpha_bar).sqrt();
    x.iter().zip(eps_hat).map(|(xv, ev)| c1 * (xv - c2 * ev)).collect()
}

/// Posterior mean `(1/√α_t)·(x_t − β_t/√(1-ᾱ_t)·ε̂)`.
pub fn mu_theta(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, SamplerError> {
    schedule.sigma(t)?; // range check
    Ok(mu_from_parts(x_t, eps_hat, schedule.alpha(t), schedule.beta(t), schedule.alpha_bar(t)))
}

fn full_query(schedule: &NoiseSchedule, t: usize) -> StepQuery {
    StepQuery { position: t as f64, alpha_bar: schedule.alpha_bar(t), beta: schedule.beta(t) }
}

fn fast_query(fast: &FastSchedule, s: usize) -> StepQuery {
    StepQuery { position: fast.step_position(s), alpha_bar: fast.alpha_bar(s), beta: fast.beta(s) }
}

/// Plain reverse chain from an explicit starting state. The terminal step
/// adds no noise (z = 0 at t = 1).
pub fn reverse_sample_from<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    x_init: Vec<f64>,
    cond: &Conditioner,
    schedule: &NoiseSchedule,
    rng: &mut R,
    mut trace: Option<&mut ReverseTrace>,
) -> Result<Vec<f64>, SamplerError> {
    if x_init.is_empty() {
        return Err(SamplerError::EmptyInput);
    }
    let mut x = x_init;
    for t in (1..=schedule.steps()).rev() {
        let q = full_query(schedule, t);
        let eps = predictor.predict(&x, &q, cond)?;
        ReverseTrace::record(&mut trace, q.position, &eps, &x);
        let mut next = mu_from_parts(&x, &eps, schedule.alpha(t), q.beta, q.alpha_bar);
        if t > 1 {
            let sigma = schedule.sigma(t)?;
            for v in next.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        check_finite(&next, t, q.position)?;
        x = next;
    }
    Ok(x)
}

/// Plain reverse chain from Gaussian noise.
pub fn reverse_sample<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    len: usize,
    cond: &Conditioner,
    schedule: &NoiseSchedule,
    rng: &mut R,
    trace: Option<&mut ReverseTrace>,
) -> Result<Vec<f64>, SamplerError> {
    let x_init = gaussian(len, rng);
    reverse_sample_from(predictor, x_init, cond, schedule, rng, trace)
}

/// One supportive step: the post-mix mean `μ̂ = (1-γ_t)·μ + γ_t·√ᾱ_{t-1}·y`,
/// the Gaussian remainder σ̂_t (0 at the terminal step, where it is never
/// used because z = 0 there), and the noise estimate behind them.
pub fn supportive_step<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x_t: &[f64],
    t: usize,
    y: &[f64],
    cond: &Conditioner,
    schedule: &NoiseSchedule,
    policy: &GammaPolicy,
) -> Result<(Vec<f64>, f64, Vec<f64>), SamplerError> {
    let q = full_query(schedule, t);
    let eps = predictor.predict(x_t, &q, cond)?;
    let mu = mu_from_parts(x_t, &eps, schedule.alpha(t), q.beta, q.alpha_bar);
    let gamma = policy.gamma(schedule, t)?;
    let anchor = gamma * schedule.alpha_bar(t - 1).sqrt();
    let mu_hat: Vec<f64> =
        mu.iter().zip(y).map(|(m, yv)| (1.0 - gamma) * m + anchor * yv).collect();
    let sigma_hat = if t == 1 { 0.0 } else { srp_sigma_hat(schedule, policy, t)? };
    Ok((mu_hat, sigma_hat, eps))
}

/// Supportive reverse chain: starts from the noisy signal and anchors every
/// step back to it.
pub fn supportive_reverse_sample<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    y: &[f64],
    cond: &Conditioner,
    schedule: &NoiseSchedule,
    policy: &GammaPolicy,
    rng: &mut R,
    mut trace: Option<&mut ReverseTrace>,
) -> Result<Vec<f64>, SamplerError> {
    if y.is_empty() {
        return Err(SamplerError::EmptyInput);
    }
    let mut x = y.to_vec();
    for t in (1..=schedule.steps()).rev() {
        let (mut next, sigma_hat, eps) = supportive_step(predictor, &x, t, y, cond, schedule, policy)?;
        ReverseTrace::record(&mut trace, t as f64, &eps, &x);
        if t > 1 && sigma_hat > 0.0 {
            for v in next.iter_mut() {
                *v += sigma_hat * rng.sample::<f64, _>(StandardNormal);
            }
        }
        check_finite(&next, t, t as f64)?;
        x = next;
    }
    Ok(x)
}

/// Short-schedule sampling. `start` is the initial chain state: Gaussian
/// noise for the plain variants, the noisy signal for input-injected
/// variants and the supportive process (which also anchors to it).
#[allow(clippy::too_many_arguments)]
pub fn fast_sample<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    start: Vec<f64>,
    cond: &Conditioner,
    fast: &FastSchedule,
    variant: Variant,
    policy: &GammaPolicy,
    rng: &mut R,
    mut trace: Option<&mut ReverseTrace>,
) -> Result<Vec<f64>, SamplerError> {
    if start.is_empty() {
        return Err(SamplerError::EmptyInput);
    }
    let supportive = variant == Variant::Srp;
    let y = start.clone();
    let mut x = start;
    for s in (1..=fast.steps()).rev() {
        let q = fast_query(fast, s);
        let eps = predictor.predict(&x, &q, cond)?;
        ReverseTrace::record(&mut trace, q.position, &eps, &x);
        let mu = mu_from_parts(&x, &eps, fast.alpha(s), q.beta, q.alpha_bar);
        let mut next = if supportive {
            let gamma = fast.gamma(policy, s);
            let anchor = gamma * fast.alpha_bar(s - 1).sqrt();
            mu.iter().zip(&y).map(|(m, yv)| (1.0 - gamma) * m + anchor * yv).collect()
        } else {
            mu
        };
        if s > 1 {
            let sigma = if supportive { fast.sigma_hat(policy, s)? } else { fast.sigma(s) };
            if sigma > 0.0 {
                for v in next.iter_mut() {
                    *v += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        check_finite(&next, s, q.position)?;
        x = next;
    }
    Ok(x)
}

/// Final output mix of the N_out variants: `(1-w)·enhanced + w·noisy`.
pub fn mix_output(enhanced: &[f64], noisy: &[f64], weight: f64) -> Vec<f64> {
    enhanced
        .iter()
        .zip(noisy)
        .map(|(e, n)| (1.0 - weight) * e + weight * n)
        .collect()
}

/// Run the spec'd variant over a noisy utterance: derives the spectral
/// conditioner from `y`, dispatches full or fast sampling, and applies the
/// output mix where the variant calls for it.
pub fn enhance<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    y: &AudioBuffer,
    spec: &SamplerSpec,
    schedule: &NoiseSchedule,
    rng: &mut R,
    want_trace: bool,
) -> Result<(AudioBuffer, Option<ReverseTrace>), SamplerError> {
    if !(0.0..=1.0).contains(&spec.output_mix_weight) {
        return Err(SamplerError::BadMixWeight(spec.output_mix_weight));
    }
    let cond = stft_log_magnitude(y)?;
    let mut trace_store = if want_trace { Some(ReverseTrace::default()) } else { None };
    let trace = trace_store.as_mut();
    let samples = &y.samples;

    let enhanced = match &spec.schedule_mode {
        ScheduleMode::Full => match spec.variant {
            Variant::Rp | Variant::RpNOut => {
                reverse_sample(predictor, samples.len(), &cond, schedule, rng, trace)?
            }
            Variant::RpNIn | Variant::RpNInOut => {
                reverse_sample_from(predictor, samples.clone(), &cond, schedule, rng, trace)?
            }
            Variant::Srp => supportive_reverse_sample(
                predictor,
                samples,
                &cond,
                schedule,
                &spec.gamma_policy,
                rng,
                trace,
            )?,
        },
        ScheduleMode::Fast { user_betas } => {
            let fast = FastSchedule::align(schedule, user_betas)?;
            let start = match spec.variant {
                Variant::Rp | Variant::RpNOut => gaussian(samples.len(), rng),
                Variant::RpNIn | Variant::RpNInOut | Variant::Srp => samples.clone(),
            };
            fast_sample(predictor, start, &cond, &fast, spec.variant, &spec.gamma_policy, rng, trace)?
        }
    };

    let out = match spec.variant {
        Variant::RpNOut | Variant::RpNInOut => {
            mix_output(&enhanced, samples, spec.output_mix_weight)
        }
        _ => enhanced,
    };
    let audio = AudioBuffer::new(out, y.sample_rate)?;
    Ok((audio, trace_store))
}

#[cfg(test)]
mod tests;
