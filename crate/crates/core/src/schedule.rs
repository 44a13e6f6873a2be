//! Step-indexed constants of the diffusion and reverse processes.
//!
//! A [`NoiseSchedule`] holds the β/α/ᾱ/σ tables for a `T`-step process, a
//! [`GammaPolicy`] derives the per-step noisy-signal mixing ratio used by
//! the supportive reverse process, and a [`FastSchedule`] aligns a short
//! user-chosen inference variance schedule against the training schedule.
//!
//! Steps are indexed `1..=T` like the process they describe; the boundary
//! convention is `ᾱ_0 = 1`, which makes `σ_1 = √β_1` and keeps `√ᾱ_{t-1}`
//! well defined at `t = 1`. All arithmetic is `f64`: products of hundreds
//! of α terms lose too much precision in 32-bit.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("T must be at least 1")]
    ZeroSteps,
    #[error("beta bounds must be finite and satisfy 0 < beta_min <= beta_max < 1, got [{0}, {1}]")]
    BadBetaRange(f64, f64),
    #[error("beta at inference step {step} out of (0, 1): {beta}")]
    BadUserBeta { step: usize, beta: f64 },
    #[error("step index {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("sigma_hat radicand negative at t={t}: sigma^2 - gamma^2*alpha_bar = {radicand}")]
    NegativeVariance { t: usize, radicand: f64 },
    #[error("fast alpha_bar {alpha_bar} at inference step {step} leaves the training range [{min}, 1]")]
    AlignmentOutOfRange { step: usize, alpha_bar: f64, min: f64 },
    #[error("malformed schedule text: {0}")]
    BadText(String),
}

/// The β/α/ᾱ/σ tables of a `T`-step diffusion process.
///
/// Tables are stored 0-based; `betas[t-1]` is β_t. Accessors take the
/// 1-based step index used throughout the process equations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced β between `beta_min` and `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::ZeroSteps);
        }
        if !beta_min.is_finite()
            || !beta_max.is_finite()
            || beta_min <= 0.0
            || beta_max >= 1.0
            || beta_min > beta_max
        {
            return Err(ScheduleError::BadBetaRange(beta_min, beta_max));
        }
        let betas = if steps == 1 {
            vec![beta_min]
        } else {
            let span = beta_max - beta_min;
            (0..steps)
                .map(|i| beta_min + i as f64 * span / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas_unchecked(betas))
    }

    /// Build from an explicit β list, validating each entry.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::ZeroSteps);
        }
        for (i, &b) in betas.iter().enumerate() {
            if !b.is_finite() || b <= 0.0 || b >= 1.0 {
                return Err(ScheduleError::BadUserBeta { step: i + 1, beta: b });
            }
        }
        Ok(Self::from_betas_unchecked(betas))
    }

    fn from_betas_unchecked(betas: Vec<f64>) -> Self {
        let steps = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let mut sched = Self { steps, betas, alphas, alpha_bars, sigmas: Vec::new() };
        sched.sigmas = (1..=steps).map(|t| sched.beta_tilde(t).sqrt()).collect();
        sched
    }

    /// β̃_t, the variance of the reverse transition. `β̃_1 = β_1` under the
    /// `ᾱ_0 = 1` convention; for t > 1 it is `(1-ᾱ_{t-1})/(1-ᾱ_t)·β_t`.
    fn beta_tilde(&self, t: usize) -> f64 {
        let prev = self.alpha_bar(t - 1);
        let cur = self.alpha_bar(t);
        if t == 1 {
            self.beta(1)
        } else {
            (1.0 - prev) / (1.0 - cur) * self.beta(t)
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// β_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// α_t = 1 − β_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t = ∏_{s≤t} α_s for t in 0..=T, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// σ_t = β̃_t^{1/2}, the reverse-transition standard deviation.
    pub fn sigma(&self, t: usize) -> Result<f64, ScheduleError> {
        self.check_step(t)?;
        Ok(self.sigmas[t - 1])
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.steps {
            Err(ScheduleError::StepOutOfRange { t, max: self.steps })
        } else {
            Ok(())
        }
    }

    /// Test hook: corrupt one entry of the σ table so consistency checks
    /// can demonstrate a failure. Not part of the public contract.
    #[doc(hidden)]
    pub fn with_corrupted_sigma(mut self, t: usize) -> Self {
        if t >= 1 && t <= self.steps {
            self.sigmas[t - 1] *= 1.5;
        }
        self
    }

    /// Plain-text key/value form embedded in checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("T={}\n", self.steps));
        out.push_str("betas=");
        for (i, b) in self.betas.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{b}"));
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleError> {
        let mut steps: Option<usize> = None;
        let mut betas: Option<Vec<f64>> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ScheduleError::BadText(format!("missing '=' in line {line:?}")))?;
            match key.trim() {
                "T" => {
                    steps = Some(value.trim().parse().map_err(|_| {
                        ScheduleError::BadText(format!("bad T value {value:?}"))
                    })?)
                }
                "betas" => {
                    let parsed: Result<Vec<f64>, _> =
                        value.split(',').map(|v| v.trim().parse::<f64>()).collect();
                    betas = Some(parsed.map_err(|_| {
                        ScheduleError::BadText(format!("bad beta list {value:?}"))
                    })?);
                }
                other => return Err(ScheduleError::BadText(format!("unknown key {other:?}"))),
            }
        }
        let betas = betas.ok_or_else(|| ScheduleError::BadText("missing betas".into()))?;
        if let Some(t) = steps {
            if t != betas.len() {
                return Err(ScheduleError::BadText(format!(
                    "T={} does not match {} betas",
                    t,
                    betas.len()
                )));
            }
        }
        Self::from_betas(betas)
    }
}

/// Per-step mixing ratio of the noisy signal in the supportive reverse
/// process: `γ_t = σ_t/√ᾱ_{t-1}` for t > 1 and a fixed `γ_1` at the
/// terminal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPolicy {
    pub gamma1: f64,
}

impl GammaPolicy {
    pub fn new(gamma1: f64) -> Self {
        Self { gamma1 }
    }

    pub fn gamma(&self, schedule: &NoiseSchedule, t: usize) -> Result<f64, ScheduleError> {
        schedule.check_step(t)?;
        if t == 1 {
            Ok(self.gamma1)
        } else {
            Ok(schedule.sigma(t)? / schedule.alpha_bar(t - 1).sqrt())
        }
    }
}

impl Default for GammaPolicy {
    /// The supportive-process default: 20% of the noisy signal mixed into
    /// the terminal output.
    fn default() -> Self {
        Self { gamma1: 0.2 }
    }
}

/// σ̂_t = √(σ_t² − γ_t²·ᾱ_{t-1}), the Gaussian remainder after the noisy
/// signal fills part of the reverse-transition variance.
///
/// Under the γ rule the radicand is exactly zero for t > 1; tiny negative
/// float residue is clamped to zero. A genuinely negative radicand (as at
/// t = 1 with γ_1 = 0.2) is reported as [`ScheduleError::NegativeVariance`];
/// samplers use z = 0 at the terminal step so the value is never needed
/// there.
pub fn srp_sigma_hat(
    schedule: &NoiseSchedule,
    policy: &GammaPolicy,
    t: usize,
) -> Result<f64, ScheduleError> {
    schedule.check_step(t)?;
    let sigma = schedule.sigma(t)?;
    let gamma = policy.gamma(schedule, t)?;
    let radicand = sigma * sigma - gamma * gamma * schedule.alpha_bar(t - 1);
    let tol = 1e-12 * (sigma * sigma + gamma * gamma * schedule.alpha_bar(t - 1));
    if radicand < -tol {
        Err(ScheduleError::NegativeVariance { t, radicand })
    } else if radicand <= tol {
        // Under the γ rule the radicand is zero in exact arithmetic; float
        // residue on either side collapses to an exact zero so the
        // supportive process stays deterministic.
        Ok(0.0)
    } else {
        Ok(radicand.sqrt())
    }
}

/// A short inference schedule aligned against the training schedule.
///
/// Each inference step `s` carries the fractional training-step position
/// fed to the step embedding, found by interpolating `√ᾱ` between the
/// surrounding integer training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FastSchedule {
    steps: usize,
    user_betas: Vec<f64>,
    fast_alphas: Vec<f64>,
    fast_alpha_bars: Vec<f64>,
    fast_sigmas: Vec<f64>,
    step_positions: Vec<f64>,
}

impl FastSchedule {
    /// Align `user_betas` against `train`. Every fast `ᾱ` must fall within
    /// the training `[ᾱ_T, 1]` range so a fractional position exists.
    pub fn align(train: &NoiseSchedule, user_betas: &[f64]) -> Result<Self, ScheduleError> {
        if user_betas.is_empty() {
            return Err(ScheduleError::ZeroSteps);
        }
        for (i, &b) in user_betas.iter().enumerate() {
            if !b.is_finite() || b <= 0.0 || b >= 1.0 {
                return Err(ScheduleError::BadUserBeta { step: i + 1, beta: b });
            }
        }
        let steps = user_betas.len();
        let fast_alphas: Vec<f64> = user_betas.iter().map(|b| 1.0 - b).collect();
        let mut fast_alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &a in &fast_alphas {
            prod *= a;
            fast_alpha_bars.push(prod);
        }

        // √ᾱ_t for t = 0..=T, strictly decreasing from 1.
        let t_max = train.steps();
        let sqrt_bars: Vec<f64> = (0..=t_max).map(|t| train.alpha_bar(t).sqrt()).collect();
        let floor = sqrt_bars[t_max];

        let mut step_positions = Vec::with_capacity(steps);
        for (s, &ab) in fast_alpha_bars.iter().enumerate() {
            let v = ab.sqrt();
            if v < floor {
                return Err(ScheduleError::AlignmentOutOfRange {
                    step: s + 1,
                    alpha_bar: ab,
                    min: train.alpha_bar(t_max),
                });
            }
            // Highest t with √ᾱ_t >= v; interpolate towards t+1.
            let mut lo = 0usize;
            while lo < t_max && sqrt_bars[lo + 1] >= v {
                lo += 1;
            }
            let pos = if lo == t_max {
                t_max as f64
            } else {
                lo as f64 + (sqrt_bars[lo] - v) / (sqrt_bars[lo] - sqrt_bars[lo + 1])
            };
            step_positions.push(pos);
        }

        let mut fast_sigmas = Vec::with_capacity(steps);
        for s in 1..=steps {
            let prev = if s == 1 { 1.0 } else { fast_alpha_bars[s - 2] };
            let cur = fast_alpha_bars[s - 1];
            let beta_tilde = if s == 1 {
                user_betas[0]
            } else {
                (1.0 - prev) / (1.0 - cur) * user_betas[s - 1]
            };
            fast_sigmas.push(beta_tilde.sqrt());
        }

        Ok(Self {
            steps,
            user_betas: user_betas.to_vec(),
            fast_alphas,
            fast_alpha_bars,
            fast_sigmas,
            step_positions,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// β^fast_s for s in 1..=S.
    pub fn beta(&self, s: usize) -> f64 {
        self.user_betas[s - 1]
    }

    pub fn alpha(&self, s: usize) -> f64 {
        self.fast_alphas[s - 1]
    }

    /// ᾱ^fast_s for s in 0..=S, with ᾱ^fast_0 = 1.
    pub fn alpha_bar(&self, s: usize) -> f64 {
        if s == 0 {
            1.0
        } else {
            self.fast_alpha_bars[s - 1]
        }
    }

    pub fn sigma(&self, s: usize) -> f64 {
        self.fast_sigmas[s - 1]
    }

    /// Fractional training-step position fed to the step embedding.
    pub fn step_position(&self, s: usize) -> f64 {
        self.step_positions[s - 1]
    }

    /// γ^fast_s from the fast σ and ᾱ analogues.
    pub fn gamma(&self, policy: &GammaPolicy, s: usize) -> f64 {
        if s == 1 {
            policy.gamma1
        } else {
            self.fast_sigmas[s - 1] / self.alpha_bar(s - 1).sqrt()
        }
    }

    /// σ̂^fast_s, clamped at zero exactly like the full-schedule variant.
    pub fn sigma_hat(&self, policy: &GammaPolicy, s: usize) -> Result<f64, ScheduleError> {
        let sigma = self.sigma(s);
        let gamma = self.gamma(policy, s);
        let radicand = sigma * sigma - gamma * gamma * self.alpha_bar(s - 1);
        let tol = 1e-12 * (sigma * sigma + gamma * gamma * self.alpha_bar(s - 1));
        if radicand < -tol {
            Err(ScheduleError::NegativeVariance { t: s, radicand })
        } else if radicand <= tol {
            Ok(0.0)
        } else {
            Ok(radicand.sqrt())
        }
    }
}
