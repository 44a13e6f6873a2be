//! The forward (diffusion) process.
//!
//! Corruption is available stepwise (`x_t → x_{t+1}`, one Markov transition
//! at a time) and in closed form (`x_0 → x_t` directly), plus the training
//! pair sampler that draws a uniform step and Gaussian noise for the loss.
//!
//! Every stochastic operation takes an explicit rng; there is no hidden
//! global state, so trainings and tests replay exactly from a seed.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::schedule::NoiseSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("state is already at the final step T={0}")]
    AtFinalStep(usize),
    #[error("length mismatch: x0 has {x0} samples, epsilon has {epsilon}")]
    LengthMismatch { x0: usize, epsilon: usize },
    #[error("step index {t} out of range 0..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("empty signal")]
    EmptySignal,
}

/// A signal at some diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl DiffusionState {
    pub fn new(x: Vec<f64>) -> Self {
        Self { x, t: 0 }
    }
}

/// One training example: the corrupted signal, the step it sits at, and the
/// exact noise that was injected. `conditioner_key` identifies the feature
/// matrix that conditions the predictor for this example.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub epsilon: Vec<f64>,
    pub conditioner_key: usize,
}

/// One forward Markov transition: `x_{t+1} = √(1-β_{t+1})·x_t + √β_{t+1}·z`.
pub fn q_step<R: Rng + ?Sized>(
    state: &DiffusionState,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<DiffusionState, DiffusionError> {
    if state.t >= schedule.steps() {
        return Err(DiffusionError::AtFinalStep(schedule.steps()));
    }
    let t_next = state.t + 1;
    let keep = (1.0 - schedule.beta(t_next)).sqrt();
    let add = schedule.beta(t_next).sqrt();
    let x = state
        .x
        .iter()
        .map(|&v| keep * v + add * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(DiffusionState { x, t: t_next })
}

/// Closed-form corruption: `x_t = √ᾱ_t·x_0 + √(1-ᾱ_t)·ε`.
///
/// `t = 0` is the identity (`ᾱ_0 = 1`).
pub fn q_sample(
    x0: &[f64],
    t: usize,
    epsilon: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    if t > schedule.steps() {
        return Err(DiffusionError::StepOutOfRange { t, max: schedule.steps() });
    }
    if x0.len() != epsilon.len() {
        return Err(DiffusionError::LengthMismatch { x0: x0.len(), epsilon: epsilon.len() });
    }
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    Ok(x0
        .iter()
        .zip(epsilon)
        .map(|(&s, &e)| signal * s + noise * e)
        .collect())
}

/// Draw `t ~ Uniform{1..T}` and `ε ~ N(0, I)` and corrupt `x0` to `x_t`.
pub fn make_training_pair<R: Rng + ?Sized>(
    x0: &[f64],
    schedule: &NoiseSchedule,
    conditioner_key: usize,
    rng: &mut R,
) -> Result<TrainingPair, DiffusionError> {
    if x0.is_empty() {
        return Err(DiffusionError::EmptySignal);
    }
    let t = rng.gen_range(1..=schedule.steps());
    let epsilon: Vec<f64> = (0..x0.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x_t = q_sample(x0, t, &epsilon, schedule)?;
    Ok(TrainingPair { x_t, t, epsilon, conditioner_key })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn q_step_tiny_beta_is_near_identity() {
        let sched = NoiseSchedule::linear(3, 1e-30, 1e-30).unwrap();
        let state = DiffusionState::new(vec![0.5, -0.25, 1.0]);
        let next = q_step(&state, &sched, &mut rng(1)).unwrap();
        assert_eq!(next.t, 1);
        for (a, b) in state.x.iter().zip(&next.x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn q_step_rejects_final_step() {
        let sched = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let state = DiffusionState { x: vec![0.0], t: 2 };
        assert_eq!(q_step(&state, &sched, &mut rng(2)), Err(DiffusionError::AtFinalStep(2)));
    }

    #[test]
    fn q_step_from_zero_has_beta_variance() {
        let sched = NoiseSchedule::linear(5, 0.05, 0.3).unwrap();
        let dims = 16;
        let trials = 100_000 / dims;
        let mut r = rng(3);
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for _ in 0..trials {
            let state = DiffusionState { x: vec![0.0; dims], t: 2 };
            let next = q_step(&state, &sched, &mut r).unwrap();
            for v in next.x {
                sum_sq += v * v;
                n += 1;
            }
        }
        let var = sum_sq / n as f64;
        let beta3 = sched.beta(3);
        assert!(
            (var - beta3).abs() / beta3 < 0.02,
            "empirical variance {var} vs beta {beta3}"
        );
    }

    #[test]
    fn composed_steps_match_closed_form_moments() {
        // Compose T q_steps and compare the x_T ensemble against the
        // closed-form mean √ᾱ_T·x0 and variance 1-ᾱ_T.
        let sched = NoiseSchedule::linear(10, 0.02, 0.3).unwrap();
        let x0 = [0.8, -0.5, 0.3, 0.1];
        let trials = 25_000;
        let mut r = rng(4);
        let mut sum = vec![0.0; x0.len()];
        let mut sum_sq = vec![0.0; x0.len()];
        for _ in 0..trials {
            let mut state = DiffusionState::new(x0.to_vec());
            for _ in 0..sched.steps() {
                state = q_step(&state, &sched, &mut r).unwrap();
            }
            for (i, v) in state.x.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let ab = sched.alpha_bar(sched.steps());
        let expect_var = 1.0 - ab;
        let mut pooled_var = 0.0;
        for i in 0..x0.len() {
            let mean = sum[i] / trials as f64;
            let expect_mean = ab.sqrt() * x0[i];
            // 2% of the standard deviation of the marginal.
            assert!(
                (mean - expect_mean).abs() < 0.02 * expect_var.sqrt().max(1e-3),
                "dim {i}: mean {mean} vs {expect_mean}"
            );
            pooled_var += sum_sq[i] / trials as f64 - mean * mean;
        }
        pooled_var /= x0.len() as f64;
        assert!(
            (pooled_var - expect_var).abs() / expect_var < 0.02,
            "variance {pooled_var} vs {expect_var}"
        );
    }

    #[test]
    fn q_sample_identity_at_step_zero() {
        let sched = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        let x0 = [0.4, -0.2];
        let eps = [3.0, -7.0];
        assert_eq!(q_sample(&x0, 0, &eps, &sched).unwrap(), x0.to_vec());
    }

    #[test]
    fn q_sample_noiseless_branch() {
        let sched = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        let x0 = [1.0, -1.0, 0.5];
        let eps = [0.0; 3];
        let got = q_sample(&x0, 3, &eps, &sched).unwrap();
        let scale = sched.alpha_bar(3).sqrt();
        for (g, x) in got.iter().zip(&x0) {
            assert!((g - scale * x).abs() < 1e-15);
        }
    }

    #[test]
    fn q_sample_unit_noise_on_zero_signal() {
        // Base schedule, t=50: single unit-basis epsilon entry becomes
        // √(1-ᾱ_50); ᾱ_50 recomputed here by direct product.
        let sched = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
        let mut ab = 1.0;
        for t in 1..=50 {
            ab *= 1.0 - (1e-4 + (t - 1) as f64 * (0.05 - 1e-4) / 49.0);
        }
        let x0 = vec![0.0; 4];
        let mut eps = vec![0.0; 4];
        eps[1] = 1.0;
        let got = q_sample(&x0, 50, &eps, &sched).unwrap();
        assert_eq!(got[0], 0.0);
        assert!((got[1] - (1.0 - ab).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn q_sample_rejects_length_mismatch() {
        let sched = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        assert!(matches!(
            q_sample(&[0.0; 3], 1, &[0.0; 2], &sched),
            Err(DiffusionError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn training_pair_satisfies_invariant() {
        let sched = NoiseSchedule::linear(10, 0.01, 0.3).unwrap();
        let x0: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.37).sin() * 0.5).collect();
        let mut r = rng(5);
        for _ in 0..20 {
            let pair = make_training_pair(&x0, &sched, 0, &mut r).unwrap();
            let rebuilt = q_sample(&x0, pair.t, &pair.epsilon, &sched).unwrap();
            assert_eq!(pair.x_t, rebuilt);
        }
    }

    #[test]
    fn training_pair_step_distribution_uniform() {
        let sched = NoiseSchedule::linear(10, 0.01, 0.3).unwrap();
        let x0 = [0.1];
        let mut r = rng(6);
        let n = 100_000;
        let mut counts = [0u64; 10];
        for _ in 0..n {
            let pair = make_training_pair(&x0, &sched, 0, &mut r).unwrap();
            counts[pair.t - 1] += 1;
        }
        // Chi-square against uniform; dof 9, critical value at p=0.01 is 21.666.
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 21.666, "chi-square {chi2} too large: {counts:?}");
    }

    #[test]
    fn training_pair_noise_moments() {
        let sched = NoiseSchedule::linear(10, 0.01, 0.3).unwrap();
        let x0 = [0.0; 50];
        let mut r = rng(7);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for _ in 0..2_000 {
            let pair = make_training_pair(&x0, &sched, 0, &mut r).unwrap();
            for e in pair.epsilon {
                sum += e;
                sum_sq += e * e;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn training_pair_rejects_empty() {
        let sched = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        assert_eq!(
            make_training_pair(&[], &sched, 0, &mut rng(8)).unwrap_err(),
            DiffusionError::EmptySignal
        );
    }

    #[test]
    fn q_sample_superposition() {
        let sched = NoiseSchedule::linear(6, 0.05, 0.25).unwrap();
        let mut r = rng(9);
        let len = 32;
        let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
            (0..len).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
        };
        let (a, b) = (draw(&mut r), draw(&mut r));
        let (ea, eb) = (draw(&mut r), draw(&mut r));
        let t = 4;
        let combined: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let eps_comb: Vec<f64> = ea.iter().zip(&eb).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let lhs = q_sample(&combined, t, &eps_comb, &sched).unwrap();
        let qa = q_sample(&a, t, &ea, &sched).unwrap();
        let qb = q_sample(&b, t, &eb, &sched).unwrap();
        for i in 0..len {
            let rhs = 2.0 * qa[i] - 0.5 * qb[i];
            assert!((lhs[i] - rhs).abs() < 1e-12);
        }
    }
}
