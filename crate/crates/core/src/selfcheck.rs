//! A user-runnable suite of the cross-module invariants: schedule algebra,
//! forward-process consistency, oracle inversion, supportive-process fixed
//! points, oracle recovery, and the fast-schedule reduction. Each check
//! reports what it measured against its threshold; failures are reported,
//! never thrown.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{q_step, DiffusionState};
use crate::metrics::si_sdr;
use crate::predictor::{oracle_predict, OraclePredictor};
use crate::sampler;
use crate::schedule::{srp_sigma_hat, FastSchedule, GammaPolicy, NoiseSchedule};
use crate::signal::{synth_speech, Conditioner, ConditionerKind, HOP};

/// Deliberate corruption for exercising the failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale one entry of the Base schedule's σ table.
    CorruptSigma,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub measured: String,
    pub threshold: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, measured: String, threshold: &str) -> Self {
        Self { name, pass, measured, threshold: threshold.to_string() }
    }
}

fn base_schedule(fault: Option<Fault>) -> NoiseSchedule {
    let sched = NoiseSchedule::linear(50, 1e-4, 0.05).expect("base schedule is valid");
    match fault {
        Some(Fault::CorruptSigma) => sched.with_corrupted_sigma(10),
        None => sched,
    }
}

fn dummy_cond(len: usize) -> Conditioner {
    let frames = len.div_ceil(HOP);
    Conditioner::from_rows(ConditionerKind::Linear, frames, 1, vec![0.0; frames])
}

/// Schedule algebra: recursion, σ² = β̃, and σ̂ = 0 under the γ rule, on
/// both the 50-step and 200-step linear schedules.
fn check_schedule_algebra(fault: Option<Fault>) -> CheckResult {
    let mut worst: f64 = 0.0;
    let schedules =
        [base_schedule(fault), NoiseSchedule::linear(200, 1e-4, 0.02).expect("large schedule")];
    for sched in &schedules {
        let policy = GammaPolicy::default();
        for t in 1..=sched.steps() {
            let recur = sched.alpha_bar(t - 1) * (1.0 - sched.beta(t));
            worst = worst.max((sched.alpha_bar(t) - recur).abs());
            let beta_tilde = if t == 1 {
                sched.beta(1)
            } else {
                (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t)) * sched.beta(t)
            };
            let sigma = sched.sigma(t).expect("in range");
            worst = worst.max((sigma * sigma - beta_tilde).abs());
            if t > 1 {
                worst = worst.max(srp_sigma_hat(sched, &policy, t).expect("gamma rule").abs());
            }
        }
    }
    CheckResult::new(
        "schedule-algebra",
        worst <= 1e-12,
        format!("max deviation {worst:.3e}"),
        "<= 1e-12",
    )
}

/// Composing single forward steps matches the closed form's mean and
/// variance at t in {1, T/2, T}.
fn check_forward_consistency(seed: u64, fault: Option<Fault>) -> CheckResult {
    let sched = base_schedule(fault);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0);
    let dims = 4usize;
    let trials = 60_000usize;
    let x0: Vec<f64> = (0..dims).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let checkpoints = [1usize, sched.steps() / 2, sched.steps()];
    let mut sums = vec![vec![0.0; dims]; checkpoints.len()];
    let mut sq = vec![vec![0.0; dims]; checkpoints.len()];
    for _ in 0..trials {
        let mut state = DiffusionState::new(x0.clone());
        for t in 1..=sched.steps() {
            state = q_step(&state, &sched, &mut rng).expect("in range");
            if let Some(ci) = checkpoints.iter().position(|&c| c == t) {
                for d in 0..dims {
                    sums[ci][d] += state.x[d];
                    sq[ci][d] += state.x[d] * state.x[d];
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (ci, &t) in checkpoints.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let expect_var = 1.0 - ab;
        let mut pooled = 0.0;
        for d in 0..dims {
            let mean = sums[ci][d] / trials as f64;
            let expect_mean = ab.sqrt() * x0[d];
            // Mean error in units of the marginal std.
            worst = worst.max((mean - expect_mean).abs() / expect_var.sqrt().max(1e-3));
            pooled += sq[ci][d] / trials as f64 - mean * mean;
        }
        pooled /= dims as f64;
        worst = worst.max((pooled - expect_var).abs() / expect_var);
    }
    CheckResult::new(
        "forward-consistency",
        worst <= 0.02,
        format!("max relative deviation {worst:.4}"),
        "<= 0.02",
    )
}

/// The analytic inverse recovers the exact noise from closed-form samples.
fn check_oracle_inversion(seed: u64, fault: Option<Fault>) -> CheckResult {
    let sched = base_schedule(fault);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = 32;
        let x0: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps: Vec<f64> =
            (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = rng.gen_range(1..=sched.steps());
        let x_t = crate::diffusion::q_sample(&x0, t, &eps, &sched).expect("valid");
        let got = oracle_predict(&x_t, t, &x0, &sched).expect("valid");
        for (g, e) in got.iter().zip(&eps) {
            worst = worst.max((g - e).abs());
        }
    }
    CheckResult::new(
        "oracle-inversion",
        worst <= 1e-10,
        format!("max |recovered - injected| {worst:.3e}"),
        "<= 1e-10",
    )
}

/// Supportive sampling with the oracle returns a clean input exactly, on
/// both the full and the fast schedule.
fn check_srp_clean_fixed_point(seed: u64, fault: Option<Fault>) -> CheckResult {
    let sched = base_schedule(fault);
    let len = 2048;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfb);
    let x0 = synth_speech(len, &mut rng);
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let policy = GammaPolicy::default();
    let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();

    let full = sampler::supportive_reverse_sample(
        &oracle, &x0, &cond, &sched, &policy, &mut rng, None,
    );
    let fast_sched = FastSchedule::align(&sched, &[0.0001, 0.001, 0.01, 0.05, 0.2, 0.5])
        .expect("fast schedule in range");
    let fast = sampler::fast_sample(
        &oracle,
        x0.clone(),
        &cond,
        &fast_sched,
        sampler::Variant::Srp,
        &policy,
        &mut rng,
        None,
    );
    let rel = |out: Result<Vec<f64>, _>| -> f64 {
        match out {
            Ok(v) => {
                v.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm
            }
            Err(_) => f64::INFINITY,
        }
    };
    let worst = rel(full).max(rel(fast));
    CheckResult::new(
        "srp-clean-fixed-point",
        worst <= 1e-6,
        format!("relative L2 error {worst:.3e}"),
        "<= 1e-6",
    )
}

/// Supportive sampling with the oracle on a 5 dB mixture improves SI-SDR
/// by a wide margin.
fn check_srp_oracle_recovery(seed: u64, fault: Option<Fault>) -> CheckResult {
    let sched = base_schedule(fault);
    let len = 8192;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5d);
    let x0 = synth_speech(len, &mut rng);
    let mut noise: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let xe: f64 = x0.iter().map(|v| v * v).sum();
    let ne: f64 = noise.iter().map(|v| v * v).sum();
    let scale = (xe / (ne * 10f64.powf(0.5))).sqrt();
    for v in noise.iter_mut() {
        *v *= scale;
    }
    let y: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let out = sampler::supportive_reverse_sample(
        &oracle,
        &y,
        &cond,
        &sched,
        &GammaPolicy::default(),
        &mut rng,
        None,
    );
    let improvement = match out {
        Ok(v) => {
            si_sdr(&x0, &v).unwrap_or(f64::NEG_INFINITY)
                - si_sdr(&x0, &y).unwrap_or(f64::NEG_INFINITY)
        }
        Err(_) => f64::NEG_INFINITY,
    };
    CheckResult::new(
        "srp-oracle-recovery",
        improvement >= 5.0,
        format!("SI-SDR improvement {improvement:.2} dB"),
        ">= 5 dB",
    )
}

/// A fast schedule built from the training betas reproduces full sampling
/// bit for bit under a matched rng.
fn check_fast_identity(seed: u64, fault: Option<Fault>) -> CheckResult {
    let sched = base_schedule(fault);
    let len = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfa);
    let x0 = synth_speech(len, &mut rng);
    let oracle = OraclePredictor { x0 };
    let cond = dummy_cond(len);
    let fast = match FastSchedule::align(&sched, sched.betas()) {
        Ok(f) => f,
        Err(e) => {
            return CheckResult::new(
                "fast-identity-reduction",
                false,
                format!("alignment failed: {e}"),
                "bit-identical outputs",
            )
        }
    };
    let mut r1 = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
    let full = sampler::reverse_sample(&oracle, len, &cond, &sched, &mut r1, None);
    let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
    let start: Vec<f64> = (0..len).map(|_| r2.sample::<f64, _>(StandardNormal)).collect();
    let fast_out = sampler::fast_sample(
        &oracle,
        start,
        &cond,
        &fast,
        sampler::Variant::Rp,
        &GammaPolicy::default(),
        &mut r2,
        None,
    );
    let identical = match (&full, &fast_out) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    let positions_ok = (1..=sched.steps()).all(|s| fast.step_position(s) == s as f64);
    CheckResult::new(
        "fast-identity-reduction",
        identical && positions_ok,
        format!("bitwise equal: {identical}, positions exact: {positions_ok}"),
        "bit-identical outputs, integer positions",
    )
}

/// Run the whole suite. The optional fault corrupts one input so failure
/// reporting can be exercised end to end.
pub fn run_all(seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        check_schedule_algebra(fault),
        check_forward_consistency(seed, fault),
        check_oracle_inversion(seed, fault),
        check_srp_clean_fixed_point(seed, fault),
        check_srp_oracle_recovery(seed, fault),
        check_fast_identity(seed, fault),
    ]
}
