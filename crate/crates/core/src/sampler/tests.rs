use super::*;
use crate::metrics::si_sdr;
use crate::predictor::OraclePredictor;
use crate::signal::{ConditionerKind, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn base_schedule() -> NoiseSchedule {
    NoiseSchedule::linear(50, 1e-4, 0.05).unwrap()
}

/// Conditioner stand-in for predictors that ignore it.
fn dummy_cond(len: usize) -> Conditioner {
    let frames = len.div_ceil(crate::signal::HOP);
    Conditioner::from_rows(ConditionerKind::Linear, frames, 1, vec![0.0; frames])
}

fn speechish(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    crate::signal::synth_speech(len, &mut r)
}

/// Predictor that makes μ_θ equal the ideal diffusion mean √ᾱ_{t-1}·x0:
/// ε̂* = √(1-ᾱ_t)·(x_t − √ᾱ_t·x0)/β_t.
struct IdealMeanPredictor {
    x0: Vec<f64>,
}

impl NoisePredictor for IdealMeanPredictor {
    fn predict(
        &self,
        x_t: &[f64],
        step: &StepQuery,
        _cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        let scale = (1.0 - step.alpha_bar).sqrt() / step.beta;
        let signal = step.alpha_bar.sqrt();
        Ok(x_t.iter().zip(&self.x0).map(|(xt, x)| scale * (xt - signal * x)).collect())
    }
}

/// Counts predictor invocations.
struct CountingPredictor<'a, P> {
    inner: &'a P,
    calls: std::cell::Cell<usize>,
}

impl<'a, P: NoisePredictor> NoisePredictor for CountingPredictor<'a, P> {
    fn predict(
        &self,
        x_t: &[f64],
        step: &StepQuery,
        cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(x_t, step, cond)
    }
}

/// Predictor returning all zeros (a fresh zero-head network).
struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(
        &self,
        x_t: &[f64],
        _step: &StepQuery,
        _cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        Ok(vec![0.0; x_t.len()])
    }
}

#[test]
fn mu_theta_zero_eps_is_rescale() {
    let sched = base_schedule();
    let x = vec![0.5, -0.3, 0.7];
    let t = 10;
    let got = mu_theta(&x, t, &[0.0; 3], &sched).unwrap();
    let scale = 1.0 / sched.alpha(t).sqrt();
    for (g, xv) in got.iter().zip(&x) {
        assert!((g - scale * xv).abs() < 1e-15);
    }
}

#[test]
fn mu_theta_coefficient_identity() {
    // With exact inputs x_t = √ᾱ·x0 + √(1-ᾱ)·ε and ε̂ = ε, the mean is
    // √ᾱ_{t-1}·x0 + (√(1-ᾱ_t)/√α_t − β_t/(√α_t·√(1-ᾱ_t)))·ε.
    let sched = base_schedule();
    let mut r = rng(1);
    let len = 64;
    let x0: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
    for t in [2usize, 17, 50] {
        let x_t = crate::diffusion::q_sample(&x0, t, &eps, &sched).unwrap();
        let got = mu_theta(&x_t, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar(t);
        let a = sched.alpha(t);
        let coeff = (1.0 - ab).sqrt() / a.sqrt() - sched.beta(t) / (a.sqrt() * (1.0 - ab).sqrt());
        let prev = sched.alpha_bar(t - 1).sqrt();
        for i in 0..len {
            let expect = prev * x0[i] + coeff * eps[i];
            assert!((got[i] - expect).abs() < 1e-12, "t={t} i={i}");
        }
    }
}

#[test]
fn mu_theta_identity_in_small_beta_limit() {
    // Convergence to the identity is O(√β): β = 1e-12 puts the correction
    // near 2e-7.
    let sched = NoiseSchedule::linear(3, 1e-12, 1e-12).unwrap();
    let x = vec![0.8, -0.6];
    let got = mu_theta(&x, 2, &[0.3, 0.3], &sched).unwrap();
    for (g, xv) in got.iter().zip(&x) {
        assert!((g - xv).abs() < 1e-5);
    }
}

#[test]
fn reverse_sample_with_oracle_recovers_x0() {
    // The terminal step inverts exactly and adds no noise, so every run
    // lands on x0; the ensemble mean trivially sits within any tolerance.
    let sched = base_schedule();
    let len = 128;
    let x0 = speechish(len, 2);
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let mut r = rng(3);
    let runs = 100;
    let mut mean = vec![0.0; len];
    for _ in 0..runs {
        let out = reverse_sample(&oracle, len, &cond, &sched, &mut r, None).unwrap();
        for (m, v) in mean.iter_mut().zip(&out) {
            *m += v / runs as f64;
        }
    }
    let err = l2(&mean.iter().zip(&x0).map(|(m, x)| m - x).collect::<Vec<_>>()) / l2(&x0);
    assert!(err < 1e-9, "relative error {err}");
}

#[test]
fn reverse_sample_zero_predictor_smoke() {
    let sched = base_schedule();
    let len = 64;
    let cond = dummy_cond(len);
    let out = reverse_sample(&ZeroPredictor, len, &cond, &sched, &mut rng(4), None).unwrap();
    assert_eq!(out.len(), len);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn reverse_sample_fixed_seed_is_bit_identical() {
    let sched = base_schedule();
    let len = 64;
    let x0 = speechish(len, 5);
    let oracle = OraclePredictor { x0 };
    let cond = dummy_cond(len);
    let a = reverse_sample(&oracle, len, &cond, &sched, &mut rng(6), None).unwrap();
    let b = reverse_sample(&oracle, len, &cond, &sched, &mut rng(6), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn srp_clean_fixed_point_machine_precision() {
    let sched = base_schedule();
    let len = 256;
    let x0 = speechish(len, 7);
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let policy = GammaPolicy::default();
    let out =
        supportive_reverse_sample(&oracle, &x0, &cond, &sched, &policy, &mut rng(8), None).unwrap();
    let err = l2(&out.iter().zip(&x0).map(|(o, x)| o - x).collect::<Vec<_>>()) / l2(&x0);
    assert!(err < 1e-12, "relative error {err}");
}

#[test]
fn srp_is_deterministic_regardless_of_seed() {
    // Under the γ rule σ̂_t = 0 for t > 1 and z = 0 at t = 1, so the rng
    // never touches the trajectory.
    let sched = base_schedule();
    let len = 128;
    let x0 = speechish(len, 9);
    let noise = speechish(len, 10);
    let y: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect();
    let oracle = OraclePredictor { x0 };
    let cond = dummy_cond(len);
    let policy = GammaPolicy::default();
    let a = supportive_reverse_sample(&oracle, &y, &cond, &sched, &policy, &mut rng(11), None)
        .unwrap();
    let b = supportive_reverse_sample(&oracle, &y, &cond, &sched, &policy, &mut rng(999), None)
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn srp_first_step_mix_matches_ideal_mean_algebra() {
    // With a predictor that realizes μ_θ = √ᾱ_{t-1}·x0, the first
    // supportive step gives μ̂ = √ᾱ_{T-1}·(x0 + γ_T·n) exactly.
    let sched = base_schedule();
    let len = 96;
    let x0 = speechish(len, 12);
    let n: Vec<f64> = speechish(len, 13).iter().map(|v| 0.5 * v).collect();
    let y: Vec<f64> = x0.iter().zip(&n).map(|(a, b)| a + b).collect();
    let ideal = IdealMeanPredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let policy = GammaPolicy::default();
    let t = sched.steps();
    let (mu_hat, sigma_hat, _) =
        supportive_step(&ideal, &y, t, &y, &cond, &sched, &policy).unwrap();
    let gamma = policy.gamma(&sched, t).unwrap();
    let prev = sched.alpha_bar(t - 1).sqrt();
    for i in 0..len {
        let expect = prev * (x0[i] + gamma * n[i]);
        assert!((mu_hat[i] - expect).abs() < 1e-12, "i={i}: {} vs {expect}", mu_hat[i]);
    }
    assert_eq!(sigma_hat, 0.0);
}

#[test]
fn srp_oracle_recovery_at_5db() {
    // The oracle inverts the terminal step exactly, so SRP output is
    // x0 + γ_1·n: SI-SDR improves by about 20·log10(1/γ_1) ≈ 14 dB.
    let sched = base_schedule();
    let len = 4096;
    let x0 = speechish(len, 14);
    let mut noise = speechish(len, 15);
    let xe: f64 = x0.iter().map(|v| v * v).sum();
    let ne: f64 = noise.iter().map(|v| v * v).sum();
    let scale = (xe / (ne * 10f64.powf(0.5))).sqrt(); // 5 dB
    for v in noise.iter_mut() {
        *v *= scale;
    }
    let y: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let out = supportive_reverse_sample(
        &oracle,
        &y,
        &cond,
        &sched,
        &GammaPolicy::default(),
        &mut rng(16),
        None,
    )
    .unwrap();
    let before = si_sdr(&x0, &y).unwrap();
    let after = si_sdr(&x0, &out).unwrap();
    assert!(
        after - before >= 5.0,
        "improvement {:.2} dB (before {before:.2}, after {after:.2})",
        after - before
    );
    // Brute-force measurement, frozen: the γ_1 = 0.2 mix gives ~13.9 dB.
    assert!(after - before > 12.0, "expected ~14 dB, got {:.2}", after - before);
}

#[test]
fn mix_output_is_affine_in_noisy_signal() {
    let y = vec![1.0, -2.0, 0.5];
    let zero = vec![0.0; 3];
    let got = mix_output(&zero, &y, 0.2);
    for (g, yv) in got.iter().zip(&y) {
        assert!((g - 0.2 * yv).abs() < 1e-15);
    }
    let xhat = vec![0.4, 0.1, -0.2];
    let w = 0.3;
    let a = mix_output(&xhat, &y, w);
    let y2: Vec<f64> = y.iter().map(|v| v * 2.0).collect();
    let b = mix_output(&xhat, &y2, w);
    // affine: output differences scale exactly with y differences
    for i in 0..3 {
        assert!(((b[i] - a[i]) - w * (y2[i] - y[i])).abs() < 1e-15);
    }
}

#[test]
fn enhance_nout_weight_zero_equals_rp() {
    let sched = base_schedule();
    let len = 2048;
    let x0 = speechish(len, 17);
    let y = AudioBuffer::new(x0.clone(), SAMPLE_RATE).unwrap();
    let oracle = OraclePredictor { x0 };
    let spec_rp = SamplerSpec {
        variant: Variant::Rp,
        schedule_mode: ScheduleMode::Full,
        gamma_policy: GammaPolicy::default(),
        output_mix_weight: 0.2,
    };
    let spec_nout = SamplerSpec { variant: Variant::RpNOut, output_mix_weight: 0.0, ..spec_rp.clone() };
    let (a, _) = enhance(&oracle, &y, &spec_rp, &sched, &mut rng(18), false).unwrap();
    let (b, _) = enhance(&oracle, &y, &spec_nout, &sched, &mut rng(18), false).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn enhance_ninout_weight_zero_equals_nin() {
    let sched = base_schedule();
    let len = 2048;
    let x0 = speechish(len, 19);
    let noise = speechish(len, 20);
    let y_vec: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect();
    let y = AudioBuffer::new(y_vec, SAMPLE_RATE).unwrap();
    let oracle = OraclePredictor { x0 };
    let spec_nin = SamplerSpec {
        variant: Variant::RpNIn,
        schedule_mode: ScheduleMode::Full,
        gamma_policy: GammaPolicy::default(),
        output_mix_weight: 0.2,
    };
    let spec_ninout =
        SamplerSpec { variant: Variant::RpNInOut, output_mix_weight: 0.0, ..spec_nin.clone() };
    let (a, _) = enhance(&oracle, &y, &spec_nin, &sched, &mut rng(21), false).unwrap();
    let (b, _) = enhance(&oracle, &y, &spec_ninout, &sched, &mut rng(21), false).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn rp_nin_with_gaussian_start_equals_rp() {
    // RP draws its start from the stream, then runs the chain; seeding N_in
    // with the same draw and the advanced stream reproduces RP bit for bit.
    let sched = base_schedule();
    let len = 96;
    let x0 = speechish(len, 22);
    let oracle = OraclePredictor { x0 };
    let cond = dummy_cond(len);
    let mut r1 = rng(23);
    let a = reverse_sample(&oracle, len, &cond, &sched, &mut r1, None).unwrap();
    let mut r2 = rng(23);
    let start = gaussian(len, &mut r2);
    let b = reverse_sample_from(&oracle, start, &cond, &sched, &mut r2, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn srp_on_clean_input_returns_input_via_enhance() {
    let sched = base_schedule();
    let len = 2048;
    let x0 = speechish(len, 24);
    let y = AudioBuffer::new(x0.clone(), SAMPLE_RATE).unwrap();
    let oracle = OraclePredictor { x0: x0.clone() };
    let spec = SamplerSpec::default();
    let (out, _) = enhance(&oracle, &y, &spec, &sched, &mut rng(25), false).unwrap();
    let err = l2(&out.samples.iter().zip(&x0).map(|(o, x)| o - x).collect::<Vec<_>>()) / l2(&x0);
    assert!(err < 1e-12, "relative error {err}");
}

#[test]
fn fast_schedule_identity_reduces_to_full() {
    let sched = base_schedule();
    let len = 96;
    let x0 = speechish(len, 26);
    let noise = speechish(len, 27);
    let y: Vec<f64> = x0.iter().zip(&noise).map(|(a, b)| a + 0.2 * b).collect();
    let oracle = OraclePredictor { x0 };
    let cond = dummy_cond(len);
    let fast = FastSchedule::align(&sched, sched.betas()).unwrap();

    // Plain chain from matched Gaussian starts.
    let mut r1 = rng(28);
    let full = reverse_sample(&oracle, len, &cond, &sched, &mut r1, None).unwrap();
    let mut r2 = rng(28);
    let start = gaussian(len, &mut r2);
    let fast_out = fast_sample(
        &oracle,
        start,
        &cond,
        &fast,
        Variant::Rp,
        &GammaPolicy::default(),
        &mut r2,
        None,
    )
    .unwrap();
    assert_eq!(full, fast_out, "plain variant must reduce bit-identically");

    // Supportive chain.
    let policy = GammaPolicy::default();
    let mut r3 = rng(29);
    let full_srp =
        supportive_reverse_sample(&oracle, &y, &cond, &sched, &policy, &mut r3, None).unwrap();
    let mut r4 = rng(29);
    let fast_srp =
        fast_sample(&oracle, y.clone(), &cond, &fast, Variant::Srp, &policy, &mut r4, None)
            .unwrap();
    assert_eq!(full_srp, fast_srp, "supportive variant must reduce bit-identically");
}

#[test]
fn fast_base_schedule_runs_six_predictor_calls() {
    let sched = base_schedule();
    let len = 96;
    let x0 = speechish(len, 30);
    let oracle = OraclePredictor { x0: x0.clone() };
    let counting = CountingPredictor { inner: &oracle, calls: std::cell::Cell::new(0) };
    let cond = dummy_cond(len);
    let fast = FastSchedule::align(&sched, &[0.0001, 0.001, 0.01, 0.05, 0.2, 0.5]).unwrap();
    let out = fast_sample(
        &counting,
        x0.clone(),
        &cond,
        &fast,
        Variant::Srp,
        &GammaPolicy::default(),
        &mut rng(31),
        None,
    )
    .unwrap();
    assert_eq!(counting.calls.get(), 6);
    // Clean fixed point holds under the fast supportive chain too.
    let err = l2(&out.iter().zip(&x0).map(|(o, x)| o - x).collect::<Vec<_>>()) / l2(&x0);
    assert!(err < 1e-12, "relative error {err}");
}

#[test]
fn trace_records_every_step() {
    let sched = base_schedule();
    let len = 64;
    let x0 = speechish(len, 32);
    let oracle = OraclePredictor { x0: x0.clone() };
    let cond = dummy_cond(len);
    let mut trace = ReverseTrace::default();
    supportive_reverse_sample(
        &oracle,
        &x0,
        &cond,
        &sched,
        &GammaPolicy::default(),
        &mut rng(33),
        Some(&mut trace),
    )
    .unwrap();
    assert_eq!(trace.records.len(), sched.steps());
    assert_eq!(trace.records[0].position, 50.0);
    assert_eq!(trace.records.last().unwrap().position, 1.0);
    let table = trace.to_table();
    assert!(table.starts_with("position\teps_norm\tstate_norm\n"));
}

#[test]
fn enhance_rejects_bad_mix_weight() {
    let sched = base_schedule();
    let y = AudioBuffer::new(speechish(2048, 34), SAMPLE_RATE).unwrap();
    let oracle = OraclePredictor { x0: y.samples.clone() };
    let spec = SamplerSpec { output_mix_weight: 1.5, ..SamplerSpec::default() };
    assert!(matches!(
        enhance(&oracle, &y, &spec, &sched, &mut rng(35), false),
        Err(SamplerError::BadMixWeight(_))
    ));
}
