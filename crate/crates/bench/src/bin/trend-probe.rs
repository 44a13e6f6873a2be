// Desk-scale ablation probe: train the tiny profile on a synthetic corpus,
// then compare reverse-process variants by median SI-SDR on the test split.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sediff_core::metrics::si_sdr;
use sediff_core::sampler::{enhance, SamplerSpec, ScheduleMode, Variant};
use sediff_core::signal::{synth_corpus, CorpusSpec};
use sediff_core::trainer::{self, profiles, Checkpoint, TrainPhase};
use sediff_core::{GammaPolicy, PredictorParams, Split};
use std::io::Write;
use std::time::Instant;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(20_000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(7);

    let profile = &profiles::TINY;
    let dir = std::env::temp_dir().join(format!("sediff-trend-{iters}-{lr}-{seed}"));
    let _ = std::fs::remove_dir_all(&dir);
    let spec = CorpusSpec {
        train: 40,
        valid: 8,
        test: 50,
        duration_secs: 1.0,
        snrs_db: vec![0.0, 5.0, 10.0, 15.0],
    };
    let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let sched = profile.schedule().unwrap();

    let mut config = profile.train_config(TrainPhase::Finetune, seed);
    config.max_iters = iters;
    config.learning_rate = lr;
    config.early_stop_patience = 1000; // never triggers in this probe
    let init =
        PredictorParams::<f32>::init(profile.predictor_config(TrainPhase::Finetune), seed).unwrap();

    let t0 = Instant::now();
    let mut log = std::io::sink();
    let outcome = trainer::train_loop(&manifest, init, &sched, &config, &dir.join("run"), &mut log)
        .unwrap();
    println!(
        "trained {} iters in {:.1} min; best valid {:.2} final {:.2}",
        outcome.iters_run,
        t0.elapsed().as_secs_f64() / 60.0,
        outcome.best_valid_loss,
        outcome.final_valid_loss
    );

    let params: PredictorParams<f32> = Checkpoint::load(&outcome.checkpoint_path).unwrap().params_as();
    let variants = [Variant::Srp, Variant::RpNInOut, Variant::RpNIn, Variant::RpNOut, Variant::Rp];
    let t1 = Instant::now();
    for mode_name in ["full", "fast"] {
        let mut lines = Vec::new();
        let mut noisy_scores = Vec::new();
        let mut scores: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
        for (ui, rec) in manifest.split(Split::Test).iter().enumerate() {
            let (clean, noisy) = rec.load_pair().unwrap();
            noisy_scores.push(si_sdr(&clean.samples, &noisy.samples).unwrap());
            for (vi, &variant) in variants.iter().enumerate() {
                let spec = SamplerSpec {
                    variant,
                    schedule_mode: if mode_name == "full" {
                        ScheduleMode::Full
                    } else {
                        ScheduleMode::Fast { user_betas: profile.fast_betas.to_vec() }
                    },
                    gamma_policy: GammaPolicy::default(),
                    output_mix_weight: 0.2,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ui as u64) << 8 ^ vi as u64);
                let (out, _) = enhance(&params, &noisy, &spec, &sched, &mut rng, false).unwrap();
                scores[vi].push(si_sdr(&clean.samples, &out.samples).unwrap());
            }
        }
        lines.push(format!("[{mode_name}] noisy median {:.2}", median(noisy_scores.clone())));
        for (vi, &variant) in variants.iter().enumerate() {
            lines.push(format!(
                "[{mode_name}] {:<10} median {:.2}",
                variant.as_str(),
                median(scores[vi].clone())
            ));
        }
        for l in &lines {
            println!("{l}");
        }
        std::io::stdout().flush().unwrap();
    }
    println!("enhancement sweep took {:.1} min", t1.elapsed().as_secs_f64() / 60.0);
}
