// Timing probe for the tiny profile: train_step and predict_noise cost.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sediff_core::signal::{synth_corpus, CorpusSpec};
use sediff_core::trainer::{self, profiles, OptimizerState, TrainPhase};
use sediff_core::{PredictorParams, Split};
use std::time::Instant;

fn main() {
    let profile = &profiles::TINY;
    let dir = std::env::temp_dir().join("sediff-timing");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = CorpusSpec { train: 4, valid: 1, test: 1, duration_secs: 1.0, snrs_db: vec![5.0] };
    let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let sched = profile.schedule().unwrap();
    let utts = trainer::load_split(&manifest, Split::Train, profile.crop_len).unwrap();
    let config = {
        let mut c = profile.train_config(TrainPhase::Finetune, 1);
        c.max_iters = 1;
        c
    };
    let mut params =
        PredictorParams::<f32>::init(profile.predictor_config(TrainPhase::Finetune), 1).unwrap();
    let mut opt = OptimizerState::fresh(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // Warm up, then time train steps.
    for _ in 0..3 {
        trainer::train_step(&mut params, &mut opt, &utts, &sched, &config, &mut rng).unwrap();
    }
    let n = 20;
    let t0 = Instant::now();
    for _ in 0..n {
        trainer::train_step(&mut params, &mut opt, &utts, &sched, &config, &mut rng).unwrap();
    }
    let per_step = t0.elapsed().as_secs_f64() / n as f64;
    println!("train_step (crop {} batch {}): {:.1} ms", config.crop_len, config.batch_size, per_step * 1e3);
    println!("20k iters -> {:.1} min", per_step * 20000.0 / 60.0);

    // Inference cost on a 1 s utterance (16000 samples).
    let y: Vec<f64> = (0..16000).map(|i| ((i as f64) * 0.07).sin() * 0.3).collect();
    let audio = sediff_core::AudioBuffer::new(y, 16000).unwrap();
    let cond = sediff_core::signal::stft_log_magnitude(&audio).unwrap();
    let t0 = Instant::now();
    let m = 5;
    for _ in 0..m {
        let _ = params.predict_noise(&audio.samples, 5.0, &cond).unwrap();
    }
    let per_call = t0.elapsed().as_secs_f64() / m as f64;
    println!("predict_noise on 1 s: {:.1} ms -> full T=10 pass {:.2} s/utt", per_call * 1e3, per_call * 10.0);
    println!("150 utt-passes (50 utts x 3 variants): {:.1} min", per_call * 10.0 * 150.0 / 60.0);
}
