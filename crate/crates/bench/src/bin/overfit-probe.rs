// Probe for the overfit-one-batch gate: tiny profile, one fixed batch,
// loss trajectory over 2000 steps.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sediff_core::predictor::LossItem;
use sediff_core::signal::{synth_corpus, CorpusSpec};
use sediff_core::trainer::{self, adam_step, profiles, OptimizerState, TrainPhase};
use sediff_core::{PredictorParams, Split};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);

    let profile = &profiles::TINY;
    let dir = std::env::temp_dir().join(format!("sediff-overfit-{lr}"));
    let _ = std::fs::remove_dir_all(&dir);
    let spec = CorpusSpec { train: 1, valid: 1, test: 0, duration_secs: 0.5, snrs_db: vec![5.0] };
    let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let sched = profile.schedule().unwrap();
    let utts = trainer::load_split(&manifest, Split::Train, profile.crop_len).unwrap();

    // One fixed example at the profile crop length.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let crop = &utts[0].clean[0..profile.crop_len];
    let noisy_crop = &utts[0].noisy[0..profile.crop_len];
    let cond = sediff_core::signal::stft_log_magnitude(
        &sediff_core::AudioBuffer::new(noisy_crop.to_vec(), 16_000).unwrap(),
    )
    .unwrap();
    let pair = sediff_core::diffusion::make_training_pair(crop, &sched, 0, &mut rng).unwrap();
    let items = [LossItem { pair: &pair, cond: &cond }];

    let mut params =
        PredictorParams::<f32>::init(profile.predictor_config(TrainPhase::Finetune), 9).unwrap();
    let mut opt = OptimizerState::fresh(&params);
    let (initial, _) = params.loss_and_grad(&items).unwrap();
    println!("lr {lr}: initial loss {initial:.2}");
    let t0 = Instant::now();
    for step in 1..=steps {
        let (loss, grads) = params.loss_and_grad(&items).unwrap();
        adam_step(&mut params, &grads, &mut opt, lr);
        if step % 250 == 0 || step == steps {
            println!(
                "step {step}: loss {loss:.3} ({:.1}% of initial, {:.1}s)",
                100.0 * loss / initial,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
