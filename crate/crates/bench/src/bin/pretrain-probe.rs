// A/B probe: does Mel-conditioned pretraining beat from-scratch training at
// an equal total iteration budget on a micro setup?
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sediff_core::signal::{synth_corpus, CorpusSpec};
use sediff_core::trainer::{self, TrainPhase};
use sediff_core::{NoiseSchedule, PredictorConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let total: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);

    let dir = std::env::temp_dir().join(format!("sediff-pretrain-probe-{total}-{seed}"));
    let _ = std::fs::remove_dir_all(&dir);
    let spec = CorpusSpec { train: 6, valid: 3, test: 0, duration_secs: 0.5, snrs_db: vec![5.0, 10.0] };
    let manifest = synth_corpus(&spec, &dir, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let sched = NoiseSchedule::linear(6, 0.02, 0.4).unwrap();
    let predictor = PredictorConfig {
        n_layers: 4,
        n_blocks: 2,
        residual_channels: 8,
        kernel_size: 3,
        conditioner_dim: 80,
        cond_channels: 8,
        step_embed_dim: 32,
        step_hidden_dim: 64,
    };
    let config = |phase: TrainPhase, iters: u64| trainer::TrainConfig {
        learning_rate: 1e-3,
        batch_size: 1,
        max_iters: iters,
        early_stop_patience: 10_000,
        phase,
        seed,
        crop_len: 1024,
        eval_interval: 50,
    };

    // From scratch: all iterations in the fine-tune phase.
    let mut log = std::io::sink();
    let scratch = trainer::pretrain_then_finetune::<f32>(
        &manifest,
        &manifest,
        &config(TrainPhase::Pretrain, 0),
        &config(TrainPhase::Finetune, total),
        &sched,
        predictor.clone(),
        &dir.join("scratch"),
        &mut log,
    )
    .unwrap();

    // Two-phase: a third of the budget on Mel-conditioned pretraining.
    let two_phase = trainer::pretrain_then_finetune::<f32>(
        &manifest,
        &manifest,
        &config(TrainPhase::Pretrain, total / 3),
        &config(TrainPhase::Finetune, total - total / 3),
        &sched,
        predictor,
        &dir.join("two_phase"),
        &mut log,
    )
    .unwrap();

    println!(
        "total {total}: scratch best valid {:.2}; pretrain+finetune best valid {:.2} (ratio {:.3})",
        scratch.best_valid_loss,
        two_phase.best_valid_loss,
        two_phase.best_valid_loss / scratch.best_valid_loss
    );
}
