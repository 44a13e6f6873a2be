//! Subcommand implementations. Each returns the process exit code: 0 on
//! success, 1 for runtime failures surfaced as errors by the caller.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sediff_core::metrics;
use sediff_core::sampler::{self, SamplerSpec, ScheduleMode, Variant};
use sediff_core::schedule::{srp_sigma_hat, FastSchedule};
use sediff_core::signal::{self, read_wav, write_wav, CorpusSpec, SAMPLE_RATE};
use sediff_core::trainer::{self, profiles, Checkpoint, TrainPhase};
use sediff_core::{
    selfcheck, GammaPolicy, Manifest, NoiseSchedule, PredictorParams, Split,
};

use crate::settings::{item_seed, run_indexed, Globals};

fn parse_beta_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(':')
        .with_context(|| format!("expected min:max, got {s:?}"))?;
    Ok((lo.parse().context("beta min")?, hi.parse().context("beta max")?))
}

fn parse_float_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}

#[derive(Args)]
pub struct ScheduleInspectArgs {
    /// Number of diffusion steps.
    #[arg(long = "T", value_name = "STEPS")]
    steps: usize,
    /// Linear beta range as min:max.
    #[arg(long, value_name = "MIN:MAX")]
    beta: String,
    /// Terminal mixing ratio for the γ column.
    #[arg(long, default_value_t = 0.2)]
    gamma1: f64,
}

pub fn schedule_inspect(args: ScheduleInspectArgs, _globals: &Globals) -> Result<i32> {
    let (beta_min, beta_max) = parse_beta_range(&args.beta)?;
    let sched = NoiseSchedule::linear(args.steps, beta_min, beta_max)?;
    let policy = GammaPolicy::new(args.gamma1);
    let mut out = String::from("t\tbeta\talpha\talpha_bar\tsigma\tgamma\tsigma_hat\n");
    for t in 1..=sched.steps() {
        let sigma_hat = match srp_sigma_hat(&sched, &policy, t) {
            Ok(v) => format!("{v:.9}"),
            Err(_) => "-".to_string(),
        };
        out.push_str(&format!(
            "{t}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{sigma_hat}\n",
            sched.beta(t),
            sched.alpha(t),
            sched.alpha_bar(t),
            sched.sigma(t)?,
            policy.gamma(&sched, t)?,
        ));
    }
    print!("{out}");
    Ok(0)
}

#[derive(Args)]
pub struct SynthDataArgs {
    /// Training utterance count.
    #[arg(long, default_value_t = 40)]
    train: usize,
    /// Validation utterance count.
    #[arg(long, default_value_t = 8)]
    valid: usize,
    /// Test utterance count.
    #[arg(long, default_value_t = 50)]
    test: usize,
    /// Utterance duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Comma-separated SNR list in dB.
    #[arg(long, default_value = "0,5,10,15")]
    snrs: String,
    /// Output directory.
    #[arg(long)]
    outdir: PathBuf,
}

pub fn synth_data(args: SynthDataArgs, globals: &Globals) -> Result<i32> {
    let spec = CorpusSpec {
        train: args.train,
        valid: args.valid,
        test: args.test,
        duration_secs: args.duration,
        snrs_db: parse_float_list(&args.snrs)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(globals.seed);
    let manifest = signal::synth_corpus(&spec, &args.outdir, &mut rng)?;
    println!(
        "wrote {} utterances under {} (manifest.tsv)",
        manifest.records.len(),
        args.outdir.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct TrainArgs {
    /// Model/schedule preset.
    #[arg(long, value_parser = ["tiny", "base", "large"])]
    profile: String,
    /// Training phase.
    #[arg(long, value_parser = ["pretrain", "finetune", "both"])]
    phase: String,
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// Iteration budget (per phase for --phase both).
    #[arg(long, default_value_t = 10_000)]
    max_iters: u64,
    /// Validation checks without improvement before stopping.
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Override the profile learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the profile batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Override the profile crop length (samples).
    #[arg(long)]
    crop: Option<usize>,
    /// Warm-start checkpoint for single-phase runs; its conditioner encoder
    /// is reset when the feature dimension differs.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn train(args: TrainArgs, globals: &Globals) -> Result<i32> {
    let profile = profiles::by_name(&args.profile).expect("clap validated");
    let sched = profile.schedule()?;
    let build_config = |phase: TrainPhase| {
        let mut c = profile.train_config(phase, globals.seed);
        c.max_iters = args.max_iters;
        c.early_stop_patience = args.patience;
        if let Some(lr) = args.lr {
            c.learning_rate = lr;
        }
        if let Some(b) = args.batch {
            c.batch_size = b;
        }
        if let Some(crop) = args.crop {
            c.crop_len = crop;
        }
        c
    };
    let manifest = Manifest::load(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let log_path = args.out.join("train.log");
    let mut log: Box<dyn Write> = Box::new(std::io::BufWriter::new(
        std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    ));

    let outcome = match args.phase.as_str() {
        "both" => {
            if args.init.is_some() {
                bail!("--init is only valid for single-phase runs");
            }
            trainer::pretrain_then_finetune::<f32>(
                &manifest,
                &manifest,
                &build_config(TrainPhase::Pretrain),
                &build_config(TrainPhase::Finetune),
                &sched,
                profile.predictor_config(TrainPhase::Pretrain),
                &args.out,
                &mut log,
            )?
        }
        single => {
            let phase = if single == "pretrain" { TrainPhase::Pretrain } else { TrainPhase::Finetune };
            let config = build_config(phase);
            let init = match &args.init {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    let params: PredictorParams<f32> = ckpt.params_as();
                    if params.config.conditioner_dim != phase.conditioner_dim() {
                        params.reset_conditioner_encoder(
                            phase.conditioner_dim(),
                            item_seed(globals.seed, 0xc0de),
                        )
                    } else {
                        params
                    }
                }
                None => PredictorParams::<f32>::init(
                    profile.predictor_config(phase),
                    globals.seed,
                )?,
            };
            trainer::train_loop(&manifest, init, &sched, &config, &args.out, &mut log)?
        }
    };
    log.flush()?;
    println!(
        "best checkpoint {} (valid loss {:.6}, {} iters; log at {})",
        outcome.checkpoint_path.display(),
        outcome.best_valid_loss,
        outcome.iters_run,
        log_path.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct EnhanceArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest whose test split is enhanced.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    manifest: Option<PathBuf>,
    /// Single noisy WAV to enhance instead of a manifest.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory for enhanced WAVs.
    #[arg(long)]
    outdir: PathBuf,
    /// Reverse-process variant.
    #[arg(long, default_value = "srp", value_parser = ["rp", "rp-nin", "rp-nout", "rp-ninout", "srp"])]
    variant: String,
    /// Sampling schedule.
    #[arg(long = "schedule", default_value = "full", value_parser = ["full", "fast"])]
    schedule_mode: String,
    /// Inference variance schedule for --schedule fast (comma list).
    #[arg(long)]
    fast_betas: Option<String>,
    /// Terminal mixing ratio of the supportive process.
    #[arg(long, default_value_t = 0.2)]
    gamma1: f64,
    /// Noisy weight in the output mix of the N_out variants. Passing it
    /// explicitly with --variant srp additionally mixes the noisy signal
    /// into the supportive process output.
    #[arg(long)]
    mix: Option<f64>,
    /// Per-step diagnostics: a TSV file for --input, a directory for --manifest.
    #[arg(long)]
    trace: Option<PathBuf>,
}

pub fn enhance(args: EnhanceArgs, globals: &Globals) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let params: PredictorParams<f32> = ckpt.params_as();
    let sched = ckpt.schedule.clone();
    let variant = Variant::parse(&args.variant).expect("clap validated");
    let schedule_mode = match args.schedule_mode.as_str() {
        "full" => ScheduleMode::Full,
        _ => {
            let betas = match &args.fast_betas {
                Some(list) => parse_float_list(list)?,
                None => bail!("--schedule fast requires --fast-betas"),
            };
            // Validate the alignment up front for a clear error.
            FastSchedule::align(&sched, &betas)?;
            ScheduleMode::Fast { user_betas: betas }
        }
    };
    let spec = SamplerSpec {
        variant,
        schedule_mode,
        gamma_policy: GammaPolicy::new(args.gamma1),
        output_mix_weight: args.mix.unwrap_or(0.2),
    };
    // The supportive process's terminal step already mixes the noisy
    // signal in; an explicit --mix asks for an extra output mix on top.
    let srp_extra_mix = match (variant, args.mix) {
        (Variant::Srp, Some(w)) => Some(w),
        _ => None,
    };
    std::fs::create_dir_all(&args.outdir)?;

    // Manifest mode enhances the test split, reconstructing each noisy
    // mixture from its record pair; single-input mode reads the file as-is.
    let manifest = args.manifest.as_ref().map(|p| Manifest::load(p)).transpose()?;
    let records = manifest.as_ref().map(|m| m.split(Split::Test)).unwrap_or_default();
    let names: Vec<String> = match &args.input {
        Some(single) => vec![single
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "enhanced.wav".into())],
        None => records
            .iter()
            .map(|r| {
                r.clean_path
                    .file_name()
                    .expect("manifest paths have names")
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };

    let want_trace = args.trace.is_some();
    if let (Some(trace_path), None) = (&args.trace, &args.input) {
        std::fs::create_dir_all(trace_path)?;
    }
    let outputs = run_indexed(names.len(), globals.jobs, |i| {
        let noisy = match &args.input {
            Some(single) => read_wav(single)?,
            None => records[i].load_pair()?.1,
        };
        noisy.ensure_rate(SAMPLE_RATE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(globals.seed, i));
        let (mut enhanced, trace) =
            sampler::enhance(&params, &noisy, &spec, &sched, &mut rng, want_trace)?;
        if let Some(w) = srp_extra_mix {
            enhanced = sediff_core::AudioBuffer::new(
                sampler::mix_output(&enhanced.samples, &noisy.samples, w),
                enhanced.sample_rate,
            )?;
        }
        Ok((enhanced, trace))
    })?;

    for (i, name) in names.iter().enumerate() {
        let (enhanced, trace) = &outputs[i];
        write_wav(&args.outdir.join(name), enhanced)?;
        if let (Some(trace_path), Some(t)) = (&args.trace, trace) {
            let path = if args.input.is_some() {
                trace_path.clone()
            } else {
                trace_path.join(format!("{}.tsv", name.trim_end_matches(".wav")))
            };
            std::fs::write(path, t.to_table())?;
        }
        if globals.verbose {
            eprintln!("enhanced {name}");
        }
    }
    println!("enhanced {} utterance(s) into {}", names.len(), args.outdir.display());
    Ok(0)
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Dataset manifest (test split is scored).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of enhanced WAVs named after the clean files.
    #[arg(long)]
    enhanced: PathBuf,
    /// Where to write the score table (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Export paired clean/enhanced WAVs for external scoring tools.
    #[arg(long)]
    export: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs, _globals: &Globals) -> Result<i32> {
    let manifest = Manifest::load(&args.manifest)?;
    let report = metrics::evaluate(&manifest, &args.enhanced)?;
    let table = report.to_table();
    match &args.report {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, &table)?;
            println!(
                "scored {} utterances; median si-sdr {:.2} dB; report at {}",
                report.utterances.len(),
                report.median_si_sdr(),
                path.display()
            );
        }
        None => print!("{table}"),
    }
    if let Some(export) = &args.export {
        for r in manifest.split(Split::Test) {
            let name = r.clean_path.file_name().expect("named file");
            let clean = read_wav(&r.clean_path)?;
            write_wav(&export.join("clean").join(name), &clean)?;
            let enhanced = read_wav(&args.enhanced.join(name))?;
            write_wav(&export.join("enhanced").join(name), &enhanced)?;
        }
        println!("exported paired WAVs under {}", export.display());
    }
    Ok(0)
}

#[derive(Args)]
pub struct OracleCheckArgs {
    /// Corrupt the σ table to demonstrate failure reporting.
    #[arg(long, hide = true, default_value_t = false)]
    inject_sigma_fault: bool,
}

pub fn oracle_check(args: OracleCheckArgs, globals: &Globals) -> Result<i32> {
    let fault = args.inject_sigma_fault.then_some(selfcheck::Fault::CorruptSigma);
    let results = selfcheck::run_all(globals.seed, fault);
    let mut all_pass = true;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<24} {} (threshold {})", r.name, r.measured, r.threshold);
        all_pass &= r.pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}
