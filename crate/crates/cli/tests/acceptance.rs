//! Acceptance: every CLI command is byte-reproducible under a fixed --seed
//! with --jobs 1, and per-utterance outputs are independent of --jobs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sediff"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn testdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("sediff-cli-acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Every file under `dir`, relative path -> content.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> =
            std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn acceptance_cli_determinism() {
    let root = testdir("determinism");

    // Identical synth-data runs produce identical corpora.
    let corpus = |name: &str| -> PathBuf {
        let dir = root.join(name);
        run_ok(&[
            "synth-data",
            "--train",
            "2",
            "--valid",
            "1",
            "--test",
            "2",
            "--duration",
            "0.5",
            "--outdir",
            dir.to_str().unwrap(),
            "--seed",
            "13",
        ]);
        dir
    };
    let c1 = corpus("corpus_a");
    let c2 = corpus("corpus_b");
    assert_eq!(snapshot(&c1), snapshot(&c2), "synth-data must be byte-reproducible");

    // schedule-inspect stdout is identical across runs.
    let s1 = run_ok(&["schedule-inspect", "--T", "50", "--beta", "1e-4:0.05"]);
    let s2 = run_ok(&["schedule-inspect", "--T", "50", "--beta", "1e-4:0.05"]);
    assert_eq!(s1.stdout, s2.stdout);

    // Identical train runs: identical logs and checkpoints.
    let train = |name: &str| -> PathBuf {
        let out = root.join(name);
        run_ok(&[
            "train",
            "--profile",
            "tiny",
            "--phase",
            "finetune",
            "--manifest",
            c1.join("manifest.tsv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--max-iters",
            "20",
            "--crop",
            "1024",
            "--seed",
            "13",
        ]);
        out
    };
    let t1 = train("model_a");
    let t2 = train("model_b");
    assert_eq!(snapshot(&t1), snapshot(&t2), "train must be byte-reproducible");

    // Identical enhance runs, full and fast schedules; --jobs must not
    // change the bytes either.
    let enhance = |name: &str, schedule: &str, jobs: &str| -> PathBuf {
        let out = root.join(name);
        let mut args = vec![
            "enhance",
            "--checkpoint",
            Box::leak(t1.join("best.ckpt").to_str().unwrap().to_owned().into_boxed_str()),
            "--manifest",
            Box::leak(c1.join("manifest.tsv").to_str().unwrap().to_owned().into_boxed_str()),
            "--outdir",
            Box::leak(out.to_str().unwrap().to_owned().into_boxed_str()),
            "--variant",
            "srp",
            "--seed",
            "13",
            "--jobs",
            Box::leak(jobs.to_owned().into_boxed_str()),
            "--schedule",
            Box::leak(schedule.to_owned().into_boxed_str()),
        ];
        if schedule == "fast" {
            args.push("--fast-betas");
            args.push("0.0001,0.01,0.1,0.35");
        }
        run_ok(&args);
        out
    };
    let e1 = enhance("enh_full_a", "full", "1");
    let e2 = enhance("enh_full_b", "full", "1");
    assert_eq!(snapshot(&e1), snapshot(&e2), "enhance must be byte-reproducible");
    let e3 = enhance("enh_full_jobs2", "full", "2");
    assert_eq!(snapshot(&e1), snapshot(&e3), "outputs must not depend on --jobs");
    let f1 = enhance("enh_fast_a", "fast", "1");
    let f2 = enhance("enh_fast_b", "fast", "1");
    assert_eq!(snapshot(&f1), snapshot(&f2), "fast enhance must be byte-reproducible");

    // Identical evaluate runs produce identical reports.
    let eval = |name: &str| -> Vec<u8> {
        let report = root.join(name);
        run_ok(&[
            "evaluate",
            "--manifest",
            c1.join("manifest.tsv").to_str().unwrap(),
            "--enhanced",
            e1.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ]);
        std::fs::read(&report).unwrap()
    };
    assert_eq!(eval("report_a.tsv"), eval("report_b.tsv"));

    // oracle-check output is stable per seed.
    let o1 = run_ok(&["oracle-check", "--seed", "13"]);
    let o2 = run_ok(&["oracle-check", "--seed", "13"]);
    assert_eq!(o1.stdout, o2.stdout);

    println!("ACCEPTANCE cli-determinism PASS — synth/train/enhance/evaluate byte-identical under fixed seed; enhance independent of --jobs");
}
