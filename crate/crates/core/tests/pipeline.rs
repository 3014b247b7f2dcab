use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gpten::cli::{self, MODEL_FILE, REPORT_FILE, SCORES_FILE, SWEEP_FILE};
use gpten::config::{HeadKind, PipelineConfig};
use gpten::corpus::{load_corpus, CorpusSchema};
use gpten::eval::{cross_validate, rank_sweep};
use gpten::synth::{synth_corpus, SynthOptions};
use gpten::Error;

fn small() -> SynthOptions {
    SynthOptions {
        n_human: 40,
        n_gpt: 10,
        seed: 4,
        ..SynthOptions::default()
    }
}

fn write_small(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.csv");
    cli::cmd_synth(&small(), &path).unwrap();
    path
}

fn config(input: PathBuf, output: PathBuf) -> PipelineConfig {
    PipelineConfig {
        input: Some(input),
        output: Some(output),
        folds: 2,
        rank: 4,
        deterministic: true,
        ..PipelineConfig::default()
    }
}

fn strip_runtime(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("runtime_seconds");
    v
}

#[test]
fn two_fold_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let out = dir.path().join("out");
    let report = cli::cmd_run(&config(input, out.clone())).unwrap();
    assert_eq!(report.per_fold.len(), 2);
    assert!(report.audit.passed);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    for key in ["f1", "auc", "version", "config_fingerprint", "per_fold", "runtime_seconds"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let scores = fs::read_to_string(out.join(SCORES_FILE)).unwrap();
    assert!(scores.starts_with(&format!("# fingerprint={}", report.config_fingerprint)));
    assert_eq!(scores.lines().count(), 2 + 50);
    assert!(out.join(MODEL_FILE).exists());
    let mean = |f: fn(&gpten::eval::FoldReport) -> f64| report.per_fold.iter().map(f).sum::<f64>() / 2.0;
    assert!((report.auc - mean(|r| r.auc)).abs() < 1e-12);
    assert!((report.f1 - mean(|r| r.f1)).abs() < 1e-12);
}

#[test]
fn reruns_are_identical_apart_from_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cli::cmd_run(&config(input.clone(), a.clone())).unwrap();
    cli::cmd_run(&config(input, b.clone())).unwrap();
    for f in [SCORES_FILE, MODEL_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ra = fs::read_to_string(a.join(REPORT_FILE)).unwrap();
    let rb = fs::read_to_string(b.join(REPORT_FILE)).unwrap();
    assert_eq!(strip_runtime(&ra), strip_runtime(&rb));
}

#[test]
fn parallel_and_sequential_agree() {
    let (corpus, _, _) = synth_corpus(&small()).unwrap();
    let seq = PipelineConfig {
        folds: 2,
        rank: 4,
        deterministic: true,
        ..PipelineConfig::default()
    };
    let par = PipelineConfig {
        deterministic: false,
        ..seq.clone()
    };
    let a = cross_validate(&corpus, &seq).unwrap();
    let b = cross_validate(&corpus, &par).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.report.per_fold, b.report.per_fold);
    assert_eq!(a.report.config_fingerprint, b.report.config_fingerprint);
}

#[test]
fn run_matches_staged_decompose_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let run_dir = dir.path().join("run");
    let staged_dir = dir.path().join("staged");
    let cfg = config(input.clone(), run_dir.clone());
    cli::cmd_run(&cfg).unwrap();
    let staged = PipelineConfig {
        output: Some(staged_dir.clone()),
        ..cfg.clone()
    };
    cli::cmd_decompose(&staged).unwrap();
    assert_eq!(
        fs::read(run_dir.join(MODEL_FILE)).unwrap(),
        fs::read(staged_dir.join(MODEL_FILE)).unwrap()
    );

    let out = dir.path().join("errors.csv");
    let rows = cli::cmd_score(
        &staged_dir.join(MODEL_FILE),
        Some(&staged_dir.join(cli::DETECTOR_FILE)),
        &input,
        &out,
        Some(&cfg),
    )
    .unwrap();
    let n = load_corpus(&input, &CorpusSchema::default()).unwrap().len();
    assert_eq!(rows.len(), n);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), n + 2);
    assert!(rows.iter().all(|r| r.recon_error.is_finite() && r.score.is_some()));
}

#[test]
fn scoring_rejects_foreign_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg_a = config(input.clone(), a.clone());
    let cfg_b = PipelineConfig {
        output: Some(b.clone()),
        window: 3,
        ..cfg_a.clone()
    };
    cli::cmd_decompose(&cfg_a).unwrap();
    cli::cmd_decompose(&cfg_b).unwrap();
    let out = dir.path().join("s.csv");
    let err = cli::cmd_score(&a.join(MODEL_FILE), None, &input, &out, Some(&cfg_b)).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch { .. }));
    let err = cli::cmd_score(&a.join(MODEL_FILE), Some(&b.join(cli::DETECTOR_FILE)), &input, &out, None).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch { .. }));
    assert!(cli::cmd_score(&a.join(MODEL_FILE), Some(&a.join(cli::DETECTOR_FILE)), &input, &out, None).is_ok());
}

#[test]
fn sweep_writes_one_row_per_rank() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let out = dir.path().join("sweep");
    let cfg = config(input, out.clone());
    let sweep = cli::cmd_sweep(&cfg, &[2, 4, 8, 16]).unwrap();
    assert_eq!(sweep.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![2, 4, 8, 16]);
    let csv = fs::read_to_string(out.join(SWEEP_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# fingerprint="));
    assert_eq!(lines[1], "rank,f1,auc,mean_train_error");
    assert_eq!(lines.len(), 2 + 4);
}

#[test]
fn sweep_rejects_unordered_or_oversized_ranks() {
    let (corpus, _, _) = synth_corpus(&small()).unwrap();
    let cfg = PipelineConfig {
        folds: 2,
        deterministic: true,
        ..PipelineConfig::default()
    };
    assert!(matches!(rank_sweep(&corpus, &[4, 2], &cfg), Err(Error::Config(_))));
    // 40 human documents, two folds: 20 per training tensor
    let err = rank_sweep(&corpus, &[2, 21], &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("exceeds"), "{err}");
}

#[test]
fn every_head_runs_end_to_end() {
    let (corpus, _, _) = synth_corpus(&small()).unwrap();
    for head in [HeadKind::Kde, HeadKind::Lof, HeadKind::Stump, HeadKind::BoostedStumps] {
        let cfg = PipelineConfig {
            folds: 2,
            rank: 4,
            detector: head,
            deterministic: true,
            ..PipelineConfig::default()
        };
        let eval = cross_validate(&corpus, &cfg).unwrap();
        assert!(eval.report.audit.passed, "{head:?}");
        assert!((0.0..=1.0).contains(&eval.report.auc));
    }
    let iforest = PipelineConfig {
        folds: 2,
        rank: 4,
        detector: HeadKind::IsolationForest,
        detector_options: gpten::detect::DetectorOptions {
            iforest_subsample: 16,
            ..Default::default()
        },
        ..PipelineConfig::default()
    };
    assert!(cross_validate(&corpus, &iforest).is_ok());
    let too_big = PipelineConfig {
        detector_options: Default::default(),
        ..iforest
    };
    let err = cross_validate(&corpus, &too_big).unwrap_err();
    assert!(matches!(err, Error::Fold { .. }));
}

#[test]
fn transductive_mode_is_flagged_in_audit() {
    let (corpus, _, _) = synth_corpus(&small()).unwrap();
    let cfg = PipelineConfig {
        folds: 2,
        rank: 4,
        fit_mode: gpten::config::FitMode::Transductive,
        ..PipelineConfig::default()
    };
    let eval = cross_validate(&corpus, &cfg).unwrap();
    assert!(eval.report.audit.passed);
    assert!(eval.report.audit.detector_exempt);
}

#[test]
fn baseline_shares_folds_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let out = dir.path().join("base");
    let report = cli::cmd_baseline(&config(input, out.clone()), &Default::default()).unwrap();
    assert!(report.method.contains("substitute baseline"));
    assert!(report.audit.passed);
    assert_eq!(report.per_fold.len(), 2);
    assert!(report.auc > 0.5);
    assert!(out.join(REPORT_FILE).exists());
}

#[test]
fn export_slices_writes_coo_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let out = dir.path().join("exp");
    let n = cli::cmd_export_slices(&config(input, out.clone())).unwrap();
    assert_eq!(n, 40);
    let slices = out.join("slices");
    let coo = fs::read_to_string(slices.join("slice_0.csv")).unwrap();
    assert!(coo.starts_with("i,j,count"));
    assert!(slices.join("slice_0.json").exists());
    assert!(slices.join("manifest.json").exists());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpten"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_small(dir.path());
    let out = dir.path().join("cli");
    let ok = bin()
        .args(["run", "--folds", "2", "--rank", "4", "--deterministic", "-i"])
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join(REPORT_FILE).exists());

    let config_err = bin().args(["run", "--folds", "1", "-i"]).arg(&input).output().unwrap();
    assert_eq!(config_err.status.code(), Some(2));

    let missing = bin()
        .args(["run", "-i"])
        .arg(dir.path().join("absent.csv"))
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.csv"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "text,label\nhello there,robot\n").unwrap();
    let data_err = bin().args(["run", "-i"]).arg(&bad).arg("-o").arg(&out).output().unwrap();
    assert_eq!(data_err.status.code(), Some(3));

    let empty_vocab = dir.path().join("short.csv");
    fs::write(&empty_vocab, "text,label\na b,human\nc d,human\ne f,gpt\ng h,gpt\n").unwrap();
    let degenerate = bin()
        .args(["run", "--folds", "2", "--rank", "1", "-i"])
        .arg(&empty_vocab)
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(degenerate.status.code(), Some(4));
}
