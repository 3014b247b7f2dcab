//! Metrics, cross-validated evaluation and the rank sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{audit, AuditReport, Provenance};
use crate::config::{FitMode, PipelineConfig};
use crate::corpus::{make_splits, Corpus, FoldPlan, Label, TokenSeq};
use crate::detect::{apply_threshold, fit_detector, fit_supervised, Detector, DetectorOptions, SupervisedHead};
use crate::error::{Error, Result};
use crate::model::GpTenModel;

/// Bumped whenever a field of [`Report`] or [`SweepReport`] changes meaning.
pub const REPORT_VERSION: u32 = 1;

/// Area under the ROC curve as the Mann–Whitney statistic. Tied scores
/// share their average rank, so a tied positive/negative pair counts ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("roc auc".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks are doubled so tie averages stay integral
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        pos_rank_sum2 += avg2 * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / 2.0 / (p * n) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in pred.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Harmonic mean of precision and recall; zero when both are zero.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

/// F1 of the positive class.
pub fn f1_score(pred: &[bool], labels: &[bool]) -> f64 {
    Confusion::from_predictions(pred, labels).f1()
}

/// Best F1 over every cut "score ≥ t" with `t` one of the observed scores.
pub fn best_f1(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let total_pos = labels.iter().filter(|&&l| l).count();
    let (mut tp, mut fp, mut best) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            tn: 0,
            fn_: total_pos - tp,
        };
        best = best.max(c.f1());
    }
    best
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one (fold, rank) job.
pub fn job_seed(seed: u64, fold: u64, rank: u64) -> u64 {
    splitmix(seed ^ splitmix(fold.wrapping_mul(0x1_0000_0001) ^ splitmix(rank)))
}

/// Fold index used for the model fitted on the whole corpus.
pub const FULL_FIT: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_tensor_docs: usize,
    pub vocab_size: usize,
    pub rank: usize,
    pub cp_fit: f64,
    pub mean_train_error: f64,
    pub f1: f64,
    pub f1_optimal: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub method: String,
    pub config_fingerprint: String,
    pub rank: Option<usize>,
    pub detector: String,
    pub contamination: f64,
    pub fit_mode: FitMode,
    pub folds: usize,
    pub n_documents: usize,
    pub n_human: usize,
    pub n_gpt: usize,
    /// F1 at the contamination threshold (or the head's own cut).
    pub f1: f64,
    pub f1_std: f64,
    /// F1 at the best threshold of each fold.
    pub f1_optimal: f64,
    pub f1_optimal_std: f64,
    pub auc: f64,
    pub auc_std: f64,
    pub mean_train_error: Option<f64>,
    pub per_fold: Vec<FoldReport>,
    pub audit: AuditReport,
    pub runtime_seconds: f64,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Out-of-fold score of one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub doc_id: usize,
    pub fold: usize,
    pub label: Label,
    pub recon_error: f64,
    pub score: f64,
    pub predicted: bool,
}

pub const SCORE_HEADER: &str = "doc_id,fold,label,recon_error,score,predicted";

pub fn scores_csv(fingerprint: &str, rows: &[ScoreRow]) -> String {
    let mut out = format!("# fingerprint={fingerprint}\n{SCORE_HEADER}\n");
    for r in rows {
        let label = match r.label {
            Label::Human => "human",
            Label::Gpt => "gpt",
            Label::Unlabeled => "",
        };
        out.push_str(&format!(
            "{},{},{},{:e},{:e},{}\n",
            r.doc_id, r.fold, label, r.recon_error, r.score, r.predicted as u8
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: Report,
    pub scores: Vec<ScoreRow>,
    pub provenance: Vec<Provenance>,
}

/// A fitted scoring head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Unsupervised { detector: Detector, contamination: f64 },
    Supervised { head: SupervisedHead },
}

impl Head {
    pub fn score(&self, errors: &[f64]) -> Vec<f64> {
        match self {
            Head::Unsupervised { detector, .. } => detector.score(errors),
            Head::Supervised { head } => head.score(errors),
        }
    }

    /// Binary decisions for a batch. Unsupervised heads flag the top
    /// contamination fraction of the batch.
    pub fn predict(&self, errors: &[f64]) -> Vec<bool> {
        match self {
            Head::Unsupervised {
                detector,
                contamination,
            } => apply_threshold(&detector.score(errors), *contamination),
            Head::Supervised { head } => head.predict(errors),
        }
    }
}

fn detector_options(config: &PipelineConfig, seed: u64) -> DetectorOptions {
    DetectorOptions {
        seed,
        ..config.detector_options.clone()
    }
}

/// Fits the configured head on labeled training errors. Unsupervised
/// heads only see the human ones.
pub fn fit_head(config: &PipelineConfig, errors: &[f64], labels: &[Label], seed: u64) -> Result<Head> {
    match (config.detector.unsupervised(), config.detector.supervised()) {
        (Some(kind), _) => {
            let human: Vec<f64> = errors
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == Label::Human)
                .map(|(&e, _)| e)
                .collect();
            Ok(Head::Unsupervised {
                detector: fit_detector(kind, &human, &detector_options(config, seed))?,
                contamination: config.contamination,
            })
        }
        (None, Some(kind)) => {
            let (x, y): (Vec<f64>, Vec<bool>) = errors
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l != Label::Unlabeled)
                .map(|(&e, &l)| (e, l == Label::Gpt))
                .unzip();
            Ok(Head::Supervised {
                head: fit_supervised(kind, &x, &y, config.boost_rounds)?,
            })
        }
        (None, None) => unreachable!("every head kind is supervised or not"),
    }
}

struct FoldOutcome {
    row: FoldReport,
    scores: Vec<ScoreRow>,
    provenance: Provenance,
}

fn pairs<'a>(ids: &[usize], tokens: &'a [TokenSeq]) -> Vec<(usize, &'a TokenSeq)> {
    ids.iter().map(|&id| (id, &tokens[id])).collect()
}

fn run_fold(
    corpus: &Corpus,
    tokens: &[TokenSeq],
    plan: &FoldPlan,
    fold: usize,
    rank: usize,
    config: &PipelineConfig,
) -> Result<FoldOutcome> {
    let train_ids = plan.train_ids(fold);
    let test_ids = plan.test_ids(fold);
    let seed = job_seed(config.seed, fold as u64, rank as u64);
    let settings = config.model_settings(rank, seed);
    let model = GpTenModel::fit(corpus, tokens, &train_ids, &settings, &config.fingerprint())?;

    let tensor_errors = model.score(&pairs(&model.tensor_doc_ids, tokens), config.normalize)?;
    let test_errors = model.score(&pairs(&test_ids, tokens), config.normalize)?;
    let test_labels: Vec<Label> = test_ids.iter().map(|&id| corpus.docs()[id].label).collect();

    let supervised = config.detector.supervised().is_some();
    let (head, detector_ids) = if supervised {
        let labeled: Vec<usize> = train_ids
            .iter()
            .copied()
            .filter(|&id| corpus.docs()[id].label != Label::Unlabeled)
            .collect();
        let errs = model.score(&pairs(&labeled, tokens), config.normalize)?;
        let labels: Vec<Label> = labeled.iter().map(|&id| corpus.docs()[id].label).collect();
        (fit_head(config, &errs.errors, &labels, seed)?, labeled)
    } else if config.fit_mode == FitMode::Transductive {
        // test labels are hidden from the head
        let blind = vec![Label::Human; test_ids.len()];
        (fit_head(config, &test_errors.errors, &blind, seed)?, test_ids.clone())
    } else {
        let labels = vec![Label::Human; tensor_errors.len()];
        (
            fit_head(config, &tensor_errors.errors, &labels, seed)?,
            model.tensor_doc_ids.clone(),
        )
    };

    let scores = head.score(&test_errors.errors);
    let predicted = head.predict(&test_errors.errors);

    let labeled: Vec<usize> = (0..test_ids.len())
        .filter(|&i| test_labels[i] != Label::Unlabeled)
        .collect();
    let y: Vec<bool> = labeled.iter().map(|&i| test_labels[i] == Label::Gpt).collect();
    let s: Vec<f64> = labeled.iter().map(|&i| scores[i]).collect();
    let p: Vec<bool> = labeled.iter().map(|&i| predicted[i]).collect();

    let row = FoldReport {
        fold,
        n_train: train_ids.len(),
        n_test: test_ids.len(),
        n_tensor_docs: model.tensor_doc_ids.len(),
        vocab_size: model.vocab.len(),
        rank: model.cp.rank(),
        cp_fit: model.cp.fit,
        mean_train_error: tensor_errors.mean(),
        f1: f1_score(&p, &y),
        f1_optimal: best_f1(&s, &y),
        auc: roc_auc(&s, &y)?,
    };
    let rows = test_ids
        .iter()
        .enumerate()
        .map(|(i, &doc_id)| ScoreRow {
            doc_id,
            fold,
            label: test_labels[i],
            recon_error: test_errors.errors[i],
            score: scores[i],
            predicted: predicted[i],
        })
        .collect();
    let provenance = Provenance {
        fold,
        test_ids,
        vocabulary: model.vocab.source_doc_ids().to_vec(),
        tensor: model.tensor_doc_ids.clone(),
        cp_model: model.tensor_doc_ids.clone(),
        detector: detector_ids,
        detector_exempt: supervised || config.fit_mode == FitMode::Transductive,
        allow_labeled_training: false,
    };
    Ok(FoldOutcome {
        row,
        scores: rows,
        provenance,
    })
}

/// Runs every fold of `plan` at `rank`.
pub fn cross_validate_with_plan(
    corpus: &Corpus,
    tokens: &[TokenSeq],
    plan: &FoldPlan,
    rank: usize,
    config: &PipelineConfig,
) -> Result<Evaluation> {
    let start = Instant::now();
    let job = |fold: usize| run_fold(corpus, tokens, plan, fold, rank, config).map_err(|e| e.in_fold(fold));
    let outcomes: Vec<FoldOutcome> = if config.deterministic {
        (0..plan.k).map(job).collect::<Result<_>>()?
    } else {
        (0..plan.k).into_par_iter().map(job).collect::<Result<_>>()?
    };

    let rows: Vec<FoldReport> = outcomes.iter().map(|o| o.row.clone()).collect();
    let provenance: Vec<Provenance> = outcomes.iter().map(|o| o.provenance.clone()).collect();
    let mut scores: Vec<ScoreRow> = outcomes.into_iter().flat_map(|o| o.scores).collect();
    scores.sort_by_key(|r| r.doc_id);

    let audit = audit(corpus, &provenance);
    if !audit.passed {
        log::error!("hygiene audit failed with {} violations", audit.violations.len());
    }
    let col = |f: fn(&FoldReport) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
    let (f1, f1_std) = col(|r| r.f1);
    let (f1_optimal, f1_optimal_std) = col(|r| r.f1_optimal);
    let (auc, auc_std) = col(|r| r.auc);
    let (mean_train_error, _) = col(|r| r.mean_train_error);
    let config_fingerprint = PipelineConfig {
        rank,
        ..config.clone()
    }
    .fingerprint();
    let report = Report {
        version: REPORT_VERSION,
        method: "gpten".into(),
        config_fingerprint,
        rank: Some(rank),
        detector: config.detector.name().into(),
        contamination: config.contamination,
        fit_mode: config.fit_mode,
        folds: plan.k,
        n_documents: corpus.len(),
        n_human: corpus.n_human(),
        n_gpt: corpus.n_gpt(),
        f1,
        f1_std,
        f1_optimal,
        f1_optimal_std,
        auc,
        auc_std,
        mean_train_error: Some(mean_train_error),
        per_fold: rows,
        audit,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Evaluation {
        report,
        scores,
        provenance,
    })
}

/// Tokenizes, splits and evaluates at the configured rank.
pub fn cross_validate(corpus: &Corpus, config: &PipelineConfig) -> Result<Evaluation> {
    config.validate()?;
    let tokens = corpus.tokenize(&config.tokenizer);
    let plan = make_splits(corpus, config.folds, config.seed)?;
    cross_validate_with_plan(corpus, &tokens, &plan, config.rank, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub f1: f64,
    pub f1_optimal: f64,
    pub auc: f64,
    pub mean_train_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    /// Fingerprint of the shared configuration with the rank field zeroed.
    pub config_fingerprint: String,
    pub detector: String,
    pub folds: usize,
    pub rows: Vec<SweepRow>,
    pub runtime_seconds: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# fingerprint={}\nrank,f1,auc,mean_train_error\n",
            self.config_fingerprint
        );
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.rank, r.f1, r.auc, r.mean_train_error));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cross-validates every rank of `ranks` on one shared fold plan.
pub fn rank_sweep(corpus: &Corpus, ranks: &[usize], config: &PipelineConfig) -> Result<SweepReport> {
    config.validate()?;
    if ranks.is_empty() {
        return Err(Error::Config("rank ladder is empty".into()));
    }
    if ranks.windows(2).any(|w| w[0] >= w[1]) || ranks[0] == 0 {
        return Err(Error::Config(format!("ranks must be positive and strictly increasing: {ranks:?}")));
    }
    let start = Instant::now();
    let tokens = corpus.tokenize(&config.tokenizer);
    let plan = make_splits(corpus, config.folds, config.seed)?;
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let eval = cross_validate_with_plan(corpus, &tokens, &plan, rank, config)?;
        let r = &eval.report;
        log::info!("rank {rank}: auc {:.4} f1 {:.4}", r.auc, r.f1);
        rows.push(SweepRow {
            rank,
            f1: r.f1,
            f1_optimal: r.f1_optimal,
            auc: r.auc,
            mean_train_error: r.mean_train_error.unwrap_or(f64::NAN),
        });
    }
    Ok(SweepReport {
        version: REPORT_VERSION,
        config_fingerprint: PipelineConfig { rank: 0, ..config.clone() }.fingerprint(),
        detector: config.detector.name().into(),
        folds: plan.k,
        rows,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        let s = [0.8, 0.4, 0.6, 0.2];
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(brute_auc(&s, &l), 0.75);
        assert!(matches!(roc_auc(&[1.0, 2.0], &[true, true]), Err(Error::SingleClass(_))));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_count(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..50),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_transform_and_flip(
            data in prop::collection::vec((-50.0f64..50.0, any::<bool>()), 2..40),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
            let auc = roc_auc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (s / 7.0).exp() + 3.0).collect();
            prop_assert_eq!(roc_auc(&t, &labels).unwrap(), auc);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&neg, &labels).unwrap() + auc - 1.0).abs() < 1e-12);
        }

        #[test]
        fn f1_is_permutation_invariant(
            data in prop::collection::vec((any::<bool>(), any::<bool>()), 0..30),
            rot in 0usize..30,
        ) {
            let (p, l): (Vec<bool>, Vec<bool>) = data.iter().cloned().unzip();
            let f = f1_score(&p, &l);
            let k = if data.is_empty() { 0 } else { rot % data.len() };
            let (mut p2, mut l2) = (p.clone(), l.clone());
            p2.rotate_left(k);
            l2.rotate_left(k);
            prop_assert_eq!(f1_score(&p2, &l2), f);
        }
    }

    #[test]
    fn f1_examples() {
        let l = [true, false, true, false];
        assert_eq!(f1_score(&l, &l), 1.0);
        assert_eq!(f1_score(&[false; 4], &l), 0.0);
        // TP=2, FP=1, FN=1
        let pred = [true, true, true, false, false];
        let lab = [true, true, false, true, false];
        assert!((f1_score(&pred, &lab) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn best_f1_scans_every_cut() {
        let s = [0.9, 0.8, 0.7, 0.1];
        let l = [true, false, true, false];
        // cuts: {0.9}: 2/3, {0.9,0.8}: 1/2, {..0.7}: 4/5, all: 2/3
        assert!((best_f1(&s, &l) - 0.8).abs() < 1e-12);
        assert_eq!(best_f1(&[1.0, 1.0], &[true, false]), 2.0 / 3.0);
    }

    #[test]
    fn job_seeds_differ() {
        let a = job_seed(1, 0, 16);
        assert_eq!(a, job_seed(1, 0, 16));
        assert_ne!(a, job_seed(1, 1, 16));
        assert_ne!(a, job_seed(1, 0, 8));
        assert_ne!(a, job_seed(2, 0, 16));
    }
}
