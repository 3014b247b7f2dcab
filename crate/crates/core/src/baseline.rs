//! TF-IDF features with a logistic-regression classifier, as a supervised
//! point of comparison for the tensor detector.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{audit, Provenance};
use crate::config::PipelineConfig;
use crate::corpus::{make_splits, Corpus, Label, TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{best_f1, f1_score, job_seed, roc_auc, Evaluation, FoldReport, Report, ScoreRow, REPORT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocab: Vocabulary,
    pub df: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
}

/// Sparse rows sorted by column.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub width: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

impl TfidfModel {
    /// Keeps the `cap` terms with the highest document frequency over the
    /// given documents (ties by term).
    pub fn fit(docs: &[(usize, &TokenSeq)], cap: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for (_, tokens) in docs {
            let uniq: BTreeSet<&str> = tokens.iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let n = docs.len();
        let vocab = Vocabulary::from_terms(
            ranked.iter().map(|r| r.0.to_string()).collect(),
            docs.iter().map(|d| d.0).collect(),
        )?;
        Ok(Self {
            df: ranked.iter().map(|r| r.1).collect(),
            idf: ranked.iter().map(|r| smoothed_idf(n, r.1)).collect(),
            vocab,
            n_docs: n,
        })
    }

    /// Raw `tf · idf` weights of one document before normalization.
    pub fn raw_row(&self, tokens: &TokenSeq) -> Vec<(usize, f64)> {
        let mut tf: HashMap<usize, f64> = HashMap::new();
        for t in tokens.iter() {
            if let Some(i) = self.vocab.get(t) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut row: Vec<(usize, f64)> = tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        row.sort_unstable_by_key(|e| e.0);
        row
    }

    /// L2-normalized TF-IDF rows; an empty document gives an empty row.
    pub fn transform(&self, docs: &[&TokenSeq]) -> Features {
        let rows = docs
            .par_iter()
            .map(|tokens| {
                let mut row = self.raw_row(tokens);
                let norm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|e| e.1 /= norm);
                }
                row
            })
            .collect();
        Features {
            width: self.vocab.len(),
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub options: LinearOptions,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], row: &[(usize, f64)]) -> f64 {
    row.iter().map(|&(j, x)| w[j] * x).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LinearModel {
    pub fn zeros(width: usize, options: LinearOptions) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
            options,
        }
    }

    /// Mean logistic loss plus `λ/2 · ‖w‖²`, with the gradient in `w` and in
    /// the bias.
    pub fn loss_and_gradient(&self, x: &Features, labels: &[bool]) -> (f64, Vec<f64>, f64) {
        let n = x.rows.len() as f64;
        let lambda = self.options.l2;
        let mut grad: Vec<f64> = self.weights.iter().map(|w| lambda * w).collect();
        let mut grad_b = 0.0;
        let mut loss = 0.5 * lambda * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (row, &y) in x.rows.iter().zip(labels) {
            let z = dot(&self.weights, row) + self.bias;
            let y = if y { 1.0 } else { 0.0 };
            loss += (softplus(z) - y * z) / n;
            let g = (sigmoid(z) - y) / n;
            for &(j, v) in row {
                grad[j] += g * v;
            }
            grad_b += g;
        }
        (loss, grad, grad_b)
    }
}

/// Logistic regression by seeded stochastic gradient descent.
pub fn train_linear(x: &Features, labels: &[bool], options: &LinearOptions) -> Result<LinearModel> {
    if x.rows.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass("logistic regression".into()));
    }
    let lr = options.learning_rate;
    let decay = 1.0 - lr * options.l2;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    // w = scale · v, so the L2 shrink of every step is one multiply
    let mut v = vec![0.0; x.width];
    let mut scale = 1.0;
    let mut bias = 0.0;
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = &x.rows[i];
            let z = scale * dot(&v, row) + bias;
            let g = sigmoid(z) - if labels[i] { 1.0 } else { 0.0 };
            scale *= decay;
            for &(j, val) in row {
                v[j] -= lr * g * val / scale;
            }
            bias -= lr * g;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
    }
    let weights: Vec<f64> = v.iter().map(|w| w * scale).collect();
    if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
        return Err(Error::Numerical("logistic regression diverged".into()));
    }
    Ok(LinearModel {
        weights,
        bias,
        options: options.clone(),
    })
}

/// Sigmoid of each row's margin.
pub fn predict_linear(model: &LinearModel, x: &Features) -> Result<Vec<f64>> {
    if x.width != model.weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "features have width {} but the model has {} weights",
            x.width,
            model.weights.len()
        )));
    }
    Ok(x.rows
        .iter()
        .map(|row| sigmoid(dot(&model.weights, row) + model.bias))
        .collect())
}

/// Cross-validated baseline on the same folds as the tensor pipeline.
pub fn baseline_cross_validate(corpus: &Corpus, config: &PipelineConfig, options: &LinearOptions) -> Result<Evaluation> {
    config.validate()?;
    let start = Instant::now();
    let tokens = corpus.tokenize(&config.tokenizer);
    let plan = make_splits(corpus, config.folds, config.seed)?;
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut provenance = Vec::new();
    for fold in 0..plan.k {
        let run = || -> Result<_> {
            let train: Vec<usize> = plan
                .train_ids(fold)
                .into_iter()
                .filter(|&id| corpus.docs()[id].label != Label::Unlabeled)
                .collect();
            let test = plan.test_ids(fold);
            let pairs: Vec<(usize, &TokenSeq)> = train.iter().map(|&id| (id, &tokens[id])).collect();
            let tfidf = TfidfModel::fit(&pairs, config.vocab_cap)?;
            let x_train = tfidf.transform(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let y_train: Vec<bool> = train.iter().map(|&id| corpus.docs()[id].label.is_positive()).collect();
            let opts = LinearOptions {
                seed: job_seed(options.seed, fold as u64, 0),
                ..options.clone()
            };
            let model = train_linear(&x_train, &y_train, &opts)?;
            let x_test = tfidf.transform(&test.iter().map(|&id| &tokens[id]).collect::<Vec<_>>());
            let s = predict_linear(&model, &x_test)?;
            Ok((train, test, tfidf.vocab.len(), s))
        };
        let (train, test, vocab_size, s) = run().map_err(|e| e.in_fold(fold))?;
        let labeled: Vec<usize> = (0..test.len())
            .filter(|&i| corpus.docs()[test[i]].label != Label::Unlabeled)
            .collect();
        let y: Vec<bool> = labeled.iter().map(|&i| corpus.docs()[test[i]].label.is_positive()).collect();
        let ls: Vec<f64> = labeled.iter().map(|&i| s[i]).collect();
        let pred: Vec<bool> = ls.iter().map(|&p| p > 0.5).collect();
        rows.push(FoldReport {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            n_tensor_docs: 0,
            vocab_size,
            rank: 0,
            cp_fit: f64::NAN,
            mean_train_error: f64::NAN,
            f1: f1_score(&pred, &y),
            f1_optimal: best_f1(&ls, &y),
            auc: roc_auc(&ls, &y).map_err(|e| e.in_fold(fold))?,
        });
        for (i, &doc_id) in test.iter().enumerate() {
            scores.push(ScoreRow {
                doc_id,
                fold,
                label: corpus.docs()[doc_id].label,
                recon_error: f64::NAN,
                score: s[i],
                predicted: s[i] > 0.5,
            });
        }
        provenance.push(Provenance {
            fold,
            test_ids: test,
            vocabulary: train.clone(),
            tensor: Vec::new(),
            cp_model: Vec::new(),
            detector: train,
            detector_exempt: false,
            allow_labeled_training: true,
        });
    }
    scores.sort_by_key(|r| r.doc_id);
    let mean_std = |f: fn(&FoldReport) -> f64| {
        let xs: Vec<f64> = rows.iter().map(f).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    };
    let (f1, f1_std) = mean_std(|r| r.f1);
    let (f1_optimal, f1_optimal_std) = mean_std(|r| r.f1_optimal);
    let (auc, auc_std) = mean_std(|r| r.auc);
    let report = Report {
        version: REPORT_VERSION,
        method: "tfidf_logistic (substitute baseline)".into(),
        config_fingerprint: crate::model::fingerprint_of(&(config.fingerprint(), options)),
        rank: None,
        detector: "logistic".into(),
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
        mean_train_error: None,
        per_fold: rows,
        audit: audit(corpus, &provenance),
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Evaluation {
        report,
        scores,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seq(words: &[&str]) -> TokenSeq {
        words.iter().copied().collect()
    }

    #[test]
    fn idf_formula() {
        let a = seq(&["xx", "xx", "xx", "yy"]);
        let b = seq(&["yy"]);
        let m = TfidfModel::fit(&[(0, &a), (1, &b)], 10).unwrap();
        let xx = m.vocab.get("xx").unwrap();
        let raw = m.raw_row(&a);
        let w = raw.iter().find(|e| e.0 == xx).unwrap().1;
        assert!((w - 3.0 * ((1.5f64).ln() + 1.0)).abs() < 1e-12);
        assert!((w - 4.2164).abs() < 1e-4);
        assert!(m.idf.iter().all(|&v| v > 0.0));
        let yy = m.vocab.get("yy").unwrap();
        assert_eq!(m.idf[yy], 1.0);
    }

    #[test]
    fn rows_are_unit_or_empty() {
        let a = seq(&["xx", "yy", "yy"]);
        let b = seq(&["zz"]);
        let empty = seq(&[]);
        let m = TfidfModel::fit(&[(0, &a), (1, &b)], 10).unwrap();
        let f = m.transform(&[&a, &b, &empty, &seq(&["unseen"])]);
        let norm = |r: &Vec<(usize, f64)>| r.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        assert!((norm(&f.rows[0]) - 1.0).abs() < 1e-12);
        assert_eq!(f.rows[1], vec![(m.vocab.get("zz").unwrap(), 1.0)]);
        assert!(f.rows[2].is_empty());
        assert!(f.rows[3].is_empty());
        // absent term contributes nothing
        assert!(f.rows[0].iter().all(|e| e.0 != m.vocab.get("zz").unwrap()));
    }

    fn toy_2d() -> (Features, Vec<bool>) {
        let pts = [(0.1, 0.9, false), (0.2, 0.8, false), (0.3, 0.95, false), (0.9, 0.1, true), (0.8, 0.3, true), (0.95, 0.2, true)];
        let rows = pts.iter().map(|p| vec![(0, p.0), (1, p.1)]).collect();
        (Features { width: 2, rows }, pts.iter().map(|p| p.2).collect())
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (x, y) = toy_2d();
        let m = train_linear(&x, &y, &LinearOptions::default()).unwrap();
        let s = predict_linear(&m, &x).unwrap();
        let pred: Vec<bool> = s.iter().map(|&p| p > 0.5).collect();
        assert_eq!(pred, y);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(m, train_linear(&x, &y, &LinearOptions::default()).unwrap());
    }

    #[test]
    fn single_class_and_width_errors() {
        let (x, _) = toy_2d();
        assert!(matches!(train_linear(&x, &[true; 6], &LinearOptions::default()), Err(Error::SingleClass(_))));
        let m = LinearModel::zeros(3, LinearOptions::default());
        assert!(matches!(predict_linear(&m, &x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let (x, _) = toy_2d();
        let m = LinearModel::zeros(2, LinearOptions::default());
        assert!(predict_linear(&m, &x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn margin_matches_hand_dot_product() {
        let m = LinearModel {
            weights: vec![0.5, -2.0, 1.5],
            bias: 0.25,
            options: LinearOptions::default(),
        };
        let x = Features {
            width: 3,
            rows: vec![vec![(0, 2.0), (1, 1.0), (2, 0.5)]],
        };
        // 0.5·2 − 2·1 + 1.5·0.5 + 0.25 = 0.0 → exactly one half; shift bias
        let p = predict_linear(&m, &x).unwrap()[0];
        assert_eq!(p, 0.5);
        let m2 = LinearModel { bias: 0.5, ..m };
        let p2 = predict_linear(&m2, &x).unwrap()[0];
        assert!((p2 - 1.0 / (1.0 + (-0.25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let width = 4;
        let rows: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|_| (0..width).map(|j| (j, rng.gen_range(-1.0..1.0))).collect())
            .collect();
        let x = Features { width, rows };
        let y = [true, false, true, true, false];
        let m = LinearModel {
            weights: (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            bias: 0.1,
            options: LinearOptions { l2: 0.3, ..Default::default() },
        };
        let (_, grad, grad_b) = m.loss_and_gradient(&x, &y);
        let h = 1e-5;
        for j in 0..=width {
            let shifted = |d: f64| {
                let mut p = m.clone();
                if j < width {
                    p.weights[j] += d;
                } else {
                    p.bias += d;
                }
                p.loss_and_gradient(&x, &y).0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = if j < width { grad[j] } else { grad_b };
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1e-3), "coord {j}: {fd} vs {g}");
        }
    }
}
