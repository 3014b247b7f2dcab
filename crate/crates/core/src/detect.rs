//! Anomaly heads over the one-dimensional reconstruction-error feature.
//!
//! Every unsupervised detector is fitted on a training sample and scores new
//! values so that a higher score means more anomalous.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Kde,
    Lof,
    #[serde(rename = "iforest")]
    IsolationForest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorOptions {
    pub lof_neighbors: usize,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
    pub seed: u64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self {
            lof_neighbors: 20,
            iforest_trees: 100,
            iforest_subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    Kde(Kde),
    Lof(Lof),
    #[serde(rename = "iforest")]
    IsolationForest(IsolationForest),
}

pub fn fit_detector(kind: DetectorKind, train: &[f64], opts: &DetectorOptions) -> Result<Detector> {
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("training errors must be finite".into()));
    }
    Ok(match kind {
        DetectorKind::Kde => Detector::Kde(Kde::fit(train)?),
        DetectorKind::Lof => Detector::Lof(Lof::fit(train, opts.lof_neighbors)?),
        DetectorKind::IsolationForest => Detector::IsolationForest(IsolationForest::fit(
            train,
            opts.iforest_trees,
            opts.iforest_subsample,
            opts.seed,
        )?),
    })
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Kde(_) => DetectorKind::Kde,
            Detector::Lof(_) => DetectorKind::Lof,
            Detector::IsolationForest(_) => DetectorKind::IsolationForest,
        }
    }

    pub fn score_one(&self, x: f64) -> f64 {
        match self {
            Detector::Kde(d) => d.score(x),
            Detector::Lof(d) => d.score(x),
            Detector::IsolationForest(d) => d.score(x),
        }
    }

    pub fn score(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&x| self.score_one(x)).collect()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Silverman's rule of thumb, `1.06 · σ̂ · n^(−1/5)`.
pub fn silverman_bandwidth(std: f64, n: usize) -> f64 {
    1.06 * std * (n as f64).powf(-0.2)
}

/// Gaussian kernel density estimate; score is `−log f̂(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub sample: Vec<f64>,
}

impl Kde {
    pub fn fit(train: &[f64]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::InsufficientSample(format!(
                "kde needs at least 2 values, got {}",
                train.len()
            )));
        }
        let mut sample = train.to_vec();
        sample.sort_by(f64::total_cmp);
        let (mean, std) = mean_std(&sample);
        let mut bandwidth = silverman_bandwidth(std, sample.len());
        if !(bandwidth > 0.0) {
            bandwidth = 1e-6 * mean.abs().max(1.0);
            log::warn!("kde: training sample has zero spread, using bandwidth {bandwidth:e}");
        }
        Ok(Self { bandwidth, sample })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let exps: Vec<f64> = self
            .sample
            .iter()
            .map(|xi| -0.5 * ((x - xi) / h).powi(2))
            .collect();
        let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
        lse - (self.sample.len() as f64 * h * (2.0 * PI).sqrt()).ln()
    }

    pub fn score(&self, x: f64) -> f64 {
        -self.log_density(x)
    }
}

/// Local outlier factor on a sorted 1-D sample. Queries are scored against
/// the training points (novelty mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lof {
    pub k: usize,
    pub sample: Vec<f64>,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
}

/// Indices of the `k` nearest sorted-sample points to `x`, expanding outward
/// from insertion position `pos`. `skip` excludes one index (the point
/// itself). Equal distances take the left neighbour first.
fn nearest(sorted: &[f64], x: f64, pos: usize, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut left = pos as isize - 1;
    let mut right = pos;
    while out.len() < k {
        if Some(right) == skip {
            right += 1;
            continue;
        }
        if left >= 0 && Some(left as usize) == skip {
            left -= 1;
            continue;
        }
        let dl = (left >= 0).then(|| x - sorted[left as usize]);
        let dr = (right < sorted.len()).then(|| sorted[right] - x);
        match (dl, dr) {
            (Some(l), Some(r)) if l <= r => {
                out.push(left as usize);
                left -= 1;
            }
            (Some(_), Some(_)) | (None, Some(_)) => {
                out.push(right);
                right += 1;
            }
            (Some(_), None) => {
                out.push(left as usize);
                left -= 1;
            }
            (None, None) => break,
        }
    }
    out
}

const LRD_EPS: f64 = 1e-10;

impl Lof {
    pub fn fit(train: &[f64], k: usize) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::InsufficientSample(format!(
                "lof needs at least 2 values, got {}",
                train.len()
            )));
        }
        if k == 0 {
            return Err(Error::Config("lof needs at least one neighbour".into()));
        }
        let mut sample = train.to_vec();
        sample.sort_by(f64::total_cmp);
        let n = sample.len();
        let k = k.min(n - 1);
        let neighbours: Vec<Vec<usize>> = (0..n)
            .map(|i| nearest(&sample, sample[i], i, k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = (0..n)
            .map(|i| (sample[*neighbours[i].last().unwrap()] - sample[i]).abs())
            .collect();
        let lrd = (0..n)
            .map(|i| {
                let reach: f64 = neighbours[i]
                    .iter()
                    .map(|&o| k_distance[o].max((sample[i] - sample[o]).abs()))
                    .sum();
                1.0 / (reach / k as f64 + LRD_EPS)
            })
            .collect();
        Ok(Self {
            k,
            sample,
            k_distance,
            lrd,
        })
    }

    pub fn score(&self, x: f64) -> f64 {
        let pos = self.sample.partition_point(|&s| s < x);
        let nbrs = nearest(&self.sample, x, pos, self.k, None);
        let reach: f64 = nbrs
            .iter()
            .map(|&o| self.k_distance[o].max((x - self.sample[o]).abs()))
            .sum();
        let lrd_x = 1.0 / (reach / self.k as f64 + LRD_EPS);
        let mean_lrd: f64 = nbrs.iter().map(|&o| self.lrd[o]).sum::<f64>() / self.k as f64;
        mean_lrd / lrd_x
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points, with `H(i) ≈ ln i + γ`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { size: usize },
    Split { threshold: f64, left: usize, right: usize },
}

/// One isolation tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<TreeNode>,
}

impl IsolationTree {
    fn grow(values: &mut [f64], height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.grow_node(values, 0, height_limit, rng);
        tree
    }

    fn grow_node(&mut self, values: &mut [f64], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if depth >= limit || values.len() <= 1 || min >= max {
            self.nodes.push(TreeNode::Leaf { size: values.len() });
            return id;
        }
        let threshold = rng.gen_range(min..max);
        self.nodes.push(TreeNode::Leaf { size: 0 });
        values.sort_by(f64::total_cmp);
        let split = values.partition_point(|&v| v < threshold);
        let (lo, hi) = values.split_at_mut(split);
        let left = self.grow_node(lo, depth + 1, limit, rng);
        let right = self.grow_node(hi, depth + 1, limit, rng);
        self.nodes[id] = TreeNode::Split {
            threshold,
            left,
            right,
        };
        id
    }

    pub fn path_length(&self, x: f64) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                TreeNode::Leaf { size } => return depth + average_path_length(size),
                TreeNode::Split {
                    threshold,
                    left,
                    right,
                } => {
                    node = if x < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub subsample: usize,
    pub seed: u64,
    pub trees: Vec<IsolationTree>,
}

impl IsolationForest {
    pub fn fit(train: &[f64], n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        if subsample < 2 || n_trees == 0 {
            return Err(Error::Config("isolation forest needs ≥1 tree and subsample ≥2".into()));
        }
        if train.len() < subsample {
            return Err(Error::InsufficientSample(format!(
                "isolation forest subsample is {subsample} but only {} values",
                train.len()
            )));
        }
        let limit = (subsample as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..n_trees)
            .map(|_| {
                let mut values: Vec<f64> = sample_indices(&mut rng, train.len(), subsample)
                    .into_iter()
                    .map(|i| train[i])
                    .collect();
                IsolationTree::grow(&mut values, limit, &mut rng)
            })
            .collect();
        Ok(Self {
            subsample,
            seed,
            trees,
        })
    }

    /// `2^(−E[h(x)] / c(ψ))`.
    pub fn score(&self, x: f64) -> f64 {
        let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean / average_path_length(self.subsample))
    }
}

/// Flags the `⌈contamination · n⌉` highest scores; ties go to the lower index.
pub fn apply_threshold(scores: &[f64], contamination: f64) -> Vec<bool> {
    let n = scores.len();
    let raw = contamination.clamp(0.0, 1.0) * n as f64;
    // 0.3·10 is 3.0000000000000004 in binary; snap near-integers first
    let count = if (raw - raw.round()).abs() < 1e-9 {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut flags = vec![false; n];
    for &i in order.iter().take(count) {
        flags[i] = true;
    }
    flags
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedKind {
    Stump,
    BoostedStumps,
}

/// Supervised head over the single error feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupervisedHead {
    /// Values `≥ threshold` fall in the right leaf; each leaf predicts its
    /// training positive fraction.
    Stump {
        threshold: f64,
        left_value: f64,
        right_value: f64,
    },
    /// Discrete AdaBoost: `Σ α · polarity · sign(x ≥ threshold)`.
    BoostedStumps { rounds: Vec<BoostRound> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub threshold: f64,
    /// +1 predicts positive at or above the threshold, −1 below it.
    pub polarity: f64,
    pub alpha: f64,
}

fn check_labels(errors: &[f64], labels: &[bool]) -> Result<()> {
    if errors.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} errors but {} labels",
            errors.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::SingleClass("supervised head".into()));
    }
    Ok(())
}

/// Midpoints between consecutive distinct sorted values.
fn candidate_thresholds(sorted: &[f64]) -> Vec<f64> {
    sorted
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| w[0] + (w[1] - w[0]) / 2.0)
        .collect()
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

pub fn fit_supervised(kind: SupervisedKind, errors: &[f64], labels: &[bool], rounds: usize) -> Result<SupervisedHead> {
    check_labels(errors, labels)?;
    match kind {
        SupervisedKind::Stump => Ok(fit_stump(errors, labels)),
        SupervisedKind::BoostedStumps => Ok(fit_boosted(errors, labels, rounds.max(1))),
    }
}

fn fit_stump(errors: &[f64], labels: &[bool]) -> SupervisedHead {
    let mut pairs: Vec<(f64, bool)> = errors.iter().cloned().zip(labels.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len() as f64;
    let total_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();

    let mut best: Option<(f64, f64)> = None;
    for t in candidate_thresholds(&sorted) {
        let split = sorted.partition_point(|&v| v < t);
        let left_pos = pairs[..split].iter().filter(|p| p.1).count() as f64;
        let nl = split as f64;
        let impurity = (nl * gini(left_pos, nl) + (n - nl) * gini(total_pos - left_pos, n - nl)) / n;
        if best.map_or(true, |(_, b)| impurity < b) {
            best = Some((t, impurity));
        }
    }
    let threshold = best.map_or(sorted[0], |b| b.0);
    let split = sorted.partition_point(|&v| v < threshold);
    let left_pos = pairs[..split].iter().filter(|p| p.1).count() as f64;
    let frac = |pos: f64, total: f64| if total > 0.0 { pos / total } else { total_pos / n };
    SupervisedHead::Stump {
        threshold,
        left_value: frac(left_pos, split as f64),
        right_value: frac(total_pos - left_pos, n - split as f64),
    }
}

fn fit_boosted(errors: &[f64], labels: &[bool], rounds: usize) -> SupervisedHead {
    let n = errors.len();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut w = vec![1.0 / n as f64; n];
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = candidate_thresholds(&sorted);
    // a threshold below every value lets a round predict one class everywhere
    candidates.insert(0, sorted[0]);
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut best = (0.0, 1.0, f64::INFINITY);
        for &t in &candidates {
            // weighted error of "positive iff x ≥ t"
            let err: f64 = (0..n)
                .filter(|&i| (errors[i] >= t) != (y[i] > 0.0))
                .map(|i| w[i])
                .sum();
            for (polarity, e) in [(1.0, err), (-1.0, 1.0 - err)] {
                if e < best.2 {
                    best = (t, polarity, e);
                }
            }
        }
        let (threshold, polarity, err) = best;
        let err = err.clamp(1e-10, 1.0 - 1e-10);
        let alpha = 0.5 * ((1.0 - err) / err).ln();
        let mut total = 0.0;
        for i in 0..n {
            let h = stump_vote(errors[i], threshold, polarity);
            w[i] *= (-alpha * y[i] * h).exp();
            total += w[i];
        }
        w.iter_mut().for_each(|v| *v /= total);
        out.push(BoostRound {
            threshold,
            polarity,
            alpha,
        });
        if err <= 1e-10 {
            break;
        }
    }
    SupervisedHead::BoostedStumps { rounds: out }
}

fn stump_vote(x: f64, threshold: f64, polarity: f64) -> f64 {
    if x >= threshold {
        polarity
    } else {
        -polarity
    }
}

impl SupervisedHead {
    /// Higher means more likely positive.
    pub fn score_one(&self, x: f64) -> f64 {
        match self {
            SupervisedHead::Stump {
                threshold,
                left_value,
                right_value,
            } => {
                if x >= *threshold {
                    *right_value
                } else {
                    *left_value
                }
            }
            SupervisedHead::BoostedStumps { rounds } => rounds
                .iter()
                .map(|r| r.alpha * stump_vote(x, r.threshold, r.polarity))
                .sum(),
        }
    }

    pub fn score(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&x| self.score_one(x)).collect()
    }

    pub fn predict(&self, values: &[f64]) -> Vec<bool> {
        let cut = match self {
            SupervisedHead::Stump { .. } => 0.5,
            SupervisedHead::BoostedStumps { .. } => 0.0,
        };
        self.score(values).into_iter().map(|s| s > cut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn silverman_for_unit_spread() {
        assert!((silverman_bandwidth(1.0, 100) - 0.42199).abs() < 5e-6);
        // sample with σ̂ = 1 exactly: ±c repeated so the ddof=1 variance is 1
        let c = (99.0f64 / 100.0).sqrt();
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { c } else { -c }).collect();
        let kde = Kde::fit(&xs).unwrap();
        assert!((kde.bandwidth - 1.06 * 100f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_kde_falls_back() {
        let kde = Kde::fit(&[0.0; 10]).unwrap();
        assert_eq!(kde.bandwidth, 1e-6);
        assert!(kde.score(0.0) < kde.score(100.0));
        assert!(kde.score(100.0).is_finite());
        let far = Kde::fit(&[5e6; 4]).unwrap();
        assert!((far.bandwidth - 5.0).abs() < 1e-9);
    }

    #[test]
    fn kde_matches_hand_summed_mixture() {
        let sample = [0.5, 1.5, 4.0];
        let kde = Kde::fit(&sample).unwrap();
        let h = kde.bandwidth;
        for x in [0.0, 1.0, 2.7, 9.0] {
            let density: f64 = sample
                .iter()
                .map(|xi| (-(x - xi) * (x - xi) / (2.0 * h * h)).exp() / (h * (2.0 * PI).sqrt()))
                .sum::<f64>()
                / 3.0;
            assert!((kde.score(x) + density.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn insufficient_samples() {
        assert!(matches!(Kde::fit(&[1.0]), Err(Error::InsufficientSample(_))));
        assert!(Lof::fit(&[1.0], 5).is_err());
        assert!(matches!(
            IsolationForest::fit(&[1.0; 10], 10, 256, 0),
            Err(Error::InsufficientSample(_))
        ));
    }

    #[test]
    fn average_path_length_against_harmonic_sum() {
        let approx = average_path_length(256);
        let expected = 2.0 * ((255f64).ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((approx - expected).abs() < 1e-12);
        assert!((approx - 10.244_770_9).abs() < 1e-6);
        let exact_h: f64 = (1..=255).map(|i| 1.0 / i as f64).sum();
        let exact = 2.0 * exact_h - 2.0 * 255.0 / 256.0;
        // ln i + γ underestimates H(i) by about 1/(2i)
        assert!((exact - approx - 2.0 / (2.0 * 255.0)).abs() < 1e-4);
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
    }

    fn cluster_with_outlier() -> Vec<f64> {
        // bell-shaped cluster: mean of four uniforms
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..300)
            .map(|_| (0..4).map(|_| rng.gen::<f64>() - 0.5).sum::<f64>())
            .collect()
    }

    #[test]
    fn every_detector_ranks_the_far_point_highest() {
        let train = cluster_with_outlier();
        let opts = DetectorOptions::default();
        for kind in [DetectorKind::Kde, DetectorKind::Lof, DetectorKind::IsolationForest] {
            let d = fit_detector(kind, &train, &opts).unwrap();
            let s = d.score(&[0.0, 0.5, 25.0]);
            assert!(s[0] < s[1], "{kind:?}: {s:?}");
            assert!(s.iter().all(|v| v.is_finite()), "{kind:?}");
            assert!(s[2] > s[0] && s[2] > s[1], "{kind:?}: {s:?}");
            let train_scores = d.score(&train);
            assert!(train_scores.iter().all(|v| v.is_finite()));
            assert_eq!(d.score(&[0.3, 0.3]), vec![d.score_one(0.3); 2]);
        }
    }

    #[test]
    fn lof_matches_brute_force_definition() {
        let train = [0.0, 0.1, 0.3, 0.35, 1.0, 1.1, 3.0];
        let k = 2;
        let lof = Lof::fit(&train, k).unwrap();
        // brute force over all points; distinct distances so no tie questions
        let knn = |x: f64, exclude: Option<usize>| {
            let mut d: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != exclude)
                .map(|(i, &y)| ((x - y).abs(), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            d.truncate(k);
            d
        };
        let kdist: Vec<f64> = (0..train.len()).map(|i| knn(train[i], Some(i))[k - 1].0).collect();
        let lrd = |x: f64, exclude: Option<usize>| {
            let n = knn(x, exclude);
            let reach: f64 = n.iter().map(|&(d, o)| d.max(kdist[o])).sum();
            1.0 / (reach / k as f64 + 1e-10)
        };
        let lrds: Vec<f64> = (0..train.len()).map(|i| lrd(train[i], Some(i))).collect();
        for q in [0.2, 0.7, 2.0, 5.0] {
            let n = knn(q, None);
            let expected = n.iter().map(|&(_, o)| lrds[o]).sum::<f64>() / k as f64 / lrd(q, None);
            assert!((lof.score(q) - expected).abs() < 1e-9 * expected, "q={q}");
        }
    }

    #[test]
    fn iforest_is_seeded() {
        let train = cluster_with_outlier();
        let a = IsolationForest::fit(&train, 20, 64, 5).unwrap();
        assert_eq!(a, IsolationForest::fit(&train, 20, 64, 5).unwrap());
        assert_ne!(a, IsolationForest::fit(&train, 20, 64, 6).unwrap());
        let s = a.score(0.0);
        assert!(s > 0.0 && s < 1.0);
    }

    proptest! {
        #[test]
        fn kde_and_lof_ignore_training_order(mut xs in prop::collection::vec(-5.0f64..5.0, 3..40), q in -8.0f64..8.0) {
            let kde = Kde::fit(&xs).unwrap().score(q);
            let lof = Lof::fit(&xs, 3).unwrap().score(q);
            xs.reverse();
            prop_assert_eq!(Kde::fit(&xs).unwrap().score(q), kde);
            prop_assert_eq!(Lof::fit(&xs, 3).unwrap().score(q), lof);
        }
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        let flags = apply_threshold(&scores, 0.1);
        assert_eq!(flags.iter().filter(|&&f| f).count(), 1);
        assert!(flags[9]);
        assert!(apply_threshold(&scores, 0.0).iter().all(|&f| !f));
        assert_eq!(apply_threshold(&[5.0, 5.0, 1.0], 1.0 / 3.0), vec![true, false, false]);
        assert_eq!(apply_threshold(&scores, 0.3).iter().filter(|&&f| f).count(), 3);
        assert_eq!(apply_threshold(&scores, 0.25).iter().filter(|&&f| f).count(), 3);
    }

    proptest! {
        #[test]
        fn threshold_count_and_rank_invariance(scores in prop::collection::vec(-100.0f64..100.0, 1..60), c in 0.0f64..1.0) {
            let flags = apply_threshold(&scores, c);
            let raw = c * scores.len() as f64;
            let expected = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() } as usize;
            prop_assert_eq!(flags.iter().filter(|&&f| f).count(), expected);
            let transformed: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp()).collect();
            prop_assert_eq!(apply_threshold(&transformed, c), flags);
        }
    }

    #[test]
    fn stump_separable_case() {
        let head = fit_supervised(SupervisedKind::Stump, &[1.0, 2.0, 8.0, 9.0], &[false, false, true, true], 0).unwrap();
        match &head {
            SupervisedHead::Stump { threshold, .. } => assert!(*threshold > 2.0 && *threshold <= 8.0),
            _ => unreachable!(),
        }
        assert_eq!(head.predict(&[1.0, 2.0, 8.0, 9.0]), vec![false, false, true, true]);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            fit_supervised(SupervisedKind::Stump, &[1.0, 2.0], &[true, true], 0),
            Err(Error::SingleClass(_))
        ));
    }

    proptest! {
        #[test]
        fn stump_fits_any_separable_sample(
            mut xs in prop::collection::vec(0.0f64..100.0, 2..40),
            cut_frac in 0.05f64..0.95,
            flip: bool,
        ) {
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            prop_assume!(xs.len() >= 2);
            let cut = ((xs.len() as f64 * cut_frac) as usize).clamp(1, xs.len() - 1);
            let labels: Vec<bool> = (0..xs.len()).map(|i| (i >= cut) != flip).collect();
            // exhaustive oracle: some threshold separates the classes perfectly
            let separable = (1..xs.len()).any(|c| (0..xs.len()).all(|i| ((i >= c) != flip) == labels[i]));
            prop_assert!(separable);
            let head = fit_supervised(SupervisedKind::Stump, &xs, &labels, 0).unwrap();
            prop_assert_eq!(head.predict(&xs), labels.clone());
            let boosted = fit_supervised(SupervisedKind::BoostedStumps, &xs, &labels, 50).unwrap();
            prop_assert_eq!(boosted.predict(&xs), labels);
        }
    }

    #[test]
    fn boosting_handles_two_intervals() {
        // positives in the middle need more than one stump
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let labels: Vec<bool> = (0..30).map(|i| (10..20).contains(&i)).collect();
        let head = fit_supervised(SupervisedKind::BoostedStumps, &xs, &labels, 50).unwrap();
        let acc = head.predict(&xs).iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert_eq!(acc, 30);
    }

    #[test]
    fn detector_json_round_trip() {
        let train = cluster_with_outlier();
        let d = fit_detector(DetectorKind::IsolationForest, &train, &DetectorOptions { iforest_trees: 3, ..Default::default() }).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: Detector = serde_json::from_str(&json).unwrap();
        assert_eq!(back.score(&[0.1, 9.0]), d.score(&[0.1, 9.0]));
    }
}
