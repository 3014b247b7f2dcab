//! Seeded bigram generators for a corpus with a known distribution shift.
//!
//! The "human" model favours a core of frequent words with a few preferred
//! successors per word. The shifted model mixes every transition row with a
//! distribution concentrated on the rare tail of the vocabulary.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "du", "fe", "go"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub n_human: usize,
    pub n_gpt: usize,
    pub vocab_size: usize,
    /// Words `core..vocab_size` form the rare tail.
    pub core_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Mixing weight of the tail distribution in the shifted model.
    pub shift: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n_human: 200,
            n_gpt: 50,
            vocab_size: 80,
            core_size: 50,
            min_len: 40,
            max_len: 60,
            shift: 0.5,
            seed: 0,
        }
    }
}

/// Row-stochastic transition table over `words`.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramModel {
    pub words: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn word_list(n: usize) -> Vec<String> {
    let s = SYLLABLES.len();
    (0..n)
        .map(|i| {
            let mut w = String::new();
            let mut k = i;
            loop {
                w.push_str(SYLLABLES[k % s]);
                k /= s;
                if k == 0 {
                    break;
                }
            }
            // two-syllable minimum keeps words distinct from their prefixes
            if i < s {
                w.push_str("n");
            }
            w
        })
        .collect()
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= total);
}

/// Rows favour `preferred` successors drawn from `range`, on top of a
/// Zipf-like background over the whole vocabulary.
fn structured_rows(
    v: usize,
    range: std::ops::Range<usize>,
    background: impl Fn(usize) -> f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    (0..v)
        .map(|_| {
            let mut row: Vec<f64> = (0..v).map(|j| background(j) * rng.gen_range(0.5..1.5)).collect();
            for _ in 0..4 {
                let j = rng.gen_range(range.clone());
                row[j] += 0.15;
            }
            normalize(&mut row);
            row
        })
        .collect()
}

impl BigramModel {
    pub fn human(opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Self {
        let v = opts.vocab_size;
        let core = opts.core_size;
        let background = |j: usize| {
            if j < core {
                1.0 / (j as f64 + 2.0)
            } else {
                0.004
            }
        };
        Self {
            words: word_list(v),
            rows: structured_rows(v, 0..core, background, rng),
        }
    }

    /// `(1 − shift)·P + shift·Q` with `Q` concentrated on the tail.
    pub fn shifted(base: &BigramModel, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Self {
        let v = opts.vocab_size;
        let core = opts.core_size;
        let background = |j: usize| if j < core { 0.0005 } else { 1.0 / ((j - core) as f64 + 1.0) };
        let tail = structured_rows(v, core..v, background, rng);
        let rows = base
            .rows
            .iter()
            .zip(tail)
            .map(|(p, q)| {
                p.iter()
                    .zip(q)
                    .map(|(a, b)| (1.0 - opts.shift) * a + opts.shift * b)
                    .collect()
            })
            .collect();
        Self {
            words: base.words.clone(),
            rows,
        }
    }

    /// Smallest per-row total-variation distance to `other`.
    pub fn min_row_tv(&self, other: &BigramModel) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(p, q)| 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> String {
        let tables: Vec<WeightedIndex<f64>> = self
            .rows
            .iter()
            .map(|r| WeightedIndex::new(r).expect("rows are positive"))
            .collect();
        let mut cur = rng.gen_range(0..self.words.len());
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.words[cur].as_str());
            cur = tables[cur].sample(rng);
        }
        out.join(" ")
    }
}

/// The human model, the shifted model and a corpus drawn from them
/// (human documents first).
pub fn synth_corpus(opts: &SynthOptions) -> Result<(Corpus, BigramModel, BigramModel)> {
    if opts.core_size == 0 || opts.core_size >= opts.vocab_size {
        return Err(Error::Config("core_size must lie in 1..vocab_size".into()));
    }
    if opts.min_len == 0 || opts.min_len > opts.max_len {
        return Err(Error::Config("need 1 ≤ min_len ≤ max_len".into()));
    }
    if !(0.0..=1.0).contains(&opts.shift) {
        return Err(Error::Config("shift must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let human = BigramModel::human(opts, &mut rng);
    let gpt = BigramModel::shifted(&human, opts, &mut rng);
    let mut docs = Vec::with_capacity(opts.n_human + opts.n_gpt);
    for (model, n, label) in [(&human, opts.n_human, Label::Human), (&gpt, opts.n_gpt, Label::Gpt)] {
        for _ in 0..n {
            let len = rng.gen_range(opts.min_len..=opts.max_len);
            docs.push((model.sample(len, &mut rng), label));
        }
    }
    Ok((Corpus::from_pairs(docs), human, gpt))
}
