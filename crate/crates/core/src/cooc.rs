//! Windowed term co-occurrence slices and the stacked document tensor.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocabulary};
use crate::cpd::SparseTensor;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// One per within-window position pair.
    #[default]
    Count,
    /// 1 if the pair occurs at all.
    Binary,
    /// 1/distance per position pair.
    InverseDistance,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoocOptions {
    pub window: usize,
    pub weighting: Weighting,
    pub include_diagonal: bool,
}

impl Default for CoocOptions {
    fn default() -> Self {
        Self {
            window: 5,
            weighting: Weighting::Count,
            include_diagonal: true,
        }
    }
}

impl CoocOptions {
    pub fn with_window(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }
}

/// Symmetric sparse `M×M` co-occurrence matrix of one document.
///
/// Entries are stored for both triangles, sorted by `(row, col)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub doc_id: usize,
    pub dim: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Slice {
    pub fn zero(doc_id: usize, dim: usize) -> Self {
        Self {
            doc_id,
            dim,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|&(a, b, _)| (a as usize, b as usize).cmp(&(i, j)))
            .map_or(0.0, |k| self.entries[k].2)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i as usize, j as usize)] = v;
        }
        m
    }

    /// `self · rhs` for a dense `M×c` right-hand side.
    pub fn matmul_dense(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(rhs.rows(), self.dim, "slice/rhs shape mismatch");
        let mut out = Matrix::zeros(self.dim, rhs.cols());
        for &(i, j, v) in &self.entries {
            let src = rhs.row(j as usize);
            for (o, &x) in out.row_mut(i as usize).iter_mut().zip(src) {
                *o += v * x;
            }
        }
        out
    }

    /// Writes `i,j,count` lines, one per stored entry.
    pub fn write_coo(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "i,j,count")?;
        for &(i, j, v) in &self.entries {
            writeln!(w, "{i},{j},{v}")?;
        }
        Ok(())
    }

    pub fn sidecar(&self, window: usize) -> SliceSidecar {
        SliceSidecar {
            doc_id: self.doc_id,
            m: self.dim,
            window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSidecar {
    pub doc_id: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub window: usize,
}

/// Builds one document's slice. Out-of-vocabulary tokens are removed before
/// windowing, so the window counts surviving positions only.
pub fn build_slice(doc_id: usize, tokens: &TokenSeq, vocab: &Vocabulary, opts: &CoocOptions) -> Slice {
    let ids = vocab.encode(tokens);
    let w = opts.window.max(1);
    let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
    for p in 0..ids.len() {
        for q in p + 1..ids.len().min(p + w + 1) {
            let (a, b) = (ids[p] as u32, ids[q] as u32);
            let weight = match opts.weighting {
                Weighting::Count | Weighting::Binary => 1.0,
                Weighting::InverseDistance => 1.0 / (q - p) as f64,
            };
            if a == b {
                if opts.include_diagonal {
                    *acc.entry((a, a)).or_insert(0.0) += weight;
                }
            } else {
                *acc.entry((a, b)).or_insert(0.0) += weight;
                *acc.entry((b, a)).or_insert(0.0) += weight;
            }
        }
    }
    let mut entries: Vec<(u32, u32, f64)> = acc
        .into_iter()
        .map(|((i, j), v)| {
            let v = if opts.weighting == Weighting::Binary { 1.0 } else { v };
            (i, j, v)
        })
        .collect();
    entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
    Slice {
        doc_id,
        dim: vocab.len(),
        entries,
    }
}

/// `N` stacked slices over a shared `M`-term vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoocTensor {
    slices: Vec<Slice>,
    dim: usize,
    window: usize,
}

impl CoocTensor {
    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    /// Mode size `M`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Slice count `N`.
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Document ids that contributed a slice, in slice order.
    pub fn doc_ids(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.doc_id).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.slices.iter().map(Slice::frobenius_sq).sum::<f64>().sqrt()
    }

    /// Sparse view with modes `(term, term, document)`.
    pub fn to_sparse(&self) -> SparseTensor {
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (k, s) in self.slices.iter().enumerate() {
            for &(i, j, v) in s.entries() {
                coords.push([i, j, k as u32]);
                values.push(v);
            }
        }
        SparseTensor::new([self.dim, self.dim, self.slices.len()], coords, values)
            .expect("slice indices are within bounds")
    }
}

/// Stacks the slices of `docs` in input order.
pub fn build_tensor(docs: &[(usize, &TokenSeq)], vocab: &Vocabulary, opts: &CoocOptions) -> Result<CoocTensor> {
    let slices: Vec<Slice> = docs
        .par_iter()
        .map(|&(id, tokens)| build_slice(id, tokens, vocab, opts))
        .collect();
    if slices.iter().all(Slice::is_zero) {
        return Err(Error::DegenerateTensor);
    }
    Ok(CoocTensor {
        slices,
        dim: vocab.len(),
        window: opts.window,
    })
}
