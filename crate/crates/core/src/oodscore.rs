//! Slice projection through fitted term factors and the reconstruction
//! error used as the out-of-distribution feature.
//!
//! For a slice `S` the projection is `P = A†·S·B` and the reconstruction is
//! `S' = A·P·B†`, so `S' = Π_A · S · Π_B` with `Π_A = A·A†` and `Π_B = B·B†`
//! the orthogonal projectors onto the column spaces of `A` and `B`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooc::{build_slice, Slice};
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::model::GpTenModel;
use crate::numerics::{default_pinv_tol, frobenius_norm, truncated_svd, Matrix};

/// Reconstruction errors aligned to document ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    pub doc_ids: Vec<usize>,
    pub errors: Vec<f64>,
}

impl ErrorVector {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }
}

fn check_factors(m: usize, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != m || b.rows() != m || a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "slice is {m}x{m}, A is {:?}, B is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_square(s: &Matrix) -> Result<usize> {
    if s.rows() != s.cols() {
        return Err(Error::ShapeMismatch(format!("slice must be square, got {:?}", s.shape())));
    }
    Ok(s.rows())
}

/// `A† · S · B`.
pub fn project_slice(s: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let m = check_square(s)?;
    check_factors(m, a, b)?;
    let a_pinv = crate::numerics::pinv(a, default_pinv_tol(a));
    Ok(a_pinv.matmul(s).matmul(b))
}

/// `A · P · B†`.
pub fn reconstruct_slice(p: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if p.rows() != a.cols() || p.cols() != b.cols() || a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "P is {:?}, A is {:?}, B is {:?}",
            p.shape(),
            a.shape(),
            b.shape()
        )));
    }
    let b_pinv = crate::numerics::pinv(b, default_pinv_tol(b));
    Ok(a.matmul(p).matmul(&b_pinv))
}

/// `‖A·(A†·S·B)·B† − S‖_F`, evaluated densely.
pub fn reconstruction_error(s: &Matrix, a: &Matrix, b: &Matrix) -> Result<f64> {
    let p = project_slice(s, a, b)?;
    let recon = reconstruct_slice(&p, a, b)?;
    Ok(frobenius_norm(&recon.sub(s)))
}

/// Pseudoinverses and orthonormal range bases of `A` and `B`, computed once
/// per model and reused for every slice.
#[derive(Clone, Debug)]
pub struct Projector {
    a: Matrix,
    b: Matrix,
    a_pinv: Matrix,
    b_pinv: Matrix,
    /// Orthonormal basis of range(A), `M×k_a`.
    ua: Matrix,
    /// Orthonormal basis of range(B), `M×k_b`.
    ub: Matrix,
}

/// Below this fraction of `‖S‖²` the norm identity is too cancellation-prone
/// and the residual is formed explicitly.
const EXPLICIT_RESIDUAL_RATIO: f64 = 1e-6;

impl Projector {
    pub fn new(a: &Matrix, b: &Matrix) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::ShapeMismatch(format!(
                "A is {:?}, B is {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let svd_a = truncated_svd(a, default_pinv_tol(a));
        let svd_b = truncated_svd(b, default_pinv_tol(b));
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            a_pinv: svd_a.pseudo_inverse(),
            b_pinv: svd_b.pseudo_inverse(),
            ua: svd_a.u,
            ub: svd_b.u,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    /// `A†·S·B` for a sparse slice.
    pub fn project(&self, s: &Slice) -> Result<Matrix> {
        self.check(s)?;
        // (A†·S)·B = A†·(S·B)
        Ok(self.a_pinv.matmul(&s.matmul_dense(&self.b)))
    }

    pub fn reconstruct(&self, p: &Matrix) -> Result<Matrix> {
        if p.shape() != (self.a.cols(), self.b.cols()) {
            return Err(Error::ShapeMismatch(format!("P is {:?}", p.shape())));
        }
        Ok(self.a.matmul(p).matmul(&self.b_pinv))
    }

    /// `‖S' − S‖_F` without materializing `S'` in the common case:
    /// `‖S − Π_A S Π_B‖² = ‖S‖² − ‖U_Aᵀ S U_B‖²`.
    pub fn error(&self, s: &Slice) -> Result<f64> {
        self.check(s)?;
        if s.is_zero() {
            return Ok(0.0);
        }
        let norm_sq = s.frobenius_sq();
        let core = self.ua.t_matmul(&s.matmul_dense(&self.ub));
        let kept = frobenius_norm(&core).powi(2);
        let resid_sq = norm_sq - kept;
        if resid_sq > EXPLICIT_RESIDUAL_RATIO * norm_sq {
            return Ok(resid_sq.sqrt());
        }
        let recon = self.ua.matmul(&core).matmul(&self.ub.transpose());
        Ok(frobenius_norm(&recon.sub(&s.to_dense())))
    }

    fn check(&self, s: &Slice) -> Result<()> {
        if s.dim != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "slice dimension {} but factors have {} rows",
                s.dim,
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `e / max(‖S‖_F, ε)` when normalization is requested.
pub fn normalize_error(error: f64, slice_norm: f64) -> f64 {
    const EPS: f64 = 1e-12;
    error / slice_norm.max(EPS)
}

/// Builds each document's slice in the model's vocabulary geometry and
/// returns its reconstruction error, in input order.
///
/// `vocab` and `cooc` must be the ones the model was trained with; the
/// check is done on their fingerprint.
pub fn score_corpus(
    docs: &[(usize, &TokenSeq)],
    model: &GpTenModel,
    vocab: &crate::corpus::Vocabulary,
    cooc: &crate::cooc::CoocOptions,
    normalize: bool,
) -> Result<ErrorVector> {
    let found = crate::model::geometry_fingerprint(vocab, cooc);
    if found != model.geometry {
        return Err(Error::FingerprintMismatch {
            expected: model.geometry.clone(),
            found,
        });
    }
    let projector = model.projector()?;
    let errors = docs
        .par_iter()
        .map(|&(id, tokens)| {
            let slice = build_slice(id, tokens, vocab, cooc);
            let e = projector.error(&slice)?;
            Ok(if normalize {
                normalize_error(e, slice.frobenius_norm())
            } else {
                e
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ErrorVector {
        doc_ids: docs.iter().map(|d| d.0).collect(),
        errors,
    })
}
