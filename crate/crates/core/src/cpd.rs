//! CP (CANDECOMP/PARAFAC) decomposition of a sparse third-order tensor by
//! alternating least squares.
//!
//! The model is `X ≈ Σ_c λ_c · a_c ∘ b_c ∘ c_c` with unit-norm factor columns.
//! For the co-occurrence tensor the modes are `(term, term, document)`, so
//! `A` and `B` are `M×r` and `C` is `N×r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_gram, Matrix};

/// Coordinate-format third-order tensor with a per-mode row index so the
/// MTTKRP kernel can be run row-parallel with a fixed summation order.
#[derive(Clone, Debug)]
pub struct SparseTensor {
    dims: [usize; 3],
    coords: Vec<[u32; 3]>,
    values: Vec<f64>,
    by_mode: [ModeIndex; 3],
}

/// Entries grouped by one mode's index: `order[offsets[i]..offsets[i+1]]`
/// are the entries whose index along the mode is `i`.
#[derive(Clone, Debug, Default)]
struct ModeIndex {
    order: Vec<u32>,
    offsets: Vec<usize>,
}

impl ModeIndex {
    fn build(dim: usize, coords: &[[u32; 3]], mode: usize) -> Self {
        let mut counts = vec![0usize; dim + 1];
        for c in coords {
            counts[c[mode] as usize + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut order = vec![0u32; coords.len()];
        for (e, c) in coords.iter().enumerate() {
            let slot = &mut cursor[c[mode] as usize];
            order[*slot] = e as u32;
            *slot += 1;
        }
        Self { order, offsets }
    }
}

impl SparseTensor {
    /// Zero-valued entries are dropped; duplicate coordinates are summed
    /// implicitly by every kernel.
    pub fn new(dims: [usize; 3], coords: Vec<[u32; 3]>, values: Vec<f64>) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates but {} values",
                coords.len(),
                values.len()
            )));
        }
        for c in &coords {
            for m in 0..3 {
                if c[m] as usize >= dims[m] {
                    return Err(Error::ShapeMismatch(format!(
                        "coordinate {c:?} outside tensor of shape {dims:?}"
                    )));
                }
            }
        }
        let (coords, values): (Vec<_>, Vec<_>) = coords
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != 0.0)
            .unzip();
        let by_mode = [0, 1, 2].map(|m| ModeIndex::build(dims[m], &coords, m));
        Ok(Self {
            dims,
            coords,
            values,
            by_mode,
        })
    }

    /// Dense `dims[0]×dims[1]×dims[2]` tensor given as `f(i, j, k)`.
    pub fn from_fn(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    coords.push([i as u32, j as u32, k as u32]);
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, coords, values).expect("indices in range")
    }

    /// Tensor equal to `⟦λ; A, B, C⟧`.
    pub fn from_factors(lambda: &[f64], factors: [&Matrix; 3]) -> Self {
        let dims = factors.map(Matrix::rows);
        let [a, b, c] = factors;
        Self::from_fn(dims, |i, j, k| {
            lambda
                .iter()
                .enumerate()
                .map(|(r, l)| l * a[(i, r)] * b[(j, r)] * c[(k, r)])
                .sum()
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn coords(&self) -> &[[u32; 3]] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn dense(&self) -> Vec<f64> {
        let [_, j, k] = self.dims;
        let mut out = vec![0.0; self.dims.iter().product()];
        for (c, &v) in self.coords.iter().zip(&self.values) {
            out[(c[0] as usize * j + c[1] as usize) * k + c[2] as usize] += v;
        }
        out
    }
}

/// Factor matrices for modes 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl Factors {
    pub fn get(&self, mode: usize) -> &Matrix {
        match mode {
            0 => &self.a,
            1 => &self.b,
            2 => &self.c,
            _ => panic!("mode {mode} out of range"),
        }
    }

    fn get_mut(&mut self, mode: usize) -> &mut Matrix {
        match mode {
            0 => &mut self.a,
            1 => &mut self.b,
            2 => &mut self.c,
            _ => panic!("mode {mode} out of range"),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }
}

/// Uniform `[0, 1)` factors for an `M×M×N` tensor, deterministic in `seed`.
pub fn init_factors(m: usize, n: usize, rank: usize, seed: u64) -> Factors {
    init_factors_for([m, m, n], rank, seed)
}

pub fn init_factors_for(dims: [usize; 3], rank: usize, seed: u64) -> Factors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| Matrix::from_fn(rows, rank, |_, _| rng.gen::<f64>());
    let a = draw(dims[0]);
    let b = draw(dims[1]);
    let c = draw(dims[2]);
    Factors { a, b, c }
}

/// Matricized tensor times Khatri–Rao product for `mode`, computed from the
/// stored entries. Row-parallel when `parallel` is set; the per-row
/// summation order is the same either way, so results are bit-identical.
pub fn mttkrp(tensor: &SparseTensor, factors: &Factors, mode: usize, parallel: bool) -> Matrix {
    assert!(mode < 3, "mode {mode} out of range");
    let rank = factors.rank();
    for m in 0..3 {
        let f = factors.get(m);
        assert_eq!(f.rows(), tensor.dims[m], "factor {m} has wrong row count");
        assert_eq!(f.cols(), rank, "factor {m} has wrong rank");
    }
    let (m1, m2) = match mode {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (f1, f2) = (factors.get(m1), factors.get(m2));
    let index = &tensor.by_mode[mode];
    let mut out = Matrix::zeros(tensor.dims[mode], rank);

    let fill_row = |row: usize, dst: &mut [f64]| {
        for &e in &index.order[index.offsets[row]..index.offsets[row + 1]] {
            let c = tensor.coords[e as usize];
            let v = tensor.values[e as usize];
            let r1 = f1.row(c[m1] as usize);
            let r2 = f2.row(c[m2] as usize);
            for ((d, x), y) in dst.iter_mut().zip(r1).zip(r2) {
                *d += v * x * y;
            }
        }
    };
    if rank == 0 {
        return out;
    }
    if parallel {
        out.as_mut_slice()
            .par_chunks_mut(rank)
            .enumerate()
            .for_each(|(row, dst)| fill_row(row, dst));
    } else {
        for (row, dst) in out.as_mut_slice().chunks_mut(rank).enumerate() {
            fill_row(row, dst);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsOptions {
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub ridge: f64,
    pub parallel: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            restarts: 1,
            ridge: 1e-10,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    pub factors: Factors,
    pub lambda: Vec<f64>,
    pub fit: f64,
    pub iterations_run: usize,
    /// Fit after every sweep of the winning restart.
    pub fit_trace: Vec<f64>,
}

impl CpModel {
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn a(&self) -> &Matrix {
        &self.factors.a
    }

    pub fn b(&self) -> &Matrix {
        &self.factors.b
    }

    pub fn c(&self) -> &Matrix {
        &self.factors.c
    }
}

/// Seed for restart `restart` of a run seeded with `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    // splitmix64 step so neighbouring seeds do not share streams
    let mut z = seed.wrapping_add((restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cp_als(tensor: &SparseTensor, rank: usize, opts: &AlsOptions) -> Result<CpModel> {
    if rank == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    if opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(Error::Config("ALS needs max_iters ≥ 1 and tol > 0".into()));
    }
    if tensor.norm_sq() == 0.0 {
        return Err(Error::DegenerateTensor);
    }
    let mut best: Option<CpModel> = None;
    for restart in 0..opts.restarts.max(1) {
        let init = init_factors_for(tensor.dims, rank, restart_seed(opts.seed, restart));
        let model = als_run(tensor, init, opts)?;
        log::debug!(
            "restart {restart}: fit {:.6} after {} sweeps",
            model.fit,
            model.iterations_run
        );
        if best.as_ref().map_or(true, |b| model.fit > b.fit) {
            best = Some(model);
        }
    }
    Ok(finalize(best.expect("at least one restart")))
}

fn als_run(tensor: &SparseTensor, mut factors: Factors, opts: &AlsOptions) -> Result<CpModel> {
    let rank = factors.rank();
    let mut lambda = vec![1.0; rank];
    let mut grams = [0, 1, 2].map(|m| factors.get(m).gram());
    let mut trace = Vec::with_capacity(opts.max_iters);
    for _ in 0..opts.max_iters {
        for mode in 0..3 {
            let mut g = Matrix::from_fn(rank, rank, |_, _| 1.0);
            for other in (0..3).filter(|&m| m != mode) {
                g = g.hadamard(&grams[other]);
            }
            let rhs = mttkrp(tensor, &factors, mode, opts.parallel);
            let mut updated = solve_gram(&g, &rhs, opts.ridge);
            if !updated.is_finite() {
                return Err(Error::Numerical(format!("non-finite factor in mode {mode}")));
            }
            lambda = normalize_columns(&mut updated);
            grams[mode] = updated.gram();
            *factors.get_mut(mode) = updated;
        }
        let fit = fit_with(tensor, &factors, &lambda, &grams);
        let converged = trace.last().is_some_and(|prev: &f64| (fit - prev).abs() < opts.tol);
        trace.push(fit);
        if converged {
            break;
        }
    }
    Ok(CpModel {
        factors,
        lambda,
        fit: *trace.last().expect("max_iters ≥ 1"),
        iterations_run: trace.len(),
        fit_trace: trace,
    })
}

/// Scales every column to unit norm and returns the removed norms.
fn normalize_columns(m: &mut Matrix) -> Vec<f64> {
    let mut norms = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (n, v) in norms.iter_mut().zip(m.row(i)) {
            *n += v * v;
        }
    }
    for n in &mut norms {
        *n = n.sqrt();
    }
    for i in 0..m.rows() {
        for (v, n) in m.row_mut(i).iter_mut().zip(&norms) {
            if *n > 0.0 {
                *v /= n;
            }
        }
    }
    norms
}

/// Drops vanished components and orders the rest by decreasing weight.
fn finalize(model: CpModel) -> CpModel {
    let max = model.lambda.iter().cloned().fold(0.0, f64::max);
    let mut keep: Vec<usize> = (0..model.lambda.len())
        .filter(|&c| model.lambda[c].is_finite() && model.lambda[c] > max * f64::EPSILON)
        .collect();
    keep.sort_by(|&x, &y| model.lambda[y].total_cmp(&model.lambda[x]).then(x.cmp(&y)));
    let pick = |m: &Matrix| Matrix::from_fn(m.rows(), keep.len(), |i, c| m[(i, keep[c])]);
    CpModel {
        factors: Factors {
            a: pick(&model.factors.a),
            b: pick(&model.factors.b),
            c: pick(&model.factors.c),
        },
        lambda: keep.iter().map(|&c| model.lambda[c]).collect(),
        ..model
    }
}

/// Dense fallback for `‖X − ⟦·⟧‖²` is used below this element count.
const DENSE_RESIDUAL_LIMIT: usize = 1 << 22;

/// `1 − ‖X − ⟦λ; A, B, C⟧‖_F / ‖X‖_F`.
pub fn cp_fit(tensor: &SparseTensor, model: &CpModel) -> f64 {
    let grams = [0, 1, 2].map(|m| model.factors.get(m).gram());
    fit_with(tensor, &model.factors, &model.lambda, &grams)
}

fn fit_with(tensor: &SparseTensor, factors: &Factors, lambda: &[f64], grams: &[Matrix; 3]) -> f64 {
    let norm_x_sq = tensor.norm_sq();
    let residual_sq = residual_sq(tensor, factors, lambda, grams, norm_x_sq);
    1.0 - residual_sq.sqrt() / norm_x_sq.sqrt()
}

fn residual_sq(tensor: &SparseTensor, factors: &Factors, lambda: &[f64], grams: &[Matrix; 3], norm_x_sq: f64) -> f64 {
    let rank = lambda.len();
    let (a, b, c) = (&factors.a, &factors.b, &factors.c);
    let mut inner = 0.0;
    for (co, &v) in tensor.coords.iter().zip(&tensor.values) {
        let (ra, rb, rc) = (a.row(co[0] as usize), b.row(co[1] as usize), c.row(co[2] as usize));
        let m: f64 = (0..rank).map(|r| lambda[r] * ra[r] * rb[r] * rc[r]).sum();
        inner += v * m;
    }
    let mut model_sq = 0.0;
    for p in 0..rank {
        for q in 0..rank {
            model_sq += lambda[p] * lambda[q] * grams[0][(p, q)] * grams[1][(p, q)] * grams[2][(p, q)];
        }
    }
    let via_identity = norm_x_sq - 2.0 * inner + model_sq;
    let size: usize = tensor.dims.iter().product();
    // Near a perfect fit the identity loses all significant digits; when the
    // tensor is small enough, sum the residual entry by entry instead.
    if via_identity <= 1e-6 * norm_x_sq && size <= DENSE_RESIDUAL_LIMIT {
        let dense = tensor.dense();
        let [di, dj, dk] = tensor.dims;
        let mut acc = 0.0;
        for i in 0..di {
            for j in 0..dj {
                for k in 0..dk {
                    let m: f64 = (0..rank).map(|r| lambda[r] * a[(i, r)] * b[(j, r)] * c[(k, r)]).sum();
                    let d = dense[(i * dj + j) * dk + k] - m;
                    acc += d * d;
                }
            }
        }
        return acc;
    }
    via_identity.max(0.0)
}
