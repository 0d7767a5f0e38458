//! Deterministic numerics core: dense matrices, softmax, an LSTM cell,
//! Adam, a seedable RNG, and a finite-difference gradient checker.
//!
//! Everything here is `f64`. Reductions run in a fixed left-to-right order
//! so that repeated runs produce bit-identical results on any platform.

mod adam;
mod lstm;
mod rng;

pub use adam::{AdamHyper, AdamSlot, AdamState};
pub use lstm::{LstmCellParams, LstmStep};
pub use rng::DetRng;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// Uniform random entries in `[-scale, scale]`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut DetRng) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rng.uniform(-scale, scale));
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = x · M` for a row vector `x` of length `rows`; `y` has length `cols`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vec_mul: input length != rows");
        let mut y = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (yv, &w) in y.iter_mut().zip(row) {
                *yv += xv * w;
            }
        }
        y
    }

    /// `x = M · y` for a column vector `y` of length `cols`; `x` has length `rows`.
    /// This is the adjoint of [`Mat::vec_mul`], used in backward passes.
    pub fn vec_mul_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.cols, "vec_mul_t: input length != cols");
        let mut x = vec![0.0; self.rows];
        for (r, xv) in x.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (&w, &yv) in row.iter().zip(y) {
                acc += w * yv;
            }
            *xv = acc;
        }
        x
    }

    /// `M += x ⊗ y` (outer product accumulate).
    pub fn add_outer(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (w, &yv) in row.iter_mut().zip(y) {
                *w += xv * yv;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable softmax (max-subtraction before exponentiation).
///
/// Entries land in `(0, 1)` and sum to 1 within 1e-12; shifting the input by
/// a constant leaves the output unchanged.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::data("softmax of empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `a += s * b`
#[inline]
pub fn axpy(a: &mut [f64], s: f64, b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

/// Maximum relative error between an analytic gradient and central finite
/// differences of `f` at `params`, with per-coordinate step `h`.
///
/// The relative error at coordinate `k` is
/// `|a_k - n_k| / max(|a_k|, |n_k|, 1e-8)`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    assert!(h > 0.0, "grad_check step must be positive");
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for k in 0..params.len() {
        let orig = work[k];
        work[k] = orig + h;
        let fp = f(&work);
        work[k] = orig - h;
        let fm = f(&work);
        work[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check objective at coordinate {k}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Global L2 norm of a set of gradient slices.
pub fn global_norm<'a, I: IntoIterator<Item = &'a [f64]>>(slices: I) -> f64 {
    let mut sq = 0.0;
    for s in slices {
        for v in s {
            sq += v * v;
        }
    }
    sq.sqrt()
}
