//! Dense symmetric positive-definite factorization.

use crate::error::{Error, Result};
use crate::par;

/// Number of jitter escalations tried after the unperturbed attempt.
pub const MAX_JITTER_ESCALATIONS: usize = 6;

/// Lower Cholesky factor stored row-major (upper triangle zeroed).
#[derive(Clone, Debug)]
pub struct Cholesky {
    pub n: usize,
    pub l: Vec<f64>,
    /// Diagonal shift that was needed for the factorization to succeed.
    pub jitter: f64,
}

impl Cholesky {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..(i + 1) * self.n]
    }

    /// Computes `L z` into `out`.
    pub fn mul_vec(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let row = &self.row(i)[..=i];
            *o = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }

    /// Max-norm residual `‖L Lᵀ − A‖_max`.
    pub fn residual(&self, a: &[f64]) -> f64 {
        let n = self.n;
        let rows = par::map_range(n, |i| {
            let li = self.row(i);
            let mut worst = 0.0f64;
            for j in 0..=i {
                let lj = self.row(j);
                let v: f64 = li[..=j].iter().zip(&lj[..=j]).map(|(x, y)| x * y).sum();
                worst = worst.max((v - a[i * n + j]).abs());
            }
            worst
        });
        rows.into_iter().fold(0.0, f64::max)
    }
}

/// Attempts a plain factorization of `a + shift·I`. Returns the failing pivot
/// index and value on breakdown.
fn try_factor(a: &[f64], n: usize, shift: f64) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let (head, tail) = l.split_at_mut((j + 1) * n);
        let row_j = &mut head[j * n..];
        let s: f64 = row_j[..j].iter().map(|x| x * x).sum();
        let pivot = a[j * n + j] + shift - s;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err((j, pivot));
        }
        let d = pivot.sqrt();
        row_j[j] = d;
        let row_j: &[f64] = row_j;
        par::for_each_row_mut(tail, n, |k, row_i| {
            let i = j + 1 + k;
            let dot: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(x, y)| x * y).sum();
            row_i[j] = (a[i * n + j] - dot) / d;
        });
    }
    Ok(l)
}

/// Cholesky factorization of a symmetric row-major matrix with jitter
/// escalation: the unperturbed matrix first, then `1e-14·mean(diag)·10^k`
/// for `k = 1..=6`.
pub fn cholesky_with_jitter(a: &[f64], n: usize) -> Result<Cholesky> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch(a.len(), n * n));
    }
    let mean_diag = if n == 0 { 0.0 } else { (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64 };
    let mut last = (0, 0.0);
    for k in 0..=MAX_JITTER_ESCALATIONS {
        let shift = if k == 0 { 0.0 } else { 1e-14 * mean_diag.abs() * 10f64.powi(k as i32) };
        match try_factor(a, n, shift) {
            Ok(l) => return Ok(Cholesky { n, l, jitter: shift }),
            Err(e) => last = e,
        }
    }
    Err(Error::NotPositiveDefinite {
        attempts: MAX_JITTER_ESCALATIONS,
        diagnostic: format!(
            "pivot {} became {:.3e} (n = {n}, mean diagonal {:.3e})",
            last.0, last.1, mean_diag
        ),
    })
}
