//! The canonical metric `δ`, its stationary model `δ*(s,t) = γ(|t−s|)`, the
//! parabolic product metric `ρ_δ` and commensurability diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp_sim::CovMatrix;
use crate::scale::ScaleFunction;

/// Variance round-off below this magnitude is clamped to zero.
const NEGATIVE_VARIANCE_CLAMP: f64 = 1e-10;

/// Source of the temporal metric.
#[derive(Clone, Debug)]
pub enum MetricModel {
    /// `δ(s,t) = γ(|t−s|)`.
    StationaryGamma(ScaleFunction),
    /// `δ(s,t)² = R(t,t) + R(s,s) − 2R(s,t)` on the covariance grid.
    FromCovariance(CovMatrix),
}

impl MetricModel {
    pub fn delta(&self, s: f64, t: f64) -> Result<f64> {
        match self {
            MetricModel::StationaryGamma(f) => f.eval((t - s).abs()),
            MetricModel::FromCovariance(cov) => {
                let i = cov.index_of(s)?;
                let j = cov.index_of(t)?;
                delta_from_cov(cov, i, j)
            }
        }
    }

    /// `ρ_δ((s,x),(t,y)) = max{δ(s,t), ‖x−y‖}`.
    pub fn rho_delta(&self, (s, x): (f64, &[f64]), (t, y): (f64, &[f64])) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(x.len(), y.len()));
        }
        Ok(self.delta(s, t)?.max(euclidean(x, y)))
    }
}

/// `δ` between grid indices of a covariance matrix.
pub fn delta_from_cov(cov: &CovMatrix, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Ok(0.0);
    }
    let v = cov.get(i, i) + cov.get(j, j) - 2.0 * cov.get(i, j);
    if v < -NEGATIVE_VARIANCE_CLAMP {
        return Err(Error::NotPositiveDefinite {
            attempts: 0,
            diagnostic: format!("increment variance {v:.3e} between grid points {i} and {j}"),
        });
    }
    Ok(v.max(0.0).sqrt())
}

#[inline]
pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Extremes of `δ(s,t) / γ(|t−s|)` over all distinct grid pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommensurabilityReport {
    /// Smallest `l ≥ 1` with `γ/√l ≤ δ ≤ √l γ` on the grid.
    pub l_hat: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub pairs: usize,
    /// Grid times `(s, t)` attaining the extremes.
    pub argmin: (f64, f64),
    pub argmax: (f64, f64),
}

pub fn commensurability_report(cov: &CovMatrix, f: &ScaleFunction) -> Result<CommensurabilityReport> {
    let grid = cov.grid();
    let n = grid.len();
    if n < 2 {
        return Err(Error::InvalidInput("commensurability needs at least two grid points".into()));
    }
    if grid[n - 1] - grid[0] > f.x_max() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "grid span {} exceeds x_max = {}",
            grid[n - 1] - grid[0],
            f.x_max()
        )));
    }
    let mut rep = CommensurabilityReport {
        l_hat: 1.0,
        ratio_min: f64::INFINITY,
        ratio_max: f64::NEG_INFINITY,
        pairs: 0,
        argmin: (0.0, 0.0),
        argmax: (0.0, 0.0),
    };
    for i in 0..n {
        for j in 0..i {
            let ratio = delta_from_cov(cov, i, j)? / f.value(grid[i] - grid[j]);
            rep.pairs += 1;
            if ratio < rep.ratio_min {
                rep.ratio_min = ratio;
                rep.argmin = (grid[j], grid[i]);
            }
            if ratio > rep.ratio_max {
                rep.ratio_max = ratio;
                rep.argmax = (grid[j], grid[i]);
            }
        }
    }
    rep.l_hat = rep.ratio_max.max(1.0 / rep.ratio_min).max(1.0).powi(2);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_sim::{cov_stationary_increments, uniform_grid};
    use proptest::prelude::*;

    #[test]
    fn delta_examples() {
        let bm = ScaleFunction::power(0.5).unwrap();
        let m = MetricModel::StationaryGamma(bm.clone());
        assert!((m.delta(0.1, 0.35).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.delta(0.3, 0.3).unwrap(), 0.0);

        let cov = CovMatrix::from_kernel(&[0.1, 0.35], f64::min).unwrap();
        let m = MetricModel::FromCovariance(cov);
        assert!((m.delta(0.1, 0.35).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(m.delta(0.2, 0.35), Err(Error::OffGrid(_))));
    }

    #[test]
    fn rho_examples() {
        let m = MetricModel::StationaryGamma(ScaleFunction::power(1.0).unwrap());
        assert_eq!(m.rho_delta((0.2, &[1.0]), (0.2, &[1.0])).unwrap(), 0.0);
        assert!((m.rho_delta((0.0, &[0.0]), (0.5, &[0.2])).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.rho_delta((0.0, &[0.0]), (0.1, &[0.2])).unwrap() - 0.2).abs() < 1e-15);
        assert!(m.rho_delta((0.0, &[0.0]), (0.1, &[0.2, 0.0])).is_err());
    }

    #[test]
    fn stationary_cov_is_exactly_commensurate() {
        let f = ScaleFunction::power(0.3).unwrap();
        let cov = cov_stationary_increments(&f, &uniform_grid(0.0, 1.0, 40)).unwrap();
        let rep = commensurability_report(&cov, &f).unwrap();
        assert!((rep.l_hat - 1.0).abs() < 1e-10, "{rep:?}");
        assert_eq!(rep.pairs, 40 * 39 / 2);
        // and the two backends agree
        let a = MetricModel::FromCovariance(cov.clone());
        let b = MetricModel::StationaryGamma(f);
        for (i, j) in [(0, 5), (3, 39), (17, 18)] {
            let (s, t) = (cov.grid()[i], cov.grid()[j]);
            assert!((a.delta(s, t).unwrap() - b.delta(s, t).unwrap()).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn triangle_inequalities(
            h in 0.05f64..1.0,
            s in 0.0f64..1.0, t in 0.0f64..1.0, u in 0.0f64..1.0,
            x in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let m = MetricModel::StationaryGamma(ScaleFunction::power(h).unwrap());
            let d = |a: f64, b: f64| m.delta(a, b).unwrap();
            prop_assert!(d(s, u) <= d(s, t) + d(t, u) + 1e-12);
            let (p, q, r) = (&x[0..2], &x[2..4], &x[4..6]);
            let rho = |a: (f64, &[f64]), b: (f64, &[f64])| m.rho_delta(a, b).unwrap();
            prop_assert!(rho((s, p), (u, r)) <= rho((s, p), (t, q)) + rho((t, q), (u, r)) + 1e-12);
            prop_assert_eq!(d(s, t), d(t, s));
        }
    }
}
