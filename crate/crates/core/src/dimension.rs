//! Slope-fit dimension estimators and the image / intersection experiments.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractal_sets::{gamma_dyadic_cover, SpatialSet, TimeSet};
use crate::gp_sim::{uniform_grid, CovModel, PathSampler, MAX_GRID};
use crate::par;
use crate::scale::{Family, ScaleFunction};
use crate::stats::{self, fit_line};

/// Minimum number of scales in a slope fit.
pub const MIN_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionMethod {
    BoxEuclidean,
    GammaDyadic,
    ProductRho,
}

/// A dimension read off the slope of `log₂ count` against `−log₂ scale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionEstimate {
    /// `+∞` when the counts grow faster than any power of the scale.
    pub value: f64,
    pub stderr: f64,
    /// `(scale_min, scale_max)` of the fitted scales.
    pub window: (f64, f64),
    /// `(scale, count)` for every scale that was evaluated, coarse to fine.
    /// Counts beyond the `f64` range are stored as `+∞`.
    pub counts: Vec<(f64, f64)>,
    pub method: DimensionMethod,
    pub diverged: bool,
}

impl DimensionEstimate {
    fn degenerate(method: DimensionMethod) -> Self {
        DimensionEstimate {
            value: 0.0,
            stderr: 0.0,
            window: (0.0, 0.0),
            counts: Vec::new(),
            method,
            diverged: false,
        }
    }
}

/// Fits `log₂ N` against `−log₂ scale` over the given points.
fn slope_estimate(
    scales: &[f64],
    log2_counts: &[f64],
    method: DimensionMethod,
    all_counts: Vec<(f64, f64)>,
) -> Result<DimensionEstimate> {
    if scales.len() < MIN_SCALES {
        return Err(Error::TooFewScales { got: scales.len(), needed: MIN_SCALES });
    }
    let x: Vec<f64> = scales.iter().map(|s| -s.log2()).collect();
    let fit = fit_line(&x, log2_counts)
        .ok_or_else(|| Error::InvalidInput("degenerate scale window".into()))?;
    let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().copied().fold(0.0, f64::max);
    Ok(DimensionEstimate {
        value: fit.slope.max(0.0),
        stderr: fit.stderr,
        window: (lo, hi),
        counts: all_counts,
        method,
        diverged: false,
    })
}

/// Number of side-`eps` boxes (anchored at the origin) occupied by the
/// points, given as rows of length `dim`.
pub fn occupied_boxes(points: &[f64], dim: usize, eps: f64) -> usize {
    let mut cells: HashSet<Vec<i64>> = HashSet::with_capacity(points.len() / dim.max(1));
    for p in points.chunks_exact(dim) {
        cells.insert(p.iter().map(|v| (v / eps).floor() as i64).collect());
    }
    cells.len()
}

/// Dyadic scales `D·2^{−k}` from the point-cloud extent `D` down to the
/// median distance between consecutive points, keeping only unsaturated
/// scales (fewer than `N/4` occupied boxes) and then dropping the two
/// coarsest and the two finest.
pub fn auto_box_scales(points: &[f64], dim: usize) -> Vec<f64> {
    let n = points.len() / dim;
    if n < 2 {
        return Vec::new();
    }
    let extent = (0..dim)
        .map(|c| {
            let col = points.iter().skip(c).step_by(dim);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Vec::new();
    }
    let mut steps: Vec<f64> = points
        .chunks_exact(dim)
        .zip(points.chunks_exact(dim).skip(1))
        .map(|(a, b)| crate::metrics::euclidean(a, b))
        .filter(|s| *s > 0.0)
        .collect();
    steps.sort_by(f64::total_cmp);
    let floor = steps.get(steps.len() / 2).copied().unwrap_or(extent * 1e-6);
    let mut scales = Vec::new();
    let mut eps = extent;
    while eps >= floor && scales.len() < 60 {
        if occupied_boxes(points, dim, eps) * 4 >= n {
            break;
        }
        scales.push(eps);
        eps *= 0.5;
    }
    let drop = if scales.len() >= MIN_SCALES + 4 {
        2
    } else if scales.len() >= MIN_SCALES + 2 {
        1
    } else {
        0
    };
    scales[drop..scales.len() - drop].to_vec()
}

/// Box-counting dimension of a point cloud in `R^dim`. With `scales = None`
/// the window comes from [`auto_box_scales`].
pub fn box_dimension_euclidean(points: &[f64], dim: usize, scales: Option<&[f64]>) -> Result<DimensionEstimate> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::DimensionMismatch(points.len(), dim));
    }
    let n = points.len() / dim;
    if n == 0 {
        return Err(Error::InvalidInput("no points to count".into()));
    }
    let first = &points[..dim];
    if points.chunks_exact(dim).all(|p| p == first) {
        return Ok(DimensionEstimate::degenerate(DimensionMethod::BoxEuclidean));
    }
    let scales: Vec<f64> = match scales {
        Some(s) => s.to_vec(),
        None => auto_box_scales(points, dim),
    };
    let counts: Vec<(f64, f64)> = scales.iter().map(|&e| (e, occupied_boxes(points, dim, e) as f64)).collect();
    let log2: Vec<f64> = counts.iter().map(|c| c.1.log2()).collect();
    slope_estimate(&scales, &log2, DimensionMethod::BoxEuclidean, counts)
}

/// Number of side-`eps` boxes crossed by the polygonal line through
/// consecutive points. Segments flagged `false` in `joined` (one flag per
/// consecutive pair) are not drawn; their endpoints still count.
pub fn polygonal_boxes(points: &[f64], dim: usize, eps: f64, joined: &[bool]) -> usize {
    let mut cells: HashSet<Vec<i64>> = HashSet::with_capacity(points.len() / dim.max(1));
    let cell = |p: &[f64]| -> Vec<i64> { p.iter().map(|v| (v / eps).floor() as i64).collect() };
    let rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    let mut buf = vec![0.0; dim];
    for (i, p) in rows.iter().enumerate() {
        cells.insert(cell(p));
        if i + 1 == rows.len() || !joined[i] {
            continue;
        }
        let q = rows[i + 1];
        let steps = (crate::metrics::euclidean(p, q) / (0.25 * eps)).ceil() as usize;
        for k in 1..steps {
            let u = k as f64 / steps as f64;
            for c in 0..dim {
                buf[c] = p[c] + u * (q[c] - p[c]);
            }
            cells.insert(cell(&buf));
        }
    }
    cells.len()
}

/// Box-counting dimension of a sampled continuous path: boxes are counted
/// along the polygonal interpolation, over dyadic scales from a quarter of
/// the extent down to twice the median step (or the step itself when that
/// leaves too few scales).
pub fn box_dimension_polygonal(points: &[f64], dim: usize, joined: &[bool]) -> Result<DimensionEstimate> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::DimensionMismatch(points.len(), dim));
    }
    let n = points.len() / dim;
    if joined.len() + 1 != n.max(1) {
        return Err(Error::DimensionMismatch(joined.len() + 1, n));
    }
    let first = &points[..dim];
    if points.chunks_exact(dim).all(|p| p == first) {
        return Ok(DimensionEstimate::degenerate(DimensionMethod::BoxEuclidean));
    }
    let extent = (0..dim)
        .map(|c| {
            let col = points.iter().skip(c).step_by(dim);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max);
    let mut steps: Vec<f64> = points
        .chunks_exact(dim)
        .zip(points.chunks_exact(dim).skip(1))
        .zip(joined)
        .filter(|(_, j)| **j)
        .map(|((a, b), _)| crate::metrics::euclidean(a, b))
        .collect();
    steps.sort_by(f64::total_cmp);
    let step = steps.get(steps.len() / 2).copied().unwrap_or(0.0).max(extent * 1e-9);
    let dyadic = |floor: f64| -> Vec<f64> {
        let mut v = Vec::new();
        let mut eps = 0.25 * extent;
        while eps >= floor && v.len() < 60 {
            v.push(eps);
            eps *= 0.5;
        }
        v
    };
    let mut scales = dyadic(2.0 * step);
    if scales.len() < MIN_SCALES {
        scales = dyadic(step);
    }
    let counts: Vec<(f64, f64)> =
        scales.iter().map(|&e| (e, polygonal_boxes(points, dim, e, joined) as f64)).collect();
    let log2: Vec<f64> = counts.iter().map(|c| c.1.log2()).collect();
    slope_estimate(&scales, &log2, DimensionMethod::BoxEuclidean, counts)
}

/// Counts grow super-geometrically when the local slopes at least double
/// across the window and end above 4 tiles per level.
fn detect_divergence(log2_counts: &[f64]) -> bool {
    if log2_counts.len() < 3 {
        return false;
    }
    let local: Vec<f64> = log2_counts.windows(2).map(|w| w[1] - w[0]).collect();
    let first = local[0].max(1e-9);
    let last = *local.last().unwrap();
    let increasing = local.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    increasing && last >= 2.0 * first && last > 4.0
}

/// `δ`-dimension from `γ`-dyadic covering counts over levels `n_range`
/// (inclusive): slope of `log₂ N(n)` against `n`. Levels with fewer than two
/// tiles are skipped.
pub fn dim_delta_estimate(e: &TimeSet, f: &ScaleFunction, n_range: (u32, u32)) -> Result<DimensionEstimate> {
    let mut scales = Vec::new();
    let mut log2 = Vec::new();
    let mut counts = Vec::new();
    for n in n_range.0..=n_range.1 {
        let cover = gamma_dyadic_cover(e, n, f)?;
        let scale = (-(n as f64)).exp2();
        counts.push((scale, cover.log2_count.exp2()));
        if cover.log2_count >= 1.0 {
            scales.push(scale);
            log2.push(cover.log2_count);
        }
    }
    if detect_divergence(&log2) {
        let lo = scales.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scales.iter().copied().fold(0.0, f64::max);
        return Ok(DimensionEstimate {
            value: f64::INFINITY,
            stderr: 0.0,
            window: (lo, hi),
            counts,
            method: DimensionMethod::GammaDyadic,
            diverged: true,
        });
    }
    slope_estimate(&scales, &log2, DimensionMethod::GammaDyadic, counts)
}

/// Default `γ`-dyadic levels for a time set: from the first level with at
/// least four tiles, twelve levels deep, stopping for Cantor sets and point
/// sets once tiles get within a factor 4 of the set's own resolution.
pub fn default_delta_levels(e: &TimeSet, f: &ScaleFunction) -> Result<(u32, u32)> {
    let resolution = match e {
        TimeSet::Cantor(c) => Some(c.interval_len(c.depth())),
        TimeSet::Points(p) => {
            let mut v = p.clone();
            v.sort_by(f64::total_cmp);
            v.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).reduce(f64::min)
        }
        _ => None,
    };
    let mut lo = 0;
    while lo < 200 && gamma_dyadic_cover(e, lo, f)?.log2_count < 2.0 {
        lo += 1;
    }
    let mut hi = lo;
    while hi < lo + 12 {
        let w = f.inverse_log(-((hi + 1) as f64) * std::f64::consts::LN_2)?.exp();
        if let Some(res) = resolution {
            if w < 4.0 * res {
                break;
            }
        }
        hi += 1;
    }
    Ok((lo, hi))
}

/// `ρ_δ`-dimension of `E × F` from products of `γ`-dyadic counts of `E` and
/// Euclidean box counts of `F` at the matching radius `2^{−n}`.
pub fn dim_rho_product(e: &TimeSet, f: &ScaleFunction, set_f: &SpatialSet, n_range: (u32, u32)) -> Result<DimensionEstimate> {
    set_f.validate()?;
    let mut scales = Vec::new();
    let mut log2 = Vec::new();
    let mut counts = Vec::new();
    for n in n_range.0..=n_range.1 {
        let cover = gamma_dyadic_cover(e, n, f)?;
        let scale = (-(n as f64)).exp2();
        let lf = set_f.box_count(scale).log2();
        let total = cover.log2_count + lf;
        counts.push((scale, total.exp2()));
        if total >= 1.0 {
            scales.push(scale);
            log2.push(total);
        }
    }
    let mut est = slope_estimate(&scales, &log2, DimensionMethod::ProductRho, counts)?;
    if detect_divergence(&log2) {
        est.value = f64::INFINITY;
        est.diverged = true;
    }
    Ok(est)
}

/// Simulation grid for a time set: uniform grids on intervals (split in
/// proportion to length for unions), the deepest-level atoms for Cantor sets
/// and the points themselves for point sets.
pub fn time_grid(e: &TimeSet, grid_n: usize) -> Result<Vec<f64>> {
    e.validate()?;
    let mut grid = match e {
        TimeSet::Interval { a, b } => uniform_grid(*a, *b, grid_n),
        TimeSet::Union(v) => {
            let total: f64 = v.iter().map(|(a, b)| b - a).sum();
            let mut g = Vec::new();
            for &(a, b) in v {
                let share = if total > 0.0 { ((b - a) / total * grid_n as f64).round() as usize } else { 1 };
                g.extend(uniform_grid(a, b, share.max(1)));
            }
            g
        }
        TimeSet::Cantor(c) => c.atoms()?,
        TimeSet::Points(p) => p.clone(),
    };
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() > MAX_GRID {
        return Err(Error::InvalidInput(format!("time grid of {} points exceeds {MAX_GRID}", grid.len())));
    }
    Ok(grid)
}

/// For time sets made of intervals, flags the consecutive grid pairs that
/// lie in the same interval; `None` for Cantor and point sets, whose samples
/// are not joined by path segments of the set.
pub fn contiguous_pairs(e: &TimeSet, grid: &[f64]) -> Option<Vec<bool>> {
    let intervals = match e {
        TimeSet::Interval { a, b } => vec![(*a, *b)],
        TimeSet::Union(v) => v.clone(),
        _ => return None,
    };
    let which = |t: f64| intervals.iter().position(|&(a, b)| a <= t && t <= b);
    Some(grid.windows(2).map(|w| which(w[0]).is_some() && which(w[0]) == which(w[1])).collect())
}

/// Exponent `H` of a power-type scale, or the lower index on a deep grid.
pub fn hurst_like_index(f: &ScaleFunction) -> Result<f64> {
    Ok(match f.family() {
        Family::Power { h } | Family::PowerLog { h, .. } | Family::PowerExpLog { h, .. } | Family::PowerLogRatio { h } => *h,
        _ => f.lower_index_report_log(&crate::scale::deep_log_grid(10.0, 1e6, 4))?.ind_lower,
    })
}

/// Configuration of the image-dimension experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageExperiment {
    pub gamma: ScaleFunction,
    pub e: TimeSet,
    pub d: usize,
    pub n_paths: usize,
    pub grid_n: usize,
    pub seed: u64,
    #[serde(default)]
    pub cov_model: CovModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageDimensionReport {
    pub gamma: String,
    pub d: usize,
    pub n_paths: usize,
    pub grid_points: usize,
    pub seed: u64,
    /// Whether boxes were counted along the polygonal path (interval `E`) or
    /// at the sample points only.
    pub polygonal: bool,
    pub per_path: Vec<DimensionEstimate>,
    pub mean: f64,
    pub std: f64,
    pub dim_delta_e: DimensionEstimate,
    /// `min(d, dim_δ(E))` from the estimate above.
    pub theory: f64,
}

impl ImageExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidInput("d must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be positive".into()));
        }
        self.e.validate()
    }

    pub fn run(&self) -> Result<ImageDimensionReport> {
        self.validate()?;
        let grid = time_grid(&self.e, self.grid_n)?;
        let cov = self.cov_model.build(&self.gamma, &grid)?;
        let sampler = PathSampler::new(&cov, self.d, self.seed)?;
        let joined = contiguous_pairs(&self.e, &grid);
        let per_path = par::map_range(self.n_paths, |p| {
            let path = sampler.sample(p);
            match joined {
                Some(ref j) => box_dimension_polygonal(&path, self.d, j),
                None => box_dimension_euclidean(&path, self.d, None),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = per_path.iter().map(|e| e.value).collect();
        let levels = default_delta_levels(&self.e, &self.gamma)?;
        let dim_delta_e = dim_delta_estimate(&self.e, &self.gamma, levels)?;
        Ok(ImageDimensionReport {
            gamma: self.gamma.to_string(),
            d: self.d,
            n_paths: self.n_paths,
            grid_points: grid.len(),
            seed: self.seed,
            polygonal: joined.is_some(),
            mean: stats::mean(&values),
            std: stats::std_dev(&values),
            theory: (self.d as f64).min(dim_delta_e.value),
            dim_delta_e,
            per_path,
        })
    }
}

/// Configuration of the random-intersection experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionExperiment {
    pub gamma: ScaleFunction,
    pub e: TimeSet,
    pub f: SpatialSet,
    pub d: usize,
    pub n_paths: usize,
    pub grid_n: usize,
    /// Spatial thickening of `F`.
    pub tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub cov_model: CovModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionPath {
    pub hits: usize,
    /// Box dimension of `{t ∈ E : dist(B(t), F) ≤ tol}`.
    pub dim_e_hat: Option<DimensionEstimate>,
    /// Box dimension of `B(Ê)`.
    pub dim_f_hat: Option<DimensionEstimate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub gamma: String,
    pub d: usize,
    pub n_paths: usize,
    pub grid_points: usize,
    pub tol: f64,
    pub seed: u64,
    pub hit_rate: f64,
    /// Set when no path met the thickened `F`; dimensions are then undefined.
    pub no_hits: bool,
    pub per_path: Vec<IntersectionPath>,
    /// Largest per-path `dim Ê`, standing in for the `L^∞(P)` norm.
    pub max_dim_e_hat: Option<f64>,
    pub max_dim_f_hat: Option<f64>,
    pub h_index: f64,
    pub dim_euc_e: DimensionEstimate,
    pub dim_euc_f: f64,
    pub dim_delta_e: DimensionEstimate,
    pub dim_rho_ef: DimensionEstimate,
    /// `dim_Euc(E) + H (dim_Euc(F) − d)`.
    pub lower_bound: f64,
    /// `H (dim_ρ(E×F) − d)`.
    pub upper_bound: f64,
}

/// Minimum number of points for a per-path dimension estimate.
const MIN_POINTS_FOR_DIM: usize = 32;

impl IntersectionExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidInput("d must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidInput("tol must be nonnegative".into()));
        }
        self.e.validate()?;
        self.f.validate()?;
        if self.f.dim() != self.d {
            return Err(Error::DimensionMismatch(self.f.dim(), self.d));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<IntersectionReport> {
        self.validate()?;
        let grid = time_grid(&self.e, self.grid_n)?;
        let cov = self.cov_model.build(&self.gamma, &grid)?;
        let sampler = PathSampler::new(&cov, self.d, self.seed)?;
        let d = self.d;
        let per_path = par::map_range(self.n_paths, |p| -> Result<IntersectionPath> {
            let path = sampler.sample(p);
            let mut times = Vec::new();
            let mut image = Vec::new();
            for (i, x) in path.chunks_exact(d).enumerate() {
                if self.f.dist(x) <= self.tol {
                    times.push(grid[i]);
                    image.extend_from_slice(x);
                }
            }
            let hits = times.len();
            let estimate = |pts: &[f64], dim: usize| -> Option<DimensionEstimate> {
                if hits < MIN_POINTS_FOR_DIM {
                    return None;
                }
                box_dimension_euclidean(pts, dim, None).ok()
            };
            Ok(IntersectionPath { hits, dim_e_hat: estimate(&times, 1), dim_f_hat: estimate(&image, d) })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let hit_paths = per_path.iter().filter(|p| p.hits > 0).count();
        let max_of = |sel: fn(&IntersectionPath) -> Option<f64>| {
            per_path.iter().filter_map(sel).reduce(f64::max)
        };
        let h_index = hurst_like_index(&self.gamma)?;
        let dim_euc_e = box_dimension_euclidean(&grid, 1, None)?;
        let dim_euc_f = self.f.euclidean_dim();
        let levels = default_delta_levels(&self.e, &self.gamma)?;
        let dim_delta_e = dim_delta_estimate(&self.e, &self.gamma, levels)?;
        let dim_rho_ef = dim_rho_product(&self.e, &self.gamma, &self.f, levels)?;
        Ok(IntersectionReport {
            gamma: self.gamma.to_string(),
            d,
            n_paths: self.n_paths,
            grid_points: grid.len(),
            tol: self.tol,
            seed: self.seed,
            hit_rate: hit_paths as f64 / self.n_paths as f64,
            no_hits: hit_paths == 0,
            max_dim_e_hat: max_of(|p| p.dim_e_hat.as_ref().map(|e| e.value)),
            max_dim_f_hat: max_of(|p| p.dim_f_hat.as_ref().map(|e| e.value)),
            per_path,
            h_index,
            lower_bound: dim_euc_e.value + h_index * (dim_euc_f - d as f64),
            upper_bound: h_index * (dim_rho_ef.value - d as f64),
            dim_euc_e,
            dim_euc_f,
            dim_delta_e,
            dim_rho_ef,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractal_sets::build_cantor;

    #[test]
    fn box_dimension_fixtures() {
        let seg: Vec<f64> = (0..2000).flat_map(|i| {
            let s = i as f64 / 1999.0;
            [0.3 * s, 0.1 + 0.7 * s]
        }).collect();
        let e = box_dimension_euclidean(&seg, 2, None).unwrap();
        assert!((e.value - 1.0).abs() < 0.1, "{e:?}");
        assert!(e.counts.len() >= MIN_SCALES);

        let single = vec![0.4, 0.2];
        assert_eq!(box_dimension_euclidean(&single, 2, None).unwrap().value, 0.0);

        let m = 64;
        let sq: Vec<f64> = (0..m * m).flat_map(|k| [(k / m) as f64 / m as f64, (k % m) as f64 / m as f64]).collect();
        let scales: Vec<f64> = (1..=5).map(|k| 2f64.powi(-k)).collect();
        let e = box_dimension_euclidean(&sq, 2, Some(&scales)).unwrap();
        assert!((e.value - 2.0).abs() < 0.1, "{e:?}");
    }

    #[test]
    fn delta_dimension_of_intervals() {
        for h in [0.5, 0.75] {
            let f = ScaleFunction::power(h).unwrap();
            let e = TimeSet::Interval { a: 0.2, b: 1.0 };
            let lv = default_delta_levels(&e, &f).unwrap();
            let est = dim_delta_estimate(&e, &f, lv).unwrap();
            assert!((est.value - 1.0 / h).abs() < 0.05, "H = {h}: {est:?}");
        }
    }

    #[test]
    fn delta_dimension_diverges_on_log_scale() {
        let f = ScaleFunction::log_scale(1.0).unwrap();
        let e = TimeSet::Interval { a: 0.2, b: 0.5 };
        let est = dim_delta_estimate(&e, &f, (2, 10)).unwrap();
        assert!(est.diverged && est.value.is_infinite());
    }

    #[test]
    fn delta_dimension_of_cantor_sets() {
        let f = ScaleFunction::power(0.5).unwrap();
        for zeta in [0.5, 1.0] {
            let c = build_cantor(&f, zeta, 12, 1.0).unwrap();
            let e = TimeSet::Cantor(c);
            let lv = default_delta_levels(&e, &f).unwrap();
            let est = dim_delta_estimate(&e, &f, lv).unwrap();
            assert!((est.value - zeta).abs() < 0.05, "zeta = {zeta}: {lv:?} {est:?}");
        }
    }

    #[test]
    fn product_dimension_sandwich() {
        let f = ScaleFunction::power(0.5).unwrap();
        let e = TimeSet::Interval { a: 0.2, b: 1.0 };
        let lv = default_delta_levels(&e, &f).unwrap();
        let de = dim_delta_estimate(&e, &f, lv).unwrap();
        for set in [
            SpatialSet::Box { lo: vec![0.0], hi: vec![0.2] },
            SpatialSet::Point(vec![0.1, 0.1]),
            SpatialSet::Box { lo: vec![0.0, 0.0], hi: vec![0.5, 0.5] },
        ] {
            let p = dim_rho_product(&e, &f, &set, lv).unwrap();
            let target = de.value + set.euclidean_dim();
            let slack = 2.0 * (p.stderr + de.stderr) + 0.05;
            assert!((p.value - target).abs() <= slack, "{set:?}: {} vs {target}", p.value);
        }
    }

    #[test]
    fn sub_and_superset_monotonicity() {
        let f = ScaleFunction::power(0.5).unwrap();
        let big = TimeSet::Interval { a: 0.2, b: 1.0 };
        let c = build_cantor(&f, 1.0, 10, 1.0).unwrap();
        let small = TimeSet::Cantor(c);
        let lv = default_delta_levels(&small, &f).unwrap();
        let a = dim_delta_estimate(&small, &f, lv).unwrap();
        let b = dim_delta_estimate(&big, &f, default_delta_levels(&big, &f).unwrap()).unwrap();
        assert!(a.value <= b.value + 2.0 * a.stderr);
    }
}
