//! Monte Carlo hitting and small-ball probabilities, greedy Hausdorff
//! content covers, and the capacity / content sandwich over a battery.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditions::f_gamma;
use crate::dimension::{contiguous_pairs, default_delta_levels, dim_rho_product, time_grid};
use crate::energy::{CapacityProblem, CapacityReport, CapacityVerdict, MinimizerOptions};
use crate::error::{Error, Result};
use crate::fractal_sets::{SpatialSet, TimeSet};
use crate::gp_sim::{substream, CovModel, PathSampler};
use crate::linalg::cholesky_with_jitter;
use crate::metrics::euclidean;
use crate::par;
use crate::scale::ScaleFunction;
use crate::stats::{fit_line_weighted, wilson_interval};

/// Normal quantile of the reported 95% intervals.
const Z95: f64 = 1.959_963_984_540_054;

/// One `(E, F)` hitting instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HitProblem {
    pub gamma: ScaleFunction,
    #[serde(default)]
    pub cov_model: CovModel,
    #[serde(alias = "E")]
    pub e: TimeSet,
    #[serde(alias = "F")]
    pub f: SpatialSet,
    pub d: usize,
    pub tol: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

fn default_grid_n() -> usize {
    1024
}

impl HitProblem {
    pub fn validate(&self) -> Result<()> {
        self.e.validate()?;
        self.f.validate()?;
        if self.f.dim() != self.d {
            return Err(Error::DimensionMismatch(self.f.dim(), self.d));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tol must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Key of the path ensemble; instances with equal keys share paths.
    fn ensemble_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.gamma,
            serde_json::to_string(&self.cov_model).unwrap_or_default(),
            serde_json::to_string(&self.e).unwrap_or_default(),
            self.d,
            self.n_paths,
            self.seed,
            self.grid_n
        )
    }
}

/// Displacement bounds between neighbouring grid times.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridGuard {
    /// Largest time step between neighbouring grid points of `E`.
    pub step: f64,
    /// `γ(step)·√d`: typical displacement over one step. Enforced.
    pub pointwise: f64,
    /// `3γ(step)·√(2 log n)·√d`: uniform modulus over the whole grid.
    /// Reported only.
    pub uniform: f64,
}

pub fn grid_guard(f: &ScaleFunction, e: &TimeSet, grid: &[f64], d: usize) -> Result<GridGuard> {
    let step = match e {
        TimeSet::Cantor(c) => 0.5 * c.interval_len(c.depth()),
        TimeSet::Points(_) => 0.0,
        _ => {
            let joined = contiguous_pairs(e, grid).unwrap_or_default();
            grid.windows(2).zip(&joined).filter(|(_, j)| **j).map(|(w, _)| w[1] - w[0]).fold(0.0, f64::max)
        }
    };
    let g = if step > 0.0 { f.eval(step.min(f.x_max()))? } else { 0.0 };
    let sd = (d as f64).sqrt();
    let n = grid.len().max(2) as f64;
    Ok(GridGuard { step, pointwise: g * sd, uniform: 3.0 * g * (2.0 * n.ln()).sqrt() * sd })
}

/// For each set, the per-path minimum over grid times of `dist(B(t), F)`,
/// indexed `[set][path]`.
pub fn path_min_distances(
    f: &ScaleFunction,
    cov_model: &CovModel,
    grid: &[f64],
    d: usize,
    n_paths: usize,
    seed: u64,
    sets: &[SpatialSet],
) -> Result<Vec<Vec<f64>>> {
    let cov = cov_model.build(f, grid)?;
    let sampler = PathSampler::new(&cov, d, seed)?;
    let n = grid.len();
    let per_path: Vec<Vec<f64>> = par::map_range(n_paths, |p| {
        let path = sampler.sample(p);
        sets.iter()
            .map(|s| (0..n).map(|t| s.dist(&path[t * d..(t + 1) * d])).fold(f64::INFINITY, f64::min))
            .collect()
    });
    Ok((0..sets.len()).map(|k| per_path.iter().map(|row| row[k]).collect()).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HitProbReport {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hits: usize,
    pub n_paths: usize,
    pub tol: f64,
    pub grid_n: usize,
    pub guard: GridGuard,
    pub e: TimeSet,
    pub f: SpatialSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_term: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_verdict: Option<CapacityVerdict>,
    /// Verdict of the energy sweep alone (battery rows only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_verdict: Option<CapacityVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_term: Option<f64>,
}

fn hit_report(p: &HitProblem, grid_n: usize, guard: GridGuard, min_dist: &[f64]) -> HitProbReport {
    let hits = min_dist.iter().filter(|&&m| m <= p.tol).count();
    let (lo, hi) = wilson_interval(hits, min_dist.len(), Z95);
    HitProbReport {
        p_hat: hits as f64 / min_dist.len() as f64,
        ci_low: lo,
        ci_high: hi,
        hits,
        n_paths: min_dist.len(),
        tol: p.tol,
        grid_n,
        guard,
        e: p.e.clone(),
        f: p.f.clone(),
        capacity_term: None,
        capacity_verdict: None,
        sweep_verdict: None,
        content_term: None,
    }
}

fn checked_grid(p: &HitProblem) -> Result<(Vec<f64>, GridGuard)> {
    p.validate()?;
    let grid = time_grid(&p.e, p.grid_n)?;
    let guard = grid_guard(&p.gamma, &p.e, &grid, p.d)?;
    if p.tol < guard.pointwise {
        return Err(Error::GridTooCoarse { tol: p.tol, guard: guard.pointwise });
    }
    Ok((grid, guard))
}

/// Fraction of paths with `min_{t ∈ E grid} dist(B(t), F) ≤ tol`, with a
/// Wilson interval. Capacity and content terms are left empty; see
/// [`hit_probability_mc`].
pub fn hit_probability_only(p: &HitProblem) -> Result<HitProbReport> {
    let (grid, guard) = checked_grid(p)?;
    let md = path_min_distances(&p.gamma, &p.cov_model, &grid, p.d, p.n_paths, p.seed, std::slice::from_ref(&p.f))?;
    Ok(hit_report(p, grid.len(), guard, &md[0]))
}

/// Hitting probability together with the capacity term `C_{ρ_δ,d}(E×F)` and
/// the content term `H^d_{ρ_δ}(E×F)`.
pub fn hit_probability_mc(p: &HitProblem, terms: &TermOptions) -> Result<HitProbReport> {
    let mut rep = hit_probability_only(p)?;
    let (cap, verdict, _) = capacity_term(p, terms)?;
    rep.capacity_term = Some(cap);
    rep.capacity_verdict = Some(verdict);
    rep.content_term = Some(hausdorff_content_estimate(&p.e, &p.f, p.d as f64, &p.gamma, &terms.content)?.content);
    Ok(rep)
}

/// Settings for the capacity and content terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermOptions {
    /// Resolutions are `D / k` for `D` the `ρ_δ`-diameter of `E × F`.
    #[serde(default = "default_divisors")]
    pub resolution_divisors: Vec<f64>,
    #[serde(default = "default_time_pool")]
    pub time_pool: usize,
    #[serde(default = "default_space_pool")]
    pub space_pool: usize,
    #[serde(default)]
    pub minimizer: MinimizerOptions,
    #[serde(default)]
    pub content: ContentOptions,
}

fn default_divisors() -> Vec<f64> {
    vec![4.0, 4.0 * std::f64::consts::SQRT_2, 8.0]
}

fn default_time_pool() -> usize {
    256
}

fn default_space_pool() -> usize {
    11
}

impl Default for TermOptions {
    fn default() -> Self {
        TermOptions {
            resolution_divisors: default_divisors(),
            time_pool: default_time_pool(),
            space_pool: default_space_pool(),
            minimizer: MinimizerOptions::default(),
            content: ContentOptions::default(),
        }
    }
}

/// `ρ_δ`-diameter of `E × F` under the stationary metric.
pub fn rho_diameter(f: &ScaleFunction, e: &TimeSet, set_f: &SpatialSet) -> Result<f64> {
    let (a, b) = e.hull()?;
    let dt = (b - a).min(f.x_max());
    let g = if dt > 0.0 { f.eval(dt)? } else { 0.0 };
    Ok(g.max(set_f.diameter()))
}

/// Capacity of order `d` of `E × F`: the extrapolated value when positive,
/// zero for a zero verdict, the finest estimate when inconclusive.
pub fn capacity_term(p: &HitProblem, terms: &TermOptions) -> Result<(f64, CapacityVerdict, CapacityReport)> {
    let diam = rho_diameter(&p.gamma, &p.e, &p.f)?;
    if diam == 0.0 {
        return Err(Error::InvalidInput("E × F is a single point".into()));
    }
    let problem = CapacityProblem {
        gamma: p.gamma.clone(),
        e: p.e.clone(),
        f: Some(p.f.clone()),
        beta: p.d as f64,
        resolutions: terms.resolution_divisors.iter().map(|k| diam / k).collect(),
        pool: terms.time_pool,
        space_pool: terms.space_pool,
        minimizer: terms.minimizer.clone(),
    };
    let rep = problem.run()?;
    let value = match rep.extrapolated {
        CapacityVerdict::Positive { capacity } => capacity,
        CapacityVerdict::Zero => 0.0,
        CapacityVerdict::Inconclusive => *rep.capacity_estimates.last().unwrap(),
    };
    Ok((value, rep.extrapolated.clone(), rep))
}

/// Grid used by the greedy content cover.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContentOptions {
    #[serde(default = "default_menu_levels")]
    pub menu_levels: usize,
    #[serde(default = "default_content_times")]
    pub time_points: usize,
    #[serde(default = "default_content_space")]
    pub space_per_axis: usize,
}

fn default_menu_levels() -> usize {
    6
}

fn default_content_times() -> usize {
    64
}

fn default_content_space() -> usize {
    7
}

impl Default for ContentOptions {
    fn default() -> Self {
        ContentOptions {
            menu_levels: default_menu_levels(),
            time_points: default_content_times(),
            space_per_axis: default_content_space(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContentEstimate {
    /// `min` over menu prefixes of the greedy `Σ (2r_i)^s`.
    pub content: f64,
    /// Dyadic radius menu, coarse to fine.
    pub menu: Vec<f64>,
    /// Greedy total using the first `k+1` menu radii.
    pub prefix_contents: Vec<f64>,
    /// Smallest admissible radius: twice the grid spacing in `ρ_δ`.
    pub floor: f64,
}

/// Upper bound on the `s`-dimensional `ρ_δ` Hausdorff content of `E × F`,
/// from greedy covers of a finite grid of `E × F`. Each ball is anchored at
/// the first uncovered point (time-major order) and its radius is taken from
/// the menu to minimise `(2r)^s` per newly covered point. Radii below twice
/// the grid spacing are excluded, so the cover never resolves the grid
/// rather than the set.
pub fn hausdorff_content_estimate(
    e: &TimeSet,
    set_f: &SpatialSet,
    s: f64,
    f: &ScaleFunction,
    opts: &ContentOptions,
) -> Result<ContentEstimate> {
    set_f.validate()?;
    let mut times = time_grid(e, opts.time_points.max(2))?;
    let cap = opts.time_points.max(2);
    if times.len() > cap {
        let stride = times.len().div_ceil(cap);
        times = times.into_iter().step_by(stride).collect();
    }
    let space = set_f.grid_points(opts.space_per_axis);
    let r0 = rho_diameter(f, e, set_f)?;
    if r0 == 0.0 || space.is_empty() {
        return Ok(ContentEstimate { content: 0.0, menu: Vec::new(), prefix_contents: Vec::new(), floor: 0.0 });
    }
    let dt = match e {
        TimeSet::Cantor(c) => c.interval_len(c.depth()),
        TimeSet::Points(_) => 0.0,
        _ => times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
    };
    let dx = match set_f {
        SpatialSet::Point(_) => 0.0,
        _ => {
            let (lo, hi) = set_f.bounding_box();
            let side = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
            side / (opts.space_per_axis.max(2) - 1) as f64
        }
    };
    let floor = 2.0 * (if dt > 0.0 { f.eval(dt.min(f.x_max()))? } else { 0.0 }).max(dx);
    let menu: Vec<f64> = (0..=opts.menu_levels)
        .map(|k| r0 * (-(k as f64)).exp2())
        .take_while(|&r| r >= floor || r == r0)
        .collect();
    // time half-widths and spatial neighbour lists per menu radius
    let widths: Vec<f64> = menu
        .iter()
        .map(|&r| if r >= f.gamma_max() { f64::INFINITY } else { f.inverse(r, 0.0).unwrap_or(0.0) })
        .collect();
    let nbrs: Vec<Vec<Vec<usize>>> = menu
        .iter()
        .map(|&r| {
            (0..space.len())
                .map(|i| (0..space.len()).filter(|&j| euclidean(&space[i], &space[j]) <= r * (1.0 + 1e-12)).collect())
                .collect()
        })
        .collect();
    let prefix_contents: Vec<f64> = par::map_range(menu.len(), |k| {
        greedy_cover(&times, space.len(), &menu[..=k], &widths[..=k], &nbrs[..=k], s)
    });
    let content = prefix_contents.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ContentEstimate { content, menu, prefix_contents, floor })
}

fn greedy_cover(times: &[f64], n_space: usize, menu: &[f64], widths: &[f64], nbrs: &[Vec<Vec<usize>>], s: f64) -> f64 {
    let nt = times.len();
    let mut covered = vec![false; nt * n_space];
    let mut total = 0.0;
    let span = |k: usize, ti: usize| {
        let hi = times[ti] + 2.0 * widths[k];
        ti..times.partition_point(|&t| t <= hi)
    };
    for anchor in 0..nt * n_space {
        if covered[anchor] {
            continue;
        }
        let (ti, xi) = (anchor / n_space, anchor % n_space);
        let mut best = (f64::INFINITY, 0);
        for k in 0..menu.len() {
            let fresh: usize = span(k, ti)
                .map(|t| nbrs[k][xi].iter().filter(|&&y| !covered[t * n_space + y]).count())
                .sum();
            let cost = (2.0 * menu[k]).powf(s) / fresh.max(1) as f64;
            if cost < best.0 {
                best = (cost, k);
            }
        }
        let k = best.1;
        for t in span(k, ti) {
            for &y in &nbrs[k][xi] {
                covered[t * n_space + y] = true;
            }
        }
        total += (2.0 * menu[k]).powf(s);
    }
    total
}

/// Small-ball experiment around a fixed time `t0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallBall {
    pub gamma: ScaleFunction,
    #[serde(default)]
    pub cov_model: CovModel,
    pub t0: f64,
    /// Target point; its length is the spatial dimension.
    pub z: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_window_points")]
    pub window_points: usize,
}

fn default_window_points() -> usize {
    33
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub r: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hits: usize,
    pub n_paths: usize,
    /// `ln` of the time half-width `γ⁻¹(r)` of the `δ`-ball.
    pub log_half_width: f64,
    pub points: usize,
    pub r_pow_d: f64,
    /// `(r + f_γ(r))^d`, when `f_γ(r)` is defined.
    pub fgamma_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallBallSweep {
    pub reports: Vec<SmallBallReport>,
    /// Weighted slope of `ln p̂` against `ln r` over radii with hits.
    pub slope: f64,
    pub stderr: f64,
}

/// Joint covariance of `B(t0)` and the increments `B(t0+u_j) − B(t0)` for
/// stationary increments, with offsets `u_j = e^{log_w}·c_j`. Everything is
/// evaluated through `log γ`, so half-widths far below `f64` resolution of
/// `t0` are handled exactly.
fn local_increment_cov(f: &ScaleFunction, t0: f64, log_w: f64, c: &[f64]) -> Result<Vec<f64>> {
    let g2 = |log_abs: f64| (2.0 * f.log_gamma_at_log(log_abs)).exp();
    let gt0 = f.value(t0);
    let dgt0 = f.derivative(t0)?;
    let w = log_w.exp();
    let m = c.len() + 1;
    let mut k = vec![0.0; m * m];
    k[0] = gt0 * gt0;
    let g2u: Vec<f64> = c.iter().map(|&cj| g2(log_w + cj.abs().ln())).collect();
    for (j, &cj) in c.iter().enumerate() {
        let u = w * cj;
        let shift = if u.abs() >= 1e-8 * t0 {
            f.value(t0 + u).powi(2) - gt0 * gt0
        } else {
            2.0 * gt0 * dgt0 * u
        };
        let v = 0.5 * (shift - g2u[j]);
        k[j + 1] = v;
        k[(j + 1) * m] = v;
        for (i, &ci) in c.iter().enumerate() {
            let gd = if i == j { 0.0 } else { g2(log_w + (ci - cj).abs().ln()) };
            k[(j + 1) * m + i + 1] = 0.5 * (g2u[i] + g2u[j] - gd);
        }
    }
    Ok(k)
}

impl SmallBall {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 < self.gamma.x_max()) {
            return Err(Error::Domain(format!("t0 must lie in (0, x_max), got {}", self.t0)));
        }
        if self.z.is_empty() || self.n_paths == 0 || self.window_points < 3 {
            return Err(Error::InvalidInput("small ball needs d >= 1, n_paths >= 1, window_points >= 3".into()));
        }
        Ok(())
    }

    /// Offsets `c_j ∈ [−1, 1] \ {0}` of the window grid, clipped to `(0, x_max]`.
    fn offsets(&self, log_w: f64) -> Vec<f64> {
        let w = log_w.exp();
        let lo = if w > 0.0 { (-self.t0 / w * (1.0 - 1e-9)).max(-1.0) } else { -1.0 };
        let hi = if w > 0.0 { ((self.gamma.x_max() - self.t0) / w).min(1.0) } else { 1.0 };
        let m = self.window_points;
        let mut c: Vec<f64> = (0..m).map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64).collect();
        c.retain(|v| v.abs() > 1e-12);
        c
    }

    /// `P{inf_{s ∈ B_δ(t0, r)} ‖B(s) − z‖ ≤ r}` on a window grid.
    pub fn estimate(&self, r: f64) -> Result<SmallBallReport> {
        self.validate()?;
        if !(r > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {r}")));
        }
        let f = &self.gamma;
        let d = self.z.len();
        let log_w = if r >= f.gamma_max() { f.log_x_max() } else { f.inverse_log(r.ln())? };
        let c = self.offsets(log_w);
        if c.is_empty() {
            return Err(Error::EmptyBall(format!("no grid points in the δ-ball of radius {r} at {}", self.t0)));
        }
        let m = c.len() + 1;
        // factor of the joint law of (B(t0), increments)
        let (chol, absolute) = match self.cov_model {
            CovModel::StationaryIncrements => (cholesky_with_jitter(&local_increment_cov(f, self.t0, log_w, &c)?, m)?, false),
            model => {
                let w = log_w.exp();
                let mut grid: Vec<f64> = std::iter::once(self.t0).chain(c.iter().map(|cj| self.t0 + w * cj)).collect();
                let sorted = {
                    let mut g = grid.clone();
                    g.sort_by(f64::total_cmp);
                    g.dedup();
                    g
                };
                if sorted.len() != m {
                    return Err(Error::EmptyBall(format!(
                        "δ-ball of radius {r} is narrower than the time resolution at {}",
                        self.t0
                    )));
                }
                grid = sorted;
                let cov = model.build(f, &grid)?;
                (cov.factor()?.clone(), true)
            }
        };
        let r2 = r * r;
        let hit: Vec<bool> = par::map_range(self.n_paths, |p| {
            let mut dist2 = vec![0.0; m];
            let mut zv = vec![0.0; m];
            let mut x = vec![0.0; m];
            for comp in 0..d {
                let mut rng = substream(self.seed, p, comp);
                for v in zv.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                chol.mul_vec(&zv, &mut x);
                for j in 0..m {
                    let b = if absolute || j == 0 { x[j] } else { x[0] + x[j] };
                    let diff = b - self.z[comp];
                    dist2[j] += diff * diff;
                }
            }
            dist2.iter().any(|&v| v <= r2)
        });
        let hits = hit.iter().filter(|&&h| h).count();
        let (lo, hi) = wilson_interval(hits, self.n_paths, Z95);
        let fg = f_gamma(f, r, self.cov_model.default_l()).ok();
        Ok(SmallBallReport {
            r,
            p_hat: hits as f64 / self.n_paths as f64,
            ci_low: lo,
            ci_high: hi,
            hits,
            n_paths: self.n_paths,
            log_half_width: log_w,
            points: m,
            r_pow_d: r.powi(d as i32),
            fgamma_bound: fg.map(|v| (r + v).powi(d as i32)),
        })
    }

    pub fn sweep(&self, radii: &[f64]) -> Result<SmallBallSweep> {
        let reports = radii.iter().map(|&r| self.estimate(r)).collect::<Result<Vec<_>>>()?;
        let (slope, stderr) = weighted_log_slope(
            reports.iter().map(|r| (r.r, r.p_hat, r.hits)),
        )
        .unwrap_or((f64::NAN, f64::NAN));
        Ok(SmallBallSweep { reports, slope, stderr })
    }
}

/// Slope of `ln p` against `ln x` with binomial inverse-variance weights
/// `hits / (1 − p)`; points without hits are skipped.
fn weighted_log_slope(rows: impl Iterator<Item = (f64, f64, usize)>) -> Option<(f64, f64)> {
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (r, p, hits) in rows {
        if hits > 0 && p < 1.0 {
            x.push(r.ln());
            y.push(p.ln());
            w.push(hits as f64 / (1.0 - p));
        }
    }
    fit_line_weighted(&x, &y, &w).map(|fit| (fit.slope, fit.stderr))
}

/// `small_ball_mc` as a single call.
pub fn small_ball_mc(
    gamma: &ScaleFunction,
    cov_model: CovModel,
    t0: f64,
    r: f64,
    z: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    SmallBall { gamma: gamma.clone(), cov_model, t0, z: z.to_vec(), n_paths, seed, window_points: default_window_points() }
        .estimate(r)
}

/// A battery of hitting instances sharing `γ` and `d`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Battery {
    pub instances: Vec<HitProblem>,
    #[serde(default = "default_critical_band")]
    pub critical_band: f64,
    #[serde(default)]
    pub terms: TermOptions,
}

fn default_critical_band() -> f64 {
    0.15
}

/// Minimum battery size for fitting the sandwich constants.
pub const MIN_BATTERY: usize = 6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichRow {
    pub index: usize,
    pub hit: HitProbReport,
    /// `ρ_δ`-dimension estimate of `E × F`.
    pub dim_rho: f64,
    /// `|dim_rho − d| ≤ band`: the theory gives no information here.
    pub critical: bool,
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Positive capacity iff the interval for `p` excludes zero; `None`
    /// when the capacity verdict is inconclusive.
    pub orientation_ok: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiusScaling {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub gamma: ScaleFunction,
    pub d: usize,
    pub rows: Vec<SandwichRow>,
    /// Largest constant with `Ĉ₁·capacity ≤ p̂` on every non-critical row.
    pub c1: f64,
    /// Smallest constant with `p̂ ≤ Ĉ₂·content` on every non-critical row.
    pub c2: f64,
    pub pass: bool,
    /// Ball-radius exponent of `p̂` over the largest family of concentric
    /// balls (at least three radii).
    pub radius_scaling: Option<RadiusScaling>,
    /// `max diam(E) / (b − a)` with `[a, b]` the hull of all time sets.
    pub diam_e_ratio: f64,
}

/// Fits the sandwich constants over rows that already carry capacity and
/// content terms, and checks the bounds jointly.
pub fn sandwich_report(gamma: &ScaleFunction, d: usize, rows: Vec<SandwichRow>) -> Result<SandwichReport> {
    if rows.len() < MIN_BATTERY {
        return Err(Error::InvalidInput(format!("battery has {} instances, needs {MIN_BATTERY}", rows.len())));
    }
    let positive = |r: &SandwichRow| matches!(r.hit.capacity_verdict, Some(CapacityVerdict::Positive { .. }));
    let active: Vec<&SandwichRow> = rows.iter().filter(|r| !r.critical).collect();
    let c1 = active
        .iter()
        .filter(|r| positive(r))
        .map(|r| r.hit.p_hat / r.hit.capacity_term.unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    let c1 = if c1.is_finite() { c1 } else { 0.0 };
    let c2 = active
        .iter()
        .map(|r| {
            let content = r.hit.content_term.unwrap_or(0.0);
            if r.hit.p_hat == 0.0 {
                0.0
            } else if content > 0.0 {
                r.hit.p_hat / content
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let mut rows = rows;
    for row in rows.iter_mut() {
        let h = &row.hit;
        let cap = h.capacity_term.unwrap_or(0.0);
        row.lower_ok = !positive(row) || c1 * cap <= h.ci_high * (1.0 + 1e-12);
        row.upper_ok = h.p_hat <= c2 * h.content_term.unwrap_or(0.0) * (1.0 + 1e-12);
        row.orientation_ok = match h.capacity_verdict {
            Some(CapacityVerdict::Positive { .. }) => Some(h.ci_low > 0.0),
            Some(CapacityVerdict::Zero) => Some(h.hits == 0),
            _ => None,
        };
    }
    let pass = c2.is_finite()
        && (c1 > 0.0 || !rows.iter().any(|r| !r.critical && positive(r)))
        && rows.iter().filter(|r| !r.critical).all(|r| r.lower_ok && r.upper_ok && r.orientation_ok != Some(false));
    let radius_scaling = radius_scaling(&rows);
    let hulls: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.hit.e.hull().ok()).collect();
    let a = hulls.iter().map(|h| h.0).fold(f64::INFINITY, f64::min).min(0.0);
    let b = hulls.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
    let diam_e_ratio = hulls.iter().map(|h| (h.1 - h.0) / (b - a)).fold(0.0, f64::max);
    Ok(SandwichReport { gamma: gamma.clone(), d, rows, c1, c2, pass, radius_scaling, diam_e_ratio })
}

fn radius_scaling(rows: &[SandwichRow]) -> Option<RadiusScaling> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<(f64, f64, usize)>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.critical) {
        if let SpatialSet::Ball { center, radius } = &r.hit.f {
            let key = format!("{center:?}");
            let g = groups.entry(key).or_insert_with(|| (center.clone(), Vec::new()));
            g.1.push((*radius, r.hit.p_hat, r.hit.hits));
        }
    }
    let (center, pts) = groups.into_values().max_by_key(|g| g.1.len())?;
    if pts.len() < 3 {
        return None;
    }
    let (slope, stderr) = weighted_log_slope(pts.iter().copied())?;
    Some(RadiusScaling { center, radii: pts.iter().map(|p| p.0).collect(), slope, stderr })
}

/// Capacity verdict of a battery row. Off the critical band the dimension
/// decides (dimension above `d` forces positive capacity, below forces
/// zero) and the sweep only supplies the magnitude: at the resolutions an
/// energy sweep can afford in high `ρ_δ`-dimension its increments are still
/// pre-asymptotic. Inside the band the sweep verdict stands.
fn dimension_verdict(
    dim: f64,
    d: f64,
    band: f64,
    sweep_value: f64,
    finest: f64,
    sweep: &CapacityVerdict,
) -> (f64, CapacityVerdict) {
    if dim > d + band {
        let c = match sweep {
            CapacityVerdict::Positive { capacity } => *capacity,
            _ => finest,
        };
        (c, CapacityVerdict::Positive { capacity: c })
    } else if dim < d - band {
        (0.0, CapacityVerdict::Zero)
    } else {
        (sweep_value, sweep.clone())
    }
}

/// Runs every instance (sharing paths between instances with the same
/// ensemble), attaches the capacity and content terms and fits the sandwich.
pub fn run_battery(b: &Battery) -> Result<SandwichReport> {
    let first = b.instances.first().ok_or_else(|| Error::InvalidInput("empty battery".into()))?;
    if b.instances.len() < MIN_BATTERY {
        return Err(Error::InvalidInput(format!("battery has {} instances, needs {MIN_BATTERY}", b.instances.len())));
    }
    for p in &b.instances {
        if p.d != first.d || p.gamma != first.gamma {
            return Err(Error::InvalidInput("battery instances must share gamma and d".into()));
        }
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in b.instances.iter().enumerate() {
        groups.entry(p.ensemble_key()).or_default().push(i);
    }
    let mut hits: Vec<Option<HitProbReport>> = vec![None; b.instances.len()];
    for idx in groups.values() {
        let p0 = &b.instances[idx[0]];
        let mut checked = Vec::with_capacity(idx.len());
        for &i in idx {
            checked.push(checked_grid(&b.instances[i])?);
        }
        let (grid, _) = &checked[0];
        let sets: Vec<SpatialSet> = idx.iter().map(|&i| b.instances[i].f.clone()).collect();
        let md = path_min_distances(&p0.gamma, &p0.cov_model, grid, p0.d, p0.n_paths, p0.seed, &sets)?;
        for (k, &i) in idx.iter().enumerate() {
            hits[i] = Some(hit_report(&b.instances[i], grid.len(), checked[k].1, &md[k]));
        }
    }
    let terms: Vec<Result<(f64, CapacityVerdict, CapacityVerdict, f64, f64)>> = par::map_slice(&b.instances, |p| {
        let (cap, sweep, rep) = capacity_term(p, &b.terms)?;
        let content = hausdorff_content_estimate(&p.e, &p.f, p.d as f64, &p.gamma, &b.terms.content)?.content;
        let levels = default_delta_levels(&p.e, &p.gamma)?;
        let dim = dim_rho_product(&p.e, &p.gamma, &p.f, levels)?.value;
        let finest = *rep.capacity_estimates.last().unwrap();
        let (cap, verdict) = dimension_verdict(dim, p.d as f64, b.critical_band, cap, finest, &sweep);
        Ok((cap, verdict, sweep, content, dim))
    });
    let mut rows = Vec::with_capacity(b.instances.len());
    for (i, (t, h)) in terms.into_iter().zip(hits).enumerate() {
        let (cap, verdict, sweep, content, dim) = t?;
        let mut hit = h.expect("every instance belongs to a group");
        hit.capacity_term = Some(cap);
        hit.capacity_verdict = Some(verdict);
        hit.sweep_verdict = Some(sweep);
        hit.content_term = Some(content);
        rows.push(SandwichRow {
            index: i,
            hit,
            dim_rho: dim,
            critical: (dim - first.d as f64).abs() <= b.critical_band,
            lower_ok: false,
            upper_ok: false,
            orientation_ok: None,
        });
    }
    sandwich_report(&first.gamma, first.d, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use proptest::prelude::*;
    use statrs::function::erf::erfc;

    fn bm() -> ScaleFunction {
        ScaleFunction::power(0.5).unwrap()
    }

    fn problem(f: SpatialSet, d: usize, tol: f64, grid_n: usize, n_paths: usize) -> HitProblem {
        HitProblem {
            gamma: bm(),
            cov_model: CovModel::StationaryIncrements,
            e: TimeSet::Interval { a: 0.5, b: 1.0 },
            f,
            d,
            tol,
            n_paths,
            seed: 3,
            grid_n,
        }
    }

    #[test]
    fn whole_window_is_always_hit() {
        let f = SpatialSet::Box { lo: vec![-50.0, -50.0], hi: vec![50.0, 50.0] };
        let rep = hit_probability_only(&problem(f, 2, 0.1, 128, 200)).unwrap();
        assert_eq!(rep.p_hat, 1.0);
        assert!(rep.ci_low <= rep.p_hat && rep.p_hat <= rep.ci_high);
    }

    #[test]
    fn grid_guard_is_enforced() {
        let f = SpatialSet::Point(vec![0.0]);
        let err = hit_probability_only(&problem(f.clone(), 1, 1e-3, 128, 10)).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { .. }), "{err}");
        let grid = time_grid(&TimeSet::Interval { a: 0.5, b: 1.0 }, 128).unwrap();
        let g = grid_guard(&bm(), &TimeSet::Interval { a: 0.5, b: 1.0 }, &grid, 1).unwrap();
        assert!((g.pointwise - (0.5f64 / 127.0).sqrt()).abs() < 1e-12);
        assert!(g.uniform > g.pointwise);
    }

    /// `P{B hits a point during [0.5, 1]}` for standard Brownian motion in
    /// one dimension: `E[erfc(|B(0.5)| / √(2·0.5))]`.
    fn point_hitting_oracle() -> f64 {
        let rule = GaussLegendre::new(64);
        let sd = 0.5f64.sqrt();
        let dens = |x: f64| (-x * x / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        2.0 * rule.integrate(0.0, 10.0 * sd, |x| dens(x) * erfc(x))
    }

    #[test]
    fn brownian_hits_points() {
        let f = SpatialSet::Point(vec![0.0]);
        let coarse = hit_probability_only(&problem(f.clone(), 1, 0.08, 128, 4000)).unwrap();
        let fine = hit_probability_only(&problem(f, 1, 0.04, 512, 4000)).unwrap();
        let oracle = point_hitting_oracle();
        assert!(fine.p_hat > 0.0);
        // the tolerance enlarges the target by about as much as the grid misses
        for rep in [&coarse, &fine] {
            assert!((rep.p_hat - oracle).abs() < 0.05, "{} vs {oracle}", rep.p_hat);
        }
        assert!((coarse.p_hat - fine.p_hat).abs() < 0.05);
    }

    #[test]
    fn enlarging_target_or_tol_never_loses_hits() {
        let small = SpatialSet::Ball { center: vec![0.3, 0.0], radius: 0.1 };
        let big = SpatialSet::Ball { center: vec![0.3, 0.0], radius: 0.2 };
        let grid = time_grid(&TimeSet::Interval { a: 0.5, b: 1.0 }, 64).unwrap();
        let md = path_min_distances(&bm(), &CovModel::StationaryIncrements, &grid, 2, 300, 9, &[small, big]).unwrap();
        assert!(md[0].iter().zip(&md[1]).all(|(a, b)| b <= a));
        for tol in [0.1, 0.2] {
            let at = |k: usize, t: f64| md[k].iter().filter(|&&m| m <= t).count();
            assert!(at(0, tol) <= at(0, tol + 0.05));
            assert!(at(0, tol) <= at(1, tol));
        }
    }

    #[test]
    fn content_examples() {
        let e = TimeSet::Interval { a: 0.9, b: 1.0 };
        let f = SpatialSet::Ball { center: vec![0.0, 0.0, 0.0], radius: 0.1 };
        let opts = ContentOptions::default();
        let est = hausdorff_content_estimate(&e, &f, 3.0, &bm(), &opts).unwrap();
        let r0 = rho_diameter(&bm(), &e, &f).unwrap();
        assert!(est.content <= (2.0 * r0).powi(3) * (1.0 + 1e-12));
        assert!(est.content > 0.0);
        // refining the menu never increases the estimate
        let mut prev = f64::INFINITY;
        for levels in 0..6 {
            let v = hausdorff_content_estimate(&e, &f, 3.0, &bm(), &ContentOptions { menu_levels: levels, ..opts.clone() })
                .unwrap()
                .content;
            assert!(v <= prev);
            prev = v;
        }
        // far above the product dimension (2 + 3) the content collapses
        let fine = ContentOptions { menu_levels: 10, time_points: 256, space_per_axis: 15 };
        let hi = hausdorff_content_estimate(&e, &f, 8.0, &bm(), &fine).unwrap();
        assert!(hi.content < 0.1 * (2.0 * r0).powi(8), "{hi:?}");
    }

    /// `P{inf over [t0−w, t0+w] of |B| ≤ r}` for Brownian motion with
    /// `w = r²`: `E[1{|X| ≤ r} + 1{|X| > r}·erfc((|X| − r)/√(4w))]`,
    /// `X ~ N(0, t0 − w)`.
    fn brownian_small_ball_oracle(t0: f64, r: f64) -> f64 {
        let w = r * r;
        let sd = (t0 - w).sqrt();
        let dens = |x: f64| (-x * x / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let rule = GaussLegendre::new(64);
        let inside = 2.0 * rule.integrate(0.0, r, dens);
        inside + 2.0 * rule.integrate(r, r + 12.0 * sd, |x| dens(x) * erfc((x - r) / (4.0 * w).sqrt()))
    }

    #[test]
    fn small_ball_matches_brownian_oracle() {
        let sb = SmallBall {
            gamma: bm(),
            cov_model: CovModel::StationaryIncrements,
            t0: 0.2,
            z: vec![0.0],
            n_paths: 20_000,
            seed: 1,
            window_points: 65,
        };
        for r in [0.1, 0.05] {
            let rep = sb.estimate(r).unwrap();
            let oracle = brownian_small_ball_oracle(0.2, r);
            // discrete monitoring can only miss excursions
            assert!(rep.p_hat <= oracle + 3.0 * (oracle / 20_000.0).sqrt(), "{} vs {oracle}", rep.p_hat);
            assert!(rep.p_hat >= 0.85 * oracle, "{} vs {oracle}", rep.p_hat);
            assert!(rep.fgamma_bound.unwrap() > rep.r_pow_d);
        }
        // a radius beyond the spread makes the event near certain
        let wide = SmallBall { t0: 0.05, n_paths: 2000, ..sb.clone() }.estimate(0.9).unwrap();
        assert!(wide.p_hat > 0.99);
    }

    #[test]
    fn small_ball_volterra_and_errors() {
        let sb = SmallBall {
            gamma: bm(),
            cov_model: CovModel::Volterra { n_quad: 64 },
            t0: 0.2,
            z: vec![0.0],
            n_paths: 4000,
            seed: 1,
            window_points: 17,
        };
        let v = sb.estimate(0.1).unwrap();
        let s = SmallBall { cov_model: CovModel::StationaryIncrements, ..sb.clone() }.estimate(0.1).unwrap();
        // γ²(r) = r is Brownian motion under both representations
        assert!((v.p_hat - s.p_hat).abs() < 0.03, "{} vs {}", v.p_hat, s.p_hat);
        assert!(SmallBall { t0: 1.5, ..sb.clone() }.estimate(0.1).is_err());
        let ls = SmallBall { gamma: "logscale:beta=1".parse().unwrap(), ..sb };
        assert!(matches!(ls.estimate(1.0 / 64.0), Err(Error::EmptyBall(_))));
    }

    #[test]
    fn log_scale_small_ball_handles_tiny_windows() {
        let sb = SmallBall {
            gamma: "logscale:beta=1".parse().unwrap(),
            cov_model: CovModel::StationaryIncrements,
            t0: 0.05,
            z: vec![0.0, 0.0],
            n_paths: 4000,
            seed: 2,
            window_points: 33,
        };
        let rep = sb.estimate(1.0 / 128.0).unwrap();
        assert!(rep.log_half_width < -127.0);
        assert!(rep.hits > 0 && rep.p_hat < 0.05);
    }

    #[test]
    fn sandwich_needs_a_battery() {
        assert!(sandwich_report(&bm(), 3, Vec::new()).is_err());
    }

    #[test]
    fn dimension_decides_off_the_critical_band() {
        let pos = CapacityVerdict::Positive { capacity: 0.3 };
        assert_eq!(dimension_verdict(4.0, 3.0, 0.15, 0.1, 0.2, &CapacityVerdict::Zero).1, CapacityVerdict::Positive { capacity: 0.2 });
        assert_eq!(dimension_verdict(4.0, 3.0, 0.15, 0.3, 0.2, &pos).0, 0.3);
        assert_eq!(dimension_verdict(2.0, 3.0, 0.15, 0.3, 0.2, &pos), (0.0, CapacityVerdict::Zero));
        assert_eq!(dimension_verdict(3.1, 3.0, 0.15, 0.1, 0.2, &CapacityVerdict::Inconclusive).1, CapacityVerdict::Inconclusive);
    }

    #[test]
    fn small_battery_end_to_end() {
        let mk = |c: f64, r: f64| HitProblem {
            f: SpatialSet::Ball { center: vec![c], radius: r },
            ..problem(SpatialSet::Point(vec![0.0]), 1, 0.08, 128, 400)
        };
        let instances = vec![mk(0.0, 0.05), mk(0.0, 0.1), mk(0.0, 0.2), mk(0.0, 0.4), mk(1.0, 0.1), mk(-1.5, 0.3)];
        let terms = TermOptions {
            time_pool: 64,
            space_pool: 5,
            content: ContentOptions { menu_levels: 4, time_points: 32, space_per_axis: 5 },
            ..TermOptions::default()
        };
        let rep = run_battery(&Battery { instances, critical_band: 0.15, terms }).unwrap();
        assert_eq!(rep.rows.len(), 6);
        // the product has ρ-dimension 3 > d = 1
        for row in &rep.rows {
            assert!(row.dim_rho > 2.0, "{}", row.dim_rho);
            assert!(matches!(row.hit.capacity_verdict, Some(CapacityVerdict::Positive { .. })));
            assert!(row.hit.content_term.unwrap() > 0.0);
        }
        // rows sharing an ensemble are nested in the radius
        let p: Vec<f64> = rep.rows[..4].iter().map(|r| r.hit.p_hat).collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1]), "{p:?}");
        assert!(rep.c2.is_finite() && rep.c1 > 0.0);
        assert!(rep.rows.iter().all(|r| r.upper_ok));
        assert_eq!(rep.radius_scaling.as_ref().unwrap().radii.len(), 4);
        let json = serde_json::to_string(&rep).unwrap();
        let back: SandwichReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows.len(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn content_is_below_the_single_ball_cover(
            a in 0.0f64..0.5, len in 0.01f64..0.5, side in 0.0f64..0.5, s in 1.0f64..4.0,
        ) {
            let e = TimeSet::Interval { a, b: a + len };
            let f = SpatialSet::Box { lo: vec![0.0, 0.0], hi: vec![side, side] };
            let opts = ContentOptions { menu_levels: 4, time_points: 16, space_per_axis: 4 };
            let est = hausdorff_content_estimate(&e, &f, s, &bm(), &opts).unwrap();
            let r0 = rho_diameter(&bm(), &e, &f).unwrap();
            prop_assert!(est.content > 0.0);
            prop_assert!(est.content <= (2.0 * r0).powf(s) * (1.0 + 1e-12));
        }
    }
}
