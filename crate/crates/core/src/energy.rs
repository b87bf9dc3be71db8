//! Discrete Bessel–Riesz energies, capacity by energy minimisation over the
//! probability simplex, and Frostman exponent fits.

use serde::{Deserialize, Serialize};

use crate::dimension::time_grid;
use crate::error::{Error, Result};
use crate::fractal_sets::{Atom, DiscreteMeasure, SortedTimeMeasure, SpatialSet, TimeSet};
use crate::metrics::euclidean;
use crate::par;
use crate::scale::{phi_unchecked, ScaleFunction};
use crate::stats::fit_line;

/// Cap on the number of atoms kept at the finest resolution.
pub const MAX_ATOMS: usize = 10_000;

/// `K_ij = φ_β(max(ρ(u_i, u_j), h))` over a finite atom set.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    atoms: Vec<Atom>,
    k: Vec<f64>,
    h: f64,
    beta: f64,
}

impl KernelMatrix {
    /// Assembles the kernel with rows computed in parallel. `dist` must be a
    /// metric on the atoms.
    pub fn build<D>(atoms: Vec<Atom>, beta: f64, h: f64, dist: D) -> Result<Self>
    where
        D: Fn(&Atom, &Atom) -> f64 + Sync + Send,
    {
        if atoms.is_empty() {
            return Err(Error::InvalidInput("kernel needs at least one atom".into()));
        }
        if !(h > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("kernel needs h > 0 and finite beta, got h = {h}, beta = {beta}")));
        }
        let n = atoms.len();
        let mut k = vec![0.0; n * n];
        par::for_each_row_mut(&mut k, n, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                let r = if i == j { 0.0 } else { dist(&atoms[i], &atoms[j]) };
                *v = phi_unchecked(beta, r.max(h));
            }
        });
        Ok(KernelMatrix { atoms, k, h, beta })
    }

    /// Kernel for `δ*(s,t) = γ(|t−s|)` on time atoms, or for
    /// `ρ_δ = max{δ*, ‖x−y‖}` when the atoms carry spatial coordinates.
    pub fn stationary(atoms: Vec<Atom>, f: &ScaleFunction, beta: f64, h: f64) -> Result<Self> {
        for a in &atoms {
            if a.x.len() != atoms[0].x.len() {
                return Err(Error::DimensionMismatch(a.x.len(), atoms[0].x.len()));
            }
        }
        Self::build(atoms, beta, h, |a, b| rho_stationary(f, a, b))
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n() + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.k[i * n..(i + 1) * n]
    }

    fn mul_vec(&self, w: &[f64]) -> Vec<f64> {
        par::map_range(self.n(), |i| self.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
    }

    /// Same atoms at a coarser truncation resolution `h ≥ self.h()`. Since
    /// `φ_β` is nonincreasing this is an entrywise minimum with `φ_β(h)`.
    pub fn with_resolution(&self, h: f64) -> Result<Self> {
        if !(h >= self.h) {
            return Err(Error::InvalidInput(format!(
                "can only coarsen the resolution from {} (got {h}); rebuild the kernel to refine it",
                self.h
            )));
        }
        let cap = phi_unchecked(self.beta, h);
        let mut k = self.k.clone();
        par::for_each_row_mut(&mut k, self.n(), |_, row| row.iter_mut().for_each(|v| *v = v.min(cap)));
        Ok(KernelMatrix { atoms: self.atoms.clone(), k, h, beta: self.beta })
    }
}

/// `max{γ(|t−s|), ‖x−y‖}`, with an empty spatial part for temporal atoms.
pub fn rho_stationary(f: &ScaleFunction, a: &Atom, b: &Atom) -> f64 {
    let dt = (a.t - b.t).abs();
    let time = if dt > f.x_max() { f.gamma_max() } else { f.value(dt) };
    time.max(euclidean(&a.x, &b.x))
}

/// `wᵀKw`.
pub fn energy_discrete(measure: &DiscreteMeasure, kernel: &KernelMatrix) -> Result<f64> {
    if measure.atoms.len() != kernel.n() {
        return Err(Error::DimensionMismatch(measure.atoms.len(), kernel.n()));
    }
    if measure.atoms != kernel.atoms {
        return Err(Error::InvalidInput("measure atoms differ from kernel atoms".into()));
    }
    Ok(quadratic_form(kernel, &measure.weights))
}

fn quadratic_form(kernel: &KernelMatrix, w: &[f64]) -> f64 {
    kernel.mul_vec(w).iter().zip(w).map(|(a, b)| a * b).sum()
}

/// One Frank–Wolfe iteration, for the optional trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FwStep {
    pub iter: usize,
    pub energy: f64,
    pub gap: f64,
    pub step: f64,
    pub away: bool,
}

/// Outcome of [`minimize_energy`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyMinimum {
    pub measure: DiscreteMeasure,
    pub e_min: f64,
    /// Frank–Wolfe duality gap `⟨∇E(w), w − s⟩ ≥ E(w) − E_opt`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<FwStep>,
}

/// Minimises `wᵀKw` over the probability simplex by Frank–Wolfe with away
/// steps and exact line search, starting from uniform weights. Stops when
/// the duality gap is at most `tol · E(w)` or after `max_iter` iterations.
pub fn minimize_energy(kernel: &KernelMatrix, tol: f64, max_iter: usize) -> EnergyMinimum {
    minimize_energy_traced(kernel, tol, max_iter, false)
}

pub fn minimize_energy_traced(kernel: &KernelMatrix, tol: f64, max_iter: usize, trace: bool) -> EnergyMinimum {
    let n = kernel.n();
    let mut w = vec![1.0 / n as f64; n];
    let mut kw = kernel.mul_vec(&w);
    let mut steps = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut e;
    let mut gap;
    loop {
        e = kw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (s, kw_s) = argmin(&kw);
        gap = 2.0 * (e - kw_s);
        if gap <= tol * e {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let (a, kw_a) = kw
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > 0.0)
            .fold((s, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let away = kw_a - e > e - kw_s && w[a] < 1.0;
        // direction d: e_s − w (toward) or w − e_a (away); f(w + λd) is a
        // quadratic in λ with slope 2·dᵀKw and curvature 2·dᵀKd
        let (slope, curv, lambda_max, v) = if away {
            (e - kw_a, e - 2.0 * kw_a + kernel.get(a, a), w[a] / (1.0 - w[a]), a)
        } else {
            (kw_s - e, kernel.get(s, s) - 2.0 * kw_s + e, 1.0, s)
        };
        let lambda = if curv > 0.0 { (-slope / curv).clamp(0.0, lambda_max) } else { lambda_max };
        let col = kernel.row(v);
        if away {
            for i in 0..n {
                w[i] *= 1.0 + lambda;
                kw[i] += lambda * (kw[i] - col[i]);
            }
            w[v] -= lambda;
            if w[v] < 1e-15 {
                w[v] = 0.0;
            }
        } else {
            for i in 0..n {
                w[i] *= 1.0 - lambda;
                kw[i] += lambda * (col[i] - kw[i]);
            }
            w[v] += lambda;
        }
        if iterations % 512 == 0 {
            kw = kernel.mul_vec(&w);
        }
        if trace {
            steps.push(FwStep { iter: iterations, energy: e, gap, step: lambda, away });
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let measure = DiscreteMeasure { atoms: kernel.atoms.clone(), weights: w };
    EnergyMinimum { measure, e_min: e, gap, iterations, converged, trace: steps }
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc })
}

/// Greedy farthest-point order over `candidates`, starting at index 0.
/// Returns the visiting order and, for each visited point, its distance to
/// the points visited before it (`+∞` for the first). Stops once that
/// distance drops below `h_min` or `cap + 1` points are taken.
pub fn farthest_point_order<D>(candidates: &[Atom], dist: D, h_min: f64, cap: usize) -> (Vec<usize>, Vec<f64>)
where
    D: Fn(&Atom, &Atom) -> f64 + Sync + Send,
{
    let n = candidates.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut order = vec![0];
    let mut radii = vec![f64::INFINITY];
    let mut nearest: Vec<f64> = par::map_slice(candidates, |c| dist(&candidates[0], c));
    while order.len() <= cap {
        let (next, r) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        if !(r >= h_min) || r == 0.0 {
            break;
        }
        order.push(next);
        radii.push(r);
        let p = &candidates[next];
        let upd: Vec<f64> = par::map_range(n, |i| nearest[i].min(dist(p, &candidates[i])));
        nearest = upd;
    }
    (order, radii)
}

/// Capacity verdict of a resolution sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CapacityVerdict {
    /// Energies converge; `capacity` is the extrapolated `1/E_∞`.
    Positive { capacity: f64 },
    /// Energies grow like a power of `1/h`.
    Zero,
    /// Energy increments neither shrink nor grow geometrically (the critical
    /// regime) or the sweep is too short to tell.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityReport {
    pub beta: f64,
    pub resolutions: Vec<f64>,
    pub atom_counts: Vec<usize>,
    pub e_min: Vec<f64>,
    pub gaps: Vec<f64>,
    pub converged: Vec<bool>,
    pub capacity_estimates: Vec<f64>,
    /// Slope of `log₂ C(h)` against `log₂(1/h)`.
    pub capacity_slope: f64,
    /// Slope of `log₂ |E(h_{k+1}) − E(h_k)|` against `log₂(1/h)`; negative
    /// when the energies converge.
    pub increment_slope: f64,
    pub extrapolated: CapacityVerdict,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizerOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    200_000
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        MinimizerOptions { tol: default_tol(), max_iter: default_max_iter() }
    }
}

/// Slope threshold separating growth, decay and the critical regime.
const SLOPE_BAND: f64 = 0.1;

/// Minimal energies over the resolution sweep `h_1 > h_2 > …`. At each `h`
/// the atoms are the prefix of the farthest-point order of `candidates`
/// whose insertion distance is at least `h`, so atom sets are nested.
pub fn capacity_estimate<D>(
    candidates: &[Atom],
    dist: D,
    beta: f64,
    resolutions: &[f64],
    opts: &MinimizerOptions,
) -> Result<CapacityReport>
where
    D: Fn(&Atom, &Atom) -> f64 + Sync + Send + Copy,
{
    if resolutions.is_empty() || resolutions.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidInput("resolutions must be positive and nonempty".into()));
    }
    if resolutions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("resolutions must be strictly decreasing".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate atoms".into()));
    }
    let finest = *resolutions.last().unwrap();
    let (order, radii) = farthest_point_order(candidates, dist, finest, MAX_ATOMS);
    if order.len() > MAX_ATOMS {
        return Err(Error::AtomOverflow { count: order.len(), cap: MAX_ATOMS });
    }
    let runs: Vec<Result<(usize, EnergyMinimum)>> = par::map_slice(resolutions, |&h| {
        let m = radii.iter().take_while(|r| **r >= h).count();
        let atoms: Vec<Atom> = order[..m].iter().map(|&i| candidates[i].clone()).collect();
        let kernel = KernelMatrix::build(atoms, beta, h, dist)?;
        Ok((m, minimize_energy(&kernel, opts.tol, opts.max_iter)))
    });
    let mut rep = CapacityReport {
        beta,
        resolutions: resolutions.to_vec(),
        atom_counts: Vec::new(),
        e_min: Vec::new(),
        gaps: Vec::new(),
        converged: Vec::new(),
        capacity_estimates: Vec::new(),
        capacity_slope: f64::NAN,
        increment_slope: f64::NAN,
        extrapolated: CapacityVerdict::Inconclusive,
    };
    for run in runs {
        let (m, min) = run?;
        rep.atom_counts.push(m);
        rep.e_min.push(min.e_min);
        rep.gaps.push(min.gap);
        rep.converged.push(min.converged);
        rep.capacity_estimates.push(1.0 / min.e_min);
    }
    let x: Vec<f64> = resolutions.iter().map(|h| -h.log2()).collect();
    let logc: Vec<f64> = rep.capacity_estimates.iter().map(|c| c.log2()).collect();
    if let Some(fit) = fit_line(&x, &logc) {
        rep.capacity_slope = fit.slope;
    }
    rep.extrapolated = classify_sweep(&x, &rep.e_min, &mut rep.increment_slope);
    Ok(rep)
}

/// Reads the energy sweep: increments that shrink geometrically give a
/// positive capacity (Aitken-extrapolated), increments that grow give zero.
fn classify_sweep(x: &[f64], e: &[f64], increment_slope: &mut f64) -> CapacityVerdict {
    let last = *e.last().unwrap();
    let incs: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).collect();
    if incs.iter().all(|d| d.abs() <= 1e-9 * last) {
        *increment_slope = f64::NEG_INFINITY;
        return CapacityVerdict::Positive { capacity: 1.0 / last };
    }
    if incs.len() < 2 || incs.iter().any(|d| *d <= 0.0) {
        return CapacityVerdict::Inconclusive;
    }
    let xm: Vec<f64> = x.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    // increments per octave, so uneven sweeps compare like with like
    let y: Vec<f64> = incs.iter().zip(&dx).map(|(d, s)| (d / s).log2()).collect();
    let Some(fit) = fit_line(&xm, &y) else {
        return CapacityVerdict::Inconclusive;
    };
    *increment_slope = fit.slope;
    if fit.slope < -SLOPE_BAND {
        let q = 2f64.powf(fit.slope);
        // remaining increments per octave form a geometric series
        let per_octave = incs.last().unwrap() / dx.last().unwrap();
        let tail = per_octave * q / (1.0 - q);
        CapacityVerdict::Positive { capacity: 1.0 / (last + tail) }
    } else if fit.slope > SLOPE_BAND {
        CapacityVerdict::Zero
    } else {
        CapacityVerdict::Inconclusive
    }
}

/// Capacity problem for a time set `E` (optionally times a spatial set `F`)
/// under the stationary metric of `gamma`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityProblem {
    pub gamma: ScaleFunction,
    pub e: TimeSet,
    #[serde(default)]
    pub f: Option<SpatialSet>,
    pub beta: f64,
    pub resolutions: Vec<f64>,
    /// Size of the time candidate pool.
    #[serde(default = "default_pool")]
    pub pool: usize,
    /// Grid nodes per axis for the spatial candidate pool.
    #[serde(default = "default_space_pool")]
    pub space_pool: usize,
    #[serde(default)]
    pub minimizer: MinimizerOptions,
}

fn default_pool() -> usize {
    8192
}

fn default_space_pool() -> usize {
    9
}

impl CapacityProblem {
    pub fn candidates(&self) -> Result<Vec<Atom>> {
        self.e.validate()?;
        let times = time_grid(&self.e, self.pool)?;
        match &self.f {
            None => Ok(times.into_iter().map(Atom::time).collect()),
            Some(f) => {
                f.validate()?;
                let space = f.grid_points(self.space_pool);
                let total = times.len().saturating_mul(space.len());
                if total > 50 * MAX_ATOMS * 4 {
                    return Err(Error::AtomOverflow { count: total, cap: 50 * MAX_ATOMS * 4 });
                }
                Ok(times
                    .iter()
                    .flat_map(|&t| space.iter().map(move |x| Atom { t, x: x.clone() }))
                    .collect())
            }
        }
    }

    pub fn run(&self) -> Result<CapacityReport> {
        let cands = self.candidates()?;
        let f = &self.gamma;
        capacity_estimate(&cands, |a, b| rho_stationary(f, a, b), self.beta, &self.resolutions, &self.minimizer)
    }
}

/// Slope fit of `log sup_t ν(B_{δ*}(t, r))` against `log r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub exponent: f64,
    pub stderr: f64,
    /// `(r, sup_t ν(B(t,r)), inf_t ν(B(t,r)))` over atoms `t`.
    pub radii: Vec<(f64, f64, f64)>,
    /// `[min_r inf_t ν/r^ζ, max_r sup_t ν/r^ζ]` with `ζ` the fitted exponent.
    pub band: (f64, f64),
}

/// Frostman exponent of a measure on the time axis for `δ*(s,t) = γ(|t−s|)`.
/// Radii are dyadic between twice the largest nearest-neighbour distance
/// and a quarter of the diameter.
pub fn frostman_exponent(measure: &DiscreteMeasure, f: &ScaleFunction) -> Result<FrostmanReport> {
    let sorted = SortedTimeMeasure::new(measure);
    let t = sorted.times();
    let delta = |dt: f64| if dt > f.x_max() { f.gamma_max() } else { f.value(dt) };
    let diam = delta(t[t.len() - 1] - t[0]);
    if t.len() < 2 || diam == 0.0 {
        return Ok(FrostmanReport { exponent: 0.0, stderr: 0.0, radii: Vec::new(), band: (1.0, 1.0) });
    }
    let max_nn = (0..t.len())
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < t.len() { t[i + 1] - t[i] } else { f64::INFINITY };
            delta(left.min(right))
        })
        .fold(0.0, f64::max);
    let mut radii = Vec::new();
    let mut r = 0.25 * diam;
    while r >= 2.0 * max_nn && radii.len() < 60 {
        radii.push(r);
        r *= 0.5;
    }
    if radii.len() < 3 {
        return Err(Error::TooFewScales { got: radii.len(), needed: 3 });
    }
    let rows: Vec<Result<(f64, f64, f64)>> = par::map_slice(&radii, |&r| {
        let w = if r > f.gamma_max() { f64::INFINITY } else { f.inverse(r, 0.0)? };
        let (mut sup, mut inf) = (0.0f64, f64::INFINITY);
        for &s in t {
            let m = sorted.mass_within(s, w);
            sup = sup.max(m);
            inf = inf.min(m);
        }
        Ok((r, sup, inf))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let fit = fit_line(&x, &y).ok_or_else(|| Error::InvalidInput("degenerate radius window".into()))?;
    let z = fit.slope;
    let c1 = rows.iter().map(|(r, _, lo)| lo / r.powf(z)).fold(f64::INFINITY, f64::min);
    let c2 = rows.iter().map(|(r, hi, _)| hi / r.powf(z)).fold(0.0, f64::max);
    Ok(FrostmanReport { exponent: z, stderr: fit.stderr, radii: rows, band: (c1, c2) })
}
