//! Exact Gaussian simulation on a time grid.
//!
//! A [`CovMatrix`] holds the covariance of the scalar process `B₀` on a grid
//! and factors it lazily. Paths of the `d`-dimensional process are drawn
//! component by component from independent ChaCha substreams keyed by
//! `(seed, path, component)`, so batches do not depend on thread count.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, Cholesky};
use crate::par;
use crate::quadrature::GaussLegendre;
use crate::scale::ScaleFunction;

/// Largest grid accepted by the dense factorization.
pub const MAX_GRID: usize = 8192;

/// Geometric refinement levels toward the singular endpoint of the Volterra
/// integrand.
pub const VOLTERRA_LEVELS: usize = 40;

const GRID_MATCH_TOL: f64 = 1e-12;

/// How a covariance matrix was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovSource {
    StationaryIncrements { gamma: ScaleFunction },
    Volterra { gamma: ScaleFunction, n_quad: usize },
    Explicit,
}

/// Covariance of `B₀` on an increasing grid, stored row-major.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    grid: Vec<f64>,
    r: Vec<f64>,
    source: CovSource,
    factor: OnceLock<Cholesky>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("time grid is empty".into()));
    }
    if grid.len() > MAX_GRID {
        return Err(Error::InvalidInput(format!(
            "grid has {} points; dense factorization is capped at {MAX_GRID}",
            grid.len()
        )));
    }
    if !(grid[0] > 0.0) {
        return Err(Error::InvalidInput(format!("grid must exclude t = 0, first point is {}", grid[0])));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn check_domain(f: &ScaleFunction, grid: &[f64]) -> Result<()> {
    let last = *grid.last().unwrap();
    if last > f.x_max() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("grid reaches {last} beyond x_max = {}", f.x_max())));
    }
    Ok(())
}

impl CovMatrix {
    /// Builds `R_ij = k(t_i, t_j)` from a symmetric kernel.
    pub fn from_kernel<K>(grid: &[f64], kernel: K) -> Result<Self>
    where
        K: Fn(f64, f64) -> f64 + Sync + Send,
    {
        check_grid(grid)?;
        let n = grid.len();
        let mut r = vec![0.0; n * n];
        par::for_each_row_mut(&mut r, n, |i, row| {
            for j in 0..=i {
                row[j] = kernel(grid[i], grid[j]);
            }
        });
        symmetrize(&mut r, n);
        Ok(CovMatrix { grid: grid.to_vec(), r, source: CovSource::Explicit, factor: OnceLock::new() })
    }

    /// Wraps a dense row-major matrix, which must be exactly symmetric.
    pub fn from_dense(grid: &[f64], r: Vec<f64>) -> Result<Self> {
        check_grid(grid)?;
        let n = grid.len();
        if r.len() != n * n {
            return Err(Error::DimensionMismatch(r.len(), n * n));
        }
        for i in 0..n {
            for j in 0..i {
                if r[i * n + j] != r[j * n + i] {
                    return Err(Error::InvalidInput(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(CovMatrix { grid: grid.to_vec(), r, source: CovSource::Explicit, factor: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn source(&self) -> &CovSource {
        &self.source
    }

    /// Row-major entries.
    pub fn data(&self) -> &[f64] {
        &self.r
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.grid.len() + j]
    }

    /// Index of grid point `t`, matched to a relative tolerance of `1e-12`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = self.grid.partition_point(|&x| x < t);
        for c in [k.saturating_sub(1), k] {
            if let Some(&g) = self.grid.get(c) {
                if (g - t).abs() <= GRID_MATCH_TOL * t.abs().max(1.0) {
                    return Ok(c);
                }
            }
        }
        Err(Error::OffGrid(t))
    }

    /// Cholesky factor, computed on first use.
    pub fn factor(&self) -> Result<&Cholesky> {
        if let Some(c) = self.factor.get() {
            return Ok(c);
        }
        let c = cholesky_with_jitter(&self.r, self.n())?;
        Ok(self.factor.get_or_init(|| c))
    }

    /// Jitter added to the diagonal by the factorization, once it has run.
    pub fn jitter_used(&self) -> Option<f64> {
        self.factor.get().map(|c| c.jitter)
    }

    /// `‖L Lᵀ − R‖_max / ‖R‖_max`.
    pub fn factor_residual(&self) -> Result<f64> {
        let c = self.factor()?;
        let scale = self.r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(c.residual(&self.r) / scale.max(f64::MIN_POSITIVE))
    }
}

fn symmetrize(r: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            r[j * n + i] = r[i * n + j];
        }
    }
}

/// Stationary-increment covariance `(γ²(s) + γ²(t) − γ²(|t−s|)) / 2`.
pub fn cov_stationary_increments(f: &ScaleFunction, grid: &[f64]) -> Result<CovMatrix> {
    check_grid(grid)?;
    check_domain(f, grid)?;
    let g2 = |x: f64| {
        let g = f.value(x);
        g * g
    };
    let mut c = CovMatrix::from_kernel(grid, |s, t| 0.5 * (g2(s) + g2(t) - g2((t - s).abs())))?;
    c.source = CovSource::StationaryIncrements { gamma: f.clone() };
    Ok(c)
}

/// `log (γ²)′(x)` with `(γ²)′ = 2 γ² Ψ_γ / x`.
fn log_g2_prime(f: &ScaleFunction, x: f64) -> f64 {
    let l = x.ln();
    2.0 * f.log_gamma_at_log(l) + (2.0 * f.psi_at_log(l)).ln() - l
}

/// `∫₀^m √((γ²)′(gap + v) (γ²)′(v)) dv` over geometric panels toward `v = 0`.
fn volterra_entry(f: &ScaleFunction, rule: &GaussLegendre, m: f64, gap: f64) -> f64 {
    let integrand = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        (0.5 * (log_g2_prime(f, gap + v) + log_g2_prime(f, v))).exp()
    };
    crate::quadrature::integrate_geometric_toward_zero(rule, m, VOLTERRA_LEVELS, integrand)
}

/// Covariance of the Volterra process
/// `B₀(t) = ∫₀^t √((γ²)′(t−u)) W(du)`, i.e.
/// `R(s,t) = ∫₀^{s∧t} √((γ²)′(t−u) (γ²)′(s−u)) du`.
///
/// Off-diagonal entries use `n_quad` Gauss–Legendre nodes per geometric
/// panel and are recomputed with `2·n_quad`; a relative change above `1e-6`
/// is reported as a quadrature error. Diagonal entries are exactly `γ²(t)`.
pub fn cov_volterra(f: &ScaleFunction, grid: &[f64], n_quad: usize) -> Result<CovMatrix> {
    check_grid(grid)?;
    check_domain(f, grid)?;
    if n_quad < 64 {
        return Err(Error::InvalidInput(format!("n_quad = {n_quad} must be at least 64")));
    }
    if !f.is_differentiable() {
        return Err(Error::Unsupported("Volterra covariance needs a closed-form derivative".into()));
    }
    let n = grid.len();
    let coarse = GaussLegendre::new(n_quad);
    let fine = GaussLegendre::new(2 * n_quad);
    let rows: Vec<std::result::Result<Vec<f64>, (usize, usize, f64, f64)>> = par::map_range(n, |i| {
        let t = grid[i];
        let mut row = vec![0.0; i + 1];
        for (j, slot) in row.iter_mut().enumerate().take(i) {
            let s = grid[j];
            let a = volterra_entry(f, &coarse, s, t - s);
            let b = volterra_entry(f, &fine, s, t - s);
            if (a - b).abs() > 1e-6 * b.abs() {
                return Err((i, j, a, b));
            }
            *slot = b;
        }
        let g = f.value(t);
        row[i] = g * g;
        Ok(row)
    });
    let mut r = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|(i, j, a, b)| {
            Error::Quadrature(format!(
                "Volterra entry ({i}, {j}) changed from {a:.12e} to {b:.12e} when doubling n_quad = {n_quad}"
            ))
        })?;
        r[i * n..i * n + row.len()].copy_from_slice(&row);
    }
    symmetrize(&mut r, n);
    Ok(CovMatrix {
        grid: grid.to_vec(),
        r,
        source: CovSource::Volterra { gamma: f.clone(), n_quad },
        factor: OnceLock::new(),
    })
}

/// Covariance model selector used by experiment configurations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovModel {
    #[default]
    StationaryIncrements,
    Volterra {
        #[serde(default = "default_n_quad")]
        n_quad: usize,
    },
}

fn default_n_quad() -> usize {
    64
}

impl CovModel {
    pub fn build(&self, f: &ScaleFunction, grid: &[f64]) -> Result<CovMatrix> {
        match *self {
            CovModel::StationaryIncrements => cov_stationary_increments(f, grid),
            CovModel::Volterra { n_quad } => cov_volterra(f, grid, n_quad),
        }
    }

    /// Commensurability constant the model is known to satisfy: 1 for
    /// stationary increments, 2 for the Volterra process with concave `γ²`.
    pub fn default_l(&self) -> f64 {
        match self {
            CovModel::StationaryIncrements => 1.0,
            CovModel::Volterra { .. } => 2.0,
        }
    }
}

/// `Var(B₀(t) | B₀(s)) = R(t,t) − R(s,t)² / R(s,s)`.
pub fn conditional_variance(cov: &CovMatrix, s: f64, t: f64) -> Result<f64> {
    let i = cov.index_of(s)?;
    let j = cov.index_of(t)?;
    let rss = cov.get(i, i);
    if rss < 1e-14 {
        return Err(Error::Domain(format!("Var B₀({s}) = {rss:.3e} is too small to condition on")));
    }
    if i == j {
        return Ok(0.0);
    }
    let rst = cov.get(i, j);
    Ok((cov.get(j, j) - rst * rst / rss).max(0.0))
}

/// Per-(path, component) random stream.
pub fn substream(seed: u64, path: usize, component: usize) -> ChaCha8Rng {
    debug_assert!(component < 1 << 20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((path as u64) << 20) | component as u64);
    rng
}

/// Draws paths one at a time from a factored covariance.
pub struct PathSampler<'a> {
    chol: &'a Cholesky,
    d: usize,
    seed: u64,
}

impl<'a> PathSampler<'a> {
    pub fn new(cov: &'a CovMatrix, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension d must be positive".into()));
        }
        Ok(PathSampler { chol: cov.factor()?, d, seed })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.chol.n
    }

    /// Writes path `index` into `out` with layout `[t][component]`.
    pub fn sample_into(&self, index: usize, out: &mut [f64]) {
        let n = self.chol.n;
        assert_eq!(out.len(), n * self.d);
        let mut z = vec![0.0; n];
        let mut x = vec![0.0; n];
        for c in 0..self.d {
            let mut rng = substream(self.seed, index, c);
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            self.chol.mul_vec(&z, &mut x);
            for (t, &v) in x.iter().enumerate() {
                out[t * self.d + c] = v;
            }
        }
    }

    pub fn sample(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.chol.n * self.d];
        self.sample_into(index, &mut out);
        out
    }
}

/// A batch of sampled paths with layout `[path][t][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub grid: Vec<f64>,
    pub d: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

const BATCH_MAGIC: &[u8; 4] = b"GPPB";
const BATCH_VERSION: u32 = 1;

impl PathBatch {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.n() * self.d;
        &self.values[p * w..(p + 1) * w]
    }

    #[inline]
    pub fn value(&self, p: usize, t: usize, c: usize) -> f64 {
        self.values[(p * self.n() + t) * self.d + c]
    }

    /// Little-endian binary export: magic `GPPB`, `u32` version, `u64`
    /// `n, d, n_paths, seed`, then `n` grid times and the values, as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BATCH_MAGIC)?;
        w.write_all(&BATCH_VERSION.to_le_bytes())?;
        for v in [self.n() as u64, self.d as u64, self.n_paths as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.grid.iter().chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BATCH_MAGIC {
            return Err(Error::Parse("not a path batch file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BATCH_VERSION {
            return Err(Error::Parse(format!("unsupported path batch version {version}")));
        }
        let mut u = [0u64; 4];
        let mut b8 = [0u8; 8];
        for slot in u.iter_mut() {
            r.read_exact(&mut b8)?;
            *slot = u64::from_le_bytes(b8);
        }
        let [n, d, n_paths, seed] = u;
        let (n, d, n_paths) = (n as usize, d as usize, n_paths as usize);
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let grid = read_vec(n)?;
        let values = read_vec(n * d * n_paths)?;
        Ok(PathBatch { grid, d, n_paths, seed, values })
    }

    /// Long-format CSV with columns `path,component,t,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(["path", "component", "t", "value"]).map_err(io)?;
        for p in 0..self.n_paths {
            for c in 0..self.d {
                for (t, &time) in self.grid.iter().enumerate() {
                    wtr.write_record(&[
                        p.to_string(),
                        c.to_string(),
                        time.to_string(),
                        self.value(p, t, c).to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Samples `n_paths` independent copies of `(B₁, …, B_d)` on the grid.
pub fn sample_paths(cov: &CovMatrix, d: usize, n_paths: usize, seed: u64) -> Result<PathBatch> {
    let sampler = PathSampler::new(cov, d, seed)?;
    let paths = par::map_range(n_paths, |p| sampler.sample(p));
    Ok(PathBatch {
        grid: cov.grid().to_vec(),
        d,
        n_paths,
        seed,
        values: paths.concat(),
    })
}

/// `n` equally spaced points on `[a, b]`. When `a ≤ 0` the left endpoint is
/// dropped and the points are `a + (b−a)k/n`, `k = 1..=n`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![b];
    }
    if a > 0.0 {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    } else {
        (1..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    }
}
