//! Generalised Cantor sets adapted to a scale `γ`, discrete measures,
//! `γ`-dyadic coverings and greedy covering/packing numbers in `δ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricModel;
use crate::scale::ScaleFunction;

/// Deepest Cantor level accepted.
pub const MAX_DEPTH: usize = 40;

/// Largest number of intervals a single level may materialize.
pub const MAX_MATERIALIZED: usize = 1 << 22;

/// Relative tolerance, in tile widths, for snapping endpoints onto tile
/// boundaries.
const SNAP: f64 = 1e-7;

/// Parameters of a Cantor set; the serialized form of [`CantorSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorSpec {
    pub gamma: ScaleFunction,
    pub zeta: f64,
    pub depth: usize,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Left end of the initial interval.
    #[serde(default)]
    pub offset: f64,
}

fn default_eps0() -> f64 {
    1.0
}

/// The set `C_ζ`: starting from `[offset, offset + ε₀]`, every level keeps
/// the two end pieces of length `t_k ε₀` of each parent interval, where
/// `t_k = γ⁻¹(2^{−k/ζ})` and `t_0 = 1`.
///
/// Levels are generated on demand from the binary address of an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CantorSpec", into = "CantorSpec")]
pub struct CantorSet {
    spec: CantorSpec,
    t_seq: Vec<f64>,
    l_seq: Vec<f64>,
}

impl TryFrom<CantorSpec> for CantorSet {
    type Error = Error;

    fn try_from(spec: CantorSpec) -> Result<Self> {
        build_cantor_at(&spec.gamma, spec.zeta, spec.depth, spec.eps0, spec.offset)
    }
}

impl From<CantorSet> for CantorSpec {
    fn from(c: CantorSet) -> CantorSpec {
        c.spec
    }
}

/// Builds `C_ζ` inside `[0, ε₀]`.
pub fn build_cantor(f: &ScaleFunction, zeta: f64, depth: usize, eps0: f64) -> Result<CantorSet> {
    build_cantor_at(f, zeta, depth, eps0, 0.0)
}

/// Builds `C_ζ` inside `[offset, offset + ε₀]`.
pub fn build_cantor_at(f: &ScaleFunction, zeta: f64, depth: usize, eps0: f64, offset: f64) -> Result<CantorSet> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::InvalidInput(format!("zeta = {zeta} must be positive")));
    }
    if depth > MAX_DEPTH {
        return Err(Error::InvalidInput(format!("depth {depth} exceeds {MAX_DEPTH}")));
    }
    if !(eps0 > 0.0 && eps0 <= 1.0) {
        return Err(Error::InvalidInput(format!("eps0 = {eps0} must lie in (0, 1]")));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::InvalidInput(format!("offset = {offset} must be nonnegative")));
    }
    let mut t_seq = vec![1.0];
    let mut l_seq = vec![1.0];
    for k in 1..=depth {
        let v = (-(k as f64) / zeta * std::f64::consts::LN_2).exp();
        if v > f.gamma_max() {
            return Err(Error::Domain(format!(
                "level {k}: 2^(-k/zeta) = {v} exceeds γ(x_max) = {}",
                f.gamma_max()
            )));
        }
        let t = f.inverse(v, 0.0)?;
        let l = t / t_seq[k - 1];
        if l > 0.5 + 1e-12 {
            return Err(Error::RatioOverflow { level: k, ratio: l });
        }
        t_seq.push(t);
        l_seq.push(l);
    }
    Ok(CantorSet {
        spec: CantorSpec { gamma: f.clone(), zeta, depth, eps0, offset },
        t_seq,
        l_seq,
    })
}

impl CantorSet {
    pub fn spec(&self) -> &CantorSpec {
        &self.spec
    }

    pub fn gamma(&self) -> &ScaleFunction {
        &self.spec.gamma
    }

    pub fn zeta(&self) -> f64 {
        self.spec.zeta
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn eps0(&self) -> f64 {
        self.spec.eps0
    }

    pub fn offset(&self) -> f64 {
        self.spec.offset
    }

    /// `t_k` for `k = 0..=depth`, with `t_0 = 1`.
    pub fn t_seq(&self) -> &[f64] {
        &self.t_seq
    }

    /// `l_k = t_k / t_{k−1}` for `k = 1..=depth`; entry 0 is 1 by convention.
    pub fn l_seq(&self) -> &[f64] {
        &self.l_seq
    }

    /// Length of every level-`k` interval.
    pub fn interval_len(&self, k: usize) -> f64 {
        self.t_seq[k] * self.spec.eps0
    }

    /// Interval `j` (binary address, most significant digit first) of level `k`.
    pub fn interval(&self, k: usize, j: usize) -> (f64, f64) {
        let eps0 = self.spec.eps0;
        let mut left = self.spec.offset;
        for i in 1..=k {
            if (j >> (k - i)) & 1 == 1 {
                left += eps0 * (self.t_seq[i - 1] - self.t_seq[i]);
            }
        }
        (left, left + self.interval_len(k))
    }

    /// All `2^k` intervals of level `k`, left to right.
    pub fn level(&self, k: usize) -> Result<Vec<(f64, f64)>> {
        if k > self.spec.depth {
            return Err(Error::InvalidInput(format!("level {k} beyond depth {}", self.spec.depth)));
        }
        let count = 1usize << k;
        if count > MAX_MATERIALIZED {
            return Err(Error::InvalidInput(format!(
                "level {k} has {count} intervals, above the materialization cap {MAX_MATERIALIZED}"
            )));
        }
        // breadth-first doubling reuses parent endpoints
        let mut lefts = vec![self.spec.offset];
        for i in 1..=k {
            let shift = self.spec.eps0 * (self.t_seq[i - 1] - self.t_seq[i]);
            lefts = lefts.iter().flat_map(|&a| [a, a + shift]).collect();
        }
        let len = self.interval_len(k);
        Ok(lefts.into_iter().map(|a| (a, a + len)).collect())
    }

    /// Midpoints of the deepest intervals.
    pub fn atoms(&self) -> Result<Vec<f64>> {
        let half = 0.5 * self.interval_len(self.spec.depth);
        Ok(self.level(self.spec.depth)?.into_iter().map(|(a, _)| a + half).collect())
    }

    /// `Σ_j (2 γ(|I_{k,j}|))^ζ` for the level-`k` cover, an upper bound for the
    /// `ζ`-dimensional `δ*`-Hausdorff content.
    pub fn level_content_bound(&self, k: usize) -> f64 {
        let g = self.spec.gamma.value(self.interval_len(k));
        (k as f64 * std::f64::consts::LN_2 + self.spec.zeta * (2.0 * g).ln()).exp()
    }

    /// Parameters together with the deepest level's intervals.
    pub fn export(&self) -> Result<CantorExport> {
        Ok(CantorExport {
            spec: self.spec.clone(),
            t_seq: self.t_seq.clone(),
            l_seq: self.l_seq.clone(),
            intervals: self.level(self.spec.depth)?,
        })
    }
}

/// JSON form of a Cantor set with its deepest intervals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CantorExport {
    #[serde(flatten)]
    pub spec: CantorSpec,
    pub t_seq: Vec<f64>,
    pub l_seq: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
}

/// A point of time or of time × space. `x` is empty for temporal atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
}

impl Atom {
    pub fn time(t: f64) -> Self {
        Atom { t, x: Vec::new() }
    }
}

/// A probability measure with finitely many atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::DimensionMismatch(atoms.len(), weights.len()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("measure weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("measure weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { atoms, weights })
    }

    pub fn uniform(atoms: Vec<Atom>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.t).collect()
    }
}

/// Mass distribution on `C_ζ`: weight `2^{−K}` at each deepest midpoint.
pub fn cantor_measure(set: &CantorSet) -> Result<DiscreteMeasure> {
    let atoms: Vec<Atom> = set.atoms()?.into_iter().map(Atom::time).collect();
    let w = (-(set.depth() as f64) * std::f64::consts::LN_2).exp();
    let n = atoms.len();
    DiscreteMeasure::new(atoms, vec![w; n])
}

/// A measure on the line with sorted atoms and cumulative weights, for fast
/// window masses.
#[derive(Clone, Debug)]
pub struct SortedTimeMeasure {
    times: Vec<f64>,
    cum: Vec<f64>,
}

impl SortedTimeMeasure {
    pub fn new(m: &DiscreteMeasure) -> Self {
        let mut pairs: Vec<(f64, f64)> = m.atoms.iter().map(|a| a.t).zip(m.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = Vec::with_capacity(pairs.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for &(_, w) in &pairs {
            acc += w;
            cum.push(acc);
        }
        SortedTimeMeasure { times: pairs.into_iter().map(|p| p.0).collect(), cum }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Mass of the atoms `s` with `|s − t| < w`.
    pub fn mass_within(&self, t: f64, w: f64) -> f64 {
        let lo = self.times.partition_point(|&s| s <= t - w);
        let hi = self.times.partition_point(|&s| s < t + w);
        if hi <= lo {
            0.0
        } else {
            self.cum[hi] - self.cum[lo]
        }
    }

    /// `ν(B_{δ*}(t, r))` for `δ*(s,t) = γ(|t−s|)`.
    pub fn ball_mass(&self, f: &ScaleFunction, t: f64, r: f64) -> Result<f64> {
        if r > f.gamma_max() {
            return Ok(self.mass_within(t, f64::INFINITY));
        }
        Ok(self.mass_within(t, f.inverse(r, 0.0)?))
    }
}

/// Subsets of the time axis handled by the estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSet {
    Interval { a: f64, b: f64 },
    Union(Vec<(f64, f64)>),
    Cantor(CantorSet),
    Points(Vec<f64>),
}

impl TimeSet {
    pub fn validate(&self) -> Result<()> {
        let check = |a: f64, b: f64| {
            if a >= 0.0 && b >= a && b.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("time interval [{a}, {b}] is invalid")))
            }
        };
        match self {
            TimeSet::Interval { a, b } => check(*a, *b),
            TimeSet::Union(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidInput("empty interval union".into()));
                }
                v.iter().try_for_each(|&(a, b)| check(a, b))
            }
            TimeSet::Cantor(_) => Ok(()),
            TimeSet::Points(p) => {
                if p.is_empty() || p.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                    Err(Error::InvalidInput("point set must be nonempty and nonnegative".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Closed intervals whose union is the set (or, for Cantor sets, its
    /// deepest approximation). Points become degenerate intervals.
    pub fn intervals(&self) -> Result<Vec<(f64, f64)>> {
        Ok(match self {
            TimeSet::Interval { a, b } => vec![(*a, *b)],
            TimeSet::Union(v) => v.clone(),
            TimeSet::Cantor(c) => c.level(c.depth())?,
            TimeSet::Points(p) => p.iter().map(|&t| (t, t)).collect(),
        })
    }

    /// Smallest and largest time.
    pub fn hull(&self) -> Result<(f64, f64)> {
        let iv = self.intervals()?;
        let lo = iv.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = iv.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    }

    pub fn contains(&self, t: f64) -> Result<bool> {
        Ok(self.intervals()?.iter().any(|&(a, b)| a <= t && t <= b))
    }

    /// Total Lebesgue length.
    pub fn length(&self) -> Result<f64> {
        Ok(self.intervals()?.iter().map(|(a, b)| b - a).sum())
    }
}

/// Tiles of level `n` meeting a set: `[(j−1)w, jw]` with `w = γ⁻¹(2^{−n})`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DyadicCover {
    pub level: u32,
    /// `ln w`.
    pub log_width: f64,
    /// `log₂` of the number of tiles.
    pub log2_count: f64,
    /// Exact count when the tile indices fit in 53 bits.
    pub count: Option<u64>,
    /// Merged inclusive index ranges `[j_lo, j_hi]` (0-based), when exact.
    pub ranges: Option<Vec<(u64, u64)>>,
}

impl DyadicCover {
    /// Tiles as closed intervals; only for exact covers.
    pub fn tiles(&self) -> Option<Vec<(f64, f64)>> {
        let w = self.log_width.exp();
        let ranges = self.ranges.as_ref()?;
        Some(
            ranges
                .iter()
                .flat_map(|&(lo, hi)| (lo..=hi).map(move |j| (j as f64 * w, (j + 1) as f64 * w)))
                .collect(),
        )
    }
}

const EXACT_INDEX_LIMIT: f64 = 4.5e15;

/// Level-`n` `γ`-dyadic tiles meeting `E`.
///
/// Tiles are half-open on the left: a point on a boundary `jw` belongs to the
/// tile that ends there, except that degenerate (point) intervals always
/// take the tile to their right, so `[0, w]` needs one tile.
pub fn gamma_dyadic_cover(e: &TimeSet, n: u32, f: &ScaleFunction) -> Result<DyadicCover> {
    e.validate()?;
    let log_width = f.inverse_log(-(n as f64) * std::f64::consts::LN_2)?;
    let intervals = e.intervals()?;
    let (_, hi) = e.hull()?;
    if hi > f.x_max() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("set reaches {hi} beyond x_max = {}", f.x_max())));
    }
    let w = log_width.exp();
    if w > 0.0 && hi / w < EXACT_INDEX_LIMIT {
        let mut ranges: Vec<(u64, u64)> = intervals
            .iter()
            .map(|&(a, b)| {
                let (ua, ub) = (a / w, b / w);
                let first = snap_floor(ua);
                let last = snap_ceil(ub).saturating_sub(1).max(first);
                (first, last)
            })
            .collect();
        ranges.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(ranges.len());
        for (lo, hi) in ranges {
            match merged.last_mut() {
                Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let count: u64 = merged.iter().map(|(lo, hi)| hi - lo + 1).sum();
        return Ok(DyadicCover {
            level: n,
            log_width,
            log2_count: (count as f64).log2(),
            count: Some(count),
            ranges: Some(merged),
        });
    }
    // tiles far too narrow to index: every piece of positive length needs
    // about (b − a)/w tiles, every isolated point one
    let mut log_terms: Vec<f64> = intervals
        .iter()
        .map(|&(a, b)| if b > a { (b - a).ln() - log_width } else { 0.0 })
        .collect();
    log_terms.sort_by(|a, b| b.total_cmp(a));
    let top = log_terms[0];
    let log_sum = top + log_terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    Ok(DyadicCover {
        level: n,
        log_width,
        log2_count: log_sum / std::f64::consts::LN_2,
        count: None,
        ranges: None,
    })
}

fn snap_floor(u: f64) -> u64 {
    let r = u.round();
    if (u - r).abs() <= SNAP * u.max(1.0) {
        r as u64
    } else {
        u.floor() as u64
    }
}

fn snap_ceil(u: f64) -> u64 {
    let r = u.round();
    if (u - r).abs() <= SNAP * u.max(1.0) {
        r as u64
    } else {
        u.ceil() as u64
    }
}

fn sorted_times(points: &[f64]) -> Vec<f64> {
    let mut v = points.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Greedy covering count: the leftmost uncovered point `p` is covered by a
/// ball of radius `r` centred at the rightmost point `c` with `δ(p, c) < r`,
/// which also takes every following point `q` with `δ(c, q) < r`.
pub fn covering_number_delta(points: &[f64], r: f64, model: &MetricModel) -> Result<usize> {
    let pts = sorted_times(points);
    let n = pts.len();
    let mut count = 0;
    let mut i = 0;
    while i < n {
        let p = pts[i];
        let mut c = i;
        while c + 1 < n && model.delta(p, pts[c + 1])? < r {
            c += 1;
        }
        let mut j = c + 1;
        while j < n && model.delta(pts[c], pts[j])? < r {
            j += 1;
        }
        count += 1;
        i = j;
    }
    Ok(count)
}

/// Greedy packing count: points are kept left to right whenever they lie at
/// `δ`-distance at least `2r` from every kept point, so the `r`-balls around
/// kept points are disjoint.
pub fn packing_number_delta(points: &[f64], r: f64, model: &MetricModel) -> Result<usize> {
    let pts = sorted_times(points);
    let mut kept: Vec<f64> = Vec::new();
    for &p in &pts {
        let mut separated = true;
        for &k in kept.iter().rev() {
            if model.delta(k, p)? < 2.0 * r {
                separated = false;
                break;
            }
        }
        if separated {
            kept.push(p);
        }
    }
    Ok(kept.len())
}

/// Cube enumeration budget for exact box counts of spatial sets.
const MAX_ENUMERATED_CUBES: f64 = 2e6;

/// Finite unions of boxes, balls and points in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Point(Vec<f64>),
    Union(Vec<SpatialSet>),
}

impl SpatialSet {
    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            SpatialSet::Box { lo, .. } => lo.len(),
            SpatialSet::Ball { center, .. } => center.len(),
            SpatialSet::Point(x) => x.len(),
            SpatialSet::Union(v) => v.first().map_or(0, SpatialSet::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpatialSet::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::DimensionMismatch(lo.len(), hi.len()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b) || !b.is_finite() || !a.is_finite()) {
                    return Err(Error::InvalidInput("box needs finite lo ≤ hi".into()));
                }
                Ok(())
            }
            SpatialSet::Ball { center, radius } => {
                if center.is_empty() || !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidInput("ball needs a center and a radius ≥ 0".into()));
                }
                Ok(())
            }
            SpatialSet::Point(x) => {
                if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("point needs finite coordinates".into()));
                }
                Ok(())
            }
            SpatialSet::Union(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidInput("empty union".into()));
                }
                let d = v[0].dim();
                for s in v {
                    s.validate()?;
                    if s.dim() != d {
                        return Err(Error::DimensionMismatch(s.dim(), d));
                    }
                }
                Ok(())
            }
        }
    }

    /// Euclidean distance from `x` to the set.
    pub fn dist(&self, x: &[f64]) -> f64 {
        match self {
            SpatialSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| {
                    let e = (a - v).max(v - b).max(0.0);
                    e * e
                })
                .sum::<f64>()
                .sqrt(),
            SpatialSet::Ball { center, radius } => (crate::metrics::euclidean(x, center) - radius).max(0.0),
            SpatialSet::Point(p) => crate::metrics::euclidean(x, p),
            SpatialSet::Union(v) => v.iter().map(|s| s.dist(x)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Points of the regular grid with `per_axis` nodes per coordinate over
    /// the bounding box that lie in the set. A single node sits at the box
    /// centre when `per_axis = 1`.
    pub fn grid_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        if let SpatialSet::Point(p) = self {
            return vec![p.clone()];
        }
        let (lo, hi) = self.bounding_box();
        let d = lo.len();
        let per_axis = per_axis.max(1);
        let node = |c: usize, k: usize| {
            if per_axis == 1 {
                0.5 * (lo[c] + hi[c])
            } else {
                lo[c] + (hi[c] - lo[c]) * k as f64 / (per_axis - 1) as f64
            }
        };
        let total = per_axis.checked_pow(d as u32).unwrap_or(usize::MAX);
        let mut out = Vec::new();
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let x: Vec<f64> = (0..d).map(|c| node(c, idx[c])).collect();
            if self.dist(&x) <= 1e-12 {
                out.push(x);
            }
            for c in 0..d {
                idx[c] += 1;
                if idx[c] < per_axis {
                    break;
                }
                idx[c] = 0;
            }
        }
        out
    }

    /// Euclidean (Hausdorff) dimension.
    pub fn euclidean_dim(&self) -> f64 {
        match self {
            SpatialSet::Box { lo, hi } => lo.iter().zip(hi).filter(|(a, b)| b > a).count() as f64,
            SpatialSet::Ball { center, radius } => {
                if *radius > 0.0 {
                    center.len() as f64
                } else {
                    0.0
                }
            }
            SpatialSet::Point(_) => 0.0,
            SpatialSet::Union(v) => v.iter().map(SpatialSet::euclidean_dim).fold(0.0, f64::max),
        }
    }

    /// Euclidean diameter (of the bounding box, for unions).
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        crate::metrics::euclidean(&lo, &hi)
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            SpatialSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            SpatialSet::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            SpatialSet::Point(p) => (p.clone(), p.clone()),
            SpatialSet::Union(v) => {
                let mut out = v[0].bounding_box();
                for s in &v[1..] {
                    let (lo, hi) = s.bounding_box();
                    for i in 0..lo.len() {
                        out.0[i] = out.0[i].min(lo[i]);
                        out.1[i] = out.1[i].max(hi[i]);
                    }
                }
                out
            }
        }
    }

    /// Cube index ranges `[lo_i, hi_i]` of the side-`eps` grid meeting the
    /// bounding box.
    fn cube_ranges(lo: &[f64], hi: &[f64], eps: f64) -> Vec<(i64, i64)> {
        lo.iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let first = snap_floor_i(a / eps);
                let last = (snap_ceil_i(b / eps) - 1).max(first);
                (first, last)
            })
            .collect()
    }

    fn cube_meets(&self, idx: &[i64], eps: f64) -> bool {
        match self {
            SpatialSet::Box { .. } | SpatialSet::Point(_) => true,
            SpatialSet::Ball { center, radius } => {
                let d2: f64 = idx
                    .iter()
                    .zip(center)
                    .map(|(&k, &c)| {
                        let (a, b) = (k as f64 * eps, (k + 1) as f64 * eps);
                        let e = (a - c).max(c - b).max(0.0);
                        e * e
                    })
                    .sum();
                d2 <= radius * radius
            }
            SpatialSet::Union(v) => v.iter().any(|s| s.cube_meets(idx, eps)),
        }
    }

    /// Number of cubes of the side-`eps` grid (anchored at the origin)
    /// meeting the set. Exact when the bounding boxes hold at most `2·10⁶`
    /// cubes; otherwise an analytic estimate (volume ratio for balls, sum
    /// over members for unions).
    pub fn box_count(&self, eps: f64) -> f64 {
        let (lo, hi) = self.bounding_box();
        let ranges = Self::cube_ranges(&lo, &hi, eps);
        let total: f64 = ranges.iter().map(|(a, b)| (b - a + 1) as f64).product();
        match self {
            SpatialSet::Box { .. } | SpatialSet::Point(_) => total,
            _ if total <= MAX_ENUMERATED_CUBES => {
                let mut count = 0usize;
                let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
                loop {
                    if self.cube_meets(&idx, eps) {
                        count += 1;
                    }
                    let mut k = 0;
                    loop {
                        if k == idx.len() {
                            return count as f64;
                        }
                        idx[k] += 1;
                        if idx[k] <= ranges[k].1 {
                            break;
                        }
                        idx[k] = ranges[k].0;
                        k += 1;
                    }
                }
            }
            SpatialSet::Ball { center, radius } => {
                let d = center.len() as i32;
                let unit = std::f64::consts::PI.powf(d as f64 / 2.0) / unit_ball_gamma(d as f64 / 2.0 + 1.0);
                (unit * (radius + 0.5 * eps * (d as f64).sqrt()).powi(d) / eps.powi(d)).min(total)
            }
            SpatialSet::Union(v) => v.iter().map(|s| s.box_count(eps)).sum::<f64>().min(total),
        }
    }
}

/// `Γ(x)` for half-integers and integers, enough for unit-ball volumes.
fn unit_ball_gamma(x: f64) -> f64 {
    let mut acc = 1.0;
    let mut y = x;
    while y > 1.0 {
        y -= 1.0;
        acc *= y;
    }
    if (y - 0.5).abs() < 1e-12 {
        acc * std::f64::consts::PI.sqrt()
    } else {
        acc
    }
}

fn snap_floor_i(u: f64) -> i64 {
    let r = u.round();
    if (u - r).abs() <= SNAP * u.abs().max(1.0) {
        r as i64
    } else {
        u.floor() as i64
    }
}

fn snap_ceil_i(u: f64) -> i64 {
    let r = u.round();
    if (u - r).abs() <= SNAP * u.abs().max(1.0) {
        r as i64
    } else {
        u.ceil() as i64
    }
}
