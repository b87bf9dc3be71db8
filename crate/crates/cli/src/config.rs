//! JSON configuration records, one per subcommand.

use gpfractal::conditions::ConditionGrid;
use gpfractal::dimension::{ImageExperiment, IntersectionExperiment};
use gpfractal::energy::CapacityProblem;
use gpfractal::fractal_sets::{CantorSpec, SpatialSet, TimeSet};
use gpfractal::gp_sim::CovModel;
use gpfractal::hitting::{Battery, HitProblem, TermOptions};
use gpfractal::scale::ScaleFunction;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub gamma: ScaleFunction,
    #[serde(default)]
    pub cov_model: CovModel,
    /// Time set; its grid is `time_grid(e, grid_n)`.
    pub e: TimeSet,
    pub grid_n: usize,
    pub d: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Also write the long-format CSV (the binary batch is always written).
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum DimsConfig {
    /// Box dimension of `B(E)` per path.
    Image(ImageExperiment),
    /// Dimensions of `E ∩ B⁻¹(F)` and `B(E) ∩ F` per path.
    Intersection(IntersectionExperiment),
    /// `dim_δ(E)` from `γ`-dyadic covers.
    Delta {
        gamma: ScaleFunction,
        e: TimeSet,
        #[serde(default)]
        n_range: Option<(u32, u32)>,
    },
    /// `dim_ρδ(E × F)`.
    Product {
        gamma: ScaleFunction,
        e: TimeSet,
        f: SpatialSet,
        #[serde(default)]
        n_range: Option<(u32, u32)>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallBallConfig {
    pub t0: f64,
    pub z: Vec<f64>,
    pub radii: Vec<f64>,
    #[serde(default = "default_window_points")]
    pub window_points: usize,
}

fn default_window_points() -> usize {
    33
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HitConfig {
    #[serde(flatten)]
    pub problem: HitProblem,
    /// Compute the capacity and content terms as well.
    #[serde(default)]
    pub with_terms: bool,
    #[serde(default)]
    pub terms: TermOptions,
    /// Optional small-ball sweep with the same `γ`, covariance model, path
    /// count and seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_ball: Option<SmallBallConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckScaleConfig {
    pub scales: Vec<ScaleFunction>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub grid: ConditionGrid,
}

fn default_eps() -> f64 {
    0.1
}

pub type CapacityConfig = CapacityProblem;
pub type CantorConfig = CantorSpec;
pub type BatteryConfig = Battery;
