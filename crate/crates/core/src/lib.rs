//! Numerical laboratory for the fractal geometry of Gaussian processes whose
//! canonical metric is governed by a general variance scale `γ`.
//!
//! The crate is organised bottom-up:
//!
//! * [`scale`]: variance-scale families, their inverse, elasticity `Ψ_γ` and
//!   the radial potential kernels `φ_β`.
//! * [`metrics`]: the canonical metric `δ`, the stationary model `δ*`, the
//!   product metric `ρ_δ` and commensurability diagnostics.
//! * [`gp_sim`]: exact covariance construction and Cholesky path sampling.
//! * [`fractal_sets`]: generalised Cantor sets, their mass distribution and
//!   `γ`-dyadic coverings.
//! * [`dimension`]: box-counting and `γ`-dyadic dimension estimators and the
//!   image / intersection experiment drivers.
//! * [`energy`]: discrete Bessel–Riesz energies, capacity estimation and
//!   Frostman exponents.
//! * [`hitting`]: Monte Carlo hitting and small-ball probabilities, Hausdorff
//!   content covers and the capacity/content sandwich.
//! * [`conditions`]: trend classification of the integral conditions on `γ`.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Every
//! parallel reduction is merged in index order, so results do not depend on
//! the thread count.

pub mod conditions;
pub mod dimension;
pub mod energy;
pub mod error;
pub mod fractal_sets;
pub mod gp_sim;
pub mod hitting;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod quadrature;
pub mod scale;
pub mod stats;

pub use error::{Error, Result};
