//! Gaussian-smoothed 1-Wasserstein distance.
//!
//! `W1^(σ)(μ, ν) = W1(μ ∗ N_σ, ν ∗ N_σ)` computed by Monte Carlo smoothing and
//! exact discrete transport, together with an entropic-OT baseline, closed-form
//! bounds, and experiment drivers for convergence-rate studies.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod got_estimator;
pub mod measures;
pub mod noise;
pub mod ot_exact;
pub mod rng;
pub mod sinkhorn;
pub mod theory_bounds;

pub use error::{Error, Result};
pub use got_estimator::{estimate_got, estimate_one_sample, Estimate, MeasureInput};
pub use measures::{make_empirical, sample_source, DiscreteMeasure, PointCloud, SourceSpec};
pub use noise::{NoiseFamily, NoiseModel};
pub use ot_exact::{solve_transport, TransportSolution};
pub use rng::{Role, SeedTuple};
