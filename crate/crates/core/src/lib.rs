//! Smooth Gaussian random fields, their critical points, and the machinery
//! needed to check how critical-point statistics behave under smooth changes
//! of coordinates.
//!
//! The crate is organised around four areas:
//!
//! * [`field`]: isotropic covariance models, random-wave realizations with
//!   exact jets, diffeomorphisms and transformed fields `X = Z ∘ f`.
//! * [`crit`]: grid-seeded Newton enumeration of critical points, Morse index
//!   classification, counting and catalog matching.
//! * [`kac_rice`]: field-free Monte Carlo estimators of height distributions
//!   and expected critical-point densities built on the joint law of the
//!   value and Hessian at a point.
//! * [`manifold`]: fields on the unit sphere and on ellipsoids, with a
//!   six-chart cube atlas and intrinsic critical-point search.

// Comparisons are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod crit;
pub mod error;
pub mod field;
pub mod kac_rice;
pub mod linalg;
pub mod manifold;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
