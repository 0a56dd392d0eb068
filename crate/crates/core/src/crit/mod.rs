//! Enumeration, classification and counting of critical points.
//!
//! Critical points are found by damped Newton iteration on the gradient,
//! seeded from a regular grid over the search domain. A catalog is checked
//! for completeness by repeating the search on a grid twice as fine; on
//! closed domains the alternating index sum must also equal the Euler
//! characteristic.

mod catalog;
mod classify;
mod domain;
mod matching;
mod search;

pub use catalog::{catalog_csv_header, count_mu, morse_sum, write_catalog_csv, CriticalCatalog, CriticalPoint};
pub use classify::{classify, classify_with_eigenvalues};
pub use domain::Domain;
pub use matching::{match_catalogs, match_points, MatchReport, MatchedPair, PointRecord, TOL_HEIGHT};
pub use search::{
    find_critical_points, find_critical_points_on_image, find_critical_points_where, newton_refine, newton_refine_within,
    NewtonOutcome, SearchConfig, SearchDiagnostics,
};
