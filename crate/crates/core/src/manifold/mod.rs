//! Fields on the unit sphere and on ellipsoids, searched for critical points
//! through an atlas of radial cube-face charts.
//!
//! A surface field is an ambient field on `R³` read on a surface
//! `{x : ‖g x‖ = 1}` for a linear `g`. The unit sphere is `g = I`; an
//! ellipsoid with semi-axes `a` and orientation `R` has `g = diag(1/a) Rᵀ`,
//! and its field is `X(t) = Z(g t)` for a field `Z` whose restriction to the
//! sphere is the sphere field.

mod chart;
mod ellipsoid;
mod surface;

pub use chart::{ChartAtlas, ChartJet, RadialChart, DEFAULT_OVERLAP};
pub use ellipsoid::Ellipsoid;
pub use surface::{
    ellipsoid_field, find_surface_critical_points, sphere_field, verify_surface_correspondence,
    write_surface_catalog_csv, write_surface_mesh, ChartView, SurfaceCatalog, SurfaceCriticalPoint, SurfaceField,
    SurfaceSearchConfig, SURFACE_CATALOG_HEADER,
};
