//! Numerical machinery for the dynamics of monic, 0-fixed polynomials
//! `f(z) = a₁z + a₂z² + … + a_{d−1}z^{d−1} + z^d`.
//!
//! The crate is organised bottom-up:
//!
//! * [`poly`]: the polynomial type, root finding, critical points, periodic
//!   cycles, multipliers and the résidu itératif of parabolic points.
//! * [`angle`]: exact rational angles under `θ ↦ dθ mod 1`.
//! * [`raster`]: escape-time classification, Green's function, basin labels
//!   and connected components on a discretised plane.
//! * [`rays`]: external rays, equipotentials and Koenigs internal rays.
//! * [`tree`]: level-k Fatou trees grown by iterated preimage components.
//! * [`puzzle`]: puzzle graphs, pieces, nests, first entry times and shape.
//! * [`families`]: the two quartic families `f_c` and `f_a`.
//! * [`render`]: deterministic RGBA rendering of dynamical and parameter planes.

pub mod angle;
pub mod families;
pub mod geom;
pub mod poly;
pub mod puzzle;
pub mod raster;
pub mod rays;
pub mod render;
pub mod tree;

pub use num_complex::Complex64;

/// Shorthand used throughout the crate.
pub type C64 = Complex64;

pub use angle::Angle;
pub use poly::Polynomial;
pub use geom::Rect;

/// Crate version, embedded in JSON reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub(crate) fn map_cells<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
