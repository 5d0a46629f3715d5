//! Graded linear series on computable model spaces.
//!
//! The crate works on the Riemann sphere, finite disjoint unions of spheres
//! and the product of two spheres. Sections of `O(k d)` are polynomials of
//! degree at most `k d` in the affine chart, metrics are written as weights
//! `|s|_h^k = |p(z)| e^{-k phi(z)}`, and everything else (Bergman kernels,
//! envelopes, energies, Okounkov bodies) is built on top of that.

pub mod bergman;
pub mod counterexample;
pub mod energy;
pub mod envelopes;
pub mod error;
pub mod geometry;
pub mod io;
pub mod norms;
pub mod series;
pub mod weights;

mod conic;

pub use error::{LabError, Result};
pub use num_complex::Complex64;
