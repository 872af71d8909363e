//! Radial numerical laboratory for chemotaxis-diffusion dynamics on real
//! hyperbolic space: exact heat propagation, elliptic resolvents, almost
//! periodic forcing, a mild-solution engine and the explicit constants
//! that certify its contraction and decay estimates.

pub mod bounds;
pub mod cli;
pub mod elliptic;
pub mod geometry;
pub mod mild;
pub mod numerics;
pub mod semigroup;
pub mod signals;
