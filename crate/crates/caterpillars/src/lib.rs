//! Numerics for exclusion processes with inhomogeneous speeds and memory lengths.
//!
//! The crate evaluates multipoint distributions of TASEP-like particle systems
//! (and their caterpillar generalizations) as Fredholm determinants of kernels
//! built from circular contour integrals and a random-walk hitting problem, and
//! cross-validates those values against exact enumeration and Monte Carlo
//! simulation of the underlying dynamics.

pub mod contour;
pub mod fredholm;
pub mod hitting;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod scaling;
pub mod simulate;
pub mod twospeed;
