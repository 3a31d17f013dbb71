//! Numerical toolkit for discounted weakly coupled Hamilton–Jacobi systems
//! on the flat torus and their vanishing-discount limit.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod markov;
pub mod mather;
pub mod model;
pub mod montecarlo;
pub mod pipeline;
pub mod scenario;
pub mod selection;
pub mod simplex;
pub mod solver;
