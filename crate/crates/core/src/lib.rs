//! Iteratively refined basis pursuit: adaptive hierarchical-basis finite
//! elements where refinement is chosen by ℓ1 minimization, plus
//! sparse-recovery diagnostics for the resulting dictionaries.

pub mod assembly;
pub mod dictionary;
pub mod problems;
pub mod quadrature;
pub mod sparse;
mod util;
pub mod lp;
pub mod irbp;
pub mod diagnostics;
