//! Exact solver for the quadratic assignment problem.
//!
//! The solver combines RLT2 dual-ascent lower bounds (reduced-cost tensors
//! maintained over a level-2 reformulation-linearization relaxation) with a
//! parallel depth-first branch-and-bound that uses strong branching,
//! work stealing and checkpoint/resume. Instances are read in QAPLIB format.

// Tensor code is index arithmetic through and through; explicit index loops
// read better than enumerate chains here.
#![allow(clippy::needless_range_loop)]

pub mod bnb;
pub mod heuristic;
pub mod instance;
pub mod lap;
pub mod report;
pub mod rlt;

pub use instance::{evaluate, parse_instance, parse_solution, Permutation, QapInstance};
pub use report::SolveReport;
