//! Optimal transport for i.i.d. multi-draft speculative sampling.
//!
//! Given a target distribution `p`, a draft distribution `q` and `n` i.i.d.
//! drafts, the crate computes the optimal acceptance rate `α*`, exact
//! transport plans by max-flow at small scale, and approximate plans at
//! vocabulary scale by the global resolution algorithm.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod convex;
pub mod dist;
pub mod error;
pub mod flow;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod residuals;
pub mod subset;
pub mod transport;

pub use dist::{ProbDist, ProblemInstance};
pub use error::{Error, Result};
pub use residuals::{solve_outer_residuals, OuterResiduals};
pub use subset::{solve_h_star, SubsetSolution};
pub use transport::{Method, Verifier};
