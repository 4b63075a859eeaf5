//! Biology-informed Bayesian optimization over a finite pool of genes.
//!
//! A campaign repeatedly fits a probabilistic surrogate to the labeled genes,
//! runs pathway enrichment on the best of them, turns the enrichment result
//! into a prior over unlabeled genes, and selects the next batch with a
//! prior-weighted acquisition function.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquire;
pub mod enrich;
mod error;
pub mod genepool;
pub mod runner;
pub mod surrogate;
pub mod util;

pub use error::{Error, Result};
