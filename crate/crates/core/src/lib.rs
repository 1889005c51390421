#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod loss;
pub mod so3;
pub mod solver;
pub mod special;
pub mod synth;
pub mod uncertainty;
pub mod viewgraph;

pub use error::{Error, Result};
