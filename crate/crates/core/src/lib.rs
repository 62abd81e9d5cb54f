#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod campaign;
pub mod categorical;
pub mod config;
pub mod editor;
pub mod error;
pub mod evalrep;
pub mod landscape;
pub mod pairgen;
pub mod proposer;
pub mod refine;
pub mod scorer;
pub mod seed;
pub mod seq;
