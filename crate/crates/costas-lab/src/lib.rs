#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseband;
pub mod core_types;
pub mod detectors;
pub mod export;
pub mod filters;
pub mod ode_engine;
pub mod signal_sim;
pub mod cli;
