#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod measurement;
pub mod numeric;
pub mod objective;
pub mod solver;
pub mod spike_model;
pub mod validation;
