//! Robust optimal sensor placement for linear inverse problems under
//! sensor failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod criteria;
pub mod error;
pub mod ha;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod postproc;
pub mod rng;
pub mod scenarios;
pub mod structural;

pub use nalgebra;
