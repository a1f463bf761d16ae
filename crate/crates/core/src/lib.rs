#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod io;
pub mod models;
pub mod partition;
pub mod radii;
pub mod solver;
pub mod stats;
pub mod twoscale;
pub mod verify;
