//! Detection, classification and tracking of static and dynamic obstacles in
//! depth-camera point clouds, with a layered 2D occupancy grid, a synthetic
//! scene simulator and CLEAR-MOT evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classification;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod frame;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod motion;
pub mod pipeline;
pub mod simulator;
pub mod spatial;

pub use error::{Error, Result};
