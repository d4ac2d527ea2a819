#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod edit;
pub mod embed;
pub mod error;
pub mod invert;
pub mod mappers;
pub mod nerf;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod service;
pub mod train;

pub use error::{Error, Result};
