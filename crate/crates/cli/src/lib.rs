//! Pipeline plumbing around `floodseg-core`: file formats, configuration and
//! the command implementations behind the `floodseg` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod export;
pub mod io_util;
pub mod raster;
