//! Citywide crowd/traffic video benchmark engine: GPS trajectory ingest,
//! mesh-grid rasterization into density/flow tensors, supervised dataset
//! construction, a small from-scratch differentiable kernel, the benchmark
//! models, and evaluation utilities.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod rasterize;
pub mod synthgen;

pub use error::{Result, VlucError};
