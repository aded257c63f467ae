pub mod config;
pub mod dataset;
pub mod gaussians;
pub mod geometry;
pub mod guidance;
pub mod imageops;
pub mod mesh;
pub mod meshextract;
pub mod metrics;
pub mod raster;
pub mod reconstruct;
