//! File formats: KITTI labels and calibration, the detection interchange
//! format, run configuration and CSV reports.

pub mod config;
pub mod interchange;
pub mod kitti;
pub mod report;
