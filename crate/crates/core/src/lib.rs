pub mod assignment;
pub mod exec;
pub mod geometry2d;
pub mod geometry3d;
pub mod detection;
pub mod matchcost;
pub mod metrics;
pub mod pseudolabel;
pub mod simulator;
pub mod analysis;
pub mod toytrain;
pub mod io;
