pub mod data;
pub mod error;
pub mod special;
pub mod neighbors;
pub mod knn;
pub mod weighted;
pub mod parametric;
pub mod variance;
pub mod estimator;
pub mod bootstrap;
pub mod simulation;
pub mod surface;
pub mod cli;
