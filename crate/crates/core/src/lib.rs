//! Source attribution for 3D point clouds.

pub mod attribution;
pub mod config;
pub mod container;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod nnet;
pub mod pcd;
pub mod rng;
pub mod simsource;
pub mod train;

pub use error::{Error, Result};
pub use pcd::{Point3, PointCloud, SourceLabel};
