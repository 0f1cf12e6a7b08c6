//! 360-degree LIDAR curb detection toolkit.
//!
//! The pipeline runs in stages: motion-compensated scan integration,
//! bird's-eye-view rasterization, visible-curb segmentation, occluded-curb
//! inference via anchor-line regression, temporal filtering/tracking, and
//! tolerance-band evaluation. A synthetic scene simulator supplies training
//! data and exact visibility oracles.

pub mod anchor;
pub mod bev;
pub mod eval;
pub mod geometry;
pub mod postprocess;
pub mod synth;
pub mod visibility;
pub mod grid;
pub mod nn;
pub mod pointcloud;

pub use anchor::{AnchorCell, AnchorGrid, AnchorGridSet, AnchorSpec};
pub use bev::{BevImage, CurbMask};
pub use eval::{EvalReport, EvalRow};
pub use geometry::{GroundMotion, Quaternion, TimedPose, Trajectory, Transform};
pub use grid::GridSpec;
pub use visibility::{ObstacleMask, VisibilityPartition};
pub use pointcloud::{LidarPoint, LidarScan, TrimConfig};
