//! Multi-frame scene flow fusion.
//!
//! Takes the outputs of a two-frame scene flow network run forward
//! (t -> t+1) and backward (t -> t-1), turns them into full-resolution
//! forward estimates plus guidance features, and fuses them with a small
//! U-Net. The crate also carries the KITTI metrics and file formats and a
//! synthetic rigid-scene generator used as ground truth for every stage.

pub mod error;
pub mod features;
pub mod fields;
pub mod fusenet;
pub mod geometry;
pub mod kitti_io;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use fields::{Grid, UpsampleMask};
pub use geometry::{CameraModel, SceneFlowField, Se3, Se3Field, Twist};
