//! Stereo camera model, SE(3) algebra and dense rigid-motion fields.
//!
//! All SE(3) fields act on points expressed in the camera frame of the
//! left reference image at time t.

mod camera;
mod field;
mod se3;

pub use camera::CameraModel;
pub use field::{
    convert_parametrization, forward_warp_lie, from_parametrization, induced_scene_flow,
    invert_field, Parametrization, SceneFlowField, Se3Field,
};
pub use se3::{se3_compose, se3_exp, se3_invert, se3_log, Se3, Twist, LOG_ANGLE_LIMIT};
