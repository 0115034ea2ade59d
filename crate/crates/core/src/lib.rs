//! Core algorithms for recovering human motion, a motion description and a
//! scene layout from a handful of body-worn inertial sensors.

pub mod error;
pub mod format;
pub mod imu;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rotmath;
pub mod scene;
pub mod tokenizer;

pub use error::{Error, Result};
