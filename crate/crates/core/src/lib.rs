//! Automatic image labeling for an eye-in-hand camera on a robot arm.
//!
//! The operator labels one frame; the labels are anchored on the target plane
//! and re-projected into every later frame using the arm's reported pose
//! (or a pose recovered from fiducial tags). A simulator stands in for the
//! arm, camera and rangefinder so that every output can be scored against
//! ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod dataset;
pub mod error;
pub mod fiducial;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod raster;
pub mod simulator;

pub use camera::{CameraModel, Distortion, Plane, ProjectionMatrix, RangeEstimate};
pub use dataset::{DatasetRecord, DatasetWriter, LocalizationMethod};
pub use error::{Error, Result};
pub use geometry::{CameraMount, PoseDelta, PoseVector, RigidTransform};
pub use propagation::{AnchoredPolygon, FrameAnnotation, PolygonAnnotation};
pub use raster::Mask;
pub use simulator::{BoardModel, NoiseModel, Workspace};
