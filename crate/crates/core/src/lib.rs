//! Egocentric whole-body motion capture from a head-mounted fisheye camera.
//!
//! The crate covers the geometric and numerical parts of the pipeline:
//!
//! * [`camera`]: polynomial omnidirectional camera model.
//! * [`patch`]: tangent-plane patch grids and bilinear patch extraction.
//! * [`heatmap`]: soft-argmax decoding of pixel-aligned 3D heatmaps with
//!   per-joint uncertainty.
//! * [`pose`]: hand-to-body integration into 57-joint poses.
//! * [`prior`]: DDPM motion prior and uncertainty-guided refinement.
//! * [`metrics`]: MPJPE, PA-MPJPE and BA-MPJPE.
//! * [`synth`]: procedural motion and heatmaps for training and testing.
//! * [`cli`]: the `egomocap` batch command line.
//!
//! Learned image networks are not part of this crate; their outputs enter as
//! heatmap and hand-estimate files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cli;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod motion;
pub mod patch;
pub mod pose;
pub mod prior;
pub mod raster;
pub mod skeleton;
pub mod synth;

mod binio;

pub use camera::{eval_poly, make_equidistant_camera, FisheyeCamera, ValidationReport};
pub use error::{Error, Result};
pub use heatmap::{decode, gaussian_smooth3d, soft_argmax, uncertainty, DecodeOptions, DecodedJoints, Heatmap3D};
pub use motion::MotionSequence;
pub use patch::{
    extract_patches, grid_points, hand_crop_grid, patch_centers, precompute_grid, tangent_frame, PatchGridConfig,
    PatchStack, SamplingGrid, TangentFrame,
};
pub use pose::{assemble, attach_hand, hand_rotation, BodyEstimate, HandEstimate, WholeBodyPose};
pub use raster::Raster;
pub use skeleton::{ReferenceSkeleton, SkeletonLayout};
