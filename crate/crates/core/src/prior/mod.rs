//! Diffusion motion prior: noise schedule, canonical motion, the denoiser,
//! its training loop and the uncertainty-guided refinement sampler.

pub mod canonical;
pub mod denoiser;
pub mod nn;
pub mod refine;
pub mod schedule;
pub mod train;

pub use canonical::{canonicalize, CanonicalTransform};
pub use denoiser::{DenoiserConfig, DenoiserModel, POSE_DIM, WINDOW};
pub use refine::{refine, refine_window, window_starts, RefineOptions, StepNoise, FAST_T_START};
pub use schedule::{make_schedule, weight, NoiseSchedule};
pub use train::{prepare_dataset, train_denoiser, LossWeighting, TrainConfig, TrainReport};
