//! Latent parallelism for diffusion denoising.
//!
//! The latent is split along one of its temporal, height or width axes,
//! rotating every step, into overlapping sub-latents that workers denoise
//! independently. The master blends the predictions back with linear
//! ramps over the overlaps. Alongside the engine live a metered in-process
//! cluster, closed-form communication costs and a reachability checker for
//! partition schedules.

pub mod cluster;
pub mod completeness;
pub mod config;
pub mod cost;
pub mod denoise;
pub mod error;
pub mod io;
pub mod latent;
pub mod partition;
pub mod reconstruct;

pub use cluster::{run_lp, ClusterConfig, CommLedger, LpRun, Parallelism};
pub use denoise::{run_centralized, Conditioning, Denoiser, SamplerConfig};
pub use error::{LpError, Result};
pub use latent::{Axis, Dtype, LatentTensor, ModelPreset, PatchGeometry, Shape};
pub use partition::{build_plan, plan_axis, PartitionPlan};
pub use reconstruct::reconstruct;
