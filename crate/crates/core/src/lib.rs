//! Object-count guidance for generative models by clustering an object
//! token's cross-attention map.
//!
//! The map is smoothed and normalized ([`attention`]), split into k clusters
//! around well-separated high-attention centers ([`clustering`]), compared to
//! per-cluster Gaussian targets with a KL loss ([`objective`]), and the latent
//! is moved down the loss gradient during the early timesteps of generation
//! ([`guidance`]). A differentiable blob generator ([`blobsim`]) stands in for
//! the denoiser, and [`eval`] counts objects and runs benchmarks.

pub mod attention;
pub mod blobsim;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod io;
pub mod objective;

pub use attention::{AttentionMap, NormalizationRecord, SmoothingConfig};
pub use blobsim::{Latent, SimParams};
pub use clustering::{ClusterSet, PatchCoord};
pub use error::{Error, Result};
pub use eval::{BenchmarkSpec, MetricsRow, Variant};
pub use guidance::{GuidanceConfig, RunResult};
pub use objective::{LossReport, TargetDistribution};
