//! Two-stage group-relative policy optimization (GRPO) for longitudinal
//! dementia prognosis, at desk scale.
//!
//! The crate covers the whole recipe end to end:
//!
//! - [`cohort`]: reproducible synthetic longitudinal cohorts with
//!   non-monotonic latent severity trajectories.
//! - [`samples`]: target anchors, gap buckets, linearization of visit
//!   tables into text logs, length filtering, patient-level splits, class
//!   balancing and the leakage audit.
//! - [`reward`]: tolerance-aware and sparse verifiable rewards, tolerance
//!   profiles and the `\boxed{}` answer wire format.
//! - [`policy`]: a small categorical policy (one hidden layer, one output
//!   head per task) with exact log-probabilities and analytic gradients.
//! - [`grpo`]: group-normalized advantages, the clipped surrogate with a
//!   KL penalty, and the training loop.
//! - [`pipeline`]: cold-start (stage 1) and task fine-tuning (stage 2)
//!   orchestration plus the ablation arms.
//! - [`eval`]: classification metrics, tolerance accuracy, gap-bucket
//!   strata and seed aggregation.

pub mod cohort;
pub mod config;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod samples;
pub mod scales;

pub use error::{Error, Result};
