//! Domain-aware relative weighting for generative-replay incremental forgery
//! detection.
//!
//! A detector is trained on a sequence of tasks. Past tasks are replayed through
//! frozen per-class generators. Replayed reals can look like the current task's
//! forgeries, so their direct supervision is scaled by a confusion-derived weight
//! and complemented by a relative separation loss between replayed fakes and the
//! replayed-real centroid.
//!
//! Entry points: [`trainer::run_incremental`] for a full run, [`streams::make_scenario`]
//! for synthetic task streams, and [`cli`] for config-driven experiments.

pub mod cli;
pub mod confusion;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod replay;
pub mod streams;
pub mod trainer;

pub use error::{Error, Result};
pub use trainer::{run_incremental, Strategy, TrainConfig};
