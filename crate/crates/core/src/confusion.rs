//! Domain-aware confusion score.
//!
//! The score compares where replayed reals of all past tasks and fakes of the
//! current task land in feature space. A small centroid distance means replayed
//! reals are easily mistaken for current forgeries, so direct supervision on them
//! should get a small weight. `alpha = normalizer(distance)` is that weight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::losses::centroid;
use crate::model::Mlp;
use crate::numerics::linalg::{cosine, norm, sub};
use crate::numerics::Rng;
use crate::streams::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    L2,
    CosineDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    Tanh,
    Sigmoid,
    LinearOver5,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::L2 => "l2",
            DistanceMetric::CosineDistance => "cosine_distance",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l2" => Ok(Self::L2),
            "cosine_distance" => Ok(Self::CosineDistance),
            _ => Err(format!(
                "unknown distance metric `{s}` (expected l2|cosine_distance)"
            )),
        }
    }
}

impl fmt::Display for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalizer::Tanh => "tanh",
            Normalizer::Sigmoid => "sigmoid",
            Normalizer::LinearOver5 => "linear_over_5",
        })
    }
}

impl FromStr for Normalizer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "linear_over_5" => Ok(Self::LinearOver5),
            _ => Err(format!(
                "unknown normalizer `{s}` (expected tanh|sigmoid|linear_over_5)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcsConfig {
    pub distance_metric: DistanceMetric,
    pub normalizer: Normalizer,
    /// Samples probed per side when computing the score.
    pub probe_cap: usize,
}

impl Default for DcsConfig {
    fn default() -> Self {
        Self {
            distance_metric: DistanceMetric::L2,
            normalizer: Normalizer::Tanh,
            probe_cap: 512,
        }
    }
}

impl DcsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_cap == 0 {
            return Err(contract("probe_cap must be at least 1"));
        }
        Ok(())
    }
}

/// One score computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcsRecord {
    pub task_index: usize,
    pub epoch: usize,
    pub s: f64,
    pub alpha: f64,
}

/// Distance between the centroids of two feature sets.
pub fn confusion_distance<A, B>(past_gen_real: &[A], current_fake: &[B], cfg: &DcsConfig) -> Result<f64>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if past_gen_real.is_empty() || current_fake.is_empty() {
        return Err(contract("confusion distance needs both feature sets non-empty"));
    }
    let a = centroid(past_gen_real)?;
    let b = centroid(current_fake)?;
    if a.len() != b.len() {
        return Err(contract("confusion distance: dimension mismatch"));
    }
    match cfg.distance_metric {
        DistanceMetric::L2 => Ok(norm(&sub(&a, &b)?)),
        DistanceMetric::CosineDistance => {
            if norm(&a) == 0.0 || norm(&b) == 0.0 {
                return Err(Error::DegenerateGeometry(
                    "zero-norm centroid under cosine distance".into(),
                ));
            }
            Ok((1.0 - cosine(&a, &b, 0.0)).max(0.0))
        }
    }
}

/// Map a non-negative distance into [0, 1].
pub fn normalize_score(s: f64, normalizer: Normalizer) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(contract(format!("score {s} must be non-negative")));
    }
    Ok(match normalizer {
        Normalizer::Tanh => s.tanh(),
        Normalizer::Sigmoid => 1.0 / (1.0 + (-s).exp()),
        Normalizer::LinearOver5 => (s / 5.0).min(1.0),
    })
}

/// Score and weight from already-extracted features.
pub fn alpha_from_features<A, B>(
    past_gen_real: &[A],
    current_fake: &[B],
    cfg: &DcsConfig,
) -> Result<(f64, f64)>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    let s = confusion_distance(past_gen_real, current_fake, cfg)?;
    Ok((s, normalize_score(s, cfg.normalizer)?))
}

fn probe(model: &Mlp, pool: &[Sample], cap: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let idx = if pool.len() > cap {
        rng.sample_indices(pool.len(), cap)
    } else {
        (0..pool.len()).collect()
    };
    idx.into_iter()
        .map(|i| model.features(&pool[i].features))
        .collect()
}

/// Score under the current model, probing up to `probe_cap` uniformly chosen
/// samples of each pool.
pub fn compute_alpha(
    model: &Mlp,
    past_gen_real: &[Sample],
    current_fakes: &[Sample],
    cfg: &DcsConfig,
    rng: &mut Rng,
    task_index: usize,
    epoch: usize,
) -> Result<DcsRecord> {
    cfg.validate()?;
    if past_gen_real.is_empty() || current_fakes.is_empty() {
        return Err(contract("confusion score needs non-empty pools"));
    }
    let a = probe(model, past_gen_real, cfg.probe_cap, rng)?;
    let b = probe(model, current_fakes, cfg.probe_cap, rng)?;
    let (s, alpha) = alpha_from_features(&a, &b, cfg)?;
    Ok(DcsRecord {
        task_index,
        epoch,
        s,
        alpha,
    })
}
