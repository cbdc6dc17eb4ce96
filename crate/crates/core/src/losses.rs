//! Supervision signals: binary cross-entropy, the gen-real feature centroid, the
//! relative separation loss between gen-fake features and that centroid, and the
//! confusion-weighted combination of direct and relative terms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::linalg::{axpy, dot, norm};
use crate::streams::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsMetric {
    Cosine,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsGranularity {
    SampleWise,
    CentroidBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub rs_metric: RsMetric,
    pub rs_granularity: RsGranularity,
    pub eps_cos: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rs_metric: RsMetric::Cosine,
            rs_granularity: RsGranularity::SampleWise,
            eps_cos: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_cos > 0.0) {
            return Err(contract("eps_cos must be positive"));
        }
        Ok(())
    }
}

impl fmt::Display for RsMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RsMetric::Cosine => "cosine",
            RsMetric::L2 => "l2",
        })
    }
}

impl FromStr for RsMetric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "l2" => Ok(Self::L2),
            _ => Err(format!("unknown rs metric `{s}` (expected cosine|l2)")),
        }
    }
}

impl fmt::Display for RsGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RsGranularity::SampleWise => "sample_wise",
            RsGranularity::CentroidBased => "centroid_based",
        })
    }
}

impl FromStr for RsGranularity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sample_wise" => Ok(Self::SampleWise),
            "centroid_based" => Ok(Self::CentroidBased),
            _ => Err(format!(
                "unknown rs granularity `{s}` (expected sample_wise|centroid_based)"
            )),
        }
    }
}

fn target(label: Label) -> f64 {
    match label {
        Label::Real => 0.0,
        Label::Fake => 1.0,
    }
}

fn check_prob(y_p: f64) -> Result<()> {
    if !(y_p > 0.0 && y_p < 1.0) {
        return Err(contract(format!("probability {y_p} outside (0, 1)")));
    }
    Ok(())
}

/// Binary cross-entropy with fake as the positive class.
pub fn ce_loss(y_p: f64, label: Label) -> Result<f64> {
    check_prob(y_p)?;
    let t = target(label);
    Ok(-(t * y_p.ln() + (1.0 - t) * (1.0 - y_p).ln()))
}

/// d ce_loss / d y_p
pub fn ce_grad(y_p: f64, label: Label) -> Result<f64> {
    check_prob(y_p)?;
    let t = target(label);
    Ok(-t / y_p + (1.0 - t) / (1.0 - y_p))
}

/// Coordinate-wise mean of a non-empty set of feature vectors.
pub fn centroid<T: AsRef<[f64]>>(features: &[T]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| contract("centroid of an empty set"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for f in features {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(contract("centroid: mixed feature dimensions"));
        }
        axpy(1.0, f, &mut acc);
    }
    let inv = 1.0 / features.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    Ok(acc)
}

/// Value and gradients of the relative separation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RsOutput {
    pub value: f64,
    /// Gradient with respect to each gen-fake feature vector, in input order.
    pub d_fake: Vec<Vec<f64>>,
    /// Gradient with respect to the gen-real centroid.
    pub d_centroid: Vec<f64>,
}

/// Relative separation loss. Cosine: mean cosine similarity between each gen-fake
/// feature and the gen-real centroid. L2: negated mean distance. Minimizing either
/// pushes gen-fake features away from the centroid. Centroid-based granularity
/// collapses the gen-fake set to its own centroid first.
pub fn rs_loss<T: AsRef<[f64]>>(
    fake_features: &[T],
    real_centroid: &[f64],
    cfg: &LossConfig,
) -> Result<f64> {
    rs_loss_with_grad(fake_features, real_centroid, cfg).map(|o| o.value)
}

pub fn rs_loss_with_grad<T: AsRef<[f64]>>(
    fake_features: &[T],
    real_centroid: &[f64],
    cfg: &LossConfig,
) -> Result<RsOutput> {
    if fake_features.is_empty() {
        return Err(contract("relative separation loss needs gen-fake features"));
    }
    let dim = real_centroid.len();
    if fake_features.iter().any(|f| f.as_ref().len() != dim) {
        return Err(contract("relative separation loss: dimension mismatch"));
    }
    let c_norm = norm(real_centroid);
    if cfg.rs_metric == RsMetric::Cosine && c_norm <= cfg.eps_cos {
        return Err(Error::DegenerateGeometry(format!(
            "gen-real centroid norm {c_norm:e} under cosine metric"
        )));
    }

    let m = fake_features.len();
    match cfg.rs_granularity {
        RsGranularity::SampleWise => {
            let mut value = 0.0;
            let mut d_fake = Vec::with_capacity(m);
            let mut d_centroid = vec![0.0; dim];
            let w = 1.0 / m as f64;
            for f in fake_features {
                let (v, df, dc) = pair_term(f.as_ref(), real_centroid, c_norm, cfg);
                value += v;
                d_fake.push(df.into_iter().map(|g| g * w).collect());
                axpy(w, &dc, &mut d_centroid);
            }
            Ok(RsOutput {
                value: value * w,
                d_fake,
                d_centroid,
            })
        }
        RsGranularity::CentroidBased => {
            let fc = centroid(fake_features)?;
            let (value, df, dc) = pair_term(&fc, real_centroid, c_norm, cfg);
            let share: Vec<f64> = df.iter().map(|g| g / m as f64).collect();
            Ok(RsOutput {
                value,
                d_fake: vec![share; m],
                d_centroid: dc,
            })
        }
    }
}

/// Metric between one vector `f` and the centroid, with both partial gradients.
fn pair_term(f: &[f64], c: &[f64], c_norm: f64, cfg: &LossConfig) -> (f64, Vec<f64>, Vec<f64>) {
    match cfg.rs_metric {
        RsMetric::Cosine => {
            let f_norm = norm(f);
            let a = f_norm + cfg.eps_cos;
            let b = c_norm + cfg.eps_cos;
            let s = dot(f, c);
            let value = s / (a * b);
            let f_unit = if f_norm > 0.0 { 1.0 / f_norm } else { 0.0 };
            let c_unit = 1.0 / c_norm;
            let df = f
                .iter()
                .zip(c)
                .map(|(fi, ci)| ci / (a * b) - s / (a * a * b) * fi * f_unit)
                .collect();
            let dc = f
                .iter()
                .zip(c)
                .map(|(fi, ci)| fi / (a * b) - s / (a * b * b) * ci * c_unit)
                .collect();
            (value, df, dc)
        }
        RsMetric::L2 => {
            let diff: Vec<f64> = f.iter().zip(c).map(|(x, y)| x - y).collect();
            let d = norm(&diff);
            let inv = if d > 0.0 { 1.0 / d } else { 0.0 };
            let df: Vec<f64> = diff.iter().map(|x| -x * inv).collect();
            let dc = df.iter().map(|g| -g).collect();
            (-d, df, dc)
        }
    }
}

/// Per-batch loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLossBreakdown {
    pub l_cf: f64,
    pub l_ce_gen_real: f64,
    pub l_rs: f64,
    pub alpha: f64,
    pub l_c: f64,
    pub l_overall: f64,
}

/// `l_c = alpha * l_ce + (1 - alpha) * l_rs`, `l_overall = l_c + l_cf`.
pub fn combine_losses(l_ce_gen_real: f64, l_rs: f64, l_cf: f64, alpha: f64) -> Result<BatchLossBreakdown> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(contract(format!("alpha {alpha} outside [0, 1]")));
    }
    let l_c = alpha * l_ce_gen_real + (1.0 - alpha) * l_rs;
    Ok(BatchLossBreakdown {
        l_cf,
        l_ce_gen_real,
        l_rs,
        alpha,
        l_c,
        l_overall: l_c + l_cf,
    })
}
