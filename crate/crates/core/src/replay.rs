//! Generative replay from fitted density models.
//!
//! Each finished task gets a pair of generators, one fitted to its real training
//! features and one to its fake ones. Generators are diagonal Gaussians or diagonal
//! Gaussian mixtures fitted by EM. Every generator also carries a [`Signature`]: an
//! additive artifact direction applied to everything it samples. Both members of a
//! pair share the signature, since they stand for the same generative process.
//!
//! Signature alignment is the knob for domain confusion: when the replay signature
//! points along a later task's forgery direction, replayed "real" samples look like
//! that task's fakes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::linalg::{cosine, norm};
use crate::numerics::Rng;
use crate::streams::{Label, Origin, Sample};

/// Variance floor for every fitted coordinate.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Additive artifact direction of a generator; the applied shift is `vector * strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub vector: Vec<f64>,
    pub strength: f64,
}

impl Signature {
    pub fn new(vector: Vec<f64>, strength: f64) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(contract(format!("signature strength {strength} must be >= 0")));
        }
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                index,
                message: "non-finite signature entry".into(),
            });
        }
        Ok(Self { vector, strength })
    }

    /// Zero-strength signature along the first axis.
    pub fn none(dim: usize) -> Self {
        let mut vector = vec![0.0; dim];
        if dim > 0 {
            vector[0] = 1.0;
        }
        Self {
            vector,
            strength: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn shift(&self) -> Vec<f64> {
        self.vector.iter().map(|v| v * self.strength).collect()
    }
}

/// Cosine between signature directions; 0 when either has zero strength or norm.
pub fn signature_similarity(a: &Signature, b: &Signature) -> f64 {
    if a.strength == 0.0 || b.strength == 0.0 || a.dim() != b.dim() {
        return 0.0;
    }
    if norm(&a.vector) == 0.0 || norm(&b.vector) == 0.0 {
        return 0.0;
    }
    cosine(&a.vector, &b.vector, 0.0).clamp(-1.0, 1.0)
}

/// One diagonal Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Component {
    fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - m;
            acc += d * d / v + v.ln();
        }
        -0.5 * (acc + self.mean.len() as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Finite mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<Component>,
}

impl Mixture {
    /// Isotropic single Gaussian.
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        let var = vec![std * std; mean.len()];
        Self {
            components: vec![Component {
                weight: 1.0,
                mean,
                var,
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }

    /// Copy with every component mean moved by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.iter().zip(shift).map(|(m, s)| m + s).collect(),
                var: c.var.clone(),
            })
            .collect();
        Self { components }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let c = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = self.components.last().unwrap();
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            pick
        };
        c.mean
            .iter()
            .zip(&c.var)
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&logs)
    }

    /// Mean log density over `samples`.
    pub fn mean_log_likelihood<T: AsRef<[f64]>>(&self, samples: &[T]) -> f64 {
        samples
            .iter()
            .map(|s| self.log_density(s.as_ref()))
            .sum::<f64>()
            / samples.len() as f64
    }

    fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(contract("mixture without components"));
        }
        let dim = self.dim();
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight > 0.0) || c.mean.len() != dim || c.var.len() != dim {
                return Err(contract("malformed mixture component"));
            }
            if c.var.iter().any(|v| !(*v >= VARIANCE_FLOOR)) {
                return Err(contract("component variance below floor"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(contract(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Gaussian,
    Gmm,
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorKind::Gaussian => "gaussian",
            GeneratorKind::Gmm => "gmm",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "gmm" => Ok(Self::Gmm),
            _ => Err(format!("unknown generator kind `{s}`")),
        }
    }
}

/// A fitted replay generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub kind: GeneratorKind,
    pub mixture: Mixture,
    pub signature: Signature,
}

impl GeneratorModel {
    pub fn components(&self) -> &[Component] {
        &self.mixture.components
    }

    /// Mean of the fitted density, without the signature shift.
    pub fn mean(&self) -> Vec<f64> {
        self.mixture.mean()
    }

    /// One draw, signature shift included.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut x = self.mixture.sample(rng);
        if self.signature.strength != 0.0 {
            for (xi, v) in x.iter_mut().zip(&self.signature.vector) {
                *xi += v * self.signature.strength;
            }
        }
        x
    }
}

/// The real/fake generator pair of one finished task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPair {
    pub task_index: usize,
    pub g_real: GeneratorModel,
    pub g_fake: GeneratorModel,
}

impl GeneratorPair {
    pub fn new(task_index: usize, g_real: GeneratorModel, g_fake: GeneratorModel) -> Result<Self> {
        if g_real.signature != g_fake.signature {
            return Err(contract("generator pair members must share one signature"));
        }
        if g_real.mixture.dim() != g_fake.mixture.dim() {
            return Err(contract("generator pair members differ in dimension"));
        }
        Ok(Self {
            task_index,
            g_real,
            g_fake,
        })
    }

    pub fn signature(&self) -> &Signature {
        &self.g_real.signature
    }
}

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative change of the log-likelihood that counts as converged.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-7,
        }
    }
}

/// EM result with the mean log-likelihood after every E-step.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: Mixture,
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub reseeds: usize,
}

fn check_samples<T: AsRef<[f64]>>(samples: &[T], min: usize) -> Result<usize> {
    if samples.len() < min.max(1) {
        return Err(contract(format!(
            "{} samples for {min} components",
            samples.len()
        )));
    }
    let dim = samples[0].as_ref().len();
    if dim == 0 || samples.iter().any(|s| s.as_ref().len() != dim) {
        return Err(contract("samples must share one non-zero dimension"));
    }
    Ok(dim)
}

/// Maximum-likelihood diagonal Gaussian.
pub fn fit_gaussian<T: AsRef<[f64]>>(samples: &[T]) -> Result<Mixture> {
    let dim = check_samples(samples, 1)?;
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut()
        .for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
    Ok(Mixture {
        components: vec![Component {
            weight: 1.0,
            mean,
            var,
        }],
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen center.
fn kmeans_pp<T: AsRef<[f64]>>(samples: &[T], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![samples[rng.below(samples.len())].as_ref().to_vec()];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| sq_dist(s.as_ref(), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(samples.len())
        };
        let c = samples[idx].as_ref().to_vec();
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

/// Diagonal-covariance EM with k-means++ initialization.
///
/// A component whose responsibility mass collapses is re-seeded at the sample the
/// current model explains worst; a second collapse of the same component is an error.
/// The log-likelihood trace restarts after a re-seed.
pub fn fit_gmm<T: AsRef<[f64]>>(
    samples: &[T],
    n_components: usize,
    em: &EmConfig,
    rng: &mut Rng,
) -> Result<GmmFit> {
    if n_components == 0 {
        return Err(contract("n_components must be at least 1"));
    }
    let dim = check_samples(samples, n_components)?;
    let n = samples.len();
    let global = fit_gaussian(samples)?.components.remove(0).var;
    let mut mixture = Mixture {
        components: kmeans_pp(samples, n_components, rng)
            .into_iter()
            .map(|mean| Component {
                weight: 1.0 / n_components as f64,
                mean,
                var: global.clone(),
            })
            .collect(),
    };

    let mut resp = vec![0.0; n * n_components];
    let mut log_likelihoods = Vec::new();
    let mut reseeded = vec![false; n_components];
    let mut reseeds = 0;
    let mut converged = false;
    let mut prev: Option<f64> = None;
    let mut point_ll = vec![0.0; n];

    for _ in 0..em.max_iter.max(1) {
        // E-step
        let mut total = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let row = &mut resp[i * n_components..(i + 1) * n_components];
            for (r, c) in row.iter_mut().zip(&mixture.components) {
                *r = c.weight.ln() + c.log_density(s.as_ref());
            }
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|r| *r = (*r - lse).exp());
            point_ll[i] = lse;
            total += lse;
        }
        let ll = total / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical {
                index: log_likelihoods.len(),
                message: "non-finite EM log-likelihood".into(),
            });
        }
        log_likelihoods.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= em.tol * p.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        prev = Some(ll);

        // M-step
        let mut collapsed = None;
        for (k, comp) in mixture.components.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * n_components + k]).sum();
            if nk < 1e-8 * n as f64 || nk < 1e-10 {
                collapsed = Some(k);
                break;
            }
            let mut mean = vec![0.0; dim];
            for (i, s) in samples.iter().enumerate() {
                let r = resp[i * n_components + k];
                for (m, x) in mean.iter_mut().zip(s.as_ref()) {
                    *m += r * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for (i, s) in samples.iter().enumerate() {
                let r = resp[i * n_components + k];
                for ((v, x), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
                    *v += r * (x - m) * (x - m);
                }
            }
            var.iter_mut()
                .for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
            comp.weight = nk / n as f64;
            comp.mean = mean;
            comp.var = var;
        }
        if let Some(k) = collapsed {
            if reseeded[k] {
                return Err(Error::DegenerateGeometry(format!(
                    "EM component {k} collapsed twice"
                )));
            }
            reseeded[k] = true;
            reseeds += 1;
            let worst = point_ll
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            mixture.components[k] = Component {
                weight: 1.0 / n_components as f64,
                mean: samples[worst].as_ref().to_vec(),
                var: global.clone(),
            };
            let sum: f64 = mixture.components.iter().map(|c| c.weight).sum();
            mixture.components.iter_mut().for_each(|c| c.weight /= sum);
            log_likelihoods.clear();
            prev = None;
            continue;
        }
        let sum: f64 = mixture.components.iter().map(|c| c.weight).sum();
        mixture.components.iter_mut().for_each(|c| c.weight /= sum);
    }

    Ok(GmmFit {
        mixture,
        log_likelihoods,
        converged,
        reseeds,
    })
}

/// Fit one replay generator. The signature is stored, not folded into the means.
pub fn fit_generator<T: AsRef<[f64]>>(
    samples: &[T],
    kind: GeneratorKind,
    n_components: usize,
    replay_signature: Signature,
    rng: &mut Rng,
) -> Result<GeneratorModel> {
    if n_components == 0 {
        return Err(contract("n_components must be at least 1"));
    }
    let dim = check_samples(samples, n_components)?;
    if replay_signature.dim() != dim {
        return Err(contract(format!(
            "signature of dimension {} for {dim}-dimensional samples",
            replay_signature.dim()
        )));
    }
    let mixture = match kind {
        GeneratorKind::Gaussian => fit_gaussian(samples)?,
        GeneratorKind::Gmm => fit_gmm(samples, n_components, &EmConfig::default(), rng)?.mixture,
    };
    Ok(GeneratorModel {
        kind,
        mixture,
        signature: replay_signature,
    })
}

/// Draw `n_real` gen-real then `n_fake` gen-fake samples from a pair.
pub fn sample_replay(pair: &GeneratorPair, n_real: usize, n_fake: usize, rng: &mut Rng) -> Vec<Sample> {
    let mut out = Vec::with_capacity(n_real + n_fake);
    for _ in 0..n_real {
        out.push(Sample {
            features: pair.g_real.sample(rng),
            label: Label::Real,
            origin: Origin::GenReal,
            task_index: pair.task_index,
        });
    }
    for _ in 0..n_fake {
        out.push(Sample {
            features: pair.g_fake.sample(rng),
            label: Label::Fake,
            origin: Origin::GenFake,
            task_index: pair.task_index,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Text format
//
//   darw-generator-pair 1
//   task <index>
//   [real] | [fake]
//   kind <gaussian|gmm>
//   signature <strength> <v_1> ... <v_d>
//   components <k>
//   component <weight> mean <m_1..m_d> var <v_1..v_d>     (k lines)
//
// Floats use Rust's shortest round-trip formatting, so parsing restores every bit.
// ---------------------------------------------------------------------------

const PAIR_HEADER: &str = "darw-generator-pair 1";

fn join(xs: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:?}").unwrap();
    }
    s
}

fn write_model(out: &mut String, tag: &str, m: &GeneratorModel) {
    writeln!(out, "[{tag}]").unwrap();
    writeln!(out, "kind {}", m.kind).unwrap();
    writeln!(
        out,
        "signature {:?} {}",
        m.signature.strength,
        join(&m.signature.vector)
    )
    .unwrap();
    writeln!(out, "components {}", m.mixture.components.len()).unwrap();
    for c in &m.mixture.components {
        writeln!(
            out,
            "component {:?} mean {} var {}",
            c.weight,
            join(&c.mean),
            join(&c.var)
        )
        .unwrap();
    }
}

impl GeneratorPair {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{PAIR_HEADER}").unwrap();
        writeln!(s, "task {}", self.task_index).unwrap();
        write_model(&mut s, "real", &self.g_real);
        write_model(&mut s, "fake", &self.g_fake);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                row: 0,
                message: format!("unexpected end of input, expected {what}"),
            })
        };
        let (row, header) = next("header")?;
        if header != PAIR_HEADER {
            return Err(Error::Parse {
                row,
                message: format!("bad header `{header}`"),
            });
        }
        let (row, task_line) = next("task")?;
        let task_index = task_line
            .strip_prefix("task ")
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                row,
                message: "expected `task <index>`".into(),
            })?;
        let g_real = read_model(&mut next, "real")?;
        let g_fake = read_model(&mut next, "fake")?;
        GeneratorPair::new(task_index, g_real, g_fake)
    }
}

fn parse_floats(row: usize, tokens: &[&str]) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("bad number `{t}`"),
            })
        })
        .collect()
}

fn read_model<'a, F>(next: &mut F, tag: &str) -> Result<GeneratorModel>
where
    F: FnMut(&str) -> Result<(usize, &'a str)>,
{
    let bad = |row: usize, m: &str| Error::Parse {
        row,
        message: m.to_string(),
    };
    let (row, l) = next("section")?;
    if l != format!("[{tag}]") {
        return Err(bad(row, &format!("expected [{tag}]")));
    }
    let (row, l) = next("kind")?;
    let kind = l
        .strip_prefix("kind ")
        .and_then(|k| k.trim().parse::<GeneratorKind>().ok())
        .ok_or_else(|| bad(row, "expected `kind <gaussian|gmm>`"))?;
    let (row, l) = next("signature")?;
    let toks: Vec<&str> = l.split_whitespace().collect();
    if toks.first() != Some(&"signature") || toks.len() < 3 {
        return Err(bad(row, "expected `signature <strength> <vector>`"));
    }
    let nums = parse_floats(row, &toks[1..])?;
    let signature = Signature::new(nums[1..].to_vec(), nums[0])?;
    let (row, l) = next("components")?;
    let k: usize = l
        .strip_prefix("components ")
        .and_then(|k| k.trim().parse().ok())
        .ok_or_else(|| bad(row, "expected `components <k>`"))?;
    let dim = signature.dim();
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let (row, l) = next("component")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 4 + 2 * dim
            || toks[0] != "component"
            || toks[2] != "mean"
            || toks[3 + dim] != "var"
        {
            return Err(bad(row, "malformed component line"));
        }
        let weight = parse_floats(row, &toks[1..2])?[0];
        let mean = parse_floats(row, &toks[3..3 + dim])?;
        let var = parse_floats(row, &toks[4 + dim..])?;
        components.push(Component { weight, mean, var });
    }
    let mixture = Mixture { components };
    mixture.validate()?;
    Ok(GeneratorModel {
        kind,
        mixture,
        signature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(m: &Mixture, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| m.sample(&mut rng)).collect()
    }

    #[test]
    fn gaussian_fit_law_of_large_numbers() {
        let truth = Mixture::isotropic(vec![1.0, 2.0], 0.5);
        for seed in 0..5 {
            let xs = draws(&truth, 10_000, seed);
            let fit = fit_gaussian(&xs).unwrap();
            let c = &fit.components[0];
            assert!((c.mean[0] - 1.0).abs() < 0.02 && (c.mean[1] - 2.0).abs() < 0.02);
            for v in &c.var {
                assert!((v - 0.25).abs() < 0.025, "variance {v}");
            }
        }
    }

    #[test]
    fn identical_samples_hit_floor() {
        let xs = vec![vec![3.0, -1.0]; 20];
        let g = fit_generator(&xs, GeneratorKind::Gaussian, 1, Signature::none(2), &mut Rng::new(0))
            .unwrap();
        assert_eq!(g.components()[0].mean, vec![3.0, -1.0]);
        assert_eq!(g.components()[0].var, vec![VARIANCE_FLOOR; 2]);
    }

    #[test]
    fn too_few_samples_rejected() {
        let xs = vec![vec![0.0, 1.0]; 2];
        assert!(fit_generator(&xs, GeneratorKind::Gmm, 3, Signature::none(2), &mut Rng::new(0)).is_err());
        let empty: Vec<Vec<f64>> = vec![];
        assert!(fit_gaussian(&empty).is_err());
    }

    #[test]
    fn gmm_recovers_separated_clusters() {
        let a = Mixture::isotropic(vec![-3.0, 0.0], 0.4);
        let b = Mixture::isotropic(vec![3.0, 1.0], 0.4);
        let mut xs = draws(&a, 1500, 1);
        xs.extend(draws(&b, 1500, 2));
        let fit = fit_gmm(&xs, 2, &EmConfig::default(), &mut Rng::new(3)).unwrap();
        let truth = [vec![-3.0, 0.0], vec![3.0, 1.0]];
        // brute-force the best matching of fitted components to truth
        let means: Vec<&Vec<f64>> = fit.mixture.components.iter().map(|c| &c.mean).collect();
        let cost = |p: [usize; 2]| -> f64 {
            (0..2)
                .map(|i| sq_dist(means[p[i]], &truth[i]).sqrt())
                .fold(0.0, f64::max)
        };
        let best = cost([0, 1]).min(cost([1, 0]));
        assert!(best < 0.1, "max mean error {best}");
    }

    #[test]
    fn em_log_likelihood_non_decreasing() {
        let mut xs = draws(&Mixture::isotropic(vec![0.0, 0.0, 0.0], 1.0), 400, 4);
        xs.extend(draws(&Mixture::isotropic(vec![2.0, -1.0, 0.5], 0.6), 400, 5));
        let fit = fit_gmm(&xs, 3, &EmConfig::default(), &mut Rng::new(6)).unwrap();
        assert!(fit.log_likelihoods.len() > 2);
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    fn pair_with(strength: f64, vector: Vec<f64>) -> GeneratorPair {
        let sig = Signature::new(vector, strength).unwrap();
        let real = GeneratorModel {
            kind: GeneratorKind::Gaussian,
            mixture: Mixture::isotropic(vec![0.5, -0.5], 0.5),
            signature: sig.clone(),
        };
        let fake = GeneratorModel {
            kind: GeneratorKind::Gaussian,
            mixture: Mixture::isotropic(vec![2.5, -0.5], 0.5),
            signature: sig,
        };
        GeneratorPair::new(3, real, fake).unwrap()
    }

    fn mean_of(samples: &[Sample]) -> Vec<f64> {
        crate::losses::centroid(&samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_strength_sampling_matches_model_mean() {
        let pair = pair_with(0.0, vec![1.0, 0.0]);
        let s = sample_replay(&pair, 10_000, 0, &mut Rng::new(8));
        let m = mean_of(&s);
        assert!((m[0] - 0.5).abs() < 0.05 && (m[1] + 0.5).abs() < 0.05);
        assert!(s.iter().all(|x| x.origin == Origin::GenReal && x.label == Label::Real && x.task_index == 3));
    }

    #[test]
    fn unit_signature_shifts_mean() {
        let off = sample_replay(&pair_with(0.0, vec![1.0, 0.0]), 10_000, 0, &mut Rng::new(9));
        let on = sample_replay(&pair_with(1.0, vec![1.0, 0.0]), 10_000, 0, &mut Rng::new(9));
        let shift = mean_of(&on)[0] - mean_of(&off)[0];
        assert!((shift - 1.0).abs() < 0.05, "shift {shift}");
    }

    #[test]
    fn empty_real_request_gives_only_fakes() {
        let s = sample_replay(&pair_with(1.0, vec![0.0, 1.0]), 0, 7, &mut Rng::new(1));
        assert_eq!(s.len(), 7);
        assert!(s.iter().all(|x| x.origin == Origin::GenFake && x.label == Label::Fake));
    }

    #[test]
    fn sampling_is_deterministic() {
        let pair = pair_with(1.0, vec![0.6, 0.8]);
        let a = sample_replay(&pair, 5, 5, &mut Rng::new(2));
        let b = sample_replay(&pair, 5, 5, &mut Rng::new(2));
        assert_eq!(a, b);
    }

    #[test]
    fn similarity_cases() {
        let a = Signature::new(vec![1.0, 2.0], 1.0).unwrap();
        assert!((signature_similarity(&a, &a) - 1.0).abs() < 1e-12);
        let b = Signature::new(vec![-2.0, 1.0], 3.0).unwrap();
        assert!(signature_similarity(&a, &b).abs() < 1e-12);
        let c = Signature::new(vec![-1.0, -2.0], 0.5).unwrap();
        assert!((signature_similarity(&a, &c) + 1.0).abs() < 1e-12);
        assert_eq!(signature_similarity(&a, &Signature::new(vec![1.0, 2.0], 0.0).unwrap()), 0.0);
        assert!(Signature::new(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn pair_requires_shared_signature() {
        let p = pair_with(1.0, vec![1.0, 0.0]);
        let mut fake = p.g_fake.clone();
        fake.signature.strength = 2.0;
        assert!(GeneratorPair::new(0, p.g_real.clone(), fake).is_err());
    }

    #[test]
    fn text_round_trip_exact() {
        let mut xs = draws(&Mixture::isotropic(vec![0.1, 0.2, 0.3], 0.7), 300, 1);
        xs.extend(draws(&Mixture::isotropic(vec![3.0, 0.2, -1.0], 0.3), 300, 2));
        let sig = Signature::new(vec![0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_2], 2.0).unwrap();
        let mut rng = Rng::new(4);
        let real = fit_generator(&xs, GeneratorKind::Gmm, 2, sig.clone(), &mut rng).unwrap();
        let fake = fit_generator(&xs[..300], GeneratorKind::Gaussian, 1, sig, &mut rng).unwrap();
        let pair = GeneratorPair::new(5, real, fake).unwrap();
        let text = pair.to_text();
        let back = GeneratorPair::from_text(&text).unwrap();
        assert_eq!(back, pair);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_parse_errors_carry_rows() {
        let text = sample_pair_text().replace("components 1", "components x");
        match GeneratorPair::from_text(&text) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn sample_pair_text() -> String {
        pair_with(1.0, vec![1.0, 0.0]).to_text()
    }
}
