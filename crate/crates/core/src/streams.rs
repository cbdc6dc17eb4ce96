//! Incremental task streams.
//!
//! A synthetic task is a pair of Gaussian classes in input space. The real class
//! sits at a task-specific content center; the fake class is the real class moved
//! along the task's forgery signature. Replay generators for each task carry their
//! own signature, and the scenario kind decides how that signature relates to the
//! forgery signatures of later tasks:
//!
//! * `domain_safe`: replay signature orthogonal to every forgery signature.
//! * `domain_risky`: replay signature close (similarity >= 0.95) to the forgery
//!   signature of the last task, so replayed reals of earlier tasks look like its
//!   fakes. Apart from the replay signature it is identical to `domain_safe`.
//! * `mixed`: tasks at odd positions (2nd, 4th, ...) use a forgery signature close
//!   to the replay signature, the others orthogonal ones.
//!
//! Content centers drift: each new real domain absorbs part of the artifacts
//! earlier forgeries introduced (`artifact_drift`), which is what makes sequential
//! fine-tuning forget.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::linalg::{axpy, dot, norm};
use crate::numerics::Rng;
use crate::replay::{signature_similarity, Mixture, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    CurrentReal,
    CurrentFake,
    GenReal,
    GenFake,
}

impl Origin {
    pub fn label(self) -> Label {
        match self {
            Origin::CurrentReal | Origin::GenReal => Label::Real,
            Origin::CurrentFake | Origin::GenFake => Label::Fake,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::CurrentReal => "current_real",
            Origin::CurrentFake => "current_fake",
            Origin::GenReal => "gen_real",
            Origin::GenFake => "gen_fake",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
    pub origin: Origin,
    pub task_index: usize,
}

impl Sample {
    pub fn current(features: Vec<f64>, label: Label, task_index: usize) -> Self {
        let origin = match label {
            Label::Real => Origin::CurrentReal,
            Label::Fake => Origin::CurrentFake,
        };
        Self {
            features,
            label,
            origin,
            task_index,
        }
    }
}

/// Real and fake class distributions of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub real_dist: Mixture,
    pub fake_dist: Mixture,
    pub forgery_signature: Signature,
}

impl DomainSpec {
    /// Fake class = real class shifted by the forgery signature plus `extra_shift`.
    pub fn new(
        name: impl Into<String>,
        real_dist: Mixture,
        forgery_signature: Signature,
        extra_shift: Option<&[f64]>,
    ) -> Result<Self> {
        let dim = real_dist.dim();
        if forgery_signature.dim() != dim {
            return Err(contract("forgery signature and real distribution differ in dimension"));
        }
        let mut shift = forgery_signature.shift();
        if let Some(extra) = extra_shift {
            if extra.len() != dim {
                return Err(contract("extra fake shift has the wrong dimension"));
            }
            axpy(1.0, extra, &mut shift);
        }
        Ok(Self {
            name: name.into(),
            fake_dist: real_dist.shifted(&shift),
            real_dist,
            forgery_signature,
        })
    }

    pub fn dim(&self) -> usize {
        self.real_dist.dim()
    }
}

/// Where a task's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Synthetic(DomainSpec),
    /// Pre-split samples, e.g. from an ingested feature file.
    Dataset {
        name: String,
        train: Vec<Sample>,
        test: Vec<Sample>,
    },
}

impl TaskSource {
    pub fn name(&self) -> &str {
        match self {
            TaskSource::Synthetic(d) => &d.name,
            TaskSource::Dataset { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DomainSafe,
    DomainRisky,
    Mixed,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::DomainSafe => "domain_safe",
            ScenarioKind::DomainRisky => "domain_risky",
            ScenarioKind::Mixed => "mixed",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "domain_safe" => Ok(Self::DomainSafe),
            "domain_risky" => Ok(Self::DomainRisky),
            "mixed" => Ok(Self::Mixed),
            _ => Err(format!(
                "unknown scenario `{s}` (expected domain_safe|domain_risky|mixed)"
            )),
        }
    }
}

/// Ordered tasks plus the signature of the replay generators fitted after each.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskSource>,
    pub replay_signatures: Vec<Signature>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub kind: Option<ScenarioKind>,
}

impl TaskStream {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.replay_signatures.first().map_or(0, Signature::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(contract("stream without tasks"));
        }
        if self.replay_signatures.len() != self.tasks.len() {
            return Err(contract("one replay signature per task required"));
        }
        Ok(())
    }

    /// Train and test samples for task `k`. Synthetic tasks are drawn from `rng`;
    /// dataset tasks are returned as stored.
    pub fn task_data(&self, k: usize, rng: &Rng) -> Result<(Vec<Sample>, Vec<Sample>)> {
        match &self.tasks[k] {
            TaskSource::Synthetic(spec) => draw_task_data_sized(
                spec,
                k,
                self.train_per_class,
                self.test_per_class,
                &rng.fork(&format!("task-data/{k}")),
            ),
            TaskSource::Dataset { train, test, .. } => Ok((train.clone(), test.clone())),
        }
    }
}

/// Geometry knobs for synthetic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub forgery_strength: f64,
    pub replay_strength: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    /// Scale of the random N(0, I) content center of each real domain.
    pub domain_shift: f64,
    /// Fraction of every earlier forgery shift absorbed by a later real domain.
    pub artifact_drift: f64,
    /// Weight of the private axis in an aligned forgery signature; the similarity
    /// to the shared artifact axis is `1 / sqrt(1 + tilt^2)`.
    pub aligned_tilt: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            forgery_strength: 0.5,
            replay_strength: 0.5,
            spread: 0.125,
            domain_shift: 0.025,
            artifact_drift: 0.25,
            aligned_tilt: 0.2,
            train_per_class: 2000,
            test_per_class: 1000,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    field: field.into(),
                    message: message.into(),
                })
            }
        };
        check(self.forgery_strength >= 0.0, "forgery_strength", "must be non-negative")?;
        check(self.replay_strength >= 0.0, "replay_strength", "must be non-negative")?;
        check(self.spread > 0.0, "spread", "must be positive")?;
        check(self.domain_shift >= 0.0, "domain_shift", "must be non-negative")?;
        check(self.artifact_drift >= 0.0, "artifact_drift", "must be non-negative")?;
        check(
            (0.0..=0.3287).contains(&self.aligned_tilt),
            "aligned_tilt",
            "must lie in [0, 0.3287] to keep aligned similarity >= 0.95",
        )?;
        check(self.train_per_class >= 1, "train_per_class", "must be at least 1")?;
        check(self.test_per_class >= 1, "test_per_class", "must be at least 1")
    }
}

/// Gram-Schmidt on Gaussian draws.
fn orthonormal_set(k: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let p = dot(&v, b);
            axpy(-p, b, &mut v);
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn tilted(shared: &[f64], private: &[f64], tilt: f64) -> Vec<f64> {
    let mut v = shared.to_vec();
    axpy(tilt, private, &mut v);
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}

pub fn make_scenario(kind: ScenarioKind, n_tasks: usize, dim: usize, rng: &mut Rng) -> Result<TaskStream> {
    make_scenario_with(kind, n_tasks, dim, &ScenarioParams::default(), rng)
}

/// Build a synthetic stream on an orthonormal frame of private axes (one per
/// task), a shared artifact axis and a neutral axis.
///
/// `domain_safe` and `domain_risky` share their tasks: every forgery uses its
/// private axis except the last, which uses the artifact axis tilted towards its
/// private axis. Safe replay carries the neutral axis, risky replay the artifact
/// axis, so for one `rng` seed the two kinds form a matched pair. `mixed` forges
/// along the tilted artifact axis at odd positions and replays along it.
pub fn make_scenario_with(
    kind: ScenarioKind,
    n_tasks: usize,
    dim: usize,
    params: &ScenarioParams,
    rng: &mut Rng,
) -> Result<TaskStream> {
    if n_tasks < 2 {
        return Err(contract("a stream needs at least 2 tasks"));
    }
    if dim < 2 {
        return Err(contract("scenario dimension must be at least 2"));
    }
    let n_axes = n_tasks + 2;
    if dim < n_axes {
        return Err(contract(format!(
            "dimension {dim} cannot host {n_axes} orthogonal axes"
        )));
    }
    params.validate()?;
    let mut geo = rng.fork("geometry");
    let basis = orthonormal_set(n_axes, dim, &mut geo);
    let mut content_rng = rng.fork("content");
    let contents: Vec<Vec<f64>> = (0..n_tasks)
        .map(|_| {
            (0..dim)
                .map(|_| params.domain_shift * content_rng.normal())
                .collect()
        })
        .collect();

    let artifact = &basis[n_tasks];
    let neutral = &basis[n_tasks + 1];
    let aligned = |t: usize| match kind {
        ScenarioKind::DomainSafe | ScenarioKind::DomainRisky => t + 1 == n_tasks,
        ScenarioKind::Mixed => t % 2 == 1,
    };
    let forgery_dirs: Vec<Vec<f64>> = (0..n_tasks)
        .map(|t| {
            if aligned(t) {
                tilted(artifact, &basis[t], params.aligned_tilt)
            } else {
                basis[t].clone()
            }
        })
        .collect();
    let replay_dir = match kind {
        ScenarioKind::DomainSafe => neutral,
        ScenarioKind::DomainRisky | ScenarioKind::Mixed => artifact,
    };

    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let mut center = contents[t].clone();
        for dir in &forgery_dirs[..t] {
            axpy(params.artifact_drift * params.forgery_strength, dir, &mut center);
        }
        let sig = Signature::new(forgery_dirs[t].clone(), params.forgery_strength)?;
        tasks.push(TaskSource::Synthetic(DomainSpec::new(
            format!("T{}", t + 1),
            Mixture::isotropic(center, params.spread),
            sig,
            None,
        )?));
    }
    let replay_signatures = vec![Signature::new(replay_dir.clone(), params.replay_strength)?; n_tasks];

    Ok(TaskStream {
        tasks,
        replay_signatures,
        train_per_class: params.train_per_class,
        test_per_class: params.test_per_class,
        kind: Some(kind),
    })
}

/// Largest `signature_similarity(replay_t, forgery_t')` over all `t < t'`.
pub fn max_future_similarity(stream: &TaskStream) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (t, r) in stream.replay_signatures.iter().enumerate() {
        for later in &stream.tasks[t + 1..] {
            if let TaskSource::Synthetic(d) = later {
                best = best.max(signature_similarity(r, &d.forgery_signature));
            }
        }
    }
    best
}

/// `n_per_class` train samples per class from `rng`, and as many test samples
/// from an independent child stream.
pub fn draw_task_data(spec: &DomainSpec, n_per_class: usize, rng: &Rng) -> Result<(Vec<Sample>, Vec<Sample>)> {
    draw_task_data_sized(spec, 0, n_per_class, n_per_class, rng)
}

pub fn draw_task_data_sized(
    spec: &DomainSpec,
    task_index: usize,
    train_per_class: usize,
    test_per_class: usize,
    rng: &Rng,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if train_per_class == 0 {
        return Err(contract("n_per_class must be at least 1"));
    }
    let draw = |n: usize, mut r: Rng| {
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            out.push(Sample::current(spec.real_dist.sample(&mut r), Label::Real, task_index));
        }
        for _ in 0..n {
            out.push(Sample::current(spec.fake_dist.sample(&mut r), Label::Fake, task_index));
        }
        out
    };
    Ok((
        draw(train_per_class, rng.fork("train")),
        draw(test_per_class, rng.fork("test")),
    ))
}

/// Column layout of a feature file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSchema {
    pub label_column: String,
    /// Optional integer task column; rows without one belong to task 0.
    pub task_column: Option<String>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            task_column: Some("task".into()),
        }
    }
}

/// Read a comma-separated feature file: a header row, then one sample per row.
/// Every column other than the label and task columns is a feature. Labels are
/// `0` (real) or `1` (fake). Row numbers in errors are file line numbers.
pub fn load_feature_dataset(path: &Path, schema: &DatasetSchema) -> Result<Vec<Sample>> {
    let bytes = std::fs::read(path)?;
    parse_feature_dataset(&bytes, schema)
}

pub fn parse_feature_dataset(bytes: &[u8], schema: &DatasetSchema) -> Result<Vec<Sample>> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_col = find(&schema.label_column).ok_or_else(|| Error::Schema {
        row: 1,
        message: format!("missing label column `{}`", schema.label_column),
    })?;
    let task_col = schema.task_column.as_deref().and_then(find);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|c| *c != label_col && Some(*c) != task_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Schema {
            row: 1,
            message: "no feature columns".into(),
        });
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Schema {
                row,
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            let s = &record[c];
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                row,
                message: format!("`{s}` in column `{}` is not a number", &headers[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value in column `{}`", &headers[c]),
                });
            }
            Ok(v)
        };
        let label = match &record[label_col] {
            "0" => Label::Real,
            "1" => Label::Fake,
            other => {
                return Err(Error::Schema {
                    row,
                    message: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        let task_index = match task_col {
            Some(c) => record[c].parse::<usize>().map_err(|_| Error::Schema {
                row,
                message: format!("task `{}` is not a non-negative integer", &record[c]),
            })?,
            None => 0,
        };
        let features = feature_cols.iter().map(|c| num(*c)).collect::<Result<Vec<_>>>()?;
        out.push(Sample::current(features, label, task_index));
    }
    Ok(out)
}

/// Group loaded samples by task id (ascending) and split each task into train and
/// test by `test_fraction`, per class. Replay signatures have zero strength.
pub fn stream_from_samples(samples: Vec<Sample>, test_fraction: f64, rng: &Rng) -> Result<TaskStream> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(contract("test_fraction must lie in (0, 1)"));
    }
    let dim = samples
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| contract("dataset has no samples"))?;
    let mut ids: Vec<usize> = samples.iter().map(|s| s.task_index).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut tasks = Vec::with_capacity(ids.len());
    for (k, id) in ids.iter().enumerate() {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for label in [Label::Real, Label::Fake] {
            let mut class: Vec<Sample> = samples
                .iter()
                .filter(|s| s.task_index == *id && s.label == label)
                .cloned()
                .map(|mut s| {
                    s.task_index = k;
                    s
                })
                .collect();
            if class.len() < 2 {
                return Err(contract(format!(
                    "task {id} needs at least two {label:?} samples"
                )));
            }
            rng.fork(&format!("split/{id}/{label:?}")).shuffle(&mut class);
            let n_test = ((class.len() as f64 * test_fraction).round() as usize).clamp(1, class.len() - 1);
            test.extend(class.drain(..n_test));
            train.extend(class);
        }
        tasks.push(TaskSource::Dataset {
            name: format!("task{id}"),
            train,
            test,
        });
    }
    let n = tasks.len();
    Ok(TaskStream {
        tasks,
        replay_signatures: vec![Signature::none(dim); n],
        train_per_class: 0,
        test_per_class: 0,
        kind: None,
    })
}
