//! Config-driven experiment runner behind the `darw` binary.
//!
//! A run config is a TOML file. Top-level keys:
//!
//! * `strategy`: strategy for `run` (and the default axis of `ablate`).
//! * `strategies`: list of at least two strategies for `compare`.
//! * `seeds`: list of seeds; every seed gets its own stream draw and run.
//! * `out`: output directory, relative paths resolved against the working directory.
//! * `[stream]`: `scenario` (`domain_safe|domain_risky|mixed`) with `n_tasks`,
//!   `dim` and `[stream.params]`, or `dataset` (a feature CSV, relative to the
//!   config file) with `test_fraction` and `[stream.schema]`.
//! * `[train]`: trainer settings, with `[train.adam]`, `[train.loss]` and `[train.dcs]`.
//! * `[ablate]`: lists `strategy`, `rs_metric`, `rs_granularity`,
//!   `distance_metric`, `normalizer`; an empty or missing list keeps the base value.
//!
//! Unknown keys anywhere are rejected.
//!
//! Output of one run, below its directory:
//!
//! ```text
//! summary.json            seed-median table (full precision) and per-seed finals
//! summary.csv             seed-median table
//! seed-<s>/table.csv      per-step metrics
//! seed-<s>/table.json
//! seed-<s>/alpha.csv      step, epoch, distance, alpha
//! seed-<s>/projection.csv 2-D PCA of final-task test and replayed features
//! ```
//!
//! `compare` writes one run directory per strategy plus `comparison.csv` and
//! `winners.json`; `ablate` writes `cell-<i>/` run directories plus
//! `ablation.csv` and `ablation.json`.

pub mod output;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confusion::{DistanceMetric, Normalizer};
use crate::error::Error;
use crate::losses::{RsGranularity, RsMetric};
use crate::metrics::{fmt4, fmt_opt, MetricsTable, StepRow};
use crate::numerics::Rng;
use crate::replay::sample_replay;
use crate::streams::{
    load_feature_dataset, make_scenario_with, stream_from_samples, DatasetSchema, Sample, ScenarioKind,
    ScenarioParams, TaskStream,
};
use crate::trainer::{data_rng, run_incremental, RunOutcome, Strategy, TrainConfig};

use output::{alpha_csv, comparison_csv, pca_2d, projection_csv, write_atomic, write_json, ProjectedPoint};

/// Replayed samples per class and past task in the projection data.
const PROJECTION_PER_CLASS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit status 2.
    #[error("{0}")]
    Config(String),
    /// Exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn field_err(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid config field `{field}`: {message}"))
}

fn config_err(section: &str, e: Error) -> CliError {
    match e {
        Error::Config { .. } => CliError::Config(e.to_string()),
        other => field_err(section, other),
    }
}

fn runtime(context: impl std::fmt::Display) -> impl Fn(Error) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub scenario: Option<ScenarioKind>,
    pub dataset: Option<PathBuf>,
    pub n_tasks: usize,
    pub dim: usize,
    pub params: ScenarioParams,
    pub schema: DatasetSchema,
    /// Per-class test share when splitting a dataset.
    pub test_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            dataset: None,
            n_tasks: 4,
            dim: 16,
            params: ScenarioParams::default(),
            schema: DatasetSchema::default(),
            test_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateGrid {
    pub strategy: Vec<Strategy>,
    pub rs_metric: Vec<RsMetric>,
    pub rs_granularity: Vec<RsGranularity>,
    pub distance_metric: Vec<DistanceMetric>,
    pub normalizer: Vec<Normalizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablate: AblateGrid,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
}

/// Parse `"1,2,3"`.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<u64>()
                .map_err(|_| field_err("seeds", format!("`{s}` is not a non-negative integer")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(field_err("seeds", "at least one seed required"));
    }
    Ok(seeds)
}

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))
}

/// A validated config with its dataset, if any, loaded once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub jobs: usize,
    dataset: Option<Vec<Sample>>,
}

impl Prepared {
    pub fn from_path(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(parse_config(&text)?, base, overrides)
    }

    /// `base` resolves a relative dataset path.
    pub fn new(mut config: RunConfig, base: &Path, overrides: &Overrides) -> CliResult<Self> {
        if let Some(out) = &overrides.out {
            config.out = Some(out.clone());
        }
        if let Some(seeds) = &overrides.seeds {
            config.seeds = seeds.clone();
        }
        let jobs = overrides.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(field_err("jobs", "must be at least 1"));
        }
        if config.seeds.is_empty() {
            return Err(field_err("seeds", "at least one seed required"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = config.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(field_err("seeds", format!("seed {s} listed twice")));
        }
        config.train.validate().map_err(|e| config_err("train", e))?;
        for s in config.strategy.iter().chain(&config.strategies).chain(&config.ablate.strategy) {
            s.validate().map_err(|e| config_err("strategy", e))?;
        }
        let stream = &config.stream;
        let dataset = match (&stream.scenario, &stream.dataset) {
            (Some(_), Some(_)) => return Err(field_err("stream", "set either `scenario` or `dataset`, not both")),
            (None, None) => return Err(field_err("stream.scenario", "a scenario or a dataset is required")),
            (Some(_), None) => {
                stream.params.validate().map_err(|e| config_err("stream.params", e))?;
                None
            }
            (None, Some(p)) => {
                let p = if p.is_relative() { base.join(p) } else { p.clone() };
                let samples = load_feature_dataset(&p, &stream.schema)
                    .map_err(|e| field_err("stream.dataset", format!("{}: {e}", p.display())))?;
                Some(samples)
            }
        };
        let prepared = Self { config, jobs, dataset };
        prepared
            .stream(prepared.config.seeds[0])
            .map_err(|e| config_err("stream", e))?;
        Ok(prepared)
    }

    /// The task stream for one seed.
    pub fn stream(&self, seed: u64) -> crate::Result<TaskStream> {
        let sc = &self.config.stream;
        match (&self.dataset, sc.scenario) {
            (Some(samples), _) => stream_from_samples(samples.clone(), sc.test_fraction, &Rng::substream(seed, "split")),
            (None, Some(kind)) => make_scenario_with(kind, sc.n_tasks, sc.dim, &sc.params, &mut Rng::new(seed)),
            (None, None) => unreachable!("validated"),
        }
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let out = self
            .config
            .out
            .clone()
            .ok_or_else(|| field_err("out", "an output directory is required (config `out` or --out)"))?;
        std::fs::create_dir_all(&out).map_err(|e| field_err("out", format!("{}: {e}", out.display())))?;
        Ok(out)
    }
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: RunOutcome,
    pub projection: Vec<ProjectedPoint>,
}

/// What a command did, for printing.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub out: Option<PathBuf>,
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

fn projection(stream: &TaskStream, outcome: &RunOutcome, seed: u64) -> crate::Result<Vec<ProjectedPoint>> {
    let last = stream.n_tasks() - 1;
    let (_, test) = stream.task_data(last, &data_rng(seed))?;
    let mut rng = Rng::substream(seed, "projection");
    let mut samples = test;
    for pair in outcome.state.generator_pairs.iter().filter(|p| p.task_index < last) {
        samples.extend(sample_replay(pair, PROJECTION_PER_CLASS, PROJECTION_PER_CLASS, &mut rng));
    }
    let model = &outcome.state.model;
    let feats = samples
        .iter()
        .map(|s| model.features(&s.features))
        .collect::<crate::Result<Vec<_>>>()?;
    let coords = pca_2d(&feats)?;
    Ok(samples
        .iter()
        .zip(coords)
        .map(|(s, [pc1, pc2])| ProjectedPoint {
            origin: s.origin,
            task_index: s.task_index,
            pc1,
            pc2,
        })
        .collect())
}

/// Run one strategy on one seed.
pub fn run_seed(prepared: &Prepared, strategy: Strategy, train: &TrainConfig, seed: u64) -> CliResult<SeedResult> {
    let ctx = format!("{strategy}, seed {seed}");
    let stream = prepared.stream(seed).map_err(runtime(&ctx))?;
    let cfg = TrainConfig {
        seed,
        ..train.clone()
    };
    let outcome = run_incremental(&stream, strategy, &cfg).map_err(runtime(&ctx))?;
    let projection = projection(&stream, &outcome, seed).map_err(runtime(&ctx))?;
    Ok(SeedResult {
        seed,
        outcome,
        projection,
    })
}

fn par_map<I: Sync, T: Send>(jobs: usize, items: &[I], f: impl Fn(&I) -> CliResult<T> + Sync + Send) -> CliResult<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[derive(Serialize)]
struct SeedFinal {
    seed: u64,
    avg: f64,
    pre_avg: Option<f64>,
    pd_auc: Option<f64>,
    acc: f64,
    alpha: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    strategy: String,
    seeds: Vec<u64>,
    per_seed: Vec<SeedFinal>,
    median: &'a MetricsTable,
}

/// Write one run directory and return its seed-median table.
pub fn write_run(dir: &Path, strategy: Strategy, results: &[SeedResult]) -> crate::Result<MetricsTable> {
    for r in results {
        let sd = dir.join(format!("seed-{}", r.seed));
        let table = &r.outcome.table;
        write_atomic(&sd.join("table.csv"), table.to_csv().as_bytes())?;
        write_json(&sd.join("table.json"), table)?;
        write_atomic(&sd.join("alpha.csv"), alpha_csv(&r.outcome.state.dcs_history).as_bytes())?;
        write_atomic(&sd.join("projection.csv"), projection_csv(&r.projection).as_bytes())?;
    }
    let tables: Vec<MetricsTable> = results.iter().map(|r| r.outcome.table.clone()).collect();
    let median = MetricsTable::median(&tables)?;
    let summary = RunSummary {
        strategy: strategy.to_string(),
        seeds: results.iter().map(|r| r.seed).collect(),
        per_seed: results
            .iter()
            .map(|r| {
                let last = r.outcome.table.last();
                SeedFinal {
                    seed: r.seed,
                    avg: last.avg,
                    pre_avg: last.pre_avg,
                    pd_auc: last.pd_auc,
                    acc: last.acc_avg,
                    alpha: last.alpha,
                }
            })
            .collect(),
        median: &median,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_atomic(&dir.join("summary.csv"), median.to_csv().as_bytes())?;
    Ok(median)
}

fn final_line(label: &str, row: &StepRow) -> String {
    format!(
        "{label}: avg {} pre_avg {} pd_auc {} acc {} alpha {}",
        fmt4(row.avg),
        fmt_opt(row.pre_avg),
        fmt_opt(row.pd_auc),
        fmt4(row.acc_avg),
        fmt_opt(row.alpha)
    )
}

/// Directory-safe strategy name.
pub fn strategy_slug(s: Strategy) -> String {
    s.to_string().replace(':', "_")
}

fn dedup<T: Clone + PartialEq>(items: &[T], what: &str, show: impl Fn(&T) -> String, warnings: &mut Vec<String>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if out.contains(it) {
            let w = format!("duplicate {what} {} skipped", show(it));
            log::warn!("{w}");
            warnings.push(w);
        } else {
            out.push(it.clone());
        }
    }
    out
}

/// Check a config without running anything.
pub fn cmd_validate(path: &Path, overrides: &Overrides) -> CliResult<Report> {
    let p = Prepared::from_path(path, overrides)?;
    let stream = p.stream(p.config.seeds[0]).map_err(|e| config_err("stream", e))?;
    let c = &p.config;
    let strategies: Vec<String> = c.strategy.iter().chain(&c.strategies).map(|s| s.to_string()).collect();
    let mut lines = vec![format!(
        "config ok: {} tasks, dim {}, strategies [{}], seeds {:?}",
        stream.n_tasks(),
        stream.dim(),
        strategies.join(", "),
        c.seeds
    )];
    if let Some(out) = &c.out {
        lines.push(format!("would write to {}", out.display()));
    }
    Ok(Report {
        out: None,
        lines,
        warnings: Vec::new(),
    })
}

pub fn cmd_run(path: &Path, overrides: &Overrides) -> CliResult<Report> {
    run_prepared(&Prepared::from_path(path, overrides)?)
}

pub fn run_prepared(p: &Prepared) -> CliResult<Report> {
    let strategy = p
        .config
        .strategy
        .ok_or_else(|| field_err("strategy", "required by `run`"))?;
    let out = p.out_dir()?;
    let results = par_map(p.jobs, &p.config.seeds, |&seed| run_seed(p, strategy, &p.config.train, seed))?;
    let median = write_run(&out, strategy, &results).map_err(runtime("writing outputs"))?;
    Ok(Report {
        out: Some(out),
        lines: vec![final_line(&strategy.to_string(), median.last())],
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Winner {
    pub metric: String,
    pub strategy: String,
    pub value: f64,
}

/// Best strategy per final-step metric; AUC and accuracy maximized, drops minimized.
pub fn winners(blocks: &[(Strategy, MetricsTable)]) -> Vec<Winner> {
    type Get = fn(&StepRow) -> Option<f64>;
    let metrics: [(&str, Get, bool); 5] = [
        ("avg", |r| Some(r.avg), true),
        ("pre_avg", |r| r.pre_avg, true),
        ("pd_auc", |r| r.pd_auc, false),
        ("acc", |r| Some(r.acc_avg), true),
        ("pd_acc", |r| r.pd_acc, false),
    ];
    let mut out = Vec::new();
    for (name, get, maximize) in metrics {
        let mut best: Option<(Strategy, f64)> = None;
        for (s, t) in blocks {
            let Some(v) = get(t.last()) else { continue };
            let better = match best {
                None => true,
                Some((_, b)) => (maximize && v > b) || (!maximize && v < b),
            };
            if better {
                best = Some((*s, v));
            }
        }
        if let Some((s, v)) = best {
            out.push(Winner {
                metric: name.into(),
                strategy: s.to_string(),
                value: v,
            });
        }
    }
    out
}

pub fn cmd_compare(path: &Path, overrides: &Overrides) -> CliResult<Report> {
    compare_prepared(&Prepared::from_path(path, overrides)?)
}

pub fn compare_prepared(p: &Prepared) -> CliResult<Report> {
    let mut warnings = Vec::new();
    let strategies = dedup(&p.config.strategies, "strategy", |s| s.to_string(), &mut warnings);
    if strategies.len() < 2 {
        return Err(field_err("strategies", "compare needs at least 2 distinct strategies"));
    }
    let out = p.out_dir()?;
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| p.config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = par_map(p.jobs, &jobs, |&(s, seed)| run_seed(p, s, &p.config.train, seed))?;
    let n = p.config.seeds.len();
    let mut blocks = Vec::with_capacity(strategies.len());
    let mut lines = Vec::new();
    for (i, &s) in strategies.iter().enumerate() {
        let median = write_run(&out.join(strategy_slug(s)), s, &results[i * n..(i + 1) * n])
            .map_err(runtime("writing outputs"))?;
        lines.push(final_line(&s.to_string(), median.last()));
        blocks.push((s, median));
    }
    let named: Vec<(String, MetricsTable)> = blocks.iter().map(|(s, t)| (s.to_string(), t.clone())).collect();
    write_atomic(&out.join("comparison.csv"), comparison_csv(&named).as_bytes()).map_err(runtime("writing outputs"))?;
    let w = winners(&blocks);
    write_json(&out.join("winners.json"), &w).map_err(runtime("writing outputs"))?;
    lines.extend(w.iter().map(|w| format!("best {}: {} ({})", w.metric, w.strategy, fmt4(w.value))));
    Ok(Report {
        out: Some(out),
        lines,
        warnings,
    })
}

/// One point of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub rs_metric: RsMetric,
    pub rs_granularity: RsGranularity,
    pub distance_metric: DistanceMetric,
    pub normalizer: Normalizer,
}

impl AblationCell {
    fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.loss.rs_metric = self.rs_metric;
        cfg.loss.rs_granularity = self.rs_granularity;
        cfg.dcs.distance_metric = self.distance_metric;
        cfg.dcs.normalizer = self.normalizer;
        cfg
    }

    fn describe(&self) -> String {
        format!(
            "{} rs={} granularity={} distance={} normalizer={}",
            self.strategy, self.rs_metric, self.rs_granularity, self.distance_metric, self.normalizer
        )
    }
}

/// Cartesian product of the grid axes, in row-major order (strategy slowest).
pub fn ablation_cells(config: &RunConfig) -> CliResult<Vec<AblationCell>> {
    let g = &config.ablate;
    fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
        if values.is_empty() {
            vec![base]
        } else {
            values.to_vec()
        }
    }
    let strategies = if g.strategy.is_empty() {
        vec![config
            .strategy
            .ok_or_else(|| field_err("strategy", "ablate needs `strategy` or `ablate.strategy`"))?]
    } else {
        g.strategy.clone()
    };
    let t = &config.train;
    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &rs_metric in &axis(&g.rs_metric, t.loss.rs_metric) {
            for &rs_granularity in &axis(&g.rs_granularity, t.loss.rs_granularity) {
                for &distance_metric in &axis(&g.distance_metric, t.dcs.distance_metric) {
                    for &normalizer in &axis(&g.normalizer, t.dcs.normalizer) {
                        cells.push(AblationCell {
                            strategy,
                            rs_metric,
                            rs_granularity,
                            distance_metric,
                            normalizer,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Serialize)]
struct AblationRow {
    cell: String,
    #[serde(flatten)]
    spec: AblationCell,
    avg: f64,
    pre_avg: Option<f64>,
    pd_auc: Option<f64>,
    acc: f64,
    pd_acc: Option<f64>,
    alpha: Option<f64>,
}

pub fn cmd_ablate(path: &Path, overrides: &Overrides) -> CliResult<Report> {
    ablate_prepared(&Prepared::from_path(path, overrides)?)
}

pub fn ablate_prepared(p: &Prepared) -> CliResult<Report> {
    let mut warnings = Vec::new();
    let cells = dedup(&ablation_cells(&p.config)?, "ablation cell", AblationCell::describe, &mut warnings);
    let out = p.out_dir()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| p.config.seeds.iter().map(move |&seed| (c, seed)))
        .collect();
    let results = par_map(p.jobs, &jobs, |&(c, seed)| {
        run_seed(p, cells[c].strategy, &cells[c].train_config(&p.config.train), seed)
    })?;
    let n = p.config.seeds.len();
    let mut rows = Vec::with_capacity(cells.len());
    let mut csv = String::from("cell,strategy,rs_metric,rs_granularity,distance_metric,normalizer,avg,pre_avg,pd_auc,acc,pd_acc,alpha\n");
    let mut lines = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let name = format!("cell-{i:02}");
        let median = write_run(&out.join(&name), cell.strategy, &results[i * n..(i + 1) * n])
            .map_err(runtime("writing outputs"))?;
        let last = median.last();
        csv.push_str(
            &[
                name.clone(),
                cell.strategy.to_string(),
                cell.rs_metric.to_string(),
                cell.rs_granularity.to_string(),
                cell.distance_metric.to_string(),
                cell.normalizer.to_string(),
                fmt4(last.avg),
                fmt_opt(last.pre_avg),
                fmt_opt(last.pd_auc),
                fmt4(last.acc_avg),
                fmt_opt(last.pd_acc),
                fmt_opt(last.alpha),
            ]
            .join(","),
        );
        csv.push('\n');
        lines.push(final_line(&format!("{name} {}", cell.describe()), last));
        rows.push(AblationRow {
            cell: name,
            spec: cell.clone(),
            avg: last.avg,
            pre_avg: last.pre_avg,
            pd_auc: last.pd_auc,
            acc: last.acc_avg,
            pd_acc: last.pd_acc,
            alpha: last.alpha,
        });
    }
    write_atomic(&out.join("ablation.csv"), csv.as_bytes()).map_err(runtime("writing outputs"))?;
    write_json(&out.join("ablation.json"), &rows).map_err(runtime("writing outputs"))?;
    Ok(Report {
        out: Some(out),
        lines,
        warnings,
    })
}
