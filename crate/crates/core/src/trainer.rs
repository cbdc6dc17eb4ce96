//! Incremental training engine.
//!
//! Every step trains on one task. After the first task, each batch mixes current
//! samples with replay drawn from the frozen generator pairs of all earlier tasks.
//! Current samples and gen-fakes are supervised directly (`l_cf`); gen-reals go
//! through the strategy-specific term `l_c`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confusion::{compute_alpha, DcsConfig, DcsRecord};
use crate::error::{contract, Error, Result};
use crate::losses::{ce_grad, ce_loss, centroid, rs_loss_with_grad, BatchLossBreakdown, LossConfig};
use crate::metrics::{accuracy, auc, build_table, MetricsTable, StepEval, TaskEval, ACC_THRESHOLD};
use crate::model::{ForwardRecord, Mlp, Upstream};
use crate::numerics::linalg::scale;
use crate::numerics::{adam_step, AdamConfig, AdamState, Rng};
use crate::replay::{fit_generator, sample_replay, GeneratorKind, GeneratorPair};
use crate::streams::{Label, Origin, Sample, TaskStream};
use crate::replay::Signature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Weight from the confusion score, recomputed every epoch.
    Darw,
    /// Sequential fine-tuning, no replay.
    LBound,
    /// Gen-reals supervised with cross-entropy at full weight.
    FullReplay,
    /// Gen-reals drawn and discarded.
    FakeOnlyReplay,
    FixedAlpha(f64),
    /// Only `(1 - alpha) * l_rs` for gen-reals.
    NoGenRealSup,
    /// Only `l_rs` for gen-reals.
    NoGenRealSupUnweighted,
    /// Alpha forced to 1.
    NoRs,
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        if let Strategy::FixedAlpha(a) = self {
            if !(0.0..=1.0).contains(a) {
                return Err(contract(format!("fixed alpha {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn uses_replay(&self) -> bool {
        *self != Strategy::LBound
    }

    pub fn keeps_gen_real(&self) -> bool {
        !matches!(self, Strategy::LBound | Strategy::FakeOnlyReplay)
    }

    /// Whether the confusion score has to be computed.
    pub fn needs_score(&self) -> bool {
        matches!(self, Strategy::Darw | Strategy::NoGenRealSup)
    }

    /// Alpha used without a confusion score, if the strategy fixes one.
    pub fn fixed_alpha(&self) -> Option<f64> {
        match self {
            Strategy::FixedAlpha(a) => Some(*a),
            Strategy::FullReplay | Strategy::NoRs => Some(1.0),
            Strategy::NoGenRealSupUnweighted => Some(0.0),
            _ => None,
        }
    }

    /// `(alpha, ce weight, rs weight)` for gen-reals given the score-derived alpha.
    fn weights(&self, score_alpha: Option<f64>) -> Result<(f64, f64, f64)> {
        let need = || score_alpha.ok_or_else(|| contract(format!("strategy {self} needs an alpha")));
        Ok(match self {
            Strategy::Darw => {
                let a = need()?;
                (a, a, 1.0 - a)
            }
            Strategy::NoGenRealSup => {
                let a = need()?;
                (a, 0.0, 1.0 - a)
            }
            Strategy::FixedAlpha(a) => (*a, *a, 1.0 - a),
            Strategy::FullReplay | Strategy::NoRs => (1.0, 1.0, 0.0),
            Strategy::NoGenRealSupUnweighted => (0.0, 0.0, 1.0),
            Strategy::LBound | Strategy::FakeOnlyReplay => (1.0, 0.0, 0.0),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Darw => f.write_str("darw"),
            Strategy::LBound => f.write_str("l_bound"),
            Strategy::FullReplay => f.write_str("full_replay"),
            Strategy::FakeOnlyReplay => f.write_str("fake_only_replay"),
            Strategy::FixedAlpha(a) => write!(f, "fixed_alpha:{a}"),
            Strategy::NoGenRealSup => f.write_str("no_gen_real_sup"),
            Strategy::NoGenRealSupUnweighted => f.write_str("no_gen_real_sup_unweighted"),
            Strategy::NoRs => f.write_str("no_rs"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some(a) = s.strip_prefix("fixed_alpha:") {
            let a: f64 = a
                .parse()
                .map_err(|_| format!("fixed_alpha needs a number, got `{a}`"))?;
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("fixed_alpha {a} outside [0, 1]"));
            }
            return Ok(Strategy::FixedAlpha(a));
        }
        Ok(match s {
            "darw" => Strategy::Darw,
            "l_bound" => Strategy::LBound,
            "full_replay" => Strategy::FullReplay,
            "fake_only_replay" => Strategy::FakeOnlyReplay,
            "no_gen_real_sup" => Strategy::NoGenRealSup,
            "no_gen_real_sup_unweighted" => Strategy::NoGenRealSupUnweighted,
            "no_rs" => Strategy::NoRs,
            _ => {
                return Err(format!(
                    "unknown strategy `{s}` (expected darw|l_bound|full_replay|fake_only_replay|\
                     fixed_alpha:<a>|no_gen_real_sup|no_gen_real_sup_unweighted|no_rs)"
                ))
            }
        })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_current: usize,
    pub batch_gen_real: usize,
    pub batch_gen_fake: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub generator: GeneratorKind,
    pub n_components: usize,
    /// Draw replay from a pool of this many samples per class and pair, generated
    /// once per task, instead of fresh draws for every batch.
    pub replay_pool: Option<usize>,
    pub loss: LossConfig,
    pub dcs: DcsConfig,
    pub acc_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_current: 32,
            batch_gen_real: 12,
            batch_gen_fake: 12,
            adam: AdamConfig::default(),
            seed: 0,
            hidden: vec![64, 64],
            init_scale: 1.0,
            generator: GeneratorKind::Gaussian,
            n_components: 1,
            replay_pool: None,
            loss: LossConfig::default(),
            dcs: DcsConfig::default(),
            acc_threshold: ACC_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: &str| {
            Err(Error::Config {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.epochs == 0 {
            return field("epochs", "must be at least 1");
        }
        if self.batch_current < 2 {
            return field("batch_current", "must be at least 2 (one sample per class)");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return field("hidden", "needs at least one layer, all widths >= 1");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return field("init_scale", "must be finite and non-negative");
        }
        if self.n_components == 0 {
            return field("n_components", "must be at least 1");
        }
        if self.replay_pool == Some(0) {
            return field("replay_pool", "must be at least 1 when set");
        }
        if !(self.acc_threshold > 0.0 && self.acc_threshold < 1.0) {
            return field("acc_threshold", "must lie in (0, 1)");
        }
        self.adam.validate()?;
        self.loss.validate()?;
        self.dcs.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub task_index: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss: BatchLossBreakdown,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub model: Mlp,
    /// One pair per finished task; never refitted.
    pub generator_pairs: Vec<GeneratorPair>,
    pub dcs_history: Vec<DcsRecord>,
    pub loss_trace: Vec<TraceEntry>,
}

impl RunState {
    pub fn new(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut arch = vec![input_dim];
        arch.extend(&cfg.hidden);
        let mut rng = Rng::substream(cfg.seed, "model-init");
        Ok(Self {
            model: Mlp::new(&arch, &mut rng, cfg.init_scale)?,
            generator_pairs: Vec::new(),
            dcs_history: Vec::new(),
            loss_trace: Vec::new(),
        })
    }

    /// Alpha of the last epoch of `task_index`, if one was computed.
    pub fn task_alpha(&self, task_index: usize) -> Option<f64> {
        self.dcs_history
            .iter()
            .rev()
            .find(|r| r.task_index == task_index)
            .map(|r| r.alpha)
    }
}

/// Split `n` draws over `p` sources; the remainder goes to the sources starting at
/// `rotation % p` so that every source is favoured equally often.
pub fn round_robin_counts(n: usize, p: usize, rotation: usize) -> Vec<usize> {
    if p == 0 {
        return Vec::new();
    }
    let mut counts = vec![n / p; p];
    for i in 0..n % p {
        counts[(rotation + i) % p] += 1;
    }
    counts
}

/// Where replay samples come from during one task.
enum ReplaySource<'a> {
    Fresh(&'a [GeneratorPair]),
    /// Per pair: generated reals, generated fakes.
    Pool(Vec<(Vec<Sample>, Vec<Sample>)>),
}

impl ReplaySource<'_> {
    fn n_sources(&self) -> usize {
        match self {
            ReplaySource::Fresh(p) => p.len(),
            ReplaySource::Pool(p) => p.len(),
        }
    }

    fn draw(&self, n_real: usize, n_fake: usize, rotation: usize, rng: &mut Rng) -> Vec<Sample> {
        let p = self.n_sources();
        let reals = round_robin_counts(n_real, p, rotation);
        let fakes = round_robin_counts(n_fake, p, rotation);
        let mut out = Vec::with_capacity(n_real + n_fake);
        for i in 0..p {
            match self {
                ReplaySource::Fresh(pairs) => out.extend(sample_replay(&pairs[i], reals[i], fakes[i], rng)),
                ReplaySource::Pool(pools) => {
                    let (r, f) = &pools[i];
                    out.extend((0..reals[i]).map(|_| r[rng.below(r.len())].clone()));
                    out.extend((0..fakes[i]).map(|_| f[rng.below(f.len())].clone()));
                }
            }
        }
        out
    }
}

/// `batch_current` samples from `current`, then `batch_gen_real` gen-reals and
/// `batch_gen_fake` gen-fakes split round-robin over `pairs`.
pub fn assemble_batch(
    current: impl IntoIterator<Item = Sample>,
    pairs: &[GeneratorPair],
    cfg: &TrainConfig,
    rotation: usize,
    rng: &mut Rng,
) -> Vec<Sample> {
    let mut batch: Vec<Sample> = current.into_iter().take(cfg.batch_current).collect();
    batch.extend(ReplaySource::Fresh(pairs).draw(cfg.batch_gen_real, cfg.batch_gen_fake, rotation, rng));
    batch
}

fn forward_all<'m>(model: &'m Mlp, batch: &[Sample]) -> Result<Vec<ForwardRecord<'m>>> {
    batch.iter().map(|s| model.forward(&s.features)).collect()
}

struct Objective {
    loss: BatchLossBreakdown,
    upstream: Vec<Upstream>,
}

fn objective(
    records: &[ForwardRecord<'_>],
    batch: &[Sample],
    strategy: Strategy,
    score_alpha: Option<f64>,
    loss_cfg: &LossConfig,
    want_grad: bool,
) -> Result<Objective> {
    let cf: Vec<usize> = (0..batch.len())
        .filter(|i| batch[*i].origin != Origin::GenReal)
        .collect();
    let gr: Vec<usize> = (0..batch.len())
        .filter(|i| batch[*i].origin == Origin::GenReal)
        .collect();
    if cf.is_empty() {
        return Err(contract("batch without current or gen-fake samples"));
    }
    let (alpha, w_ce, w_rs) = if gr.is_empty() {
        (strategy.weights(score_alpha).map_or(1.0, |w| w.0), 0.0, 0.0)
    } else {
        strategy.weights(score_alpha)?
    };
    let mut upstream = vec![Upstream::zero(); batch.len()];

    let inv_cf = 1.0 / cf.len() as f64;
    let mut l_cf = 0.0;
    for &i in &cf {
        let (y, label) = (records[i].y_p(), batch[i].label);
        l_cf += ce_loss(y, label)?;
        if want_grad {
            upstream[i].d_yp = ce_grad(y, label)? * inv_cf;
        }
    }
    l_cf *= inv_cf;

    let mut l_ce_gen_real = 0.0;
    if !gr.is_empty() {
        let inv = 1.0 / gr.len() as f64;
        for &i in &gr {
            l_ce_gen_real += ce_loss(records[i].y_p(), Label::Real)?;
            if want_grad && w_ce != 0.0 {
                upstream[i].d_yp = w_ce * ce_grad(records[i].y_p(), Label::Real)? * inv;
            }
        }
        l_ce_gen_real *= inv;
    }

    let gen_fake: Vec<usize> = cf
        .iter()
        .copied()
        .filter(|i| batch[*i].origin == Origin::GenFake)
        .collect();
    let mut l_rs = 0.0;
    if w_rs != 0.0 && !gen_fake.is_empty() {
        let real_feats: Vec<&[f64]> = gr.iter().map(|i| records[*i].features()).collect();
        let fake_feats: Vec<&[f64]> = gen_fake.iter().map(|i| records[*i].features()).collect();
        let c = centroid(&real_feats)?;
        match rs_loss_with_grad(&fake_feats, &c, loss_cfg) {
            Ok(rs) => {
                l_rs = rs.value;
                if want_grad {
                    for (k, &i) in gen_fake.iter().enumerate() {
                        upstream[i].d_features = Some(scale(&rs.d_fake[k], w_rs));
                    }
                    let share = scale(&rs.d_centroid, w_rs / gr.len() as f64);
                    for &i in &gr {
                        upstream[i].d_features = Some(share.clone());
                    }
                }
            }
            // all gen-real features dead: no direction to separate from
            Err(Error::DegenerateGeometry(msg)) => {
                log::debug!("relative separation skipped: {msg}");
            }
            Err(e) => return Err(e),
        }
    }

    let l_c = w_ce * l_ce_gen_real + w_rs * l_rs;
    Ok(Objective {
        loss: BatchLossBreakdown {
            l_cf,
            l_ce_gen_real,
            l_rs,
            alpha,
            l_c,
            l_overall: l_c + l_cf,
        },
        upstream,
    })
}

/// Loss terms and parameter gradient of the strategy's objective on one batch.
/// `score_alpha` is the confusion-derived alpha; required by strategies that use it
/// whenever the batch holds gen-reals.
pub fn batch_objective(
    model: &Mlp,
    batch: &[Sample],
    strategy: Strategy,
    score_alpha: Option<f64>,
    loss_cfg: &LossConfig,
) -> Result<(BatchLossBreakdown, Vec<f64>)> {
    let records = forward_all(model, batch)?;
    let o = objective(&records, batch, strategy, score_alpha, loss_cfg, true)?;
    let grad = model.backward(&records, &o.upstream)?;
    Ok((o.loss, grad))
}

/// Value-only version of [`batch_objective`].
pub fn batch_loss(
    model: &Mlp,
    batch: &[Sample],
    strategy: Strategy,
    score_alpha: Option<f64>,
    loss_cfg: &LossConfig,
) -> Result<BatchLossBreakdown> {
    let records = forward_all(model, batch)?;
    Ok(objective(&records, batch, strategy, score_alpha, loss_cfg, false)?.loss)
}

fn fit_pair(
    task_index: usize,
    train: &[Sample],
    signature: &Signature,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneratorPair> {
    let of = |label: Label| -> Vec<&[f64]> {
        train
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.features.as_slice())
            .collect()
    };
    let mut rng_r = Rng::substream(seed, &format!("generator/{task_index}/real"));
    let mut rng_f = Rng::substream(seed, &format!("generator/{task_index}/fake"));
    let g_real = fit_generator(&of(Label::Real), cfg.generator, cfg.n_components, signature.clone(), &mut rng_r)?;
    let g_fake = fit_generator(&of(Label::Fake), cfg.generator, cfg.n_components, signature.clone(), &mut rng_f)?;
    GeneratorPair::new(task_index, g_real, g_fake)
}

/// Train on one task, then fit and append its generator pair.
pub fn train_task(
    state: &mut RunState,
    task_index: usize,
    train: &[Sample],
    replay_signature: &Signature,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<()> {
    strategy.validate()?;
    let reals: Vec<&Sample> = train.iter().filter(|s| s.label == Label::Real).collect();
    let fakes: Vec<&Sample> = train.iter().filter(|s| s.label == Label::Fake).collect();
    if reals.is_empty() || fakes.is_empty() {
        return Err(contract(format!("task {task_index} lacks train samples of one class")));
    }
    if state.generator_pairs.len() != task_index {
        return Err(contract(format!(
            "task {task_index} trained with {} stored generator pairs",
            state.generator_pairs.len()
        )));
    }
    let seed = cfg.seed;
    let half_real = cfg.batch_current / 2;
    let half_fake = cfg.batch_current - half_real;
    let n_batches = reals.len().div_ceil(half_real).max(fakes.len().div_ceil(half_fake));
    let fake_pool: Vec<Sample> = fakes.iter().map(|s| (*s).clone()).collect();

    let pairs = std::mem::take(&mut state.generator_pairs);
    let replay = if !strategy.uses_replay() || pairs.is_empty() {
        None
    } else if let Some(n) = cfg.replay_pool {
        let mut rng = Rng::substream(seed, &format!("replay-pool/{task_index}"));
        Some(ReplaySource::Pool(
            pairs
                .iter()
                .map(|p| {
                    let mut s = sample_replay(p, n, n, &mut rng);
                    let f = s.split_off(n);
                    (s, f)
                })
                .collect(),
        ))
    } else {
        Some(ReplaySource::Fresh(&pairs))
    };

    let mut adam = AdamState::new(state.model.n_params());
    let mut outcome = Ok(());
    'epochs: for epoch in 0..cfg.epochs {
        let score_alpha = if strategy.needs_score() && !pairs.is_empty() {
            let mut rng = Rng::substream(seed, &format!("alpha/{task_index}/{epoch}"));
            let per_pair = cfg.dcs.probe_cap.div_ceil(pairs.len());
            let mut probe = Vec::with_capacity(per_pair * pairs.len());
            for p in &pairs {
                probe.extend(sample_replay(p, per_pair, 0, &mut rng));
            }
            match compute_alpha(&state.model, &probe, &fake_pool, &cfg.dcs, &mut rng, task_index, epoch) {
                Ok(rec) => {
                    state.dcs_history.push(rec);
                    Some(rec.alpha)
                }
                Err(e) => {
                    outcome = Err(e);
                    break 'epochs;
                }
            }
        } else {
            None
        };

        let mut shuf = Rng::substream(seed, &format!("shuffle/{task_index}/{epoch}"));
        let mut ri: Vec<usize> = (0..reals.len()).collect();
        let mut fi: Vec<usize> = (0..fakes.len()).collect();
        shuf.shuffle(&mut ri);
        shuf.shuffle(&mut fi);
        let mut replay_rng = Rng::substream(seed, &format!("replay/{task_index}/{epoch}"));

        for b in 0..n_batches {
            let mut batch: Vec<Sample> = Vec::with_capacity(cfg.batch_current + cfg.batch_gen_real + cfg.batch_gen_fake);
            batch.extend((0..half_real).map(|i| reals[ri[(b * half_real + i) % ri.len()]].clone()));
            batch.extend((0..half_fake).map(|i| fakes[fi[(b * half_fake + i) % fi.len()]].clone()));
            if let Some(src) = &replay {
                let drawn = src.draw(cfg.batch_gen_real, cfg.batch_gen_fake, b, &mut replay_rng);
                if strategy.keeps_gen_real() {
                    batch.extend(drawn);
                } else {
                    batch.extend(drawn.into_iter().filter(|s| s.origin != Origin::GenReal));
                }
            }
            let step = batch_objective(&state.model, &batch, strategy, score_alpha, &cfg.loss)
                .and_then(|(loss, grad)| {
                    adam_step(state.model.params_mut(), &grad, &mut adam, &cfg.adam)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => state.loss_trace.push(TraceEntry {
                    task_index,
                    epoch,
                    batch: b,
                    loss,
                }),
                Err(e) => {
                    outcome = Err(e);
                    break 'epochs;
                }
            }
        }
    }
    drop(replay);
    state.generator_pairs = pairs;
    outcome?;

    let pair = fit_pair(task_index, train, replay_signature, cfg, seed)?;
    state.generator_pairs.push(pair);
    Ok(())
}

/// AUC and accuracy of the model on one labelled set.
pub fn evaluate(model: &Mlp, test: &[Sample], threshold: f64) -> Result<TaskEval> {
    let scores: Vec<f64> = test
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<_>>()?;
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    Ok(TaskEval {
        auc: auc(&scores, &labels)?,
        acc: accuracy(&scores, &labels, threshold)?,
    })
}

/// Randomness root for the task data of a run with `seed`.
pub fn data_rng(seed: u64) -> Rng {
    Rng::substream(seed, "data")
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub table: MetricsTable,
    pub state: RunState,
}

/// Train on every task in order, evaluating all tasks seen so far after each step.
pub fn run_incremental(stream: &TaskStream, strategy: Strategy, cfg: &TrainConfig) -> Result<RunOutcome> {
    stream.validate()?;
    strategy.validate()?;
    cfg.validate()?;
    let data = data_rng(cfg.seed);
    let mut state = RunState::new(stream.dim(), cfg)?;
    let mut tests: Vec<Vec<Sample>> = Vec::with_capacity(stream.n_tasks());
    let mut evals = Vec::with_capacity(stream.n_tasks());
    for k in 0..stream.n_tasks() {
        let (train, test) = stream.task_data(k, &data)?;
        if train.first().is_some_and(|s| s.features.len() != stream.dim()) {
            return Err(contract(format!("task {k} has the wrong feature width")));
        }
        train_task(&mut state, k, &train, &stream.replay_signatures[k], strategy, cfg)?;
        tests.push(test);
        let per_task = tests
            .iter()
            .map(|t| evaluate(&state.model, t, cfg.acc_threshold))
            .collect::<Result<Vec<_>>>()?;
        let alpha = if k == 0 {
            None
        } else if strategy.needs_score() {
            state.task_alpha(k)
        } else if strategy.uses_replay() {
            strategy.fixed_alpha()
        } else {
            None
        };
        log::info!(
            "{strategy} step {}: avg auc {:.4}",
            k + 1,
            per_task.iter().map(|e| e.auc).sum::<f64>() / per_task.len() as f64
        );
        evals.push(StepEval { per_task, alpha });
    }
    let names = stream.tasks.iter().map(|t| t.name().to_string()).collect();
    Ok(RunOutcome {
        table: build_table(names, &evals)?,
        state,
    })
}
