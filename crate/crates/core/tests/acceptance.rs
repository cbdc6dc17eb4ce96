//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{auc_pairs, composed_check, FD_FLOOR, FD_STEP};
use darw::cli::{cmd_run, Overrides};
use darw::confusion::{alpha_from_features, DcsConfig};
use darw::losses::{ce_grad, ce_loss, rs_loss, rs_loss_with_grad, LossConfig, RsGranularity, RsMetric};
use darw::metrics::{auc, build_table, fmt4, median_of, performance_drop, AccuracyReport, MetricsTable, StepEval, TaskEval};
use darw::numerics::{finite_diff_grad, max_relative_error, Rng};
use darw::replay::{fit_generator, fit_gmm, signature_similarity, EmConfig, GeneratorKind, GeneratorModel, Mixture, Signature};
use darw::streams::{make_scenario, make_scenario_with, Label, ScenarioKind, ScenarioParams, TaskSource};
use darw::trainer::{run_incremental, RunOutcome, Strategy, TrainConfig};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const DIM: usize = 16;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn check(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let elapsed = t.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = v.pass && in_time;
    let budget = limit.map(|l| format!(" / limit {}s", l.as_secs())).unwrap_or_default();
    println!(
        "{} [{id:>2}] {name}: {} ({:.1}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn run(kind: ScenarioKind, n_tasks: usize, strategy: Strategy, seed: u64) -> RunOutcome {
    let stream = make_scenario(kind, n_tasks, DIM, &mut Rng::new(seed)).unwrap();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    run_incremental(&stream, strategy, &cfg).unwrap()
}

fn runs(kind: ScenarioKind, n_tasks: usize, strategy: Strategy) -> Vec<RunOutcome> {
    SEEDS.iter().map(|&s| run(kind, n_tasks, strategy, s)).collect()
}

fn median_by(outcomes: &[RunOutcome], f: impl Fn(&RunOutcome) -> f64) -> f64 {
    median_of(&outcomes.iter().map(f).collect::<Vec<_>>())
}

fn gradient_correctness() -> Verdict {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    let mut rng = Rng::new(101);
    for _ in 0..10 {
        let y = rng.uniform_range(0.02, 0.98);
        for label in [Label::Real, Label::Fake] {
            let num = finite_diff_grad(|p| ce_loss(p[0], label).unwrap(), &[y], FD_STEP).unwrap();
            worst = worst.max(max_relative_error(&[ce_grad(y, label).unwrap()], &num, FD_FLOOR).0);
        }
    }
    let (ce_net, _) = composed_check(Strategy::LBound, None, &LossConfig::default(), 10, 102, true);
    notes.push(format!("CE {:.1e}", worst.max(ce_net)));
    worst = worst.max(ce_net);

    let (m, d) = (6, 8);
    for (label, metric, granularity) in [
        ("RS-cos sample", RsMetric::Cosine, RsGranularity::SampleWise),
        ("RS-cos centroid", RsMetric::Cosine, RsGranularity::CentroidBased),
        ("RS-L2", RsMetric::L2, RsGranularity::SampleWise),
    ] {
        let cfg = LossConfig {
            rs_metric: metric,
            rs_granularity: granularity,
            ..LossConfig::default()
        };
        let mut rng = Rng::new(103);
        let mut w = 0.0f64;
        for _ in 0..10 {
            let x: Vec<f64> = (0..(m + 1) * d).map(|_| 0.5 + rng.normal()).collect();
            let split = |x: &[f64]| -> (Vec<Vec<f64>>, Vec<f64>) {
                (x[..m * d].chunks(d).map(<[f64]>::to_vec).collect(), x[m * d..].to_vec())
            };
            let (f, c) = split(&x);
            let out = rs_loss_with_grad(&f, &c, &cfg).unwrap();
            let analytic: Vec<f64> = out.d_fake.concat().into_iter().chain(out.d_centroid).collect();
            let numeric = finite_diff_grad(
                |p| {
                    let (f, c) = split(p);
                    rs_loss(&f, &c, &cfg).unwrap()
                },
                &x,
                FD_STEP,
            )
            .unwrap();
            w = w.max(max_relative_error(&analytic, &numeric, FD_FLOOR).0);
        }
        // and through the network inside the weighted objective
        let (net, _) = composed_check(Strategy::Darw, Some(0.4), &cfg, 10, 104, false);
        notes.push(format!("{label} {:.1e}", w.max(net)));
        worst = worst.max(w).max(net);
    }
    let mut redraws = 0;
    for (label, strategy, alpha) in [("DARW", Strategy::Darw, Some(0.3)), ("FixedAlpha", Strategy::FixedAlpha(0.6), None)] {
        let (e, r) = composed_check(strategy, alpha, &LossConfig::default(), 10, 105, false);
        redraws += r;
        notes.push(format!("{label} {e:.1e}"));
        worst = worst.max(e);
    }
    verdict(
        worst < 1e-4,
        format!("max per-parameter rel err {worst:.2e} < 1e-4 [{}; {redraws} states with an unreliable oracle redrawn]", notes.join(", ")),
    )
}

fn auc_oracle() -> Verdict {
    let mut rng = Rng::new(202);
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..200 {
        let n = 2 + rng.below(49);
        let mut labels: Vec<Label> = (0..n).map(|_| if rng.uniform() < 0.5 { Label::Real } else { Label::Fake }).collect();
        labels[0] = Label::Real;
        labels[1] = Label::Fake;
        let levels = 2 + rng.below(8);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        if auc(&scores, &labels).unwrap() != auc_pairs(&scores, &labels) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("200 instances ({with_ties} with ties), {mismatches} mismatches"))
}

fn metric_formulas() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();

    let pd1 = performance_drop(0.9999, 0.9574);
    let pd2 = performance_drop(0.9999, 0.9429);
    ok &= (pd1 - 0.0425).abs() < 1e-12 && fmt4(pd1) == "0.0425";
    ok &= (pd2 - 0.0570).abs() < 1e-12 && fmt4(pd2) == "0.0570";
    notes.push(format!("PD {} and {}", fmt4(pd1), fmt4(pd2)));

    let eval = |a: f64| TaskEval {
        auc: a,
        acc: AccuracyReport {
            overall: a,
            real: Some(a),
            fake: Some(a),
        },
    };
    let steps = vec![
        StepEval {
            per_task: vec![eval(0.9999)],
            alpha: None,
        },
        StepEval {
            per_task: vec![eval(0.8075), eval(0.8876)],
            alpha: None,
        },
    ];
    let t = build_table(vec!["T1".into(), "T2".into()], &steps).unwrap();
    let r = &t.rows[1];
    ok &= (r.avg - 0.84755).abs() < 1e-12 && r.pre_avg == Some(0.8075) && fmt4(r.avg) == "0.8476";
    ok &= t.rows[0].pre_avg.is_none() && t.rows[0].pd_auc.is_none();
    notes.push(format!("Avg {:.5} shown {}", r.avg, fmt4(r.avg)));

    let live = run_incremental(
        &make_scenario_with(ScenarioKind::Mixed, 3, 8, &small_params(), &mut Rng::new(7)).unwrap(),
        Strategy::Darw,
        &TrainConfig {
            epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let worst = recompute_error(&live.table);
    ok &= worst <= 1e-12;
    notes.push(format!("live table recomputation max err {worst:.1e}"));
    verdict(ok, notes.join(", "))
}

fn recompute_error(t: &MetricsTable) -> f64 {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut worst = 0.0f64;
    for (k, r) in t.rows.iter().enumerate() {
        worst = worst.max((r.avg - mean(&r.auc)).abs());
        worst = worst.max((r.acc_avg - mean(&r.acc)).abs());
        if k > 0 {
            worst = worst.max((r.pre_avg.unwrap() - mean(&r.auc[..k])).abs());
            worst = worst.max((r.pd_auc.unwrap() - (t.rows[0].avg - r.avg)).abs());
            worst = worst.max((r.pd_acc.unwrap() - (t.rows[0].acc_avg - r.acc_avg)).abs());
        }
    }
    worst
}

fn small_params() -> ScenarioParams {
    ScenarioParams {
        train_per_class: 300,
        test_per_class: 150,
        ..ScenarioParams::default()
    }
}

struct ConfusionRuns {
    safe_full: Vec<RunOutcome>,
    risky_full: Vec<RunOutcome>,
    safe_darw: Vec<RunOutcome>,
    risky_darw: Vec<RunOutcome>,
}

fn confusion_effect(c: &mut Option<ConfusionRuns>) -> Verdict {
    let risky = make_scenario(ScenarioKind::DomainRisky, 3, DIM, &mut Rng::new(SEEDS[0])).unwrap();
    let TaskSource::Synthetic(last) = &risky.tasks[2] else { unreachable!() };
    let sim = (0..2)
        .map(|t| signature_similarity(&risky.replay_signatures[t], &last.forgery_signature))
        .fold(f64::INFINITY, f64::min);

    let runs = ConfusionRuns {
        safe_full: runs(ScenarioKind::DomainSafe, 3, Strategy::FullReplay),
        risky_full: runs(ScenarioKind::DomainRisky, 3, Strategy::FullReplay),
        safe_darw: runs(ScenarioKind::DomainSafe, 3, Strategy::Darw),
        risky_darw: runs(ScenarioKind::DomainRisky, 3, Strategy::Darw),
    };
    let cur = |o: &RunOutcome| o.table.rows[2].auc[2];
    let drop = |safe: &[RunOutcome], risky: &[RunOutcome]| median_by(safe, cur) - median_by(risky, cur);
    let full = drop(&runs.safe_full, &runs.risky_full);
    let darw = drop(&runs.safe_darw, &runs.risky_darw);
    let paired = |safe: &[RunOutcome], risky: &[RunOutcome]| {
        median_of(&safe.iter().zip(risky).map(|(s, r)| cur(s) - cur(r)).collect::<Vec<_>>())
    };
    let detail = format!(
        "replay/forgery similarity {sim:.3}; step-3 current AUC safe->risky: FullReplay {:.4}->{:.4} (drop {full:.4} >= 0.05), DARW {:.4}->{:.4} (drop {darw:.4} < {full:.4}); median paired drops {:.4} / {:.4}",
        median_by(&runs.safe_full, cur),
        median_by(&runs.risky_full, cur),
        median_by(&runs.safe_darw, cur),
        median_by(&runs.risky_darw, cur),
        paired(&runs.safe_full, &runs.risky_full),
        paired(&runs.safe_darw, &runs.risky_darw),
    );
    *c = Some(runs);
    verdict(sim >= 0.95 && full >= 0.05 && darw < full, detail)
}

const MIXED: [Strategy; 8] = [
    Strategy::Darw,
    Strategy::FullReplay,
    Strategy::FakeOnlyReplay,
    Strategy::FixedAlpha(0.5),
    Strategy::FixedAlpha(0.1),
    Strategy::LBound,
    Strategy::NoGenRealSup,
    Strategy::NoRs,
];

struct Final {
    avg: f64,
    pre: f64,
    pd: f64,
}

fn mixed_finals() -> Vec<(Strategy, Final)> {
    MIXED
        .iter()
        .map(|&s| {
            let o = runs(ScenarioKind::Mixed, 4, s);
            let f = Final {
                avg: median_by(&o, |r| r.table.last().avg),
                pre: median_by(&o, |r| r.table.last().pre_avg.unwrap()),
                pd: median_by(&o, |r| r.table.last().pd_auc.unwrap()),
            };
            (s, f)
        })
        .collect()
}

fn forgetting_order(finals: &[(Strategy, Final)]) -> Verdict {
    let get = |s: Strategy| &finals.iter().find(|(x, _)| *x == s).unwrap().1;
    let darw = get(Strategy::Darw);
    let rivals = [Strategy::FullReplay, Strategy::FakeOnlyReplay, Strategy::FixedAlpha(0.5), Strategy::FixedAlpha(0.1)];
    let best_rival = rivals.iter().map(|&s| get(s).avg).fold(f64::NEG_INFINITY, f64::max);
    let replay = [Strategy::Darw, Strategy::FullReplay, Strategy::FakeOnlyReplay, Strategy::FixedAlpha(0.5), Strategy::FixedAlpha(0.1)];
    let lb = get(Strategy::LBound);
    let min_margin = replay.iter().map(|&s| get(s).pre - lb.pre).fold(f64::INFINITY, f64::min);
    let fake_only_pd = get(Strategy::FakeOnlyReplay).pd;
    let others_pd = replay
        .iter()
        .filter(|&&s| s != Strategy::FakeOnlyReplay)
        .map(|&s| get(s).pd)
        .fold(f64::NEG_INFINITY, f64::max);
    let table: Vec<String> = finals
        .iter()
        .map(|(s, f)| format!("{s} {:.4}/{:.4}/{:.4}", f.avg, f.pre, f.pd))
        .collect();
    verdict(
        darw.avg >= best_rival - 0.01 && min_margin >= 0.05 && fake_only_pd > others_pd,
        format!(
            "DARW avg {:.4} >= best rival {best_rival:.4} - 0.01; min Pre Avg margin over LBound {min_margin:.4} >= 0.05; FakeOnly PD {fake_only_pd:.4} > other replay max {others_pd:.4} [avg/pre/pd: {}]",
            darw.avg,
            table.join(", ")
        ),
    )
}

fn ablation_direction(finals: &[(Strategy, Final)]) -> Verdict {
    let get = |s: Strategy| finals.iter().find(|(x, _)| *x == s).unwrap().1.avg;
    let darw = get(Strategy::Darw);
    let d_sup = darw - get(Strategy::NoGenRealSup);
    let d_rs = darw - get(Strategy::NoRs);
    verdict(
        d_sup >= 0.03 && d_rs >= 0.005,
        format!("DARW avg {darw:.4}; w/o gen-real sup -{d_sup:.4} (>= 0.03); w/o rs -{d_rs:.4} (>= 0.005)"),
    )
}

fn alpha_behaviour(c: &Option<ConfusionRuns>) -> Verdict {
    let cfg = DcsConfig::default();
    let mut alphas = Vec::new();
    let mut err = 0.0f64;
    for (gap, want) in [(0.0, 0.0), (1.0, 1f64.tanh()), (3.0, 3f64.tanh())] {
        let reals = vec![vec![0.5, -1.0, 2.0], vec![1.5, -1.0, 0.0]];
        let fakes = vec![vec![1.0 + gap, 0.0, 1.0], vec![1.0 + gap, -2.0, 1.0]];
        let (_, a) = alpha_from_features(&reals, &fakes, &cfg).unwrap();
        err = err.max((a - want).abs());
        alphas.push(a);
    }
    let increasing = alphas.windows(2).all(|w| w[1] > w[0]);
    let Some(c) = c else {
        return verdict(false, "live confusion runs unavailable");
    };
    let task_alpha = |o: &[RunOutcome], k: usize| median_by(o, |r| r.state.task_alpha(k).unwrap());
    let (safe3, risky3) = (task_alpha(&c.safe_darw, 2), task_alpha(&c.risky_darw, 2));
    let (safe2, risky2) = (task_alpha(&c.safe_darw, 1), task_alpha(&c.risky_darw, 1));
    verdict(
        err < 1e-6 && increasing && risky3 < safe3,
        format!(
            "injected gaps {{0,1,3}} -> {{{:.6}, {:.6}, {:.6}}} (max err {err:.1e}); live DARW alpha on the aligned task: risky {risky3:.4} < safe {safe3:.4} (task 2, no aligned forgery: risky {risky2:.4}, safe {safe2:.4})",
            alphas[0], alphas[1], alphas[2]
        ),
    )
}

fn strategy_equivalence() -> Verdict {
    let stream = make_scenario_with(ScenarioKind::Mixed, 3, 8, &small_params(), &mut Rng::new(9)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let trace = |s: Strategy| -> Vec<u64> {
        run_incremental(&stream, s, &cfg)
            .unwrap()
            .state
            .loss_trace
            .iter()
            .map(|e| e.loss.l_overall.to_bits())
            .collect()
    };
    let a1 = trace(Strategy::FixedAlpha(1.0));
    let nors = trace(Strategy::NoRs);
    let a0 = trace(Strategy::FixedAlpha(0.0));
    let unw = trace(Strategy::NoGenRealSupUnweighted);
    let darw = trace(Strategy::Darw);
    verdict(
        !a1.is_empty() && a1 == nors && a0 == unw && a0 != a1 && darw != a1,
        format!(
            "{} batches: FixedAlpha(1) == NoRS {}, FixedAlpha(0) == alpha-stripped NoGenRealSup {} (bitwise)",
            a1.len(),
            a1 == nors,
            a0 == unw
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "strategy = \"darw\"\nseeds = [4, 5]\n[stream]\nscenario = \"mixed\"\nn_tasks = 3\ndim = 8\n\
         [stream.params]\ntrain_per_class = 300\ntest_per_class = 150\n[train]\nepochs = 2\n",
    )
    .unwrap();
    let collect = |out: &Path| -> Vec<(String, Vec<u8>)> {
        cmd_run(
            &cfg,
            &Overrides {
                out: Some(out.to_path_buf()),
                ..Overrides::default()
            },
        )
        .unwrap();
        let mut files = Vec::new();
        for sub in ["", "seed-4", "seed-5"] {
            for e in std::fs::read_dir(out.join(sub)).unwrap() {
                let p = e.unwrap().path();
                if p.extension().is_some_and(|x| x == "csv") {
                    files.push((p.strip_prefix(out).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let a = collect(&dir.path().join("a"));
    let b = collect(&dir.path().join("b"));
    verdict(a.len() == 7 && a == b, format!("{} CSV files compared, identical: {}", a.len(), a == b))
}

fn generator_fidelity() -> Verdict {
    let mut rng = Rng::new(1010);
    let dim = 4;
    let source = Mixture::isotropic(vec![0.3, -1.2, 2.0, 0.5], 0.7);
    let data: Vec<Vec<f64>> = (0..10_000).map(|_| source.sample(&mut rng)).collect();
    let fitted = fit_generator(&data, GeneratorKind::Gaussian, 1, Signature::none(dim), &mut rng).unwrap();
    let own: Vec<Vec<f64>> = (0..10_000).map(|_| fitted.sample(&mut rng)).collect();
    let refit = fit_generator(&own, GeneratorKind::Gaussian, 1, Signature::none(dim), &mut rng).unwrap();
    let mean_err = fitted
        .mean()
        .iter()
        .zip(refit.mean())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut worst_em = f64::NEG_INFINITY;
    for (seed, k) in [(1u64, 2usize), (2, 3), (3, 4)] {
        let mut r = Rng::new(seed);
        let xs: Vec<Vec<f64>> = (0..2000)
            .map(|i| {
                let c = (i % k) as f64 * 1.5;
                vec![c + 0.6 * r.normal(), -c + 0.4 * r.normal(), 0.8 * r.normal()]
            })
            .collect();
        let fit = fit_gmm(&xs, k, &EmConfig::default(), &mut r).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            worst_em = worst_em.max(w[0] - w[1]);
        }
    }
    let monotone = worst_em <= 1e-9;

    let unit = vec![1.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0, 0.0];
    let shifted = GeneratorModel {
        kind: GeneratorKind::Gaussian,
        mixture: source.clone(),
        signature: Signature::new(unit.clone(), 1.0).unwrap(),
    };
    let proj = |x: &[f64]| x.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>();
    let n = 10_000;
    let moved = (0..n).map(|_| proj(&shifted.sample(&mut rng))).sum::<f64>() / n as f64 - proj(&source.mean());
    verdict(
        mean_err <= 0.05 && monotone && (moved - 1.0).abs() <= 0.05,
        format!(
            "self-refit max mean error {mean_err:.4} <= 0.05; EM largest log-likelihood decrease {worst_em:.1e} <= 1e-9; signature shift {moved:.4} = 1 +- 0.05"
        ),
    )
}

fn main() {
    println!("acceptance suite");
    let mut all = true;
    all &= check(1, "gradient correctness", Some(Duration::from_secs(60)), gradient_correctness);
    all &= check(2, "AUC oracle equivalence", Some(Duration::from_secs(5)), auc_oracle);
    all &= check(3, "metric formulas", None, metric_formulas);
    let mut confusion = None;
    all &= check(4, "domain confusion effect", Some(Duration::from_secs(600)), || confusion_effect(&mut confusion));
    let mut finals = Vec::new();
    all &= check(5, "forgetting ordering", Some(Duration::from_secs(1200)), || {
        finals = mixed_finals();
        forgetting_order(&finals)
    });
    all &= check(6, "ablation direction", None, || ablation_direction(&finals));
    all &= check(7, "alpha behaviour", None, || alpha_behaviour(&confusion));
    all &= check(8, "strategy-equivalence traces", None, strategy_equivalence);
    all &= check(9, "determinism", None, determinism);
    all &= check(10, "generator fidelity", None, generator_fidelity);
    if !all {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
