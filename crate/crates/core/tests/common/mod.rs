#![allow(dead_code)]

use darw::losses::LossConfig;
use darw::model::Mlp;
use darw::numerics::{finite_diff_grad, max_relative_error, Rng};
use darw::replay::{GeneratorKind, GeneratorModel, GeneratorPair, Mixture, Signature};
use darw::streams::{Label, Sample};
use darw::trainer::{assemble_batch, batch_loss, batch_objective, Strategy, TrainConfig};

pub const FD_STEP: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-8;
pub const DIM: usize = 5;

/// Random network and a batch of 8 current, 6 gen-real and 6 gen-fake samples.
pub fn grad_state(rng: &mut Rng) -> (Mlp, Vec<Sample>) {
    let model = Mlp::new(&[DIM, 16, 16], rng, 1.0).unwrap();
    let gen = |m: f64| GeneratorModel {
        kind: GeneratorKind::Gaussian,
        mixture: Mixture::isotropic(vec![m; DIM], 1.0),
        signature: Signature::none(DIM),
    };
    let pair = GeneratorPair::new(0, gen(0.5), gen(1.2)).unwrap();
    let current: Vec<Sample> = (0..8)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            Sample::current((0..DIM).map(|_| rng.normal()).collect(), label, 1)
        })
        .collect();
    let cfg = TrainConfig {
        batch_current: 8,
        batch_gen_real: 6,
        batch_gen_fake: 6,
        ..TrainConfig::default()
    };
    let batch = assemble_batch(current, &[pair], &cfg, 0, rng);
    (model, batch)
}

fn relu_pattern(model: &Mlp, batch: &[Sample]) -> Vec<bool> {
    batch
        .iter()
        .flat_map(|s| {
            let rec = model.forward(&s.features).unwrap();
            rec.pre_activations().iter().flatten().map(|z| *z > 0.0).collect::<Vec<_>>()
        })
        .collect()
}

/// Largest share of the gradient tolerance the oracle's own truncation error may
/// take before a state is redrawn.
pub const ORACLE_SLACK: f64 = 2.5e-5;

/// Central differences of `loss` over the parameters, or `None` when the oracle
/// is unreliable at this state: a probe moves some hidden unit across its ReLU
/// kink, or the estimates at `h` and `h / 2` disagree by more than
/// [`ORACLE_SLACK`] on some counted parameter. Neither test looks at the
/// analytic gradient.
pub fn fd_reliable(model: &Mlp, batch: &[Sample], loss: impl Fn(&Mlp) -> f64) -> Option<Vec<f64>> {
    let arch = model.arch().to_vec();
    let base = relu_pattern(model, batch);
    let mut crossed = false;
    let mut probe = |h: f64| {
        finite_diff_grad(
            |p| {
                let m = Mlp::from_params(&arch, p.to_vec()).unwrap();
                if relu_pattern(&m, batch) != base {
                    crossed = true;
                }
                loss(&m)
            },
            model.params(),
            h,
        )
        .unwrap()
    };
    let g = probe(FD_STEP);
    let half = probe(FD_STEP / 2.0);
    let settled = max_relative_error(&g, &half, FD_FLOOR).0 <= ORACLE_SLACK;
    (!crossed && settled).then_some(g)
}

/// Worst per-parameter relative error of the strategy objective over `n` random
/// states where the oracle is reliable, and the number of states redrawn.
pub fn composed_check(
    strategy: Strategy,
    score_alpha: Option<f64>,
    loss_cfg: &LossConfig,
    n: usize,
    seed: u64,
    current_only: bool,
) -> (f64, usize) {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    let mut redraws = 0;
    let mut done = 0;
    while done < n {
        let (model, mut batch) = grad_state(&mut rng);
        if current_only {
            batch.truncate(8);
        }
        let (_, analytic) = batch_objective(&model, &batch, strategy, score_alpha, loss_cfg).unwrap();
        let Some(numeric) = fd_reliable(&model, &batch, |m| {
            batch_loss(m, &batch, strategy, score_alpha, loss_cfg).unwrap().l_overall
        }) else {
            redraws += 1;
            continue;
        };
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR).0);
        done += 1;
    }
    (worst, redraws)
}

/// Brute-force Mann-Whitney AUC over all (fake, real) pairs, ties at one half.
pub fn auc_pairs(scores: &[f64], labels: &[Label]) -> f64 {
    let mut twice = 0u64;
    let (mut nr, mut nf) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        match li {
            Label::Real => nr += 1,
            Label::Fake => {
                nf += 1;
                for (j, &lj) in labels.iter().enumerate() {
                    if lj == Label::Real {
                        twice += if scores[i] > scores[j] {
                            2
                        } else if scores[i] == scores[j] {
                            1
                        } else {
                            0
                        };
                    }
                }
            }
        }
    }
    twice as f64 / (2 * nr * nf) as f64
}
