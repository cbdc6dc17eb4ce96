//! Compare the analytic gradient of the weighted replay objective with central
//! differences on a small network.

use darw::losses::{LossConfig, RsGranularity, RsMetric};
use darw::model::Mlp;
use darw::numerics::{finite_diff_grad, max_relative_error, Rng};
use darw::replay::{GeneratorKind, GeneratorModel, GeneratorPair, Mixture, Signature};
use darw::streams::{Label, Sample};
use darw::trainer::{assemble_batch, batch_loss, batch_objective, Strategy, TrainConfig};

fn main() -> darw::Result<()> {
    let dim = 5;
    let mut rng = Rng::new(7);
    let model = Mlp::new(&[dim, 8, 6], &mut rng, 1.0)?;
    let gen = |m: f64| GeneratorModel {
        kind: GeneratorKind::Gaussian,
        mixture: Mixture::isotropic(vec![m; dim], 0.6),
        signature: Signature::none(dim),
    };
    let pair = GeneratorPair::new(0, gen(0.2), gen(0.9))?;
    let current: Vec<Sample> = (0..8)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            Sample::current((0..dim).map(|_| rng.normal()).collect(), label, 1)
        })
        .collect();
    let cfg = TrainConfig {
        batch_current: 8,
        batch_gen_real: 6,
        batch_gen_fake: 6,
        ..TrainConfig::default()
    };
    let batch = assemble_batch(current, &[pair], &cfg, 0, &mut rng);

    let arch = model.arch().to_vec();
    for (metric, granularity) in [
        (RsMetric::Cosine, RsGranularity::SampleWise),
        (RsMetric::Cosine, RsGranularity::CentroidBased),
        (RsMetric::L2, RsGranularity::SampleWise),
    ] {
        let loss_cfg = LossConfig {
            rs_metric: metric,
            rs_granularity: granularity,
            ..LossConfig::default()
        };
        for (strategy, alpha) in [(Strategy::Darw, Some(0.35)), (Strategy::FixedAlpha(0.6), None)] {
            let (parts, analytic) = batch_objective(&model, &batch, strategy, alpha, &loss_cfg)?;
            let numeric = finite_diff_grad(
                |p| {
                    let m = Mlp::from_params(&arch, p.to_vec()).expect("same architecture");
                    batch_loss(&m, &batch, strategy, alpha, &loss_cfg).expect("valid batch").l_overall
                },
                model.params(),
                1e-4,
            )?;
            let (err, at) = max_relative_error(&analytic, &numeric, 1e-8);
            println!(
                "{strategy:<16} rs={metric}/{granularity}: loss {:.5}, max rel err {err:.2e} at {at:?}",
                parts.l_overall
            );
        }
    }
    Ok(())
}
