//! The confusion score on hand-made feature sets and on a live model.

use darw::confusion::{alpha_from_features, compute_alpha, DcsConfig, Normalizer};
use darw::model::Mlp;
use darw::numerics::Rng;
use darw::streams::{Label, Sample};

fn main() -> darw::Result<()> {
    for gap in [0.0, 1.0, 3.0] {
        let gen_real = vec![vec![0.0, 0.0], vec![0.2, 0.0]];
        let fakes = vec![vec![0.1 + gap, 0.5], vec![0.1 + gap, -0.5]];
        for normalizer in [Normalizer::Tanh, Normalizer::Sigmoid, Normalizer::LinearOver5] {
            let cfg = DcsConfig {
                normalizer,
                ..DcsConfig::default()
            };
            let (s, alpha) = alpha_from_features(&gen_real, &fakes, &cfg)?;
            println!("gap {gap}: {normalizer:<13} s = {s:.4}, alpha = {alpha:.4}");
        }
    }

    let mut rng = Rng::new(5);
    let model = Mlp::new(&[3, 16, 8], &mut rng, 1.0)?;
    let cloud = |center: f64, label: Label, rng: &mut Rng| -> Vec<Sample> {
        (0..300)
            .map(|_| Sample::current((0..3).map(|_| center + 0.3 * rng.normal()).collect(), label, 0))
            .collect()
    };
    let fakes = cloud(1.0, Label::Fake, &mut rng);
    for center in [1.0, 0.0, -2.0] {
        let gen_real = cloud(center, Label::Real, &mut rng);
        let rec = compute_alpha(&model, &gen_real, &fakes, &DcsConfig::default(), &mut rng, 1, 0)?;
        println!("replayed reals at {center:+}: s = {:.4}, alpha = {:.4}", rec.s, rec.alpha);
    }
    Ok(())
}
