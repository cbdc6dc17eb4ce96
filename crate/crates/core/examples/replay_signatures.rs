//! Fit replay generators to a task, attach a signature and look at what the
//! replayed samples carry.

use darw::numerics::Rng;
use darw::replay::{fit_generator, sample_replay, signature_similarity, GeneratorKind, GeneratorPair, Mixture, Signature};
use darw::streams::Origin;

fn main() -> darw::Result<()> {
    let dim = 4;
    let mut rng = Rng::new(3);
    let real = Mixture::isotropic(vec![0.0; dim], 0.5);
    let fake = real.shifted(&[1.0, 0.0, 0.0, 0.0]);
    let reals: Vec<Vec<f64>> = (0..2000).map(|_| real.sample(&mut rng)).collect();
    let fakes: Vec<Vec<f64>> = (0..2000).map(|_| fake.sample(&mut rng)).collect();

    let replay_sig = Signature::new(vec![0.0, 1.0, 1.0, 0.0], 0.8)?;
    let forgery_sig = Signature::new(vec![0.0, 1.0, 0.9, 0.1], 1.0)?;
    println!(
        "similarity of replay signature to a later forgery: {:.3}",
        signature_similarity(&replay_sig, &forgery_sig)
    );

    let g_real = fit_generator(&reals, GeneratorKind::Gaussian, 1, replay_sig.clone(), &mut rng)?;
    let g_fake = fit_generator(&fakes, GeneratorKind::Gmm, 2, replay_sig, &mut rng)?;
    let pair = GeneratorPair::new(0, g_real, g_fake)?;
    println!("fitted real mean {:?}", pair.g_real.mixture.mean());

    let drawn = sample_replay(&pair, 5000, 5000, &mut rng);
    for origin in [Origin::GenReal, Origin::GenFake] {
        let xs: Vec<&Vec<f64>> = drawn.iter().filter(|s| s.origin == origin).map(|s| &s.features).collect();
        let mean: Vec<f64> = (0..dim)
            .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64)
            .collect();
        println!("{:<9} sample mean {:?}", origin.as_str(), mean.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>());
    }
    println!("\nserialized pair:\n{}", pair.to_text());
    Ok(())
}
