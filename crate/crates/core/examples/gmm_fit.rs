//! EM fit of a diagonal Gaussian mixture, with its log-likelihood trace.

use darw::numerics::Rng;
use darw::replay::{fit_gmm, Component, EmConfig, Mixture};

fn main() -> darw::Result<()> {
    let truth = Mixture {
        components: vec![
            Component {
                weight: 0.3,
                mean: vec![-2.0, 0.0],
                var: vec![0.3, 0.5],
            },
            Component {
                weight: 0.7,
                mean: vec![1.5, 1.0],
                var: vec![0.6, 0.2],
            },
        ],
    };
    let mut rng = Rng::new(9);
    let xs: Vec<Vec<f64>> = (0..5000).map(|_| truth.sample(&mut rng)).collect();
    let fit = fit_gmm(&xs, 2, &EmConfig::default(), &mut rng)?;
    for (i, ll) in fit.log_likelihoods.iter().enumerate().take(10) {
        println!("iter {i:>2}: mean log-likelihood {ll:.6}");
    }
    println!("converged: {}, iterations: {}", fit.converged, fit.log_likelihoods.len());
    for c in &fit.mixture.components {
        println!("weight {:.3} mean {:?} var {:?}", c.weight, c.mean, c.var);
    }
    Ok(())
}
