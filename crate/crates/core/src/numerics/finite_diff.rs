use crate::error::{contract, Error, Result};

/// Central-difference gradient of `loss_fn` at `params`.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(contract("finite difference step must be positive"));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss_fn(&probe);
        probe[i] = orig - h;
        let down = loss_fn(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical {
                index: i,
                message: format!("non-finite loss at probe ({up}, {down})"),
            });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest per-coordinate relative error `|a - n| / max(|a|, |n|)`, skipping
/// coordinates where `|a| + |n| <= floor`. Returns `(error, index)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, Option<usize>) {
    let mut worst = (0.0, None);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.abs() + n.abs() <= floor {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        if rel > worst.0 {
            worst = (rel, Some(i));
        }
    }
    worst
}
