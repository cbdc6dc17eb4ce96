//! Files written by the experiment runner.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{contract, Result};
use crate::metrics::{fmt4, MetricsTable};
use crate::confusion::DcsRecord;
use crate::streams::Origin;

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| contract(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// One projected feature vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPoint {
    pub origin: Origin,
    pub task_index: usize,
    pub pc1: f64,
    pub pc2: f64,
}

/// Coordinates of `points` on their two leading principal axes. Each axis is
/// signed so that its largest-magnitude entry is positive; with a single feature
/// the second coordinate is zero.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n == 0 {
        return Err(contract("projection of an empty set"));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(contract("projection needs equally long, non-empty vectors"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Option<Vec<f64>> {
        let col = eig.eigenvectors.column(*order.get(k)?);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        Some(v)
    };
    let a1 = axis(0).expect("d >= 1");
    let a2 = axis(1);
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let proj = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [proj(&a1), a2.as_deref().map_or(0.0, proj)]
        })
        .collect())
}

pub fn alpha_csv(history: &[DcsRecord]) -> String {
    let mut out = String::from("step,epoch,s,alpha\n");
    for r in history {
        writeln!(out, "{},{},{},{}", r.task_index + 1, r.epoch + 1, fmt4(r.s), fmt4(r.alpha)).unwrap();
    }
    out
}

pub fn projection_csv(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("origin,task,pc1,pc2\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.origin.as_str(), p.task_index + 1, fmt4(p.pc1), fmt4(p.pc2)).unwrap();
    }
    out
}

/// The median table with a leading `strategy` column, one block per strategy.
pub fn comparison_csv(blocks: &[(String, MetricsTable)]) -> String {
    let mut out = String::new();
    for (i, (name, table)) in blocks.iter().enumerate() {
        let csv = table.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            writeln!(out, "strategy,{header}").unwrap();
        }
        for line in lines {
            writeln!(out, "{name},{line}").unwrap();
        }
    }
    out
}
