//! Evaluation metrics and incremental result tables.
//!
//! A table has one row per incremental step. Row `k` holds the AUC and accuracy of
//! every task seen so far, their average (`avg`), the average over earlier tasks
//! only (`pre_avg`), and the drop of each averaged metric relative to step 1
//! (`pd_* = metric_at_step_1 - metric_at_step_k`).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::streams::Label;

/// Area under the ROC curve with fake as the positive class: the fraction of
/// (fake, real) pairs where the fake scores higher, ties counting one half.
/// Computed from mid-rank sums in O(n log n).
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(contract("NaN score"));
    }
    let n_fake = labels.iter().filter(|l| l.is_fake()).count();
    let n_real = labels.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one sample of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // doubled ranks keep mid-ranks integral
    let mut fake_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1, mid-rank doubled = i + j + 2
        let mid2 = (i + j + 2) as u128;
        for &idx in &order[i..=j] {
            if labels[idx].is_fake() {
                fake_rank2 += mid2;
            }
        }
        i = j + 1;
    }
    let nf = n_fake as u128;
    let u2 = fake_rank2 - nf * (nf + 1);
    Ok(u2 as f64 / (2.0 * n_fake as f64 * n_real as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    /// Absent when there are no real samples.
    pub real: Option<f64>,
    /// Absent when there are no fake samples.
    pub fake: Option<f64>,
}

/// Default decision threshold on `y_p`.
pub const ACC_THRESHOLD: f64 = 0.5;

/// Predict fake iff `score >= threshold`.
pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<AccuracyReport> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(contract("accuracy needs equally long, non-empty inputs"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(contract("threshold must lie in (0, 1)"));
    }
    let (mut real_ok, mut real_n, mut fake_ok, mut fake_n) = (0usize, 0usize, 0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        let says_fake = *s >= threshold;
        match l {
            Label::Real => {
                real_n += 1;
                real_ok += usize::from(!says_fake);
            }
            Label::Fake => {
                fake_n += 1;
                fake_ok += usize::from(says_fake);
            }
        }
    }
    let rate = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    Ok(AccuracyReport {
        overall: (real_ok + fake_ok) as f64 / scores.len() as f64,
        real: rate(real_ok, real_n),
        fake: rate(fake_ok, fake_n),
    })
}

/// `m0 - m_n`; negative when performance improved.
pub fn performance_drop(m0: f64, m_n: f64) -> f64 {
    m0 - m_n
}

/// Evaluation of one task at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub auc: f64,
    pub acc: AccuracyReport,
}

/// All evaluations made after training step `k` (tasks `0..=k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEval {
    pub per_task: Vec<TaskEval>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    /// 1-based step number.
    pub step: usize,
    pub auc: Vec<f64>,
    pub acc: Vec<f64>,
    pub avg: f64,
    pub pre_avg: Option<f64>,
    pub pd_auc: Option<f64>,
    pub acc_avg: f64,
    pub pd_acc: Option<f64>,
    pub acc_real: Option<f64>,
    pub pd_acc_real: Option<f64>,
    pub acc_fake: Option<f64>,
    pub pd_acc_fake: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub task_names: Vec<String>,
    pub rows: Vec<StepRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mean_present(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn drop_from(first: Option<f64>, now: Option<f64>, step: usize) -> Option<f64> {
    if step == 1 {
        return None;
    }
    Some(performance_drop(first?, now?))
}

/// Assemble a table from per-step evaluations; step `k` (0-based) must cover
/// exactly tasks `0..=k`.
pub fn build_table(task_names: Vec<String>, evals: &[StepEval]) -> Result<MetricsTable> {
    let mut rows: Vec<StepRow> = Vec::with_capacity(evals.len());
    for (k, e) in evals.iter().enumerate() {
        if e.per_task.len() != k + 1 {
            return Err(contract(format!(
                "step {} has {} task evaluations, expected {}",
                k + 1,
                e.per_task.len(),
                k + 1
            )));
        }
        let step = k + 1;
        let auc: Vec<f64> = e.per_task.iter().map(|t| t.auc).collect();
        let acc: Vec<f64> = e.per_task.iter().map(|t| t.acc.overall).collect();
        let avg = mean(&auc);
        let pre_avg = (k > 0).then(|| mean(&auc[..k]));
        let acc_avg = mean(&acc);
        let acc_real = mean_present(e.per_task.iter().map(|t| t.acc.real));
        let acc_fake = mean_present(e.per_task.iter().map(|t| t.acc.fake));
        let first = rows.first();
        let row = StepRow {
            step,
            pd_auc: drop_from(first.map(|r| r.avg).or(Some(avg)), Some(avg), step),
            pd_acc: drop_from(first.map(|r| r.acc_avg).or(Some(acc_avg)), Some(acc_avg), step),
            pd_acc_real: drop_from(first.map_or(acc_real, |r| r.acc_real), acc_real, step),
            pd_acc_fake: drop_from(first.map_or(acc_fake, |r| r.acc_fake), acc_fake, step),
            auc,
            acc,
            avg,
            pre_avg,
            acc_avg,
            acc_real,
            acc_fake,
            alpha: e.alpha,
        };
        rows.push(row);
    }
    let n_steps = rows.len();
    if task_names.len() < n_steps {
        return Err(contract("fewer task names than steps"));
    }
    Ok(MetricsTable { task_names, rows })
}

/// Round half up at four decimals, for display only.
pub fn round4(x: f64) -> f64 {
    ((x * 1e4) + 0.5 + 1e-9).floor() / 1e4
}

pub fn fmt4(x: f64) -> String {
    format!("{:.4}", round4(x))
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt4).unwrap_or_default()
}

/// Mean of the middle pair for even lengths.
fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn median_opt(xs: Vec<Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().flatten().collect();
    (!v.is_empty()).then(|| median(v))
}

pub fn median_of(xs: &[f64]) -> f64 {
    median(xs.to_vec())
}

impl MetricsTable {
    pub fn last(&self) -> &StepRow {
        self.rows.last().expect("table has at least one row")
    }

    /// Column names of [`MetricsTable::to_csv`].
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        let n = self.rows.len();
        h.extend(self.task_names[..n].iter().map(|t| format!("auc_{t}")));
        h.extend(
            [
                "avg",
                "pre_avg",
                "pd_auc",
                "acc",
                "pd_acc",
                "acc_real",
                "pd_acc_real",
                "acc_fake",
                "pd_acc_fake",
                "alpha",
            ]
            .map(String::from),
        );
        h
    }

    /// One line per step; absent values are empty fields; four-decimal display.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        let n = self.rows.len();
        for r in &self.rows {
            let mut fields = vec![r.step.to_string()];
            for t in 0..n {
                fields.push(r.auc.get(t).copied().map(fmt4).unwrap_or_default());
            }
            fields.extend([
                fmt4(r.avg),
                fmt_opt(r.pre_avg),
                fmt_opt(r.pd_auc),
                fmt4(r.acc_avg),
                fmt_opt(r.pd_acc),
                fmt_opt(r.acc_real),
                fmt_opt(r.pd_acc_real),
                fmt_opt(r.acc_fake),
                fmt_opt(r.pd_acc_fake),
                fmt_opt(r.alpha),
            ]);
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    /// Field-wise median over tables of identical shape.
    pub fn median(tables: &[MetricsTable]) -> Result<MetricsTable> {
        let first = tables
            .first()
            .ok_or_else(|| contract("median of zero tables"))?;
        if tables.iter().any(|t| t.rows.len() != first.rows.len()) {
            return Err(contract("tables differ in number of steps"));
        }
        let rows = (0..first.rows.len())
            .map(|k| {
                let col = |f: &dyn Fn(&StepRow) -> f64| median(tables.iter().map(|t| f(&t.rows[k])).collect());
                let col_opt =
                    |f: &dyn Fn(&StepRow) -> Option<f64>| median_opt(tables.iter().map(|t| f(&t.rows[k])).collect());
                let width = first.rows[k].auc.len();
                StepRow {
                    step: k + 1,
                    auc: (0..width).map(|t| col(&|r| r.auc[t])).collect(),
                    acc: (0..width).map(|t| col(&|r| r.acc[t])).collect(),
                    avg: col(&|r| r.avg),
                    pre_avg: col_opt(&|r| r.pre_avg),
                    pd_auc: col_opt(&|r| r.pd_auc),
                    acc_avg: col(&|r| r.acc_avg),
                    pd_acc: col_opt(&|r| r.pd_acc),
                    acc_real: col_opt(&|r| r.acc_real),
                    pd_acc_real: col_opt(&|r| r.pd_acc_real),
                    acc_fake: col_opt(&|r| r.acc_fake),
                    pd_acc_fake: col_opt(&|r| r.pd_acc_fake),
                    alpha: col_opt(&|r| r.alpha),
                }
            })
            .collect();
        Ok(MetricsTable {
            task_names: first.task_names.clone(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Fake, Real};

    #[test]
    fn auc_perfect() {
        let v = auc(&[0.9, 0.8, 0.1, 0.2], &[Fake, Fake, Real, Real]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn auc_three_of_four_pairs() {
        let v = auc(&[0.9, 0.3, 0.5, 0.1], &[Fake, Fake, Real, Real]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn auc_all_ties() {
        assert_eq!(auc(&[0.5, 0.5], &[Fake, Real]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_undefined() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[Real, Real]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_all_correct() {
        let r = accuracy(&[0.9, 0.1], &[Fake, Real], 0.5).unwrap();
        assert_eq!((r.overall, r.real, r.fake), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn accuracy_missing_class_absent() {
        let r = accuracy(&[0.6, 0.9], &[Real, Real], 0.5).unwrap();
        assert_eq!(r.real, Some(0.0));
        assert_eq!(r.fake, None);
    }

    #[test]
    fn accuracy_hand_count() {
        let r = accuracy(&[0.6, 0.4, 0.3, 0.7], &[Fake, Fake, Real, Real], 0.5).unwrap();
        assert_eq!((r.overall, r.real, r.fake), (0.5, Some(0.5), Some(0.5)));
    }

    #[test]
    fn accuracy_threshold_inclusive() {
        let r = accuracy(&[0.5], &[Fake], 0.5).unwrap();
        assert_eq!(r.fake, Some(1.0));
    }

    #[test]
    fn performance_drop_table_rows() {
        assert!((performance_drop(0.9999, 0.9574) - 0.0425).abs() < 1e-12);
        assert_eq!(performance_drop(0.7, 0.7), 0.0);
        assert!((performance_drop(0.9999, 0.9429) - 0.0570).abs() < 1e-12);
    }

    fn eval(auc: f64) -> TaskEval {
        TaskEval {
            auc,
            acc: AccuracyReport {
                overall: auc,
                real: Some(auc),
                fake: Some(auc),
            },
        }
    }

    #[test]
    fn table_two_steps() {
        let evals = vec![
            StepEval {
                per_task: vec![eval(0.9999)],
                alpha: None,
            },
            StepEval {
                per_task: vec![eval(0.8075), eval(0.8876)],
                alpha: Some(0.3),
            },
        ];
        let t = build_table(vec!["T1".into(), "T2".into()], &evals).unwrap();
        assert_eq!(t.rows[0].pre_avg, None);
        assert_eq!(t.rows[0].pd_auc, None);
        assert!((t.rows[1].avg - 0.84755).abs() < 1e-12);
        assert_eq!(t.rows[1].pre_avg, Some(0.8075));
        assert!((t.rows[1].pd_auc.unwrap() - (0.9999 - 0.84755)).abs() < 1e-12);
        let csv = t.to_csv();
        let line2 = csv.lines().nth(2).unwrap();
        assert!(line2.starts_with("2,0.8075,0.8876,0.8476,0.8075,0.1524"), "{line2}");
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn constant_table() {
        let c = 0.87;
        let evals: Vec<StepEval> = (1..=3)
            .map(|k| StepEval {
                per_task: vec![eval(c); k],
                alpha: None,
            })
            .collect();
        let t = build_table(vec!["a".into(), "b".into(), "c".into()], &evals).unwrap();
        for r in &t.rows[1..] {
            assert!((r.avg - c).abs() < 1e-15);
            assert!((r.pre_avg.unwrap() - c).abs() < 1e-15);
            assert!(r.pd_auc.unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn missing_diagonal_rejected() {
        let evals = vec![StepEval {
            per_task: vec![],
            alpha: None,
        }];
        assert!(build_table(vec!["a".into()], &evals).is_err());
    }

    #[test]
    fn round_half_up() {
        assert_eq!(fmt4(0.84755), "0.8476");
        assert_eq!(fmt4(0.12344), "0.1234");
        assert_eq!(fmt4(1.0), "1.0000");
    }

    #[test]
    fn median_of_tables() {
        let mk = |v: f64| {
            build_table(
                vec!["a".into()],
                &[StepEval {
                    per_task: vec![eval(v)],
                    alpha: None,
                }],
            )
            .unwrap()
        };
        let m = MetricsTable::median(&[mk(0.2), mk(0.9), mk(0.5)]).unwrap();
        assert_eq!(m.rows[0].avg, 0.5);
    }
}
