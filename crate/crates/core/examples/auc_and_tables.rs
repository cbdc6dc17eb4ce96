//! Rank-based AUC, accuracy and the per-step metrics table from raw evaluations.

use darw::metrics::{accuracy, auc, build_table, AccuracyReport, StepEval, TaskEval};
use darw::streams::Label;

fn eval(a: f64) -> TaskEval {
    TaskEval {
        auc: a,
        acc: AccuracyReport {
            overall: a - 0.1,
            real: Some(a - 0.05),
            fake: Some(a - 0.15),
        },
    }
}

fn main() -> darw::Result<()> {
    let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9];
    let labels = [Label::Real, Label::Real, Label::Fake, Label::Fake, Label::Fake, Label::Real];
    println!("auc {:.4}", auc(&scores, &labels)?);
    println!("{:?}", accuracy(&scores, &labels, 0.5)?);

    let steps = vec![
        StepEval {
            per_task: vec![eval(0.95)],
            alpha: None,
        },
        StepEval {
            per_task: vec![eval(0.90), eval(0.93)],
            alpha: Some(0.71),
        },
        StepEval {
            per_task: vec![eval(0.86), eval(0.88), eval(0.94)],
            alpha: Some(0.64),
        },
    ];
    let table = build_table(vec!["A".into(), "B".into(), "C".into()], &steps)?;
    print!("{}", table.to_csv());
    Ok(())
}
