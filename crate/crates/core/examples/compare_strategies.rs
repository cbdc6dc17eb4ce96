//! Several replay strategies on identical streams; final-step medians over seeds.

use darw::metrics::{fmt4, median_of};
use darw::numerics::Rng;
use darw::streams::{make_scenario, ScenarioKind};
use darw::trainer::{run_incremental, Strategy, TrainConfig};

fn main() -> darw::Result<()> {
    let seeds = [1u64, 2, 3];
    let strategies = [
        Strategy::Darw,
        Strategy::FullReplay,
        Strategy::FakeOnlyReplay,
        Strategy::FixedAlpha(0.5),
        Strategy::LBound,
    ];
    println!("{:<18} {:>7} {:>7} {:>7}", "strategy", "avg", "pre", "pd");
    for s in strategies {
        let mut avg = Vec::new();
        let mut pre = Vec::new();
        let mut pd = Vec::new();
        for &seed in &seeds {
            let stream = make_scenario(ScenarioKind::Mixed, 4, 16, &mut Rng::new(seed))?;
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let out = run_incremental(&stream, s, &cfg)?;
            let last = out.table.last();
            avg.push(last.avg);
            pre.push(last.pre_avg.unwrap_or(f64::NAN));
            pd.push(last.pd_auc.unwrap_or(f64::NAN));
        }
        println!(
            "{:<18} {:>7} {:>7} {:>7}",
            s.to_string(),
            fmt4(median_of(&avg)),
            fmt4(median_of(&pre)),
            fmt4(median_of(&pd))
        );
    }
    Ok(())
}
