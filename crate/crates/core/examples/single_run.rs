//! One incremental run on a synthetic stream, printed as the per-step table.

use darw::numerics::Rng;
use darw::streams::{make_scenario, ScenarioKind};
use darw::trainer::{run_incremental, Strategy, TrainConfig};

fn main() -> darw::Result<()> {
    let seed = 1;
    let stream = make_scenario(ScenarioKind::Mixed, 4, 16, &mut Rng::new(seed))?;
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let outcome = run_incremental(&stream, Strategy::Darw, &cfg)?;
    print!("{}", outcome.table.to_csv());
    for r in &outcome.state.dcs_history {
        println!("task {} epoch {}: s = {:.4}, alpha = {:.4}", r.task_index + 1, r.epoch + 1, r.s, r.alpha);
    }
    Ok(())
}
