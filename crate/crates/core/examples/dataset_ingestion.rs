//! Load pre-extracted features from a CSV file and run on the resulting stream.

use darw::numerics::Rng;
use darw::streams::{load_feature_dataset, stream_from_samples, DatasetSchema};
use darw::trainer::{run_incremental, Strategy, TrainConfig};

fn main() -> darw::Result<()> {
    let path = std::env::temp_dir().join(format!("darw-features-{}.csv", std::process::id()));
    let mut rng = Rng::new(2);
    let mut text = String::from("f0,f1,f2,label,task\n");
    for task in 0..3 {
        for i in 0..2000 {
            let label = i % 2;
            let mut x: Vec<f64> = (0..3).map(|_| 0.4 * rng.normal()).collect();
            x[task] += 0.8 * label as f64;
            x[(task + 1) % 3] += 0.2 * task as f64;
            text.push_str(&format!("{:.5},{:.5},{:.5},{label},{task}\n", x[0], x[1], x[2]));
        }
    }
    std::fs::write(&path, text)?;

    let samples = load_feature_dataset(&path, &DatasetSchema::default())?;
    println!("loaded {} samples from {}", samples.len(), path.display());
    let stream = stream_from_samples(samples, 0.25, &Rng::new(1))?;
    let cfg = TrainConfig {
        hidden: vec![16, 16],
        ..TrainConfig::default()
    };
    let outcome = run_incremental(&stream, Strategy::Darw, &cfg)?;
    print!("{}", outcome.table.to_csv());
    std::fs::remove_file(&path)?;
    Ok(())
}
