//! A small ablation grid driven through the config runner, written to a
//! temporary directory.

use std::path::Path;

use darw::cli::{ablate_prepared, parse_config, Overrides, Prepared};

const CONFIG: &str = r#"
strategy = "darw"
seeds = [1, 2]

[stream]
scenario = "domain_risky"
n_tasks = 3
dim = 12

[stream.params]
train_per_class = 600
test_per_class = 300

[ablate]
strategy = ["darw", "no_rs"]
rs_metric = ["cosine", "l2"]
"#;

fn main() {
    let out = std::env::temp_dir().join(format!("darw-ablation-{}", std::process::id()));
    let overrides = Overrides {
        out: Some(out.clone()),
        jobs: Some(2),
        ..Overrides::default()
    };
    let run = || -> Result<(), darw::cli::CliError> {
        let prepared = Prepared::new(parse_config(CONFIG)?, Path::new("."), &overrides)?;
        let report = ablate_prepared(&prepared)?;
        for line in report.lines {
            println!("{line}");
        }
        Ok(())
    };
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
    println!("\n{}", std::fs::read_to_string(out.join("ablation.csv")).unwrap());
}
