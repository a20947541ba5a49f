//! Regenerates `configs/*.toml` from the built-in scenarios.
//!
//! `cargo run -p freshchain --example write_configs` from the workspace root.

use freshchain::config::{Algorithm, ConfigFile, Execution, ExperimentSection};
use freshchain_core::scenarios::{paper_default, paper_large};

fn main() -> anyhow::Result<()> {
    let targets = [("paper-default", paper_default(), vec![1, 2, 3, 4, 5], 500), ("paper-large", paper_large(), vec![1], 20)];
    for (name, scenario, seeds, epochs) in targets {
        let experiment = ExperimentSection {
            algorithm: Algorithm::A3cDppo,
            epochs,
            seeds,
            eval_episodes: 20,
            workers: 0,
            execution: Execution::Sync,
            checkpoint_every: 0,
        };
        let file = ConfigFile::from_scenario(&scenario, experiment);
        let path = format!("configs/{name}.toml");
        std::fs::write(&path, toml::to_string(&file)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
