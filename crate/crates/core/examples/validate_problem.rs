//! Load the standard config, probe the structural assumptions and print the report.

use obstacle_control::config::ExperimentConfig;
use obstacle_control::problem::{validate_assumptions, ValidationConfig};

fn main() -> obstacle_control::Result<()> {
    let cfg = ExperimentConfig::standard(7);
    cfg.validate()?;
    println!("config hash {}", cfg.hash()?);
    let report = validate_assumptions(&cfg.spec()?, &ValidationConfig::default())?;
    for c in &report.checks {
        let estimate = c.estimate.map_or_else(|| "-".to_string(), |e| format!("{e:.4}"));
        println!("{:<28} {:<5} {estimate:>10}  {}", c.name, c.passed, c.detail);
    }
    println!("all passed: {}", report.passed());
    Ok(())
}
