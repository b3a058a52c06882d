//! Simulate the controlled jump-diffusion and print mean and spread of X over time.

use obstacle_control::config::ExperimentConfig;
use obstacle_control::forward::{Control, Sampling, TimeGrid};

fn main() -> obstacle_control::Result<()> {
    let cfg = ExperimentConfig::standard(7);
    let spec = cfg.spec()?;
    let grid = TimeGrid::new(0.0, spec.horizon(), 50)?;
    let ens = Sampling::MonteCarlo { paths: 10_000, seed: 1 }.ensemble(&spec, &grid, &[0.5], &Control::Constant(2))?;
    let jumps: usize = (0..ens.n_paths()).map(|p| ens.noise().jump_count(p)).sum();
    println!("mean jumps per path {:.4}", jumps as f64 / ens.n_paths() as f64);
    println!("{:>6} {:>10} {:>10}", "t", "mean", "std");
    for k in (0..=grid.steps()).step_by(10) {
        let xs: Vec<f64> = (0..ens.n_paths()).map(|p| ens.state(p, k)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        println!("{:>6.2} {mean:>10.5} {:>10.5}", grid.node(k), var.sqrt());
    }
    Ok(())
}
