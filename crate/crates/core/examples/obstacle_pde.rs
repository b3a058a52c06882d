//! Solve the obstacle HJB on the standard grid and write the surface to CSV.

use obstacle_control::config::ExperimentConfig;
use obstacle_control::pde::{complementarity_residual, solve_obstacle_hjb};

fn main() -> obstacle_control::Result<()> {
    let cfg = ExperimentConfig::standard(7);
    let spec = cfg.spec()?;
    let (space, time) = (cfg.space()?, cfg.time()?);
    let w = solve_obstacle_hjb(&spec, &space, &time, &cfg.solver.hjb)?;
    println!("W(0, x0) = {:.6}", w.interpolate(0.0, &cfg.problem.x0));
    println!("complementarity residual {:.3e}", complementarity_residual(&spec, &w, &cfg.solver.hjb)?);
    for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        println!("x = {x:>5.2}  W = {:.6}  h = {:.6}", w.interpolate(0.0, &[x]), spec.obstacle(0.0, &[x]));
    }
    let path = std::env::temp_dir().join("obstacle_surface.csv");
    w.write_csv(std::fs::File::create(&path)?)?;
    println!("surface written to {}", path.display());
    Ok(())
}
