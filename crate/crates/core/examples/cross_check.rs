//! PDE value at x0 against the Monte Carlo value under the synthesized feedback.

use std::sync::Arc;

use obstacle_control::config::ExperimentConfig;
use obstacle_control::feedback::synthesize;
use obstacle_control::pde::solve_obstacle_hjb;
use obstacle_control::value::value_mc;

fn main() -> obstacle_control::Result<()> {
    let cfg = ExperimentConfig::standard(7);
    let spec = cfg.spec()?;
    let x0 = &cfg.problem.x0;
    let coarse = solve_obstacle_hjb(&spec, &cfg.space()?, &cfg.time()?, &cfg.solver.hjb)?;
    let (space, time) = cfg.refined(2)?;
    let fine = solve_obstacle_hjb(&spec, &space, &time, &cfg.solver.hjb)?;
    let w = coarse.interpolate(0.0, x0);
    let scheme_error = (w - fine.interpolate(0.0, x0)).abs();
    let policy = Arc::new(synthesize(&coarse, &spec, cfg.solver.hjb.delta_for(&spec))?);
    let v = value_mc(&spec, 0.0, x0, &cfg.mc(), Some(policy))?;
    for c in &v.candidates {
        println!("{:<12} {:.6} ± {:.6}", c.label, c.y0, c.stderr);
    }
    println!("W_PDE {w:.6}  value_mc {:.6} ({})", v.value, v.best);
    println!("|difference| {:.2e}, 3·(scheme error + stderr) {:.2e}", (w - v.value).abs(), 3.0 * (scheme_error + v.stderr));
    Ok(())
}
