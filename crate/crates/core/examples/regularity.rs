//! Semiconcavity and joint Lipschitz probes on the obstacle surface at two resolutions.

use obstacle_control::config::ExperimentConfig;
use obstacle_control::pde::solve_obstacle_hjb;
use obstacle_control::value::{regularity_probe, RegularityConfig};

fn main() -> obstacle_control::Result<()> {
    let cfg = ExperimentConfig::standard(7);
    let spec = cfg.spec()?;
    let space = cfg.space()?;
    let r0 = 4.0 * space.spacing(0).max(cfg.time()?.dt());
    let probe = RegularityConfig {
        window: Some((vec![-2.0], vec![2.0])),
        bands: vec![(r0, 2.0 * r0), (2.0 * r0, 4.0 * r0)],
        ..RegularityConfig::default()
    };
    for factor in [1, 2] {
        let (space, time) = cfg.refined(factor)?;
        let w = solve_obstacle_hjb(&spec, &space, &time, &cfg.solver.hjb)?;
        let r = regularity_probe(&w, &probe)?;
        println!(
            "refinement {factor}: semiconcavity {:.4}, joint Lipschitz {:.4}, Lipschitz in x {:.4} ({} probes)",
            r.semiconcavity, r.joint_lipschitz, r.lipschitz_x, r.probes
        );
    }
    Ok(())
}
