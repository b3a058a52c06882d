//! Bundled binary-tree instances: regression solver against exhaustive enumeration.

use obstacle_control::forward::Control;
use obstacle_control::rbsde::{solve, Mode, SolverConfig};
use obstacle_control::regression::RegressionBasis;
use obstacle_control::tree;

fn main() -> obstacle_control::Result<()> {
    let exact = SolverConfig::with_basis(RegressionBasis::exact());
    for inst in tree::bundled() {
        for mode in [Mode::Reflected, Mode::Penalized(4.0)] {
            let (enumerated, choice) = inst.brute_force_optimum(mode)?;
            let ens = inst.ensemble(&Control::Feedback(inst.oracle_feedback(mode)))?;
            let y0 = solve(&ens, &inst.spec, mode, &exact)?.y0();
            println!(
                "{:<14} {mode:?}: enumeration {enumerated:.12} solver {y0:.12} gap {:.1e} choices {choice:?}",
                inst.name,
                (y0 - enumerated).abs()
            );
        }
    }
    Ok(())
}
