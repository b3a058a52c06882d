//! Deterministic time-change identities on one configuration, then the randomized sweep and the measure change.

use obstacle_control::kulik::{girsanov_check, identity_suite, randomized_suite, TimeChange};

fn main() -> obstacle_control::Result<()> {
    let tc = TimeChange::new(0.1, 0.6, 0.3, 1.0)?;
    let delta = 0.2;
    let samples: Vec<f64> = (0..=8).map(|j| tc.t_lambda() + j as f64 / 8.0 * (1.0 - delta - tc.t_lambda())).collect();
    let report = identity_suite(&tc, delta, &samples)?;
    for c in &report.checks {
        println!("({}) passed {:<5} constant {:?} observed {:.6e}", c.name, c.passed, c.constant, c.observed);
    }
    let sweep = randomized_suite(1.0, 1000, 16, 11)?;
    for r in &sweep.relations {
        println!("({}) {} / {} configurations fail, worst {:.4}", r.name, r.failures, r.configs, r.worst);
    }
    for i in 0..2 {
        let g = girsanov_check(&tc, i, 1.4, 100_000, 5)?;
        println!(
            "i = {i}: E[g] = {:.4} ± {:.4}, E[g N] = {:.4} ± {:.4} (expected {:.4})",
            g.mean_weight, g.weight_stderr, g.reweighted_count, g.reweighted_count_stderr, g.expected_count
        );
    }
    Ok(())
}
