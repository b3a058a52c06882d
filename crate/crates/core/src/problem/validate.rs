//! Sampled spot-checks of the standing assumptions. These are probes, not
//! proofs: every Lipschitz "constant" is the largest ratio observed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Channel};

use super::spec::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub probes: usize,
    pub box_lo: f64,
    pub box_hi: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            probes: 256,
            box_lo: -5.0,
            box_hi: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub estimate: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub seed: u64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Reference envelope `ℓ(e) = min(1, |e|)` for the jump Lipschitz ratio.
pub fn jump_envelope(mark: &[f64]) -> f64 {
    mark.iter().map(|e| e * e).sum::<f64>().sqrt().min(1.0)
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn all_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

struct Probe {
    t: f64,
    x0: Vec<f64>,
    x1: Vec<f64>,
    control: usize,
    y: f64,
    z: Vec<f64>,
    v: f64,
    dv: f64,
}

fn draw_probe(spec: &ProblemSpec, cfg: &ValidationConfig, index: usize) -> Probe {
    let mut rng = stream(cfg.seed, Channel::Probe, index as u64, 0);
    let point = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..spec.dim_x())
            .map(|_| rng.random_range(cfg.box_lo..cfg.box_hi))
            .collect()
    };
    let x0 = point(&mut rng);
    let x1 = point(&mut rng);
    Probe {
        t: rng.random_range(0.0..=spec.horizon()),
        x0,
        x1,
        control: index % spec.controls().len(),
        y: rng.random_range(cfg.box_lo..cfg.box_hi),
        z: (0..spec.dim_w())
            .map(|_| rng.random_range(cfg.box_lo..cfg.box_hi))
            .collect(),
        v: rng.random_range(cfg.box_lo..cfg.box_hi),
        dv: rng.random_range(1e-3..1.0),
    }
}

/// Probe (H1), (H2), (C) and the terminal/obstacle compatibility.
pub fn validate_assumptions(
    spec: &ProblemSpec,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    if cfg.probes == 0 {
        return Err(Error::Precondition("at least one probe is required".into()));
    }
    if !(cfg.box_lo < cfg.box_hi) {
        return Err(Error::Precondition("empty probe box".into()));
    }
    let mut lip_b = 0.0_f64;
    let mut lip_sigma = 0.0_f64;
    let mut gamma_ratio = 0.0_f64;
    let mut lip_f = 0.0_f64;
    let mut lip_phi = 0.0_f64;
    let mut lip_h = 0.0_f64;
    let mut monotone_violations = 0usize;
    let mut obstacle_violations = 0usize;
    let mut worst_gap = f64::NEG_INFINITY;

    for i in 0..cfg.probes {
        let p = draw_probe(spec, cfg, i);
        let u = spec.control(p.control);
        let dx = dist(&p.x0, &p.x1);

        let b0 = spec.drift(p.t, &p.x0, u);
        let b1 = spec.drift(p.t, &p.x1, u);
        all_finite(&b0, "drift")?;
        all_finite(&b1, "drift")?;
        let s0 = spec.diffusion(p.t, &p.x0, u);
        let s1 = spec.diffusion(p.t, &p.x1, u);
        all_finite(&s0, "diffusion")?;
        all_finite(&s1, "diffusion")?;
        if dx > 0.0 {
            lip_b = lip_b.max(dist(&b0, &b1) / dx);
            lip_sigma = lip_sigma.max(dist(&s0, &s1) / dx);
        }

        for atom in spec.levy().atoms() {
            let g0 = spec.jump(p.t, &p.x0, u, &atom.mark);
            let g1 = spec.jump(p.t, &p.x1, u, &atom.mark);
            all_finite(&g0, "jump")?;
            all_finite(&g1, "jump")?;
            if dx > 0.0 {
                gamma_ratio = gamma_ratio.max(dist(&g0, &g1) / (jump_envelope(&atom.mark) * dx));
            }
        }

        let f0 = finite(spec.driver(p.t, &p.x0, p.y, &p.z, p.v, u), "driver")?;
        let f1 = finite(spec.driver(p.t, &p.x1, p.y, &p.z, p.v, u), "driver")?;
        let f_up = finite(spec.driver(p.t, &p.x0, p.y, &p.z, p.v + p.dv, u), "driver")?;
        if dx > 0.0 {
            lip_f = lip_f.max((f0 - f1).abs() / dx);
        }
        if f_up < f0 - 1e-12 * (1.0 + f0.abs()) {
            monotone_violations += 1;
        }

        let phi0 = finite(spec.terminal(&p.x0), "terminal")?;
        let phi1 = finite(spec.terminal(&p.x1), "terminal")?;
        let h0 = finite(spec.obstacle(p.t, &p.x0), "obstacle")?;
        let h1 = finite(spec.obstacle(p.t, &p.x1), "obstacle")?;
        let h_end = finite(spec.obstacle(spec.horizon(), &p.x0), "obstacle")?;
        if dx > 0.0 {
            lip_phi = lip_phi.max((phi0 - phi1).abs() / dx);
            lip_h = lip_h.max((h0 - h1).abs() / dx);
        }
        worst_gap = worst_gap.max(phi0 - h_end);
        if phi0 > h_end {
            obstacle_violations += 1;
        }
    }

    let lipschitz = |name, value: f64| AssumptionCheck {
        name,
        passed: value.is_finite(),
        estimate: Some(value),
        detail: "largest sampled difference quotient".into(),
    };
    let checks = vec![
        AssumptionCheck {
            name: "controls_nonempty",
            passed: !spec.controls().is_empty(),
            estimate: Some(spec.controls().len() as f64),
            detail: "size of the control grid".into(),
        },
        lipschitz("lipschitz_b", lip_b),
        lipschitz("lipschitz_sigma", lip_sigma),
        AssumptionCheck {
            name: "gamma_ratio",
            passed: gamma_ratio.is_finite(),
            estimate: Some(gamma_ratio),
            detail: "max |γ(x0)-γ(x1)| / (min(1,|e|)|x0-x1|) over atoms and pairs".into(),
        },
        lipschitz("lipschitz_f_x", lip_f),
        lipschitz("lipschitz_phi", lip_phi),
        lipschitz("lipschitz_h", lip_h),
        AssumptionCheck {
            name: "driver_monotone_in_v",
            passed: monotone_violations == 0,
            estimate: Some(monotone_violations as f64),
            detail: "probes where f decreased in v".into(),
        },
        AssumptionCheck {
            name: "jump_weight_bound",
            passed: spec
                .levy()
                .atoms()
                .iter()
                .enumerate()
                .all(|(j, a)| spec.jump_weight().at(j) <= spec.jump_weight().kappa() * jump_envelope(&a.mark) * (1.0 + 1e-12)),
            estimate: Some(spec.jump_weight().kappa()),
            detail: "0 <= l(e) <= kappa min(1,|e|) on every atom".into(),
        },
        AssumptionCheck {
            name: "obstacle_compatibility",
            passed: obstacle_violations == 0,
            estimate: Some(worst_gap),
            detail: format!("{obstacle_violations} probes with terminal above obstacle; estimate = max(Φ - h(T,·))"),
        },
    ];
    Ok(ValidationReport {
        probes: cfg.probes,
        seed: cfg.seed,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::levy::{JumpWeight, LevyMeasure};
    use crate::problem::model::{Family, Lq1dParams, ZeroParams};

    fn cfg(seed: u64) -> ValidationConfig {
        ValidationConfig {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_spec_passes_with_zero_constants() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Zero(ZeroParams::default()))
            .build()
            .unwrap();
        let report = validate_assumptions(&spec, &cfg(1)).unwrap();
        assert!(report.passed());
        for name in [
            "lipschitz_b",
            "lipschitz_sigma",
            "gamma_ratio",
            "lipschitz_f_x",
        ] {
            assert_eq!(report.check(name).unwrap().estimate, Some(0.0));
        }
    }

    #[test]
    fn terminal_above_obstacle_fails() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Zero(ZeroParams {
                terminal: 1.0,
                obstacle: 0.0,
                driver: 0.0,
            }))
            .build()
            .unwrap();
        let report = validate_assumptions(&spec, &cfg(1)).unwrap();
        assert!(!report.passed());
        assert!(!report.check("obstacle_compatibility").unwrap().passed);
    }

    #[test]
    fn lq1d_gamma_ratio_matches_exhaustive_bound() {
        let levy = LevyMeasure::scalar(&[0.2, -0.7, 2.5], &[0.3, 0.4, 0.1]).unwrap();
        let weight = JumpWeight::scaled(0.5, 1.0, &levy).unwrap();
        let p = Lq1dParams {
            a: -0.3,
            sigma0: 0.4,
            jump_c: 0.1,
            jump_x: 0.8,
            ..Default::default()
        };
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(p))
            .levy(levy.clone())
            .jump_weight(weight)
            .build()
            .unwrap();
        let report = validate_assumptions(&spec, &cfg(3)).unwrap();
        let ratio = report.check("gamma_ratio").unwrap().estimate.unwrap();
        // Exhaustive: γ difference is jump_x·e·(x0 - x1), so every pair attains
        // jump_x·|e|/min(1,|e|); the bound is the max over atoms.
        let bound = levy
            .atoms()
            .iter()
            .map(|a| 0.8 * a.mark[0].abs() / a.mark[0].abs().min(1.0))
            .fold(0.0, f64::max);
        assert!(ratio <= bound + 1e-12);
        assert!((ratio - bound).abs() < 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(Lq1dParams {
                a: 1.3,
                f_x: 0.4,
                ..Default::default()
            }))
            .build()
            .unwrap();
        let a = validate_assumptions(&spec, &cfg(11)).unwrap();
        let b = validate_assumptions(&spec, &cfg(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_output_rejected() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(
                crate::problem::model::FnCoefficients::new().terminal(|x| 1.0 / (x[0] - x[0])),
            )
            .build()
            .unwrap();
        assert!(matches!(
            validate_assumptions(&spec, &cfg(0)),
            Err(Error::NonFinite(_))
        ));
    }
}
