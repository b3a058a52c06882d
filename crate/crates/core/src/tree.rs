//! Bundled two-step binary-tree instances and their brute-force oracle.
//!
//! The oracle walks every leaf of the tree, forms exact conditional
//! expectations by averaging children and solves each node equation in
//! closed form, which requires drivers affine in `y`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{Control, FeedbackLaw, PathEnsemble, Sampling, TimeGrid};
use crate::problem::{Family, JumpWeight, LevyMeasure, Lq1dParams, ProblemSpec};
use crate::rbsde::Mode;

#[derive(Debug, Clone)]
pub struct TreeInstance {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub jump_slots: Option<usize>,
}

impl TreeInstance {
    pub fn sampling(&self) -> Sampling {
        Sampling::Tree {
            jump_slots: self.jump_slots,
        }
    }

    pub fn branches(&self) -> usize {
        2 * self.jump_slots.unwrap_or(1)
    }

    pub fn ensemble(&self, control: &Control) -> Result<PathEnsemble> {
        self.sampling()
            .ensemble(&self.spec, &self.grid, &self.x0, control)
    }

    /// Value with every node assigned by `assign(step, node)`, where node
    /// `c` at step `k` has children `c·B + branch`.
    pub fn enumerate(&self, mode: Mode, assign: &dyn Fn(usize, usize) -> usize) -> Result<f64> {
        self.node(0, 0, &self.x0, mode, assign)
    }

    /// Value of the subtree rooted at state `x` on step `k` (node code 0).
    pub fn enumerate_from(
        &self,
        k: usize,
        x: &[f64],
        mode: Mode,
        assign: &dyn Fn(usize, usize) -> usize,
    ) -> Result<f64> {
        self.node(k, 0, x, mode, assign)
    }

    /// Interior node count `1 + B + … + B^{K−1}`.
    pub fn interior_nodes(&self) -> usize {
        let b = self.branches();
        (0..self.grid.steps()).map(|k| b.pow(k as u32)).sum()
    }

    /// Minimum over every node-wise control assignment, by exhaustion.
    /// Returns the optimum and the minimizing assignment in node order.
    pub fn brute_force_optimum(&self, mode: Mode) -> Result<(f64, Vec<usize>)> {
        let nodes = self.interior_nodes();
        let c = self.spec.controls().len();
        let total = c
            .checked_pow(nodes as u32)
            .filter(|&t| t <= 1 << 20)
            .ok_or_else(|| {
                Error::Precondition("too many control assignments to enumerate".into())
            })?;
        let b = self.branches();
        let offset = |k: usize| -> usize { (0..k).map(|j| b.pow(j as u32)).sum() };
        let mut best = (f64::INFINITY, Vec::new());
        for code in 0..total {
            let table: Vec<usize> = (0..nodes).map(|i| (code / c.pow(i as u32)) % c).collect();
            let v = self.enumerate(mode, &|k, node| table[offset(k) + node])?;
            if v < best.0 {
                best = (v, table);
            }
        }
        Ok(best)
    }

    /// Optimum of the subtree rooted at `x` on step `k` over every node-wise
    /// assignment, and the control chosen at the root.
    pub fn optimal_from(&self, k: usize, x: &[f64], mode: Mode) -> Result<(f64, usize)> {
        let b = self.branches();
        let levels = self.grid.steps().saturating_sub(k);
        let nodes: usize = (0..levels).map(|j| b.pow(j as u32)).sum();
        if nodes == 0 {
            return Ok((self.spec.terminal(x), 0));
        }
        let c = self.spec.controls().len();
        let total = c
            .checked_pow(nodes as u32)
            .filter(|&t| t <= 1 << 20)
            .ok_or_else(|| Error::Precondition("too many control assignments to enumerate".into()))?;
        let offset = |j: usize| -> usize { (0..j - k).map(|i| b.pow(i as u32)).sum() };
        let mut best = (f64::INFINITY, 0);
        for code in 0..total {
            let table: Vec<usize> = (0..nodes).map(|i| (code / c.pow(i as u32)) % c).collect();
            let v = self.node(k, 0, x, mode, &|j, node| table[offset(j) + node])?;
            if v < best.0 {
                best = (v, table[0]);
            }
        }
        Ok(best)
    }

    /// Feedback law playing the subtree optimum at every visited state.
    pub fn oracle_feedback(&self, mode: Mode) -> Arc<dyn FeedbackLaw> {
        let inst = self.clone();
        Arc::new(move |t: f64, x: &[f64]| {
            let k = ((t - inst.grid.t0()) / inst.grid.dt()).round() as usize;
            inst.optimal_from(k, x, mode).map(|(_, u)| u).unwrap_or(0)
        })
    }

    fn node(
        &self,
        k: usize,
        code: usize,
        x: &[f64],
        mode: Mode,
        assign: &dyn Fn(usize, usize) -> usize,
    ) -> Result<f64> {
        let spec = &self.spec;
        if k == self.grid.steps() {
            return Ok(spec.terminal(x));
        }
        let t = self.grid.node(k);
        let dt = self.grid.dt();
        let ui = assign(k, code);
        let u = spec
            .controls()
            .get(ui)
            .ok_or_else(|| Error::Precondition(format!("control {ui} out of range")))?;
        let b = spec.drift(t, x, u)[0];
        let sigma = spec.diffusion(t, x, u)[0];
        let mut comp = [0.0];
        spec.compensator(t, x, u, &mut comp);
        let (jump, lw) = match spec.levy().atoms().first() {
            Some(atom) if self.jump_slots.is_some() => {
                (spec.jump(t, x, u, &atom.mark)[0], spec.jump_weight().at(0))
            }
            _ => (0.0, 0.0),
        };
        let mass = spec.levy().total_mass();
        let branches = self.branches();
        let mut children = Vec::with_capacity(branches);
        for br in 0..branches {
            let db = if br % 2 == 0 { dt.sqrt() } else { -dt.sqrt() };
            let jumped = self.jump_slots.is_some() && br / 2 == 0;
            let mut next = x[0] + b * dt + sigma * db - dt * comp[0];
            if jumped {
                next += jump;
            }
            let w = if jumped { lw } else { 0.0 } - dt * mass * lw;
            children.push((
                self.node(k + 1, code * branches + br, &[next], mode, assign)?,
                db,
                w,
            ));
        }
        let m = branches as f64;
        let e = children.iter().map(|c| c.0).sum::<f64>() / m;
        let z = children.iter().map(|c| (c.0 - e) * c.1).sum::<f64>() / m / dt;
        let g = children.iter().map(|c| (c.0 - e) * c.2).sum::<f64>() / m / dt;
        let f = |y: f64| spec.driver(t, x, y, &[z], g, u);
        let (f0, slope) = (f(0.0), f(1.0) - f(0.0));
        if (f(2.0) - f0 - 2.0 * slope).abs() > 1e-12 * (1.0 + f0.abs()) {
            return Err(Error::Precondition(
                "tree oracle needs a driver affine in y".into(),
            ));
        }
        let h = spec.obstacle(t, x);
        let free = (e + dt * f0) / (1.0 - dt * slope);
        Ok(match mode {
            Mode::Reflected => free.min(h),
            Mode::Penalized(n) if free > h => {
                (e + dt * f0 + dt * n * h) / (1.0 - dt * slope + dt * n)
            }
            Mode::Penalized(_) => free,
        })
    }
}

fn lq(
    params: Lq1dParams,
    levy: LevyMeasure,
    l: Option<JumpWeight>,
    controls: Vec<Vec<f64>>,
) -> Result<ProblemSpec> {
    let l = l.unwrap_or_else(|| JumpWeight::zero(&levy));
    ProblemSpec::from_family(Family::Lq1d(params), (1, 1), 1.0, levy, l, controls)
}

fn base() -> Lq1dParams {
    Lq1dParams {
        a: 0.2,
        sigma0: 1.0,
        f0: 0.5,
        f_x: 0.2,
        f_y: 0.3,
        f_z: 0.4,
        phi_x: 1.0,
        phi_xx: 0.5,
        ..Lq1dParams::default()
    }
}

/// The bundled instances on `T = 1`, two steps, `x0 = 0`.
pub fn bundled() -> Vec<TreeInstance> {
    ["plain", "obstacle-flat", "obstacle", "jump", "control"]
        .iter()
        .map(|n| instance(n).unwrap())
        .collect()
}

pub fn instance(name: &str) -> Option<TreeInstance> {
    let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
    let mut slots = None;
    let spec = match name {
        "plain" => lq(base(), LevyMeasure::empty(), None, vec![vec![0.0]]),
        "obstacle-flat" => lq(
            Lq1dParams {
                sigma0: 1.0,
                phi0: 1.0,
                h0: 0.5,
                ..Lq1dParams::default()
            },
            LevyMeasure::empty(),
            None,
            vec![vec![0.0]],
        ),
        "obstacle" => lq(
            Lq1dParams {
                h0: 0.6,
                h_x: 0.3,
                ..base()
            },
            LevyMeasure::empty(),
            None,
            vec![vec![0.0]],
        ),
        "jump" => {
            // Rate 0.5 on a half step: one jump slot in four.
            slots = Some(4);
            let levy = LevyMeasure::scalar(&[1.0], &[0.5]).unwrap();
            let l = JumpWeight::scaled(0.5, 1.0, &levy).unwrap();
            lq(
                Lq1dParams {
                    jump_c: 0.5,
                    f_v: 0.6,
                    h0: 1.0,
                    ..base()
                },
                levy,
                Some(l),
                vec![vec![0.0]],
            )
        }
        "control" => lq(
            Lq1dParams {
                sigma0: 1.0,
                f_y: 0.3,
                f_xu: 1.0,
                phi_xx: 0.5,
                ..Lq1dParams::default()
            },
            LevyMeasure::empty(),
            None,
            vec![vec![-1.0], vec![1.0]],
        ),
        _ => return None,
    }
    .ok()?;
    let name = ["plain", "obstacle-flat", "obstacle", "jump", "control"]
        .into_iter()
        .find(|n| *n == name)?;
    Some(TreeInstance {
        name,
        spec,
        x0: vec![0.0],
        grid,
        jump_slots: slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_obstacle_value_is_half() {
        let inst = instance("obstacle-flat").unwrap();
        assert_eq!(inst.enumerate(Mode::Reflected, &|_, _| 0).unwrap(), 0.5);
    }

    #[test]
    fn plain_tree_by_hand() {
        // Δ = 0.5, b = 0.2x, σ = 1, f = 0.5 + 0.2x + 0.3y + 0.4z, Φ = x + x²/2.
        let inst = instance("plain").unwrap();
        let dt: f64 = 0.5;
        let s = dt.sqrt();
        let phi = |x: f64| x + 0.5 * x * x;
        let step = |x: f64, y_up: f64, y_dn: f64| {
            let e = 0.5 * (y_up + y_dn);
            let z = 0.5 * ((y_up - e) * s - (y_dn - e) * s) / dt;
            (e + dt * (0.5 + 0.2 * x + 0.4 * z)) / (1.0 - 0.3 * dt)
        };
        let child = |x: f64| {
            let up = x + 0.2 * x * dt + s;
            let dn = x + 0.2 * x * dt - s;
            step(x, phi(up), phi(dn))
        };
        let y0 = step(0.0, child(s), child(-s));
        let got = inst.enumerate(Mode::Reflected, &|_, _| 0).unwrap();
        assert!((got - y0).abs() < 1e-14, "{got} vs {y0}");
    }

    #[test]
    fn brute_force_finds_sign_feedback() {
        let inst = instance("control").unwrap();
        let (best, table) = inst.brute_force_optimum(Mode::Reflected).unwrap();
        // Node 1 is the up branch (x > 0): choose u = −1; node 2 is down: u = +1.
        assert_eq!(&table[1..], &[0, 1]);
        let feedback = inst
            .enumerate(Mode::Reflected, &|k, c| {
                if k == 1 && c == 1 {
                    1
                } else {
                    0
                }
            })
            .unwrap();
        assert_eq!(best, feedback);
    }

    #[test]
    fn oracle_feedback_attains_the_optimum_in_value_mc() {
        use crate::rbsde::SolverConfig;
        use crate::regression::RegressionBasis;
        use crate::value::{value_mc, McConfig};
        for inst in bundled() {
            let (best, _) = inst.brute_force_optimum(Mode::Reflected).unwrap();
            let (root, _) = inst.optimal_from(0, &inst.x0, Mode::Reflected).unwrap();
            assert_eq!(root, best);
            let mc = McConfig {
                steps: 2,
                sampling: inst.sampling(),
                solver: SolverConfig::with_basis(RegressionBasis::exact()),
            };
            let v = value_mc(&inst.spec, 0.0, &inst.x0, &mc, Some(inst.oracle_feedback(Mode::Reflected))).unwrap();
            assert!((v.value - best).abs() < 1e-10, "{}: {} vs {best}", inst.name, v.value);
        }
    }

    #[test]
    fn solver_matches_oracle_with_exact_basis() {
        use crate::rbsde::{solve, SolverConfig};
        use crate::regression::RegressionBasis;
        let cfg = SolverConfig::with_basis(RegressionBasis::exact());
        for inst in bundled() {
            let ens = inst.ensemble(&Control::Constant(0)).unwrap();
            for mode in [Mode::Reflected, Mode::Penalized(0.0), Mode::Penalized(10.0)] {
                let y0 = solve(&ens, &inst.spec, mode, &cfg).unwrap().y0();
                let oracle = inst.enumerate(mode, &|_, _| 0).unwrap();
                assert!(
                    (y0 - oracle).abs() < 1e-10,
                    "{} {mode:?}: {y0} vs {oracle}",
                    inst.name
                );
            }
        }
    }

    #[test]
    fn penalized_tree_values_decrease_in_n() {
        let inst = instance("obstacle").unwrap();
        let refl = inst.enumerate(Mode::Reflected, &|_, _| 0).unwrap();
        let mut prev = f64::INFINITY;
        for n in [1.0, 4.0, 16.0, 64.0, 256.0] {
            let v = inst.enumerate(Mode::Penalized(n), &|_, _| 0).unwrap();
            assert!(v <= prev && v >= refl - 1e-12);
            prev = v;
        }
    }
}
