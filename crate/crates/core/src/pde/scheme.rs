//! Explicit backward march for the penalized and obstacle HJB equations.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{Level, SpaceGrid};
use super::operators::node_hamiltonians;
use super::surface::{SurfaceMode, ValueSurface};
use crate::error::{Error, Result};
use crate::forward::TimeGrid;
use crate::problem::ProblemSpec;
use crate::rng::{stream, Channel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbConfig {
    /// Small-jump threshold; `None` uses half the smallest atom norm.
    pub delta: Option<f64>,
    pub cfl_limit: f64,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self { delta: None, cfl_limit: 0.95 }
    }
}

impl HjbConfig {
    pub fn delta_for(&self, spec: &ProblemSpec) -> f64 {
        self.delta.unwrap_or_else(|| 0.5 * spec.levy().min_norm().unwrap_or(0.0))
    }
}

/// `max Δt·(Σ a_ii/Δx_i² + Σ_{i≠j} |a_ij|/(2Δx_iΔx_j) + Σ |b_eff,i|/Δx_i + ν(E))`
/// over time levels, nodes and controls, where `a` includes the small-atom
/// covariance and `b_eff` the large-atom compensator.
pub fn cfl_number(spec: &ProblemSpec, space: &SpaceGrid, time: &TimeGrid, delta: f64) -> f64 {
    let n = space.dim();
    let d = spec.dim_w();
    let dt = time.dt();
    let h: Vec<f64> = (0..n).map(|i| space.spacing(i)).collect();
    let mass = spec.levy().total_mass();
    (0..time.steps())
        .into_par_iter()
        .map(|k| {
            let t = time.node(k);
            let mut worst = 0.0f64;
            for node in 0..space.len() {
                let x = space.coord(node);
                for u in spec.controls() {
                    let b = spec.drift(t, &x, u);
                    let sigma = spec.diffusion(t, &x, u);
                    let mut a = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            a[i * n + j] = (0..d).map(|q| sigma[i * d + q] * sigma[j * d + q]).sum();
                        }
                    }
                    let mut b_eff = b.clone();
                    for atom in spec.levy().atoms() {
                        let g = spec.jump(t, &x, u, &atom.mark);
                        for i in 0..n {
                            if atom.norm() < delta {
                                for j in 0..n {
                                    a[i * n + j] += atom.weight * g[i] * g[j];
                                }
                            } else {
                                b_eff[i] -= atom.weight * g[i];
                            }
                        }
                    }
                    let mut rate = mass;
                    for i in 0..n {
                        rate += a[i * n + i] / (h[i] * h[i]) + b_eff[i].abs() / h[i];
                        for j in 0..n {
                            if i != j {
                                rate += a[i * n + j].abs() / (2.0 * h[i] * h[j]);
                            }
                        }
                    }
                    worst = worst.max(dt * rate);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

fn check_grids(spec: &ProblemSpec, space: &SpaceGrid, time: &TimeGrid) -> Result<()> {
    if space.dim() != spec.dim_x() {
        return Err(Error::Dimension(format!("space grid has {} dims, state has {}", space.dim(), spec.dim_x())));
    }
    if (time.t_end() - spec.horizon()).abs() > 1e-12 * spec.horizon().max(1.0) {
        return Err(Error::Precondition("time grid must end at the horizon".into()));
    }
    Ok(())
}

/// Unprojected update `W_{k+1} + Δt·min_u ℍ` at every node of level `k`.
fn free_update(spec: &ProblemSpec, next: &Level, t: f64, dt: f64, delta: f64) -> Result<Vec<f64>> {
    let c = spec.controls().len();
    (0..next.grid().len())
        .into_par_iter()
        .map(|node| {
            let mut hs = vec![0.0; c];
            node_hamiltonians(next, spec, t, node, delta, &mut hs)?;
            let best = hs.iter().copied().fold(f64::INFINITY, f64::min);
            let v = next.value(node) + dt * best;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("update at node {node}, t = {t}")))
            }
        })
        .collect()
}

fn apply_mode(free: f64, h: f64, dt: f64, mode: SurfaceMode) -> f64 {
    match mode {
        SurfaceMode::Obstacle => free.min(h),
        SurfaceMode::Penalized(n) if free > h => (free + dt * n * h) / (1.0 + dt * n),
        _ => free,
    }
}

fn march(spec: &ProblemSpec, space: &SpaceGrid, time: &TimeGrid, mode: SurfaceMode, cfg: &HjbConfig) -> Result<ValueSurface> {
    check_grids(spec, space, time)?;
    let delta = cfg.delta_for(spec);
    let cfl = cfl_number(spec, space, time, delta);
    if cfl > cfg.cfl_limit {
        return Err(Error::Cfl { value: cfl, limit: cfg.cfl_limit });
    }
    let m = space.len();
    let steps = time.steps();
    let dt = time.dt();
    let coords: Vec<Vec<f64>> = (0..m).map(|j| space.coord(j)).collect();
    let mut values = vec![0.0; (steps + 1) * m];
    for (j, x) in coords.iter().enumerate() {
        values[steps * m + j] = spec.terminal(x);
    }
    for k in (0..steps).rev() {
        let t = time.node(k);
        let (head, tail) = values.split_at_mut((k + 1) * m);
        let next = Level::new(space, &tail[..m])?;
        let free = free_update(spec, &next, t, dt, delta)?;
        for (j, v) in free.into_iter().enumerate() {
            head[k * m + j] = apply_mode(v, spec.obstacle(t, &coords[j]), dt, mode);
        }
    }
    ValueSurface::new(*time, space.clone(), values, mode)
}

/// Penalized equation with the penalty applied implicitly per node:
/// `W = (W̃ + Δt·n·h)/(1 + Δt·n)` wherever the free update `W̃` exceeds `h`.
pub fn solve_penalized_hjb(
    spec: &ProblemSpec,
    space: &SpaceGrid,
    time: &TimeGrid,
    n: f64,
    cfg: &HjbConfig,
) -> Result<ValueSurface> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::Precondition(format!("penalty level must be finite and >= 0, got {n}")));
    }
    march(spec, space, time, SurfaceMode::Penalized(n), cfg)
}

/// Obstacle equation: the free update is projected onto `W ≤ h`.
pub fn solve_obstacle_hjb(spec: &ProblemSpec, space: &SpaceGrid, time: &TimeGrid, cfg: &HjbConfig) -> Result<ValueSurface> {
    march(spec, space, time, SurfaceMode::Obstacle, cfg)
}

/// `max |min(h − W_k, (W̃_k − W_k)/Δt)|` over `k < K` and all nodes.
pub fn complementarity_residual(spec: &ProblemSpec, surface: &ValueSurface, cfg: &HjbConfig) -> Result<f64> {
    if surface.mode() != SurfaceMode::Obstacle {
        return Err(Error::Precondition("complementarity applies to obstacle surfaces".into()));
    }
    let time = surface.time();
    let space = surface.space();
    let delta = cfg.delta_for(spec);
    let dt = time.dt();
    let mut worst = 0.0f64;
    for k in 0..time.steps() {
        let t = time.node(k);
        let free = free_update(spec, &surface.level(k + 1), t, dt, delta)?;
        for (j, f) in free.iter().enumerate() {
            let w = surface.at(k, j);
            let h = spec.obstacle(t, &space.coord(j));
            worst = worst.max((h - w).min((f - w) / dt).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub probes: usize,
    pub violations: usize,
    /// Most negative response of an updated value to a positive bump.
    pub worst_response: f64,
}

/// Bump one stencil neighbour of a random node on a random level and check
/// that the free update does not decrease.
pub fn monotonicity_probe(
    spec: &ProblemSpec,
    space: &SpaceGrid,
    time: &TimeGrid,
    cfg: &HjbConfig,
    probes: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    check_grids(spec, space, time)?;
    let delta = cfg.delta_for(spec);
    let dt = time.dt();
    let m = space.len();
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for p in 0..probes {
        let mut rng = stream(seed, Channel::Probe, p as u64, 1);
        let k = rng.random_range(0..time.steps());
        let t = time.node(k);
        let base: Vec<f64> =
            (0..m).map(|j| spec.terminal(&space.coord(j)) + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let node = rng.random_range(0..m);
        let mut candidates = vec![node];
        for axis in 0..space.dim() {
            candidates.push(space.shifted(node, axis, 1));
            candidates.push(space.shifted(node, axis, -1));
        }
        let x = space.coord(node);
        for u in spec.controls() {
            for atom in spec.levy().atoms() {
                let g = spec.jump(t, &x, u, &atom.mark);
                let dest: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                candidates.push(space.nearest(&dest));
            }
        }
        let target = candidates[rng.random_range(0..candidates.len())];
        let before = single_update(spec, space, &base, t, dt, delta, node)?;
        let mut bumped = base;
        bumped[target] += 1e-3;
        let after = single_update(spec, space, &bumped, t, dt, delta, node)?;
        let response = after - before;
        worst = worst.min(response);
        if response < -1e-12 {
            violations += 1;
        }
    }
    Ok(MonotonicityReport { probes, violations, worst_response: worst })
}

fn single_update(
    spec: &ProblemSpec,
    space: &SpaceGrid,
    values: &[f64],
    t: f64,
    dt: f64,
    delta: f64,
    node: usize,
) -> Result<f64> {
    let level = Level::new(space, values)?;
    let mut hs = vec![0.0; spec.controls().len()];
    node_hamiltonians(&level, spec, t, node, delta, &mut hs)?;
    Ok(values[node] + dt * hs.iter().copied().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Family, FnCoefficients, JumpWeight, LevyMeasure, TrigParams};

    fn grids(points: usize, steps: usize) -> (SpaceGrid, TimeGrid) {
        (SpaceGrid::uniform_1d(-4.0, 4.0, points).unwrap(), TimeGrid::new(0.0, 1.0, steps).unwrap())
    }

    #[test]
    fn stationary_constant_solution() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().terminal(|_| 2.0).obstacle(|_, _| 3.0))
            .build()
            .unwrap();
        let (space, time) = grids(11, 5);
        let s = solve_penalized_hjb(&spec, &space, &time, 10.0, &HjbConfig::default()).unwrap();
        assert!(s.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn immediate_projection() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().terminal(|_| 1.0).obstacle(|_, _| 0.0))
            .build()
            .unwrap();
        let (space, time) = grids(11, 5);
        let s = solve_obstacle_hjb(&spec, &space, &time, &HjbConfig::default()).unwrap();
        for k in 0..5 {
            assert!((0..11).all(|j| s.at(k, j) == 0.0));
        }
        assert!((0..11).all(|j| s.at(5, j) == 1.0));
        assert_eq!(complementarity_residual(&spec, &s, &HjbConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn cfl_violation_refuses_to_run() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().diffusion(|_, _, _, s| s[0] = 1.0))
            .build()
            .unwrap();
        let (space, time) = grids(101, 10);
        let err = solve_obstacle_hjb(&spec, &space, &time, &HjbConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    fn trig_spec() -> ProblemSpec {
        let levy = LevyMeasure::scalar(&[-0.4, 0.3], &[0.8, 0.6]).unwrap();
        let l = JumpWeight::scaled(1.0, 1.0, &levy).unwrap();
        let params = TrigParams {
            b_sin: 0.2,
            b_u: 1.0,
            sigma0: 0.25,
            jump_scale: 1.0,
            f0: 0.5,
            f_cos: 0.2,
            f_uu: 0.5,
            f_v: 0.5,
            phi_cos: 1.0,
            h0: 0.8,
            h_cos: 0.5,
            ..TrigParams::default()
        };
        ProblemSpec::from_family(
            Family::Trig(params),
            (1, 1),
            1.0,
            levy,
            l,
            vec![vec![-0.5], vec![0.0], vec![0.5]],
        )
        .unwrap()
    }

    #[test]
    fn ladder_is_ordered_and_above_obstacle_surface() {
        let spec = trig_spec();
        let space = SpaceGrid::uniform_1d(-5.0, 5.0, 101).unwrap();
        let time = TimeGrid::new(0.0, 1.0, 25).unwrap();
        let cfg = HjbConfig::default();
        let obstacle = solve_obstacle_hjb(&spec, &space, &time, &cfg).unwrap();
        let mut prev: Option<ValueSurface> = None;
        for n in [0.0, 1.0, 10.0, 100.0] {
            let s = solve_penalized_hjb(&spec, &space, &time, n, &cfg).unwrap();
            if let Some(p) = &prev {
                assert!(s.values().iter().zip(p.values()).all(|(a, b)| a <= &(b + 1e-12)));
            }
            assert!(s.values().iter().zip(obstacle.values()).all(|(a, b)| a >= &(b - 1e-12)));
            prev = Some(s);
        }
        assert!(complementarity_residual(&spec, &obstacle, &cfg).unwrap() < 1e-12);
        let probe = monotonicity_probe(&spec, &space, &time, &cfg, 200, 5).unwrap();
        assert_eq!(probe.violations, 0);
    }

    #[test]
    fn inactive_obstacle_matches_unpenalized_bitwise() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(
                FnCoefficients::new()
                    .diffusion(|_, _, _, s| s[0] = 0.5)
                    .terminal(|x| x[0].cos())
                    .driver(|_, x, y, _, _, _| x[0].sin() - 0.2 * y),
            )
            .build()
            .unwrap();
        let (space, time) = grids(41, 20);
        let cfg = HjbConfig::default();
        let a = solve_obstacle_hjb(&spec, &space, &time, &cfg).unwrap();
        let b = solve_penalized_hjb(&spec, &space, &time, 0.0, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn ordered_terminal_data_give_ordered_surfaces() {
        let make = |shift: f64| {
            ProblemSpec::builder(1, 1, 1.0)
                .coefficients(
                    FnCoefficients::new()
                        .diffusion(|_, _, _, s| s[0] = 0.5)
                        .terminal(move |x| x[0].cos() + shift)
                        .driver(|_, _, y, _, _, _| -0.3 * y),
                )
                .build()
                .unwrap()
        };
        let (space, time) = grids(41, 20);
        let lo = solve_obstacle_hjb(&make(0.0), &space, &time, &HjbConfig::default()).unwrap();
        let hi = solve_obstacle_hjb(&make(0.2), &space, &time, &HjbConfig::default()).unwrap();
        assert!(hi.values().iter().zip(lo.values()).all(|(a, b)| a >= b));
    }
}
