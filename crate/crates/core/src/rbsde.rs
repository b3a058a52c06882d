//! Backward induction for the penalized and reflected BSDEs along a path
//! ensemble, with least-squares conditional expectations.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{mean_stderr, PathEnsemble, TimeGrid};
use crate::problem::ProblemSpec;
use crate::regression::RegressionBasis;
use crate::report::fmt_f64;
use crate::rng::{stream, Channel};

/// Default obstacle tolerance at nodes.
pub const TOL_OBSTACLE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "n", rename_all = "kebab-case")]
pub enum Mode {
    /// Penalty level `n ≥ 0`.
    Penalized(f64),
    Reflected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub basis: RegressionBasis,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            max_iters: 50,
            tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn with_basis(basis: RegressionBasis) -> Self {
        Self {
            basis,
            ..Self::default()
        }
    }
}

/// Backward solution on the ensemble grid. Arrays are path-major:
/// `y`, `a` hold `K+1` entries per path, `gamma` holds `K`, `z` holds `K·d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    pub mode: Mode,
    pub n_paths: usize,
    pub dim_w: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub gamma: Vec<f64>,
    pub a: Vec<f64>,
    /// Standard error of `Y_0` from the spread of `Y_1` across paths.
    pub y0_stderr: f64,
}

impl BackwardSolution {
    fn stride(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn y(&self, p: usize, k: usize) -> f64 {
        self.y[p * self.stride() + k]
    }

    pub fn a(&self, p: usize, k: usize) -> f64 {
        self.a[p * self.stride() + k]
    }

    /// Increment `A_{k+1} − A_k`.
    pub fn delta_a(&self, p: usize, k: usize) -> f64 {
        self.a(p, k + 1) - self.a(p, k)
    }

    pub fn z(&self, p: usize, k: usize) -> &[f64] {
        let s = (p * self.grid.steps() + k) * self.dim_w;
        &self.z[s..s + self.dim_w]
    }

    pub fn gamma(&self, p: usize, k: usize) -> f64 {
        self.gamma[p * self.grid.steps() + k]
    }

    /// Ensemble mean of `Y_0` (all paths share `X_0`).
    pub fn y0(&self) -> f64 {
        (0..self.n_paths).map(|p| self.y(p, 0)).sum::<f64>() / self.n_paths as f64
    }

    /// `max_{p,k} |Y − other.Y|`.
    pub fn sup_gap(&self, other: &BackwardSolution) -> f64 {
        self.y
            .iter()
            .zip(&other.y)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max_{p,k} (Y − other.Y)`, signed.
    pub fn max_excess_over(&self, other: &BackwardSolution) -> f64 {
        self.y
            .iter()
            .zip(&other.y)
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
    }

    /// `max_{p,k} (Y − h)`; `k = K` is skipped unless `include_terminal`.
    pub fn obstacle_excess(
        &self,
        ens: &PathEnsemble,
        spec: &ProblemSpec,
        include_terminal: bool,
    ) -> f64 {
        let last = if include_terminal {
            self.grid.steps()
        } else {
            self.grid.steps() - 1
        };
        let mut worst = f64::NEG_INFINITY;
        for p in 0..self.n_paths {
            for k in 0..=last {
                worst = worst.max(self.y(p, k) - spec.obstacle(self.grid.node(k), ens.state(p, k)));
            }
        }
        worst
    }

    pub fn a_is_monotone(&self) -> bool {
        (0..self.n_paths).all(|p| {
            self.a(p, 0) == 0.0 && (0..self.grid.steps()).all(|k| self.a(p, k + 1) >= self.a(p, k))
        })
    }

    /// Terms of the a-priori estimate: `E[sup_k Y²]`, `E[Σ|Z|²Δ]`, `E[A_K²]`.
    pub fn apriori_terms(&self) -> [f64; 3] {
        let m = self.n_paths as f64;
        let k = self.grid.steps();
        let dt = self.grid.dt();
        let sup_y: f64 = (0..self.n_paths)
            .map(|p| (0..=k).map(|j| self.y(p, j).powi(2)).fold(0.0, f64::max))
            .sum::<f64>()
            / m;
        let z2 = self.z.iter().map(|z| z * z * dt).sum::<f64>() / m;
        let a2 = (0..self.n_paths).map(|p| self.a(p, k).powi(2)).sum::<f64>() / m;
        [sup_y, z2, a2]
    }

    /// CSV dump `path,step,time,y,a,gamma,z0…`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut header = String::from("path,step,time,y,a,gamma");
        for j in 0..self.dim_w {
            header.push_str(&format!(",z{j}"));
        }
        writeln!(out, "{header}")?;
        let steps = self.grid.steps();
        for p in 0..self.n_paths {
            for k in 0..=steps {
                let (g, z) = if k < steps {
                    (self.gamma(p, k), self.z(p, k).to_vec())
                } else {
                    (0.0, vec![0.0; self.dim_w])
                };
                let mut line = format!(
                    "{p},{k},{},{},{},{}",
                    fmt_f64(self.grid.node(k)),
                    fmt_f64(self.y(p, k)),
                    fmt_f64(self.a(p, k)),
                    fmt_f64(g)
                );
                for v in z {
                    line.push(',');
                    line.push_str(&fmt_f64(v));
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

pub fn solve_penalized(
    ens: &PathEnsemble,
    spec: &ProblemSpec,
    n: f64,
    cfg: &SolverConfig,
) -> Result<BackwardSolution> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::Precondition(format!(
            "penalty level must be finite and >= 0, got {n}"
        )));
    }
    solve(ens, spec, Mode::Penalized(n), cfg)
}

pub fn solve_reflected(
    ens: &PathEnsemble,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<BackwardSolution> {
    solve(ens, spec, Mode::Reflected, cfg)
}

/// Solve `y = c + Δf(y) − Δn(y − h)⁺` in `y`.
///
/// Each iteration applies the penalty exactly, so the map contracts at rate
/// `Δ·L_f` whatever `n` is. Falls back to bisection on the residual.
fn implicit_step(
    c: f64,
    dt: f64,
    n: f64,
    h: f64,
    f: impl Fn(f64) -> f64,
    max_iters: usize,
    tol: f64,
) -> Option<f64> {
    let penalize = |v: f64| {
        if v <= h {
            v
        } else {
            (v + dt * n * h) / (1.0 + dt * n)
        }
    };
    let mut y = penalize(c);
    for _ in 0..max_iters {
        let next = penalize(c + dt * f(y));
        if !next.is_finite() {
            break;
        }
        let done = (next - y).abs() <= tol * (1.0 + y.abs());
        y = next;
        if done {
            return Some(y);
        }
    }
    log::warn!("fixed-point iteration stalled (Δ·(L_f + n) may exceed 1); trying bisection");
    let g = |v: f64| v - c - dt * f(v) + dt * n * (v - h).max(0.0);
    let (mut lo, mut hi) = (c - 1.0, c + 1.0);
    let mut width = 1.0;
    while !(g(lo) <= 0.0 && g(hi) >= 0.0) {
        width *= 2.0;
        if width > 1e12 {
            return None;
        }
        lo = c - width;
        hi = c + width;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * (1.0 + mid.abs()) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Backward induction shared by both modes.
///
/// `Z_k` and `Γ_k` regress the centred residual `Y_{k+1} − E_k[Y_{k+1}]`
/// against `ΔB_k/Δ` and against `W_k/Δ`, where
/// `W_k = Σ_{jumps in step k} l(e) − Δ ∫ l dν`.
pub fn solve(
    ens: &PathEnsemble,
    spec: &ProblemSpec,
    mode: Mode,
    cfg: &SolverConfig,
) -> Result<BackwardSolution> {
    let n_dim = spec.dim_x();
    let d = spec.dim_w();
    if ens.dim_x() != n_dim || ens.noise().dim_w() != d {
        return Err(Error::Dimension(
            "ensemble and problem dimensions differ".into(),
        ));
    }
    if let Mode::Penalized(n) = mode {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(Error::Precondition(format!(
                "penalty level must be finite and >= 0, got {n}"
            )));
        }
    }
    cfg.basis.validate(n_dim)?;
    let grid = *ens.grid();
    let steps = grid.steps();
    let dt = grid.dt();
    let m = ens.n_paths();
    let noise = ens.noise();
    let l = spec.jump_weight();
    let l_mass: f64 = spec
        .levy()
        .atoms()
        .iter()
        .enumerate()
        .map(|(j, a)| a.weight * l.at(j))
        .sum();
    let penalty = match mode {
        Mode::Penalized(n) => n,
        Mode::Reflected => 0.0,
    };

    let stride = steps + 1;
    let mut y = vec![0.0; m * stride];
    let mut a_inc = vec![0.0; m * steps];
    let mut z = vec![0.0; m * steps * d];
    let mut gamma = vec![0.0; m * steps];
    let mut next: Vec<f64> = (0..m).map(|p| spec.terminal(ens.state(p, steps))).collect();
    if let Some(p) = next.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("terminal value on path {p}")));
    }
    for p in 0..m {
        y[p * stride + steps] = next[p];
    }
    let mut y1_spread = 0.0;

    for k in (0..steps).rev() {
        let t = grid.node(k);
        let points: Vec<f64> = (0..m)
            .flat_map(|p| ens.state(p, k).iter().copied())
            .collect();
        let cond = cfg
            .basis
            .project(&points, n_dim, std::slice::from_ref(&next), k)?
            .remove(0);
        let mut targets: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..m)
                    .map(|p| (next[p] - cond[p]) * noise.increment(p, k)[j] / dt)
                    .collect()
            })
            .collect();
        if l_mass > 0.0 {
            targets.push(
                (0..m)
                    .map(|p| {
                        let w: f64 = noise
                            .jumps(p, k)
                            .iter()
                            .map(|&a| l.at(a as usize))
                            .sum::<f64>()
                            - dt * l_mass;
                        (next[p] - cond[p]) * w / dt
                    })
                    .collect(),
            );
        }
        let fitted = cfg.basis.project(&points, n_dim, &targets, k)?;
        if k == 0 {
            y1_spread = mean_stderr(next.iter().copied()).1;
        }

        let updates: Vec<Result<(f64, f64)>> = (0..m)
            .into_par_iter()
            .map(|p| {
                let x = ens.state(p, k);
                let u = spec.control(ens.control(p, k));
                let zp: Vec<f64> = (0..d).map(|j| fitted[j][p]).collect();
                let gp = if l_mass > 0.0 { fitted[d][p] } else { 0.0 };
                let h = spec.obstacle(t, x);
                let f = |v: f64| spec.driver(t, x, v, &zp, gp, u);
                let raw = implicit_step(cond[p], dt, penalty, h, f, cfg.max_iters, cfg.tol)
                    .ok_or(Error::FixedPoint { step: k, path: p })?;
                if !raw.is_finite() {
                    return Err(Error::NonFinite(format!("Y at path {p}, step {k}")));
                }
                Ok(match mode {
                    Mode::Penalized(n) => (raw, dt * n * (raw - h).max(0.0)),
                    Mode::Reflected => (raw.min(h), (raw - h).max(0.0)),
                })
            })
            .collect();
        for (p, r) in updates.into_iter().enumerate() {
            let (yk, da) = r?;
            y[p * stride + k] = yk;
            a_inc[p * steps + k] = da;
            next[p] = yk;
            for j in 0..d {
                z[(p * steps + k) * d + j] = fitted[j][p];
            }
            if l_mass > 0.0 {
                gamma[p * steps + k] = fitted[d][p];
            }
        }
    }

    let mut a = vec![0.0; m * stride];
    for p in 0..m {
        for k in 0..steps {
            a[p * stride + k + 1] = a[p * stride + k] + a_inc[p * steps + k];
        }
    }
    Ok(BackwardSolution {
        grid,
        mode,
        n_paths: m,
        dim_w: d,
        y,
        z,
        gamma,
        a,
        y0_stderr: y1_spread,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub n: f64,
    pub y0: f64,
    pub sup_gap_to_reflected: f64,
    /// `NaN` for the last level.
    pub sup_gap_to_next_level: f64,
    /// `max_{p,k} (Y^{n'} − Y^n)` for the next level; positive values
    /// break monotone penalization.
    pub max_increase_to_next_level: f64,
    pub mc_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct Ladder {
    pub levels: Vec<f64>,
    pub solutions: Vec<BackwardSolution>,
    pub reflected: BackwardSolution,
    pub table: Vec<LadderRow>,
}

impl Ladder {
    /// `C` in `Y^n_0 − Y_0 ≤ C/n`, from the two largest levels.
    pub fn rate_constant(&self) -> Option<f64> {
        let k = self.levels.len();
        if k < 2 {
            return None;
        }
        let y0 = self.reflected.y0();
        Some(
            self.levels[k - 2..]
                .iter()
                .zip(&self.solutions[k - 2..])
                .map(|(n, s)| n * (s.y0() - y0))
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Convergence table CSV.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "n,sup_gap_to_reflected,sup_gap_to_next_level,mc_stderr"
        )?;
        for r in &self.table {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(r.n),
                fmt_f64(r.sup_gap_to_reflected),
                fmt_f64(r.sup_gap_to_next_level),
                fmt_f64(r.mc_stderr)
            )?;
        }
        Ok(())
    }
}

pub fn penalization_ladder(
    ens: &PathEnsemble,
    spec: &ProblemSpec,
    levels: &[f64],
    cfg: &SolverConfig,
) -> Result<Ladder> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "penalty levels must be non-empty and strictly increasing".into(),
        ));
    }
    let solutions = levels
        .iter()
        .map(|&n| solve_penalized(ens, spec, n, cfg))
        .collect::<Result<Vec<_>>>()?;
    let reflected = solve_reflected(ens, spec, cfg)?;
    let table = levels
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let s = &solutions[i];
            let (gap_next, inc_next) = match solutions.get(i + 1) {
                Some(nx) => (s.sup_gap(nx), nx.max_excess_over(s)),
                None => (f64::NAN, f64::NAN),
            };
            LadderRow {
                n,
                y0: s.y0(),
                sup_gap_to_reflected: s.sup_gap(&reflected),
                sup_gap_to_next_level: gap_next,
                max_increase_to_next_level: inc_next,
                mc_stderr: s.y0_stderr,
            }
        })
        .collect();
    Ok(Ladder {
        levels: levels.to_vec(),
        solutions,
        reflected,
        table,
    })
}

/// Ensemble mean of `Σ_k (h(s_k, X_k) − Y_k)·ΔA_k`.
pub fn skorokhod_residual(
    sol: &BackwardSolution,
    ens: &PathEnsemble,
    spec: &ProblemSpec,
) -> Result<f64> {
    if sol.mode != Mode::Reflected {
        return Err(Error::Precondition(
            "Skorokhod residual needs a reflected solution".into(),
        ));
    }
    let total: f64 = (0..sol.n_paths)
        .map(|p| {
            (0..sol.grid.steps())
                .map(|k| {
                    (spec.obstacle(sol.grid.node(k), ens.state(p, k)) - sol.y(p, k))
                        * sol.delta_a(p, k)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / sol.n_paths as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub tol: f64,
    /// Fraction of `(path, step)` with `Y¹ > Y² + tol`.
    pub violation_fraction: f64,
    pub max_excess: f64,
    /// `min_{p,k} (Y² − Y¹)`.
    pub min_gap: f64,
    /// `max_{p,k} (Y² − Y¹)`.
    pub max_gap: f64,
    pub y0_gap: f64,
}

impl ComparisonReport {
    pub fn strict_somewhere(&self) -> bool {
        self.max_gap > self.tol
    }
}

/// Probe `f₁ ≤ f₂`, `Φ₁ ≤ Φ₂`, `h₁ ≤ h₂` and equal dynamics at ensemble states.
fn check_ordering(ens: &PathEnsemble, s1: &ProblemSpec, s2: &ProblemSpec, seed: u64) -> Result<()> {
    if s1.dim_x() != s2.dim_x()
        || s1.dim_w() != s2.dim_w()
        || s1.controls() != s2.controls()
        || s1.levy() != s2.levy()
    {
        return Err(Error::Precondition(
            "compared problems must share dimensions, controls and jumps".into(),
        ));
    }
    let grid = ens.grid();
    let mut rng = stream(seed, Channel::Probe, 0, 0);
    let probes = 64.min(ens.n_paths());
    for i in 0..probes {
        let p = i * ens.n_paths() / probes;
        for k in [0, grid.steps() / 2, grid.steps()] {
            let t = grid.node(k);
            let x = ens.state(p, k);
            let fail =
                |what: &str| Err(Error::Precondition(format!("{what} at path {p}, step {k}")));
            if s1.obstacle(t, x) > s2.obstacle(t, x) {
                return fail("h1 > h2");
            }
            if k == grid.steps() && s1.terminal(x) > s2.terminal(x) {
                return fail("terminal1 > terminal2");
            }
            for u in s1.controls() {
                if s1.drift(t, x, u) != s2.drift(t, x, u)
                    || s1.diffusion(t, x, u) != s2.diffusion(t, x, u)
                {
                    return fail("dynamics differ");
                }
                for atom in s1.levy().atoms() {
                    if s1.jump(t, x, u, &atom.mark) != s2.jump(t, x, u, &atom.mark) {
                        return fail("jump coefficients differ");
                    }
                }
                let yv: f64 = rng.random_range(-5.0..5.0);
                let vv: f64 = rng.random_range(-5.0..5.0);
                let zv: Vec<f64> = (0..s1.dim_w())
                    .map(|_| rng.random_range(-5.0..5.0))
                    .collect();
                if s1.driver(t, x, yv, &zv, vv, u) > s2.driver(t, x, yv, &zv, vv, u) {
                    return fail("f1 > f2");
                }
            }
        }
    }
    Ok(())
}

/// Solve both problems on shared noise and regression and measure how often
/// `Y¹ ≤ Y²` fails. `tol = None` uses three Monte Carlo standard errors.
pub fn comparison_check(
    ens: &PathEnsemble,
    s1: &ProblemSpec,
    s2: &ProblemSpec,
    mode: Mode,
    cfg: &SolverConfig,
    tol: Option<f64>,
) -> Result<ComparisonReport> {
    check_ordering(ens, s1, s2, ens.seed().unwrap_or(0))?;
    let y1 = solve(ens, s1, mode, cfg)?;
    let y2 = solve(ens, s2, mode, cfg)?;
    let tol = tol.unwrap_or(3.0 * y1.y0_stderr.max(y2.y0_stderr) + TOL_OBSTACLE);
    let mut violations = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    let (mut min_gap, mut max_gap) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in y1.y.iter().zip(&y2.y) {
        if a > &(b + tol) {
            violations += 1;
        }
        max_excess = max_excess.max(a - b);
        min_gap = min_gap.min(b - a);
        max_gap = max_gap.max(b - a);
    }
    Ok(ComparisonReport {
        tol,
        violation_fraction: violations as f64 / y1.y.len() as f64,
        max_excess,
        min_gap,
        max_gap,
        y0_gap: y2.y0() - y1.y0(),
    })
}
