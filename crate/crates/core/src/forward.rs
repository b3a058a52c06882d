//! Euler simulation of the controlled jump diffusion, with the full noise
//! record kept for the backward solvers.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{LevyMeasure, ProblemSpec};
use crate::report::fmt_f64;
use crate::rng::{derive_seed, stream, Channel};

/// Uniform partition `t0 = s_0 < … < s_K = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Precondition(
                "time grid needs at least one step".into(),
            ));
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::Precondition(format!(
                "invalid time interval [{t0}, {t_end}]"
            )));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    /// Node `s_k`; the last node is exactly `T`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// A state-feedback rule `(t, x) ↦ control index`.
pub trait FeedbackLaw: Send + Sync {
    fn choose(&self, t: f64, x: &[f64]) -> usize;
}

impl<F: Fn(f64, &[f64]) -> usize + Send + Sync> FeedbackLaw for F {
    fn choose(&self, t: f64, x: &[f64]) -> usize {
        self(t, x)
    }
}

/// Admissible control classes.
#[derive(Clone)]
pub enum Control {
    Constant(usize),
    Table(Vec<usize>),
    Feedback(Arc<dyn FeedbackLaw>),
}

impl std::fmt::Debug for Control {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Control::Constant(i) => write!(f, "Constant({i})"),
            Control::Table(t) => write!(f, "Table({t:?})"),
            Control::Feedback(_) => f.write_str("Feedback"),
        }
    }
}

impl Control {
    fn pick(&self, step: usize, t: f64, x: &[f64]) -> usize {
        match self {
            Control::Constant(i) => *i,
            Control::Table(t) => t[step],
            Control::Feedback(law) => law.choose(t, x),
        }
    }
}

/// Brownian increments and jump records for every path and step.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    n_paths: usize,
    steps: usize,
    dim_w: usize,
    increments: Vec<f64>,
    jump_offsets: Vec<usize>,
    jump_atoms: Vec<u32>,
}

/// Single-atom jump option of the binary tree: at each step exactly one of
/// `slots` equally likely branches carries a jump, so the per-step jump
/// probability is `1/slots` and must equal `weight·Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeJump {
    pub slots: usize,
}

impl Noise {
    /// Draw noise from the counter-based streams, one stream per path and
    /// channel consumed in step order.
    pub fn sample(
        levy: &LevyMeasure,
        dim_w: usize,
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Precondition("n_paths must be at least 1".into()));
        }
        let steps = grid.steps();
        let dt = grid.dt();
        let sqrt_dt = dt.sqrt();
        let rate = levy.total_mass() * dt;
        let poisson = if rate > 0.0 {
            Some(Poisson::new(rate).map_err(|e| Error::Precondition(e.to_string()))?)
        } else {
            None
        };
        let marks = if levy.is_empty() {
            None
        } else {
            Some(
                WeightedIndex::new(levy.atoms().iter().map(|a| a.weight))
                    .map_err(|e| Error::Precondition(e.to_string()))?,
            )
        };
        let per_path: Vec<(Vec<f64>, Vec<u32>, Vec<u32>)> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut inc = Vec::with_capacity(steps * dim_w);
                let mut counts = Vec::with_capacity(steps);
                let mut atoms = Vec::new();
                let mut brownian = stream(seed, Channel::Brownian, p as u64, 0);
                let mut jump_count = stream(seed, Channel::JumpCount, p as u64, 0);
                let mut jump_mark = stream(seed, Channel::JumpMark, p as u64, 0);
                for _ in 0..steps {
                    for _ in 0..dim_w {
                        let z: f64 = brownian.sample(StandardNormal);
                        inc.push(z * sqrt_dt);
                    }
                    let count = poisson.as_ref().map_or(0, |dist| dist.sample(&mut jump_count) as u32);
                    counts.push(count);
                    if count > 0 {
                        let dist = marks.as_ref().expect("jumps without atoms");
                        for _ in 0..count {
                            atoms.push(dist.sample(&mut jump_mark) as u32);
                        }
                    }
                }
                (inc, counts, atoms)
            })
            .collect();

        let mut increments = Vec::with_capacity(n_paths * steps * dim_w);
        let mut jump_offsets = Vec::with_capacity(n_paths * steps + 1);
        let mut jump_atoms = Vec::new();
        jump_offsets.push(0);
        for (inc, counts, atoms) in per_path {
            increments.extend(inc);
            let mut cursor = 0;
            for c in counts {
                let c = c as usize;
                jump_atoms.extend_from_slice(&atoms[cursor..cursor + c]);
                cursor += c;
                jump_offsets.push(jump_atoms.len());
            }
        }
        Ok(Self {
            n_paths,
            steps,
            dim_w,
            increments,
            jump_offsets,
            jump_atoms,
        })
    }

    /// Enumerate every leaf of the recombining-free binary tree
    /// `ΔB ∈ {+√Δ, −√Δ}` (optionally crossed with a single-atom jump slot).
    /// All paths carry equal probability.
    pub fn binary_tree(
        levy: &LevyMeasure,
        grid: &TimeGrid,
        jump: Option<TreeJump>,
    ) -> Result<Self> {
        let steps = grid.steps();
        let sqrt_dt = grid.dt().sqrt();
        let branches = match jump {
            None => 2,
            Some(j) => {
                if levy.len() != 1 {
                    return Err(Error::Precondition(
                        "tree jumps need exactly one atom".into(),
                    ));
                }
                let p = levy.total_mass() * grid.dt();
                if j.slots < 2 || (p * j.slots as f64 - 1.0).abs() > 1e-12 {
                    return Err(Error::Precondition(format!(
                        "jump probability {p} must equal 1/slots with slots = {}",
                        j.slots
                    )));
                }
                2 * j.slots
            }
        };
        let n_paths = branches
            .checked_pow(steps as u32)
            .filter(|&n| n <= 1 << 22)
            .ok_or_else(|| Error::Precondition("tree too large to enumerate".into()))?;
        if !levy.is_empty() && jump.is_none() {
            return Err(Error::Precondition(
                "tree without jump slots requires an empty Lévy measure".into(),
            ));
        }
        let mut increments = Vec::with_capacity(n_paths * steps);
        let mut jump_offsets = Vec::with_capacity(n_paths * steps + 1);
        let mut jump_atoms = Vec::new();
        jump_offsets.push(0);
        for p in 0..n_paths {
            let mut code = p;
            for _ in 0..steps {
                let branch = code % branches;
                code /= branches;
                increments.push(if branch % 2 == 0 { sqrt_dt } else { -sqrt_dt });
                if jump.is_some() && branch / 2 == 0 {
                    jump_atoms.push(0);
                }
                jump_offsets.push(jump_atoms.len());
            }
        }
        Ok(Self {
            n_paths,
            steps,
            dim_w: 1,
            increments,
            jump_offsets,
            jump_atoms,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    /// `ΔB_k` on path `p`.
    pub fn increment(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * self.steps + k) * self.dim_w;
        &self.increments[i..i + self.dim_w]
    }

    /// Atom indices of the jumps in `(s_k, s_{k+1}]` on path `p`.
    pub fn jumps(&self, p: usize, k: usize) -> &[u32] {
        let i = p * self.steps + k;
        &self.jump_atoms[self.jump_offsets[i]..self.jump_offsets[i + 1]]
    }

    /// Total number of jumps on path `p`.
    pub fn jump_count(&self, p: usize) -> usize {
        self.jump_offsets[(p + 1) * self.steps] - self.jump_offsets[p * self.steps]
    }
}

/// Simulated controlled trajectories with their noise.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dim_x: usize,
    x0: Vec<f64>,
    states: Vec<f64>,
    controls: Vec<u32>,
    noise: Noise,
    seed: Option<u64>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.noise.n_paths
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    /// `X_k` on path `p`.
    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * (self.grid.steps() + 1) + k) * self.dim_x;
        &self.states[i..i + self.dim_x]
    }

    /// Control index used on `(s_k, s_{k+1}]`.
    pub fn control(&self, p: usize, k: usize) -> usize {
        self.controls[p * self.grid.steps() + k] as usize
    }

    /// Write `path, step, time, x…, control` rows; the terminal node repeats
    /// the last control.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        write!(out, "path,step,time")?;
        for i in 0..self.dim_x {
            write!(out, ",x{i}")?;
        }
        writeln!(out, ",control")?;
        let steps = self.grid.steps();
        for p in 0..self.n_paths() {
            for k in 0..=steps {
                write!(out, "{p},{k},{}", fmt_f64(self.grid.node(k)))?;
                for v in self.state(p, k) {
                    write!(out, ",{}", fmt_f64(*v))?;
                }
                writeln!(out, ",{}", self.control(p, k.min(steps - 1)))?;
            }
        }
        Ok(())
    }
}

/// Where the noise of a solve comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Sampling {
    MonteCarlo {
        paths: usize,
        seed: u64,
    },
    /// Full binary tree, optionally with single-atom jump slots.
    Tree {
        jump_slots: Option<usize>,
    },
}

impl Sampling {
    pub fn noise(&self, levy: &LevyMeasure, dim_w: usize, grid: &TimeGrid) -> Result<Noise> {
        match *self {
            Sampling::MonteCarlo { paths, seed } => Noise::sample(levy, dim_w, grid, paths, seed),
            Sampling::Tree { jump_slots } => {
                if dim_w != 1 {
                    return Err(Error::Precondition(
                        "tree sampling needs a scalar Brownian motion".into(),
                    ));
                }
                Noise::binary_tree(levy, grid, jump_slots.map(|slots| TreeJump { slots }))
            }
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Sampling::MonteCarlo { seed, .. } => Some(seed),
            Sampling::Tree { .. } => None,
        }
    }

    /// Same sampler with the seed replaced by `derive_seed(seed, label)`.
    pub fn derived(&self, label: u64) -> Self {
        match *self {
            Sampling::MonteCarlo { paths, seed } => Sampling::MonteCarlo {
                paths,
                seed: derive_seed(seed, label),
            },
            tree => tree,
        }
    }

    /// Draw noise and run the Euler scheme.
    pub fn ensemble(
        &self,
        spec: &ProblemSpec,
        grid: &TimeGrid,
        x0: &[f64],
        control: &Control,
    ) -> Result<PathEnsemble> {
        let noise = self.noise(spec.levy(), spec.dim_w(), grid)?;
        let mut ens = propagate(spec, grid, x0, control, noise)?;
        ens.seed = self.seed();
        Ok(ens)
    }
}

/// Sample noise and run the Euler scheme.
pub fn simulate(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x0: &[f64],
    control: &Control,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let noise = Noise::sample(spec.levy(), spec.dim_w(), grid, n_paths, seed)?;
    let mut ens = propagate(spec, grid, x0, control, noise)?;
    ens.seed = Some(seed);
    Ok(ens)
}

/// Run the Euler scheme on a given noise record.
///
/// `X_{k+1} = X_k + bΔ + σΔB + Σ γ(s_k, X_k, u_k, e) − Δ ∫ γ(s_k, X_k, u_k, e) ν(de)`,
/// every jump in a step evaluated at the left endpoint.
pub fn propagate(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x0: &[f64],
    control: &Control,
    noise: Noise,
) -> Result<PathEnsemble> {
    let n = spec.dim_x();
    let d = spec.dim_w();
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition(
            "initial state must be finite with dimension dim_x".into(),
        ));
    }
    if noise.dim_w != d || noise.steps != grid.steps() {
        return Err(Error::Precondition(
            "noise does not match grid/dimensions".into(),
        ));
    }
    if let Control::Table(t) = control {
        if t.len() != grid.steps() {
            return Err(Error::Precondition(
                "control table length must equal the step count".into(),
            ));
        }
    }
    let n_controls = spec.controls().len();
    let steps = grid.steps();
    let dt = grid.dt();
    let atoms = spec.levy().atoms();

    let per_path: Vec<Result<(Vec<f64>, Vec<u32>)>> = (0..noise.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut states = Vec::with_capacity((steps + 1) * n);
            let mut used = Vec::with_capacity(steps);
            states.extend_from_slice(x0);
            let mut x = x0.to_vec();
            let mut b = vec![0.0; n];
            let mut sigma = vec![0.0; n * d];
            let mut g = vec![0.0; n];
            let mut comp = vec![0.0; n];
            for k in 0..steps {
                let t = grid.node(k);
                let ui = control.pick(k, t, &x);
                if ui >= n_controls {
                    return Err(Error::Precondition(format!(
                        "control index {ui} out of range"
                    )));
                }
                let u = spec.control(ui);
                used.push(ui as u32);
                spec.coefficients().drift(t, &x, u, &mut b);
                spec.coefficients().diffusion(t, &x, u, &mut sigma);
                spec.compensator(t, &x, u, &mut comp);
                let db = noise.increment(p, k);
                let mut next: Vec<f64> = (0..n)
                    .map(|i| {
                        let diffusion: f64 = (0..d).map(|j| sigma[i * d + j] * db[j]).sum();
                        x[i] + b[i] * dt + diffusion - dt * comp[i]
                    })
                    .collect();
                for &a in noise.jumps(p, k) {
                    spec.coefficients()
                        .jump(t, &x, u, &atoms[a as usize].mark, &mut g);
                    for (xi, gi) in next.iter_mut().zip(&g) {
                        *xi += gi;
                    }
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp {
                        path: p,
                        step: k + 1,
                    });
                }
                states.extend_from_slice(&next);
                x = next;
            }
            Ok((states, used))
        })
        .collect();

    let mut states = Vec::with_capacity(noise.n_paths * (steps + 1) * n);
    let mut controls = Vec::with_capacity(noise.n_paths * steps);
    for r in per_path {
        let (s, u) = r?;
        states.extend(s);
        controls.extend(u);
    }
    Ok(PathEnsemble {
        grid: *grid,
        dim_x: n,
        x0: x0.to_vec(),
        states,
        controls,
        noise,
        seed: None,
    })
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.into_iter().collect();
    let m = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Empirical counterparts of the standard SDE estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// `E[sup_k |X_k|²]`.
    pub sup_second_moment: f64,
    /// `max_k E|X_k − x0|² / ((s_k − t0)(1 + |x0|²))`.
    pub increment_ratio: f64,
    /// `E[sup_k |X_k − X'_k|²] / |x0 − x0'|²` for a paired ensemble.
    pub stability_ratio: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn moment_checks(ens: &PathEnsemble, paired: Option<&PathEnsemble>) -> Result<MomentReport> {
    let m = ens.n_paths();
    if m == 0 {
        return Err(Error::Precondition("empty ensemble".into()));
    }
    let steps = ens.grid.steps();
    let x0 = ens.x0();
    let norm0 = 1.0 + x0.iter().map(|v| v * v).sum::<f64>();
    let sup_second_moment = (0..m)
        .map(|p| {
            (0..=steps)
                .map(|k| ens.state(p, k).iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / m as f64;
    let increment_ratio = (1..=steps)
        .map(|k| {
            let e = (0..m).map(|p| sq_dist(ens.state(p, k), x0)).sum::<f64>() / m as f64;
            e / ((ens.grid.node(k) - ens.grid.t0()) * norm0)
        })
        .fold(0.0, f64::max);
    let stability_ratio = match paired {
        None => None,
        Some(other) => {
            if other.n_paths() != m || other.grid != ens.grid {
                return Err(Error::Precondition(
                    "paired ensemble must share grid and path count".into(),
                ));
            }
            let d0 = sq_dist(x0, other.x0());
            if d0 == 0.0 {
                return Err(Error::Precondition(
                    "paired ensemble must start elsewhere".into(),
                ));
            }
            let e = (0..m)
                .map(|p| {
                    (0..=steps)
                        .map(|k| sq_dist(ens.state(p, k), other.state(p, k)))
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / m as f64;
            Some(e / d0)
        }
    };
    Ok(MomentReport {
        sup_second_moment,
        increment_ratio,
        stability_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Family, FnCoefficients, JumpWeight, Lq1dParams, ZeroParams};

    fn zero_spec() -> ProblemSpec {
        ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Zero(ZeroParams::default()))
            .build()
            .unwrap()
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let ens = simulate(&zero_spec(), &grid, &[0.7], &Control::Constant(0), 50, 1).unwrap();
        for p in 0..50 {
            for k in 0..=10 {
                assert_eq!(ens.state(p, k), &[0.7]);
            }
        }
        let report = moment_checks(&ens, None).unwrap();
        assert_eq!(report.increment_ratio, 0.0);
    }

    #[test]
    fn unit_drift_reaches_one() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(Lq1dParams {
                b0: 1.0,
                ..Default::default()
            }))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let ens = simulate(&spec, &grid, &[0.0], &Control::Constant(0), 3, 5).unwrap();
        for p in 0..3 {
            assert_eq!(ens.state(p, 8)[0], 1.0);
        }
    }

    #[test]
    fn brownian_moments() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(Lq1dParams {
                sigma0: 1.0,
                ..Default::default()
            }))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let m = 20_000;
        let ens = simulate(&spec, &grid, &[0.0], &Control::Constant(0), m, 42).unwrap();
        let finals: Vec<f64> = (0..m).map(|p| ens.state(p, 20)[0]).collect();
        let (mean, se) = mean_stderr(finals.iter().copied());
        assert!(mean.abs() <= 4.0 * se, "mean {mean} se {se}");
        // Var(X_T) = 1; the sample variance has stderr ≈ sqrt(2/m).
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m as f64 - 1.0);
        let se_var = (2.0 / m as f64).sqrt();
        assert!((var - 1.0).abs() <= 5.0 * se_var, "var {var}");
    }

    #[test]
    fn compensated_pure_jump_is_martingale() {
        let levy = LevyMeasure::scalar(&[1.0], &[1.0]).unwrap();
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().jump(|_, _, _, _, out| out[0] = 1.0))
            .levy(levy.clone())
            .jump_weight(JumpWeight::zero(&levy))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let m = 20_000;
        let ens = simulate(&spec, &grid, &[2.0], &Control::Constant(0), m, 9).unwrap();
        for k in 1..=10 {
            let (mean, se) = mean_stderr((0..m).map(|p| ens.state(p, k)[0] - 2.0));
            assert!(mean.abs() <= 4.0 * se, "k={k} mean {mean} se {se}");
        }
    }

    #[test]
    fn reproducible_and_coupled() {
        let levy = LevyMeasure::scalar(&[0.5, -0.3], &[1.0, 2.0]).unwrap();
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(Lq1dParams {
                a: -0.4,
                sigma0: 0.3,
                jump_x: 0.5,
                ..Default::default()
            }))
            .levy(levy.clone())
            .jump_weight(JumpWeight::zero(&levy))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let a = simulate(&spec, &grid, &[1.0], &Control::Constant(0), 200, 3).unwrap();
        let b = simulate(&spec, &grid, &[1.0], &Control::Constant(0), 200, 3).unwrap();
        assert_eq!(a.states, b.states);
        let c = simulate(&spec, &grid, &[1.1], &Control::Constant(0), 200, 3).unwrap();
        assert_eq!(a.noise, c.noise);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial =
            pool.install(|| simulate(&spec, &grid, &[1.0], &Control::Constant(0), 200, 3).unwrap());
        assert_eq!(a.states, serial.states);
    }

    #[test]
    fn lq1d_stability_ratio_within_gronwall() {
        let a = -0.4;
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .family(Family::Lq1d(Lq1dParams {
                a,
                sigma0: 0.3,
                ..Default::default()
            }))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let e1 = simulate(&spec, &grid, &[1.0], &Control::Constant(0), 500, 3).unwrap();
        let e2 = simulate(&spec, &grid, &[1.1], &Control::Constant(0), 500, 3).unwrap();
        let report = moment_checks(&e1, Some(&e2)).unwrap();
        // L_b = |a|, L_σ = 0: bound e^{2 L_b T} with 10% margin.
        let bound = (2.0 * a.abs()).exp() * 1.1;
        let ratio = report.stability_ratio.unwrap();
        assert!(ratio <= bound && ratio.is_finite(), "{ratio} > {bound}");
    }

    #[test]
    fn tree_enumerates_equiprobable_leaves() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let noise = Noise::binary_tree(&LevyMeasure::empty(), &grid, None).unwrap();
        assert_eq!(noise.n_paths(), 4);
        let levy = LevyMeasure::scalar(&[1.0], &[0.5]).unwrap();
        let noise = Noise::binary_tree(&levy, &grid, Some(TreeJump { slots: 4 })).unwrap();
        assert_eq!(noise.n_paths(), 64);
        let jumps: usize = (0..64).map(|p| noise.jump_count(p)).sum();
        // Each step jumps on 1/4 of the branches.
        assert_eq!(jumps, 2 * 64 / 4);
        assert!(Noise::binary_tree(&levy, &grid, Some(TreeJump { slots: 3 })).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().drift(|_, x, _, out| out[0] = 1e300 * x[0] * x[0]))
            .build()
            .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let err = simulate(&spec, &grid, &[1e10], &Control::Constant(0), 2, 0).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let ens = simulate(&zero_spec(), &grid, &[0.0], &Control::Constant(0), 2, 1).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path,step,time,x0,control\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}
