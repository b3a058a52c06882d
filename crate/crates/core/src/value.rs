//! Probabilistic value estimates, dynamic-programming residuals and
//! regularity probes.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{propagate, Control, FeedbackLaw, Sampling, TimeGrid};
use crate::pde::ValueSurface;
use crate::problem::{Coefficients, ProblemSpec};
use crate::rbsde::{solve_reflected, SolverConfig};
use crate::rng::{stream, Channel};

/// Monte Carlo (or tree) settings for a reflected solve from `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    /// Steps over the remaining horizon `[t, T]`.
    pub steps: usize,
    pub sampling: Sampling,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlValue {
    pub label: String,
    pub y0: f64,
    pub stderr: f64,
}

/// Upper estimate of `W(t, x)`: the best value over the implemented
/// control classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub stderr: f64,
    pub best: String,
    pub candidates: Vec<ControlValue>,
}

fn control_label(control: &Control) -> String {
    match control {
        Control::Constant(i) => format!("constant-{i}"),
        Control::Table(_) => "table".into(),
        Control::Feedback(_) => "feedback".into(),
    }
}

/// `J(t, x; control)` as `Y_0` of the reflected BSDE along the ensemble.
pub fn policy_value(spec: &ProblemSpec, t: f64, x: &[f64], mc: &McConfig, control: &Control) -> Result<ControlValue> {
    let grid = TimeGrid::new(t, spec.horizon(), mc.steps)?;
    let ens = mc.sampling.ensemble(spec, &grid, x, control)?;
    let sol = solve_reflected(&ens, spec, &mc.solver)?;
    Ok(ControlValue { label: control_label(control), y0: sol.y0(), stderr: sol.y0_stderr })
}

/// Minimum over every constant control and, when given, a feedback law.
/// All candidates share one noise record.
pub fn value_mc(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    mc: &McConfig,
    feedback: Option<Arc<dyn FeedbackLaw>>,
) -> Result<ValueEstimate> {
    let grid = TimeGrid::new(t, spec.horizon(), mc.steps)?;
    let noise = mc.sampling.noise(spec.levy(), spec.dim_w(), &grid)?;
    let mut controls: Vec<Control> = (0..spec.controls().len()).map(Control::Constant).collect();
    if let Some(law) = feedback {
        controls.push(Control::Feedback(law));
    }
    let mut candidates = Vec::with_capacity(controls.len());
    for control in &controls {
        let ens = propagate(spec, &grid, x, control, noise.clone())?;
        let sol = solve_reflected(&ens, spec, &mc.solver)?;
        candidates.push(ControlValue { label: control_label(control), y0: sol.y0(), stderr: sol.y0_stderr });
    }
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.y0.total_cmp(&b.1.y0).then(a.0.cmp(&b.0)))
        .map(|(_, c)| c.clone())
        .expect("at least one control");
    Ok(ValueEstimate { value: best.y0, stderr: best.stderr, best: best.label, candidates })
}

type TerminalFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Same coefficients with the terminal condition replaced.
struct WithTerminal {
    inner: Arc<dyn Coefficients>,
    terminal: TerminalFn,
}

impl std::fmt::Debug for WithTerminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WithTerminal").field("inner", &self.inner).finish()
    }
}

impl Coefficients for WithTerminal {
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.drift(t, x, u, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.diffusion(t, x, u, out)
    }
    fn jump(&self, t: f64, x: &[f64], u: &[f64], mark: &[f64], out: &mut [f64]) {
        self.inner.jump(t, x, u, mark, out)
    }
    fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64 {
        self.inner.driver(t, x, y, z, v, u)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }
    fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        self.inner.obstacle(t, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub delta_t: f64,
    pub surface_value: f64,
    /// `min_u G_{t,t+δ}[W(t+δ, X_{t+δ})]`.
    pub semigroup: f64,
    pub stderr: f64,
    pub residual: f64,
    pub per_control: Vec<ControlValue>,
}

/// `|W(t,x) − min_u G_{t,t+δ}[W(t+δ, X_{t+δ})]|` with `G` a reflected solve
/// on `[t, t+δ]` per constant control. When `t + δ = T` the exact terminal
/// condition is used.
pub fn dpp_residual(
    spec: &ProblemSpec,
    surface: &ValueSurface,
    t: f64,
    x: &[f64],
    delta_t: f64,
    mc: &McConfig,
) -> Result<DppReport> {
    let horizon = spec.horizon();
    if !(delta_t > 0.0 && t + delta_t <= horizon + 1e-12) {
        return Err(Error::Precondition(format!("need 0 < δ and t + δ ≤ T, got t = {t}, δ = {delta_t}")));
    }
    let end = t + delta_t;
    let full = (end - horizon).abs() <= 1e-12;
    let steps = ((mc.steps as f64) * delta_t / (horizon - t)).round().max(1.0) as usize;
    let grid = TimeGrid::new(t, if full { horizon } else { end }, steps)?;
    let short = if full {
        spec.clone()
    } else {
        let eta = surface.clone();
        spec.with_coefficients(Arc::new(WithTerminal {
            inner: spec.shared_coefficients(),
            terminal: Box::new(move |y| eta.interpolate(end, y)),
        }))
    };
    let noise = mc.sampling.noise(spec.levy(), spec.dim_w(), &grid)?;
    let mut per_control = Vec::with_capacity(spec.controls().len());
    for i in 0..spec.controls().len() {
        let control = Control::Constant(i);
        let ens = propagate(&short, &grid, x, &control, noise.clone())?;
        let sol = solve_reflected(&ens, &short, &mc.solver)?;
        per_control.push(ControlValue { label: control_label(&control), y0: sol.y0(), stderr: sol.y0_stderr });
    }
    let best = per_control
        .iter()
        .min_by(|a, b| a.y0.total_cmp(&b.y0))
        .cloned()
        .expect("at least one control");
    let surface_value = surface.interpolate(t, x);
    Ok(DppReport {
        t,
        x: x.to_vec(),
        delta_t,
        surface_value,
        semigroup: best.y0,
        stderr: best.stderr,
        residual: (surface_value - best.y0).abs(),
        per_control,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityConfig {
    /// Probes stay in `t ≤ T − delta_margin·T`.
    pub delta_margin: f64,
    pub triples: usize,
    pub seed: u64,
    /// Separation bands `[lo, hi)` for `√(|Δt|² + |Δx|²)`.
    pub bands: Vec<(f64, f64)>,
    /// Spatial probe window; `None` uses the surface box.
    pub window: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            delta_margin: 0.1,
            triples: 2000,
            seed: 0,
            bands: vec![(0.05, 0.1), (0.1, 0.2), (0.2, 0.4)],
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReport {
    pub band: (f64, f64),
    pub triples: usize,
    pub max_semiconcavity_excess: f64,
    pub max_joint_lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub lipschitz_x: f64,
    pub joint_lipschitz: f64,
    pub semiconcavity: f64,
    pub probes: usize,
    pub skipped: usize,
    pub seed: u64,
    pub bands: Vec<BandReport>,
}

/// Probe a surface on `[t0, T − margin] × window`.
pub fn regularity_probe(surface: &ValueSurface, cfg: &RegularityConfig) -> Result<RegularityReport> {
    let time = surface.time();
    let (lo, hi) = match &cfg.window {
        Some(w) => w.clone(),
        None => (surface.space().lo().to_vec(), surface.space().hi().to_vec()),
    };
    let t_hi = time.t_end() - cfg.delta_margin * (time.t_end() - time.t0());
    regularity_probe_fn(|t, x| surface.interpolate(t, x), (time.t0(), t_hi), (&lo, &hi), cfg)
}

/// Probe any `W(t, x)`: for each triple, the normalized semiconcavity excess
/// `[λW₁ + (1−λ)W₀ − W_λ] / [λ(1−λ)(|Δt|² + |Δx|²)]`, the joint Lipschitz
/// ratio `|W₁ − W₀| / (|Δt| + |Δx|)` and the same-time spatial ratio.
pub fn regularity_probe_fn(
    w: impl Fn(f64, &[f64]) -> f64,
    t_range: (f64, f64),
    window: (&[f64], &[f64]),
    cfg: &RegularityConfig,
) -> Result<RegularityReport> {
    let (lo, hi) = window;
    let n = lo.len();
    if hi.len() != n || t_range.1 < t_range.0 || cfg.bands.is_empty() {
        return Err(Error::Precondition("malformed regularity probe window".into()));
    }
    let mut bands: Vec<BandReport> = cfg
        .bands
        .iter()
        .map(|&band| BandReport {
            band,
            triples: 0,
            max_semiconcavity_excess: f64::NEG_INFINITY,
            max_joint_lipschitz: 0.0,
        })
        .collect();
    let (mut lip_x, mut joint, mut semi) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut skipped = 0;
    for i in 0..cfg.triples {
        let mut rng = stream(cfg.seed, Channel::Probe, i as u64, 2);
        let b = i % bands.len();
        let (r_lo, r_hi) = bands[b].band;
        let r = rng.random_range(r_lo..r_hi);
        // Direction in (t, x); time component first.
        let mut dir: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if t_range.1 == t_range.0 {
            dir[0] = 0.0;
        }
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let lambda: f64 = rng.random_range(0.05..0.95);
        if norm < 1e-12 {
            skipped += 1;
            continue;
        }
        let step: Vec<f64> = dir.iter().map(|d| d * r / norm).collect();
        let t0 = rng.random_range(t_range.0..=t_range.1);
        let x0: Vec<f64> = (0..n).map(|j| rng.random_range(lo[j]..=hi[j])).collect();
        let t1 = t0 + step[0];
        let x1: Vec<f64> = (0..n).map(|j| x0[j] + step[j + 1]).collect();
        if t1 < t_range.0 || t1 > t_range.1 || (0..n).any(|j| x1[j] < lo[j] || x1[j] > hi[j]) {
            skipped += 1;
            continue;
        }
        let dt = (t1 - t0).abs();
        let dx = (0..n).map(|j| (x1[j] - x0[j]).powi(2)).sum::<f64>().sqrt();
        let denom = lambda * (1.0 - lambda) * (dt * dt + dx * dx);
        if denom <= 0.0 || dt + dx == 0.0 {
            skipped += 1;
            continue;
        }
        let tl = lambda * t1 + (1.0 - lambda) * t0;
        let xl: Vec<f64> = (0..n).map(|j| lambda * x1[j] + (1.0 - lambda) * x0[j]).collect();
        let (w0, w1, wl) = (w(t0, &x0), w(t1, &x1), w(tl, &xl));
        let xs: Vec<f64> = x1.clone();
        let ws = w(t0, &xs);
        if ![w0, w1, wl, ws].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("surface value at probe {i}")));
        }
        let excess = (lambda * w1 + (1.0 - lambda) * w0 - wl) / denom;
        let ratio = (w1 - w0).abs() / (dt + dx);
        semi = semi.max(excess);
        joint = joint.max(ratio);
        if dx > 0.0 {
            lip_x = lip_x.max((ws - w0).abs() / dx);
        }
        let band = &mut bands[b];
        band.triples += 1;
        band.max_semiconcavity_excess = band.max_semiconcavity_excess.max(excess);
        band.max_joint_lipschitz = band.max_joint_lipschitz.max(ratio);
    }
    Ok(RegularityReport {
        lipschitz_x: lip_x,
        joint_lipschitz: joint,
        semiconcavity: semi,
        probes: cfg.triples - skipped,
        skipped,
        seed: cfg.seed,
        bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::FnCoefficients;
    use crate::regression::RegressionBasis;
    use crate::tree;

    fn cfg() -> RegularityConfig {
        RegularityConfig { triples: 600, seed: 3, ..RegularityConfig::default() }
    }

    #[test]
    fn affine_surfaces_have_no_excess() {
        let r = regularity_probe_fn(|t, x| 2.0 * t - x[0] + 1.0, (0.0, 0.9), (&[-1.0], &[1.0]), &cfg()).unwrap();
        assert!(r.semiconcavity <= 1e-9);
        assert!((r.joint_lipschitz - 2.0).abs() < 0.1 && r.joint_lipschitz <= 2.0 + 1e-9);
        assert!((r.lipschitz_x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_excess_matches_identity() {
        // λx₁² + (1−λ)x₀² − x_λ² = λ(1−λ)(x₁−x₀)², so the normalized excess is
        // |Δx|²/(|Δt|² + |Δx|²) ≤ 1, with equality at equal times.
        let r = regularity_probe_fn(|_, x| x[0] * x[0], (0.5, 0.5), (&[-1.0], &[1.0]), &cfg()).unwrap();
        assert!((r.semiconcavity - 1.0).abs() < 1e-9);
        let r = regularity_probe_fn(|_, x| x[0] * x[0], (0.0, 0.9), (&[-1.0], &[1.0]), &cfg()).unwrap();
        assert!(r.semiconcavity <= 1.0 + 1e-9 && r.semiconcavity > 0.9);
    }

    #[test]
    fn kink_excess_grows_as_separation_shrinks() {
        let mut c = cfg();
        c.bands = vec![(0.4, 0.8), (0.1, 0.2), (0.025, 0.05)];
        c.triples = 3000;
        let r = regularity_probe_fn(|_, x| x[0].abs(), (0.0, 0.0), (&[-1.0], &[1.0]), &c).unwrap();
        let e: Vec<f64> = r.bands.iter().map(|b| b.max_semiconcavity_excess).collect();
        assert!(e[1] > 2.0 * e[0] && e[2] > 2.0 * e[1], "{e:?}");
    }

    #[test]
    fn probes_are_deterministic() {
        let f = |t: f64, x: &[f64]| (t + x[0]).sin();
        let a = regularity_probe_fn(f, (0.0, 0.9), (&[-1.0], &[1.0]), &cfg()).unwrap();
        let b = regularity_probe_fn(f, (0.0, 0.9), (&[-1.0], &[1.0]), &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_control_value_equals_its_cost() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(
                FnCoefficients::new()
                    .diffusion(|_, _, _, s| s[0] = 0.3)
                    .driver(|_, x, _, _, _, _| x[0].cos())
                    .terminal(|x| x[0]),
            )
            .build()
            .unwrap();
        let mc = McConfig {
            steps: 10,
            sampling: Sampling::MonteCarlo { paths: 2000, seed: 9 },
            solver: SolverConfig::default(),
        };
        let v = value_mc(&spec, 0.0, &[0.2], &mc, None).unwrap();
        let j = policy_value(&spec, 0.0, &[0.2], &mc, &Control::Constant(0)).unwrap();
        assert_eq!(v.value, j.y0);
        let full = dpp_residual(&spec, &flat_surface(&spec), 0.0, &[0.2], 1.0, &mc).unwrap();
        assert_eq!(full.semigroup, v.value);
    }

    fn flat_surface(spec: &ProblemSpec) -> ValueSurface {
        let time = TimeGrid::new(0.0, spec.horizon(), 2).unwrap();
        ValueSurface::from_fn(time, crate::pde::SpaceGrid::uniform_1d(-1.0, 1.0, 3).unwrap(), |_, _| 0.0).unwrap()
    }

    #[test]
    fn tree_dpp_is_exact() {
        let inst = tree::instance("plain").unwrap();
        let mode = crate::rbsde::Mode::Reflected;
        let a = 0.5f64.sqrt();
        let space = crate::pde::SpaceGrid::uniform_1d(-a, a, 3).unwrap();
        let at = |k: usize, x: f64| inst.enumerate_from(k, &[x], mode, &|_, _| 0).unwrap();
        let surface = ValueSurface::from_fn(inst.grid, space, |t, x| {
            let k = (t / 0.5).round() as usize;
            if k == 0 && x[0] != 0.0 {
                0.0
            } else {
                at(k, x[0])
            }
        })
        .unwrap();
        let mc = McConfig {
            steps: 2,
            sampling: inst.sampling(),
            solver: SolverConfig::with_basis(RegressionBasis::exact()),
        };
        let r = dpp_residual(&inst.spec, &surface, 0.0, &[0.0], 0.5, &mc).unwrap();
        assert!(r.residual < 1e-12, "{}", r.residual);
    }
}
