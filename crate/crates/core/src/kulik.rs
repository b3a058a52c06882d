//! Affine time stretching of `[t_i, T]` onto `[t_λ, T]` and the matching
//! change-of-measure weight for the Poisson random measure.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{mean_stderr, Control, PathEnsemble, Sampling, TimeGrid};
use crate::problem::{Coefficients, ProblemSpec};
use crate::rng::{stream, Channel};

/// Tolerance for the exact identities.
pub const IDENTITY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeChange {
    t0: f64,
    t1: f64,
    lambda: f64,
    horizon: f64,
}

impl TimeChange {
    pub fn new(t0: f64, t1: f64, lambda: f64, horizon: f64) -> Result<Self> {
        let ok = horizon.is_finite()
            && (0.0..horizon).contains(&t0)
            && (0.0..horizon).contains(&t1)
            && (0.0..=1.0).contains(&lambda);
        if !ok {
            return Err(Error::Precondition(format!(
                "need t0, t1 in [0, T) and λ in [0, 1]; got t0 = {t0}, t1 = {t1}, λ = {lambda}, T = {horizon}"
            )));
        }
        Ok(Self { t0, t1, lambda, horizon })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `t_i` for `i ∈ {0, 1}`.
    pub fn t(&self, i: usize) -> f64 {
        if i == 0 {
            self.t0
        } else {
            self.t1
        }
    }

    pub fn t_lambda(&self) -> f64 {
        (1.0 - self.lambda) * self.t0 + self.lambda * self.t1
    }

    /// `τ̇_i = (T − t_λ)/(T − t_i)`.
    pub fn tau_dot(&self, i: usize) -> f64 {
        (self.horizon - self.t_lambda()) / (self.horizon - self.t(i))
    }

    /// `τ_i(s) = t_λ + (T − t_λ)/(T − t_i)·(s − t_i)` on `[t_i, T]`.
    pub fn tau(&self, i: usize, s: f64) -> Result<f64> {
        let ti = self.t(i);
        if !(ti..=self.horizon).contains(&s) {
            return Err(Error::Precondition(format!("s = {s} outside [{ti}, {}]", self.horizon)));
        }
        if s == self.horizon {
            return Ok(self.horizon);
        }
        let tl = self.t_lambda();
        Ok(tl + (self.horizon - tl) / (self.horizon - ti) * (s - ti))
    }

    /// `ρ_i(s) = t_i + (T − t_i)/(T − t_λ)·(s − t_λ)` on `[t_λ, T]`.
    pub fn rho(&self, i: usize, s: f64) -> Result<f64> {
        let tl = self.t_lambda();
        if !(tl..=self.horizon).contains(&s) {
            return Err(Error::Precondition(format!("s = {s} outside [{tl}, {}]", self.horizon)));
        }
        if s == self.horizon {
            return Ok(self.horizon);
        }
        let ti = self.t(i);
        Ok(ti + (self.horizon - ti) / (self.horizon - tl) * (s - tl))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Stated constant, if the relation carries one.
    pub constant: Option<f64>,
    /// Smallest constant that would make every sample pass (bounds), or
    /// the largest absolute discrepancy (identities).
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub time_change: TimeChange,
    pub delta: f64,
    pub samples: usize,
    pub checks: Vec<RelationCheck>,
}

impl IdentityReport {
    pub fn check(&self, name: &str) -> Option<&RelationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn ratio(lhs: f64, scale: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        lhs / scale
    }
}

/// Check the five relations at every sample `s ∈ [t_λ, T − δ]`.
///
/// (a) `|ρ₁−ρ₀| + |1/τ̇₁−1/τ̇₀| + |1/√τ̇₁−1/√τ̇₀| ≤ C_δ|t₁−t₀|`, `C_δ` reported;
/// (b) `λ|1−1/√τ̇₁| + (1−λ)|1−1/√τ̇₀| ≤ λ(1−λ)|t₁−t₀|/(2δ)`;
/// (c) `|λ(1−1/√τ̇₁) + (1−λ)(1−1/√τ̇₀)| ≤ λ(1−λ)|t₁−t₀|²/(8δ²)`;
/// (d) `λ(1−1/τ̇₁) = −(1−λ)(1−1/τ̇₀) = λ(1−λ)(t₁−t₀)/(T−t_λ)`;
/// (e) `λρ₁(s) + (1−λ)ρ₀(s) = s`.
pub fn identity_suite(tc: &TimeChange, delta: f64, samples: &[f64]) -> Result<IdentityReport> {
    let big_t = tc.horizon;
    let tl = tc.t_lambda();
    if !(delta > 0.0 && delta < big_t) {
        return Err(Error::Precondition(format!("δ = {delta} outside (0, T)")));
    }
    if let Some(s) = samples.iter().find(|&&s| !(tl..=big_t - delta).contains(&s)) {
        return Err(Error::Precondition(format!("sample {s} outside [t_λ, T − δ]")));
    }
    let l = tc.lambda;
    let dt = tc.t1 - tc.t0;
    let inv = |i: usize| (big_t - tc.t(i)) / (big_t - tl);
    let inv_sqrt = |i: usize| inv(i).sqrt();

    let mut c_a = 0.0f64;
    let mut e_err = 0.0f64;
    for &s in samples {
        let lhs = (tc.rho(1, s)? - tc.rho(0, s)?).abs() + (inv(1) - inv(0)).abs() + (inv_sqrt(1) - inv_sqrt(0)).abs();
        c_a = c_a.max(ratio(lhs, dt.abs()));
        e_err = e_err.max((l * tc.rho(1, s)? + (1.0 - l) * tc.rho(0, s)? - s).abs());
    }
    let lhs_b = l * (1.0 - inv_sqrt(1)).abs() + (1.0 - l) * (1.0 - inv_sqrt(0)).abs();
    let obs_b = ratio(lhs_b, l * (1.0 - l) * dt.abs());
    let lhs_c = (l * (1.0 - inv_sqrt(1)) + (1.0 - l) * (1.0 - inv_sqrt(0))).abs();
    let obs_c = ratio(lhs_c, l * (1.0 - l) * dt * dt);
    let d1 = l * (1.0 - inv(1));
    let d0 = -(1.0 - l) * (1.0 - inv(0));
    let d2 = l * (1.0 - l) * dt / (big_t - tl);
    let d_err = (d1 - d2).abs().max((d0 - d2).abs());
    let (cb, cc) = (1.0 / (2.0 * delta), 1.0 / (8.0 * delta * delta));
    let slack = 1.0 + 1e-12;
    let checks = vec![
        RelationCheck { name: "a", passed: c_a.is_finite(), constant: None, observed: c_a },
        RelationCheck { name: "b", passed: obs_b <= cb * slack, constant: Some(cb), observed: obs_b },
        RelationCheck { name: "c", passed: obs_c <= cc * slack, constant: Some(cc), observed: obs_c },
        RelationCheck { name: "d", passed: d_err <= IDENTITY_TOL, constant: None, observed: d_err },
        RelationCheck { name: "e", passed: e_err <= IDENTITY_TOL, constant: None, observed: e_err },
    ];
    Ok(IdentityReport { time_change: *tc, delta, samples: samples.len(), checks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSummary {
    pub name: &'static str,
    pub configs: usize,
    pub failures: usize,
    /// Worst `observed / constant` (bounds) or worst discrepancy (identities).
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub configs: usize,
    pub seed: u64,
    pub relations: Vec<RelationSummary>,
}

impl SuiteSummary {
    pub fn relation(&self, name: &str) -> Option<&RelationSummary> {
        self.relations.iter().find(|r| r.name == name)
    }
}

/// Randomized configurations: `δ ∈ [0.05T, 0.95T]`, `t₀, t₁ ∈ [0, T − δ]`,
/// `λ ∈ [0, 1]`, samples `s` uniform on `[t_λ, T − δ]`.
pub fn randomized_suite(horizon: f64, configs: usize, samples: usize, seed: u64) -> Result<SuiteSummary> {
    let names = ["a", "b", "c", "d", "e"];
    let mut relations: Vec<RelationSummary> =
        names.iter().map(|&name| RelationSummary { name, configs, failures: 0, worst: 0.0 }).collect();
    for c in 0..configs {
        let mut rng = stream(seed, Channel::Kulik, c as u64, 0);
        let delta = horizon * rng.random_range(0.05..0.95);
        let t0 = rng.random_range(0.0..=horizon - delta);
        let t1 = rng.random_range(0.0..=horizon - delta);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let tc = TimeChange::new(t0, t1, lambda, horizon)?;
        let tl = tc.t_lambda();
        let ss: Vec<f64> = (0..samples).map(|_| rng.random_range(tl..=horizon - delta)).collect();
        let report = identity_suite(&tc, delta, &ss)?;
        for (summary, check) in relations.iter_mut().zip(&report.checks) {
            if !check.passed {
                summary.failures += 1;
            }
            let w = match check.constant {
                Some(k) => check.observed / k,
                None => check.observed,
            };
            summary.worst = summary.worst.max(w);
        }
    }
    Ok(SuiteSummary { configs, seed, relations })
}

/// `((T − t_i)/(T − t_λ))^count · exp((t_i − t_λ)·ν(E))`.
pub fn girsanov_weight(tc: &TimeChange, i: usize, count: u64, nu_mass: f64) -> Result<f64> {
    if !(nu_mass >= 0.0 && nu_mass.is_finite()) {
        return Err(Error::Precondition("ν(E) must be finite and non-negative".into()));
    }
    let ti = tc.t(i);
    let big_t = tc.horizon;
    if ti >= big_t {
        return Err(Error::Precondition("t_i must be below T".into()));
    }
    let tl = tc.t_lambda();
    let log = count as f64 * ((big_t - ti) / (big_t - tl)).ln() + (ti - tl) * nu_mass;
    Ok(log.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovCheck {
    pub draws: usize,
    pub mean_weight: f64,
    pub weight_stderr: f64,
    /// `E[g·N]`, expected `(T − t_i)·ν(E)`.
    pub reweighted_count: f64,
    pub reweighted_count_stderr: f64,
    pub expected_count: f64,
}

/// Draw `N ~ Poisson((T − t_λ)·ν(E))` and average the weight and the
/// reweighted count.
pub fn girsanov_check(tc: &TimeChange, i: usize, nu_mass: f64, draws: usize, seed: u64) -> Result<GirsanovCheck> {
    let mu = (tc.horizon - tc.t_lambda()) * nu_mass;
    const CHUNK: usize = 4096;
    let mut weights = Vec::with_capacity(draws);
    let mut counts = Vec::with_capacity(draws);
    let dist = if mu > 0.0 {
        Some(Poisson::new(mu).map_err(|e| Error::Precondition(format!("Poisson mean {mu}: {e}")))?)
    } else {
        None
    };
    for chunk in 0..draws.div_ceil(CHUNK) {
        let mut rng = stream(seed, Channel::Kulik, chunk as u64, 1);
        for _ in (chunk * CHUNK)..((chunk + 1) * CHUNK).min(draws) {
            let n = dist.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
            let g = girsanov_weight(tc, i, n, nu_mass)?;
            weights.push(g);
            counts.push(g * n as f64);
        }
    }
    let (mean_weight, weight_stderr) = mean_stderr(weights);
    let (reweighted_count, reweighted_count_stderr) = mean_stderr(counts);
    Ok(GirsanovCheck {
        draws,
        mean_weight,
        weight_stderr,
        reweighted_count,
        reweighted_count_stderr,
        expected_count: (tc.horizon - tc.t(i)) * nu_mass,
    })
}

/// Coefficients of the stretched state equation on `[t_λ, T]`:
/// `b/τ̇`, `σ/√τ̇` and jumps at time `ρ_i(s)` with compensator `ν/τ̇`.
#[derive(Debug)]
pub struct Stretched {
    inner: Arc<dyn Coefficients>,
    tc: TimeChange,
    i: usize,
    compensator: Box<[Vec<f64>]>,
}

impl Stretched {
    fn rho(&self, s: f64) -> f64 {
        self.tc.rho(self.i, s.clamp(self.tc.t_lambda(), self.tc.horizon)).expect("clamped into range")
    }
}

impl Coefficients for Stretched {
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let r = self.rho(t);
        let k = self.tc.tau_dot(self.i);
        self.inner.drift(r, x, u, out);
        // The Euler step subtracts the full compensator; keep only ν/τ̇ of it.
        let mut g = vec![0.0; out.len()];
        let mut comp = vec![0.0; out.len()];
        for atom in self.compensator.iter() {
            let (w, mark) = atom.split_first().expect("weight then mark");
            self.inner.jump(r, x, u, mark, &mut g);
            for (c, gi) in comp.iter_mut().zip(&g) {
                *c += w * gi;
            }
        }
        for (o, c) in out.iter_mut().zip(&comp) {
            *o = *o / k + (1.0 - 1.0 / k) * c;
        }
    }
    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.diffusion(self.rho(t), x, u, out);
        let s = self.tc.tau_dot(self.i).sqrt();
        out.iter_mut().for_each(|v| *v /= s);
    }
    fn jump(&self, t: f64, x: &[f64], u: &[f64], mark: &[f64], out: &mut [f64]) {
        self.inner.jump(self.rho(t), x, u, mark, out)
    }
    fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64 {
        self.inner.driver(self.rho(t), x, y, z, v, u)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        self.inner.terminal(x)
    }
    fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        self.inner.obstacle(self.rho(t), x)
    }
}

/// Simulate the stretched state `X̃^i` on `[t_λ, T]` from `x`.
pub fn stretched_ensemble(
    spec: &ProblemSpec,
    tc: &TimeChange,
    i: usize,
    x: &[f64],
    steps: usize,
    control: &Control,
    sampling: &Sampling,
) -> Result<PathEnsemble> {
    let compensator = spec
        .levy()
        .atoms()
        .iter()
        .map(|a| std::iter::once(a.weight).chain(a.mark.iter().copied()).collect())
        .collect();
    let stretched = spec.with_coefficients(Arc::new(Stretched { inner: spec.shared_coefficients(), tc: *tc, i, compensator }));
    let grid = TimeGrid::new(tc.t_lambda(), tc.horizon, steps)?;
    sampling.ensemble(&stretched, &grid, x, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{FnCoefficients, LevyMeasure};

    #[test]
    fn tau_examples() {
        let tc = TimeChange::new(0.0, 0.5, 0.5, 1.0).unwrap();
        assert_eq!(tc.t_lambda(), 0.25);
        assert!((tc.tau(1, 0.75).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(tc.tau(1, 0.5).unwrap(), 0.25);
        assert_eq!(tc.tau(0, 1.0).unwrap(), 1.0);
        assert_eq!(tc.rho(1, 0.25).unwrap(), 0.5);
        assert!(tc.tau(1, 0.4).is_err());
        assert!(tc.rho(0, 0.2).is_err());
    }

    #[test]
    fn identity_d_example() {
        // t_λ = 0.12, 1/τ̇₁ = 0.6/0.88, 1/τ̇₀ = 1/0.88: all three sides equal 0.21·0.4/0.88.
        let tc = TimeChange::new(0.0, 0.4, 0.3, 1.0).unwrap();
        assert!((tc.t_lambda() - 0.12).abs() < 1e-16);
        let expected = 0.3 * 0.7 * 0.4 / 0.88;
        assert!((0.3f64 * (1.0 - 0.6 / 0.88) - expected).abs() < 1e-15);
        assert!((-0.7f64 * (1.0 - 1.0 / 0.88) - expected).abs() < 1e-15);
        let r = identity_suite(&tc, 0.1, &[0.12, 0.5, 0.9]).unwrap();
        assert!(r.check("d").unwrap().passed && r.check("e").unwrap().passed);
    }

    #[test]
    fn degenerate_configurations() {
        let same = TimeChange::new(0.3, 0.3, 0.6, 1.0).unwrap();
        let r = identity_suite(&same, 0.2, &[0.3, 0.5]).unwrap();
        assert!(r.checks.iter().all(|c| c.passed && c.observed == 0.0));
        for lambda in [0.0, 1.0] {
            let tc = TimeChange::new(0.1, 0.6, lambda, 1.0).unwrap();
            let r = identity_suite(&tc, 0.2, &[tc.t_lambda()]).unwrap();
            assert!(r.check("d").unwrap().observed < 1e-16);
        }
    }

    #[test]
    fn samples_outside_window_rejected() {
        let tc = TimeChange::new(0.0, 0.4, 0.3, 1.0).unwrap();
        assert!(identity_suite(&tc, 0.1, &[0.95]).is_err());
        assert!(identity_suite(&tc, 0.1, &[0.05]).is_err());
    }

    #[test]
    fn girsanov_weight_edge_cases() {
        let tc = TimeChange::new(0.2, 0.2, 0.5, 1.0).unwrap();
        for n in [0, 1, 7] {
            assert!((girsanov_weight(&tc, 0, n, 3.0).unwrap() - 1.0).abs() < 1e-15);
        }
        let tc = TimeChange::new(0.0, 0.5, 0.5, 1.0).unwrap();
        let w = girsanov_weight(&tc, 1, 0, 2.0).unwrap();
        assert!((w - (0.25f64 * 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn stretched_clock_preserves_total_drift() {
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().drift(|_, _, _, b| b[0] = 1.0))
            .levy(LevyMeasure::empty())
            .build()
            .unwrap();
        let tc = TimeChange::new(0.1, 0.7, 0.4, 1.0).unwrap();
        for i in 0..2 {
            let ens = stretched_ensemble(
                &spec,
                &tc,
                i,
                &[0.0],
                20,
                &Control::Constant(0),
                &Sampling::MonteCarlo { paths: 4, seed: 1 },
            )
            .unwrap();
            assert!((ens.state(0, 20)[0] - (1.0 - tc.t(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn stretched_jumps_keep_their_compensator() {
        let levy = LevyMeasure::scalar(&[1.0], &[2.0]).unwrap();
        let spec = ProblemSpec::builder(1, 1, 1.0)
            .coefficients(FnCoefficients::new().jump(|_, _, _, e, g| g[0] = e[0]))
            .levy(levy)
            .build()
            .unwrap();
        let tc = TimeChange::new(0.0, 0.5, 0.5, 1.0).unwrap();
        let ens = stretched_ensemble(
            &spec,
            &tc,
            1,
            &[0.0],
            10,
            &Control::Constant(0),
            &Sampling::MonteCarlo { paths: 20000, seed: 4 },
        )
        .unwrap();
        // N has intensity ν on [t_λ, T]; the drift removes ν/τ̇ per unit time.
        let expected = 2.0 * 0.75 * (1.0 - 1.0 / tc.tau_dot(1));
        let (m, se) = mean_stderr((0..20000).map(|p| ens.state(p, 10)[0]));
        assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected} ± {se}");
    }
}
