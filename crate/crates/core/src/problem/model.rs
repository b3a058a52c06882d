//! Coefficient families.
//!
//! Configurations never carry closures: they name one of the parametric
//! families below. Library users may also assemble coefficients from
//! closures with [`FnCoefficients`].

use std::fmt;

use serde::{Deserialize, Serialize};

/// Coefficients of the controlled state equation and of the cost RBSDE.
///
/// Vector outputs are written into caller-provided buffers; the diffusion
/// matrix is row-major `n × d`.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn jump(&self, t: f64, x: &[f64], u: &[f64], mark: &[f64], out: &mut [f64]);
    fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64;
    fn terminal(&self, x: &[f64]) -> f64;
    fn obstacle(&self, t: f64, x: &[f64]) -> f64;
}

/// Constant data and no dynamics: `b = σ = γ = 0`, `f ≡ c`, `Φ ≡ φ`, `h ≡ η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroParams {
    pub driver: f64,
    pub terminal: f64,
    pub obstacle: f64,
}

impl Default for ZeroParams {
    fn default() -> Self {
        Self {
            driver: 0.0,
            terminal: 0.0,
            obstacle: 1.0,
        }
    }
}

/// Scalar linear-quadratic family.
///
/// ```text
/// b = b0 + a x + beta u          σ = sigma0 + sigma_u u
/// γ = (jump_c + jump_x x) e
/// f = f0 + f_x x + f_y y + f_z z + f_v v + f_u u + f_uu u² + f_xu x u
/// Φ = phi0 + phi_x x + phi_xx x²  h = h0 + h_x x + h_t t
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lq1dParams {
    pub b0: f64,
    pub a: f64,
    pub beta: f64,
    pub sigma0: f64,
    pub sigma_u: f64,
    pub jump_c: f64,
    pub jump_x: f64,
    pub f0: f64,
    pub f_x: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub f_v: f64,
    pub f_u: f64,
    pub f_uu: f64,
    pub f_xu: f64,
    pub phi0: f64,
    pub phi_x: f64,
    pub phi_xx: f64,
    pub h0: f64,
    pub h_x: f64,
    pub h_t: f64,
}

impl Default for Lq1dParams {
    fn default() -> Self {
        Self {
            b0: 0.0,
            a: 0.0,
            beta: 0.0,
            sigma0: 0.0,
            sigma_u: 0.0,
            jump_c: 0.0,
            jump_x: 0.0,
            f0: 0.0,
            f_x: 0.0,
            f_y: 0.0,
            f_z: 0.0,
            f_v: 0.0,
            f_u: 0.0,
            f_uu: 0.0,
            f_xu: 0.0,
            phi0: 0.0,
            phi_x: 0.0,
            phi_xx: 0.0,
            h0: 1e6,
            h_x: 0.0,
            h_t: 0.0,
        }
    }
}

/// Scalar family with bounded smooth coefficients.
///
/// ```text
/// b = b_sin sin x + b_u u        σ = sigma0 + sigma_cos cos x
/// γ = jump_scale (1 + jump_cos cos x) e
/// f = f0 + f_cos cos x + f_y y + f_z z + f_v v + f_u u + f_uu u²
/// Φ = phi0 + phi_cos cos x       h = h0 + h_cos cos x + h_t t
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrigParams {
    pub b_sin: f64,
    pub b_u: f64,
    pub sigma0: f64,
    pub sigma_cos: f64,
    pub jump_scale: f64,
    pub jump_cos: f64,
    pub f0: f64,
    pub f_cos: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub f_v: f64,
    pub f_u: f64,
    pub f_uu: f64,
    pub phi0: f64,
    pub phi_cos: f64,
    pub h0: f64,
    pub h_cos: f64,
    pub h_t: f64,
}

impl Default for TrigParams {
    fn default() -> Self {
        Self {
            b_sin: 0.0,
            b_u: 0.0,
            sigma0: 0.0,
            sigma_cos: 0.0,
            jump_scale: 0.0,
            jump_cos: 0.0,
            f0: 0.0,
            f_cos: 0.0,
            f_y: 0.0,
            f_z: 0.0,
            f_v: 0.0,
            f_u: 0.0,
            f_uu: 0.0,
            phi0: 0.0,
            phi_cos: 0.0,
            h0: 1e6,
            h_cos: 0.0,
            h_t: 0.0,
        }
    }
}

/// Geometric state with multiplicative jumps `x ↦ x (1 + e)`.
///
/// ```text
/// b = (mu + beta u) x            σ = sigma x            γ = x e
/// f = -r y + f_v v + f_uu u²
/// Φ = (x - strike)⁺              h = cap + h_x x
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsJumpParams {
    pub mu: f64,
    pub beta: f64,
    pub sigma: f64,
    pub r: f64,
    pub f_v: f64,
    pub f_uu: f64,
    pub strike: f64,
    pub cap: f64,
    pub h_x: f64,
}

impl Default for BsJumpParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            beta: 0.0,
            sigma: 0.2,
            r: 0.0,
            f_v: 0.0,
            f_uu: 0.0,
            strike: 1.0,
            cap: 1e6,
            h_x: 0.0,
        }
    }
}

/// Registry of parametric coefficient families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum Family {
    Zero(ZeroParams),
    Lq1d(Lq1dParams),
    Trig(TrigParams),
    BsJump(BsJumpParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Zero(_) => "zero",
            Family::Lq1d(_) => "lq1d",
            Family::Trig(_) => "trig",
            Family::BsJump(_) => "bs-jump",
        }
    }

    /// Fixed `(n, d)` of the family, `None` when any dimension works.
    pub fn fixed_dims(&self) -> Option<(usize, usize)> {
        match self {
            Family::Zero(_) => None,
            _ => Some((1, 1)),
        }
    }
}

fn first(u: &[f64]) -> f64 {
    u.first().copied().unwrap_or(0.0)
}

impl Coefficients for Family {
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Family::Zero(_) => out.fill(0.0),
            Family::Lq1d(p) => out[0] = p.b0 + p.a * x[0] + p.beta * first(u),
            Family::Trig(p) => out[0] = p.b_sin * x[0].sin() + p.b_u * first(u),
            Family::BsJump(p) => out[0] = (p.mu + p.beta * first(u)) * x[0],
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Family::Zero(_) => out.fill(0.0),
            Family::Lq1d(p) => out[0] = p.sigma0 + p.sigma_u * first(u),
            Family::Trig(p) => out[0] = p.sigma0 + p.sigma_cos * x[0].cos(),
            Family::BsJump(p) => out[0] = p.sigma * x[0],
        }
    }

    fn jump(&self, _t: f64, x: &[f64], _u: &[f64], mark: &[f64], out: &mut [f64]) {
        match self {
            Family::Zero(_) => out.fill(0.0),
            Family::Lq1d(p) => out[0] = (p.jump_c + p.jump_x * x[0]) * mark[0],
            Family::Trig(p) => out[0] = p.jump_scale * (1.0 + p.jump_cos * x[0].cos()) * mark[0],
            Family::BsJump(_) => out[0] = x[0] * mark[0],
        }
    }

    fn driver(&self, _t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64 {
        match self {
            Family::Zero(p) => p.driver,
            Family::Lq1d(p) => {
                let u = first(u);
                p.f0 + p.f_x * x[0]
                    + p.f_y * y
                    + p.f_z * z[0]
                    + p.f_v * v
                    + p.f_u * u
                    + p.f_uu * u * u
                    + p.f_xu * x[0] * u
            }
            Family::Trig(p) => {
                let u = first(u);
                p.f0 + p.f_cos * x[0].cos()
                    + p.f_y * y
                    + p.f_z * z[0]
                    + p.f_v * v
                    + p.f_u * u
                    + p.f_uu * u * u
            }
            Family::BsJump(p) => {
                let u = first(u);
                -p.r * y + p.f_v * v + p.f_uu * u * u
            }
        }
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        match self {
            Family::Zero(p) => p.terminal,
            Family::Lq1d(p) => p.phi0 + p.phi_x * x[0] + p.phi_xx * x[0] * x[0],
            Family::Trig(p) => p.phi0 + p.phi_cos * x[0].cos(),
            Family::BsJump(p) => (x[0] - p.strike).max(0.0),
        }
    }

    fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Family::Zero(p) => p.obstacle,
            Family::Lq1d(p) => p.h0 + p.h_x * x[0] + p.h_t * t,
            Family::Trig(p) => p.h0 + p.h_cos * x[0].cos() + p.h_t * t,
            Family::BsJump(p) => p.cap + p.h_x * x[0],
        }
    }
}

type VecFn = Box<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type JumpFn = Box<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
type DriverFn = Box<dyn Fn(f64, &[f64], f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
type TerminalFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type ObstacleFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Closure-backed coefficients; every piece defaults to zero
/// (obstacle defaults to `+∞`-like `1e6`).
pub struct FnCoefficients {
    drift: VecFn,
    diffusion: VecFn,
    jump: JumpFn,
    driver: DriverFn,
    terminal: TerminalFn,
    obstacle: ObstacleFn,
}

impl Default for FnCoefficients {
    fn default() -> Self {
        Self {
            drift: Box::new(|_, _, _, out| out.fill(0.0)),
            diffusion: Box::new(|_, _, _, out| out.fill(0.0)),
            jump: Box::new(|_, _, _, _, out| out.fill(0.0)),
            driver: Box::new(|_, _, _, _, _, _| 0.0),
            terminal: Box::new(|_| 0.0),
            obstacle: Box::new(|_, _| 1e6),
        }
    }
}

impl FnCoefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn drift(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Box::new(f);
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Box::new(f);
        self
    }

    pub fn jump(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jump = Box::new(f);
        self
    }

    pub fn driver(
        mut self,
        f: impl Fn(f64, &[f64], f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.driver = Box::new(f);
        self
    }

    pub fn terminal(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Box::new(f);
        self
    }

    pub fn obstacle(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.obstacle = Box::new(f);
        self
    }
}

impl fmt::Debug for FnCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnCoefficients")
    }
}

impl Coefficients for FnCoefficients {
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, u, out)
    }

    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, u, out)
    }

    fn jump(&self, t: f64, x: &[f64], u: &[f64], mark: &[f64], out: &mut [f64]) {
        (self.jump)(t, x, u, mark, out)
    }

    fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64 {
        (self.driver)(t, x, y, z, v, u)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        (self.obstacle)(t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_tags_round_trip_through_toml() {
        let text = "family = \"lq1d\"\n[params]\na = -0.5\nsigma0 = 0.3\n";
        let fam: Family = toml::from_str(text).unwrap();
        match &fam {
            Family::Lq1d(p) => {
                assert_eq!(p.a, -0.5);
                assert_eq!(p.sigma0, 0.3);
                assert_eq!(p.h0, 1e6);
            }
            other => panic!("wrong family {other:?}"),
        }
        assert_eq!(fam.name(), "lq1d");
    }

    #[test]
    fn unknown_parameter_rejected() {
        let text = "family = \"trig\"\n[params]\nbogus = 1.0\n";
        assert!(toml::from_str::<Family>(text).is_err());
    }

    #[test]
    fn trig_coefficients_evaluate() {
        let fam = Family::Trig(TrigParams {
            b_sin: 2.0,
            sigma0: 0.5,
            phi_cos: 1.0,
            ..Default::default()
        });
        let mut out = [0.0];
        fam.drift(0.0, &[std::f64::consts::FRAC_PI_2], &[0.0], &mut out);
        assert!((out[0] - 2.0).abs() < 1e-15);
        assert_eq!(fam.terminal(&[0.0]), 1.0);
    }
}
