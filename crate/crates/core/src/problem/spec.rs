use std::sync::Arc;

use crate::error::{Error, Result};

use super::levy::{JumpWeight, LevyMeasure};
use super::model::{Coefficients, Family};

/// A complete control problem: dynamics, cost data, obstacle, Lévy measure
/// and the finite control grid standing in for the compact set `U`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    dim_x: usize,
    dim_w: usize,
    horizon: f64,
    coeffs: Arc<dyn Coefficients>,
    family: Option<Family>,
    levy: LevyMeasure,
    jump_weight: JumpWeight,
    controls: Vec<Vec<f64>>,
}

impl ProblemSpec {
    pub fn builder(dim_x: usize, dim_w: usize, horizon: f64) -> ProblemSpecBuilder {
        ProblemSpecBuilder {
            dim_x,
            dim_w,
            horizon,
            coeffs: None,
            family: None,
            levy: LevyMeasure::empty(),
            jump_weight: None,
            controls: vec![vec![0.0]],
        }
    }

    /// Spec backed by a registry family.
    pub fn from_family(
        family: Family,
        dims: (usize, usize),
        horizon: f64,
        levy: LevyMeasure,
        jump_weight: JumpWeight,
        controls: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::builder(dims.0, dims.1, horizon)
            .family(family)
            .levy(levy)
            .jump_weight(jump_weight)
            .controls(controls)
            .build()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coeffs.as_ref()
    }

    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }

    pub fn levy(&self) -> &LevyMeasure {
        &self.levy
    }

    pub fn jump_weight(&self) -> &JumpWeight {
        &self.jump_weight
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn control(&self, index: usize) -> &[f64] {
        &self.controls[index]
    }

    /// Same dynamics and measure, different coefficients (used to build
    /// ordered pairs for comparison checks).
    pub fn shared_coefficients(&self) -> Arc<dyn Coefficients> {
        Arc::clone(&self.coeffs)
    }

    pub fn with_coefficients(&self, coeffs: Arc<dyn Coefficients>) -> Self {
        Self {
            coeffs,
            family: None,
            ..self.clone()
        }
    }

    /// Same problem restricted to a single control.
    pub fn with_single_control(&self, index: usize) -> Self {
        Self {
            controls: vec![self.controls[index].clone()],
            ..self.clone()
        }
    }

    /// Same problem with another control grid.
    pub fn with_controls(&self, controls: Vec<Vec<f64>>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::InvalidProblem("control grid is empty".into()));
        }
        Ok(Self {
            controls,
            ..self.clone()
        })
    }

    pub fn drift(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x];
        self.coeffs.drift(t, x, u, &mut out);
        out
    }

    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x * self.dim_w];
        self.coeffs.diffusion(t, x, u, &mut out);
        out
    }

    pub fn jump(&self, t: f64, x: &[f64], u: &[f64], mark: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x];
        self.coeffs.jump(t, x, u, mark, &mut out);
        out
    }

    /// Compensator `∫ γ(t,x,u,e) ν(de)` written into `out`.
    pub fn compensator(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut g = vec![0.0; self.dim_x];
        for atom in self.levy.atoms() {
            self.coeffs.jump(t, x, u, &atom.mark, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += atom.weight * gi;
            }
        }
    }

    pub fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], v: f64, u: &[f64]) -> f64 {
        self.coeffs.driver(t, x, y, z, v, u)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        self.coeffs.terminal(x)
    }

    pub fn obstacle(&self, t: f64, x: &[f64]) -> f64 {
        self.coeffs.obstacle(t, x)
    }
}

pub struct ProblemSpecBuilder {
    dim_x: usize,
    dim_w: usize,
    horizon: f64,
    coeffs: Option<Arc<dyn Coefficients>>,
    family: Option<Family>,
    levy: LevyMeasure,
    jump_weight: Option<JumpWeight>,
    controls: Vec<Vec<f64>>,
}

impl ProblemSpecBuilder {
    pub fn coefficients(mut self, coeffs: impl Coefficients + 'static) -> Self {
        self.coeffs = Some(Arc::new(coeffs));
        self.family = None;
        self
    }

    pub fn family(mut self, family: Family) -> Self {
        self.coeffs = Some(Arc::new(family.clone()));
        self.family = Some(family);
        self
    }

    pub fn levy(mut self, levy: LevyMeasure) -> Self {
        self.levy = levy;
        self
    }

    pub fn jump_weight(mut self, weight: JumpWeight) -> Self {
        self.jump_weight = Some(weight);
        self
    }

    pub fn controls(mut self, controls: Vec<Vec<f64>>) -> Self {
        self.controls = controls;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        if self.dim_x == 0 || self.dim_w == 0 {
            return Err(Error::InvalidProblem("dimensions must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidProblem("horizon must be positive".into()));
        }
        if let Some((n, d)) = self.family.as_ref().and_then(Family::fixed_dims) {
            if (n, d) != (self.dim_x, self.dim_w) {
                return Err(Error::InvalidProblem(format!(
                    "family requires dim_x = {n}, dim_w = {d}"
                )));
            }
        }
        if self.controls.is_empty() {
            return Err(Error::InvalidProblem("control grid is empty".into()));
        }
        let m = self.controls[0].len();
        if self
            .controls
            .iter()
            .any(|u| u.len() != m || u.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidProblem(
                "controls must share a dimension and be finite".into(),
            ));
        }
        let jump_weight = match self.jump_weight {
            Some(w) => {
                if w.values().len() != self.levy.len() {
                    return Err(Error::InvalidProblem(
                        "jump weight does not match the Lévy atoms".into(),
                    ));
                }
                w
            }
            None => JumpWeight::zero(&self.levy),
        };
        let coeffs = self
            .coeffs
            .ok_or_else(|| Error::InvalidProblem("coefficients missing".into()))?;
        Ok(ProblemSpec {
            dim_x: self.dim_x,
            dim_w: self.dim_w,
            horizon: self.horizon,
            coeffs,
            family: self.family,
            levy: self.levy,
            jump_weight,
            controls: self.controls,
        })
    }
}
