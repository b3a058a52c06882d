//! Keyed TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Sampling, TimeGrid};
use crate::pde::{HjbConfig, SpaceGrid};
use crate::problem::{Atom, Family, JumpWeight, LevyMeasure, ProblemSpec, TrigParams};
use crate::rbsde::SolverConfig;
use crate::regression::RegressionBasis;
use crate::report::sha256_hex;
use crate::value::McConfig;

/// Every suite the runner knows, in execution order.
pub const SUITES: &[&str] = &[
    "trivial-zero",
    "tree-oracle",
    "ladder",
    "pde-ladder",
    "cross-check",
    "heat",
    "skorokhod",
    "comparison",
    "dpp",
    "kulik",
    "regularity",
    "feedback",
    "determinism",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub suites: Vec<String>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: Family,
    /// Required for families without fixed dimensions.
    #[serde(default)]
    pub dim_x: Option<usize>,
    #[serde(default)]
    pub dim_w: Option<usize>,
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default = "single_zero_control")]
    pub controls: Vec<Vec<f64>>,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    /// `l(e) = scale·min(1, |e|)`; absent means `l ≡ 0`.
    #[serde(default)]
    pub jump_weight: Option<JumpWeightConfig>,
}

fn single_zero_control() -> Vec<Vec<f64>> {
    vec![vec![0.0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpWeightConfig {
    pub scale: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
    pub time_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lo: vec![-5.0], hi: vec![5.0], points: vec![200], time_steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub paths: usize,
    pub steps: usize,
    pub penalty_ladder: Vec<f64>,
    pub basis: RegressionBasis,
    /// Order-preserving basis used where node-wise ordering is asserted.
    pub monotone_basis: RegressionBasis,
    pub max_iters: usize,
    pub tol: f64,
    pub hjb: HjbConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            paths: 20_000,
            steps: 50,
            penalty_ladder: (0..9).map(|i| f64::from(1u32 << i)).collect(),
            basis: solver.basis,
            monotone_basis: RegressionBasis::local(32, 0),
            max_iters: solver.max_iters,
            tol: solver.tol,
            hjb: HjbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, formats: vec![Format::Csv, Format::Json] }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

fn check_finite(value: &toml::Value, path: &str) -> Result<()> {
    match value {
        toml::Value::Float(f) if !f.is_finite() => Err(Error::Config(format!("{path} is not finite"))),
        toml::Value::Array(items) => {
            items.iter().enumerate().try_for_each(|(i, v)| check_finite(v, &format!("{path}[{i}]")))
        }
        toml::Value::Table(t) => t.iter().try_for_each(|(k, v)| {
            check_finite(v, &if path.is_empty() { k.clone() } else { format!("{path}.{k}") })
        }),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    /// The standard controlled 1-D trig problem with two jump atoms.
    pub fn standard(seed: u64) -> Self {
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
        Self {
            seed,
            suites: Vec::new(),
            problem: ProblemConfig {
                model: Family::Trig(params),
                dim_x: None,
                dim_w: None,
                horizon: 1.0,
                x0: vec![0.5],
                controls: [-0.5, -0.25, 0.0, 0.25, 0.5].iter().map(|&u| vec![u]).collect(),
                atoms: vec![Atom { mark: vec![-0.4], weight: 0.8 }, Atom { mark: vec![0.3], weight: 0.6 }],
                jump_weight: Some(JumpWeightConfig { scale: 1.0, kappa: 1.0 }),
            },
            grids: GridConfig::default(),
            solver: SolverSettings::default(),
            outputs: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml_string()?.as_bytes()))
    }

    /// Suites to run; an empty list means all of them.
    pub fn suite_list(&self) -> Vec<String> {
        if self.suites.is_empty() {
            SUITES.iter().map(|s| s.to_string()).collect()
        } else {
            self.suites.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        check_finite(&value, "")?;
        if let Some(bad) = self.suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown suite `{bad}`; known: {}", SUITES.join(", "))));
        }
        let s = &self.solver;
        if s.paths == 0 || s.steps == 0 || self.grids.time_steps == 0 {
            return Err(Error::Config("paths, steps and time_steps must be positive".into()));
        }
        if s.penalty_ladder.is_empty() || s.penalty_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("penalty_ladder must be non-empty and strictly increasing".into()));
        }
        let spec = self.spec()?;
        if self.problem.x0.len() != spec.dim_x() {
            return Err(Error::Config(format!("x0 has {} components, state has {}", self.problem.x0.len(), spec.dim_x())));
        }
        s.basis.validate(spec.dim_x()).map_err(|e| Error::Config(e.to_string()))?;
        s.monotone_basis.validate(spec.dim_x()).map_err(|e| Error::Config(e.to_string()))?;
        let space = self.space()?;
        if space.dim() != spec.dim_x() {
            return Err(Error::Config("grid dimension differs from the state dimension".into()));
        }
        let horizon = spec.horizon();
        for node in 0..space.len() {
            let x = space.coord(node);
            let (phi, h) = (spec.terminal(&x), spec.obstacle(horizon, &x));
            if phi > h {
                return Err(Error::Config(format!(
                    "obstacle compatibility violated: terminal {phi} exceeds obstacle {h} at x = {x:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let (n, d) = match p.model.fixed_dims() {
            Some(dims) => dims,
            None => (
                p.dim_x.ok_or_else(|| Error::Config("problem.dim_x is required for this family".into()))?,
                p.dim_w.ok_or_else(|| Error::Config("problem.dim_w is required for this family".into()))?,
            ),
        };
        let cfg_err = |e: Error| Error::Config(e.to_string());
        let levy = LevyMeasure::new(p.atoms.clone()).map_err(cfg_err)?;
        let weight = match &p.jump_weight {
            Some(w) => JumpWeight::scaled(w.scale, w.kappa, &levy).map_err(cfg_err)?,
            None => JumpWeight::zero(&levy),
        };
        ProblemSpec::from_family(p.model.clone(), (n, d), p.horizon, levy, weight, p.controls.clone()).map_err(cfg_err)
    }

    pub fn space(&self) -> Result<SpaceGrid> {
        let g = &self.grids;
        SpaceGrid::new(g.lo.clone(), g.hi.clone(), g.points.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn time(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.problem.horizon, self.grids.time_steps).map_err(|e| Error::Config(e.to_string()))
    }

    /// Space grid with `factor` times the intervals per axis and a time grid
    /// with `factor²` times the steps (fixed parabolic ratio).
    pub fn refined(&self, factor: usize) -> Result<(SpaceGrid, TimeGrid)> {
        let g = &self.grids;
        let points = g.points.iter().map(|p| (p - 1) * factor + 1).collect();
        let space = SpaceGrid::new(g.lo.clone(), g.hi.clone(), points).map_err(|e| Error::Config(e.to_string()))?;
        let time = TimeGrid::new(0.0, self.problem.horizon, g.time_steps * factor * factor)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok((space, time))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { basis: self.solver.basis.clone(), max_iters: self.solver.max_iters, tol: self.solver.tol }
    }

    /// Solver settings with the order-preserving basis.
    pub fn monotone_solver_config(&self) -> SolverConfig {
        SolverConfig { basis: self.solver.monotone_basis.clone(), ..self.solver_config() }
    }

    pub fn sampling(&self) -> Sampling {
        Sampling::MonteCarlo { paths: self.solver.paths, seed: self.seed }
    }

    pub fn mc(&self) -> McConfig {
        McConfig { steps: self.solver.steps, sampling: self.sampling(), solver: self.solver_config() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_round_trips_through_toml() {
        let cfg = ExperimentConfig::standard(11);
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 3
            suites = ["trivial-zero"]
            [problem]
            horizon = 1.0
            x0 = [0.0]
            dim_x = 1
            dim_w = 1
            [problem.model]
            family = "zero"
            params = { obstacle = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.solver.paths, 20_000);
        assert_eq!(cfg.solver.penalty_ladder.last(), Some(&256.0));
        assert_eq!(cfg.suite_list(), vec!["trivial-zero".to_string()]);
    }

    #[test]
    fn rejects_unknown_keys_suites_and_non_finite_values() {
        let base = ExperimentConfig::standard(1).to_toml_string().unwrap();
        assert!(matches!(
            ExperimentConfig::from_toml_str(&format!("bogus = 1\n{base}")),
            Err(Error::Config(_))
        ));
        let mut cfg = ExperimentConfig::standard(1);
        cfg.suites = vec!["nope".into()];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::standard(1);
        cfg.problem.horizon = f64::NAN;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("horizon")));
    }

    #[test]
    fn terminal_above_obstacle_is_a_config_error() {
        let mut cfg = ExperimentConfig::standard(1);
        if let Family::Trig(p) = &mut cfg.problem.model {
            p.phi0 = 1.0;
        }
        match cfg.validate() {
            Err(Error::Config(m)) => assert!(m.contains("obstacle compatibility")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_keeps_the_parabolic_ratio() {
        let cfg = ExperimentConfig::standard(1);
        let (space, time) = cfg.refined(2).unwrap();
        assert_eq!(space.points(), &[399]);
        assert_eq!(time.steps(), 200);
    }
}
