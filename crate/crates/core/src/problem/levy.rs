//! Finite (atomic) Lévy measures and the jump weight `l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One atom of the Lévy measure: a non-zero mark with positive intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn norm(&self) -> f64 {
        self.mark.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

/// Atomic Lévy measure `ν = Σ w_j δ_{e_j}` with finite total mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevyMeasure {
    atoms: Vec<Atom>,
    mark_dim: usize,
    total_mass: f64,
}

impl LevyMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let mark_dim = atoms.first().map(|a| a.mark.len()).unwrap_or(1);
        for (j, atom) in atoms.iter().enumerate() {
            if atom.mark.len() != mark_dim || mark_dim == 0 {
                return Err(Error::InvalidProblem(format!(
                    "atom {j}: inconsistent mark dimension"
                )));
            }
            if !(atom.weight.is_finite() && atom.weight > 0.0) {
                return Err(Error::InvalidProblem(format!(
                    "atom {j}: weight must be positive and finite"
                )));
            }
            if atom.mark.iter().any(|e| !e.is_finite()) {
                return Err(Error::InvalidProblem(format!("atom {j}: non-finite mark")));
            }
            if atom.norm() == 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "atom {j}: mark must be non-zero"
                )));
            }
        }
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        Ok(Self {
            atoms,
            mark_dim,
            total_mass,
        })
    }

    /// Measure without atoms (no jumps).
    pub fn empty() -> Self {
        Self {
            atoms: Vec::new(),
            mark_dim: 1,
            total_mass: 0.0,
        }
    }

    /// Scalar marks with matching weights.
    pub fn scalar(marks: &[f64], weights: &[f64]) -> Result<Self> {
        if marks.len() != weights.len() {
            return Err(Error::InvalidProblem(
                "marks and weights differ in length".into(),
            ));
        }
        Self::new(
            marks
                .iter()
                .zip(weights)
                .map(|(&e, &w)| Atom {
                    mark: vec![e],
                    weight: w,
                })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Smallest atom norm, `None` without atoms.
    pub fn min_norm(&self) -> Option<f64> {
        self.atoms.iter().map(Atom::norm).reduce(f64::min)
    }

    /// `∫ g dν`, exact for the atomic representation.
    pub fn integral(&self, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
        self.integral_indexed(|_, e| g(e))
    }

    /// `∫ g dν` where the integrand also sees the atom index.
    pub fn integral_indexed(&self, g: impl Fn(usize, &[f64]) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (j, atom) in self.atoms.iter().enumerate() {
            let value = g(j, &atom.mark);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("integrand at atom {j}")));
            }
            acc += atom.weight * value;
        }
        Ok(acc)
    }
}

/// `Σ_j w_j g(e_j)`.
pub fn levy_integral(levy: &LevyMeasure, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
    levy.integral(g)
}

/// Driver jump argument `∫ l(e) V(e) ν(de)`.
pub fn aggregate_v(
    levy: &LevyMeasure,
    weight: &JumpWeight,
    v: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    levy.integral_indexed(|j, e| weight.at(j) * v(e))
}

/// Jump weight `l`, tabulated on the atoms and bounded by `κ·min(1, |e|)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpWeight {
    kappa: f64,
    values: Vec<f64>,
}

impl JumpWeight {
    pub fn from_fn(kappa: f64, levy: &LevyMeasure, l: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidProblem("kappa must be positive".into()));
        }
        let mut values = Vec::with_capacity(levy.len());
        for (j, atom) in levy.atoms().iter().enumerate() {
            let value = l(&atom.mark);
            let bound = kappa * atom.norm().min(1.0);
            if !value.is_finite() || value < 0.0 || value > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidProblem(format!(
                    "jump weight at atom {j} is {value}, outside [0, {bound}]"
                )));
            }
            values.push(value);
        }
        Ok(Self { kappa, values })
    }

    /// `l(e) = scale·min(1, |e|)` with `scale ≤ κ`.
    pub fn scaled(scale: f64, kappa: f64, levy: &LevyMeasure) -> Result<Self> {
        Self::from_fn(kappa, levy, |e| {
            scale * e.iter().map(|c| c * c).sum::<f64>().sqrt().min(1.0)
        })
    }

    pub fn zero(levy: &LevyMeasure) -> Self {
        Self {
            kappa: 1.0,
            values: vec![0.0; levy.len()],
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `l(e_j)` for atom `j`.
    pub fn at(&self, atom: usize) -> f64 {
        self.values[atom]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> LevyMeasure {
        LevyMeasure::scalar(&[-1.0, 1.0], &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn integral_of_constant_is_total_mass() {
        let levy = LevyMeasure::scalar(&[0.3, -2.0, 1.5], &[0.2, 1.1, 0.7]).unwrap();
        assert_eq!(levy.integral(|_| 1.0).unwrap(), levy.total_mass());
        assert_eq!(levy.integral(|_| 0.0).unwrap(), 0.0);
    }

    #[test]
    fn second_moment_of_symmetric_pair() {
        assert_eq!(levy_integral(&two_atoms(), |e| e[0] * e[0]).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_integrand_is_rejected() {
        assert!(matches!(
            two_atoms().integral(|e| 1.0 / (e[0] + 1.0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn aggregate_single_atom() {
        let levy = LevyMeasure::scalar(&[1.0], &[2.0]).unwrap();
        let l = JumpWeight::scaled(1.0, 1.0, &levy).unwrap();
        assert_eq!(aggregate_v(&levy, &l, |_| 3.0).unwrap(), 6.0);
        assert_eq!(aggregate_v(&levy, &l, |_| 0.0).unwrap(), 0.0);
        let direct = levy.integral_indexed(|j, _| l.at(j)).unwrap();
        assert_eq!(aggregate_v(&levy, &l, |_| 1.0).unwrap(), direct);
    }

    #[test]
    fn zero_mark_and_bad_weight_rejected() {
        assert!(LevyMeasure::scalar(&[0.0], &[1.0]).is_err());
        assert!(LevyMeasure::scalar(&[1.0], &[0.0]).is_err());
        assert!(LevyMeasure::scalar(&[1.0], &[f64::INFINITY]).is_err());
    }

    #[test]
    fn jump_weight_bound_enforced() {
        let levy = LevyMeasure::scalar(&[0.25, 3.0], &[1.0, 1.0]).unwrap();
        assert!(JumpWeight::from_fn(1.0, &levy, |_| 0.5).is_err());
        assert!(JumpWeight::from_fn(2.0, &levy, |e| 2.0 * e[0].abs().min(1.0)).is_ok());
        assert!(JumpWeight::from_fn(1.0, &levy, |_| -0.1).is_err());
    }
}
