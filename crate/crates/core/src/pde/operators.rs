//! Generator pieces evaluated from grid stencils and atomic quadrature.

use super::grid::Level;
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

fn quad(hess: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| v[i] * hess[i * n + j] * v[j]).sum::<f64>()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `b·W_x + ½ tr(σσᵀ W_xx)` at an interior node, with the first derivative
/// upwinded along `b`.
pub fn local_operator(level: &Level, spec: &ProblemSpec, t: f64, node: usize, u: &[f64]) -> Result<f64> {
    let grid = level.grid();
    if grid.is_boundary(node) {
        return Err(Error::Precondition(format!("node {node} lies on the boundary")));
    }
    let x = grid.coord(node);
    let b = spec.drift(t, &x, u);
    let sigma = spec.diffusion(t, &x, u);
    let grad = level.grad_upwind(node, &b);
    finite(dot(&grad, &b) + diffusion_term(&sigma, &level.hessian(node), spec.dim_w()), "local operator")
}

/// `½ tr(σσᵀ H)` for row-major `σ` (`n × d`) and `H` (`n × n`).
pub fn diffusion_term(sigma: &[f64], hess: &[f64], d: usize) -> f64 {
    let n = sigma.len() / d;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a: f64 = (0..d).map(|k| sigma[i * d + k] * sigma[j * d + k]).sum();
            acc += a * hess[i * n + j];
        }
    }
    0.5 * acc
}

/// `Σ_e w(e)[W(x+γ) − W(x) − W_x·γ]`, atoms with `|e| < delta` in the
/// second-order Taylor form `½ γᵀ W_xx γ`.
pub fn nonlocal_b(level: &Level, spec: &ProblemSpec, t: f64, node: usize, u: &[f64], delta: f64) -> Result<f64> {
    let x = level.grid().coord(node);
    let w = level.value(node);
    let grad = level.grad_central(node);
    let hess = level.hessian(node);
    let mut acc = 0.0;
    for atom in spec.levy().atoms() {
        let g = spec.jump(t, &x, u, &atom.mark);
        acc += atom.weight
            * if atom.norm() < delta {
                0.5 * quad(&hess, &g)
            } else {
                let dest: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                level.interpolate(&dest) - w - dot(&grad, &g)
            };
    }
    finite(acc, "nonlocal B")
}

/// `Σ_e w(e) l(e)[W(x+γ) − W(x)]`, small atoms as `W_x·γ + ½ γᵀ W_xx γ`.
pub fn nonlocal_c(level: &Level, spec: &ProblemSpec, t: f64, node: usize, u: &[f64], delta: f64) -> Result<f64> {
    let x = level.grid().coord(node);
    let w = level.value(node);
    let grad = level.grad_central(node);
    let hess = level.hessian(node);
    let mut acc = 0.0;
    for (j, atom) in spec.levy().atoms().iter().enumerate() {
        let l = spec.jump_weight().at(j);
        if l == 0.0 {
            continue;
        }
        let g = spec.jump(t, &x, u, &atom.mark);
        acc += atom.weight
            * l
            * if atom.norm() < delta {
                dot(&grad, &g) + 0.5 * quad(&hess, &g)
            } else {
                let dest: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                level.interpolate(&dest) - w
            };
    }
    finite(acc, "nonlocal C")
}

/// `b·p + ½ tr(σσᵀ P) + B + f(t, x, w, p·σ, C, u)`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    w: f64,
    grad: &[f64],
    hess: &[f64],
    bu: f64,
    cu: f64,
    u: &[f64],
) -> Result<f64> {
    if !(w.is_finite() && bu.is_finite() && cu.is_finite())
        || grad.iter().chain(hess).any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("hamiltonian input".into()));
    }
    let d = spec.dim_w();
    let b = spec.drift(t, x, u);
    let sigma = spec.diffusion(t, x, u);
    let z: Vec<f64> = (0..d).map(|k| (0..x.len()).map(|i| grad[i] * sigma[i * d + k]).sum()).collect();
    let f = spec.driver(t, x, w, &z, cu, u);
    finite(dot(grad, &b) + diffusion_term(&sigma, hess, d) + bu + f, "hamiltonian")
}

/// Monotone discretisation of `ℍ` at a node for every control.
///
/// The gradient compensation of large jumps is folded into the drift and the
/// combined transport is upwinded; small atoms enter through the Hessian.
pub fn node_hamiltonians(
    level: &Level,
    spec: &ProblemSpec,
    t: f64,
    node: usize,
    delta: f64,
    out: &mut [f64],
) -> Result<()> {
    let grid = level.grid();
    let x = grid.coord(node);
    let n = x.len();
    let w = level.value(node);
    let hess = level.hessian(node);
    let grad_c = level.grad_central(node);
    let atoms = spec.levy().atoms();
    for (ui, u) in spec.controls().iter().enumerate() {
        let b = spec.drift(t, &x, u);
        let mut comp = vec![0.0; n];
        let mut jump_b = 0.0;
        let mut jump_c = 0.0;
        for (j, atom) in atoms.iter().enumerate() {
            let g = spec.jump(t, &x, u, &atom.mark);
            let l = spec.jump_weight().at(j);
            if atom.norm() < delta {
                let q = 0.5 * quad(&hess, &g);
                jump_b += atom.weight * q;
                jump_c += atom.weight * l * (dot(&grad_c, &g) + q);
            } else {
                let dest: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                let jumped = level.interpolate(&dest) - w;
                jump_b += atom.weight * jumped;
                jump_c += atom.weight * l * jumped;
                for i in 0..n {
                    comp[i] += atom.weight * g[i];
                }
            }
        }
        let b_eff: Vec<f64> = b.iter().zip(&comp).map(|(a, c)| a - c).collect();
        let grad = level.grad_upwind(node, &b_eff);
        jump_b -= dot(&grad, &comp);
        out[ui] = hamiltonian(spec, t, &x, w, &grad, &hess, jump_b, jump_c, u)?;
    }
    Ok(())
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::grid::SpaceGrid;
    use crate::problem::{FnCoefficients, JumpWeight, LevyMeasure};

    fn spec(c: FnCoefficients, levy: LevyMeasure, l: Option<JumpWeight>) -> ProblemSpec {
        let l = l.unwrap_or_else(|| JumpWeight::zero(&levy));
        ProblemSpec::builder(1, 1, 1.0).coefficients(c).levy(levy).jump_weight(l).build().unwrap()
    }

    fn tabulate(g: &SpaceGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..g.len()).map(|j| f(g.coord(j)[0])).collect()
    }

    #[test]
    fn local_operator_on_polynomials() {
        let g = SpaceGrid::uniform_1d(-2.0, 2.0, 41).unwrap();
        let lin = tabulate(&g, |x| 3.0 * x - 1.0);
        let s = spec(FnCoefficients::new().drift(|_, _, _, b| b[0] = -0.7), LevyMeasure::empty(), None);
        let v = local_operator(&Level::new(&g, &lin).unwrap(), &s, 0.0, 20, &[0.0]).unwrap();
        assert!((v - (-2.1)).abs() < 1e-12);
        let sq = tabulate(&g, |x| x * x);
        let s = spec(FnCoefficients::new().diffusion(|_, _, _, s| s[0] = 1.0), LevyMeasure::empty(), None);
        let v = local_operator(&Level::new(&g, &sq).unwrap(), &s, 0.0, 20, &[0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        assert!(local_operator(&Level::new(&g, &sq).unwrap(), &s, 0.0, 0, &[0.0]).is_err());
    }

    #[test]
    fn upwind_error_halves_with_spacing() {
        // W = sin x at x = 0.5, b = 1, σ = √2: exact value cos 0.5 − sin 0.5.
        let s = spec(
            FnCoefficients::new().drift(|_, _, _, b| b[0] = 1.0).diffusion(|_, _, _, s| s[0] = 2f64.sqrt()),
            LevyMeasure::empty(),
            None,
        );
        let exact = 0.5f64.cos() - 0.5f64.sin();
        let err = |points: usize| {
            let g = SpaceGrid::uniform_1d(-1.5, 2.5, points).unwrap();
            let w = tabulate(&g, f64::sin);
            let node = g.nearest(&[0.5]);
            assert!((g.coord(node)[0] - 0.5).abs() < 1e-12);
            (local_operator(&Level::new(&g, &w).unwrap(), &s, 0.0, node, &[0.0]).unwrap() - exact).abs()
        };
        let ratio = err(41) / err(81);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn nonlocal_b_examples() {
        let g = SpaceGrid::uniform_1d(-3.0, 3.0, 61).unwrap();
        let levy = LevyMeasure::scalar(&[1.0], &[1.0]).unwrap();
        let s = spec(FnCoefficients::new().jump(|_, _, _, _, g| g[0] = 1.0), levy.clone(), None);
        let sq = tabulate(&g, |x| x * x);
        let node = g.nearest(&[0.0]);
        let v = nonlocal_b(&Level::new(&g, &sq).unwrap(), &s, 0.0, node, &[0.0], 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let lin = tabulate(&g, |x| 2.0 * x + 1.0);
        let v = nonlocal_b(&Level::new(&g, &lin).unwrap(), &s, 0.0, node, &[0.0], 0.5).unwrap();
        assert!(v.abs() < 1e-12);
        let still = spec(FnCoefficients::new(), levy, None);
        assert_eq!(nonlocal_b(&Level::new(&g, &sq).unwrap(), &still, 0.0, node, &[0.0], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn delta_split_is_exact_when_no_atom_is_small() {
        let g = SpaceGrid::uniform_1d(-3.0, 3.0, 61).unwrap();
        let levy = LevyMeasure::scalar(&[-0.4, 0.3], &[0.8, 0.6]).unwrap();
        let s = spec(FnCoefficients::new().jump(|_, x, _, e, g| g[0] = (1.0 + 0.2 * x[0]) * e[0]), levy, None);
        let w = tabulate(&g, |x| x.cos() + 0.1 * x * x * x);
        let lv = Level::new(&g, &w).unwrap();
        for node in [5, 30, 44] {
            let split = nonlocal_b(&lv, &s, 0.0, node, &[0.0], 0.15).unwrap();
            let plain = nonlocal_b(&lv, &s, 0.0, node, &[0.0], 0.0).unwrap();
            assert!((split - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlocal_c_examples() {
        let g = SpaceGrid::uniform_1d(-3.0, 3.0, 61).unwrap();
        let levy = LevyMeasure::scalar(&[1.0], &[2.0]).unwrap();
        let l = JumpWeight::scaled(1.0, 1.0, &levy).unwrap();
        let s = spec(FnCoefficients::new().jump(|_, _, _, _, g| g[0] = 1.0), levy.clone(), Some(l));
        let lin = tabulate(&g, |x| x);
        let node = g.nearest(&[0.0]);
        assert!((nonlocal_c(&Level::new(&g, &lin).unwrap(), &s, 0.0, node, &[0.0], 0.5).unwrap() - 2.0).abs() < 1e-12);
        let no_l = spec(FnCoefficients::new().jump(|_, _, _, _, g| g[0] = 1.0), levy, None);
        assert_eq!(nonlocal_c(&Level::new(&g, &lin).unwrap(), &no_l, 0.0, node, &[0.0], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn hamiltonian_sums_its_parts() {
        let zero = spec(FnCoefficients::new(), LevyMeasure::empty(), None);
        assert_eq!(hamiltonian(&zero, 0.0, &[0.0], 0.0, &[0.0], &[0.0], 0.0, 0.0, &[0.0]).unwrap(), 0.0);
        let one = spec(FnCoefficients::new().driver(|_, _, _, _, _, _| 1.0), LevyMeasure::empty(), None);
        assert_eq!(hamiltonian(&one, 0.0, &[0.0], 0.0, &[0.0], &[0.0], 0.0, 0.0, &[0.0]).unwrap(), 1.0);
        assert!(hamiltonian(&one, 0.0, &[0.0], f64::NAN, &[0.0], &[0.0], 0.0, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        assert_eq!(argmin(&[2.0, 2.0]), 0);
    }
}
