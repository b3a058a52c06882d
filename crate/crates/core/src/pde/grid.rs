use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid in one or two dimensions. Node indices run with the
/// first coordinate fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: Vec<usize>,
}

impl SpaceGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if !(1..=2).contains(&n) || hi.len() != n || points.len() != n {
            return Err(Error::Precondition("space grids support one or two dimensions".into()));
        }
        for i in 0..n {
            if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                return Err(Error::Precondition(format!("bad box [{}, {}] in dimension {i}", lo[i], hi[i])));
            }
            if points[i] < 3 {
                return Err(Error::Precondition("a space grid needs at least 3 points per dimension".into()));
            }
        }
        Ok(Self { lo, hi, points })
    }

    pub fn uniform_1d(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![points])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / (self.points[i] - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        [node % self.points[0], if self.dim() == 2 { node / self.points[0] } else { 0 }]
    }

    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        idx[0] + if self.dim() == 2 { idx[1] * self.points[0] } else { 0 }
    }

    /// Coordinate of index `j` along dimension `i`; the last index is exactly `hi`.
    pub fn axis(&self, i: usize, j: usize) -> f64 {
        if j + 1 == self.points[i] {
            self.hi[i]
        } else {
            self.lo[i] + j as f64 * self.spacing(i)
        }
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        (0..self.dim()).map(|i| self.axis(i, idx[i])).collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.dim()).any(|i| idx[i] == 0 || idx[i] + 1 == self.points[i])
    }

    /// Node of index offset `step` along `axis`, clamped to the grid.
    pub fn shifted(&self, node: usize, axis: usize, step: isize) -> usize {
        let mut idx = self.multi_index(node);
        let j = idx[axis] as isize + step;
        idx[axis] = j.clamp(0, self.points[axis] as isize - 1) as usize;
        self.node_index(idx)
    }

    /// Nearest node, ties to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 2];
        for i in 0..self.dim() {
            let u = ((x[i] - self.lo[i]) / self.spacing(i)).clamp(0.0, (self.points[i] - 1) as f64);
            let lower = u.floor();
            let j = if u - lower > 0.5 { lower + 1.0 } else { lower };
            idx[i] = (j as usize).min(self.points[i] - 1);
        }
        self.node_index(idx)
    }
}

/// One time level of grid values with stencil and interpolation helpers.
/// Stencils reaching past a face reuse the face value.
#[derive(Debug, Clone, Copy)]
pub struct Level<'a> {
    grid: &'a SpaceGrid,
    values: &'a [f64],
}

impl<'a> Level<'a> {
    pub fn new(grid: &'a SpaceGrid, values: &'a [f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &SpaceGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    fn at(&self, node: usize, axis: usize, step: isize) -> f64 {
        self.values[self.grid.shifted(node, axis, step)]
    }

    /// Forward and backward differences along `axis`.
    pub fn one_sided(&self, node: usize, axis: usize) -> (f64, f64) {
        let h = self.grid.spacing(axis);
        let w = self.values[node];
        ((self.at(node, axis, 1) - w) / h, (w - self.at(node, axis, -1)) / h)
    }

    /// Central gradient; one-sided inward at faces.
    pub fn grad_central(&self, node: usize) -> Vec<f64> {
        (0..self.grid.dim())
            .map(|i| {
                let h = self.grid.spacing(i);
                let j = self.grid.multi_index(node)[i];
                let last = self.grid.points()[i] - 1;
                if j == 0 {
                    (self.at(node, i, 1) - self.values[node]) / h
                } else if j == last {
                    (self.values[node] - self.at(node, i, -1)) / h
                } else {
                    (self.at(node, i, 1) - self.at(node, i, -1)) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Upwind gradient for transport with velocity `drift`.
    pub fn grad_upwind(&self, node: usize, drift: &[f64]) -> Vec<f64> {
        (0..self.grid.dim())
            .map(|i| {
                let (fwd, bwd) = self.one_sided(node, i);
                if drift[i] >= 0.0 {
                    fwd
                } else {
                    bwd
                }
            })
            .collect()
    }

    /// Row-major Hessian from central second differences; the mixed term
    /// uses the four diagonal neighbours.
    pub fn hessian(&self, node: usize) -> Vec<f64> {
        let n = self.grid.dim();
        let mut hess = vec![0.0; n * n];
        let w = self.values[node];
        for i in 0..n {
            let h = self.grid.spacing(i);
            hess[i * n + i] = (self.at(node, i, 1) - 2.0 * w + self.at(node, i, -1)) / (h * h);
        }
        if n == 2 {
            let g = self.grid;
            let corner = |a: isize, b: isize| self.values[g.shifted(g.shifted(node, 0, a), 1, b)];
            let mixed = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1))
                / (4.0 * g.spacing(0) * g.spacing(1));
            hess[1] = mixed;
            hess[2] = mixed;
        }
        hess
    }

    /// Multilinear interpolation, clamped to the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = self.grid;
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for i in 0..g.dim() {
            let mut u = ((x[i] - g.lo[i]) / g.spacing(i)).clamp(0.0, (g.points[i] - 1) as f64);
            if (u - u.round()).abs() < 1e-10 {
                u = u.round();
            }
            let j = (u.floor() as usize).min(g.points[i] - 2);
            base[i] = j;
            frac[i] = u - j as f64;
        }
        if g.dim() == 1 {
            let j = base[0];
            if frac[0] == 0.0 {
                return self.values[j];
            }
            if frac[0] == 1.0 {
                return self.values[j + 1];
            }
            return (1.0 - frac[0]) * self.values[j] + frac[0] * self.values[j + 1];
        }
        let mut acc = 0.0;
        for (a, wa) in [(0, 1.0 - frac[0]), (1, frac[0])] {
            for (b, wb) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                let weight = wa * wb;
                if weight != 0.0 {
                    acc += weight * self.values[g.node_index([base[0] + a, base[1] + b])];
                }
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(SpaceGrid::uniform_1d(0.0, 1.0, 2).is_err());
        assert!(SpaceGrid::uniform_1d(1.0, 1.0, 5).is_err());
        assert!(SpaceGrid::new(vec![0.0; 3], vec![1.0; 3], vec![3; 3]).is_err());
    }

    #[test]
    fn quadratic_stencils_are_exact() {
        let g = SpaceGrid::uniform_1d(-2.0, 2.0, 41).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|j| g.coord(j)[0].powi(2)).collect();
        let lv = Level::new(&g, &w).unwrap();
        let node = 25;
        let x = g.coord(node)[0];
        assert!((lv.grad_central(node)[0] - 2.0 * x).abs() < 1e-12);
        assert!((lv.hessian(node)[0] - 2.0).abs() < 1e-10);
        assert_eq!(lv.interpolate(&[g.coord(7)[0]]), w[7]);
        assert_eq!(lv.interpolate(&[-10.0]), w[0]);
    }

    #[test]
    fn bilinear_is_exact_on_bilinear_data() {
        let g = SpaceGrid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![5, 9]).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1];
        let w: Vec<f64> = (0..g.len()).map(|j| f(&g.coord(j))).collect();
        let lv = Level::new(&g, &w).unwrap();
        let p = [0.37, 0.21];
        assert!((lv.interpolate(&p) - f(&p)).abs() < 1e-12);
        let node = g.node_index([2, 4]);
        assert!((lv.hessian(node)[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let g = SpaceGrid::uniform_1d(0.0, 1.0, 3).unwrap();
        assert_eq!(g.nearest(&[0.25]), 0);
        assert_eq!(g.nearest(&[0.26]), 1);
        assert_eq!(g.nearest(&[7.0]), 2);
    }
}
