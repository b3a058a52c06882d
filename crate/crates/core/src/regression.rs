//! Least-squares estimators of conditional expectations `E[· | X_k]`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression basis family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisKind {
    /// All monomials of total degree `≤ degree` in box-normalized coordinates.
    Polynomial { degree: usize },
    /// Hypercube cells over the box, `cells` per coordinate, with a constant
    /// (`local_degree = 0`) or affine (`local_degree = 1`) fit per cell.
    LocalPartition { cells: usize, local_degree: usize },
    /// One indicator per distinct sample point. Exact on finite trees.
    Exact,
}

/// Basis plus its domain box. Without an explicit box the empirical range
/// of each time slice is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            kind: BasisKind::Polynomial { degree: 3 },
            domain: None,
        }
    }
}

const CHUNK: usize = 1024;

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
            domain: None,
        }
    }

    pub fn local(cells: usize, local_degree: usize) -> Self {
        Self {
            kind: BasisKind::LocalPartition {
                cells,
                local_degree,
            },
            domain: None,
        }
    }

    pub fn exact() -> Self {
        Self {
            kind: BasisKind::Exact,
            domain: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match &self.kind {
            BasisKind::LocalPartition {
                cells,
                local_degree,
            } if *cells == 0 || *local_degree > 1 => Err(Error::Precondition(
                "local partition needs cells >= 1 and local_degree in {0,1}".into(),
            )),
            _ => match &self.domain {
                Some((lo, hi))
                    if lo.len() != dim
                        || hi.len() != dim
                        || lo.iter().zip(hi).any(|(l, h)| !(l < h)) =>
                {
                    Err(Error::Precondition(
                        "regression domain box is malformed".into(),
                    ))
                }
                _ => Ok(()),
            },
        }
    }

    /// Fitted conditional expectations of every target at every sample point.
    ///
    /// `points` is row-major `m × dim`; each target has length `m`.
    pub fn project(
        &self,
        points: &[f64],
        dim: usize,
        targets: &[Vec<f64>],
        step: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let m = points.len() / dim;
        if m == 0 {
            return Err(Error::Precondition("no sample points".into()));
        }
        if targets.iter().any(|t| t.len() != m) {
            return Err(Error::Precondition(
                "target length differs from sample count".into(),
            ));
        }
        let first = &points[..dim];
        if points.chunks_exact(dim).all(|p| p == first) {
            return Ok(targets.iter().map(|t| vec![ordered_mean(t); m]).collect());
        }
        let (lo, hi) = match &self.domain {
            Some((lo, hi)) => (lo.clone(), hi.clone()),
            None => empirical_box(points, dim),
        };
        match &self.kind {
            BasisKind::Exact => Ok(exact_means(points, dim, targets)),
            BasisKind::LocalPartition {
                cells,
                local_degree,
            } => Ok(local_fit(
                points,
                dim,
                targets,
                &lo,
                &hi,
                *cells,
                *local_degree,
            )),
            BasisKind::Polynomial { degree } => {
                polynomial_fit(points, dim, targets, &lo, &hi, *degree, step)
            }
        }
    }
}

fn ordered_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn empirical_box(points: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points.chunks_exact(dim) {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    for i in 0..dim {
        if hi[i] <= lo[i] {
            hi[i] = lo[i] + 1.0;
        }
    }
    (lo, hi)
}

fn exact_means(points: &[f64], dim: usize, targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut groups: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(points.len() / dim);
    for p in points.chunks_exact(dim) {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let next = groups.len();
        labels.push(*groups.entry(key).or_insert(next));
    }
    grouped_means(&labels, groups.len(), targets)
}

fn grouped_means(labels: &[usize], n_groups: usize, targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut counts = vec![0usize; n_groups];
    for &g in labels {
        counts[g] += 1;
    }
    targets
        .iter()
        .map(|t| {
            let mut sums = vec![0.0; n_groups];
            for (&g, v) in labels.iter().zip(t) {
                sums[g] += v;
            }
            labels.iter().map(|&g| sums[g] / counts[g] as f64).collect()
        })
        .collect()
}

fn cell_of(p: &[f64], lo: &[f64], hi: &[f64], cells: usize) -> usize {
    let mut index = 0;
    for i in (0..p.len()).rev() {
        let u = (p[i] - lo[i]) / (hi[i] - lo[i]);
        let c = ((u * cells as f64).floor().max(0.0) as usize).min(cells - 1);
        index = index * cells + c;
    }
    index
}

fn local_fit(
    points: &[f64],
    dim: usize,
    targets: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    cells: usize,
    local_degree: usize,
) -> Vec<Vec<f64>> {
    let labels: Vec<usize> = points
        .chunks_exact(dim)
        .map(|p| cell_of(p, lo, hi, cells))
        .collect();
    let n_cells = cells.pow(dim as u32);
    let means = grouped_means(&labels, n_cells, targets);
    if local_degree == 0 {
        return means;
    }
    // Affine fit per cell in cell-centred coordinates; cells with too few or
    // collinear points keep their mean.
    let k = dim + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let mut out = means;
    for idx in members.iter().filter(|m| m.len() > 2 * k) {
        let mut centre = vec![0.0; dim];
        for &i in idx {
            for d in 0..dim {
                centre[d] += points[i * dim + d];
            }
        }
        centre.iter_mut().for_each(|c| *c /= idx.len() as f64);
        let row = |i: usize| {
            let mut r = Vec::with_capacity(k);
            r.push(1.0);
            r.extend((0..dim).map(|d| points[i * dim + d] - centre[d]));
            r
        };
        let mut gram = DMatrix::<f64>::zeros(k, k);
        for &i in idx {
            let r = row(i);
            for a in 0..k {
                for b in 0..k {
                    gram[(a, b)] += r[a] * r[b];
                }
            }
        }
        let Some(chol) = gram.clone().cholesky() else {
            continue;
        };
        if gram
            .diagonal()
            .iter()
            .skip(1)
            .any(|&g| g <= 1e-14 * idx.len() as f64)
        {
            continue;
        }
        for (t, fitted) in targets.iter().zip(out.iter_mut()) {
            let mut rhs = DVector::<f64>::zeros(k);
            for &i in idx {
                let r = row(i);
                for a in 0..k {
                    rhs[a] += r[a] * t[i];
                }
            }
            let beta = chol.solve(&rhs);
            for &i in idx {
                let r = row(i);
                fitted[i] = (0..k).map(|a| r[a] * beta[a]).sum();
            }
        }
    }
    out
}

/// Exponent vectors of all monomials with total degree `≤ degree`.
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().sum::<usize>());
    out
}

fn polynomial_fit(
    points: &[f64],
    dim: usize,
    targets: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    degree: usize,
    step: usize,
) -> Result<Vec<Vec<f64>>> {
    let exps = monomials(dim, degree);
    let k = exps.len();
    let m = points.len() / dim;
    let features = |i: usize| -> Vec<f64> {
        let z: Vec<f64> = (0..dim)
            .map(|d| 2.0 * (points[i * dim + d] - lo[d]) / (hi[d] - lo[d]) - 1.0)
            .collect();
        exps.iter()
            .map(|e| {
                e.iter()
                    .zip(&z)
                    .map(|(&p, &zi)| zi.powi(p as i32))
                    .product()
            })
            .collect()
    };
    // Fixed-size chunks reduced in order keep sums independent of thread count.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut gram = vec![0.0; k * k];
            let mut rhs = vec![0.0; k * targets.len()];
            for &i in chunk {
                let f = features(i);
                for a in 0..k {
                    for b in 0..k {
                        gram[a * k + b] += f[a] * f[b];
                    }
                    for (j, t) in targets.iter().enumerate() {
                        rhs[j * k + a] += f[a] * t[i];
                    }
                }
            }
            (gram, rhs)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = vec![DVector::<f64>::zeros(k); targets.len()];
    for (g, r) in &partials {
        for a in 0..k {
            for b in 0..k {
                gram[(a, b)] += g[a * k + b];
            }
            for (j, rj) in rhs.iter_mut().enumerate() {
                rj[a] += r[j * k + a];
            }
        }
    }
    let scale = gram.diagonal().max();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign {
            step,
            detail: format!("{k} basis functions, {m} samples"),
        })?;
    let diag_min = chol
        .l()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b * b));
    if diag_min <= 1e-13 * scale {
        return Err(Error::SingularDesign {
            step,
            detail: "ill-conditioned normal equations".into(),
        });
    }
    let coefs: Vec<DVector<f64>> = rhs.iter().map(|r| chol.solve(r)).collect();
    let fitted: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let f = features(i);
            coefs
                .iter()
                .map(|c| (0..k).map(|a| f[a] * c[a]).sum())
                .collect()
        })
        .collect();
    Ok((0..targets.len())
        .map(|j| fitted.iter().map(|row| row[j]).collect())
        .collect())
}
