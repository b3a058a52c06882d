use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::grid::{Level, SpaceGrid};
use crate::error::{Error, Result};
use crate::forward::TimeGrid;
use crate::report::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "n", rename_all = "kebab-case")]
pub enum SurfaceMode {
    Obstacle,
    Penalized(f64),
    /// Built from tabulated values rather than by a march.
    Tabulated,
}

/// Grid values `W[time][node]` on a time grid and a space grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    time: TimeGrid,
    space: SpaceGrid,
    values: Vec<f64>,
    mode: SurfaceMode,
}

impl ValueSurface {
    pub fn new(time: TimeGrid, space: SpaceGrid, values: Vec<f64>, mode: SurfaceMode) -> Result<Self> {
        if values.len() != (time.steps() + 1) * space.len() {
            return Err(Error::GridMismatch("surface values do not match the grids".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("surface value {i}")));
        }
        Ok(Self { time, space, values, mode })
    }

    /// Tabulate `f(t, x)` on every node.
    pub fn from_fn(time: TimeGrid, space: SpaceGrid, f: impl Fn(f64, &[f64]) -> f64) -> Result<Self> {
        let coords: Vec<Vec<f64>> = (0..space.len()).map(|j| space.coord(j)).collect();
        let values = (0..=time.steps()).flat_map(|k| coords.iter().map(move |x| (k, x))).map(|(k, x)| f(time.node(k), x)).collect();
        Self::new(time, space, values, SurfaceMode::Tabulated)
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn mode(&self) -> SurfaceMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.space.len() + node]
    }

    pub fn level(&self, k: usize) -> Level<'_> {
        let n = self.space.len();
        Level::new(&self.space, &self.values[k * n..(k + 1) * n]).expect("level length is fixed by construction")
    }

    /// Time index containing `t` and the weight of the later node.
    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let steps = self.time.steps();
        let u = ((t - self.time.t0()) / self.time.dt()).clamp(0.0, steps as f64);
        let k = (u.floor() as usize).min(steps - 1);
        let mut frac = u - k as f64;
        if (t - self.time.node(k + 1)).abs() <= 1e-12 * self.time.dt() {
            frac = 1.0;
        } else if (t - self.time.node(k)).abs() <= 1e-12 * self.time.dt() {
            frac = 0.0;
        }
        (k, frac)
    }

    /// Linear in time, multilinear in space, clamped to both grids.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> f64 {
        let (k, frac) = self.time_bracket(t);
        if frac == 0.0 {
            return self.level(k).interpolate(x);
        }
        if frac == 1.0 {
            return self.level(k + 1).interpolate(x);
        }
        (1.0 - frac) * self.level(k).interpolate(x) + frac * self.level(k + 1).interpolate(x)
    }

    /// CSV with columns `t,x0[,x1],W`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut header = String::from("t");
        for i in 0..self.space.dim() {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(out, "{header},W")?;
        for k in 0..=self.time.steps() {
            let t = fmt_f64(self.time.node(k));
            for j in 0..self.space.len() {
                let mut line = t.clone();
                for c in self.space.coord(j) {
                    line.push(',');
                    line.push_str(&fmt_f64(c));
                }
                line.push(',');
                line.push_str(&fmt_f64(self.at(k, j)));
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Rows of a surface CSV: coordinates `(t, x…)` and value.
pub fn read_surface_csv(input: impl BufRead) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut rows = Vec::new();
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::GridMismatch("empty surface file".into()))??;
    let cols = header.split(',').count();
    if cols < 3 || !header.starts_with("t,") || !header.ends_with(",W") {
        return Err(Error::GridMismatch(format!("unexpected surface header '{header}'")));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::GridMismatch(format!("line {}: {e}", i + 2)))?;
        if fields.len() != cols {
            return Err(Error::GridMismatch(format!("line {} has {} fields", i + 2, fields.len())));
        }
        let (coords, value) = fields.split_at(cols - 1);
        rows.push((coords.to_vec(), value[0]));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceDiff {
    pub nodes: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Node-wise difference of two surface dumps on identical grids.
pub fn compare_surfaces(a: &[(Vec<f64>, f64)], b: &[(Vec<f64>, f64)]) -> Result<SurfaceDiff> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch(format!("{} vs {} nodes", a.len(), b.len())));
    }
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    for (i, ((ca, va), (cb, vb))) in a.iter().zip(b).enumerate() {
        if ca.len() != cb.len() || ca.iter().zip(cb).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs())) {
            return Err(Error::GridMismatch(format!("node {i} has different coordinates")));
        }
        let d = (va - vb).abs();
        max_abs = max_abs.max(d);
        sum += d;
    }
    Ok(SurfaceDiff { nodes: a.len(), max_abs, mean_abs: sum / a.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(shift: f64) -> ValueSurface {
        let time = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let space = SpaceGrid::uniform_1d(-1.0, 1.0, 5).unwrap();
        ValueSurface::from_fn(time, space, |t, x| t + x[0] + shift).unwrap()
    }

    #[test]
    fn interpolation_is_exact_on_affine_data() {
        let s = surface(0.0);
        assert!((s.interpolate(0.3, &[0.11]) - 0.41).abs() < 1e-14);
        assert_eq!(s.interpolate(1.0, &[0.5]), 1.5);
        assert_eq!(s.interpolate(0.0, &[3.0]), 1.0);
    }

    #[test]
    fn csv_round_trip_and_compare() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        surface(0.0).write_csv(&mut a).unwrap();
        surface(1.0).write_csv(&mut b).unwrap();
        let ra = read_surface_csv(&a[..]).unwrap();
        let rb = read_surface_csv(&b[..]).unwrap();
        assert_eq!(compare_surfaces(&ra, &ra).unwrap().max_abs, 0.0);
        let d = compare_surfaces(&ra, &rb).unwrap();
        assert!((d.max_abs - 1.0).abs() < 1e-15 && (d.mean_abs - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compare_rejects_other_grids() {
        let s = surface(0.0);
        let other = ValueSurface::from_fn(*s.time(), SpaceGrid::uniform_1d(-2.0, 2.0, 5).unwrap(), |_, _| 0.0).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        s.write_csv(&mut a).unwrap();
        other.write_csv(&mut b).unwrap();
        let err = compare_surfaces(&read_surface_csv(&a[..]).unwrap(), &read_surface_csv(&b[..]).unwrap());
        assert!(matches!(err, Err(Error::GridMismatch(_))));
    }
}
