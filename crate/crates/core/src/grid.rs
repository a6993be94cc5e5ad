//! Uniform cell-centred discretisations of a 1D interval and of a radially
//! symmetric disk.
//!
//! All spatial operators are written in flux form: a face value is multiplied
//! by its face measure, differenced, and divided by the cell measure. On the
//! disk the face at the axis has zero measure, so the `1/ξ` factor of the
//! radial Laplacian never has to be evaluated.

use std::f64::consts::PI;
use std::ops::Index;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "geometry", rename_all = "snake_case")]
pub enum Geometry {
    /// `[0, length]` with Neumann ends.
    Interval { length: f64 },
    /// `B_R(0) ⊂ ℝ²` restricted to radial functions.
    Disk { radius: f64 },
}

impl Geometry {
    pub fn extent(&self) -> f64 {
        match *self {
            Geometry::Interval { length } => length,
            Geometry::Disk { radius } => radius,
        }
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        match *self {
            Geometry::Interval { length } => length,
            Geometry::Disk { radius } => PI * radius * radius,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Geometry::Interval { .. } => "interval",
            Geometry::Disk { .. } => "disk",
        }
    }
}

/// Immutable grid: cell centres `ξ_i`, faces `ξ_{i+1/2}`, cell measures `w_i`
/// and face measures `s_{i+1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    geometry: Geometry,
    h: f64,
    centers: Vec<f64>,
    faces: Vec<f64>,
    cell_measures: Vec<f64>,
    face_measures: Vec<f64>,
}

impl RadialGrid {
    pub fn new(geometry: Geometry, n_cells: usize) -> Result<Self> {
        let extent = geometry.extent();
        if n_cells < MIN_CELLS {
            return Err(Error::Config(format!(
                "n_cells = {n_cells} is below the minimum of {MIN_CELLS}"
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::Config(format!(
                "domain extent must be positive and finite, got {extent}"
            )));
        }
        let h = extent / n_cells as f64;
        let centers: Vec<f64> = (0..n_cells).map(|i| (i as f64 + 0.5) * h).collect();
        let mut faces: Vec<f64> = (0..=n_cells).map(|i| i as f64 * h).collect();
        faces[n_cells] = extent;
        let (cell_measures, face_measures) = match geometry {
            Geometry::Interval { .. } => (vec![h; n_cells], vec![1.0; n_cells + 1]),
            Geometry::Disk { .. } => (
                // π(ξ_{i+1/2}² − ξ_{i-1/2}²) = 2π ξ_i h exactly.
                centers.iter().map(|&x| 2.0 * PI * x * h).collect(),
                faces.iter().map(|&x| 2.0 * PI * x).collect(),
            ),
        };
        Ok(Self {
            geometry,
            h,
            centers,
            faces,
            cell_measures,
            face_measures,
        })
    }

    pub fn shared(geometry: Geometry, n_cells: usize) -> Result<Arc<Self>> {
        Self::new(geometry, n_cells).map(Arc::new)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    /// Uniform cell width `Δξ`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn cell_measures(&self) -> &[f64] {
        &self.cell_measures
    }

    pub fn face_measures(&self) -> &[f64] {
        &self.face_measures
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.geometry.measure()
    }

    /// Midpoint quadrature `Σ w_i f_i`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_cells());
        self.cell_measures
            .iter()
            .zip(values)
            .map(|(w, f)| w * f)
            .sum()
    }

    /// Weighted inner product `Σ w_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_measures
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Face-centred gradient: `(f_{i+1} − f_i)/Δξ` on interior faces and zero
    /// on both boundary faces. Length `n_cells + 1`.
    pub fn face_gradient(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n_cells();
        let mut g = vec![0.0; n + 1];
        for i in 1..n {
            g[i] = (values[i] - values[i - 1]) / self.h;
        }
        g
    }

    /// Discrete divergence of a face flux: `(s_{i+1/2} F_{i+1/2} − s_{i−1/2} F_{i−1/2}) / w_i`.
    /// Boundary face values are ignored (no-flux closure).
    pub fn divergence(&self, flux: &[f64]) -> Vec<f64> {
        let n = self.n_cells();
        debug_assert_eq!(flux.len(), n + 1);
        let s = &self.face_measures;
        (0..n)
            .map(|i| {
                let right = if i + 1 < n { s[i + 1] * flux[i + 1] } else { 0.0 };
                let left = if i > 0 { s[i] * flux[i] } else { 0.0 };
                (right - left) / self.cell_measures[i]
            })
            .collect()
    }

    /// `|∇f|²` per cell, averaging the squared gradients of the two adjacent
    /// faces. With this averaging `Σ w_i |∇f|²_i = Σ_faces s h g²` exactly.
    pub fn cell_gradient_sq(&self, values: &[f64]) -> Vec<f64> {
        let g = self.face_gradient(values);
        (0..self.n_cells())
            .map(|i| 0.5 * (g[i] * g[i] + g[i + 1] * g[i + 1]))
            .collect()
    }
}

/// A scalar function sampled at the cell centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidInput(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite field value {} at cell {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<RadialGrid>, c: f64) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn face_gradient(&self) -> Vec<f64> {
        self.grid.face_gradient(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `‖f‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|x| *x *= c);
    }
}

impl Index<usize> for Field {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}
