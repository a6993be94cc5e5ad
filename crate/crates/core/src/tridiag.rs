//! Thomas algorithm for tridiagonal systems.

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n-1]` are
/// unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    pub fn factor(&self) -> Result<TridiagonalLu> {
        TridiagonalLu::new(self)
    }

    /// Factor and solve in one go.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor()?.solve(rhs)
    }
}

/// LU factors of a tridiagonal matrix without pivoting. Intended for
/// diagonally dominant or M-matrix systems.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    // Reciprocal pivots.
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.len();
        let mut inv_pivot = vec![0.0; n];
        let mut prev_ratio = 0.0;
        for i in 0..n {
            let pivot = if i == 0 {
                m.diag[0]
            } else {
                m.diag[i] - m.lower[i] * prev_ratio
            };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Solver { row: i, pivot });
            }
            inv_pivot[i] = 1.0 / pivot;
            prev_ratio = m.upper[i] * inv_pivot[i];
        }
        Ok(Self {
            lower: m.lower.clone(),
            inv_pivot,
            upper: m.upper.clone(),
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        let n = self.inv_pivot.len();
        if x.len() != n {
            return Err(Error::InvalidInput(format!(
                "rhs length {} does not match system size {n}",
                x.len()
            )));
        }
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * self.inv_pivot[i] * x[i + 1];
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Solver {
                row: i,
                pivot: 1.0 / self.inv_pivot[i],
            });
        }
        Ok(())
    }
}
