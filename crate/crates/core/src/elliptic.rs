//! Discrete Neumann Helmholtz inverse `(I − Δ)^{-1}`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, RadialGrid};
use crate::tridiag::{Tridiagonal, TridiagonalLu};

/// `A f = f − Δ_h f` with the flux-form Laplacian of the grid, factored once.
///
/// `A` is symmetric in the `w`-weighted inner product, its rows sum to one and
/// it is an M-matrix, so `A^{-1}` is positivity preserving and conserves
/// `Σ w_i f_i`.
#[derive(Debug, Clone)]
pub struct HelmholtzOperator {
    grid: Arc<RadialGrid>,
    matrix: Tridiagonal,
    lu: TridiagonalLu,
}

impl HelmholtzOperator {
    pub fn new(grid: Arc<RadialGrid>) -> Result<Self> {
        let matrix = laplacian_shifted(&grid, 1.0, 1.0);
        let lu = matrix.factor()?;
        Ok(Self { grid, matrix, lu })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// The assembled tridiagonal matrix `A`.
    pub fn matrix(&self) -> &Tridiagonal {
        &self.matrix
    }

    /// `A f` evaluated as `f` minus the divergence of face differences, which
    /// is exact on constants where the assembled rows would cancel `O(1/h²)`
    /// terms.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let lap = self.grid.divergence(&self.grid.face_gradient(f));
        f.iter().zip(lap).map(|(a, l)| a - l).collect()
    }

    /// `(I − Δ)^{-1} f` on raw values.
    pub fn solve_values(&self, f: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = f.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite Helmholtz right-hand side at cell {i}"
            )));
        }
        // A·1 = 1, so peel off the weighted mean and solve only for the
        // fluctuation. Keeps constants exact to roundoff of the mean itself.
        let m = self.grid.integrate(f) / self.grid.measure();
        let shifted: Vec<f64> = f.iter().map(|x| x - m).collect();
        let mut g = self.lu.solve(&shifted)?;
        for x in &mut g {
            *x += m;
        }
        Ok(g)
    }

    /// `(I − Δ)^{-1} f`.
    pub fn solve(&self, f: &Field) -> Result<Field> {
        let g = self.solve_values(f.values())?;
        Field::new(self.grid.clone(), g)
    }

    /// Whether `solve(f1) ≤ solve(f2)` pointwise, up to roundoff relative to
    /// the data. Meant to be called with `f1 ≤ f2`.
    pub fn min_comparison_check(&self, f1: &[f64], f2: &[f64]) -> Result<bool> {
        let g1 = self.solve_values(f1)?;
        let g2 = self.solve_values(f2)?;
        let scale = f1
            .iter()
            .chain(f2)
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        Ok(g1.iter().zip(&g2).all(|(a, b)| a <= &(b + 1e-13 * scale)))
    }
}

/// `identity_coef · I − diffusion · Δ_h` on the grid.
pub(crate) fn laplacian_shifted(grid: &RadialGrid, identity_coef: f64, diffusion: f64) -> Tridiagonal {
    let n = grid.n_cells();
    let h = grid.h();
    let w = grid.cell_measures();
    let s = grid.face_measures();
    let mut m = Tridiagonal::zeros(n);
    for i in 0..n {
        m.diag[i] = identity_coef;
        if i + 1 < n {
            let c = diffusion * s[i + 1] / (h * w[i]);
            m.diag[i] += c;
            m.upper[i] = -c;
        }
        if i > 0 {
            let c = diffusion * s[i] / (h * w[i]);
            m.diag[i] += c;
            m.lower[i] = -c;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Geometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn op(n: usize) -> HelmholtzOperator {
        HelmholtzOperator::new(RadialGrid::shared(Geometry::Disk { radius: 1.0 }, n).unwrap()).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        let a = op(64);
        let g = a.solve_values(&[3.5; 64]).unwrap();
        assert!(g.iter().all(|x| (x - 3.5).abs() < 1e-12 * 3.5));
        let z = a.solve_values(&[0.0; 64]).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rows_sum_to_one() {
        let a = op(32);
        let ones = a.apply(&[1.0; 32]);
        assert!(ones.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_finite() {
        let a = op(16);
        let mut f = vec![1.0; 16];
        f[2] = f64::NAN;
        assert!(a.solve_values(&f).is_err());
    }

    fn mms_error(n: usize) -> f64 {
        let a = op(n);
        let f: Vec<f64> = a
            .grid()
            .centers()
            .iter()
            .map(|&x| (PI * x).cos() * (1.0 + PI * PI) + PI * (PI * x).sin() / x)
            .collect();
        let g = a.solve_values(&f).unwrap();
        a.grid()
            .centers()
            .iter()
            .zip(&g)
            .map(|(&x, &gx)| (gx - (PI * x).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_solution_second_order() {
        let r = mms_error(128) / mms_error(256);
        assert!((3.4..=4.6).contains(&r), "ratio {r}");
    }

    #[test]
    fn residual_mass_and_positivity() {
        let a = op(200);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..10.0)).collect();
        let g = a.solve_values(&f).unwrap();
        let fmax = f.iter().cloned().fold(0.0, f64::max);
        let res = a.apply(&g).iter().zip(&f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(res < 1e-10 * fmax);
        assert!(g.iter().all(|&x| x >= -1e-13 * fmax));
        let (mf, mg) = (a.grid().integrate(&f), a.grid().integrate(&g));
        assert!(((mf - mg) / mf).abs() < 1e-12);
    }

    #[test]
    fn comparison_principle_examples() {
        let a = op(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f2: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..2.0)).collect();
        assert!(a.min_comparison_check(&[0.0; 64], &f2).unwrap());
        // γ(v)u ≤ γ(v_*)u for decreasing γ = e^{-v}.
        let u = f2.clone();
        let v = a.solve_values(&u).unwrap();
        let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let lo: Vec<f64> = u.iter().zip(&v).map(|(u, v)| (-v).exp() * u).collect();
        let hi: Vec<f64> = u.iter().map(|u| (-vmin).exp() * u).collect();
        assert!(a.min_comparison_check(&lo, &hi).unwrap());
    }

    #[test]
    fn comparison_principle_random_pairs() {
        let a = op(48);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let f1: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f2: Vec<f64> = f1.iter().map(|x| x + rng.gen_range(0.0..1.0)).collect();
            assert!(a.min_comparison_check(&f1, &f2).unwrap());
        }
    }

    proptest! {
        #[test]
        fn self_adjoint_and_mean_preserving(
            f in proptest::collection::vec(-5.0f64..5.0, 24),
            g in proptest::collection::vec(-5.0f64..5.0, 24),
        ) {
            let a = HelmholtzOperator::new(
                RadialGrid::shared(Geometry::Disk { radius: 0.7 }, 24).unwrap()).unwrap();
            let grid = a.grid().clone();
            let af = a.solve_values(&f).unwrap();
            let ag = a.solve_values(&g).unwrap();
            let lhs = grid.inner(&af, &g);
            let rhs = grid.inner(&f, &ag);
            let scale = grid.inner(&f.iter().map(|x| x.abs()).collect::<Vec<_>>(), &g.iter().map(|x| x.abs()).collect::<Vec<_>>()).max(1e-300);
            prop_assert!((lhs - rhs).abs() <= 1e-11 * scale);
            let mf = grid.integrate(&f);
            let mg = grid.integrate(&af);
            let mabs = grid.integrate(&f.iter().map(|x| x.abs()).collect::<Vec<_>>());
            prop_assert!((mf - mg).abs() <= 1e-12 * mabs.max(1e-300));
        }
    }
}
