//! Initial data: simple profiles and the concentrated family
//! `u₀ = a·ū_λ·φ_{r,r₁}` with `ū_λ(ξ) = 8λ²/(1+λ²ξ²)²`, used to push the
//! energy below any prescribed level.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{energy, entropy, linear_fit};
use crate::elliptic::HelmholtzOperator;
use crate::error::{Error, Result};
use crate::grid::{Field, Geometry, RadialGrid};
use crate::par::{self, Execution};

/// Largest admissible `λh`: beyond it `ū_λ` at the first cell centre is less
/// than half its value at the origin.
pub fn max_lambda_h() -> f64 {
    2.0 * (2f64.sqrt() - 1.0).sqrt()
}

pub fn ubar(lambda: f64, xi: f64) -> f64 {
    let q = 1.0 + lambda * lambda * xi * xi;
    8.0 * lambda * lambda / (q * q)
}

/// `∫_{B_ℓ} ū_λ = 8π(1 − 1/(1+(λℓ)²))`.
pub fn ubar_mass(lambda: f64, ell: f64) -> f64 {
    let q = (lambda * ell).powi(2);
    8.0 * PI * q / (1.0 + q)
}

/// Exact cell averages of `ū_λ` on a disk grid.
pub fn ubar_cell_averages(grid: &RadialGrid, lambda: f64) -> Vec<f64> {
    let l2 = lambda * lambda;
    let faces = grid.faces();
    grid.cell_measures()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let (a, b) = (faces[i], faces[i + 1]);
            // 8π[1/(1+λ²a²) − 1/(1+λ²b²)] without cancellation.
            let m = 8.0 * PI * l2 * (b - a) * (b + a) / ((1.0 + l2 * a * a) * (1.0 + l2 * b * b));
            m / w
        })
        .collect()
}

/// Radial cutoff: 1 on `[0, r₁]`, 0 on `[r, ∞)`, quintic smoothstep between.
pub fn bump(r: f64, r1: f64, xi: f64) -> f64 {
    if xi <= r1 {
        1.0
    } else if xi >= r {
        0.0
    } else {
        let s = (xi - r1) / (r - r1);
        (1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))).clamp(0.0, 1.0)
    }
}

/// Parameters of the concentrated family. `a` is not an input: it is fixed
/// by mass matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupRecipe {
    /// Target mass Λ.
    pub mass: f64,
    pub lambda: f64,
    pub r: f64,
    pub r1: f64,
}

impl BlowupRecipe {
    pub fn validate(&self) -> Result<()> {
        let q = self.mass / (4.0 * PI);
        if !(self.mass > 8.0 * PI) || !self.mass.is_finite() {
            return Err(Error::Config(format!("blowup mass {} must exceed 8π", self.mass)));
        }
        if (q - q.round()).abs() < 1e-9 {
            return Err(Error::Config(format!(
                "blowup mass {} is a multiple of 4π",
                self.mass
            )));
        }
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be >= 1", self.lambda)));
        }
        if !(0.0 < self.r1 && self.r1 < self.r) {
            return Err(Error::Config(format!(
                "cutoff radii need 0 < r1 < r, got r1 = {}, r = {}",
                self.r1, self.r
            )));
        }
        Ok(())
    }

    /// `f(λ) = 1 − 1/(1+(λr₁)²)`.
    pub fn f(&self, lambda: f64) -> f64 {
        let q = (lambda * self.r1).powi(2);
        q / (1.0 + q)
    }

    /// Open interval `(Λ/8π, Λ/(8π f(1)))` containing the amplitude.
    pub fn a_bracket(&self) -> (f64, f64) {
        let lo = self.mass / (8.0 * PI);
        (lo, lo / self.f(1.0))
    }
}

/// Smallest `n_cells` on `[0, radius]` that resolves `ū_λ`.
pub fn required_cells(lambda: f64, radius: f64) -> usize {
    (lambda * radius / max_lambda_h()).ceil() as usize
}

pub fn check_resolved(lambda: f64, grid: &RadialGrid) -> Result<()> {
    if lambda * grid.h() > max_lambda_h() {
        return Err(Error::Unresolved {
            lambda,
            n_cells: grid.n_cells(),
            required: required_cells(lambda, grid.geometry().extent()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Construction {
    pub recipe: BlowupRecipe,
    pub a: f64,
    pub u0: Field,
    pub v0: Field,
}

/// Builds `u₀ = a·ū_λ·φ_{r,r₁}` with `∫u₀ = Λ` and `v₀ = (I−Δ)^{-1}u₀`.
///
/// `ū_λ` enters through exact cell averages, the cutoff through point
/// values. Only disk grids are accepted.
pub fn construct_blowup(recipe: &BlowupRecipe, helmholtz: &HelmholtzOperator) -> Result<Construction> {
    recipe.validate()?;
    let grid = helmholtz.grid();
    let radius = match grid.geometry() {
        Geometry::Disk { radius } => radius,
        Geometry::Interval { .. } => {
            return Err(Error::Config("the blowup family needs a disk grid".into()))
        }
    };
    if recipe.r >= radius {
        return Err(Error::Config(format!(
            "cutoff radius r = {} must be below the domain radius {radius}",
            recipe.r
        )));
    }
    check_resolved(recipe.lambda, grid)?;
    let profile: Vec<f64> = ubar_cell_averages(grid, recipe.lambda)
        .iter()
        .zip(grid.centers())
        .map(|(u, &x)| u * bump(recipe.r, recipe.r1, x))
        .collect();
    let a = recipe.mass / grid.integrate(&profile);
    let (lo, hi) = recipe.a_bracket();
    if !(lo < a && a < hi) {
        return Err(Error::InvalidInput(format!(
            "amplitude a = {a} outside ({lo}, {hi}); refine the grid"
        )));
    }
    let mut u0 = Field::new(grid.clone(), profile.iter().map(|p| a * p).collect())?;
    rescale_mass(&mut u0, recipe.mass)?;
    let v0 = helmholtz.solve(&u0)?;
    Ok(Construction {
        recipe: *recipe,
        a,
        u0,
        v0,
    })
}

/// Multiplies `u` so that it integrates to `mass`.
pub fn rescale_mass(u: &mut Field, mass: f64) -> Result<()> {
    let current = u.integrate();
    if !(current > 0.0) {
        return Err(Error::InvalidInput("cannot rescale a field with zero mass".into()));
    }
    u.scale(mass / current);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticsRow {
    pub lambda: f64,
    pub a: f64,
    pub entropy: f64,
    pub interaction: f64,
    pub energy: f64,
}

/// Fitted log-λ slopes and the envelopes they are compared with.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsReport {
    pub mass: f64,
    pub rows: Vec<AsymptoticsRow>,
    /// λ values skipped as under-resolved.
    pub excluded: Vec<f64>,
    /// Mean amplitude over the fitted rows.
    pub a: f64,
    pub entropy_slope: f64,
    pub interaction_slope: f64,
    pub energy_slope: f64,
    /// `16aπ(1+δ)`.
    pub entropy_envelope: f64,
    /// `32πa²(1−δ)`.
    pub interaction_envelope: f64,
    /// `−2Λ(Λ/8π − 1)`.
    pub energy_envelope: f64,
}

/// Relative slack of the fitted slopes against the envelopes.
pub const FIT_TOLERANCE: f64 = 0.05;

impl AsymptoticsReport {
    pub fn entropy_ok(&self) -> bool {
        self.entropy_slope <= self.entropy_envelope
    }

    pub fn interaction_ok(&self) -> bool {
        self.interaction_slope >= self.interaction_envelope
    }

    pub fn energy_ok(&self) -> bool {
        self.energy_slope <= self.energy_envelope
    }
}

/// Builds the family for each λ and fits entropy, interaction and energy
/// against `log λ`.
pub fn verify_construction_asymptotics(
    mass: f64,
    lambdas: &[f64],
    r: f64,
    r1: f64,
    helmholtz: &HelmholtzOperator,
) -> Result<AsymptoticsReport> {
    verify_construction_asymptotics_with(Execution::default(), mass, lambdas, r, r1, helmholtz)
}

pub fn verify_construction_asymptotics_with(
    exec: Execution,
    mass: f64,
    lambdas: &[f64],
    r: f64,
    r1: f64,
    helmholtz: &HelmholtzOperator,
) -> Result<AsymptoticsReport> {
    let (lo, hi) = lambdas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if lambdas.len() < 2 || !(hi / lo >= 100.0) {
        return Err(Error::Config(
            "asymptotics need lambda values spanning at least two decades".into(),
        ));
    }
    let built = par::map(exec, lambdas, |&lambda| {
        let recipe = BlowupRecipe { mass, lambda, r, r1 };
        construct_blowup(&recipe, helmholtz).map(|c| row_of(&c))
    });
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (lambda, res) in lambdas.iter().zip(built) {
        match res {
            Ok(row) => rows.push(row),
            Err(Error::Unresolved { required, .. }) => {
                log::warn!("lambda = {lambda:e} under-resolved (needs {required} cells); excluded from fit");
                excluded.push(*lambda);
            }
            Err(e) => return Err(e),
        }
    }
    if rows.len() < 2 {
        return Err(Error::Config(
            "fewer than two resolvable lambda values; refine the grid".into(),
        ));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.lambda.ln()).collect();
    let slope = |f: fn(&AsymptoticsRow) -> f64| {
        let y: Vec<f64> = rows.iter().map(f).collect();
        linear_fit(&x, &y).0
    };
    let a = rows.iter().map(|r| r.a).sum::<f64>() / rows.len() as f64;
    Ok(AsymptoticsReport {
        mass,
        entropy_slope: slope(|r| r.entropy),
        interaction_slope: slope(|r| r.interaction),
        energy_slope: slope(|r| r.energy),
        entropy_envelope: 16.0 * a * PI * (1.0 + FIT_TOLERANCE),
        interaction_envelope: 32.0 * PI * a * a * (1.0 - FIT_TOLERANCE),
        energy_envelope: -2.0 * mass * (mass / (8.0 * PI) - 1.0),
        a,
        rows,
        excluded,
    })
}

fn row_of(c: &Construction) -> AsymptoticsRow {
    let grid = c.u0.grid();
    let (u, v) = (c.u0.values(), c.v0.values());
    AsymptoticsRow {
        lambda: c.recipe.lambda,
        a: c.a,
        entropy: entropy(grid, u),
        interaction: grid.inner(u, v),
        energy: energy(grid, u, v),
    }
}

/// Smooth radial profiles, sampled at cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Constant { c: f64 },
    /// `amp·exp(−(ξ/width)²)`.
    GaussianBump { amp: f64, width: f64 },
    /// `c(1 + ε cos(πξ/R))` with `R` the domain extent.
    Perturbed { c: f64, eps: f64 },
}

impl Profile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Constant { c } => c >= 0.0 && c.is_finite(),
            Profile::GaussianBump { amp, width } => amp > 0.0 && width > 0.0 && amp.is_finite(),
            Profile::Perturbed { c, eps } => c > 0.0 && c.is_finite() && eps.abs() <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid initial profile {self:?}")))
        }
    }

    pub fn eval(&self, xi: f64, extent: f64) -> f64 {
        match *self {
            Profile::Constant { c } => c,
            Profile::GaussianBump { amp, width } => amp * (-(xi / width).powi(2)).exp(),
            Profile::Perturbed { c, eps } => c * (1.0 + eps * (PI * xi / extent).cos()),
        }
    }
}

pub fn standard_profile(profile: &Profile, grid: Arc<RadialGrid>) -> Result<Field> {
    profile.validate()?;
    let extent = grid.geometry().extent();
    let field = Field::from_fn(grid, |x| profile.eval(x, extent))?;
    if field.min() < 0.0 {
        return Err(Error::Config(format!("profile {profile:?} takes negative values")));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn helm(n: usize) -> HelmholtzOperator {
        HelmholtzOperator::new(RadialGrid::shared(Geometry::Disk { radius: 1.0 }, n).unwrap()).unwrap()
    }

    fn recipe(lambda: f64) -> BlowupRecipe {
        BlowupRecipe {
            mass: 10.0 * PI,
            lambda,
            r: 0.5,
            r1: 0.25,
        }
    }

    #[test]
    fn ubar_values() {
        assert_eq!(ubar(1.0, 0.0), 8.0);
        assert!((ubar(2.0, 1.0) - 32.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn ubar_ball_mass_converges_at_second_order() {
        let err = |n: usize| {
            let g = RadialGrid::new(Geometry::Disk { radius: 1.0 }, n).unwrap();
            let pts: Vec<f64> = g.centers().iter().map(|&x| ubar(10.0, x)).collect();
            (g.integrate(&pts) - ubar_mass(10.0, 1.0)).abs()
        };
        let r = err(512) / err(1024);
        assert!((3.5..=4.5).contains(&r), "{r}");
        let g = RadialGrid::new(Geometry::Disk { radius: 1.0 }, 64).unwrap();
        let exact = g.integrate(&ubar_cell_averages(&g, 10.0));
        assert!((exact - ubar_mass(10.0, 1.0)).abs() < 1e-12 * exact);
    }

    #[test]
    fn bump_properties() {
        assert_eq!(bump(0.5, 0.25, 0.1), 1.0);
        assert_eq!(bump(0.5, 0.25, 0.25), 1.0);
        assert_eq!(bump(0.5, 0.25, 0.5), 0.0);
        assert_eq!(bump(0.5, 0.25, 0.9), 0.0);
        assert!((bump(0.5, 0.25, 0.375) - 0.5).abs() < 1e-15);
        let h = 1e-7;
        for k in 0..1000 {
            let x = 0.6 * k as f64 / 999.0;
            assert!(bump(0.5, 0.25, x + h) - bump(0.5, 0.25, x) <= 0.0);
        }
    }

    #[test]
    fn amplitude_in_bracket() {
        let h = helm(4096);
        let (lo, hi) = recipe(10.0).a_bracket();
        assert!((lo - 1.25).abs() < 1e-15);
        assert!((hi - 1.25 / (1.0 - 1.0 / 1.0625)).abs() < 1e-12);
        let c10 = construct_blowup(&recipe(10.0), &h).unwrap();
        let c100 = construct_blowup(&recipe(100.0), &h).unwrap();
        assert!(lo < c10.a && c10.a < hi);
        assert!(lo < c100.a && c100.a < c10.a);
        for c in [&c10, &c100] {
            assert!((c.u0.integrate() - 10.0 * PI).abs() < 1e-12 * 10.0 * PI);
            let dv = (c.v0.integrate() - 10.0 * PI).abs() / (10.0 * PI);
            // The solve loses about cond(A)·ε ≈ 1e-9 on this grid.
            assert!(dv < 1e-9, "{dv}");
            assert!(c.v0.min() >= 0.0);
            assert_eq!(c.v0.max(), c.v0[0]);
        }
    }

    #[test]
    fn energy_decreases_along_lambda() {
        let h = helm(2048);
        let e: Vec<f64> = [10.0, 30.0, 100.0, 300.0, 1000.0]
            .iter()
            .map(|&l| row_of(&construct_blowup(&recipe(l), &h).unwrap()).energy)
            .collect();
        assert!(e.windows(2).all(|p| p[1] < p[0]), "{e:?}");
    }

    #[test]
    fn rejects_bad_recipes() {
        let h = helm(256);
        let bad = |r: BlowupRecipe| construct_blowup(&r, &h).is_err();
        assert!(bad(BlowupRecipe { mass: 12.0 * PI, ..recipe(10.0) }));
        assert!(bad(BlowupRecipe { mass: 7.0 * PI, ..recipe(10.0) }));
        assert!(bad(BlowupRecipe { r1: 0.6, ..recipe(10.0) }));
        assert!(bad(BlowupRecipe { r: 1.0, ..recipe(10.0) }));
        assert!(bad(BlowupRecipe { lambda: 0.5, ..recipe(10.0) }));
        match construct_blowup(&recipe(1e4), &h) {
            Err(Error::Unresolved { required, .. }) => {
                assert_eq!(required, required_cells(1e4, 1.0));
                let ok = helm(required);
                assert!(construct_blowup(&recipe(1e4), &ok).is_ok());
            }
            other => panic!("{other:?}"),
        }
        let line = HelmholtzOperator::new(RadialGrid::shared(Geometry::Interval { length: 1.0 }, 64).unwrap()).unwrap();
        assert!(construct_blowup(&recipe(10.0), &line).is_err());
    }

    #[test]
    fn resolvability_threshold_is_half_height() {
        let x = 0.5 * max_lambda_h();
        assert!((ubar(1.0, x) / ubar(1.0, 0.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn asymptotics_small_family() {
        let h = helm(2048);
        let rep = verify_construction_asymptotics(10.0 * PI, &[10.0, 100.0, 1000.0, 1e5], 0.5, 0.25, &h).unwrap();
        assert_eq!(rep.excluded, vec![1e5]);
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.energy_slope < 0.0);
        assert!(verify_construction_asymptotics(10.0 * PI, &[10.0, 50.0], 0.5, 0.25, &h).is_err());
    }

    #[test]
    fn profiles() {
        let g = RadialGrid::shared(Geometry::Disk { radius: 1.0 }, 32).unwrap();
        let one = standard_profile(&Profile::Constant { c: 1.0 }, g.clone()).unwrap();
        assert!(one.values().iter().all(|&x| x == 1.0));
        let p = standard_profile(&Profile::Perturbed { c: 1.0, eps: 0.0 }, g.clone()).unwrap();
        assert_eq!(p.values(), one.values());
        assert!(standard_profile(&Profile::Constant { c: -1.0 }, g.clone()).is_err());
        assert!(standard_profile(&Profile::Perturbed { c: 1.0, eps: 1.5 }, g).is_err());
    }

    proptest! {
        #[test]
        fn constructions_have_exact_mass(lambda in 1.0f64..300.0, q in 2.05f64..3.9, r1 in 0.05f64..0.4) {
            let h = helm(512);
            let rec = BlowupRecipe { mass: 4.0 * PI * q, lambda, r: r1 + 0.3, r1 };
            if let Ok(c) = construct_blowup(&rec, &h) {
                prop_assert!((c.u0.integrate() - rec.mass).abs() <= 1e-12 * rec.mass);
                prop_assert!(c.u0.min() >= 0.0);
            }
        }
    }
}
