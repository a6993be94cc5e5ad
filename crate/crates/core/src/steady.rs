//! Stationary states `v − Δv = Λe^v/∫e^v`, `u = Λe^v/∫e^v`, and the energy
//! floor they provide.

use std::io::Write;
use std::path::Path;

use crate::diagnostics::{energy, fmt_f64};
use crate::elliptic::HelmholtzOperator;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::tridiag::Tridiagonal;

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;
pub const BRANCH_SCHEMA: &str = "chemotrap-branch v1";

#[derive(Debug, Clone)]
pub struct SteadyEntry {
    pub mass: f64,
    pub v: Field,
    pub u: Field,
    pub energy: f64,
    /// `‖Av − Λe^v/∫e^v‖_∞` at the returned iterate.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl SteadyEntry {
    pub fn max_v(&self) -> f64 {
        self.v.max()
    }
}

/// `Λe^{v}/∫e^{v}` evaluated with `v` shifted by its maximum.
fn gibbs(h: &HelmholtzOperator, mass: f64, v: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let top = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = v.iter().map(|x| (x - top).exp()).collect();
    let s = h.grid().integrate(&e);
    let u = e.iter().map(|x| mass * x / s).collect();
    (u, e, s)
}

fn residual(h: &HelmholtzOperator, mass: f64, v: &[f64]) -> (Vec<f64>, f64) {
    let (u, _, _) = gibbs(h, mass, v);
    let r: Vec<f64> = h.apply(v).iter().zip(&u).map(|(a, b)| a - b).collect();
    let norm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (r, norm)
}

/// `x = (T + Σ_k u_k v_kᵀ)^{-1} b` by Woodbury, with at most two rank-one
/// terms so the capacitance matrix is solved in closed form.
fn woodbury(t: &Tridiagonal, us: &[&[f64]], vs: &[&[f64]], b: &[f64]) -> Result<Vec<f64>> {
    let lu = t.factor()?;
    let y = lu.solve(b)?;
    let z: Vec<Vec<f64>> = us.iter().map(|u| lu.solve(u)).collect::<Result<_>>()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let k = us.len();
    let mut c = [[0.0; 2]; 2];
    let mut r = [0.0; 2];
    for i in 0..k {
        r[i] = dot(vs[i], &y);
        for j in 0..k {
            c[i][j] = f64::from(u8::from(i == j)) + dot(vs[i], &z[j]);
        }
    }
    let coef = if k == 1 {
        [r[0] / c[0][0], 0.0]
    } else {
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        [
            (c[1][1] * r[0] - c[0][1] * r[1]) / det,
            (c[0][0] * r[1] - c[1][0] * r[0]) / det,
        ]
    };
    let x: Vec<f64> = (0..y.len())
        .map(|i| y[i] - (0..k).map(|j| z[j][i] * coef[j]).sum::<f64>())
        .collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite Newton direction".into()));
    }
    Ok(x)
}

/// Newton correction `J δ = −F` with `J = T + p qᵀ`, `T = A − diag(u)`
/// tridiagonal. `T` is singular on some constant states (e.g. `u ≡ 1`), so a
/// direction that does not solve the system is recomputed with a perturbed
/// last diagonal entry and a compensating second rank-one term.
fn newton_direction(h: &HelmholtzOperator, mass: f64, v: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let (u, e, s) = gibbs(h, mass, v);
    let w = h.grid().cell_measures();
    let mut t = h.matrix().clone();
    for (d, ui) in t.diag.iter_mut().zip(&u) {
        *d -= ui;
    }
    let p: Vec<f64> = e.iter().map(|x| mass * x / (s * s)).collect();
    let q: Vec<f64> = w.iter().zip(&e).map(|(a, b)| a * b).collect();
    let neg_f: Vec<f64> = f.iter().map(|x| -x).collect();
    let apply_j = |d: &[f64]| {
        let qd: f64 = q.iter().zip(d).map(|(a, b)| a * b).sum();
        t.apply(d)
            .iter()
            .zip(&p)
            .map(|(a, b)| a + b * qd)
            .collect::<Vec<f64>>()
    };
    let solves = |d: &[f64]| {
        let r = apply_j(d);
        let err = r.iter().zip(&neg_f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = neg_f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        err <= 1e-6 * scale
    };
    if let Ok(d) = woodbury(&t, &[&p], &[&q], &neg_f) {
        if solves(&d) {
            return Ok(d);
        }
    }
    let n = u.len();
    let alpha = t.diag.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut shifted = t.clone();
    shifted.diag[n - 1] += alpha;
    let mut en = vec![0.0; n];
    en[n - 1] = 1.0;
    let minus_alpha_en: Vec<f64> = en.iter().map(|x| -alpha * x).collect();
    let d = woodbury(&shifted, &[&p, &minus_alpha_en], &[&q, &en], &neg_f)?;
    if !solves(&d) {
        return Err(Error::InvalidInput("Newton system is numerically singular".into()));
    }
    Ok(d)
}

/// Damped Newton from `guess`. Never fails on non-convergence: the entry
/// carries `converged = false` instead.
pub fn newton_steady(mass: f64, helmholtz: &HelmholtzOperator, guess: &Field) -> Result<SteadyEntry> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Config(format!("steady mass {mass} must be positive")));
    }
    let mut v = guess.values().to_vec();
    let (mut f, mut norm) = residual(helmholtz, mass, &v);
    let mut iterations = 0;
    while norm >= NEWTON_TOL && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let d = match newton_direction(helmholtz, mass, &v, &f) {
            Ok(d) => d,
            Err(e) => {
                log::debug!("Newton direction failed at mass {mass}: {e}");
                break;
            }
        };
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let (tf, tn) = residual(helmholtz, mass, &trial);
            if tn < (1.0 - 1e-4 * alpha) * norm || alpha < 1e-3 {
                v = trial;
                f = tf;
                norm = tn;
                break;
            }
            alpha *= 0.5;
        }
    }
    let grid = helmholtz.grid().clone();
    let (u, _, _) = gibbs(helmholtz, mass, &v);
    let u = Field::new(grid.clone(), u)?;
    let v = Field::new(grid.clone(), v)?;
    Ok(SteadyEntry {
        mass,
        energy: energy(&grid, u.values(), v.values()),
        residual: norm,
        converged: norm < NEWTON_TOL,
        iterations,
        u,
        v,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SteadyBranch {
    pub entries: Vec<SteadyEntry>,
}

impl SteadyBranch {
    /// Masses at which Newton did not converge.
    pub fn gaps(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| !e.converged).map(|e| e.mass).collect()
    }

    /// Lowest energy among converged entries at `mass`. This only bounds the
    /// true floor from above: solutions that were not found do not count.
    pub fn best_energy_at(&self, mass: f64) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.converged && (e.mass - mass).abs() <= 1e-12 * mass)
            .map(|e| e.energy)
            .reduce(f64::min)
    }

    pub fn write_csv(&self, path: &Path, tag: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "# {BRANCH_SCHEMA} {tag}").map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mass", "energy", "residual", "converged", "max_v"])?;
        for e in &self.entries {
            w.write_record([
                fmt_f64(e.mass),
                fmt_f64(e.energy),
                fmt_f64(e.residual),
                e.converged.to_string(),
                fmt_f64(e.max_v()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Marches `Λ` over `steps + 1` equally spaced values, warm-starting each
/// Newton solve from the last converged state. With no guess the march starts
/// from the constant solution.
pub fn continuation_sweep(
    mass_start: f64,
    mass_end: f64,
    steps: usize,
    helmholtz: &HelmholtzOperator,
    guess: Option<&Field>,
) -> Result<SteadyBranch> {
    if !(mass_start > 0.0 && mass_end > 0.0) {
        return Err(Error::Config("continuation masses must be positive".into()));
    }
    let grid = helmholtz.grid().clone();
    let mut warm = match guess {
        Some(g) => g.clone(),
        None => Field::constant(grid.clone(), mass_start / grid.measure()),
    };
    let mut branch = SteadyBranch::default();
    for k in 0..=steps {
        let mass = if steps == 0 {
            mass_start
        } else {
            mass_start + (mass_end - mass_start) * k as f64 / steps as f64
        };
        let entry = newton_steady(mass, helmholtz, &warm)?;
        if entry.converged {
            warm = entry.v.clone();
        } else {
            log::warn!("no steady state found at mass {mass} (residual {:e})", entry.residual);
        }
        branch.entries.push(entry);
    }
    Ok(branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Geometry, RadialGrid};
    use std::f64::consts::PI;

    fn helm(n: usize) -> HelmholtzOperator {
        HelmholtzOperator::new(RadialGrid::shared(Geometry::Disk { radius: 1.0 }, n).unwrap()).unwrap()
    }

    #[test]
    fn constant_solutions() {
        let h = helm(64);
        let g = h.grid().clone();
        let e = newton_steady(PI, &h, &Field::constant(g.clone(), 0.9)).unwrap();
        assert!(e.converged);
        assert!(e.v.values().iter().all(|x| (x - 1.0).abs() < 1e-10));
        let e = newton_steady(2.0 * PI, &h, &Field::constant(g.clone(), 2.1)).unwrap();
        assert!(e.converged && (e.v.max() - 2.0).abs() < 1e-10);
        assert!((e.u.integrate() - 2.0 * PI).abs() < 1e-12 * 2.0 * PI);
    }

    #[test]
    fn nonconstant_guess_relaxes() {
        let h = helm(128);
        let guess = Field::from_fn(h.grid().clone(), |x| 2.0 + (PI * x).cos()).unwrap();
        let e = newton_steady(7.0 * PI, &h, &guess).unwrap();
        assert!(e.converged, "{}", e.residual);
        assert!(e.energy.is_finite());
    }

    #[test]
    fn constant_branch_energy() {
        let h = helm(64);
        let b = continuation_sweep(PI, 3.0 * PI, 8, &h, None).unwrap();
        assert!(b.gaps().is_empty());
        for e in &b.entries {
            let c = e.mass / PI;
            let exact = PI * (c * c.ln() - 0.5 * c * c);
            assert!((e.energy - exact).abs() < 1e-8, "{} vs {exact}", e.energy);
            assert_eq!(b.best_energy_at(e.mass), Some(e.energy));
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let h = helm(64);
        let guess = Field::from_fn(h.grid().clone(), |x| 1.0 + 0.5 * (PI * x).cos()).unwrap();
        let a = continuation_sweep(PI, 6.0 * PI, 5, &h, Some(&guess)).unwrap();
        let b = continuation_sweep(PI, 6.0 * PI, 5, &h, Some(&guess)).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.v.values(), y.v.values());
        }
    }

    #[test]
    fn huge_values_do_not_overflow() {
        let h = helm(32);
        let e = newton_steady(PI, &h, &Field::constant(h.grid().clone(), 800.0)).unwrap();
        assert!(e.converged);
    }

    #[test]
    fn rejects_nonpositive_mass() {
        let h = helm(16);
        assert!(newton_steady(0.0, &h, &Field::constant(h.grid().clone(), 1.0)).is_err());
    }
}
