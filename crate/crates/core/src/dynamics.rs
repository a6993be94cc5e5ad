//! Time integration of `u_t = Δ(γ(v)u) + μu(1−u)`, `v = (I − Δ)^{-1}u`.
//!
//! The transport term is discretised in flux form so that the scheme conserves
//! `Σ w_i u_i` exactly (up to roundoff) when `μ = 0`. Two face fluxes are
//! available:
//!
//! * [`FluxForm::Conservative`]: `F = ∂_h(γ(v)u)`, the discrete counterpart of
//!   `∇·(∇(γ(v)u))`. Implicit in `u` it is an M-matrix for any `dt`, and with
//!   `γ = e^{-v}` it dissipates the discrete Lyapunov functional.
//! * [`FluxForm::Upwind`]: `F = γ_f ∂_h u + u_up γ'_f ∂_h v`, the expanded form
//!   `γ∇u + uγ'(v)∇v` with the advective part upwinded. First order in space.
//!
//! The semi-implicit stepper freezes `v` (and therefore `γ(v)`) at the old
//! time level, solves one tridiagonal system for the new `u`, applies the
//! logistic term through its closed-form flow, and finally refreshes `v`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::HelmholtzOperator;
use crate::error::{Error, Result};
use crate::grid::{Field, RadialGrid};
use crate::motility::Motility;
use crate::tridiag::Tridiagonal;

/// Relative roundoff allowance for negative densities.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    SemiImplicit,
    ExplicitRk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxForm {
    #[default]
    Conservative,
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub stepper: Stepper,
    #[serde(default)]
    pub flux: FluxForm,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
    pub t_end: f64,
    #[serde(default = "default_overflow_cap")]
    pub overflow_cap: f64,
}

fn default_overflow_cap() -> f64 {
    1e12
}

impl SchemeConfig {
    /// Semi-implicit scheme with a fixed step `dt` up to `t_end`.
    pub fn semi_implicit(dt: f64, t_end: f64) -> Self {
        Self {
            stepper: Stepper::SemiImplicit,
            flux: FluxForm::Conservative,
            dt_init: dt,
            dt_min: dt * 1e-6,
            dt_max: dt,
            cfl_safety: 0.5,
            t_end,
            overflow_cap: default_overflow_cap(),
        }
    }

    /// Heun scheme with steps capped by `dt_max` and the parabolic CFL bound.
    pub fn explicit_rk2(dt_max: f64, t_end: f64) -> Self {
        Self {
            stepper: Stepper::ExplicitRk2,
            flux: FluxForm::Conservative,
            dt_init: dt_max,
            dt_min: dt_max * 1e-9,
            dt_max,
            cfl_safety: 0.4,
            t_end,
            overflow_cap: default_overflow_cap(),
        }
    }

    pub fn with_flux(mut self, flux: FluxForm) -> Self {
        self.flux = flux;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min < self.dt_init
            && self.dt_init <= self.dt_max
            && self.dt_max.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "time steps must satisfy 0 < dt_min < dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 0.9) {
            return Err(Error::Config(format!(
                "cfl_safety must lie in (0, 0.9], got {}",
                self.cfl_safety
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        if !(self.overflow_cap > 0.0) {
            return Err(Error::Config("overflow_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Finished,
    /// `‖u‖_∞` exceeded the overflow cap or the flux became non-finite.
    /// This is a resolution failure, not evidence of finite-time blowup.
    Overflow,
    /// The step controller was pushed below `dt_min`.
    DtCollapse,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Finished => "finished",
            Status::Overflow => "overflow",
            Status::DtCollapse => "dt_collapse",
        }
    }

    /// Exit code of a run that stopped in this state.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Running => crate::error::exit::INTERNAL,
            Status::Finished => crate::error::exit::OK,
            Status::Overflow => crate::error::exit::OVERFLOW,
            Status::DtCollapse => crate::error::exit::DT_COLLAPSE,
        }
    }
}

/// One snapshot of the evolution. `v` always equals `(I − Δ)^{-1} u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    pub step: u64,
    pub dt_last: f64,
    /// Step size the controller will try next.
    pub dt_target: f64,
    pub status: Status,
}

impl SimState {
    pub fn mass(&self) -> f64 {
        self.u.integrate()
    }
}

/// Hooks invoked by [`Simulator::run`].
pub trait Observer {
    fn on_start(&mut self, _state: &SimState) -> Result<()> {
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, _next: &SimState) -> Result<()> {
        Ok(())
    }

    fn on_finish(&mut self, _state: &SimState) -> Result<()> {
        Ok(())
    }

    /// Called before an error propagates out of `run`, so that buffered output
    /// can be flushed.
    fn on_abort(&mut self, _state: &SimState, _error: &Error) {}
}

impl Observer for () {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn on_start(&mut self, state: &SimState) -> Result<()> {
        (**self).on_start(state)
    }

    fn on_step(&mut self, prev: &SimState, next: &SimState) -> Result<()> {
        (**self).on_step(prev, next)
    }

    fn on_finish(&mut self, state: &SimState) -> Result<()> {
        (**self).on_finish(state)
    }

    fn on_abort(&mut self, state: &SimState, error: &Error) {
        (**self).on_abort(state, error)
    }
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn on_start(&mut self, state: &SimState) -> Result<()> {
        self.0.on_start(state)?;
        self.1.on_start(state)
    }

    fn on_step(&mut self, prev: &SimState, next: &SimState) -> Result<()> {
        self.0.on_step(prev, next)?;
        self.1.on_step(prev, next)
    }

    fn on_finish(&mut self, state: &SimState) -> Result<()> {
        self.0.on_finish(state)?;
        self.1.on_finish(state)
    }

    fn on_abort(&mut self, state: &SimState, error: &Error) {
        self.0.on_abort(state, error);
        self.1.on_abort(state, error);
    }
}

/// Evaluates `γ(v_i)` and `γ'(v_i)` on every cell, failing if `v` leaves the
/// motility's validity range.
pub fn motility_on_cells(m: &Motility, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Vec::with_capacity(v.len());
    let mut dg = Vec::with_capacity(v.len());
    for &s in v {
        let e = m.eval(s)?;
        g.push(e.gamma);
        dg.push(e.d1);
    }
    Ok((g, dg))
}

/// Face fluxes approximating `γ(v)∂u + uγ'(v)∂v`, zero on both boundary faces.
pub fn assemble_flux(
    grid: &RadialGrid,
    u: &[f64],
    v: &[f64],
    m: &Motility,
    form: FluxForm,
) -> Result<Vec<f64>> {
    let (g, dg) = motility_on_cells(m, v)?;
    let n = grid.n_cells();
    let h = grid.h();
    let mut flux = vec![0.0; n + 1];
    for f in 1..n {
        let (l, r) = (f - 1, f);
        flux[f] = match form {
            FluxForm::Conservative => (g[r] * u[r] - g[l] * u[l]) / h,
            FluxForm::Upwind => {
                let gf = 0.5 * (g[l] + g[r]);
                let c = 0.5 * (dg[l] + dg[r]) * (v[r] - v[l]) / h;
                let upwind = if c > 0.0 { u[r] } else { u[l] };
                gf * (u[r] - u[l]) / h + c * upwind
            }
        };
    }
    if let Some(f) = flux.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite flux at face {f}")));
    }
    Ok(flux)
}

/// Tridiagonal `L` with `(L u)_i = div_h F(u)_i` for `v` frozen.
pub fn transport_operator(
    grid: &RadialGrid,
    v: &[f64],
    m: &Motility,
    form: FluxForm,
) -> Result<Tridiagonal> {
    let (g, dg) = motility_on_cells(m, v)?;
    let n = grid.n_cells();
    let h = grid.h();
    let w = grid.cell_measures();
    let s = grid.face_measures();
    let mut op = Tridiagonal::zeros(n);
    // Each interior face f between cells l = f-1 and r = f contributes
    // F_f = a_r u_r + a_l u_l to cell l (sign +) and cell r (sign −).
    for f in 1..n {
        let (l, r) = (f - 1, f);
        let (a_l, a_r) = match form {
            FluxForm::Conservative => (-g[l] / h, g[r] / h),
            FluxForm::Upwind => {
                let gf = 0.5 * (g[l] + g[r]);
                let c = 0.5 * (dg[l] + dg[r]) * (v[r] - v[l]) / h;
                (-gf / h + c.min(0.0), gf / h + c.max(0.0))
            }
        };
        let sl = s[f] / w[l];
        op.diag[l] += sl * a_l;
        op.upper[l] += sl * a_r;
        let sr = s[f] / w[r];
        op.lower[r] -= sr * a_l;
        op.diag[r] -= sr * a_r;
    }
    Ok(op)
}

/// Closed-form flow of `y' = μy(1−y)` over `dt`.
pub fn logistic_flow(y0: f64, mu: f64, dt: f64) -> f64 {
    if mu == 0.0 {
        return y0;
    }
    let e = (mu * dt).exp_m1();
    y0 * (1.0 + e) / (1.0 + y0 * e)
}

/// A configured problem: grid, Helmholtz factorisation, motility, `μ`, scheme.
#[derive(Debug, Clone)]
pub struct Simulator {
    grid: Arc<RadialGrid>,
    helmholtz: HelmholtzOperator,
    motility: Motility,
    mu: f64,
    scheme: SchemeConfig,
}

impl Simulator {
    pub fn new(grid: Arc<RadialGrid>, motility: Motility, mu: f64, scheme: SchemeConfig) -> Result<Self> {
        motility.validate()?;
        scheme.validate()?;
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {mu}")));
        }
        let helmholtz = HelmholtzOperator::new(grid.clone())?;
        Ok(Self {
            grid,
            helmholtz,
            motility,
            mu,
            scheme,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn helmholtz(&self) -> &HelmholtzOperator {
        &self.helmholtz
    }

    pub fn motility(&self) -> &Motility {
        &self.motility
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    /// State at `t = 0`. Rejects negative or identically vanishing data.
    pub fn initial_state(&self, u0: Field) -> Result<SimState> {
        if !Arc::ptr_eq(u0.grid(), &self.grid) && **u0.grid() != *self.grid {
            return Err(Error::InvalidInput("initial data lives on a different grid".into()));
        }
        if u0.min() < 0.0 {
            return Err(Error::InvalidInput(format!(
                "initial density must be nonnegative, min is {}",
                u0.min()
            )));
        }
        if u0.max() <= 0.0 {
            return Err(Error::InvalidInput("initial density vanishes identically".into()));
        }
        self.state_at(u0, 0.0, 0, self.scheme.dt_init)
    }

    /// State with `v` recomputed from `u`; used when resuming.
    pub fn state_at(&self, u: Field, t: f64, step: u64, dt_target: f64) -> Result<SimState> {
        let v = self.helmholtz.solve(&u)?;
        let status = if t >= self.scheme.t_end {
            Status::Finished
        } else {
            Status::Running
        };
        Ok(SimState {
            u,
            v,
            t,
            step,
            dt_last: 0.0,
            dt_target,
            status,
        })
    }

    fn reaction(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&x| self.mu * x * (1.0 - x)).collect()
    }

    fn rhs(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let op = transport_operator(&self.grid, v, &self.motility, self.scheme.flux)?;
        let mut r = op.apply(u);
        if self.mu != 0.0 {
            for (ri, q) in r.iter_mut().zip(self.reaction(u)) {
                *ri += q;
            }
        }
        Ok(r)
    }

    /// Largest step the explicit scheme accepts at this `v`.
    pub fn explicit_dt_limit(&self, v: &[f64]) -> Result<f64> {
        let op = transport_operator(&self.grid, v, &self.motility, self.scheme.flux)?;
        let gmax = v
            .iter()
            .map(|&s| self.motility.gamma(s))
            .fold(0.0, f64::max);
        let h = self.grid.h();
        let parabolic = self.scheme.cfl_safety * h * h / (2.0 * gmax);
        let diag = op.diag.iter().fold(0.0f64, |m, d| m.max(d.abs())) + self.mu;
        Ok(parabolic.min(self.scheme.cfl_safety / diag))
    }

    fn accept(u: &[f64]) -> bool {
        let sup = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        u.iter().all(|x| x.is_finite()) && u.iter().all(|&x| x >= -POSITIVITY_TOL * sup)
    }

    fn advance_semi_implicit(&self, u: &[f64], v: &[f64], dt: f64) -> Result<Option<Vec<f64>>> {
        let l = transport_operator(&self.grid, v, &self.motility, self.scheme.flux)?;
        let mut m = l;
        for i in 0..m.len() {
            m.lower[i] *= -dt;
            m.upper[i] *= -dt;
            m.diag[i] = 1.0 - dt * m.diag[i];
        }
        let mut next = match m.solve(u) {
            Ok(x) => x,
            Err(Error::Solver { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !Self::accept(&next) {
            return Ok(None);
        }
        if self.mu != 0.0 {
            next.iter_mut().for_each(|x| *x = logistic_flow(*x, self.mu, dt));
        }
        Ok(Some(next))
    }

    fn advance_rk2(&self, u: &[f64], v: &[f64], dt: f64) -> Result<Option<Vec<f64>>> {
        let k1 = self.rhs(u, v)?;
        let u1: Vec<f64> = u.iter().zip(&k1).map(|(a, k)| a + dt * k).collect();
        if !Self::accept(&u1) {
            return Ok(None);
        }
        let v1 = self.helmholtz.solve_values(&u1)?;
        let k2 = self.rhs(&u1, &v1)?;
        let next: Vec<f64> = u
            .iter()
            .zip(k1.iter().zip(&k2))
            .map(|(a, (p, q))| a + 0.5 * dt * (p + q))
            .collect();
        Ok(Self::accept(&next).then_some(next))
    }

    /// One accepted step. Rejected attempts halve `dt`; falling below
    /// `dt_min` yields [`Status::DtCollapse`].
    pub fn step(&self, state: &SimState) -> Result<SimState> {
        if state.status != Status::Running {
            return Err(Error::InvalidInput(format!(
                "cannot step a state with status {}",
                state.status.name()
            )));
        }
        let cfg = &self.scheme;
        let remaining = cfg.t_end - state.t;
        let mut dt = state.dt_target.min(cfg.dt_max);
        if cfg.stepper == Stepper::ExplicitRk2 {
            dt = dt.min(self.explicit_dt_limit(state.v.values())?);
        }
        let mut reduced = false;
        loop {
            if dt < cfg.dt_min {
                let mut out = state.clone();
                out.status = Status::DtCollapse;
                return Ok(out);
            }
            // The final step lands exactly on t_end.
            let last = remaining <= dt * (1.0 + 1e-6);
            let dt_eff = if last { remaining } else { dt };
            let attempt = match cfg.stepper {
                Stepper::SemiImplicit => self.advance_semi_implicit(state.u.values(), state.v.values(), dt_eff),
                Stepper::ExplicitRk2 => self.advance_rk2(state.u.values(), state.v.values(), dt_eff),
            };
            let u_next = match attempt {
                Ok(Some(u)) => u,
                Ok(None) => {
                    dt *= 0.5;
                    reduced = true;
                    continue;
                }
                Err(Error::InvalidInput(_)) => {
                    // Non-finite flux.
                    let mut out = state.clone();
                    out.status = Status::Overflow;
                    return Ok(out);
                }
                Err(e) => return Err(e),
            };
            let u = Field::new(self.grid.clone(), u_next)?;
            let v = self.helmholtz.solve(&u)?;
            let t = if last { cfg.t_end } else { state.t + dt_eff };
            let status = if u.max() > cfg.overflow_cap {
                Status::Overflow
            } else if last {
                Status::Finished
            } else {
                Status::Running
            };
            let dt_target = if reduced {
                dt
            } else {
                (2.0 * state.dt_target).min(cfg.dt_init).max(dt)
            };
            return Ok(SimState {
                u,
                v,
                t,
                step: state.step + 1,
                dt_last: dt_eff,
                dt_target,
                status,
            });
        }
    }

    /// Steps until `t_end`, overflow or step collapse.
    pub fn run<O: Observer + ?Sized>(&self, mut state: SimState, observer: &mut O) -> Result<SimState> {
        if state.t >= self.scheme.t_end && state.status == Status::Running {
            state.status = Status::Finished;
        }
        if let Err(e) = observer.on_start(&state) {
            observer.on_abort(&state, &e);
            return Err(e);
        }
        while state.status == Status::Running {
            let next = match self.step(&state) {
                Ok(s) => s,
                Err(e) => {
                    observer.on_abort(&state, &e);
                    return Err(e);
                }
            };
            if let Err(e) = observer.on_step(&state, &next) {
                observer.on_abort(&next, &e);
                return Err(e);
            }
            state = next;
        }
        observer.on_finish(&state)?;
        Ok(state)
    }
}
