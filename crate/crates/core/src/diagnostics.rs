//! Monitored functionals and residuals.
//!
//! Everything here is a pure function of one or two [`SimState`] snapshots,
//! except [`BoundMonitor`] (which carries the running minimum of `v`) and
//! [`SeriesSink`], the observer that turns a run into a CSV time series.

use std::io::Write;

use crate::dynamics::{Observer, SimState, Status};
use crate::elliptic::HelmholtzOperator;
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::motility::Motility;
use crate::Simulator;

pub const SERIES_SCHEMA: &str = "chemotrap-series v1";

/// Relative change below which a fitted trend is treated as roundoff.
pub const TREND_NOISE_FLOOR: f64 = 1e-11;
/// Minimum number of second-half samples for a trend verdict.
pub const TREND_MIN_SAMPLES: usize = 20;
pub const TREND_MIN_R2: f64 = 0.9;

/// `Σ w_i u_i log u_i` with `0 log 0 = 0`.
pub fn entropy(grid: &RadialGrid, u: &[f64]) -> f64 {
    grid.cell_measures()
        .iter()
        .zip(u)
        .map(|(w, &x)| if x > 0.0 { w * x * x.ln() } else { 0.0 })
        .sum()
}

/// `∫(|∇v|² + v²)`, with `|∇v|²` averaged from the adjacent faces.
pub fn grad_norm(grid: &RadialGrid, v: &[f64]) -> f64 {
    let g2 = grid.cell_gradient_sq(v);
    grid.cell_measures()
        .iter()
        .zip(g2.iter().zip(v))
        .map(|(w, (g, x))| w * (g + x * x))
        .sum()
}

/// Lyapunov functional `∫ u log u + ½|∇v|² + ½v² − uv`.
pub fn energy(grid: &RadialGrid, u: &[f64], v: &[f64]) -> f64 {
    let g2 = grid.cell_gradient_sq(v);
    let w = grid.cell_measures();
    (0..u.len())
        .map(|i| {
            let ulogu = if u[i] > 0.0 { u[i] * u[i].ln() } else { 0.0 };
            w[i] * (ulogu + 0.5 * g2[i] + 0.5 * v[i] * v[i] - u[i] * v[i])
        })
        .sum()
}

/// `∫ uγ(v)|∇log u − ∇v|²`, evaluated face by face with the arithmetic mean
/// of `uγ(v)` as face weight. Faces next to cells with `u < 1e-14 ‖u‖_∞`
/// contribute nothing.
pub fn dissipation(grid: &RadialGrid, u: &[f64], v: &[f64], m: &Motility) -> f64 {
    let n = grid.n_cells();
    let h = grid.h();
    let s = grid.face_measures();
    let umax = u.iter().fold(0.0f64, |a, &x| a.max(x));
    let floor = 1e-14 * umax;
    let mut d = 0.0;
    for f in 1..n {
        let (l, r) = (f - 1, f);
        if u[l] < floor || u[r] < floor || u[l] <= 0.0 || u[r] <= 0.0 {
            continue;
        }
        let weight = 0.5 * (u[l] * m.gamma(v[l]) + u[r] * m.gamma(v[r]));
        let g = ((u[r].ln() - u[l].ln()) - (v[r] - v[l])) / h;
        d += s[f] * h * weight * g * g;
    }
    d
}

/// Sup norm of the discrete residual of
/// `v_t + γ(v)u + μ(I−Δ)^{-1}[u²] = (I−Δ)^{-1}[γ(v)u + μu]`, with `v_t` a
/// forward difference between two consecutive states and all other terms at
/// the older state.
pub fn key_identity_residual(
    prev: &SimState,
    next: &SimState,
    m: &Motility,
    mu: f64,
    helmholtz: &HelmholtzOperator,
) -> Result<f64> {
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "key identity needs increasing times, got dt = {dt}"
        )));
    }
    let u = prev.u.values();
    let (v0, v1) = (prev.v.values(), next.v.values());
    let gu: Vec<f64> = u.iter().zip(v0).map(|(&a, &s)| m.gamma(s) * a).collect();
    let source: Vec<f64> = gu.iter().zip(u).map(|(g, a)| g + mu * a).collect();
    let rhs = helmholtz.solve_values(&source)?;
    let quad = if mu != 0.0 {
        let sq: Vec<f64> = u.iter().map(|a| a * a).collect();
        helmholtz.solve_values(&sq)?
    } else {
        vec![0.0; u.len()]
    };
    Ok((0..u.len())
        .map(|i| ((v1[i] - v0[i]) / dt + gu[i] + mu * quad[i] - rhs[i]).abs())
        .fold(0.0, f64::max))
}

/// Tracks the pointwise upper bounds for `v`:
///
/// * exponential envelope `v(x,t) ≤ v₀(x) e^{(γ(v_*)+μ)t}`,
/// * uniform bound `v(x,t) ≤ v₀(x) + μ/(μ − γ(v_*))` when `μ > γ(v_*)`,
///
/// with `v_*` the running minimum of `v` over the trajectory so far. Margins
/// are `min (bound − v)`; negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMonitor {
    v0: Vec<f64>,
    v_star: f64,
    mu: f64,
    window: Margins,
    overall: Margins,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub pte1: f64,
    /// `None` while `μ ≤ γ(v_*)` for every observed state.
    pub pte3: Option<f64>,
}

impl Margins {
    const EMPTY: Margins = Margins {
        pte1: f64::INFINITY,
        pte3: None,
    };

    fn merge(&mut self, pte1: f64, pte3: Option<f64>) {
        self.pte1 = self.pte1.min(pte1);
        if let Some(m) = pte3 {
            self.pte3 = Some(self.pte3.map_or(m, |x| x.min(m)));
        }
    }
}

impl BoundMonitor {
    pub fn new(initial: &SimState, mu: f64) -> Self {
        Self::restore(initial.v.values().to_vec(), initial.v.min(), mu)
    }

    /// Rebuilds a monitor from checkpointed `v₀` and `v_*`.
    pub fn restore(v0: Vec<f64>, v_star: f64, mu: f64) -> Self {
        Self {
            v0,
            v_star,
            mu,
            window: Margins::EMPTY,
            overall: Margins::EMPTY,
        }
    }

    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    pub fn v_star(&self) -> f64 {
        self.v_star
    }

    pub fn observe(&mut self, state: &SimState, m: &Motility) {
        let v = state.v.values();
        self.v_star = self.v_star.min(state.v.min());
        let g_star = m.gamma(self.v_star);
        let growth = ((g_star + self.mu) * state.t).exp();
        let pte1 = self
            .v0
            .iter()
            .zip(v)
            .map(|(a, b)| a * growth - b)
            .fold(f64::INFINITY, f64::min);
        let pte3 = (self.mu > g_star).then(|| {
            let lift = self.mu / (self.mu - g_star);
            self.v0
                .iter()
                .zip(v)
                .map(|(a, b)| a + lift - b)
                .fold(f64::INFINITY, f64::min)
        });
        self.window.merge(pte1, pte3);
        self.overall.merge(pte1, pte3);
    }

    /// Margins accumulated since the previous call.
    pub fn take_window(&mut self) -> Margins {
        std::mem::replace(&mut self.window, Margins::EMPTY)
    }

    pub fn overall(&self) -> Margins {
        self.overall
    }
}

/// Runs a [`BoundMonitor`] over a stored trajectory and returns the overall
/// margins.
pub fn check_pte_bounds(trajectory: &[SimState], m: &Motility, mu: f64) -> Option<Margins> {
    let first = trajectory.first()?;
    let mut mon = BoundMonitor::new(first, mu);
    for s in trajectory {
        mon.observe(s, m);
    }
    Some(mon.overall())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsConfig {
    /// Emit a row every this many steps (and always at the first and last state).
    pub every_steps: u64,
    pub alphas: Vec<f64>,
    pub lp: Vec<f64>,
}

/// One row of the time series.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub mass_v: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub entropy: f64,
    pub interaction: f64,
    pub grad_norm: f64,
    /// `∫ e^{αv}` for each configured α.
    pub exp_moment: Vec<f64>,
    pub u_inf: f64,
    pub v_inf: f64,
    pub v_min: f64,
    pub lp_norms: Vec<f64>,
    /// NaN on the first row, where no previous state exists.
    pub identity_residual: f64,
    pub bound_margin_pte1: f64,
    /// NaN when the bound does not apply.
    pub bound_margin_pte3: f64,
}

impl DiagnosticsRecord {
    pub fn header(cfg: &DiagnosticsConfig) -> Vec<String> {
        let mut h: Vec<String> = [
            "t",
            "mass",
            "mass_v",
            "energy",
            "dissipation",
            "entropy",
            "interaction",
            "grad_norm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(cfg.alphas.iter().map(|a| format!("exp_moment_a{a}")));
        h.extend(["u_inf", "v_inf", "v_min"].iter().map(|s| s.to_string()));
        h.extend(cfg.lp.iter().map(|p| format!("lp_norm_p{p}")));
        h.extend(
            ["identity_residual", "bound_margin_pte1", "bound_margin_pte3"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![
            self.t,
            self.mass,
            self.mass_v,
            self.energy,
            self.dissipation,
            self.entropy,
            self.interaction,
            self.grad_norm,
        ];
        v.extend(&self.exp_moment);
        v.extend([self.u_inf, self.v_inf, self.v_min]);
        v.extend(&self.lp_norms);
        v.extend([self.identity_residual, self.bound_margin_pte1, self.bound_margin_pte3]);
        v
    }

    /// Everything that depends on a single state only.
    pub fn from_state(state: &SimState, m: &Motility, cfg: &DiagnosticsConfig) -> Self {
        let grid = state.u.grid();
        let (u, v) = (state.u.values(), state.v.values());
        let w = grid.cell_measures();
        let exp_moment = cfg
            .alphas
            .iter()
            .map(|&a| w.iter().zip(v).map(|(w, x)| w * (a * x).exp()).sum())
            .collect();
        let lp_norms = cfg
            .lp
            .iter()
            .map(|&p| {
                let s: f64 = w.iter().zip(u).map(|(w, x)| w * x.abs().powf(p)).sum();
                s.powf(1.0 / p)
            })
            .collect();
        Self {
            t: state.t,
            mass: grid.integrate(u),
            mass_v: grid.integrate(v),
            energy: energy(grid, u, v),
            dissipation: dissipation(grid, u, v, m),
            entropy: entropy(grid, u),
            interaction: grid.inner(u, v),
            grad_norm: grad_norm(grid, v),
            exp_moment,
            u_inf: state.u.sup_norm(),
            v_inf: state.v.sup_norm(),
            v_min: state.v.min(),
            lp_norms,
            identity_residual: f64::NAN,
            bound_margin_pte1: f64::NAN,
            bound_margin_pte3: f64::NAN,
        }
    }
}

/// Full-precision, locale-free float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Observer that samples [`DiagnosticsRecord`]s along a run, optionally
/// streaming them to CSV.
pub struct SeriesSink<'a> {
    sim: &'a Simulator,
    cfg: DiagnosticsConfig,
    monitor: Option<BoundMonitor>,
    raw: Option<Box<dyn Write + 'a>>,
    writer: Option<csv::Writer<Box<dyn Write + 'a>>>,
    header_comment: String,
    emit_initial: bool,
    keep: bool,
    records: Vec<DiagnosticsRecord>,
}

impl<'a> SeriesSink<'a> {
    pub fn new(sim: &'a Simulator, cfg: DiagnosticsConfig) -> Self {
        Self {
            sim,
            cfg,
            monitor: None,
            raw: None,
            writer: None,
            header_comment: format!("# {SERIES_SCHEMA}"),
            emit_initial: true,
            keep: true,
            records: Vec::new(),
        }
    }

    /// Streams rows to `out`. The first line is a comment carrying the schema
    /// version and `tag` (typically the config hash).
    pub fn with_writer(mut self, out: Box<dyn Write + 'a>, tag: &str) -> Self {
        self.raw = Some(out);
        self.header_comment = format!("# {SERIES_SCHEMA} {tag}");
        self
    }

    /// Drop records from memory once written.
    pub fn streaming_only(mut self) -> Self {
        self.keep = false;
        self
    }

    /// Continue a run from a checkpoint: the bound monitor is restored and
    /// the (already recorded) starting row is not emitted again.
    pub fn resumed(mut self, monitor: BoundMonitor) -> Self {
        self.monitor = Some(monitor);
        self.emit_initial = false;
        self
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DiagnosticsRecord> {
        self.records
    }

    pub fn monitor(&self) -> Option<&BoundMonitor> {
        self.monitor.as_ref()
    }

    fn emit(&mut self, rec: DiagnosticsRecord) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.write_record(rec.values().iter().map(|&x| fmt_f64(x)))?;
        }
        if self.keep {
            self.records.push(rec);
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush().map_err(|e| Error::io("series", e))?;
        }
        Ok(())
    }
}

impl Observer for SeriesSink<'_> {
    fn on_start(&mut self, state: &SimState) -> Result<()> {
        if self.monitor.is_none() {
            self.monitor = Some(BoundMonitor::new(state, self.sim.mu()));
        }
        if let Some(mut out) = self.raw.take() {
            writeln!(out, "{}", self.header_comment).map_err(|e| Error::io("series", e))?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(DiagnosticsRecord::header(&self.cfg))?;
            self.writer = Some(w);
        }
        if self.emit_initial {
            let mon = self.monitor.as_mut().expect("monitor initialised above");
            mon.observe(state, self.sim.motility());
            let margins = mon.take_window();
            let mut rec = DiagnosticsRecord::from_state(state, self.sim.motility(), &self.cfg);
            rec.bound_margin_pte1 = margins.pte1;
            rec.bound_margin_pte3 = margins.pte3.unwrap_or(f64::NAN);
            self.emit(rec)?;
        }
        Ok(())
    }

    fn on_step(&mut self, prev: &SimState, next: &SimState) -> Result<()> {
        let m = *self.sim.motility();
        let mon = self.monitor.as_mut().expect("on_start runs first");
        mon.observe(next, &m);
        let every = self.cfg.every_steps.max(1);
        if next.step % every != 0 && next.status == Status::Running {
            return Ok(());
        }
        let margins = mon.take_window();
        let mut rec = DiagnosticsRecord::from_state(next, &m, &self.cfg);
        rec.identity_residual =
            key_identity_residual(prev, next, &m, self.sim.mu(), self.sim.helmholtz())?;
        rec.bound_margin_pte1 = margins.pte1;
        rec.bound_margin_pte3 = margins.pte3.unwrap_or(f64::NAN);
        self.emit(rec)
    }

    fn on_finish(&mut self, _state: &SimState) -> Result<()> {
        self.flush()
    }

    fn on_abort(&mut self, _state: &SimState, _error: &Error) {
        let _ = self.flush();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Growing,
    NotGrowing,
    /// Too few samples in the fit window to say anything.
    Inconclusive,
}

/// Least-squares line `y ≈ slope·t + intercept` over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `slope · (t_end − t_start) / mean|y|`.
    pub relative_change: f64,
    pub verdict: Trend,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if sxx > 0.0 && syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        0.0
    };
    (slope, intercept, r2)
}

impl TrendFit {
    /// Fits the second half (in time) of a series.
    pub fn second_half(t: &[f64], y: &[f64]) -> Self {
        let (t0, t1) = match (t.first(), t.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0.0, 0.0),
        };
        let mid = 0.5 * (t0 + t1);
        let (xs, ys): (Vec<f64>, Vec<f64>) = t
            .iter()
            .zip(y)
            .filter(|(&ti, yi)| ti >= mid && yi.is_finite())
            .map(|(a, b)| (*a, *b))
            .unzip();
        let samples = xs.len();
        if samples < TREND_MIN_SAMPLES {
            return Self {
                slope: f64::NAN,
                intercept: f64::NAN,
                r2: f64::NAN,
                samples,
                t_start: mid,
                t_end: t1,
                relative_change: f64::NAN,
                verdict: Trend::Inconclusive,
            };
        }
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        let span = xs[samples - 1] - xs[0];
        let mean_abs = ys.iter().map(|v| v.abs()).sum::<f64>() / samples as f64;
        let relative_change = if mean_abs > 0.0 {
            slope * span / mean_abs
        } else {
            0.0
        };
        let growing = slope > 0.0 && r2 > TREND_MIN_R2 && relative_change > TREND_NOISE_FLOOR;
        Self {
            slope,
            intercept,
            r2,
            samples,
            t_start: xs[0],
            t_end: xs[samples - 1],
            relative_change,
            verdict: if growing { Trend::Growing } else { Trend::NotGrowing },
        }
    }
}

/// Time series of the quantities that diverge under infinite-time blowup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlowupIndicators {
    pub t: Vec<f64>,
    pub u_inf: Vec<f64>,
    pub interaction: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `∫ e^{αv}` for the first configured α, if any.
    pub exp_moment: Vec<f64>,
}

impl BlowupIndicators {
    pub fn from_records(records: &[DiagnosticsRecord]) -> Self {
        let mut out = Self::default();
        for r in records {
            out.push(r.t, r.u_inf, r.interaction, r.grad_norm, r.exp_moment.first().copied());
        }
        out
    }

    pub fn push(&mut self, t: f64, u_inf: f64, interaction: f64, grad_norm: f64, exp_moment: Option<f64>) {
        self.t.push(t);
        self.u_inf.push(u_inf);
        self.interaction.push(interaction);
        self.grad_norm.push(grad_norm);
        self.exp_moment.push(exp_moment.unwrap_or(f64::NAN));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendReport {
    pub u_inf: TrendFit,
    pub interaction: TrendFit,
    pub grad_norm: TrendFit,
    pub exp_moment: TrendFit,
}

pub fn blowup_trend(series: &BlowupIndicators) -> TrendReport {
    TrendReport {
        u_inf: TrendFit::second_half(&series.t, &series.u_inf),
        interaction: TrendFit::second_half(&series.t, &series.interaction),
        grad_norm: TrendFit::second_half(&series.t, &series.grad_norm),
        exp_moment: TrendFit::second_half(&series.t, &series.exp_moment),
    }
}
