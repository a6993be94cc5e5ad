//! Acceptance suite: one PASS/FAIL line per criterion and a summary line.
//! Failures are reported but only turn into a nonzero exit when
//! `ACCEPTANCE_STRICT` is set to something other than `0`.

use std::f64::consts::PI;
use std::time::Instant;

use chemotrap::check::positive_variation;
use chemotrap::config::RunConfig;
use chemotrap::diagnostics::{
    blowup_trend, key_identity_residual, BlowupIndicators, BoundMonitor, DiagnosticsConfig, SeriesSink, Trend,
};
use chemotrap::dynamics::Observer;
use chemotrap::elliptic::HelmholtzOperator;
use chemotrap::experiment;
use chemotrap::initdata::{construct_blowup, standard_profile, verify_construction_asymptotics, BlowupRecipe, Profile};
use chemotrap::steady::{continuation_sweep, newton_steady};
use chemotrap::{Field, Geometry, Motility, RadialGrid, SchemeConfig, SimState, Simulator, Status, K0};

/// Largest key-identity residual accepted on the baseline run. The measured
/// baseline sits near 5e-8; this is the regression ceiling.
const KEY_IDENTITY_CALIBRATION: f64 = 1e-3;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn disk(n: usize) -> std::sync::Arc<RadialGrid> {
    RadialGrid::shared(Geometry::Disk { radius: 1.0 }, n).unwrap()
}

/// Gaussian bump of width 0.3 carrying `mass`.
fn bump(sim: &Simulator, mass: f64) -> SimState {
    let mut u = standard_profile(&Profile::GaussianBump { amp: 1.0, width: 0.3 }, sim.grid().clone()).unwrap();
    u.scale(mass / u.integrate());
    sim.initial_state(u).unwrap()
}

/// Per-step invariants of one run.
struct Probe {
    mu: f64,
    motility: Motility,
    /// Evaluate pointwise bounds only while `t ≤ bound_horizon`.
    bound_horizon: f64,
    helmholtz: Option<HelmholtzOperator>,
    mass0: f64,
    max_drift: f64,
    max_mass: f64,
    energy: Vec<f64>,
    monitor: Option<BoundMonitor>,
    pte1_rel: f64,
    pte3_abs: f64,
    max_residual: f64,
}

impl Probe {
    fn new(sim: &Simulator, bound_horizon: f64, residual: bool) -> Self {
        Self {
            mu: sim.mu(),
            motility: *sim.motility(),
            bound_horizon,
            helmholtz: residual.then(|| sim.helmholtz().clone()),
            mass0: 0.0,
            max_drift: 0.0,
            max_mass: 0.0,
            energy: Vec::new(),
            monitor: None,
            pte1_rel: f64::INFINITY,
            pte3_abs: f64::INFINITY,
            max_residual: 0.0,
        }
    }

    fn record(&mut self, s: &SimState) {
        let m = s.mass();
        self.max_drift = self.max_drift.max((m - self.mass0).abs() / self.mass0);
        self.max_mass = self.max_mass.max(m);
        let g = s.u.grid();
        self.energy.push(chemotrap::diagnostics::energy(g, s.u.values(), s.v.values()));
        if s.t <= self.bound_horizon {
            let mon = self.monitor.as_mut().unwrap();
            mon.observe(s, &self.motility);
            let w = mon.take_window();
            self.pte1_rel = self.pte1_rel.min(w.pte1 / s.v.sup_norm());
            if let Some(p) = w.pte3 {
                self.pte3_abs = self.pte3_abs.min(p);
            }
        }
    }
}

impl Observer for Probe {
    fn on_start(&mut self, s: &SimState) -> chemotrap::Result<()> {
        self.mass0 = s.mass();
        self.monitor = Some(BoundMonitor::new(s, self.mu));
        self.record(s);
        Ok(())
    }

    fn on_step(&mut self, prev: &SimState, next: &SimState) -> chemotrap::Result<()> {
        self.record(next);
        if let Some(h) = &self.helmholtz {
            let r = key_identity_residual(prev, next, &self.motility, self.mu, h)?;
            self.max_residual = self.max_residual.max(r);
        }
        Ok(())
    }
}

fn run_probe(sim: &Simulator, init: SimState, horizon: f64, residual: bool) -> (SimState, Probe) {
    let mut p = Probe::new(sim, horizon, residual);
    let end = sim.run(init, &mut p).unwrap();
    (end, p)
}

fn baseline(n: usize, dt: f64, steps: f64, residual: bool) -> (SimState, Probe) {
    let sim = Simulator::new(disk(n), Motility::Exp, 0.0, SchemeConfig::semi_implicit(dt, dt * steps)).unwrap();
    let init = bump(&sim, 6.0 * PI);
    run_probe(&sim, init, 10.0, residual)
}

fn main() {
    let started = Instant::now();
    let mut out: Vec<Outcome> = Vec::new();
    let mut push = |id, pass, detail: String| {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        out.push(Outcome { id, pass, detail });
    };

    // 1, 3 (baseline), 4 (baseline residual), 5 (pte1 on run 1).
    let t0 = Instant::now();
    let (end1, p1) = baseline(512, 1e-4, 1e5, true);
    let secs1 = t0.elapsed().as_secs_f64();
    push(
        "1",
        end1.status == Status::Finished && end1.step == 100_000 && p1.max_drift < 1e-10 && secs1 <= 120.0,
        format!(
            "mass drift {:.3e} over {} steps (< 1e-10), runtime {secs1:.1} s (<= 120 s)",
            p1.max_drift, end1.step
        ),
    );

    // 2: logistic mass cap.
    let sim2 = Simulator::new(disk(256), Motility::Exp, 1.0, SchemeConfig::semi_implicit(1e-3, 50.0)).unwrap();
    let init2 = bump(&sim2, 2.0 * PI);
    let (end2, p2) = run_probe(&sim2, init2, 10.0, false);
    let cap = (2.0 * PI).max(PI) * (1.0 + 1e-6);
    push(
        "2",
        end2.status == Status::Finished && p2.max_mass <= cap,
        format!("max mass {:.12} vs cap {cap:.12} over t <= 50", p2.max_mass),
    );

    // 3: energy dissipation.
    let e0 = p1.energy[0].abs();
    let pv1 = positive_variation(&p1.energy);
    let (_, p1h) = baseline(1024, 5e-5, 2e5, false);
    let pv2 = positive_variation(&p1h.energy);
    push(
        "3",
        pv1 < 1e-3 * e0 && pv2 <= 0.5 * pv1,
        format!(
            "positive variation of E {pv1:.3e} (< {:.3e}); refined {pv2:.3e} (<= half)",
            1e-3 * e0
        ),
    );

    // 4: key identity.
    let study: Vec<f64> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&dt| baseline(512, dt, (1.0 / dt).round(), true).1.max_residual)
        .collect();
    let orders: Vec<f64> = study.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    push(
        "4",
        p1.max_residual <= KEY_IDENTITY_CALIBRATION && orders.iter().all(|&q| q >= 1.0),
        format!(
            "baseline residual {:.3e} (<= {KEY_IDENTITY_CALIBRATION:e}); residuals {:?} at dt 4e-4/2e-4/1e-4, orders {:?} (>= 1)",
            p1.max_residual,
            study.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>(),
            orders.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>()
        ),
    );

    // 5: pointwise bounds.
    let sim5 = Simulator::new(disk(256), Motility::Exp, 2.0, SchemeConfig::semi_implicit(1e-3, 10.0)).unwrap();
    let init5 = bump(&sim5, 4.0 * PI);
    let (_, p5) = run_probe(&sim5, init5, 10.0, false);
    push(
        "5",
        p1.pte1_rel >= -1e-6 && p2.pte1_rel >= -1e-6 && p5.pte3_abs >= -1e-6,
        format!(
            "pte1 margin / |v|_inf: run 1 {:.3e}, run 2 {:.3e} (>= -1e-6); pte3 margin (mu = 2) {:.3e} (>= -1e-6)",
            p1.pte1_rel, p2.pte1_rel, p5.pte3_abs
        ),
    );

    // 6: Helmholtz solver.
    let mms_error = |n: usize| {
        let g = disk(n);
        let h = HelmholtzOperator::new(g.clone()).unwrap();
        let f: Vec<f64> = g
            .centers()
            .iter()
            .map(|&x| (1.0 + PI * PI) * (PI * x).cos() + PI * (PI * x).sin() / x)
            .collect();
        let v = h.solve_values(&f).unwrap();
        let e = g.centers().iter().zip(&v).map(|(&x, y)| ((PI * x).cos() - y).abs()).fold(0.0, f64::max);
        let c = h.solve_values(&vec![2.5; n]).unwrap();
        (e, c.iter().map(|x| (x - 2.5).abs()).fold(0.0, f64::max))
    };
    let errs: Vec<(f64, f64)> = [128, 256, 512, 1024].iter().map(|&n| mms_error(n)).collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0].0 / w[1].0).collect();
    let const_err = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    push(
        "6",
        ratios.iter().all(|r| (3.4..=4.6).contains(r)) && const_err <= 1e-12,
        format!(
            "error ratios {:?} (in [3.4, 4.6]); constant error {const_err:.1e} (<= 1e-12)",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    );

    // 7: construction asymptotics.
    let t7 = Instant::now();
    let h8192 = HelmholtzOperator::new(disk(8192)).unwrap();
    let rep = verify_construction_asymptotics(10.0 * PI, &[1e2, 1e3, 1e4], 0.5, 0.25, &h8192).unwrap();
    let secs7 = t7.elapsed().as_secs_f64();
    push(
        "7",
        rep.excluded.is_empty()
            && rep.energy_slope <= -15.0
            && rep.entropy_slope <= 66.0
            && rep.interaction_slope >= 142.0
            && secs7 <= 300.0,
        format!(
            "slopes: energy {:.3} (<= -15), entropy {:.3} (<= 66), interaction {:.3} (>= 142); a = {:.4}; {secs7:.1} s",
            rep.energy_slope, rep.entropy_slope, rep.interaction_slope, rep.a
        ),
    );

    // 8: critical-mass dichotomy.
    let diag = DiagnosticsConfig {
        every_steps: 10,
        alphas: vec![1.0],
        lp: vec![],
    };
    let trend_run = |sim: &Simulator, init: SimState| {
        let t = Instant::now();
        let mut sink = SeriesSink::new(sim, diag.clone());
        let end = sim.run(init, &mut sink).unwrap();
        let ind = BlowupIndicators::from_records(sink.records());
        (end, blowup_trend(&ind), t.elapsed().as_secs_f64())
    };
    let sim8a = Simulator::new(disk(512), Motility::Exp, 0.0, SchemeConfig::semi_implicit(1e-2, 200.0)).unwrap();
    let init8a = bump(&sim8a, 6.0 * PI);
    let (end8a, tr_a, secs_a) = trend_run(&sim8a, init8a);
    let sim8b = Simulator::new(disk(1024), Motility::Exp, 0.0, SchemeConfig::semi_implicit(1e-2, 200.0)).unwrap();
    let recipe = BlowupRecipe {
        mass: 10.0 * PI,
        lambda: 1e3,
        r: 0.5,
        r1: 0.25,
    };
    let c = construct_blowup(&recipe, sim8b.helmholtz()).unwrap();
    let init8b = sim8b.initial_state(c.u0).unwrap();
    let (end8b, tr_b, secs_b) = trend_run(&sim8b, init8b);
    let ok_a = end8a.status == Status::Finished
        && tr_a.u_inf.verdict == Trend::NotGrowing
        && tr_a.interaction.verdict == Trend::NotGrowing
        && secs_a <= 900.0;
    let ok_b = end8b.status == Status::Finished
        && tr_b.u_inf.verdict == Trend::Growing
        && tr_b.interaction.verdict == Trend::Growing
        && tr_b.u_inf.r2 > 0.9
        && tr_b.interaction.r2 > 0.9
        && secs_b <= 900.0;
    push(
        "8",
        ok_a && ok_b,
        format!(
            "(a) 6pi: u_inf slope {:.3e} rel {:.2e} {:?}, int slope {:.3e} {:?}, {secs_a:.1} s; \
             (b) 10pi: {} at t = {}, u_inf slope {:.3e} r2 {:.4} rel {:.2e} {:?}, int slope {:.3e} r2 {:.4} {:?}, {secs_b:.1} s",
            tr_a.u_inf.slope,
            tr_a.u_inf.relative_change,
            tr_a.u_inf.verdict,
            tr_a.interaction.slope,
            tr_a.interaction.verdict,
            end8b.status.name(),
            end8b.t,
            tr_b.u_inf.slope,
            tr_b.u_inf.r2,
            tr_b.u_inf.relative_change,
            tr_b.u_inf.verdict,
            tr_b.interaction.slope,
            tr_b.interaction.r2,
            tr_b.interaction.verdict,
        ),
    );

    // 9: convergence to (1, 1).
    let k0 = Motility::Exp.k0(50.0, 100_000).unwrap();
    let k0v = match k0 {
        K0::Finite(k) => k,
        K0::Infinite => f64::INFINITY,
    };
    let sim9 = Simulator::new(disk(256), Motility::Exp, 0.5, SchemeConfig::semi_implicit(1e-2, 100.0)).unwrap();
    let u9 = standard_profile(&Profile::Perturbed { c: 1.0, eps: 0.3 }, sim9.grid().clone()).unwrap();
    let end9 = sim9.run(sim9.initial_state(u9).unwrap(), &mut ()).unwrap();
    let dev9 = end9.u.values().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    push(
        "9",
        (k0v - 1.0).abs() < 1e-6 && 0.5 > k0v / 16.0 && end9.status == Status::Finished && dev9 < 1e-6,
        format!("K0 = {k0v:.8}, |u(100) - 1|_inf = {dev9:.3e} (< 1e-6)"),
    );

    // 10: steady states.
    let g10 = disk(256);
    let h10 = HelmholtzOperator::new(g10.clone()).unwrap();
    let branch = continuation_sweep(PI, 3.0 * PI, 20, &h10, None).unwrap();
    let closed_err = branch
        .entries
        .iter()
        .map(|e| {
            let c = e.mass / PI;
            (e.energy - PI * (c * c.ln() - 0.5 * c * c)).abs()
        })
        .fold(0.0, f64::max);
    let mut states: Vec<(f64, Field)> = branch
        .entries
        .iter()
        .filter(|e| e.converged)
        .map(|e| (e.mass, e.u.clone()))
        .collect();
    let guess = Field::from_fn(g10.clone(), |x| 3.0 + 2.0 * (PI * x).cos()).unwrap();
    let sub = newton_steady(7.0 * PI, &h10, &guess).unwrap();
    if sub.converged {
        states.push((sub.mass, sub.u.clone()));
    }
    let stationarity = states
        .iter()
        .map(|(_, u)| {
            let sim = Simulator::new(g10.clone(), Motility::Exp, 0.0, SchemeConfig::semi_implicit(1e-2, 1.0)).unwrap();
            let mut worst = Worst { u0: u.clone(), dev: 0.0 };
            sim.run(sim.initial_state(u.clone()).unwrap(), &mut worst).unwrap();
            worst.dev
        })
        .fold(0.0, f64::max);
    push(
        "10",
        branch.gaps().is_empty() && closed_err < 1e-8 && sub.converged && stationarity < 1e-6,
        format!(
            "constant-branch energy error {closed_err:.2e} (< 1e-8); {} steady states, worst drift over t <= 1 {stationarity:.2e} (< 1e-6); 7pi energy {:.6}",
            states.len(),
            sub.energy
        ),
    );

    // 11: determinism and resume.
    let cfg = RunConfig::parse(
        r#"
[grid]
geometry = "disk"
radius = 1.0
n_cells = 128
[motility]
kind = "exp"
[model]
mu = 0.3
[initial]
kind = "gaussian_bump"
amp = 1.0
width = 0.3
mass = 15.0
[scheme]
dt = 1e-3
t_end = 2.0
[output]
series_every = 10
checkpoint_every = 500
"#,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, r) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("r"));
    let ra = experiment::run(&cfg, &a, None).unwrap();
    experiment::run(&cfg, &b, None).unwrap();
    let rr = experiment::run(&cfg, &r, Some(&a.join("checkpoint_0000001000.csv"))).unwrap();
    let same_series = std::fs::read(a.join("series.csv")).unwrap() == std::fs::read(b.join("series.csv")).unwrap();
    let same_u = ra
        .final_state
        .u
        .values()
        .iter()
        .zip(rr.final_state.u.values())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    let same_cp = std::fs::read(a.join("checkpoint.csv")).unwrap() == std::fs::read(r.join("checkpoint.csv")).unwrap();
    push(
        "11",
        same_series && same_u && same_cp && ra.final_state.step == rr.final_state.step,
        format!("byte-identical rerun series: {same_series}; resumed final u bit-identical: {same_u}; final checkpoints identical: {same_cp}"),
    );

    let failed: Vec<&str> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        out.len() - failed.len(),
        out.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in out.iter().filter(|o| !o.pass) {
            eprintln!("failed criterion {}: {}", o.id, o.detail);
        }
        if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
            std::process::exit(1);
        }
    }
}

/// Largest sup-norm distance from the starting density.
struct Worst {
    u0: Field,
    dev: f64,
}

impl Observer for Worst {
    fn on_step(&mut self, _prev: &SimState, next: &SimState) -> chemotrap::Result<()> {
        let d = next
            .u
            .values()
            .iter()
            .zip(self.u0.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.dev = self.dev.max(d);
        Ok(())
    }
}
