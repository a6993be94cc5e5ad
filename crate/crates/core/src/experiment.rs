//! Orchestration behind the command-line front end: building a problem from
//! a config, running it with its output sinks, and batch sweeps.
//!
//! Every entry point validates its inputs completely before creating the
//! output directory, so a rejected config leaves nothing behind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{AsymptoticsConfig, RunConfig, SteadyConfig};
use crate::diagnostics::{fmt_f64, BoundMonitor, DiagnosticsRecord, SeriesSink};
use crate::dynamics::{Observer, SimState, Simulator, Status};
use crate::error::{exit, Error, Result};
use crate::grid::Field;
use crate::initdata::{construct_blowup, verify_construction_asymptotics_with, AsymptoticsReport};
use crate::par::{self, Execution};
use crate::steady::{continuation_sweep, SteadyBranch};

pub const SNAPSHOT_SCHEMA: &str = "chemotrap-snapshot v1";
pub const SUMMARY_SCHEMA: &str = "chemotrap-summary v1";

/// A simulator together with its initial state.
pub struct Problem {
    pub sim: Simulator,
    pub initial: SimState,
    /// Amplitude of the concentrated family, when used.
    pub amplitude: Option<f64>,
}

impl Problem {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let sim = Simulator::new(grid.clone(), cfg.motility, cfg.model.mu, cfg.scheme.build()?)?;
        let (u0, amplitude) = match cfg.initial.recipe() {
            Some(recipe) => {
                let c = construct_blowup(&recipe, sim.helmholtz())?;
                (c.u0, Some(c.a))
            }
            None => (cfg.initial.build_profile(grid)?, None),
        };
        let initial = sim.initial_state(u0)?;
        Ok(Self {
            sim,
            initial,
            amplitude,
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn buffered(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `ξ, u, v` with a schema comment line.
pub fn write_snapshot(path: &Path, u: &Field, v: &Field, tag: &str) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = buffered(path)?;
    writeln!(out, "# {SNAPSHOT_SCHEMA} {tag}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["xi", "u", "v"])?;
    for ((x, a), b) in u.grid().centers().iter().zip(u.values()).zip(v.values()) {
        w.write_record([fmt_f64(*x), fmt_f64(*a), fmt_f64(*b)])?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Writes snapshots at the first state at or after each requested time.
struct SnapshotWriter {
    dir: PathBuf,
    hash: String,
    times: Vec<f64>,
    next: usize,
}

impl SnapshotWriter {
    fn new(dir: &Path, hash: &str, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            times,
            next: 0,
        }
    }

    fn emit(&mut self, state: &SimState) -> Result<()> {
        while self.next < self.times.len() && self.times[self.next] <= state.t {
            let k = self.next;
            let path = self.dir.join(format!("snapshot_{k:03}.csv"));
            let tag = format!(
                "config_hash={} t_requested={} t={}",
                self.hash,
                fmt_f64(self.times[k]),
                fmt_f64(state.t)
            );
            write_snapshot(&path, &state.u, &state.v, &tag)?;
            self.next += 1;
        }
        Ok(())
    }
}

impl Observer for SnapshotWriter {
    fn on_start(&mut self, state: &SimState) -> Result<()> {
        if state.step > 0 {
            // Resumed: times up to the checkpoint were handled by the first run.
            while self.next < self.times.len() && self.times[self.next] <= state.t {
                self.next += 1;
            }
            return Ok(());
        }
        self.emit(state)
    }

    fn on_step(&mut self, _prev: &SimState, next: &SimState) -> Result<()> {
        self.emit(next)
    }
}

/// Periodic and final checkpoints.
struct CheckpointWriter {
    dir: PathBuf,
    hash: String,
    every: u64,
    monitor: Option<BoundMonitor>,
    mu: f64,
    motility: crate::motility::Motility,
}

impl CheckpointWriter {
    fn write(&self, state: &SimState, name: &str) -> Result<()> {
        let mon = self.monitor.as_ref().expect("on_start runs first");
        Checkpoint::capture(state, mon, &self.hash).write(&self.dir.join(name))
    }
}

impl Observer for CheckpointWriter {
    fn on_start(&mut self, state: &SimState) -> Result<()> {
        if self.monitor.is_none() {
            self.monitor = Some(BoundMonitor::new(state, self.mu));
        }
        Ok(())
    }

    fn on_step(&mut self, _prev: &SimState, next: &SimState) -> Result<()> {
        let m = self.motility;
        self.monitor.as_mut().expect("on_start runs first").observe(next, &m);
        if self.every > 0 && next.step % self.every == 0 && next.status == Status::Running {
            self.write(next, &format!("checkpoint_{:010}.csv", next.step))?;
        }
        Ok(())
    }

    fn on_finish(&mut self, state: &SimState) -> Result<()> {
        self.write(state, "checkpoint.csv")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_state: SimState,
    pub config_hash: String,
    /// Diagnostics of the final state.
    pub final_record: DiagnosticsRecord,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.final_state.status.exit_code()
    }
}

/// Runs a configured simulation, writing `series.csv`, snapshots and
/// checkpoints into `out`. With `resume`, continues from a checkpoint taken
/// under the same config hash; the series then starts after the checkpoint.
pub fn run(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<RunOutcome> {
    let problem = Problem::from_config(cfg)?;
    let hash = cfg.hash();
    let (state, monitor) = match resume {
        None => (problem.initial, None),
        Some(path) => {
            let cp = Checkpoint::read(path)?;
            if cp.config_hash != hash {
                return Err(Error::Config(format!(
                    "checkpoint {} was written under config {}, not {hash}",
                    path.display(),
                    cp.config_hash
                )));
            }
            let (s, m) = cp.restore(&problem.sim)?;
            (s, Some(m))
        }
    };
    create_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(out.join("config.toml"), e))?;
    let sim = &problem.sim;
    let series = buffered(&out.join("series.csv"))?;
    let mut sink = SeriesSink::new(sim, cfg.output.diagnostics())
        .with_writer(Box::new(series), &format!("config_hash={hash}"))
        .streaming_only();
    let mut snaps = SnapshotWriter::new(out, &hash, cfg.output.snapshot_times.clone());
    let mut cps = CheckpointWriter {
        dir: out.to_path_buf(),
        hash: hash.clone(),
        every: cfg.output.checkpoint_every,
        monitor: monitor.clone(),
        mu: sim.mu(),
        motility: *sim.motility(),
    };
    if let Some(m) = monitor {
        sink = sink.resumed(m);
    }
    let final_state = {
        let mut obs = (&mut sink, (&mut snaps, &mut cps));
        sim.run(state, &mut obs)?
    };
    let record = DiagnosticsRecord::from_state(&final_state, sim.motility(), &cfg.output.diagnostics());
    log::info!(
        "run finished: status {}, t = {}, steps = {}",
        final_state.status.name(),
        final_state.t,
        final_state.step
    );
    Ok(RunOutcome {
        final_state,
        config_hash: hash,
        final_record: record,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructReport {
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub interaction: f64,
    pub u_inf: f64,
    pub v_inf: f64,
    /// Amplitude and its admissible bracket, for the concentrated family.
    pub amplitude: Option<(f64, f64, f64)>,
}

/// Builds the initial data of a run config and writes it as a snapshot plus
/// a one-row scalar summary.
pub fn construct(cfg: &RunConfig, out: &Path) -> Result<ConstructReport> {
    let problem = Problem::from_config(cfg)?;
    let hash = cfg.hash();
    let s = &problem.initial;
    let rec = DiagnosticsRecord::from_state(s, problem.sim.motility(), &cfg.output.diagnostics());
    let amplitude = problem.amplitude.map(|a| {
        let (lo, hi) = cfg.initial.recipe().expect("amplitude implies recipe").a_bracket();
        (a, lo, hi)
    });
    create_dir(out)?;
    write_snapshot(&out.join("initial.csv"), &s.u, &s.v, &format!("config_hash={hash} t=0"))?;
    let path = out.join("construct.csv");
    let mut file = buffered(&path)?;
    writeln!(file, "# {SUMMARY_SCHEMA} config_hash={hash}").map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["mass", "energy", "entropy", "interaction", "u_inf", "v_inf", "a", "a_lower", "a_upper"])?;
    let (a, lo, hi) = amplitude.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    w.write_record(
        [rec.mass, rec.energy, rec.entropy, rec.interaction, rec.u_inf, rec.v_inf, a, lo, hi].map(fmt_f64),
    )?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(ConstructReport {
        mass: rec.mass,
        energy: rec.energy,
        entropy: rec.entropy,
        interaction: rec.interaction,
        u_inf: rec.u_inf,
        v_inf: rec.v_inf,
        amplitude,
    })
}

/// Continuation sweep of stationary states, written to `branch.csv`.
pub fn steady(cfg: &SteadyConfig, out: &Path) -> Result<SteadyBranch> {
    let grid = cfg.grid.build()?;
    let helmholtz = crate::elliptic::HelmholtzOperator::new(grid.clone())?;
    let guess = match &cfg.steady.guess {
        Some(spec) if spec.recipe().is_none() => Some(spec.build_profile(grid)?),
        Some(_) => return Err(Error::Config("steady guesses must be plain profiles".into())),
        None => None,
    };
    let s = &cfg.steady;
    let branch = continuation_sweep(s.mass_start, s.mass_end, s.steps, &helmholtz, guess.as_ref())?;
    create_dir(out)?;
    branch.write_csv(&out.join("branch.csv"), &format!("config_hash={}", cfg.hash()))?;
    Ok(branch)
}

/// Construction asymptotics, written to `asymptotics.csv` (per λ) and
/// `asymptotics_fit.csv` (slopes against envelopes).
pub fn asymptotics(cfg: &AsymptoticsConfig, out: &Path, exec: Execution) -> Result<AsymptoticsReport> {
    let grid = cfg.grid.build()?;
    let helmholtz = crate::elliptic::HelmholtzOperator::new(grid)?;
    let a = &cfg.asymptotics;
    let report = verify_construction_asymptotics_with(exec, a.mass, &a.lambdas, a.r, a.r1, &helmholtz)?;
    create_dir(out)?;
    let hash = cfg.hash();
    let path = out.join("asymptotics.csv");
    let mut file = buffered(&path)?;
    writeln!(file, "# {SUMMARY_SCHEMA} config_hash={hash}").map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["lambda", "a", "entropy", "interaction", "energy"])?;
    for r in &report.rows {
        w.write_record([r.lambda, r.a, r.entropy, r.interaction, r.energy].map(fmt_f64))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = out.join("asymptotics_fit.csv");
    let mut file = buffered(&path)?;
    writeln!(file, "# {SUMMARY_SCHEMA} config_hash={hash}").map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["quantity", "slope", "envelope", "relation", "pass"])?;
    for (q, slope, env, rel, ok) in [
        ("entropy", report.entropy_slope, report.entropy_envelope, "<=", report.entropy_ok()),
        ("interaction", report.interaction_slope, report.interaction_envelope, ">=", report.interaction_ok()),
        ("energy", report.energy_slope, report.energy_envelope, "<=", report.energy_ok()),
    ] {
        w.write_record([q.to_string(), fmt_f64(slope), fmt_f64(env), rel.to_string(), ok.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Run,
    Construct,
    Steady,
    Asymptotics,
}

impl EntryKind {
    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Run => "run",
            EntryKind::Construct => "construct",
            EntryKind::Steady => "steady",
            EntryKind::Asymptotics => "asymptotics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: EntryKind,
    /// Config path, relative to the manifest file.
    pub config: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub entry: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for e in &m.entry {
            let ok = !e.name.is_empty()
                && e.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                && e.name != "."
                && e.name != "..";
            if !ok {
                return Err(Error::Config(format!("invalid entry name `{}`", e.name)));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate entry name `{}`", e.name)));
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entry {
            if e.config.is_relative() {
                e.config = base.join(&e.config);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub kind: EntryKind,
    pub exit_code: i32,
    /// Run status or error text.
    pub status: String,
    /// `key=value` pairs, `;`-separated.
    pub metrics: String,
}

fn metrics(pairs: &[(&str, f64)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={}", fmt_f64(*v)))
        .collect::<Vec<_>>()
        .join(";")
}

fn run_entry(e: &ManifestEntry, out: &Path) -> SweepRow {
    let dir = out.join(&e.name);
    let result: Result<(i32, String, String)> = match e.kind {
        EntryKind::Run => RunConfig::load(&e.config).and_then(|c| run(&c, &dir, None)).map(|o| {
            let r = &o.final_record;
            let m = metrics(&[("t", r.t), ("mass", r.mass), ("energy", r.energy), ("u_inf", r.u_inf)]);
            (o.exit_code(), o.final_state.status.name().to_string(), m)
        }),
        EntryKind::Construct => RunConfig::load(&e.config).and_then(|c| construct(&c, &dir)).map(|r| {
            let mut pairs = vec![("mass", r.mass), ("energy", r.energy), ("interaction", r.interaction)];
            if let Some((a, _, _)) = r.amplitude {
                pairs.push(("a", a));
            }
            (exit::OK, "constructed".to_string(), metrics(&pairs))
        }),
        EntryKind::Steady => SteadyConfig::load(&e.config).and_then(|c| steady(&c, &dir)).map(|b| {
            let conv = b.entries.iter().filter(|x| x.converged).count() as f64;
            let m = metrics(&[("entries", b.entries.len() as f64), ("converged", conv)]);
            (exit::OK, "swept".to_string(), m)
        }),
        EntryKind::Asymptotics => AsymptoticsConfig::load(&e.config)
            // Entries already run in parallel; keep each one sequential.
            .and_then(|c| asymptotics(&c, &dir, Execution::Sequential))
            .map(|r| {
                let m = metrics(&[
                    ("entropy_slope", r.entropy_slope),
                    ("interaction_slope", r.interaction_slope),
                    ("energy_slope", r.energy_slope),
                    ("a", r.a),
                ]);
                (exit::OK, "fitted".to_string(), m)
            }),
    };
    let (exit_code, status, metrics) = match result {
        Ok(x) => x,
        Err(err) => (err.exit_code(), format!("error: {err}"), String::new()),
    };
    SweepRow {
        name: e.name.clone(),
        kind: e.kind,
        exit_code,
        status,
        metrics,
    }
}

/// Runs all entries on at most `jobs` workers (0: all cores) and writes
/// `summary.csv`. A failing entry is recorded and never stops the others.
pub fn sweep(manifest: &Manifest, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    let exec = if jobs == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    };
    create_dir(out)?;
    let rows = par::with_jobs(jobs, || {
        par::map(exec, &manifest.entry, |e| {
            catch_unwind(AssertUnwindSafe(|| run_entry(e, out))).unwrap_or_else(|_| SweepRow {
                name: e.name.clone(),
                kind: e.kind,
                exit_code: exit::INTERNAL,
                status: "error: panic".to_string(),
                metrics: String::new(),
            })
        })
    });
    let path = out.join("summary.csv");
    let mut file = buffered(&path)?;
    writeln!(file, "# {SUMMARY_SCHEMA}").map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["name", "kind", "exit_code", "status", "metrics"])?;
    for r in &rows {
        w.write_record([r.name.as_str(), r.kind.name(), &r.exit_code.to_string(), &r.status, &r.metrics])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
