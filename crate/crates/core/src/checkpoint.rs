//! Bit-exact checkpoints.
//!
//! A checkpoint is a CSV file preceded by `# key=value` header lines. Floats
//! are stored as IEEE-754 bit patterns in hex so that resuming reproduces the
//! original run exactly; decimal copies of `u` and `v₀` are included for
//! inspection only.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diagnostics::{fmt_f64, BoundMonitor};
use crate::dynamics::{SimState, Simulator};
use crate::error::{Error, Result};
use crate::grid::{Field, Geometry};

pub const CHECKPOINT_SCHEMA: &str = "chemotrap-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub geometry: Geometry,
    pub n_cells: usize,
    pub t: f64,
    pub step: u64,
    pub dt_target: f64,
    /// Running minimum of `v`, needed to resume the bound monitor.
    pub v_star: f64,
    pub u: Vec<f64>,
    /// Initial signal, the reference profile of the pointwise bounds.
    pub v0: Vec<f64>,
}

fn bits(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unbits(s: &str) -> Option<f64> {
    u64::from_str_radix(s.trim(), 16).ok().map(f64::from_bits)
}

impl Checkpoint {
    pub fn capture(state: &SimState, monitor: &BoundMonitor, config_hash: &str) -> Self {
        let grid = state.u.grid();
        Self {
            config_hash: config_hash.to_string(),
            geometry: grid.geometry(),
            n_cells: grid.n_cells(),
            t: state.t,
            step: state.step,
            dt_target: state.dt_target,
            v_star: monitor.v_star(),
            u: state.u.values().to_vec(),
            v0: monitor.v0().to_vec(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut out = BufWriter::new(file);
        let (geometry, extent) = (self.geometry.name(), self.geometry.extent());
        writeln!(out, "# {CHECKPOINT_SCHEMA}").map_err(io)?;
        writeln!(out, "# config_hash={}", self.config_hash).map_err(io)?;
        writeln!(out, "# geometry={geometry}").map_err(io)?;
        writeln!(out, "# extent={}", bits(extent)).map_err(io)?;
        writeln!(out, "# n_cells={}", self.n_cells).map_err(io)?;
        writeln!(out, "# t={}", bits(self.t)).map_err(io)?;
        writeln!(out, "# step={}", self.step).map_err(io)?;
        writeln!(out, "# dt_target={}", bits(self.dt_target)).map_err(io)?;
        writeln!(out, "# v_star={}", bits(self.v_star)).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u_bits", "v0_bits", "u", "v0"])?;
        for (u, v) in self.u.iter().zip(&self.v0) {
            w.write_record([bits(*u), bits(*v), fmt_f64(*u), fmt_f64(*v)])?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let bad = |reason: &str| Error::schema(path, reason);
        let mut header = BTreeMap::new();
        let mut line = String::new();
        let mut first = true;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(bad("no data section"));
            }
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            let rest = rest.trim();
            if first {
                if rest != CHECKPOINT_SCHEMA {
                    return Err(bad(&format!("expected `{CHECKPOINT_SCHEMA}`, found `{rest}`")));
                }
                first = false;
                continue;
            }
            if let Some((k, v)) = rest.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        if line.trim() != "u_bits,v0_bits,u,v0" {
            return Err(bad("unexpected column header"));
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(&format!("missing key `{k}`")));
        let float = |k: &str| get(k).and_then(|v| unbits(v).ok_or_else(|| bad(&format!("bad value for `{k}`"))));
        let int = |k: &str| {
            get(k).and_then(|v| v.parse::<u64>().map_err(|_| bad(&format!("bad value for `{k}`"))))
        };
        let extent = float("extent")?;
        let geometry = match get("geometry")?.as_str() {
            "disk" => Geometry::Disk { radius: extent },
            "interval" => Geometry::Interval { length: extent },
            other => return Err(bad(&format!("unknown geometry `{other}`"))),
        };
        let n_cells = int("n_cells")? as usize;
        let mut rows = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let (mut u, mut v0) = (Vec::with_capacity(n_cells), Vec::with_capacity(n_cells));
        for rec in rows.records() {
            let rec = rec?;
            let (a, b) = match (rec.get(0).and_then(unbits), rec.get(1).and_then(unbits)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(bad(&format!("malformed row {}", u.len() + 1))),
            };
            u.push(a);
            v0.push(b);
        }
        if u.len() != n_cells {
            return Err(bad(&format!("expected {n_cells} rows, found {}", u.len())));
        }
        Ok(Self {
            config_hash: get("config_hash")?.clone(),
            geometry,
            n_cells,
            t: float("t")?,
            step: int("step")?,
            dt_target: float("dt_target")?,
            v_star: float("v_star")?,
            u,
            v0,
        })
    }

    /// Rebuilds the state and bound monitor on `sim`'s grid.
    pub fn restore(&self, sim: &Simulator) -> Result<(SimState, BoundMonitor)> {
        let grid = sim.grid();
        if grid.geometry() != self.geometry || grid.n_cells() != self.n_cells {
            return Err(Error::Config(format!(
                "checkpoint grid ({} x {}) does not match the configured grid ({} x {})",
                self.geometry.name(),
                self.n_cells,
                grid.geometry().name(),
                grid.n_cells()
            )));
        }
        let u = Field::new(grid.clone(), self.u.clone())?;
        let state = sim.state_at(u, self.t, self.step, self.dt_target)?;
        let monitor = BoundMonitor::restore(self.v0.clone(), self.v_star, sim.mu());
        Ok((state, monitor))
    }
}
