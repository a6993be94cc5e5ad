use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chemotrap::check::{evaluate, format_table, CheckSpec, Series};
use chemotrap::config::{ConstructConfig, RunConfig, SteadyConfig};
use chemotrap::experiment::{self, Manifest};
use chemotrap::{exit, Error, Execution, Result};

/// Chemotaxis with density-suppressed motility: simulation, initial-data
/// construction, steady states and batch sweeps.
#[derive(Parser, Debug)]
#[command(name = "chemotrap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write series, snapshots and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate the assertions of a check file against series CSVs.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(required = true)]
        series: Vec<PathBuf>,
    },
    /// Run every entry of a manifest and write summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Continuation sweep of stationary states.
    Steady {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build initial data, or fit the asymptotics of a concentrated family.
    Construct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

fn out_dir(flag: Option<PathBuf>, configured: Option<&Path>) -> PathBuf {
    flag.or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execution(jobs: usize) -> Execution {
    if jobs == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run { config, out, resume } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(out, cfg.output.dir.as_deref());
            let o = experiment::run(&cfg, &dir, resume.as_deref())?;
            let s = &o.final_state;
            println!(
                "{} t={} steps={} mass={:e} u_inf={:e} -> {}",
                s.status.name(),
                s.t,
                s.step,
                o.final_record.mass,
                o.final_record.u_inf,
                dir.display()
            );
            Ok(o.exit_code())
        }
        Command::Check { config, series } => {
            let spec = CheckSpec::load(&config)?;
            let loaded = series.iter().map(|p| Series::read(p)).collect::<Result<Vec<_>>>()?;
            let outcomes = evaluate(&spec, &loaded)?;
            print!("{}", format_table(&outcomes));
            Ok(if outcomes.iter().all(|o| o.pass) {
                exit::OK
            } else {
                exit::CHECK_FAILED
            })
        }
        Command::Sweep { config, out, jobs } => {
            let manifest = Manifest::load(&config)?;
            let dir = out_dir(out, None);
            let rows = experiment::sweep(&manifest, &dir, jobs)?;
            for r in &rows {
                println!("{:<24} {:<12} exit={} {}", r.name, r.kind.name(), r.exit_code, r.status);
            }
            Ok(if rows.iter().all(|r| r.exit_code == exit::OK) {
                exit::OK
            } else {
                exit::SWEEP_FAILED
            })
        }
        Command::Steady { config, out } => {
            let cfg = SteadyConfig::load(&config)?;
            let dir = out_dir(out, cfg.output.dir.as_deref());
            let branch = experiment::steady(&cfg, &dir)?;
            let gaps = branch.gaps();
            println!(
                "{} states, {} converged -> {}",
                branch.entries.len(),
                branch.entries.len() - gaps.len(),
                dir.join("branch.csv").display()
            );
            Ok(exit::OK)
        }
        Command::Construct { config, out, jobs } => {
            let cfg = ConstructConfig::load(&config)?;
            let dir = out_dir(out, cfg.output().dir.as_deref());
            match cfg {
                ConstructConfig::Initial(c) => {
                    let r = experiment::construct(&c, &dir)?;
                    println!("mass={:e} energy={:e} u_inf={:e}", r.mass, r.energy, r.u_inf);
                    if let Some((a, lo, hi)) = r.amplitude {
                        println!("a={a} in ({lo}, {hi})");
                    }
                }
                ConstructConfig::Asymptotics(c) => {
                    let r = chemotrap::par::with_jobs(jobs, || experiment::asymptotics(&c, &dir, execution(jobs)))?;
                    println!("entropy slope {:.4} (envelope <= {:.4})", r.entropy_slope, r.entropy_envelope);
                    println!("interaction slope {:.4} (envelope >= {:.4})", r.interaction_slope, r.interaction_envelope);
                    println!("energy slope {:.4} (envelope <= {:.4})", r.energy_slope, r.energy_envelope);
                }
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            return ExitCode::from(code as u8);
        }
    };
    let code = match dispatch(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("chemotrap: {}", one_line(&e));
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}
