//! Command-line front end. [`cli_main`] takes the full argv (program name
//! first) and returns the process exit code, so tests can drive it directly.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::engine::{run_estimator, run_monte_carlo, run_on_raw, simulate_measurements, Layout, Mode};
use crate::io::{
    config_hash, dump_measurements, export_results, ingest_replay, parse_layout, parse_scenario,
    ExportBundle, ExportContent, RunMeta,
};

#[derive(Debug, Parser)]
#[command(name = "uwb-coop", version, about = "Cooperative UWB TDOA + TWR positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Tdoa,
    Coop,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Tdoa => vec![Mode::Tdoa],
            ModeArg::Coop => vec![Mode::Coop],
            ModeArg::Both => vec![Mode::Tdoa, Mode::Coop],
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and estimate tag positions.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the scenario's `cooperative` flag.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Overrides the scenario's measurement seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write `measurements.csv` and `layout.json` for `replay`.
        #[arg(long)]
        dump_measurements: bool,
    },
    /// Paired TDOA-only vs cooperative runs over random tag placements.
    Montecarlo {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        configs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Master seed; defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the estimator over a recorded measurement log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "coop")]
        mode: ModeArg,
    },
    /// Parse and check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<(), String> {
    let s = |e: &dyn std::fmt::Display| e.to_string();
    match cmd {
        Command::Validate { scenario } => {
            let sc = parse_scenario(&scenario).map_err(|e| s(&e))?;
            println!(
                "{}: ok ({} tags, {} anchors, {} periods)",
                scenario.display(),
                sc.n_tags(),
                sc.anchors.len(),
                sc.periods
            );
            Ok(())
        }
        Command::Simulate {
            scenario,
            out,
            mode,
            seed,
            dump_measurements: dump,
        } => {
            let mut sc = parse_scenario(&scenario).map_err(|e| s(&e))?;
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let mode = mode.unwrap_or(if sc.cooperative { ModeArg::Coop } else { ModeArg::Tdoa });
            let raw = simulate_measurements(&sc).map_err(|e| s(&e))?;
            let runs = mode
                .modes()
                .into_iter()
                .map(|m| run_on_raw(&sc, &raw, m))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| s(&e))?;
            if dump {
                dump_measurements(&out, &Layout::from_scenario(&sc), &raw).map_err(|e| s(&e))?;
            }
            let bundle = ExportBundle {
                meta: RunMeta {
                    command: "simulate".into(),
                    seed: sc.seed,
                    scenario_hash: config_hash(&sc),
                    burn_in: sc.filter.burn_in,
                },
                config: serde_json::to_value(&sc).expect("scenario serializes"),
                content: ExportContent::Runs(runs),
            };
            export_results(&bundle, &out).map_err(|e| s(&e))
        }
        Command::Montecarlo {
            scenario,
            configs,
            out,
            seed,
            threads,
        } => {
            let sc = parse_scenario(&scenario).map_err(|e| s(&e))?;
            let master = seed.unwrap_or(sc.seed);
            let outcomes = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| s(&e))?
                    .install(|| run_monte_carlo(&sc, configs, master)),
                None => run_monte_carlo(&sc, configs, master),
            };
            for o in &outcomes {
                if let Err(e) = &o.result {
                    log::warn!("config {} failed: {e}", o.index);
                }
            }
            let bundle = ExportBundle {
                meta: RunMeta {
                    command: "montecarlo".into(),
                    seed: master,
                    scenario_hash: config_hash(&sc),
                    burn_in: sc.filter.burn_in,
                },
                config: serde_json::to_value(&sc).expect("scenario serializes"),
                content: ExportContent::MonteCarlo(outcomes),
            };
            export_results(&bundle, &out).map_err(|e| s(&e))
        }
        Command::Replay {
            log,
            layout,
            out,
            mode,
        } => {
            let lay = parse_layout(&layout).map_err(|e| s(&e))?;
            let periods = ingest_replay(&log, &lay).map_err(|e| s(&e))?;
            let runs = mode
                .modes()
                .into_iter()
                .map(|m| run_estimator(&lay, &periods, m, None, 0))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| s(&e))?;
            let bundle = ExportBundle {
                meta: RunMeta {
                    command: "replay".into(),
                    seed: 0,
                    scenario_hash: replay_hash(&lay, &log)?,
                    burn_in: lay.filter.burn_in,
                },
                config: serde_json::to_value(&lay).expect("layout serializes"),
                content: ExportContent::Runs(runs),
            };
            export_results(&bundle, &out).map_err(|e| s(&e))
        }
    }
}

/// Hash of the layout together with the log contents.
fn replay_hash(layout: &Layout, log: &Path) -> Result<String, String> {
    let bytes = std::fs::read(log).map_err(|e| format!("{}: {e}", log.display()))?;
    let log_digest = hex::encode(Sha256::digest(&bytes));
    Ok(config_hash(&(layout, log_digest)))
}
