use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wbcvar::config::Settings;
use wbcvar::oracles;
use wbcvar::output::comparison_table;
use wbcvar::runner::{pairs, run_all, write_bundle, BundleOptions, Keep};
use wbcvar_core::sim::{ControllerKind, ScenarioConfig};

#[derive(Parser)]
#[command(name = "wbcvar", version, about = "Risk-aware safety filter simulations for AV-pedestrian crossings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Cbf,
    Wbcvar,
    Both,
}

impl ControllerArg {
    fn kinds(self) -> Vec<ControllerKind> {
        match self {
            ControllerArg::Cbf => vec![ControllerKind::BaselineCbf],
            ControllerArg::Wbcvar => vec![ControllerKind::WbCvarCbf],
            ControllerArg::Both => ControllerKind::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo campaigns for selected scenarios and controllers.
    Run {
        /// Settings file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name (repeatable), or `all`.
        #[arg(long, default_value = "s1")]
        scenario: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        controller: ControllerArg,
        /// Episodes per campaign; overrides `run.runs`.
        #[arg(long)]
        runs: Option<usize>,
        /// First seed; overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write an SVG per scenario and the logs of the first episode.
        #[arg(long)]
        plot: bool,
        /// Write the log of every episode.
        #[arg(long)]
        trace: bool,
        /// Worker threads; all cores when omitted.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Every preset with both controllers.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the oracle suites; exits nonzero on any failure.
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn settings(path: Option<&PathBuf>) -> Result<Settings> {
    match path {
        Some(p) => Settings::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Settings::default()),
    }
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn scenarios(s: &Settings, names: &[String]) -> Result<Vec<ScenarioConfig>> {
    let names: Vec<String> = if names.iter().any(|n| n == "all") {
        s.preset_names().into_iter().map(String::from).collect()
    } else {
        names.to_vec()
    };
    names
        .iter()
        .map(|n| {
            s.scenario(n)
                .ok_or_else(|| anyhow!("unknown scenario `{n}`; presets: {}", s.preset_names().join(", ")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, scenario, controller, runs, seed, out, plot, trace, threads: t } => {
            threads(t)?;
            let mut s = settings(config.as_ref())?;
            if let Some(r) = runs {
                if r == 0 {
                    bail!("--runs must be at least 1");
                }
                s.runs = r;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let start = Instant::now();
            let configs = pairs(&scenarios(&s, &scenario)?, &controller.kinds());
            let keep = if trace {
                Keep::All
            } else if plot {
                Keep::First
            } else {
                Keep::None
            };
            let campaigns = run_all(&configs, keep)?;
            let bundle = write_bundle(&out, &campaigns, BundleOptions { plot, trace })?;
            let summaries: Vec<_> = campaigns.iter().map(|c| c.summary.clone()).collect();
            print!("{}", comparison_table(&summaries));
            println!("wrote {} and {}", bundle.runs_csv.display(), bundle.campaign_csv.display());
            for p in &bundle.plots {
                println!("plot {}", p.display());
            }
            if !bundle.trajectories.is_empty() {
                println!("{} trajectory logs in {}", bundle.trajectories.len(), out.join("trajectories").display());
            }
            println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
            Ok(true)
        }
        Command::Reproduce { config, seed, out, threads: t } => {
            threads(t)?;
            let s = settings(config.as_ref())?;
            let r = wbcvar::reproduce(&s, seed, &out)?;
            let summaries: Vec<_> = r.campaigns.iter().map(|c| c.summary.clone()).collect();
            print!("{}", comparison_table(&summaries));
            let episodes: usize = r.campaigns.iter().map(|c| c.runs.len()).sum();
            println!("{episodes} episodes, seed {seed}, elapsed {:.1} s", r.elapsed.as_secs_f64());
            println!("wrote {} and {}", r.bundle.runs_csv.display(), r.bundle.campaign_csv.display());
            Ok(true)
        }
        Command::Selftest { seed } => {
            let reports = oracles::all(seed);
            for r in &reports {
                println!("{}", r.line());
            }
            let ok = reports.iter().all(|r| r.passed());
            println!("{}", if ok { "selftest passed" } else { "selftest FAILED" });
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
