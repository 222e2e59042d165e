//! Campaign orchestration and the output bundle.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rayon::prelude::*;
use wbcvar_core::sim::{campaign_seeds, run_episode, summarize, CampaignSummary, ControllerKind, RunMetrics, ScenarioConfig};

use crate::output::{comparison_table, write_campaigns, write_runs, write_trajectory, RunRow};
use crate::plot::scenario_svg;

/// Which episode logs to keep after a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    None,
    /// The first seed of each campaign.
    First,
    All,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub cfg: ScenarioConfig,
    /// Sorted by seed.
    pub runs: Vec<RunMetrics>,
    pub summary: CampaignSummary,
    pub elapsed: Duration,
}

impl Campaign {
    /// Largest KKT residual of any optimal solve in the campaign.
    pub fn max_kkt(&self) -> f64 {
        self.runs.iter().map(|r| r.max_kkt).fold(0.0, f64::max)
    }
}

/// Runs the episodes of one campaign in parallel.
pub fn run_campaign(cfg: &ScenarioConfig, keep: Keep) -> Result<Campaign> {
    let start = Instant::now();
    let seeds: Vec<u64> = campaign_seeds(cfg).collect();
    let mut runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut m = run_episode(cfg, seed)?;
            let keep_log = match keep {
                Keep::None => false,
                Keep::First => seed == cfg.base_seed,
                Keep::All => true,
            };
            if !keep_log {
                m.trajectory = Vec::new();
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, wbcvar_core::CoreError>>()
        .with_context(|| format!("scenario {} with {}", cfg.name, cfg.controller.name()))?;
    runs.sort_by_key(|r| r.seed.wrapping_sub(cfg.base_seed));
    let summary = summarize(cfg, &runs);
    Ok(Campaign { cfg: cfg.clone(), runs, summary, elapsed: start.elapsed() })
}

/// Every (scenario, controller) pair, scenarios outermost.
pub fn pairs(scenarios: &[ScenarioConfig], controllers: &[ControllerKind]) -> Vec<ScenarioConfig> {
    scenarios.iter().flat_map(|s| controllers.iter().map(move |c| s.clone().with_controller(*c))).collect()
}

pub fn run_all(configs: &[ScenarioConfig], keep: Keep) -> Result<Vec<Campaign>> {
    configs.iter().map(|c| run_campaign(c, keep)).collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BundleOptions {
    pub plot: bool,
    pub trace: bool,
}

/// Files written for a set of campaigns.
#[derive(Debug, Clone, Default)]
pub struct Bundle {
    pub runs_csv: PathBuf,
    pub campaign_csv: PathBuf,
    pub table: PathBuf,
    pub plots: Vec<PathBuf>,
    pub trajectories: Vec<PathBuf>,
}

/// Writes `runs.csv`, `campaign.csv` and `summary.txt`, plus per-scenario
/// SVGs under `plots/` and per-episode logs under `trajectories/`.
pub fn write_bundle(dir: &Path, campaigns: &[Campaign], opts: BundleOptions) -> Result<Bundle> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut bundle = Bundle {
        runs_csv: dir.join("runs.csv"),
        campaign_csv: dir.join("campaign.csv"),
        table: dir.join("summary.txt"),
        ..Default::default()
    };

    let rows: Vec<RunRow> = campaigns.iter().flat_map(|c| c.runs.iter().map(|m| RunRow::new(&c.cfg, m))).collect();
    write_runs(create(&bundle.runs_csv)?, &rows)?;
    let summaries: Vec<CampaignSummary> = campaigns.iter().map(|c| c.summary.clone()).collect();
    write_campaigns(create(&bundle.campaign_csv)?, &summaries)?;
    fs::write(&bundle.table, comparison_table(&summaries))?;

    if opts.plot || opts.trace {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir)?;
        for c in campaigns {
            for m in c.runs.iter().filter(|m| !m.trajectory.is_empty()) {
                if !opts.trace && m.seed != c.cfg.base_seed {
                    continue;
                }
                let path = tdir.join(format!("{}_{}_{}.csv", c.cfg.name, c.cfg.controller.name(), m.seed));
                write_trajectory(create(&path)?, &c.cfg, m)?;
                bundle.trajectories.push(path);
            }
        }
    }

    if opts.plot {
        let pdir = dir.join("plots");
        fs::create_dir_all(&pdir)?;
        let mut names: Vec<&str> = Vec::new();
        for c in campaigns {
            if !names.contains(&c.cfg.name.as_str()) {
                names.push(&c.cfg.name);
            }
        }
        for name in names {
            let group: Vec<&Campaign> = campaigns.iter().filter(|c| c.cfg.name == name).collect();
            let episodes: Vec<(ControllerKind, &RunMetrics)> = group
                .iter()
                .filter_map(|c| {
                    c.runs.iter().find(|m| m.seed == c.cfg.base_seed && !m.trajectory.is_empty()).map(|m| (c.cfg.controller, m))
                })
                .collect();
            if episodes.is_empty() {
                continue;
            }
            let path = pdir.join(format!("{name}.svg"));
            fs::write(&path, scenario_svg(&group[0].cfg, &episodes))?;
            bundle.plots.push(path);
        }
    }
    Ok(bundle)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}
