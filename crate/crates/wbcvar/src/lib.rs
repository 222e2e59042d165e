//! Command-line front end for `wbcvar-core`: settings files, parallel Monte
//! Carlo campaigns, CSV and SVG output, and the oracle self-test.

pub mod config;
pub mod oracles;
pub mod output;
pub mod plot;
pub mod runner;

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Result};
use wbcvar_core::sim::ControllerKind;

use config::Settings;
use runner::{pairs, run_all, write_bundle, Bundle, BundleOptions, Campaign, Keep};

/// Result of a `reproduce` invocation.
pub struct Reproduction {
    pub campaigns: Vec<Campaign>,
    pub bundle: Bundle,
    pub elapsed: Duration,
}

/// Every preset with both controllers, `settings.runs` episodes each from
/// `seed`, written to `out`.
pub fn reproduce(settings: &Settings, seed: u64, out: &Path) -> Result<Reproduction> {
    let start = Instant::now();
    let mut s = settings.clone();
    s.seed = seed;
    let scenarios = s
        .preset_names()
        .iter()
        .map(|n| s.scenario(n).ok_or_else(|| anyhow!("preset {n} has invalid geometry")))
        .collect::<Result<Vec<_>>>()?;
    let campaigns = run_all(&pairs(&scenarios, &ControllerKind::ALL), Keep::None)?;
    let bundle = write_bundle(out, &campaigns, BundleOptions::default())?;
    Ok(Reproduction { campaigns, bundle, elapsed: start.elapsed() })
}
