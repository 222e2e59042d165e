//! CSV files and the text comparison table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a file gives back the exact values that were written.

use std::io::{Read, Write};

use anyhow::{anyhow, bail, Context, Result};
use wbcvar_core::risk::barrier;
use wbcvar_core::sim::{CampaignSummary, ControllerKind, RunMetrics, ScenarioConfig};

pub const RUNS_HEADER: [&str; 8] = [
    "scenario",
    "controller",
    "seed",
    "success",
    "min_distance_m",
    "steps",
    "filter_active_steps",
    "solver_fallbacks",
];

pub const CAMPAIGN_HEADER: [&str; 6] = ["scenario", "controller", "runs", "successes", "sr_percent", "mdp_m"];

pub const TRAJECTORY_HEADER: [&str; 12] = [
    "t_s",
    "av_x",
    "av_y",
    "av_heading",
    "av_speed",
    "vru_x",
    "vru_y",
    "h_true_m",
    "u_accel",
    "u_steer",
    "gamma_m",
    "active",
];

/// One line of the per-run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub success: bool,
    pub min_distance: f64,
    pub steps: usize,
    pub filter_active_steps: usize,
    pub solver_fallbacks: usize,
}

impl RunRow {
    pub fn new(cfg: &ScenarioConfig, m: &RunMetrics) -> Self {
        Self {
            scenario: cfg.name.clone(),
            controller: cfg.controller,
            seed: m.seed,
            success: m.success,
            min_distance: m.min_distance,
            steps: m.steps,
            filter_active_steps: m.filter_active_steps,
            solver_fallbacks: m.solver_fallbacks,
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_runs<W: Write>(out: W, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.controller.name().to_string(),
            r.seed.to_string(),
            flag(r.success).to_string(),
            r.min_distance.to_string(),
            r.steps.to_string(),
            r.filter_active_steps.to_string(),
            r.solver_fallbacks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_campaigns<W: Write>(out: W, rows: &[CampaignSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAMPAIGN_HEADER)?;
    for s in rows {
        w.write_record([
            s.scenario.clone(),
            s.controller.name().to_string(),
            s.runs.to_string(),
            s.successes.to_string(),
            s.sr_percent().to_string(),
            s.mdp.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: usize) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| anyhow!("line {line}: missing column {}", i + 1))
}

fn check_header(rd: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rd.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        bail!("unexpected header {:?}", header);
    }
    Ok(())
}

pub fn read_runs<R: Read>(input: R) -> Result<Vec<RunRow>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(&mut rd, &RUNS_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let controller = field(&rec, 1, line)?;
        rows.push(RunRow {
            scenario: field(&rec, 0, line)?.to_string(),
            controller: ControllerKind::from_name(controller)
                .ok_or_else(|| anyhow!("line {line}: unknown controller {controller}"))?,
            seed: field(&rec, 2, line)?.parse()?,
            success: match field(&rec, 3, line)? {
                "1" => true,
                "0" => false,
                other => bail!("line {line}: bad success flag {other}"),
            },
            min_distance: field(&rec, 4, line)?.parse()?,
            steps: field(&rec, 5, line)?.parse()?,
            filter_active_steps: field(&rec, 6, line)?.parse()?,
            solver_fallbacks: field(&rec, 7, line)?.parse()?,
        });
    }
    Ok(rows)
}

pub fn read_campaigns<R: Read>(input: R) -> Result<Vec<CampaignSummary>> {
    let mut rd = csv::Reader::from_reader(input);
    check_header(&mut rd, &CAMPAIGN_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let controller = field(&rec, 1, line)?;
        let mdp = field(&rec, 5, line)?;
        let s = CampaignSummary {
            scenario: field(&rec, 0, line)?.to_string(),
            controller: ControllerKind::from_name(controller)
                .ok_or_else(|| anyhow!("line {line}: unknown controller {controller}"))?,
            runs: field(&rec, 2, line)?.parse()?,
            successes: field(&rec, 3, line)?.parse()?,
            mdp: if mdp.is_empty() { None } else { Some(mdp.parse()?) },
        };
        let sr: f64 = field(&rec, 4, line)?.parse()?;
        if sr != s.sr_percent() {
            bail!("line {line}: sr_percent {sr} disagrees with successes/runs");
        }
        rows.push(s);
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-step log of one episode. Input columns are empty on the final record,
/// which has no decision.
pub fn write_trajectory<W: Write>(out: W, cfg: &ScenarioConfig, m: &RunMetrics) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in &m.trajectory {
        let d = r.decision.as_ref();
        w.write_record([
            r.t.to_string(),
            r.av.pos.x.to_string(),
            r.av.pos.y.to_string(),
            r.av.heading.to_string(),
            r.av.speed.to_string(),
            r.vru.pos.x.to_string(),
            r.vru.pos.y.to_string(),
            barrier(r.av.pos, r.vru.pos, &cfg.barrier).to_string(),
            opt(d.map(|d| d.u_safe.accel)),
            opt(d.map(|d| d.u_safe.steer)),
            opt(d.and_then(|d| d.gamma)),
            d.map(|d| flag(d.active)).unwrap_or("").to_string(),
        ])?;
    }
    w.flush().context("writing trajectory")?;
    Ok(())
}

pub fn controller_label(c: ControllerKind) -> &'static str {
    match c {
        ControllerKind::BaselineCbf => "MPC-CBF-QP",
        ControllerKind::WbCvarCbf => "MPC-WB-CVaR-CBF",
    }
}

/// Fixed-width comparison table, one row per campaign.
pub fn comparison_table(rows: &[CampaignSummary]) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:<10} {:<16} {:>5} {:>8} {:>9}\n", "scenario", "controller", "runs", "SR (%)", "MDP (m)"));
    s.push_str(&format!("{}\n", "-".repeat(52)));
    for r in rows {
        let mdp = r.mdp.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<10} {:<16} {:>5} {:>8.1} {:>9}\n",
            r.scenario,
            controller_label(r.controller),
            r.runs,
            r.sr_percent(),
            mdp
        ));
    }
    s
}
