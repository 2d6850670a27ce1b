//! Factorial experiment runner: plans, result rows, summaries and charts.

mod chart;
mod summary;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::platform::{
    build_preset, PerturbationSpec, Preset, Scenario, DEFAULT_S0, DEFAULT_TRACE_HORIZON,
};
use crate::sched::TechniqueKind;
use crate::sil::{run_with_sil, SilConfig};
use crate::simengine::{simulate, SimConfig, SimResult};
use crate::workload::{generate_workload, DistributionSpec, Workload, DEFAULT_ITERATIONS};

pub use chart::write_app_chart;
pub use summary::{summarize, write_summary, SummaryRow};

pub const RESULTS_HEADER: &str =
    "app,technique,scenario,platform,seed,makespan_s,total_overhead_s,chunk_count,sil_switch_count";

/// A single technique or the selecting controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TechniqueChoice {
    Single(TechniqueKind),
    Sil,
}

impl TechniqueChoice {
    /// The eleven techniques followed by SIL.
    pub fn all() -> Vec<TechniqueChoice> {
        TechniqueKind::ALL
            .iter()
            .map(|&k| TechniqueChoice::Single(k))
            .chain([TechniqueChoice::Sil])
            .collect()
    }
}

impl fmt::Display for TechniqueChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TechniqueChoice::Single(k) => k.fmt(f),
            TechniqueChoice::Sil => f.write_str("SIL"),
        }
    }
}

impl FromStr for TechniqueChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "SIL" {
            Ok(TechniqueChoice::Sil)
        } else {
            s.parse().map(TechniqueChoice::Single)
        }
    }
}

impl Serialize for TechniqueChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TechniqueChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An application: a reference name, or a named custom distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AppSpec {
    Named(String),
    Custom {
        name: String,
        distribution: DistributionSpec,
    },
}

impl AppSpec {
    pub fn name(&self) -> &str {
        match self {
            AppSpec::Named(n) | AppSpec::Custom { name: n, .. } => n,
        }
    }

    pub fn distribution(&self) -> Result<DistributionSpec> {
        match self {
            AppSpec::Named(n) => DistributionSpec::preset(n),
            AppSpec::Custom { distribution, .. } => Ok(distribution.clone()),
        }
    }
}

fn default_apps() -> Vec<AppSpec> {
    DistributionSpec::APP_NAMES
        .iter()
        .map(|n| AppSpec::Named(n.to_string()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub apps: Vec<AppSpec>,
    pub techniques: Vec<TechniqueChoice>,
    pub scenarios: Vec<Scenario>,
    pub platforms: Vec<Preset>,
    pub iterations: usize,
    pub repetitions: usize,
    /// Repetition `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    pub s0: f64,
    /// One-way latency override, seconds.
    pub latency0: Option<f64>,
    /// Claim message size override, bits.
    pub msg_bits: Option<f64>,
    pub trace_horizon: f64,
    pub sil: SilConfig,
    pub output_dir: PathBuf,
    pub chunk_logs: bool,
    pub charts: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            apps: default_apps(),
            techniques: TechniqueChoice::all(),
            scenarios: Scenario::all(),
            platforms: vec![Preset::P696],
            iterations: DEFAULT_ITERATIONS,
            repetitions: 1,
            base_seed: 1,
            s0: DEFAULT_S0,
            latency0: None,
            msg_bits: None,
            trace_horizon: DEFAULT_TRACE_HORIZON,
            sil: SilConfig::default(),
            output_dir: PathBuf::from("results"),
            chunk_logs: true,
            charts: true,
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("apps", self.apps.is_empty()),
            ("techniques", self.techniques.is_empty()),
            ("scenarios", self.scenarios.is_empty()),
            ("platforms", self.platforms.is_empty()),
        ];
        if let Some((field, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::config(*field, "must not be empty"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if self.techniques.contains(&TechniqueChoice::Sil) {
            self.sil.validate()?;
        }
        for app in &self.apps {
            app.distribution()?.validate()?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|r| self.base_seed + r).collect()
    }

    /// Every cell in deterministic order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (app_idx, _) in self.apps.iter().enumerate() {
            for &technique in &self.techniques {
                for &scenario in &self.scenarios {
                    for platform in &self.platforms {
                        for seed in self.seeds() {
                            out.push(Cell {
                                app_idx,
                                technique,
                                scenario,
                                platform: *platform,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub app_idx: usize,
    pub technique: TechniqueChoice,
    pub scenario: Scenario,
    pub platform: Preset,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub app: String,
    pub technique: String,
    pub scenario: String,
    pub platform: String,
    pub seed: u64,
    pub makespan_s: f64,
    pub total_overhead_s: f64,
    pub chunk_count: usize,
    pub sil_switch_count: usize,
    /// `t:TECH` pairs separated by `;`; kept out of results.csv.
    #[serde(skip)]
    pub selection_timeline: String,
}

impl ResultRow {
    fn new(app: &str, cell: &Cell, result: &SimResult, switches: usize) -> Self {
        ResultRow {
            app: app.to_string(),
            technique: cell.technique.to_string(),
            scenario: cell.scenario.to_string(),
            platform: cell.platform.name(),
            seed: cell.seed,
            makespan_s: result.makespan - result.t0,
            total_overhead_s: result.total_overhead(),
            chunk_count: result.chunk_count(),
            sil_switch_count: switches,
            selection_timeline: result
                .technique_timeline
                .iter()
                .map(|(t, k)| format!("{t}:{k}"))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    fn stem(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.app, self.technique, self.scenario, self.platform, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub app: String,
    pub technique: String,
    pub scenario: String,
    pub platform: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct PlanOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    /// Wall seconds spent selecting, per SIL row (same order as SIL rows).
    pub sil_wall: Vec<(String, f64)>,
}

impl PlanOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

struct CellOutput {
    row: ResultRow,
    chunk_log: Option<Vec<u8>>,
    selection_log: Option<Vec<u8>>,
    sil_wall: Option<f64>,
}

/// Runs one cell. The workload must belong to the cell's app and seed.
pub fn run_cell(
    plan: &ExperimentPlan,
    cell: &Cell,
    workload: &Workload,
    keep_log: bool,
) -> Result<(ResultRow, SimResult, Option<crate::sil::SilOutcome>)> {
    let mut platform = build_preset(&cell.platform, plan.s0)?;
    if let Some(l) = plan.latency0 {
        platform.network.latency0 = l;
    }
    if let Some(b) = plan.msg_bits {
        platform.network.msg_bits = b;
    }
    let platform = platform.with_perturbation(
        &PerturbationSpec {
            scenario: cell.scenario,
            seed: cell.seed,
        },
        plan.trace_horizon,
    )?;
    let app = plan.apps[cell.app_idx].name();
    match cell.technique {
        TechniqueChoice::Single(kind) => {
            let mut cfg = SimConfig::new(workload, &platform, kind)?;
            cfg.record_log = keep_log;
            let result = simulate(&cfg)?;
            Ok((ResultRow::new(app, cell, &result, 0), result, None))
        }
        TechniqueChoice::Sil => {
            let mut cfg = SimConfig::new(workload, &platform, plan.sil.candidates[0])?;
            cfg.record_log = keep_log;
            let out = run_with_sil(&cfg, &plan.sil)?;
            let row = ResultRow::new(app, cell, &out.result, out.result.switch_count());
            Ok((row, out.result.clone(), Some(out)))
        }
    }
}

fn execute(plan: &ExperimentPlan, cell: &Cell, workload: &Workload) -> Result<CellOutput> {
    let (row, result, sil) = run_cell(plan, cell, workload, plan.chunk_logs)?;
    let chunk_log = if plan.chunk_logs {
        let mut buf = Vec::new();
        result
            .write_chunk_log(&mut buf)
            .map_err(|e| Error::io("chunk log", e))?;
        Some(buf)
    } else {
        None
    };
    let (selection_log, sil_wall) = match sil {
        Some(out) => {
            let mut buf = Vec::new();
            out.write_selection_log(&mut buf)
                .map_err(|e| Error::io("selection log", e))?;
            (Some(buf), Some(out.selection_wall().as_secs_f64()))
        }
        None => (None, None),
    };
    Ok(CellOutput {
        row,
        chunk_log,
        selection_log,
        sil_wall,
    })
}

/// Executes every cell of `plan` and writes all artifacts under its output directory.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    plan.validate()?;
    let dir = &plan.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if plan.chunk_logs {
        let d = dir.join("chunk_logs");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    if plan.techniques.contains(&TechniqueChoice::Sil) {
        let d = dir.join("selections");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut workloads: HashMap<(usize, u64), Result<Arc<Workload>, String>> = HashMap::new();
    for (i, app) in plan.apps.iter().enumerate() {
        for seed in plan.seeds() {
            let w = app
                .distribution()
                .and_then(|d| generate_workload(&d, plan.iterations, seed))
                .map(Arc::new)
                .map_err(|e| e.to_string());
            workloads.insert((i, seed), w);
        }
    }

    let cells = plan.cells();
    let outputs: Vec<Result<CellOutput, String>> = cells
        .par_iter()
        .map(|cell| {
            let w = workloads[&(cell.app_idx, cell.seed)].clone()?;
            let out = execute(plan, cell, &w).map_err(|e| e.to_string())?;
            if let Some(buf) = &out.chunk_log {
                let p = dir.join("chunk_logs").join(format!("{}.csv", out.row.stem()));
                fs::write(&p, buf).map_err(|e| Error::io(&p, e).to_string())?;
            }
            if let Some(buf) = &out.selection_log {
                let p = dir.join("selections").join(format!("{}.csv", out.row.stem()));
                fs::write(&p, buf).map_err(|e| Error::io(&p, e).to_string())?;
            }
            Ok(out)
        })
        .collect();

    let mut outcome = PlanOutcome::default();
    for (cell, out) in cells.iter().zip(outputs) {
        match out {
            Ok(o) => {
                if let Some(w) = o.sil_wall {
                    outcome.sil_wall.push((o.row.stem(), w));
                }
                outcome.rows.push(o.row);
            }
            Err(error) => {
                log::warn!("cell failed: {error}");
                outcome.failures.push(CellFailure {
                    app: plan.apps[cell.app_idx].name().to_string(),
                    technique: cell.technique.to_string(),
                    scenario: cell.scenario.to_string(),
                    platform: cell.platform.name(),
                    seed: cell.seed,
                    error,
                });
            }
        }
    }

    write_results(&dir.join("results.csv"), &outcome.rows)?;
    if !outcome.failures.is_empty() {
        write_failures(&dir.join("failures.csv"), &outcome.failures)?;
    }
    if !outcome.sil_wall.is_empty() {
        let p = dir.join("sil_wall.csv");
        let mut text = String::from("run,selection_wall_s\n");
        for (stem, w) in &outcome.sil_wall {
            text.push_str(&format!("{stem},{w}\n"));
        }
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let summary = summarize(&outcome.rows);
    write_summary(&dir.join("summary.csv"), &summary)?;
    if plan.charts {
        write_charts(dir, &outcome.rows)?;
    }
    Ok(outcome)
}

/// One grouped bar chart per (app, platform).
pub fn write_charts(dir: &Path, rows: &[ResultRow]) -> Result<Vec<PathBuf>> {
    let d = dir.join("charts");
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.app.clone(), r.platform.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut paths = Vec::new();
    for (app, platform) in keys {
        let subset: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.app == app && r.platform == platform)
            .collect();
        let p = d.join(format!("{app}_{platform}.svg"));
        write_app_chart(&p, &format!("{app} on {platform}"), &subset)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        drop(w);
        fs::write(path, format!("{RESULTS_HEADER}\n")).map_err(|e| Error::io(path, e))?;
        return Ok(());
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Parse {
            source_name: path.display().to_string(),
            line: 1,
            reason: format!("unexpected header `{}`", header.join(",")),
        });
    }
    rd.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_failures(path: &Path, failures: &[CellFailure]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["app", "technique", "scenario", "platform", "seed", "error"])?;
    for f in failures {
        w.write_record([
            f.app.as_str(),
            &f.technique,
            &f.scenario,
            &f.platform,
            &f.seed.to_string(),
            &f.error,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
