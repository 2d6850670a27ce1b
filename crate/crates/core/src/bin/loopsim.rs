use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use loopsim::harness::{
    read_results, run_plan, summarize, write_charts, write_results, write_summary, ExperimentPlan,
    ResultRow, TechniqueChoice,
};
use loopsim::platform::{PerturbationSpec, PlatformConfig, Preset, Scenario, DEFAULT_TRACE_HORIZON};
use loopsim::sil::{run_with_sil, MonitorMode, SilConfig};
use loopsim::simengine::{simulate, SimConfig};
use loopsim::workload::{generate_workload, DistributionSpec, Workload, DEFAULT_ITERATIONS};

#[derive(Parser)]
#[command(name = "loopsim", version, about = "Simulate self-scheduled parallel loops on perturbed heterogeneous platforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one loop under one technique (or SIL) and write its logs.
    Simulate {
        /// Application name, a workload file, or a distribution JSON file.
        #[arg(long, default_value = "psia")]
        app: String,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        n: usize,
        /// p224, p696, p<count>s, or a platform JSON file.
        #[arg(long, default_value = "p696")]
        platform: String,
        #[arg(long, default_value = "SIL")]
        technique: TechniqueChoice,
        #[arg(long, default_value = "np")]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        sil_period: Option<f64>,
        #[arg(long, default_value = "ground-truth")]
        monitor: MonitorMode,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every cell of an experiment plan.
    RunPlan {
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        no_chunk_logs: bool,
        #[arg(long)]
        no_charts: bool,
    },
    /// Summarize a results.csv file.
    Report {
        results: PathBuf,
        /// Also write summary.csv and charts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_workload(app: &str, n: usize, seed: u64) -> Result<(String, Workload)> {
    let path = Path::new(app);
    if path.is_file() {
        let name = path
            .file_stem()
            .map_or_else(|| "custom".to_string(), |s| s.to_string_lossy().into_owned());
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(path).with_context(|| format!("reading {app}"))?;
            let spec: DistributionSpec = serde_json::from_str(&text)?;
            return Ok((name, generate_workload(&spec, n, seed)?));
        }
        return Ok((name, Workload::load(path)?));
    }
    let spec = DistributionSpec::preset(app)?;
    Ok((app.to_string(), generate_workload(&spec, n, seed)?))
}

fn load_platform(arg: &str) -> Result<(String, PlatformConfig)> {
    let path = Path::new(arg);
    if path.is_file() {
        let name = path
            .file_stem()
            .map_or_else(|| "custom".to_string(), |s| s.to_string_lossy().into_owned());
        return Ok((name, PlatformConfig::load(path)?));
    }
    let preset: Preset = arg.parse()?;
    Ok((preset.name(), PlatformConfig::from_preset(&preset)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    app: &str,
    n: usize,
    platform: &str,
    technique: TechniqueChoice,
    scenario: Scenario,
    seed: u64,
    sil_period: Option<f64>,
    monitor: MonitorMode,
    out: &Path,
) -> Result<()> {
    let (app_name, workload) = load_workload(app, n, seed)?;
    let (platform_name, pcfg) = load_platform(platform)?;
    let model = pcfg
        .build()?
        .with_perturbation(&PerturbationSpec { scenario, seed }, DEFAULT_TRACE_HORIZON)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (result, switches) = match technique {
        TechniqueChoice::Single(kind) => (simulate(&SimConfig::new(&workload, &model, kind)?)?, 0),
        TechniqueChoice::Sil => {
            let mut sil = SilConfig {
                monitor_mode: monitor,
                ..SilConfig::default()
            };
            if let Some(p) = sil_period {
                sil.period = p;
            }
            let cfg = SimConfig::new(&workload, &model, sil.candidates[0])?;
            let outcome = run_with_sil(&cfg, &sil)?;
            let path = out.join("selections.csv");
            outcome.write_selection_log(fs::File::create(&path)?)?;
            eprintln!(
                "{} selections, {:.3} s wall spent selecting",
                outcome.selections.len(),
                outcome.selection_wall().as_secs_f64()
            );
            let switches = outcome.result.switch_count();
            (outcome.result, switches)
        }
    };
    result.write_chunk_log(std::io::BufWriter::new(fs::File::create(out.join("chunk_log.csv"))?))?;
    let row = ResultRow {
        app: app_name,
        technique: technique.to_string(),
        scenario: scenario.to_string(),
        platform: platform_name,
        seed,
        makespan_s: result.makespan - result.t0,
        total_overhead_s: result.total_overhead(),
        chunk_count: result.chunk_count(),
        sil_switch_count: switches,
        selection_timeline: String::new(),
    };
    write_results(&out.join("results.csv"), std::slice::from_ref(&row))?;
    println!(
        "{} {} {} {}: makespan {:.3} s, overhead {:.3} s, {} chunks, {} switches",
        row.app, row.technique, row.scenario, row.platform, row.makespan_s, row.total_overhead_s, row.chunk_count, switches
    );
    for (t, k) in &result.technique_timeline {
        if technique == TechniqueChoice::Sil {
            println!("  t={t:.3} {k}");
        }
    }
    Ok(())
}

fn cmd_run_plan(
    path: &Path,
    out: Option<PathBuf>,
    repetitions: Option<usize>,
    no_chunk_logs: bool,
    no_charts: bool,
) -> Result<bool> {
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(o) = out {
        plan.output_dir = o;
    }
    if let Some(r) = repetitions {
        plan.repetitions = r;
    }
    plan.chunk_logs &= !no_chunk_logs;
    plan.charts &= !no_charts;
    let outcome = run_plan(&plan)?;
    println!(
        "{} rows, {} failures, written to {}",
        outcome.rows.len(),
        outcome.failures.len(),
        plan.output_dir.display()
    );
    for f in &outcome.failures {
        eprintln!(
            "failed: {} {} {} {} {}: {}",
            f.app, f.technique, f.scenario, f.platform, f.seed, f.error
        );
    }
    Ok(outcome.all_succeeded())
}

fn cmd_report(results: &Path, out: Option<PathBuf>) -> Result<()> {
    let rows = read_results(results)?;
    if rows.is_empty() {
        bail!("{} has no rows", results.display());
    }
    let summary = summarize(&rows);
    println!(
        "{:<12} {:<8} {:<8} {:>5} {:<7} {:>12} {:>12} {:>5} {:>7}",
        "app", "scenario", "platform", "seed", "best", "best_s", "sil_s", "rank", "ratio"
    );
    for s in &summary {
        let sil = s.sil_makespan_s.map_or("-".into(), |m| format!("{m:.2}"));
        let rank = s.sil_rank.map_or("-".into(), |r| r.to_string());
        let ratio = s.sil_ratio.map_or("-".into(), |r| format!("{r:.3}"));
        let flag = if s.sil_outside_band == Some(true) { " outside band" } else { "" };
        println!(
            "{:<12} {:<8} {:<8} {:>5} {:<7} {:>12.2} {:>12} {:>5} {:>7}{}",
            s.app, s.scenario, s.platform, s.seed, s.best_technique, s.best_makespan_s, sil, rank, ratio, flag
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        write_summary(&dir.join("summary.csv"), &summary)?;
        write_charts(&dir, &rows)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate {
            app,
            n,
            platform,
            technique,
            scenario,
            seed,
            sil_period,
            monitor,
            out,
        } => cmd_simulate(&app, n, &platform, technique, scenario, seed, sil_period, monitor, &out).map(|_| true),
        Command::RunPlan {
            plan,
            out,
            repetitions,
            no_chunk_logs,
            no_charts,
        } => cmd_run_plan(&plan, out, repetitions, no_chunk_logs, no_charts),
        Command::Report { results, out } => cmd_report(&results, out).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
