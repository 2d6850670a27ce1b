//! Simulator-in-the-loop technique selection.
//!
//! Every `period` seconds the controller snapshots the live run, replays
//! the remaining loop under each candidate technique on a platform frozen
//! at the observed state, and hands subsequent claims to the technique with
//! the smallest predicted makespan.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platform::{PlatformModel, Trace, TraceKind, TraceSet};
use crate::sched::{ChunkSample, SchedContext, SchedulerState, TechniqueKind};
use crate::simengine::{simulate, Engine, PeRuntime, PeStart, SimConfig, SimResult, StartState};
use crate::workload::WorkloadStats;

pub const DEFAULT_PERIOD: f64 = 50.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorMode {
    /// Read the true trace factors at the tick.
    #[default]
    GroundTruth,
    /// Infer speeds from each PE's last chunk and the network from the last claim.
    Estimated,
}

impl FromStr for MonitorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground-truth" => Ok(MonitorMode::GroundTruth),
            "estimated" => Ok(MonitorMode::Estimated),
            other => Err(Error::config("monitor_mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    /// Assume the observed speeds and network factors hold until the loop ends.
    #[default]
    FreezeCurrentState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SilConfig {
    pub period: f64,
    /// Evaluation order doubles as the tie-break order.
    pub candidates: Vec<TechniqueKind>,
    pub monitor_mode: MonitorMode,
    pub horizon_mode: HorizonMode,
}

impl Default for SilConfig {
    fn default() -> Self {
        SilConfig {
            period: DEFAULT_PERIOD,
            candidates: TechniqueKind::ALL.to_vec(),
            monitor_mode: MonitorMode::default(),
            horizon_mode: HorizonMode::default(),
        }
    }
}

impl SilConfig {
    pub fn with_candidates(candidates: Vec<TechniqueKind>) -> Self {
        SilConfig {
            candidates,
            ..SilConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::config("period", format!("must be > 0, got {}", self.period)));
        }
        if self.candidates.is_empty() {
            return Err(Error::config("candidates", "at least one candidate is required"));
        }
        Ok(())
    }
}

/// The live run as the controller sees it at a tick.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorSnapshot {
    pub t_now: f64,
    pub remaining_start: usize,
    pub in_flight: Vec<PeStart>,
    pub observed_speed: Vec<f64>,
    pub observed_bw_factor: f64,
    pub observed_lat_factor: f64,
    pub technique_state: SchedulerState,
    pub history: Vec<Vec<ChunkSample>>,
    pub ctx: SchedContext,
}

impl MonitorSnapshot {
    /// The live platform with speeds and network factors pinned at the observed values.
    pub fn frozen_platform(&self, live: &PlatformModel) -> Result<PlatformModel> {
        if self.observed_speed.len() != live.num_cores() {
            return Err(Error::config(
                "observed_speed",
                format!("{} speeds for {} cores", self.observed_speed.len(), live.num_cores()),
            ));
        }
        let cores = live
            .cores
            .iter()
            .zip(&self.observed_speed)
            .map(|(c, &speed)| {
                let mut c = c.clone();
                c.speed = speed;
                c
            })
            .collect();
        let full = Arc::new(Trace::constant(TraceKind::Availability, 1.0));
        let traces = TraceSet {
            avail: vec![full; live.num_cores()],
            bw: Arc::new(Trace::constant(TraceKind::Bandwidth, self.observed_bw_factor)),
            lat: Arc::new(Trace::constant(TraceKind::LatencyFactor, self.observed_lat_factor)),
        };
        Ok(PlatformModel {
            cores,
            network: live.network.clone(),
            traces,
        })
    }

    fn start_for(&self, candidate: TechniqueKind) -> StartState {
        let scheduler = (candidate == self.technique_state.kind).then(|| self.technique_state.clone());
        StartState {
            t0: self.t_now,
            scheduled: self.remaining_start,
            pes: self.in_flight.clone(),
            scheduler,
            history: self.history.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub t: f64,
    pub selected: TechniqueKind,
    /// Predicted absolute makespan per candidate, in candidate order.
    pub predicted: Vec<f64>,
    /// Wall-clock cost of evaluating all candidates.
    pub wall: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilOutcome {
    pub result: SimResult,
    pub candidates: Vec<TechniqueKind>,
    pub selections: Vec<Selection>,
}

impl SilOutcome {
    pub fn selection_wall(&self) -> Duration {
        self.selections.iter().map(|s| s.wall).sum()
    }

    pub fn write_selection_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t,selected")?;
        for c in &self.candidates {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for s in &self.selections {
            write!(out, "{},{}", s.t, s.selected)?;
            for p in &s.predicted {
                write!(out, ",{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub(crate) fn take_snapshot(eng: &Engine, mode: MonitorMode) -> MonitorSnapshot {
    let t = eng.now;
    let platform = eng.cfg.platform;
    let in_flight = eng
        .pes
        .iter()
        .map(|pe| match *pe {
            PeRuntime::Requesting { issued, completes } => PeStart::Requesting { issued, completes },
            PeRuntime::Computing { until, feedback } => PeStart::Computing { until, feedback },
            PeRuntime::Idle => PeStart::Idle,
        })
        .collect();
    let (observed_speed, bw, lat) = match mode {
        MonitorMode::GroundTruth => (
            platform
                .cores
                .iter()
                .zip(&platform.traces.avail)
                .map(|(c, tr)| c.speed * tr.value_at(t))
                .collect(),
            platform.traces.bw.value_at(t),
            platform.traces.lat.value_at(t),
        ),
        MonitorMode::Estimated => {
            let speeds = platform
                .cores
                .iter()
                .zip(&eng.history)
                .map(|(c, h)| estimate_speed(h.last(), &eng.cfg.stats).unwrap_or(c.speed))
                .collect();
            let lat = eng
                .last_round_trip
                .map_or(1.0, |rt| estimate_latency_factor(platform, rt));
            (speeds, 1.0, lat)
        }
    };
    MonitorSnapshot {
        t_now: t,
        remaining_start: eng.state.scheduled,
        in_flight,
        observed_speed,
        observed_bw_factor: bw,
        observed_lat_factor: lat,
        technique_state: eng.state.clone(),
        history: eng.history.clone(),
        ctx: eng.cfg.ctx.clone(),
    }
}

/// Speed implied by a chunk of mean-cost iterations.
pub fn estimate_speed(last: Option<&ChunkSample>, stats: &WorkloadStats) -> Option<f64> {
    let s = last?;
    (s.exec_time > 0.0).then(|| s.size as f64 * stats.mu_flop / s.exec_time)
}

/// Latency factor that explains an observed round trip at nominal bandwidth.
pub fn estimate_latency_factor(platform: &PlatformModel, round_trip: f64) -> f64 {
    use crate::platform::LatencyMode;
    let net = &platform.network;
    let latency = round_trip / 2.0 - net.msg_bits / net.bandwidth0;
    if net.latency0 <= 0.0 || latency <= 0.0 {
        return 1.0;
    }
    let f = match net.latency_mode {
        LatencyMode::Divide => net.latency0 / latency,
        LatencyMode::Multiply => latency / net.latency0,
    };
    f.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Predicts every candidate's makespan from `snap` and picks the smallest.
pub fn select_technique(
    snap: &MonitorSnapshot,
    cfg: &SilConfig,
    flops: &[f64],
    stats: &WorkloadStats,
    live: &PlatformModel,
) -> Result<Selection> {
    cfg.validate()?;
    if snap.remaining_start >= flops.len() {
        return Err(Error::config("remaining_start", "no iterations left to schedule"));
    }
    let started = Instant::now();
    let frozen = match cfg.horizon_mode {
        HorizonMode::FreezeCurrentState => snap.frozen_platform(live)?,
    };
    let predicted = cfg
        .candidates
        .par_iter()
        .map(|&kind| {
            let sim = SimConfig {
                flops,
                stats: *stats,
                platform: &frozen,
                ctx: snap.ctx.clone(),
                technique: kind,
                start: Some(snap.start_for(kind)),
                record_log: false,
            };
            match simulate(&sim) {
                Ok(r) => Ok(r.makespan),
                // A candidate that cannot be configured on this platform is never selected.
                Err(Error::Config { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if predicted.iter().all(|m| m.is_infinite()) {
        return Err(Error::config("candidates", "no candidate can run on this platform"));
    }
    let mut best = 0;
    for (i, &m) in predicted.iter().enumerate() {
        if m < predicted[best] {
            best = i;
        }
    }
    Ok(Selection {
        t: snap.t_now,
        selected: cfg.candidates[best],
        predicted,
        wall: started.elapsed(),
    })
}

/// Runs the loop with the controller re-selecting the technique every period.
/// `cfg.technique` is ignored; the first selection happens at the start time.
pub fn run_with_sil(cfg: &SimConfig, sil: &SilConfig) -> Result<SilOutcome> {
    sil.validate()?;
    let mut live = cfg.clone();
    live.technique = sil.candidates[0];
    if let Some(st) = live.start.as_mut() {
        st.scheduler = None;
    }
    let mut eng = Engine::new(live)?;
    let t0 = eng.now;
    eng.schedule_tick(t0);
    let mut selections = Vec::new();
    while let Some(t) = eng.run_to_tick()? {
        let snap = take_snapshot(&eng, sil.monitor_mode);
        let sel = select_technique(&snap, sil, cfg.flops, &cfg.stats, cfg.platform)?;
        log::debug!("tick t={t}: {} {:?}", sel.selected, sel.predicted);
        eng.switch_to(sel.selected, t)?;
        selections.push(sel);
        eng.schedule_tick(t + sil.period);
    }
    Ok(SilOutcome {
        result: eng.finish(),
        candidates: sil.candidates.clone(),
        selections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::{build_platform, CoreClass, NetworkSpec};
    use crate::workload::Workload;

    fn platform(speeds: &[f64]) -> PlatformModel {
        let classes: Vec<_> = speeds.iter().map(|&s| (CoreClass::Other, s / 1e9)).collect();
        build_platform(&classes, 1e9, NetworkSpec::instantaneous()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SilConfig::default().validate().is_ok());
        assert!(SilConfig::with_candidates(vec![]).validate().is_err());
        let bad = SilConfig {
            period: 0.0,
            ..SilConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn singleton_matches_plain_run() {
        let mut p = platform(&[2e9, 1e9, 1e9]);
        p.network.latency0 = 1e-3;
        let w = Workload {
            flops: (0..300).map(|i| 1e8 + (i % 7) as f64 * 3e7).collect(),
            seed: 0,
        };
        for kind in TechniqueKind::ALL {
            let cfg = SimConfig::new(&w, &p, kind).unwrap();
            let plain = simulate(&cfg).unwrap();
            let mut sil = SilConfig::with_candidates(vec![kind]);
            sil.period = 2.0;
            let out = run_with_sil(&cfg, &sil).unwrap();
            assert_eq!(out.result.makespan, plain.makespan, "{kind}");
            assert_eq!(out.result.chunk_log, plain.chunk_log, "{kind}");
            assert!(out.selections.iter().all(|s| s.selected == kind));
        }
    }

    #[test]
    fn tie_goes_to_first_candidate() {
        let p = platform(&[1e9, 1e9]);
        let w = Workload { flops: vec![1e9; 8], seed: 0 };
        let cfg = SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap();
        let sil = SilConfig::with_candidates(vec![TechniqueKind::Gss, TechniqueKind::Ss]);
        let out = run_with_sil(&cfg, &sil).unwrap();
        assert_eq!(out.selections[0].predicted, vec![4.0, 4.0]);
        assert_eq!(out.selections[0].selected, TechniqueKind::Gss);
        assert_eq!(out.result.technique_timeline, vec![(0.0, TechniqueKind::Gss)]);
    }

    #[test]
    fn all_candidates_tie_on_uniform_work() {
        let p = platform(&[1e9; 4]);
        let w = Workload { flops: vec![1e9; 64], seed: 0 };
        let cfg = SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap();
        let out = run_with_sil(&cfg, &SilConfig::default()).unwrap();
        let first = &out.selections[0];
        assert_eq!(first.selected, TechniqueKind::Static);
        // FSC has no overhead to trade against and is priced out.
        assert!(first.predicted[2].is_infinite());
        for (k, m) in TechniqueKind::ALL.iter().zip(&first.predicted) {
            if matches!(k, TechniqueKind::Static | TechniqueKind::Ss | TechniqueKind::Gss | TechniqueKind::Wf) {
                assert_eq!(*m, 16.0, "{k}");
            }
        }
    }

    #[test]
    fn snapshot_reads_trace_factors() {
        use crate::platform::{PerturbationSpec, Scenario};
        let base = platform(&[1e9, 2e9]);
        let pert = |code: &str| {
            base.clone()
                .with_perturbation(
                    &PerturbationSpec { scenario: code.parse::<Scenario>().unwrap(), seed: 1 },
                    1000.0,
                )
                .unwrap()
        };
        let w = Workload { flops: vec![1e9; 400], seed: 0 };
        for (code, factor) in [("np", 1.0), ("pea-cs", 0.25)] {
            let p = pert(code);
            let mut eng = Engine::new(SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
            eng.schedule_tick(60.0);
            assert_eq!(eng.run_to_tick().unwrap(), Some(60.0));
            let snap = take_snapshot(&eng, MonitorMode::GroundTruth);
            assert_eq!(snap.observed_speed, vec![1e9 * factor, 2e9 * factor]);
            assert_eq!((snap.observed_bw_factor, snap.observed_lat_factor), (1.0, 1.0));
            assert!(snap.remaining_start > 0 && snap.remaining_start < 400);
            let est = take_snapshot(&eng, MonitorMode::Estimated);
            assert_eq!(est.observed_speed, vec![1e9 * factor, 2e9 * factor]);
        }
    }

    #[test]
    fn selection_log_header_names_candidates() {
        let p = platform(&[1e9]);
        let w = Workload { flops: vec![1e9; 2], seed: 0 };
        let cfg = SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap();
        let sil = SilConfig::with_candidates(vec![TechniqueKind::Ss, TechniqueKind::AwfB]);
        let out = run_with_sil(&cfg, &sil).unwrap();
        let mut buf = Vec::new();
        out.write_selection_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,selected,SS,AWF-B\n0,SS,2,2\n");
    }

    #[test]
    fn speed_estimate_from_last_chunk() {
        let stats = WorkloadStats { mu_flop: 2.3e8, sigma_flop: 0.0 };
        let s = ChunkSample { size: 100, exec_time: 92.0, total_time: 93.0 };
        assert_eq!(estimate_speed(Some(&s), &stats), Some(2.5e8));
        assert_eq!(estimate_speed(None, &stats), None);
    }

    #[test]
    fn latency_estimate_inverts_transfer_time() {
        let mut p = platform(&[1e9]);
        p.network = NetworkSpec::default();
        let rt = 2.0 * p.network.one_way(1.0, 1e-5);
        let f = estimate_latency_factor(&p, rt);
        assert!((f - 1e-5).abs() / 1e-5 < 1e-9);
        assert_eq!(estimate_latency_factor(&p, p.nominal_round_trip()), 1.0);
    }
}
