//! Discrete-event simulation of decentralized self-scheduling.
//!
//! An idle PE sends a claim that takes one network round trip. When the
//! claim lands it atomically takes the next chunk from the shared scheduler
//! state and executes it at its availability-modulated speed. On completion
//! it reports feedback and immediately claims again. There is no
//! preemption: a chunk always finishes under the technique that issued it.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::platform::PlatformModel;
use crate::sched::{ChunkSample, Feedback, SchedContext, SchedulerState, TechniqueKind};
use crate::workload::{workload_stats, Workload, WorkloadStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    ChunkComplete = 0,
    SilTick = 1,
    RequestComplete = 2,
}

#[derive(Clone, Copy, Debug)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub pe: usize,
    pub seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.kind.cmp(&other.kind))
            .then(self.pe.cmp(&other.pe))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkLogEntry {
    pub pe: usize,
    pub t_request: f64,
    pub t_assign: f64,
    pub start: usize,
    pub size: usize,
    pub t_complete: f64,
    pub technique: TechniqueKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeStats {
    pub busy: f64,
    pub idle: f64,
    pub overhead: f64,
    pub chunks: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub t0: f64,
    /// Absolute time at which the last iteration completed.
    pub makespan: f64,
    pub per_pe: Vec<PeStats>,
    pub chunk_log: Vec<ChunkLogEntry>,
    pub technique_timeline: Vec<(f64, TechniqueKind)>,
}

impl SimResult {
    pub fn total_overhead(&self) -> f64 {
        self.per_pe.iter().map(|s| s.overhead).sum()
    }

    pub fn chunk_count(&self) -> usize {
        self.per_pe.iter().map(|s| s.chunks).sum()
    }

    pub fn switch_count(&self) -> usize {
        self.technique_timeline.len().saturating_sub(1)
    }

    pub const CHUNK_LOG_HEADER: &'static str = "pe,t_request,t_assign,start,size,t_complete,technique";

    pub fn write_chunk_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CHUNK_LOG_HEADER)?;
        for e in &self.chunk_log {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.pe, e.t_request, e.t_assign, e.start, e.size, e.t_complete, e.technique
            )?;
        }
        Ok(())
    }
}

/// What a PE is doing when a simulation starts mid-run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PeStart {
    /// Issues a claim at `at`.
    Free { at: f64 },
    /// A claim is in flight.
    Requesting { issued: f64, completes: f64 },
    /// A chunk is executing; `feedback` is reported when it finishes.
    Computing { until: f64, feedback: Feedback },
    /// Not claiming. Re-activated only if the run starts with a fresh scheduler state.
    Idle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartState {
    pub t0: f64,
    /// Next unclaimed iteration.
    pub scheduled: usize,
    pub pes: Vec<PeStart>,
    /// Continue from this scheduler state instead of a fresh one.
    pub scheduler: Option<SchedulerState>,
    /// Per-PE measured chunks; seeds a fresh adaptive state.
    pub history: Vec<Vec<ChunkSample>>,
}

#[derive(Clone, Debug)]
pub struct SimConfig<'a> {
    pub flops: &'a [f64],
    pub stats: WorkloadStats,
    pub platform: &'a PlatformModel,
    /// Platform facts handed to scheduler states; usually from `platform`.
    pub ctx: SchedContext,
    pub technique: TechniqueKind,
    pub start: Option<StartState>,
    /// Keep the per-chunk log (off for what-if runs).
    pub record_log: bool,
}

impl<'a> SimConfig<'a> {
    pub fn new(
        workload: &'a Workload,
        platform: &'a PlatformModel,
        technique: TechniqueKind,
    ) -> Result<Self> {
        Ok(SimConfig {
            flops: &workload.flops,
            stats: workload_stats(workload)?,
            platform,
            ctx: SchedContext::from_platform(platform),
            technique,
            start: None,
            record_log: true,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PeRuntime {
    Requesting { issued: f64, completes: f64 },
    Computing { until: f64, feedback: Feedback },
    Idle,
}

/// Smallest `t_end` with `integral(t_start..t_end) of effective speed = flops`.
pub fn integrate_flops(platform: &PlatformModel, core: usize, t_start: f64, flops: f64) -> Result<f64> {
    let c = platform.cores.get(core).ok_or(Error::Index {
        what: "core",
        index: core,
        len: platform.cores.len(),
    })?;
    let trace = &platform.traces.avail[core];
    let mut t = t_start;
    let mut rest = flops;
    while rest > 0.0 {
        let (factor, end) = trace.segment_at(t);
        let rate = c.speed * factor;
        let dt = rest / rate;
        if t + dt <= end {
            return Ok(t + dt);
        }
        rest -= rate * (end - t);
        t = end;
    }
    Ok(t)
}

pub(crate) struct Engine<'a> {
    pub(crate) cfg: SimConfig<'a>,
    pub(crate) now: f64,
    pub(crate) state: SchedulerState,
    pub(crate) pes: Vec<PeRuntime>,
    pub(crate) history: Vec<Vec<ChunkSample>>,
    pub(crate) last_round_trip: Option<f64>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    log: Vec<ChunkLogEntry>,
    stats: Vec<PeStats>,
    timeline: Vec<(f64, TechniqueKind)>,
    t0: f64,
    last_complete: f64,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(mut cfg: SimConfig<'a>) -> Result<Self> {
        let n = cfg.flops.len();
        if n == 0 {
            return Err(Error::EmptyWorkload);
        }
        let p = cfg.platform.num_cores();
        if cfg.ctx.weights.len() != p {
            return Err(Error::config(
                "ctx.weights",
                format!("{} weights for {p} cores", cfg.ctx.weights.len()),
            ));
        }
        let start = cfg.start.take();
        let t0 = start.as_ref().map_or(0.0, |s| s.t0);
        let mut engine_history = vec![Vec::new(); p];
        let (state, continuing) = match &start {
            None => (
                SchedulerState::new(cfg.technique, n, 0, &cfg.stats, &cfg.ctx)?,
                false,
            ),
            Some(s) => {
                if s.scheduled >= n {
                    return Err(Error::config(
                        "start.scheduled",
                        format!("offset {} leaves no work of {n}", s.scheduled),
                    ));
                }
                if s.pes.len() != p {
                    return Err(Error::config(
                        "start.pes",
                        format!("{} PE states for {p} cores", s.pes.len()),
                    ));
                }
                if s.history.len() == p {
                    engine_history = s.history.clone();
                }
                match &s.scheduler {
                    Some(st) => {
                        if st.kind != cfg.technique || st.scheduled != s.scheduled || st.n_total != n {
                            return Err(Error::config(
                                "start.scheduler",
                                "scheduler state does not match technique/offset",
                            ));
                        }
                        (st.clone(), true)
                    }
                    None => (
                        SchedulerState::seeded(
                            cfg.technique,
                            n,
                            s.scheduled,
                            &cfg.stats,
                            &cfg.ctx,
                            &s.history,
                        )?,
                        false,
                    ),
                }
            }
        };
        let mut eng = Engine {
            now: t0,
            state,
            pes: vec![PeRuntime::Idle; p],
            history: engine_history,
            last_round_trip: None,
            queue: BinaryHeap::new(),
            seq: 0,
            log: Vec::new(),
            stats: vec![PeStats::default(); p],
            timeline: vec![(t0, cfg.technique)],
            t0,
            last_complete: t0,
            cfg,
        };
        match start {
            None => {
                for pe in 0..p {
                    eng.issue_claim(pe, t0);
                }
            }
            Some(s) => {
                for (pe, ps) in s.pes.iter().enumerate() {
                    match *ps {
                        PeStart::Free { at } => eng.issue_claim(pe, at.max(t0)),
                        PeStart::Requesting { issued, completes } => {
                            eng.pes[pe] = PeRuntime::Requesting { issued, completes };
                            eng.push(completes, EventKind::RequestComplete, pe);
                        }
                        PeStart::Computing { until, feedback } => {
                            eng.pes[pe] = PeRuntime::Computing { until, feedback };
                            eng.last_complete = eng.last_complete.max(until);
                            eng.push(until, EventKind::ChunkComplete, pe);
                        }
                        PeStart::Idle if !continuing => eng.issue_claim(pe, t0),
                        PeStart::Idle => {}
                    }
                }
            }
        }
        Ok(eng)
    }

    fn push(&mut self, t: f64, kind: EventKind, pe: usize) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            t,
            kind,
            pe,
            seq: self.seq,
        }));
    }

    pub(crate) fn schedule_tick(&mut self, t: f64) {
        self.push(t, EventKind::SilTick, usize::MAX);
    }

    fn issue_claim(&mut self, pe: usize, t: f64) {
        let rt = 2.0 * self.cfg.platform.transfer_time(t);
        let completes = t + rt;
        self.pes[pe] = PeRuntime::Requesting { issued: t, completes };
        self.push(completes, EventKind::RequestComplete, pe);
    }

    /// Processes events until the queue drains or a tick is reached.
    /// Returns the tick time, if one was hit.
    pub(crate) fn run_to_tick(&mut self) -> Result<Option<f64>> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            debug_assert!(ev.t >= self.now, "time went backwards");
            self.now = ev.t;
            match ev.kind {
                EventKind::ChunkComplete => self.on_chunk_complete(ev.pe, ev.t)?,
                EventKind::RequestComplete => self.on_request_complete(ev.pe, ev.t)?,
                EventKind::SilTick => {
                    if !self.state.is_done() {
                        return Ok(Some(ev.t));
                    }
                }
            }
        }
        Ok(None)
    }

    fn on_chunk_complete(&mut self, pe: usize, t: f64) -> Result<()> {
        let PeRuntime::Computing { feedback, .. } = self.pes[pe] else {
            unreachable!("chunk completion for a PE that is not computing");
        };
        self.state.record_feedback(&feedback)?;
        self.history[pe].push(ChunkSample::from(&feedback));
        if self.state.is_done() {
            self.pes[pe] = PeRuntime::Idle;
        } else {
            self.issue_claim(pe, t);
        }
        Ok(())
    }

    fn on_request_complete(&mut self, pe: usize, t: f64) -> Result<()> {
        let PeRuntime::Requesting { issued, .. } = self.pes[pe] else {
            unreachable!("claim completion for a PE that is not requesting");
        };
        let Some(chunk) = self.state.next_chunk(pe)? else {
            self.pes[pe] = PeRuntime::Idle;
            return Ok(());
        };
        let flops: f64 = self.cfg.flops[chunk.start..chunk.start + chunk.size].iter().sum();
        let t_end = integrate_flops(self.cfg.platform, pe, t, flops)?;
        let rt = t - issued;
        let exec = t_end - t;
        let feedback = Feedback {
            pe,
            chunk_size: chunk.size,
            exec_time: exec,
            total_time: exec + rt,
        };
        let st = &mut self.stats[pe];
        st.busy += exec;
        st.overhead += rt;
        st.chunks += 1;
        st.iterations += chunk.size;
        self.last_round_trip = Some(rt);
        self.last_complete = self.last_complete.max(t_end);
        if self.cfg.record_log {
            self.log.push(ChunkLogEntry {
                pe,
                t_request: issued,
                t_assign: t,
                start: chunk.start,
                size: chunk.size,
                t_complete: t_end,
                technique: self.state.kind,
            });
        }
        self.pes[pe] = PeRuntime::Computing {
            until: t_end,
            feedback,
        };
        self.push(t_end, EventKind::ChunkComplete, pe);
        Ok(())
    }

    /// Replaces the live technique for all later claims. In-flight chunks are untouched.
    pub(crate) fn switch_to(&mut self, kind: TechniqueKind, t: f64) -> Result<()> {
        if kind == self.state.kind {
            return Ok(());
        }
        self.state = SchedulerState::seeded(
            kind,
            self.state.n_total,
            self.state.scheduled,
            &self.cfg.stats,
            &self.cfg.ctx,
            &self.history,
        )?;
        match self.timeline.as_mut_slice() {
            // A selection made before any claim landed replaces the initial technique.
            [only] if only.0 == t && t == self.t0 => only.1 = kind,
            _ => self.timeline.push((t, kind)),
        }
        for pe in 0..self.pes.len() {
            if self.pes[pe] == PeRuntime::Idle {
                self.issue_claim(pe, t);
            }
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> SimResult {
        let makespan = self.last_complete;
        let span = makespan - self.t0;
        let per_pe = self
            .stats
            .into_iter()
            .map(|mut s| {
                s.idle = (span - s.busy - s.overhead).max(0.0);
                s
            })
            .collect();
        SimResult {
            t0: self.t0,
            makespan,
            per_pe,
            chunk_log: self.log,
            technique_timeline: self.timeline,
        }
    }
}

/// Runs one loop to completion under a single technique.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    let mut eng = Engine::new(cfg.clone())?;
    while eng.run_to_tick()?.is_some() {}
    Ok(eng.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::{build_platform, CoreClass, NetworkSpec, Trace, TraceKind};
    use std::sync::Arc;

    fn platform(speeds: &[f64]) -> PlatformModel {
        let classes: Vec<_> = speeds.iter().map(|&s| (CoreClass::Other, s / 1e9)).collect();
        build_platform(&classes, 1e9, NetworkSpec::instantaneous()).unwrap()
    }

    fn workload(flops: Vec<f64>) -> Workload {
        Workload { flops, seed: 0 }
    }

    #[test]
    fn homogeneous_ss() {
        let p = platform(&[1e9, 1e9]);
        let w = workload(vec![1e9; 4]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
        assert_eq!(r.makespan, 2.0);
        assert_eq!(r.chunk_log.len(), 4);
    }

    #[test]
    fn heterogeneous_ss() {
        // Hand trace: fast PE takes iterations at 0, 0.5, 1.0; slow PE at 0.
        let p = platform(&[2e9, 1e9]);
        let w = workload(vec![1e9; 4]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
        assert_eq!(r.makespan, 1.5);
        let fast: Vec<f64> = r.chunk_log.iter().filter(|e| e.pe == 0).map(|e| e.t_assign).collect();
        assert_eq!(fast, vec![0.0, 0.5, 1.0]);
        assert_eq!(r.per_pe[1].iterations, 1);
    }

    #[test]
    fn availability_dip() {
        let avail = Trace::new(TraceKind::Availability, vec![(1.0, 0.5), (2.0, 1.0)], None, 0.0)
            .unwrap();
        let mut p = platform(&[1e9]);
        p.traces.avail = vec![Arc::new(avail)];
        let w = workload(vec![1e9; 2]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
        assert_eq!(r.makespan, 2.5);
    }

    #[test]
    fn integrate_segments() {
        let avail = Trace::new(
            TraceKind::Availability,
            vec![(0.0, 0.25), (50.0, 1.0)],
            Some(100.0),
            50.0,
        )
        .unwrap();
        let mut p = platform(&[1e9]);
        p.traces.avail = vec![Arc::new(avail)];
        assert_eq!(integrate_flops(&p, 0, 40.0, 0.0).unwrap(), 40.0);
        assert_eq!(integrate_flops(&p, 0, 0.0, 5e9).unwrap(), 5.0);
        assert_eq!(integrate_flops(&p, 0, 40.0, 3e10).unwrap(), 107.5);
        assert!(integrate_flops(&p, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn overhead_per_claim() {
        let mut p = platform(&[1e9, 1e9]);
        p.network = NetworkSpec {
            latency0: 0.25,
            msg_bits: 0.0,
            ..NetworkSpec::default()
        };
        let w = workload(vec![1e9; 6]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
        // Each PE: 3 x (0.5 s round trip + 1 s compute).
        assert_eq!(r.makespan, 4.5);
        assert_eq!(r.total_overhead(), 3.0);
        for s in &r.per_pe {
            assert!((s.busy + s.idle + s.overhead - r.makespan).abs() < 1e-9);
        }
    }

    #[test]
    fn static_pays_one_claim_per_pe() {
        let p = platform(&[1e9, 1e9, 1e9]);
        let w = workload(vec![1e8; 10]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Static).unwrap()).unwrap();
        let sizes: Vec<usize> = r.chunk_log.iter().map(|e| e.size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let starts: Vec<(usize, usize)> = r.chunk_log.iter().map(|e| (e.pe, e.start)).collect();
        assert_eq!(starts, vec![(0, 0), (1, 4), (2, 8)]);
    }

    #[test]
    fn chunk_log_csv() {
        let p = platform(&[1e9]);
        let w = workload(vec![1e9; 2]);
        let r = simulate(&SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap()).unwrap();
        let mut buf = Vec::new();
        r.write_chunk_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "pe,t_request,t_assign,start,size,t_complete,technique\n0,0,0,0,1,1,SS\n0,1,1,1,1,2,SS\n"
        );
    }

    #[test]
    fn event_order() {
        let a = Event { t: 1.0, kind: EventKind::RequestComplete, pe: 0, seq: 1 };
        let b = Event { t: 1.0, kind: EventKind::ChunkComplete, pe: 5, seq: 9 };
        let c = Event { t: 1.0, kind: EventKind::ChunkComplete, pe: 2, seq: 10 };
        let mut v = [a, b, c];
        v.sort();
        assert_eq!(v.iter().map(|e| e.pe).collect::<Vec<_>>(), vec![2, 5, 0]);
    }

    #[test]
    fn rejects_bad_start() {
        let p = platform(&[1e9]);
        let w = workload(vec![1e9; 2]);
        let mut cfg = SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap();
        cfg.start = Some(StartState {
            t0: 0.0,
            scheduled: 2,
            pes: vec![PeStart::Free { at: 0.0 }],
            scheduler: None,
            history: vec![],
        });
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn mid_run_start() {
        let p = platform(&[1e9, 1e9]);
        let w = workload(vec![1e9; 6]);
        let mut cfg = SimConfig::new(&w, &p, TechniqueKind::Ss).unwrap();
        cfg.start = Some(StartState {
            t0: 10.0,
            scheduled: 4,
            pes: vec![
                PeStart::Free { at: 10.0 },
                PeStart::Computing {
                    until: 12.5,
                    feedback: Feedback { pe: 1, chunk_size: 1, exec_time: 1.0, total_time: 1.0 },
                },
            ],
            scheduler: None,
            history: vec![],
        });
        let r = simulate(&cfg).unwrap();
        assert_eq!(r.makespan, 12.5);
        assert_eq!(r.chunk_log.iter().map(|e| e.start).collect::<Vec<_>>(), vec![4, 5]);
    }
}
