//! Test-only reference simulator and instance generators.
//!
//! The list simulator scans every PE for the next event instead of using a
//! priority queue, and walks availability breakpoints straight from the
//! trace points. It shares only the chunk-size calculator with the engine.

#![allow(dead_code)]

use std::sync::Arc;

use loopsim::platform::{
    build_platform, CoreClass, NetworkSpec, PlatformModel, Trace, TraceKind,
};
use loopsim::sched::{Feedback, SchedContext, SchedulerState, TechniqueKind};
use loopsim::workload::{workload_stats, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleChunk {
    pub pe: usize,
    pub t_request: f64,
    pub t_assign: f64,
    pub start: usize,
    pub size: usize,
    pub t_complete: f64,
}

/// Time at which `flops` of work started at `t` finishes, for an explicit
/// (non-periodic) availability trace.
pub fn oracle_finish(speed: f64, trace: &Trace, t: f64, flops: f64) -> f64 {
    assert!(trace.period.is_none(), "oracle handles explicit traces only");
    // (start of segment, factor) with an implicit 1.0 before the first point.
    let mut segs = vec![(f64::NEG_INFINITY, 1.0)];
    segs.extend(trace.points.iter().map(|&(u, f)| (trace.phase + u, f)));
    let mut now = t;
    let mut left = flops;
    if left <= 0.0 {
        return now;
    }
    for (i, &(_, f)) in segs.iter().enumerate() {
        let seg_end = segs.get(i + 1).map_or(f64::INFINITY, |s| s.0);
        if seg_end <= now {
            continue;
        }
        let rate = speed * f;
        let need = left / rate;
        if now + need <= seg_end {
            return now + need;
        }
        left -= rate * (seg_end - now);
        now = seg_end;
    }
    now
}

#[derive(Clone, Copy)]
enum Pending {
    Claim { issued: f64, lands: f64 },
    Work { done: f64, fb: Feedback },
}

/// Event-for-event reference run. `round_trip` is the constant claim cost.
pub fn oracle_run(
    flops: &[f64],
    platform: &PlatformModel,
    technique: TechniqueKind,
    round_trip: f64,
) -> (Vec<OracleChunk>, f64) {
    let p = platform.cores.len();
    let w = Workload { flops: flops.to_vec(), seed: 0 };
    let stats = workload_stats(&w).unwrap();
    let ctx = SchedContext::from_platform(platform);
    let mut sched = SchedulerState::new(technique, flops.len(), 0, &stats, &ctx).unwrap();
    let mut pending: Vec<Option<Pending>> = (0..p)
        .map(|_| Some(Pending::Claim { issued: 0.0, lands: round_trip }))
        .collect();
    let mut log = Vec::new();
    let mut makespan: f64 = 0.0;
    loop {
        // Completions before claims at equal times; lower PE index first.
        let mut next: Option<(f64, u8, usize)> = None;
        for (pe, slot) in pending.iter().enumerate() {
            let key = match slot {
                None => continue,
                Some(Pending::Work { done, .. }) => (*done, 0u8, pe),
                Some(Pending::Claim { lands, .. }) => (*lands, 2u8, pe),
            };
            let better = match next {
                None => true,
                Some(n) => key.0 < n.0 || (key.0 == n.0 && (key.1, key.2) < (n.1, n.2)),
            };
            if better {
                next = Some(key);
            }
        }
        let Some((t, _, pe)) = next else { break };
        match pending[pe].take().unwrap() {
            Pending::Work { fb, .. } => {
                sched.record_feedback(&fb).unwrap();
                if sched.remaining() > 0 {
                    pending[pe] = Some(Pending::Claim { issued: t, lands: t + round_trip });
                }
            }
            Pending::Claim { issued, .. } => {
                let Some(chunk) = sched.next_chunk(pe).unwrap() else { continue };
                let mut work = 0.0;
                for f in &flops[chunk.start..chunk.start + chunk.size] {
                    work += f;
                }
                let done = oracle_finish(platform.cores[pe].speed, &platform.traces.avail[pe], t, work);
                makespan = makespan.max(done);
                log.push(OracleChunk {
                    pe,
                    t_request: issued,
                    t_assign: t,
                    start: chunk.start,
                    size: chunk.size,
                    t_complete: done,
                });
                let exec = done - t;
                pending[pe] = Some(Pending::Work {
                    done,
                    fb: Feedback { pe, chunk_size: chunk.size, exec_time: exec, total_time: exec + (t - issued) },
                });
            }
        }
    }
    (log, makespan)
}

pub struct Instance {
    pub flops: Vec<f64>,
    pub platform: PlatformModel,
    pub technique: TechniqueKind,
    pub round_trip: f64,
}

/// Small random instance: N <= 50, P <= 4, random speeds, claim costs and availability dips.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=4usize);
    let n = rng.random_range(1..=50usize);
    let classes: Vec<(CoreClass, f64)> = (0..p)
        .map(|_| (CoreClass::Other, rng.random_range(0.5..3.0)))
        .collect();
    let latency0 = rng.random_range(0.01..0.5);
    let network = NetworkSpec {
        latency0,
        msg_bits: 0.0,
        ..NetworkSpec::default()
    };
    let mut platform = build_platform(&classes, 1e9, network).unwrap();
    for pe in 0..p {
        let k = rng.random_range(0..=3usize);
        let mut t = 0.0;
        let mut points = Vec::new();
        for _ in 0..k {
            t += rng.random_range(0.5..10.0);
            points.push((t, rng.random_range(0.2..=1.0)));
        }
        if !points.is_empty() {
            platform.traces.avail[pe] =
                Arc::new(Trace::new(TraceKind::Availability, points, None, 0.0).unwrap());
        }
    }
    let flops = (0..n).map(|_| rng.random_range(1e8..2e9)).collect();
    let technique = TechniqueKind::ALL[rng.random_range(0..TechniqueKind::ALL.len())];
    Instance {
        flops,
        platform,
        technique,
        round_trip: 2.0 * latency0,
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Chunks sorted by start must tile [0, n) exactly.
pub fn check_partition(mut spans: Vec<(usize, usize)>, n: usize) -> Result<(), String> {
    spans.sort_unstable();
    let mut next = 0;
    for (start, size) in spans {
        if size == 0 {
            return Err(format!("empty chunk at {start}"));
        }
        if start != next {
            return Err(format!("gap or overlap at {next}: chunk starts at {start}"));
        }
        next += size;
    }
    if next != n {
        return Err(format!("covered {next} of {n}"));
    }
    Ok(())
}
