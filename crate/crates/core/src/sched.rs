//! Self-scheduling chunk calculators.
//!
//! Every technique answers the same two calls: `next_chunk` when a PE asks
//! for work, and `record_feedback` when a PE finishes a chunk. Callers must
//! serialize the two; the simulator does so through its event loop.
//!
//! A state covers the iteration range `[offset, n_total)`. A fresh state
//! created mid-run (after a technique switch) treats the remaining range as
//! its whole loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platform::PlatformModel;
use crate::workload::WorkloadStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TechniqueKind {
    Static,
    Ss,
    Fsc,
    Gss,
    Fac,
    Wf,
    AwfB,
    AwfC,
    AwfD,
    AwfE,
    Af,
}

impl TechniqueKind {
    pub const ALL: [TechniqueKind; 11] = [
        TechniqueKind::Static,
        TechniqueKind::Ss,
        TechniqueKind::Fsc,
        TechniqueKind::Gss,
        TechniqueKind::Fac,
        TechniqueKind::Wf,
        TechniqueKind::AwfB,
        TechniqueKind::AwfC,
        TechniqueKind::AwfD,
        TechniqueKind::AwfE,
        TechniqueKind::Af,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TechniqueKind::Static => "STATIC",
            TechniqueKind::Ss => "SS",
            TechniqueKind::Fsc => "FSC",
            TechniqueKind::Gss => "GSS",
            TechniqueKind::Fac => "FAC",
            TechniqueKind::Wf => "WF",
            TechniqueKind::AwfB => "AWF-B",
            TechniqueKind::AwfC => "AWF-C",
            TechniqueKind::AwfD => "AWF-D",
            TechniqueKind::AwfE => "AWF-E",
            TechniqueKind::Af => "AF",
        }
    }

    pub fn is_awf(self) -> bool {
        matches!(
            self,
            TechniqueKind::AwfB | TechniqueKind::AwfC | TechniqueKind::AwfD | TechniqueKind::AwfE
        )
    }

    pub fn is_adaptive(self) -> bool {
        self.is_awf() || self == TechniqueKind::Af
    }

    /// AWF-C/-E update on every chunk; -B/-D once a batch has fully reported.
    fn updates_per_chunk(self) -> bool {
        matches!(self, TechniqueKind::AwfC | TechniqueKind::AwfE)
    }

    /// AWF-D/-E weigh total chunk time (including scheduling overhead).
    fn uses_total_time(self) -> bool {
        matches!(self, TechniqueKind::AwfD | TechniqueKind::AwfE)
    }
}

impl fmt::Display for TechniqueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TechniqueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TechniqueKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("technique", format!("unknown technique `{s}`")))
    }
}

impl Serialize for TechniqueKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TechniqueKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Platform facts a technique may use.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedContext {
    /// Relative core weights (any scale; normalized internally).
    pub weights: Vec<f64>,
    /// FLOP/s used to turn FLOP statistics into seconds.
    pub reference_speed: f64,
    /// Scheduling overhead per chunk, seconds.
    pub overhead: f64,
}

impl SchedContext {
    pub fn from_platform(p: &PlatformModel) -> Self {
        SchedContext {
            weights: p.weights(),
            reference_speed: p.reference_speed(),
            overhead: p.nominal_round_trip(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feedback {
    pub pe: usize,
    pub chunk_size: usize,
    /// Iteration execution time only.
    pub exec_time: f64,
    /// Execution plus the scheduling round trip that acquired the chunk.
    pub total_time: f64,
}

/// One measured chunk, as kept in per-PE history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkSample {
    pub size: usize,
    pub exec_time: f64,
    pub total_time: f64,
}

impl From<&Feedback> for ChunkSample {
    fn from(fb: &Feedback) -> Self {
        ChunkSample {
            size: fb.chunk_size,
            exec_time: fb.exec_time,
            total_time: fb.total_time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub size: usize,
}

/// Step-weighted running cost of one PE: `sum(j * t_j / n_j)` and `sum(j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct AwfCost {
    num: f64,
    den: f64,
    steps: u64,
}

impl AwfCost {
    fn push(&mut self, per_iter: f64) {
        self.steps += 1;
        let j = self.steps as f64;
        self.num += j * per_iter;
        self.den += j;
    }

    fn mean(&self) -> Option<f64> {
        (self.steps > 0).then(|| self.num / self.den)
    }
}

/// Welford accumulator over per-iteration times.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct OnlineStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl OnlineStats {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct BatchTally {
    issued: usize,
    reported: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub kind: TechniqueKind,
    pub n_total: usize,
    /// First iteration this state is responsible for.
    pub offset: usize,
    /// Next unclaimed iteration (global index).
    pub scheduled: usize,
    pub p: usize,
    pub static_weights: Vec<f64>,
    pub static_chunk: usize,
    static_given: Vec<bool>,
    pub fsc_chunk: usize,
    pub batch_remaining: usize,
    pub batch_chunk: usize,
    batches: Vec<BatchTally>,
    pe_batch: Vec<Option<usize>>,
    pub overhead: f64,
    pub mu_time: f64,
    pub sigma_time: f64,
    awf_cost: Vec<AwfCost>,
    pub awf_weights: Vec<f64>,
    af: Vec<OnlineStats>,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Round half up.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Ceiling that ignores floating-point dust just above an integer.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

fn normalize_to(values: &[f64], total: f64) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    values.iter().map(|v| total * v / sum).collect()
}

impl SchedulerState {
    /// Fresh state covering `[offset, n_total)`.
    pub fn new(
        kind: TechniqueKind,
        n_total: usize,
        offset: usize,
        stats: &WorkloadStats,
        ctx: &SchedContext,
    ) -> Result<Self> {
        let p = ctx.weights.len();
        if p == 0 {
            return Err(Error::config("weights", "need at least one PE"));
        }
        if offset >= n_total {
            return Err(Error::config(
                "offset",
                format!("offset {offset} leaves no iterations of {n_total}"),
            ));
        }
        if ctx.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("weights", "weights must be > 0"));
        }
        if ctx.reference_speed.is_nan() || ctx.reference_speed <= 0.0 {
            return Err(Error::config("reference_speed", "must be > 0"));
        }
        let span = n_total - offset;
        let mu_time = stats.mu_flop / ctx.reference_speed;
        let sigma_time = stats.sigma_flop / ctx.reference_speed;
        let fsc_chunk = if kind == TechniqueKind::Fsc {
            if ctx.overhead.is_nan() || ctx.overhead <= 0.0 {
                return Err(Error::config(
                    "overhead",
                    format!("FSC needs a positive scheduling overhead, got {}", ctx.overhead),
                ));
            }
            fsc_chunk_size(span, p, ctx.overhead, sigma_time)
        } else {
            0
        };
        Ok(SchedulerState {
            kind,
            n_total,
            offset,
            scheduled: offset,
            p,
            static_weights: normalize_to(&ctx.weights, p as f64),
            static_chunk: ceil_div(span, p),
            static_given: vec![false; p],
            fsc_chunk,
            batch_remaining: 0,
            batch_chunk: 0,
            batches: Vec::new(),
            pe_batch: vec![None; p],
            overhead: ctx.overhead,
            mu_time,
            sigma_time,
            awf_cost: vec![AwfCost::default(); p],
            awf_weights: vec![1.0; p],
            af: vec![OnlineStats::default(); p],
        })
    }

    /// Fresh state whose adaptive estimates start from measured history
    /// (one list of samples per PE, oldest first).
    pub fn seeded(
        kind: TechniqueKind,
        n_total: usize,
        offset: usize,
        stats: &WorkloadStats,
        ctx: &SchedContext,
        history: &[Vec<ChunkSample>],
    ) -> Result<Self> {
        let mut s = Self::new(kind, n_total, offset, stats, ctx)?;
        if !kind.is_adaptive() || history.iter().all(|h| h.is_empty()) {
            return Ok(s);
        }
        for (pe, samples) in history.iter().enumerate().take(s.p) {
            for sample in samples {
                s.absorb(pe, sample);
            }
        }
        if kind.is_awf() {
            s.recompute_awf_weights();
        }
        Ok(s)
    }

    pub fn remaining(&self) -> usize {
        self.n_total - self.scheduled
    }

    pub fn is_done(&self) -> bool {
        self.scheduled >= self.n_total
    }

    /// AF per-PE estimates `(mean, std)` of seconds per iteration, if measured.
    pub fn af_estimate(&self, pe: usize) -> Option<(f64, f64)> {
        let s = self.af.get(pe)?;
        (s.n > 0).then(|| (s.mean, s.variance().sqrt()))
    }

    pub fn af_samples(&self, pe: usize) -> u64 {
        self.af.get(pe).map_or(0, |s| s.n)
    }

    fn check_pe(&self, pe: usize) -> Result<()> {
        if pe >= self.p {
            return Err(Error::Index {
                what: "PE",
                index: pe,
                len: self.p,
            });
        }
        Ok(())
    }

    fn start_batch_if_needed(&mut self) {
        if self.batch_remaining == 0 {
            let r = self.remaining();
            let batch = ceil_div(r, 2);
            self.batch_chunk = ceil_div(batch, self.p);
            self.batch_remaining = batch;
            self.batches.push(BatchTally::default());
        }
    }

    /// Claims the next chunk for `pe`; `Ok(None)` means there is no work for it.
    pub fn next_chunk(&mut self, pe: usize) -> Result<Option<Chunk>> {
        self.check_pe(pe)?;
        let r = self.remaining();
        if r == 0 {
            return Ok(None);
        }
        let p = self.p;
        let size = match self.kind {
            TechniqueKind::Static => {
                if self.static_given[pe] {
                    return Ok(None);
                }
                self.static_given[pe] = true;
                self.static_chunk
            }
            TechniqueKind::Ss => 1,
            TechniqueKind::Fsc => self.fsc_chunk,
            TechniqueKind::Gss => ceil_div(r, p),
            TechniqueKind::Fac | TechniqueKind::Wf | TechniqueKind::AwfB
            | TechniqueKind::AwfC | TechniqueKind::AwfD | TechniqueKind::AwfE => {
                self.start_batch_if_needed();
                let size = match self.kind {
                    TechniqueKind::Fac => self.batch_chunk.min(self.batch_remaining),
                    TechniqueKind::Wf => {
                        round_half_up(self.static_weights[pe] * self.batch_chunk as f64).max(1)
                    }
                    _ => round_half_up(self.awf_weights[pe] * self.batch_chunk as f64).max(1),
                };
                let size = size.clamp(1, r);
                self.batch_remaining = self.batch_remaining.saturating_sub(size);
                let batch = self.batches.len() - 1;
                self.batches[batch].issued += 1;
                self.pe_batch[pe] = Some(batch);
                size
            }
            TechniqueKind::Af => self.af_chunk(pe, r),
        };
        let size = size.clamp(1, r);
        let chunk = Chunk {
            start: self.scheduled,
            size,
        };
        self.scheduled += size;
        Ok(Some(chunk))
    }

    fn af_chunk(&self, pe: usize, r: usize) -> usize {
        if self.af[pe].n == 0 {
            return ceil_div(r, 2 * self.p);
        }
        // PEs not yet measured are assumed average.
        let measured: Vec<&OnlineStats> = self.af.iter().filter(|s| s.n > 0).collect();
        let k = measured.len() as f64;
        let avg_mu = measured.iter().map(|s| s.mean).sum::<f64>() / k;
        let avg_var = measured.iter().map(|s| s.variance()).sum::<f64>() / k;
        let (mut d, mut inv_mu) = (0.0, 0.0);
        for s in &self.af {
            let (mu, var) = if s.n > 0 {
                (s.mean, s.variance())
            } else {
                (avg_mu, avg_var)
            };
            d += var / mu;
            inv_mu += 1.0 / mu;
        }
        let t = r as f64 / inv_mu;
        let mu_pe = self.af[pe].mean;
        let x = (d + 2.0 * t - (d * d + 4.0 * d * t).sqrt()) / (2.0 * mu_pe);
        ceil_tolerant(x).max(1)
    }

    fn absorb(&mut self, pe: usize, sample: &ChunkSample) {
        let n = sample.size.max(1) as f64;
        if self.kind.is_awf() {
            let t = if self.kind.uses_total_time() {
                sample.total_time
            } else {
                sample.exec_time
            };
            self.awf_cost[pe].push(t / n);
        } else if self.kind == TechniqueKind::Af {
            self.af[pe].push(sample.exec_time / n);
        }
    }

    fn recompute_awf_weights(&mut self) {
        let inv: Vec<Option<f64>> = self
            .awf_cost
            .iter()
            .map(|c| c.mean().filter(|m| *m > 0.0).map(|m| 1.0 / m))
            .collect();
        let known: Vec<f64> = inv.iter().flatten().copied().collect();
        if known.is_empty() {
            return;
        }
        let fill = known.iter().sum::<f64>() / known.len() as f64;
        let filled: Vec<f64> = inv.iter().map(|v| v.unwrap_or(fill)).collect();
        self.awf_weights = normalize_to(&filled, self.p as f64);
    }

    pub fn record_feedback(&mut self, fb: &Feedback) -> Result<()> {
        self.check_pe(fb.pe)?;
        if !self.kind.is_adaptive() {
            return Ok(());
        }
        self.absorb(fb.pe, &ChunkSample::from(fb));
        if !self.kind.is_awf() {
            return Ok(());
        }
        if self.kind.updates_per_chunk() {
            self.recompute_awf_weights();
            return Ok(());
        }
        if let Some(b) = self.pe_batch[fb.pe].take() {
            self.batches[b].reported += 1;
            let fully_issued = b + 1 < self.batches.len() || self.batch_remaining == 0;
            if fully_issued && self.batches[b].reported == self.batches[b].issued {
                self.recompute_awf_weights();
            }
        }
        Ok(())
    }
}

/// Fixed chunk size balancing overhead `h` against iteration-time spread.
pub fn fsc_chunk_size(n: usize, p: usize, h: f64, sigma: f64) -> usize {
    if sigma <= 0.0 || p <= 1 {
        return ceil_div(n, p);
    }
    let pf = p as f64;
    let base = (std::f64::consts::SQRT_2 * n as f64 * h) / (sigma * pf * pf.ln().sqrt());
    ceil_tolerant(base.powf(2.0 / 3.0)).clamp(1, n)
}
