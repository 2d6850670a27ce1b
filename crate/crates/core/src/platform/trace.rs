//! Piecewise-constant multiplicative factor traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Availability,
    Bandwidth,
    LatencyFactor,
}

/// A right-continuous step function of time.
///
/// Point times are local: they are measured from `phase`, and when a
/// `period` is set they are offsets inside one cycle. Before `phase`, and
/// before the first point, the factor is 1. Without a period the last
/// point's value holds forever.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub kind: TraceKind,
    pub points: Vec<(f64, f64)>,
    pub period: Option<f64>,
    pub phase: f64,
}

impl Trace {
    pub fn new(
        kind: TraceKind,
        points: Vec<(f64, f64)>,
        period: Option<f64>,
        phase: f64,
    ) -> Result<Self> {
        let trace = Trace {
            kind,
            points,
            period,
            phase,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn constant(kind: TraceKind, factor: f64) -> Self {
        Trace {
            kind,
            points: vec![(0.0, factor)],
            period: None,
            phase: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.phase.is_finite() && self.phase >= 0.0) {
            return Err(Error::config("phase", format!("must be >= 0, got {}", self.phase)));
        }
        if let Some(p) = self.period {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::config("period", format!("must be > 0, got {p}")));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for &(t, f) in &self.points {
            if !(t.is_finite() && t >= 0.0) || t <= prev {
                return Err(Error::config(
                    "points",
                    format!("times must be >= 0 and strictly increasing (at t={t})"),
                ));
            }
            if let Some(p) = self.period {
                if t >= p {
                    return Err(Error::config(
                        "points",
                        format!("point t={t} lies outside the period {p}"),
                    ));
                }
            }
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("points", format!("factor {f} not in (0, 1]")));
            }
            prev = t;
        }
        Ok(())
    }

    /// Whether the factor never changes.
    pub fn is_constant(&self) -> bool {
        let first = self.points.first().map_or(1.0, |p| p.1);
        let all_same = self.points.iter().all(|p| p.1 == first);
        all_same && (first == 1.0 || (self.phase == 0.0 && self.points[0].0 == 0.0))
    }

    /// Index of the point governing local time `u` (None: before the first point).
    fn lookup(&self, u: f64) -> Option<usize> {
        let idx = self.points.partition_point(|p| p.0 <= u);
        idx.checked_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.segment_at(t).0
    }

    /// Factor in effect at `t`, and the absolute time at which it next changes
    /// (`f64::INFINITY` if never).
    pub fn segment_at(&self, t: f64) -> (f64, f64) {
        if self.points.is_empty() {
            return (1.0, f64::INFINITY);
        }
        if t < self.phase {
            return (1.0, self.phase + self.points[0].0);
        }
        let u = t - self.phase;
        match self.period {
            None => match self.lookup(u) {
                None => (1.0, self.phase + self.points[0].0),
                Some(i) => {
                    let end = self
                        .points
                        .get(i + 1)
                        .map_or(f64::INFINITY, |p| self.phase + p.0);
                    (self.points[i].1, end)
                }
            },
            Some(period) => {
                let mut k = (u / period).floor();
                let mut local = u - k * period;
                if local < 0.0 {
                    k -= 1.0;
                    local = u - k * period;
                } else if local >= period {
                    k += 1.0;
                    local = u - k * period;
                }
                let base = self.phase + k * period;
                let (factor, next_local) = match self.lookup(local) {
                    // Before the first point in this cycle: the previous cycle's
                    // last value is still in effect.
                    None if k > 0.0 => (self.points.last().unwrap().1, self.points[0].0),
                    None => (1.0, self.points[0].0),
                    Some(i) => (
                        self.points[i].1,
                        self.points.get(i + 1).map_or(period + self.points[0].0, |p| p.0),
                    ),
                };
                let mut end = base + next_local;
                if end <= t {
                    // Rounding put us on the boundary; the next change is one step further.
                    end = self.segment_at_guarded(t, base, next_local, period);
                }
                (factor, end)
            }
        }
    }

    fn segment_at_guarded(&self, t: f64, base: f64, next_local: f64, period: f64) -> f64 {
        let mut end = base + next_local;
        let mut idx = self.lookup(next_local).unwrap_or(0);
        let mut cycle = base;
        while end <= t {
            idx += 1;
            if idx >= self.points.len() {
                idx = 0;
                cycle += period;
            }
            end = cycle + self.points[idx].0;
        }
        end
    }

    /// Text form: optional `#period <s> #phase <s>` header, then `<t> <factor>` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(p) = self.period {
            writeln!(out, "#period {} #phase {}", p, self.phase).unwrap();
        } else if self.phase != 0.0 {
            writeln!(out, "#phase {}", self.phase).unwrap();
        }
        for (t, f) in &self.points {
            writeln!(out, "{t} {f}").unwrap();
        }
        out
    }

    pub fn from_text(kind: TraceKind, text: &str, source_name: &str) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let mut period = None;
        let mut phase = 0.0;
        let mut points = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let mut it = toks.chunks(2);
                for pair in &mut it {
                    let [key, val] = pair else {
                        return Err(perr(no + 1, format!("dangling header token in `{line}`")));
                    };
                    let v: f64 = val
                        .parse()
                        .map_err(|e| perr(no + 1, format!("bad header value `{val}`: {e}")))?;
                    match *key {
                        "#period" => period = Some(v),
                        "#phase" => phase = v,
                        other => return Err(perr(no + 1, format!("unknown header key `{other}`"))),
                    }
                }
                continue;
            }
            let mut toks = line.split_whitespace();
            let (Some(t), Some(f), None) = (toks.next(), toks.next(), toks.next()) else {
                return Err(perr(no + 1, "expected `<t_seconds> <factor>`".into()));
            };
            let t: f64 = t.parse().map_err(|e| perr(no + 1, format!("bad time: {e}")))?;
            let f: f64 = f.parse().map_err(|e| perr(no + 1, format!("bad factor: {e}")))?;
            points.push((t, f));
        }
        Trace::new(kind, points, period, phase)
    }

    pub fn load(kind: TraceKind, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(kind, &text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
