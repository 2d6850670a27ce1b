//! Synthetic loop workloads: one FLOP cost per iteration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Iteration count used by every application in the reference study.
pub const DEFAULT_ITERATIONS: usize = 400_000;

pub const PSIA_LO: f64 = 5.9e7;
pub const PSIA_HI: f64 = 6.6e7;

/// Per-iteration FLOP distribution. Bounded variants are sampled by
/// rejection: draws outside `[lo, hi]` are discarded and redrawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// Stand-in for the spin-image kernel: uniform over its observed range.
    PsiaSurrogate,
    Constant {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Normal {
        mean: f64,
        std_dev: f64,
        lo: f64,
        hi: f64,
    },
    /// `rate` is in 1/FLOP, so the mean cost is `1 / rate`.
    Exponential {
        rate: f64,
        lo: f64,
        hi: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
        lo: f64,
        hi: f64,
    },
}

impl DistributionSpec {
    pub const APP_NAMES: [&'static str; 6] =
        ["psia", "constant", "uniform", "normal", "exponential", "gamma"];

    /// The six reference applications by name.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "psia" => DistributionSpec::PsiaSurrogate,
            "constant" => DistributionSpec::Constant { value: 2.3e8 },
            "uniform" => DistributionSpec::Uniform { lo: 1e3, hi: 7e8 },
            "normal" => DistributionSpec::Normal {
                mean: 9.5e8,
                std_dev: 7e7,
                lo: 6e8,
                hi: 1.3e9,
            },
            "exponential" => DistributionSpec::Exponential {
                rate: 1.0 / 3e8,
                lo: 948.0,
                hi: 4.5e9,
            },
            "gamma" => DistributionSpec::Gamma {
                shape: 2.0,
                scale: 1e8,
                lo: 4.1e6,
                hi: 2.7e9,
            },
            other => {
                return Err(Error::config(
                    "app",
                    format!("unknown application `{other}`"),
                ))
            }
        })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::PsiaSurrogate => 0.5 * (PSIA_LO + PSIA_HI),
            DistributionSpec::Constant { value } => value,
            DistributionSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistributionSpec::Normal { mean, .. } => mean,
            DistributionSpec::Exponential { rate, .. } => 1.0 / rate,
            DistributionSpec::Gamma { shape, scale, .. } => shape * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and > 0, got {v}")))
            }
        }
        fn bounds(lo: f64, hi: f64, mean: f64) -> Result<()> {
            positive("lo", lo)?;
            positive("hi", hi)?;
            if lo >= hi {
                return Err(Error::config("lo", format!("lo {lo} must be < hi {hi}")));
            }
            if !(lo..=hi).contains(&mean) {
                return Err(Error::config(
                    "lo",
                    format!("bounds [{lo}, {hi}] do not contain the mean {mean}"),
                ));
            }
            Ok(())
        }
        match *self {
            DistributionSpec::PsiaSurrogate => Ok(()),
            DistributionSpec::Constant { value } => positive("value", value),
            DistributionSpec::Uniform { lo, hi } => bounds(lo, hi, 0.5 * (lo + hi)),
            DistributionSpec::Normal {
                mean,
                std_dev,
                lo,
                hi,
            } => {
                positive("mean", mean)?;
                positive("std_dev", std_dev)?;
                bounds(lo, hi, mean)
            }
            DistributionSpec::Exponential { rate, lo, hi } => {
                positive("rate", rate)?;
                bounds(lo, hi, 1.0 / rate)
            }
            DistributionSpec::Gamma {
                shape,
                scale,
                lo,
                hi,
            } => {
                positive("shape", shape)?;
                positive("scale", scale)?;
                bounds(lo, hi, shape * scale)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub flops: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadStats {
    pub mu_flop: f64,
    pub sigma_flop: f64,
}

fn rejection<R: Rng, D: Distribution<f64>>(rng: &mut R, dist: &D, lo: f64, hi: f64) -> f64 {
    loop {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

pub fn generate_workload(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Workload> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Workload);
    let flops: Vec<f64> = match *spec {
        DistributionSpec::Constant { value } => vec![value; n],
        DistributionSpec::PsiaSurrogate => (0..n)
            .map(|_| rng.random_range(PSIA_LO..=PSIA_HI))
            .collect(),
        DistributionSpec::Uniform { lo, hi } => {
            (0..n).map(|_| rng.random_range(lo..=hi)).collect()
        }
        DistributionSpec::Normal {
            mean,
            std_dev,
            lo,
            hi,
        } => {
            let dist = Normal::new(mean, std_dev)
                .map_err(|e| Error::config("std_dev", e.to_string()))?;
            (0..n).map(|_| rejection(&mut rng, &dist, lo, hi)).collect()
        }
        DistributionSpec::Exponential { rate, lo, hi } => {
            let dist = Exp::new(rate).map_err(|e| Error::config("rate", e.to_string()))?;
            (0..n).map(|_| rejection(&mut rng, &dist, lo, hi)).collect()
        }
        DistributionSpec::Gamma {
            shape,
            scale,
            lo,
            hi,
        } => {
            let dist =
                Gamma::new(shape, scale).map_err(|e| Error::config("shape", e.to_string()))?;
            (0..n).map(|_| rejection(&mut rng, &dist, lo, hi)).collect()
        }
    };
    Ok(Workload { flops, seed })
}

impl Workload {
    pub fn n(&self) -> usize {
        self.flops.len()
    }

    pub fn total_flops(&self) -> f64 {
        self.flops.iter().sum()
    }

    /// Text form: `n <count> seed <u64>` followed by one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.flops.len() * 16 + 32);
        writeln!(out, "n {} seed {}", self.flops.len(), self.seed).unwrap();
        for v in &self.flops {
            writeln!(out, "{v:e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hdr_no, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let (n, seed) = match toks.as_slice() {
            ["n", n, "seed", seed] => (
                n.parse::<usize>()
                    .map_err(|e| parse_err(hdr_no + 1, format!("bad count: {e}")))?,
                seed.parse::<u64>()
                    .map_err(|e| parse_err(hdr_no + 1, format!("bad seed: {e}")))?,
            ),
            _ => {
                return Err(parse_err(
                    hdr_no + 1,
                    "expected header `n <count> seed <u64>`".into(),
                ))
            }
        };
        let mut flops = Vec::with_capacity(n);
        for (no, line) in lines {
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|e| parse_err(no + 1, format!("bad value: {e}")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(no + 1, format!("FLOP value must be > 0, got {v}")));
            }
            flops.push(v);
        }
        if flops.len() != n {
            return Err(parse_err(
                hdr_no + 1,
                format!("header declares {n} values, found {}", flops.len()),
            ));
        }
        Ok(Workload { flops, seed })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Mean and population standard deviation of the per-iteration costs.
pub fn workload_stats(w: &Workload) -> Result<WorkloadStats> {
    if w.flops.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    let n = w.flops.len() as f64;
    let mu = w.flops.iter().sum::<f64>() / n;
    let var = w.flops.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Ok(WorkloadStats {
        mu_flop: mu,
        sigma_flop: var.sqrt(),
    })
}
