//! Heterogeneous machine model and perturbation scenarios.

mod trace;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub use trace::{Trace, TraceKind};

pub const BROADWELL_WEIGHT: f64 = 1.398;
pub const KNL_WEIGHT: f64 = 0.316;
/// Nominal FLOP/s per unit of core weight.
pub const DEFAULT_S0: f64 = 1e9;

pub const PERTURBATION_PERIOD: f64 = 100.0;
pub const PERTURBED_SPAN: f64 = 50.0;
/// Availability perturbations start this long after the loop does.
pub const AVAILABILITY_PHASE: f64 = 50.0;
/// Default length over which exponential-variant windows are materialized.
pub const DEFAULT_TRACE_HORIZON: f64 = 1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreClass {
    Broadwell,
    Knl,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreSpec {
    pub id: usize,
    pub class: CoreClass,
    pub weight: f64,
    /// FLOP/s.
    pub speed: f64,
}

/// How a latency trace factor acts on the nominal latency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    /// `latency0 / factor`: a small factor means a slow network.
    #[default]
    Divide,
    Multiply,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// One-way latency, seconds.
    pub latency0: f64,
    /// bits/s.
    pub bandwidth0: f64,
    pub msg_bits: f64,
    pub latency_mode: LatencyMode,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            latency0: 2e-6,
            bandwidth0: 1e11,
            msg_bits: 512.0,
            latency_mode: LatencyMode::Divide,
        }
    }
}

impl NetworkSpec {
    /// A network whose messages take no time.
    pub fn instantaneous() -> Self {
        NetworkSpec {
            latency0: 0.0,
            bandwidth0: 1e11,
            msg_bits: 0.0,
            latency_mode: LatencyMode::Divide,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.latency0.is_finite() && self.latency0 >= 0.0) {
            return Err(Error::config("latency0", "must be >= 0"));
        }
        if !(self.bandwidth0.is_finite() && self.bandwidth0 > 0.0) {
            return Err(Error::config("bandwidth0", "must be > 0"));
        }
        if !(self.msg_bits.is_finite() && self.msg_bits >= 0.0) {
            return Err(Error::config("msg_bits", "must be >= 0"));
        }
        Ok(())
    }

    pub fn one_way(&self, bw_factor: f64, lat_factor: f64) -> f64 {
        let latency = match self.latency_mode {
            LatencyMode::Divide => self.latency0 / lat_factor,
            LatencyMode::Multiply => self.latency0 * lat_factor,
        };
        latency + self.msg_bits / (self.bandwidth0 * bw_factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    None,
    Availability,
    Bandwidth,
    Latency,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    ConstantMild,
    ConstantSevere,
    ExponentialMild,
    ExponentialSevere,
}

impl Variant {
    fn suffix(self) -> &'static str {
        match self {
            Variant::ConstantMild => "cm",
            Variant::ConstantSevere => "cs",
            Variant::ExponentialMild => "em",
            Variant::ExponentialSevere => "es",
        }
    }

    fn is_mild(self) -> bool {
        matches!(self, Variant::ConstantMild | Variant::ExponentialMild)
    }

    fn is_exponential(self) -> bool {
        matches!(self, Variant::ExponentialMild | Variant::ExponentialSevere)
    }
}

/// One of the seventeen perturbation scenarios (`np`, `pea-cm`, ..., `all-es`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scenario {
    pub category: Category,
    /// `None` only for `Category::None`.
    pub variant: Option<Variant>,
}

impl Scenario {
    pub const NP: Scenario = Scenario {
        category: Category::None,
        variant: None,
    };

    pub fn all() -> Vec<Scenario> {
        let variants = [
            Variant::ConstantMild,
            Variant::ConstantSevere,
            Variant::ExponentialMild,
            Variant::ExponentialSevere,
        ];
        let mut out = vec![Scenario::NP];
        for category in [
            Category::Availability,
            Category::Bandwidth,
            Category::Latency,
            Category::All,
        ] {
            for v in variants {
                out.push(Scenario {
                    category,
                    variant: Some(v),
                });
            }
        }
        out
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.category {
            Category::None => return f.write_str("np"),
            Category::Availability => "pea",
            Category::Bandwidth => "bw",
            Category::Latency => "lat",
            Category::All => "all",
        };
        write!(f, "{prefix}-{}", self.variant.map_or("", Variant::suffix))
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::all()
            .into_iter()
            .find(|sc| sc.to_string() == s)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{s}`")))
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerturbationSpec {
    pub scenario: Scenario,
    /// Seeds the per-window draws of exponential variants.
    pub seed: u64,
}

/// Availability (one per core), bandwidth and latency-factor traces.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub avail: Vec<Arc<Trace>>,
    pub bw: Arc<Trace>,
    pub lat: Arc<Trace>,
}

fn exp_factor<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let dist = Exp::new(1.0 / mean).expect("positive mean");
    loop {
        let x: f64 = dist.sample(rng);
        if x > 0.0 && x <= 1.0 {
            return x;
        }
    }
}

/// Perturbed windows `[phase + k*100, phase + k*100 + 50)`; factor 1 elsewhere.
fn windowed_trace(
    kind: TraceKind,
    variant: Variant,
    mean: f64,
    phase: f64,
    horizon: f64,
    seed: u64,
    stream: Stream,
) -> Trace {
    if !variant.is_exponential() {
        return Trace {
            kind,
            points: vec![(0.0, mean), (PERTURBED_SPAN, 1.0)],
            period: Some(PERTURBATION_PERIOD),
            phase,
        };
    }
    let mut rng = stream_rng(seed, stream);
    let mut points = Vec::new();
    let mut start = 0.0;
    let mut k = 0u64;
    while phase + start < horizon {
        points.push((start, exp_factor(&mut rng, mean)));
        points.push((start + PERTURBED_SPAN, 1.0));
        k += 1;
        start = k as f64 * PERTURBATION_PERIOD;
    }
    Trace {
        kind,
        points,
        period: None,
        phase,
    }
}

pub fn generate_traces(spec: &PerturbationSpec, horizon: f64, cores: usize) -> Result<TraceSet> {
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::config("horizon", "must be > 0"));
    }
    let Scenario { category, variant } = spec.scenario;
    let unit = |kind| Arc::new(Trace::constant(kind, 1.0));
    let mut set = TraceSet {
        avail: vec![unit(TraceKind::Availability); cores],
        bw: unit(TraceKind::Bandwidth),
        lat: unit(TraceKind::LatencyFactor),
    };
    let Some(variant) = variant else {
        return Ok(set);
    };
    let net_mean = if variant.is_mild() { 1e-5 } else { 1e-7 };
    if matches!(category, Category::Availability | Category::All) {
        let mean = if variant.is_mild() { 0.75 } else { 0.25 };
        let tr = Arc::new(windowed_trace(
            TraceKind::Availability,
            variant,
            mean,
            AVAILABILITY_PHASE,
            horizon,
            spec.seed,
            Stream::Availability,
        ));
        set.avail = vec![tr; cores];
    }
    if matches!(category, Category::Bandwidth | Category::All) {
        set.bw = Arc::new(windowed_trace(
            TraceKind::Bandwidth,
            variant,
            net_mean,
            0.0,
            horizon,
            spec.seed,
            Stream::Bandwidth,
        ));
    }
    if matches!(category, Category::Latency | Category::All) {
        set.lat = Arc::new(windowed_trace(
            TraceKind::LatencyFactor,
            variant,
            net_mean,
            0.0,
            horizon,
            spec.seed,
            Stream::Latency,
        ));
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    P224,
    P696,
    /// Equal Broadwell/KNL halves (Broadwell gets the odd core).
    Scaled(usize),
}

impl Preset {
    pub fn counts(&self) -> (usize, usize) {
        match *self {
            Preset::P224 => (112, 112),
            Preset::P696 => (440, 256),
            Preset::Scaled(p) => (p.div_ceil(2), p / 2),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Preset::P224 => "p224".into(),
            Preset::P696 => "p696".into(),
            Preset::Scaled(p) => format!("p{p}s"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p224" => Ok(Preset::P224),
            "p696" => Ok(Preset::P696),
            _ => s
                .strip_prefix('p')
                .and_then(|r| r.strip_suffix('s'))
                .and_then(|r| r.parse().ok())
                .filter(|&p: &usize| p > 0)
                .map(Preset::Scaled)
                .ok_or_else(|| Error::config("platform", format!("unknown preset `{s}`"))),
        }
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Declarative platform document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub broadwell: usize,
    pub knl: usize,
    pub broadwell_weight: f64,
    pub knl_weight: f64,
    /// Extra cores given by weight only.
    pub custom_weights: Vec<f64>,
    pub s0: f64,
    pub latency0: f64,
    pub bandwidth0: f64,
    pub msg_bits: f64,
    pub latency_mode: LatencyMode,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        let net = NetworkSpec::default();
        PlatformConfig {
            broadwell: 0,
            knl: 0,
            broadwell_weight: BROADWELL_WEIGHT,
            knl_weight: KNL_WEIGHT,
            custom_weights: Vec::new(),
            s0: DEFAULT_S0,
            latency0: net.latency0,
            bandwidth0: net.bandwidth0,
            msg_bits: net.msg_bits,
            latency_mode: net.latency_mode,
        }
    }
}

impl PlatformConfig {
    pub fn from_preset(preset: &Preset) -> Self {
        let (broadwell, knl) = preset.counts();
        PlatformConfig {
            broadwell,
            knl,
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn network(&self) -> NetworkSpec {
        NetworkSpec {
            latency0: self.latency0,
            bandwidth0: self.bandwidth0,
            msg_bits: self.msg_bits,
            latency_mode: self.latency_mode,
        }
    }

    pub fn build(&self) -> Result<PlatformModel> {
        let mut classes = Vec::new();
        classes.extend(std::iter::repeat_n((CoreClass::Broadwell, self.broadwell_weight), self.broadwell));
        classes.extend(std::iter::repeat_n((CoreClass::Knl, self.knl_weight), self.knl));
        classes.extend(self.custom_weights.iter().map(|&w| (CoreClass::Other, w)));
        build_platform(&classes, self.s0, self.network())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlatformModel {
    pub cores: Vec<CoreSpec>,
    pub network: NetworkSpec,
    pub traces: TraceSet,
}

/// Builds an unperturbed platform from `(class, weight)` pairs.
pub fn build_platform(
    classes: &[(CoreClass, f64)],
    s0: f64,
    network: NetworkSpec,
) -> Result<PlatformModel> {
    if classes.is_empty() {
        return Err(Error::config("cores", "platform needs at least one core"));
    }
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::config("s0", format!("must be > 0, got {s0}")));
    }
    network.validate()?;
    let cores = classes
        .iter()
        .enumerate()
        .map(|(id, &(class, weight))| {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::config("weight", format!("core {id}: must be > 0")));
            }
            Ok(CoreSpec {
                id,
                class,
                weight,
                speed: weight * s0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let traces = generate_traces(
        &PerturbationSpec {
            scenario: Scenario::NP,
            seed: 0,
        },
        1.0,
        cores.len(),
    )?;
    Ok(PlatformModel {
        cores,
        network,
        traces,
    })
}

pub fn build_preset(preset: &Preset, s0: f64) -> Result<PlatformModel> {
    PlatformConfig {
        s0,
        ..PlatformConfig::from_preset(preset)
    }
    .build()
}

impl PlatformModel {
    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn with_traces(mut self, traces: TraceSet) -> Result<Self> {
        if traces.avail.len() != self.cores.len() {
            return Err(Error::config(
                "avail_traces",
                format!("{} traces for {} cores", traces.avail.len(), self.cores.len()),
            ));
        }
        self.traces = traces;
        Ok(self)
    }

    pub fn with_perturbation(self, spec: &PerturbationSpec, horizon: f64) -> Result<Self> {
        let traces = generate_traces(spec, horizon, self.cores.len())?;
        self.with_traces(traces)
    }

    pub fn aggregate_speed(&self) -> f64 {
        self.cores.iter().map(|c| c.speed).sum()
    }

    /// Mean nominal core speed.
    pub fn reference_speed(&self) -> f64 {
        self.aggregate_speed() / self.cores.len() as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        self.cores.iter().map(|c| c.weight).collect()
    }

    pub fn effective_speed(&self, core: usize, t: f64) -> Result<f64> {
        let c = self.cores.get(core).ok_or(Error::Index {
            what: "core",
            index: core,
            len: self.cores.len(),
        })?;
        Ok(c.speed * self.traces.avail[core].value_at(t))
    }

    /// One-way scheduling message time at `t`.
    pub fn transfer_time(&self, t: f64) -> f64 {
        self.network
            .one_way(self.traces.bw.value_at(t), self.traces.lat.value_at(t))
    }

    /// Unperturbed round trip.
    pub fn nominal_round_trip(&self) -> f64 {
        2.0 * self.network.one_way(1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: &str) -> PerturbationSpec {
        PerturbationSpec {
            scenario: s.parse().unwrap(),
            seed: 17,
        }
    }

    #[test]
    fn presets() {
        let p = build_preset(&Preset::P696, 1e9).unwrap();
        assert_eq!(p.num_cores(), 696);
        let expect = (440.0 * 1.398 + 256.0 * 0.316) * 1e9;
        assert!((p.aggregate_speed() - expect).abs() / expect < 1e-12);
        assert!((p.aggregate_speed() - 6.960e11).abs() < 1e9);

        let p = build_preset(&Preset::P224, 1e9).unwrap();
        assert_eq!(p.num_cores(), 224);
        assert_eq!(p.cores.iter().filter(|c| c.class == CoreClass::Broadwell).count(), 112);
        assert_eq!(p.cores.iter().filter(|c| c.class == CoreClass::Knl).count(), 112);

        let p = build_platform(&[(CoreClass::Other, 1.0)], 5e8, NetworkSpec::default()).unwrap();
        assert_eq!(p.cores[0].speed, 5e8);

        assert!(build_platform(&[], 1e9, NetworkSpec::default()).is_err());
        assert_eq!(Preset::Scaled(9).counts(), (5, 4));
        assert_eq!("p9s".parse::<Preset>().unwrap(), Preset::Scaled(9));
    }

    #[test]
    fn scenario_names_round_trip() {
        let all = Scenario::all();
        assert_eq!(all.len(), 17);
        let names: Vec<String> = all.iter().map(|s| s.to_string()).collect();
        assert_eq!(names[0], "np");
        assert!(names.contains(&"lat-es".to_string()));
        for s in &all {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), *s);
        }
        assert!("pea-xx".parse::<Scenario>().is_err());
    }

    #[test]
    fn pea_cm_windows() {
        let tr = generate_traces(&spec("pea-cm"), 200.0, 3).unwrap();
        let a = &tr.avail[2];
        assert_eq!(a.value_at(0.0), 1.0);
        assert_eq!(a.value_at(49.0), 1.0);
        assert_eq!(a.value_at(50.0), 0.75);
        assert_eq!(a.value_at(99.0), 0.75);
        assert_eq!(a.value_at(100.0), 1.0);
        assert_eq!(a.value_at(150.0), 0.75);
        assert_eq!(a.value_at(199.0), 0.75);
        assert_eq!(tr.bw.value_at(10.0), 1.0);
    }

    #[test]
    fn bw_cs_windows() {
        let tr = generate_traces(&spec("bw-cs"), 100.0, 1).unwrap();
        assert_eq!(tr.bw.value_at(0.0), 1e-7);
        assert_eq!(tr.bw.value_at(49.9), 1e-7);
        assert_eq!(tr.bw.value_at(50.0), 1.0);
        assert_eq!(tr.bw.value_at(99.0), 1.0);
        assert_eq!(tr.lat.value_at(10.0), 1.0);
        assert_eq!(tr.avail[0].value_at(60.0), 1.0);
    }

    #[test]
    fn np_is_neutral() {
        let p = build_preset(&Preset::Scaled(4), 1e9).unwrap();
        for t in [0.0, 33.0, 77.0, 1234.5] {
            for c in 0..4 {
                assert_eq!(p.effective_speed(c, t).unwrap(), p.cores[c].speed);
            }
            assert_eq!(p.transfer_time(t), p.transfer_time(0.0));
        }
        assert!(p.effective_speed(9, 0.0).is_err());
    }

    #[test]
    fn effective_speed_under_availability() {
        let p = build_platform(&[(CoreClass::Broadwell, 1.398)], 1e9, NetworkSpec::default())
            .unwrap()
            .with_perturbation(&spec("pea-cs"), 1000.0)
            .unwrap();
        assert!((p.effective_speed(0, 60.0).unwrap() - 3.495e8).abs() < 1e-3);
        let p = build_platform(&[(CoreClass::Other, 1.0)], 1e9, NetworkSpec::default())
            .unwrap()
            .with_perturbation(&spec("pea-cm"), 1000.0)
            .unwrap();
        assert_eq!(p.effective_speed(0, 60.0).unwrap(), 0.75e9);
    }

    #[test]
    fn transfer_time_closed_form() {
        let net = NetworkSpec {
            latency0: 2e-6,
            bandwidth0: 1e11,
            msg_bits: 512.0,
            latency_mode: LatencyMode::Divide,
        };
        assert!((net.one_way(1.0, 1.0) - 2.00512e-6).abs() < 1e-15);
        // Hand-evaluated: 2e-6 + 512 / (1e11 * 1e-5) = 2e-6 + 5.12e-4.
        assert!((net.one_way(1e-5, 1.0) - 5.14e-4).abs() < 1e-12);
        // 2e-6 / 1e-5 + 512 / 1e11 = 0.2 + 5.12e-9.
        assert!((net.one_way(1.0, 1e-5) - 0.200_000_005_12).abs() < 1e-12);
        let mult = NetworkSpec {
            latency_mode: LatencyMode::Multiply,
            ..net
        };
        assert!(mult.one_way(1.0, 1e-5) < net.one_way(1.0, 1.0));
    }

    #[test]
    fn all_composes_individual_traces() {
        for v in ["cm", "cs", "em", "es"] {
            let all = generate_traces(&spec(&format!("all-{v}")), 2000.0, 2).unwrap();
            let pea = generate_traces(&spec(&format!("pea-{v}")), 2000.0, 2).unwrap();
            let bw = generate_traces(&spec(&format!("bw-{v}")), 2000.0, 2).unwrap();
            let lat = generate_traces(&spec(&format!("lat-{v}")), 2000.0, 2).unwrap();
            assert_eq!(all.avail, pea.avail);
            assert_eq!(all.bw, bw.bw);
            assert_eq!(all.lat, lat.lat);
        }
    }

    #[test]
    fn exponential_windows_are_bounded_and_seeded() {
        let a = generate_traces(&spec("pea-es"), 5000.0, 1).unwrap();
        let b = generate_traces(&spec("pea-es"), 5000.0, 1).unwrap();
        assert_eq!(a, b);
        let tr = &a.avail[0];
        assert_eq!(tr.value_at(10.0), 1.0);
        for k in 0..49 {
            let t = 50.0 + 100.0 * k as f64;
            let f = tr.value_at(t + 1.0);
            assert!(f > 0.0 && f <= 1.0);
            assert_eq!(tr.value_at(t + 60.0), 1.0);
        }
        let other = generate_traces(
            &PerturbationSpec {
                seed: 18,
                ..spec("pea-es")
            },
            5000.0,
            1,
        )
        .unwrap();
        assert_ne!(a.avail[0], other.avail[0]);
    }

    #[test]
    fn monotone_harm_for_constant_variants() {
        let mk = |s: &str| {
            build_preset(&Preset::Scaled(2), 1e9)
                .unwrap()
                .with_perturbation(&spec(s), 1000.0)
                .unwrap()
        };
        let (mild, severe) = (mk("all-cm"), mk("all-cs"));
        for i in 0..400 {
            let t = i as f64 * 0.73;
            assert!(severe.transfer_time(t) >= mild.transfer_time(t));
            for c in 0..2 {
                assert!(severe.effective_speed(c, t).unwrap() <= mild.effective_speed(c, t).unwrap());
            }
        }
    }

    #[test]
    fn platform_config_document() {
        let cfg: PlatformConfig =
            serde_json::from_str(r#"{"broadwell": 2, "knl": 1, "s0": 2e9, "latency0": 1e-6}"#).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(p.num_cores(), 3);
        assert_eq!(p.cores[2].speed, 0.316 * 2e9);
        assert_eq!(p.network.latency0, 1e-6);
        assert!(serde_json::from_str::<PlatformConfig>(r#"{"cores": 3}"#).is_err());
    }
}
