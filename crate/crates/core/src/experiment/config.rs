//! Flat `key = value` experiment configuration with dotted sections.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. [`ExperimentConfig::to_manifest`] writes every key back in a fixed
//! order, and parsing that text yields an identical config.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::error::{AtgError, Result};
use crate::sim::{Dist, LatencyModel, Tail};
use crate::worker::{OutputMode, StopRule};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        m: usize,
        d: usize,
        noise_std: f64,
    },
    Csv {
        path: PathBuf,
        label_column: usize,
        has_header: bool,
        standardize: bool,
    },
    Cache {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant(f64),
    /// Decaying rate with constants estimated in a ball of this radius around `x*`.
    Decaying {
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSpec {
    pub workers: usize,
    pub redundancy: usize,
    pub epochs: u64,
    pub time_budget: Option<Duration>,
    pub iteration_cap: Option<u64>,
    pub stop_rule: StopRule,
    /// `None` waits for every responsive worker.
    pub waiting: Option<Duration>,
    pub schedule: ScheduleSpec,
    pub output: OutputMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySpec {
    pub compute: Dist,
    pub comm: Dist,
    pub tail: Option<Tail>,
    /// Worker `v` is slowed by `1 + spread · v / (N − 1)`.
    pub slowdown_spread: f64,
    pub persistent: Vec<usize>,
    /// Pins each worker's per-step cost to `T / q_v` so it does exactly `q_v` steps.
    pub forced_q: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Anytime,
    Proportional,
    Uniform,
    Generalized,
    Sync,
    Fnb(usize),
    SingleFastest,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Anytime => f.write_str("anytime"),
            Scheme::Proportional => f.write_str("proportional"),
            Scheme::Uniform => f.write_str("uniform"),
            Scheme::Generalized => f.write_str("generalized"),
            Scheme::Sync => f.write_str("sync"),
            Scheme::Fnb(b) => write!(f, "fnb:{b}"),
            Scheme::SingleFastest => f.write_str("single-fastest"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "anytime" => Scheme::Anytime,
            "proportional" => Scheme::Proportional,
            "uniform" => Scheme::Uniform,
            "generalized" => Scheme::Generalized,
            "sync" => Scheme::Sync,
            "single-fastest" => Scheme::SingleFastest,
            _ => match s.strip_prefix("fnb:") {
                Some(b) => Scheme::Fnb(b.parse().map_err(|_| format!("bad FNB count in {s:?}"))?),
                None => return Err(format!("unknown scheme {s:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetData {
    Inline,
    /// Master writes a dataset cache next to its outputs and workers load it.
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub data: NetData,
    pub handshake: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartSpec {
    Optimum,
    Zero,
    Offset(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSpec {
    pub workers: usize,
    /// Per-worker step counts; one Monte Carlo batch per entry.
    pub k: Vec<u64>,
    pub trials: usize,
    pub radius: f64,
    pub output: OutputMode,
    pub start: StartSpec,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub plan: PlanSpec,
    pub latency: LatencySpec,
    pub schemes: Vec<Scheme>,
    pub threshold: f64,
    pub output_dir: PathBuf,
    pub net: NetSpec,
    pub bounds: BoundsSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let lat = LatencyModel::default();
        Self {
            seed: 0,
            dataset: DatasetSpec::Synthetic {
                m: 10_000,
                d: 100,
                noise_std: 1e-3f64.sqrt(),
            },
            plan: PlanSpec {
                workers: 10,
                redundancy: 0,
                epochs: 10,
                time_budget: Some(Duration::from_secs(1)),
                iteration_cap: None,
                stop_rule: StopRule::TimeOnly,
                waiting: None,
                schedule: ScheduleSpec::Constant(1e-4),
                output: OutputMode::LastIterate,
            },
            latency: LatencySpec {
                compute: lat.compute,
                comm: lat.comm,
                tail: lat.tail,
                slowdown_spread: 0.0,
                persistent: Vec::new(),
                forced_q: None,
            },
            schemes: vec![Scheme::Anytime],
            threshold: 0.01,
            output_dir: PathBuf::from("out"),
            net: NetSpec {
                data: NetData::Inline,
                handshake: Duration::from_secs(30),
            },
            bounds: BoundsSpec {
                workers: 2,
                k: vec![100, 200, 500, 1000, 2000, 5000, 10_000],
                trials: 200,
                radius: 1.0,
                output: OutputMode::LastIterate,
                start: StartSpec::Optimum,
                delta: 0.1,
            },
        }
    }
}

/// Seconds as an exact decimal, e.g. `0.65076` is 650 760 000 ns.
pub fn parse_seconds(s: &str) -> std::result::Result<Duration, String> {
    let bad = || format!("expected seconds with at most 9 decimals, got {s:?}");
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if frac.len() > 9 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let secs: u64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let nanos: u32 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<9}").parse().map_err(|_| bad())?
    };
    Ok(Duration::new(secs, nanos))
}

pub fn format_seconds(d: Duration) -> String {
    if d.subsec_nanos() == 0 {
        return d.as_secs().to_string();
    }
    let frac = format!("{:09}", d.subsec_nanos());
    format!("{}.{}", d.as_secs(), frac.trim_end_matches('0'))
}

fn parse_opt_seconds(s: &str) -> std::result::Result<Option<Duration>, String> {
    match s {
        "unlimited" | "none" => Ok(None),
        _ => parse_seconds(s).map(Some),
    }
}

fn format_opt_seconds(d: Option<Duration>) -> String {
    d.map_or_else(|| "unlimited".into(), format_seconds)
}

fn parse_dist(s: &str) -> std::result::Result<Dist, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |i: usize| -> std::result::Result<f64, String> {
        parts
            .get(i)
            .ok_or_else(|| format!("missing parameter in {s:?}"))?
            .parse::<f64>()
            .map_err(|_| format!("bad number in {s:?}"))
    };
    let d = match (parts[0], parts.len()) {
        ("constant", 2) => Dist::Constant(parse_seconds(parts[1])?),
        ("shifted_exp", 3) => Dist::ShiftedExponential {
            shift: num(1)?,
            rate: num(2)?,
        },
        ("pareto", 3) => Dist::Pareto {
            scale: num(1)?,
            shape: num(2)?,
        },
        _ => {
            return Err(format!(
                "expected constant:S, shifted_exp:SHIFT:RATE or pareto:SCALE:SHAPE, got {s:?}"
            ))
        }
    };
    d.validate().map_err(|e| e.to_string())?;
    Ok(d)
}

fn format_dist(d: &Dist) -> String {
    match d {
        Dist::Constant(c) => format!("constant:{}", format_seconds(*c)),
        Dist::ShiftedExponential { shift, rate } => format!("shifted_exp:{shift}:{rate}"),
        Dist::Pareto { scale, shape } => format!("pareto:{scale}:{shape}"),
    }
}

fn parse_tail(s: &str) -> std::result::Result<Option<Tail>, String> {
    if s == "none" {
        return Ok(None);
    }
    let (p, dist) = s
        .split_once(':')
        .ok_or_else(|| format!("expected none or PROB:DIST, got {s:?}"))?;
    let prob: f64 = p.parse().map_err(|_| format!("bad probability in {s:?}"))?;
    if !(0.0..=1.0).contains(&prob) {
        return Err(format!("tail probability {prob} not in [0,1]"));
    }
    Ok(Some(Tail {
        prob,
        dist: parse_dist(dist)?,
    }))
}

fn format_tail(t: &Option<Tail>) -> String {
    t.as_ref().map_or_else(
        || "none".into(),
        |t| format!("{}:{}", t.prob, format_dist(&t.dist)),
    )
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    if s.trim().is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format!("bad list element {v:?}"))
        })
        .collect()
}

fn format_list<T: fmt::Display>(v: &[T]) -> String {
    if v.is_empty() {
        return "none".into();
    }
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_output(s: &str) -> std::result::Result<OutputMode, String> {
    match s {
        "last_iterate" => Ok(OutputMode::LastIterate),
        "running_average" => Ok(OutputMode::RunningAverage),
        _ => Err(format!(
            "expected last_iterate or running_average, got {s:?}"
        )),
    }
}

fn format_output(o: OutputMode) -> &'static str {
    match o {
        OutputMode::LastIterate => "last_iterate",
        OutputMode::RunningAverage => "running_average",
    }
}

fn parse_stop_rule(s: &str) -> std::result::Result<StopRule, String> {
    match s {
        "time_only" => Ok(StopRule::TimeOnly),
        "iterations_only" => Ok(StopRule::IterationsOnly),
        "both_exhausted" => Ok(StopRule::BothExhausted),
        _ => Err(format!(
            "expected time_only, iterations_only or both_exhausted, got {s:?}"
        )),
    }
}

fn format_stop_rule(r: StopRule) -> &'static str {
    match r {
        StopRule::TimeOnly => "time_only",
        StopRule::IterationsOnly => "iterations_only",
        StopRule::BothExhausted => "both_exhausted",
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                AtgError::config(format!("line {}", i + 1), "expected key = value")
            })?;
            let key = k.trim().to_string();
            if map
                .insert(key.clone(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(AtgError::config(
                    key,
                    format!("duplicate key on line {}", i + 1),
                ));
            }
        }
        Ok(Self { map })
    }

    fn take<T>(
        &mut self,
        key: &str,
        slot: &mut T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<()> {
        if let Some((line, v)) = self.map.remove(key) {
            *slot = parse(&v).map_err(|m| AtgError::config(key, format!("line {line}: {m}")))?;
        }
        Ok(())
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((k, (line, _))) => Err(AtgError::config(k, format!("line {line}: unknown key"))),
            None => Ok(()),
        }
    }
}

fn parse_num<T: FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let mut c = ExperimentConfig::default();

        e.take("seed", &mut c.seed, parse_num)?;

        let kind = e
            .take_str("dataset.kind")
            .unwrap_or_else(|| "synthetic".into());
        c.dataset = match kind.as_str() {
            "synthetic" => {
                let (mut m, mut d, mut noise_std) = (10_000usize, 100usize, 1e-3f64.sqrt());
                e.take("dataset.m", &mut m, parse_num)?;
                e.take("dataset.d", &mut d, parse_num)?;
                e.take("dataset.noise_std", &mut noise_std, parse_num)?;
                DatasetSpec::Synthetic { m, d, noise_std }
            }
            "csv" => {
                let path = e
                    .take_str("dataset.path")
                    .ok_or_else(|| AtgError::config("dataset.path", "required for csv datasets"))?;
                let (mut label_column, mut has_header, mut standardize) = (0usize, false, true);
                e.take("dataset.label_column", &mut label_column, parse_num)?;
                e.take("dataset.has_header", &mut has_header, parse_bool)?;
                e.take("dataset.standardize", &mut standardize, parse_bool)?;
                DatasetSpec::Csv {
                    path: path.into(),
                    label_column,
                    has_header,
                    standardize,
                }
            }
            "cache" => DatasetSpec::Cache {
                path: e
                    .take_str("dataset.path")
                    .ok_or_else(|| AtgError::config("dataset.path", "required for cache datasets"))?
                    .into(),
            },
            other => {
                return Err(AtgError::config(
                    "dataset.kind",
                    format!("expected synthetic, csv or cache, got {other:?}"),
                ))
            }
        };

        let p = &mut c.plan;
        e.take("plan.workers", &mut p.workers, parse_num)?;
        e.take("plan.redundancy", &mut p.redundancy, parse_num)?;
        e.take("plan.epochs", &mut p.epochs, parse_num)?;
        e.take("plan.time_budget_s", &mut p.time_budget, parse_opt_seconds)?;
        e.take("plan.iteration_cap", &mut p.iteration_cap, |s| match s {
            "none" => Ok(None),
            _ => parse_num(s).map(Some),
        })?;
        e.take("plan.stop_rule", &mut p.stop_rule, parse_stop_rule)?;
        e.take("plan.waiting_s", &mut p.waiting, parse_opt_seconds)?;
        e.take("plan.output", &mut p.output, parse_output)?;
        let schedule = e
            .take_str("plan.schedule")
            .unwrap_or_else(|| "constant".into());
        p.schedule = match schedule.as_str() {
            "constant" => {
                let mut rate = 1e-4;
                e.take("plan.step_size", &mut rate, parse_num)?;
                ScheduleSpec::Constant(rate)
            }
            "decaying" => {
                let mut radius = 1.0;
                e.take("plan.radius", &mut radius, parse_num)?;
                ScheduleSpec::Decaying { radius }
            }
            other => {
                return Err(AtgError::config(
                    "plan.schedule",
                    format!("expected constant or decaying, got {other:?}"),
                ))
            }
        };

        let l = &mut c.latency;
        e.take("latency.compute", &mut l.compute, parse_dist)?;
        e.take("latency.comm", &mut l.comm, parse_dist)?;
        e.take("latency.tail", &mut l.tail, parse_tail)?;
        e.take("latency.slowdown_spread", &mut l.slowdown_spread, parse_num)?;
        e.take("latency.persistent", &mut l.persistent, parse_list)?;
        e.take("latency.forced_q", &mut l.forced_q, |s| {
            parse_list(s).map(|v: Vec<u64>| (!v.is_empty()).then_some(v))
        })?;

        e.take("schemes", &mut c.schemes, parse_list)?;
        e.take("threshold", &mut c.threshold, parse_num)?;
        if let Some(dir) = e.take_str("output.dir") {
            c.output_dir = dir.into();
        }

        e.take("net.data", &mut c.net.data, |s| match s {
            "inline" => Ok(NetData::Inline),
            "shared" => Ok(NetData::Shared),
            _ => Err(format!("expected inline or shared, got {s:?}")),
        })?;
        e.take("net.handshake_s", &mut c.net.handshake, parse_seconds)?;

        let b = &mut c.bounds;
        e.take("bounds.workers", &mut b.workers, parse_num)?;
        e.take("bounds.k", &mut b.k, parse_list)?;
        e.take("bounds.trials", &mut b.trials, parse_num)?;
        e.take("bounds.radius", &mut b.radius, parse_num)?;
        e.take("bounds.output", &mut b.output, parse_output)?;
        e.take("bounds.start", &mut b.start, |s| match s {
            "optimum" => Ok(StartSpec::Optimum),
            "zero" => Ok(StartSpec::Zero),
            _ => match s.strip_prefix("offset:") {
                Some(r) => parse_num(r).map(StartSpec::Offset),
                None => Err(format!("expected optimum, zero or offset:R, got {s:?}")),
            },
        })?;
        e.take("bounds.delta", &mut b.delta, parse_num)?;

        e.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plan;
        if p.workers == 0 {
            return Err(AtgError::config("plan.workers", "must be at least 1"));
        }
        if p.redundancy >= p.workers {
            return Err(AtgError::config(
                "plan.redundancy",
                "must be below plan.workers",
            ));
        }
        if p.epochs == 0 {
            return Err(AtgError::config("plan.epochs", "must be at least 1"));
        }
        if p.time_budget == Some(Duration::ZERO) {
            return Err(AtgError::config("plan.time_budget_s", "must be positive"));
        }
        if p.waiting == Some(Duration::ZERO) {
            return Err(AtgError::config(
                "plan.waiting_s",
                "must be positive or unlimited",
            ));
        }
        match p.schedule {
            ScheduleSpec::Constant(r) if !(r.is_finite() && r > 0.0) => {
                return Err(AtgError::config("plan.step_size", "must be positive"))
            }
            ScheduleSpec::Decaying { radius } if !(radius.is_finite() && radius > 0.0) => {
                return Err(AtgError::config("plan.radius", "must be positive"))
            }
            _ => {}
        }
        if let DatasetSpec::Synthetic { m, d, noise_std } = self.dataset {
            if m < p.workers || d == 0 {
                return Err(AtgError::config(
                    "dataset.m",
                    "need d >= 1 and m >= plan.workers",
                ));
            }
            if !(noise_std.is_finite() && noise_std >= 0.0) {
                return Err(AtgError::config("dataset.noise_std", "must be >= 0"));
            }
        }
        let l = &self.latency;
        if !(l.slowdown_spread.is_finite() && l.slowdown_spread >= 0.0) {
            return Err(AtgError::config("latency.slowdown_spread", "must be >= 0"));
        }
        if let Some(v) = l.persistent.iter().find(|&&v| v >= p.workers) {
            return Err(AtgError::config(
                "latency.persistent",
                format!("worker {v} out of range"),
            ));
        }
        if let Some(q) = &l.forced_q {
            if q.len() != p.workers || q.contains(&0) {
                return Err(AtgError::config(
                    "latency.forced_q",
                    "needs one positive count per worker",
                ));
            }
            if p.time_budget.is_none() {
                return Err(AtgError::config(
                    "latency.forced_q",
                    "needs a finite plan.time_budget_s",
                ));
            }
        }
        if self.schemes.is_empty() {
            return Err(AtgError::config("schemes", "list at least one scheme"));
        }
        for s in &self.schemes {
            if let Scheme::Fnb(b) = s {
                if *b >= p.workers {
                    return Err(AtgError::config(
                        "schemes",
                        format!("{s} needs B < plan.workers"),
                    ));
                }
            }
            let timed = !matches!(s, Scheme::Sync | Scheme::Fnb(_));
            if timed && p.time_budget.is_none() && p.iteration_cap.is_none() {
                return Err(AtgError::config(
                    "plan.time_budget_s",
                    format!("scheme {s} needs a time budget or iteration cap"),
                ));
            }
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(AtgError::config("threshold", "must be positive"));
        }
        let b = &self.bounds;
        if b.workers == 0 || b.k.is_empty() || b.k.contains(&0) {
            return Err(AtgError::config(
                "bounds.k",
                "need workers >= 1 and positive counts",
            ));
        }
        if b.trials < 2 {
            return Err(AtgError::config("bounds.trials", "need at least 2"));
        }
        if !(b.delta > 0.0 && b.delta <= 1.0) {
            return Err(AtgError::config("bounds.delta", "must be in (0, 1]"));
        }
        if !(b.radius.is_finite() && b.radius > 0.0) {
            return Err(AtgError::config("bounds.radius", "must be positive"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in parse order.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        match &self.dataset {
            DatasetSpec::Synthetic { m, d, noise_std } => {
                kv("dataset.kind", "synthetic".into());
                kv("dataset.m", m.to_string());
                kv("dataset.d", d.to_string());
                kv("dataset.noise_std", noise_std.to_string());
            }
            DatasetSpec::Csv {
                path,
                label_column,
                has_header,
                standardize,
            } => {
                kv("dataset.kind", "csv".into());
                kv("dataset.path", path.display().to_string());
                kv("dataset.label_column", label_column.to_string());
                kv("dataset.has_header", has_header.to_string());
                kv("dataset.standardize", standardize.to_string());
            }
            DatasetSpec::Cache { path } => {
                kv("dataset.kind", "cache".into());
                kv("dataset.path", path.display().to_string());
            }
        }
        let p = &self.plan;
        kv("plan.workers", p.workers.to_string());
        kv("plan.redundancy", p.redundancy.to_string());
        kv("plan.epochs", p.epochs.to_string());
        kv("plan.time_budget_s", format_opt_seconds(p.time_budget));
        kv(
            "plan.iteration_cap",
            p.iteration_cap
                .map_or_else(|| "none".into(), |c| c.to_string()),
        );
        kv("plan.stop_rule", format_stop_rule(p.stop_rule).into());
        kv("plan.waiting_s", format_opt_seconds(p.waiting));
        kv("plan.output", format_output(p.output).into());
        match p.schedule {
            ScheduleSpec::Constant(r) => {
                kv("plan.schedule", "constant".into());
                kv("plan.step_size", r.to_string());
            }
            ScheduleSpec::Decaying { radius } => {
                kv("plan.schedule", "decaying".into());
                kv("plan.radius", radius.to_string());
            }
        }
        let l = &self.latency;
        kv("latency.compute", format_dist(&l.compute));
        kv("latency.comm", format_dist(&l.comm));
        kv("latency.tail", format_tail(&l.tail));
        kv("latency.slowdown_spread", l.slowdown_spread.to_string());
        kv("latency.persistent", format_list(&l.persistent));
        kv(
            "latency.forced_q",
            l.forced_q
                .as_deref()
                .map_or_else(|| "none".into(), format_list),
        );
        kv("schemes", format_list(&self.schemes));
        kv("threshold", self.threshold.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        kv(
            "net.data",
            match self.net.data {
                NetData::Inline => "inline",
                NetData::Shared => "shared",
            }
            .into(),
        );
        kv("net.handshake_s", format_seconds(self.net.handshake));
        let b = &self.bounds;
        kv("bounds.workers", b.workers.to_string());
        kv("bounds.k", format_list(&b.k));
        kv("bounds.trials", b.trials.to_string());
        kv("bounds.radius", b.radius.to_string());
        kv("bounds.output", format_output(b.output).into());
        kv(
            "bounds.start",
            match b.start {
                StartSpec::Optimum => "optimum".into(),
                StartSpec::Zero => "zero".into(),
                StartSpec::Offset(r) => format!("offset:{r}"),
            },
        );
        kv("bounds.delta", b.delta.to_string());
        s
    }

    /// Latency model of each worker after spread, persistence and forced counts.
    pub fn latency_models(&self) -> Vec<LatencyModel> {
        let n = self.plan.workers;
        let l = &self.latency;
        (0..n)
            .map(|v| {
                let slowdown = if n > 1 {
                    1.0 + l.slowdown_spread * v as f64 / (n - 1) as f64
                } else {
                    1.0
                };
                let mut m = LatencyModel {
                    compute: l.compute,
                    comm: l.comm,
                    persistent: l.persistent.contains(&v),
                    slowdown,
                    tail: l.tail,
                };
                if let (Some(q), Some(t)) = (&l.forced_q, self.plan.time_budget) {
                    m.compute = Dist::Constant(t / q[v] as u32);
                    m.slowdown = 1.0;
                    m.tail = None;
                }
                m
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_seconds() {
        assert_eq!(
            parse_seconds("0.65076").unwrap(),
            Duration::from_nanos(650_760_000)
        );
        assert_eq!(parse_seconds("2").unwrap(), Duration::from_secs(2));
        assert_eq!(parse_seconds(".5").unwrap(), Duration::from_millis(500));
        assert!(parse_seconds("1e-3").is_err());
        assert!(parse_seconds("0.1234567891").is_err());
        assert!(parse_seconds("-1").is_err());
        for d in [
            Duration::from_nanos(650_760_000),
            Duration::new(3, 1),
            Duration::ZERO,
        ] {
            assert_eq!(parse_seconds(&format_seconds(d)).unwrap(), d);
        }
    }

    #[test]
    fn defaults_roundtrip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_manifest()).unwrap(), c);
    }

    #[test]
    fn full_config_roundtrip() {
        let text = "\
# comment
seed = 9
dataset.kind = csv
dataset.path = /tmp/x.csv
dataset.has_header = true
plan.workers = 4
plan.redundancy = 1
plan.time_budget_s = 0.25
plan.waiting_s = 1.5
plan.schedule = decaying
plan.radius = 2
latency.compute = pareto:1:2.5
latency.tail = none
latency.persistent = 3
latency.forced_q = 10,20,30,40
schemes = anytime, fnb:2, sync, generalized
";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.plan.waiting, Some(Duration::from_millis(1500)));
        assert_eq!(
            c.schemes,
            vec![
                Scheme::Anytime,
                Scheme::Fnb(2),
                Scheme::Sync,
                Scheme::Generalized
            ]
        );
        assert_eq!(ExperimentConfig::parse(&c.to_manifest()).unwrap(), c);
        let models = c.latency_models();
        assert!(models[3].persistent);
        assert_eq!(models[0].compute, Dist::Constant(Duration::from_millis(25)));
    }

    #[test]
    fn errors_name_the_key() {
        let err = |t: &str| match ExperimentConfig::parse(t) {
            Err(AtgError::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(err("plan.wrokers = 3"), "plan.wrokers");
        assert_eq!(err("plan.workers = three"), "plan.workers");
        assert_eq!(
            err("plan.workers = 2\nplan.redundancy = 2"),
            "plan.redundancy"
        );
        assert_eq!(err("schemes = anytime, warp"), "schemes");
        assert_eq!(err("schemes = fnb:10"), "schemes");
        assert_eq!(err("latency.comm = gamma:1:2"), "latency.comm");
        assert_eq!(err("seed = 1\nseed = 2"), "seed");
        assert_eq!(err("dataset.kind = csv"), "dataset.path");
        assert!(matches!(
            ExperimentConfig::parse("just words"),
            Err(AtgError::Config { .. })
        ));
    }

    #[test]
    fn slowdown_spread_is_linear() {
        let mut c = ExperimentConfig::default();
        c.latency.slowdown_spread = 1.0;
        let m = c.latency_models();
        assert_eq!(m[0].slowdown, 1.0);
        assert_eq!(m[9].slowdown, 2.0);
    }
}
