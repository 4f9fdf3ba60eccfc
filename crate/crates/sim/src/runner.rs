//! Run manifests, single runs and parameter sweeps.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use l2h_core::balancer::CoreMask;
use l2h_core::{Event, Machine, Mode, SimConfig, SimError, SimStats};

use crate::config::{IdleSelection, RunConfig};
use crate::kv::{format_size, parse_number, parse_size};
use crate::trace::{read_trace, Trace};

/// Everything needed for one invocation of `run` or `sweep`.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: RunConfig,
    pub traces: BTreeMap<usize, PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub events_log: bool,
}

/// Parse a `core=path` binding.
pub fn parse_binding(text: &str) -> Result<(usize, PathBuf), String> {
    let (core, path) = text.split_once('=').ok_or_else(|| format!("expected core=path, found `{text}`"))?;
    let core = parse_number(core, "core index")?;
    if path.is_empty() {
        return Err(format!("empty trace path for core {core}"));
    }
    Ok((core, PathBuf::from(path)))
}

pub fn collect_bindings(items: &[String]) -> anyhow::Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (core, path) = parse_binding(item).map_err(|e| anyhow!(e))?;
        if out.insert(core, path).is_some() {
            bail!("core {core} has more than one trace");
        }
    }
    Ok(out)
}

/// Cores that could lend: no trace and not critical, ascending.
pub fn lender_candidates(config: &SimConfig, bound: &BTreeMap<usize, PathBuf>) -> Vec<usize> {
    (0..config.core_count).filter(|c| !bound.contains_key(c) && !config.balancer.critical_cores.contains(*c)).collect()
}

impl RunManifest {
    /// Final machine configuration, validated against the trace bindings.
    pub fn resolve(&self) -> anyhow::Result<SimConfig> {
        let mut sim = self.config.sim.clone();
        if let Some(seed) = self.seed {
            sim.seed = seed;
        }
        if let Some((&core, _)) = self.traces.iter().find(|(&c, _)| c >= sim.core_count) {
            bail!("trace bound to core {core}, but the machine has {} cores", sim.core_count);
        }
        match &self.config.idle {
            IdleSelection::Cores(list) => {
                if let Some(c) = list.iter().find(|c| self.traces.contains_key(c)) {
                    bail!("core {c} is listed as idle but has a trace");
                }
            }
            IdleSelection::Auto => {
                sim.balancer.idle_cores = if sim.mode == Mode::L2h {
                    CoreMask::from_cores(lender_candidates(&sim, &self.traces))
                } else {
                    CoreMask::EMPTY
                };
            }
        }
        sim.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;
        Ok(sim)
    }

    pub fn load_traces(&self) -> anyhow::Result<Vec<(usize, Trace)>> {
        self.traces
            .iter()
            .map(|(&core, path)| {
                let t = read_trace(path)?;
                if let Some(i) = t.records.iter().position(|r| r.core != core) {
                    return Err(anyhow!(t.parse_error(
                        i,
                        format!("record for core {} in a trace bound to core {core}", t.records[i].core)
                    )));
                }
                Ok((core, t))
            })
            .collect()
    }
}

pub struct RunOutput {
    pub stats: SimStats,
    pub events: Vec<Event>,
}

/// Interleave the traces record by record and simulate them.
pub fn execute(config: &SimConfig, traces: &[(usize, Trace)], events: bool) -> anyhow::Result<RunOutput> {
    let mut machine = Machine::new(config.clone()).map_err(|e| anyhow!("invalid configuration: {e}"))?;
    if events {
        machine.record_events();
    }
    let longest = traces.iter().map(|(_, t)| t.records.len()).max().unwrap_or(0);
    for i in 0..longest {
        for (_, t) in traces {
            let Some(record) = t.records.get(i) else { continue };
            machine.step(record).map_err(|e| match e {
                SimError::CoreOutOfRange { .. } | SimError::IdleCoreAccess { .. } | SimError::ZeroIcount { .. } => {
                    anyhow!(t.parse_error(i, e.to_string()))
                }
                other => anyhow!(other),
            })?;
        }
    }
    Ok(RunOutput { stats: machine.stats(), events: machine.take_events() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    LlcSize,
    LenderCount,
    MpkiTh,
}

impl Axis {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(match text {
            "llc_size" => Axis::LlcSize,
            "lender_count" => Axis::LenderCount,
            "mpki_th" => Axis::MpkiTh,
            other => bail!("unknown sweep axis `{other}` (expected llc_size, lender_count or mpki_th)"),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::LlcSize => "llc_size",
            Axis::LenderCount => "lender_count",
            Axis::MpkiTh => "mpki_th",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisValue {
    Bytes(u64),
    Count(usize),
    Real(f64),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Bytes(b) => f.write_str(&format_size(*b)),
            AxisValue::Count(n) => write!(f, "{n}"),
            AxisValue::Real(x) => write!(f, "{x}"),
        }
    }
}

pub fn parse_axis_values(axis: Axis, text: &str) -> anyhow::Result<Vec<AxisValue>> {
    let mut out: Vec<AxisValue> = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v = match axis {
            Axis::LlcSize => AxisValue::Bytes(parse_size(part).map_err(|e| anyhow!(e))?),
            Axis::LenderCount => AxisValue::Count(parse_number(part, "lender count").map_err(|e| anyhow!(e))?),
            Axis::MpkiTh => {
                let x: f64 = parse_number(part, "mpki threshold").map_err(|e| anyhow!(e))?;
                AxisValue::Real(x)
            }
        };
        if out.contains(&v) {
            bail!("duplicate {} value `{part}`", axis.name());
        }
        out.push(v);
    }
    if out.is_empty() {
        bail!("no values given for {}", axis.name());
    }
    Ok(out)
}

/// Configuration for one point of a sweep.
pub fn expand(manifest: &RunManifest, axis: Axis, value: AxisValue) -> anyhow::Result<SimConfig> {
    let mut m = manifest.clone();
    match (axis, value) {
        (Axis::LlcSize, AxisValue::Bytes(b)) => m.config.sim.llc.size_bytes = b,
        (Axis::MpkiTh, AxisValue::Real(x)) => m.config.sim.predictor.mpki_th = x,
        (Axis::LenderCount, AxisValue::Count(k)) => {
            let candidates = lender_candidates(&m.config.sim, &m.traces);
            if k > candidates.len() {
                bail!("lender_count {k} exceeds the {} cores without traces", candidates.len());
            }
            m.config.idle = IdleSelection::Cores(candidates[..k].to_vec());
            m.config.sim.balancer.idle_cores = CoreMask::from_cores(candidates[..k].iter().copied());
        }
        _ => unreachable!("axis values are parsed per axis"),
    }
    m.resolve().with_context(|| format!("{}={value}", axis.name()))
}

/// Worker count: `L2HSIM_THREADS` if set, otherwise the available parallelism.
pub fn sweep_threads() -> anyhow::Result<usize> {
    match std::env::var("L2HSIM_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| anyhow!("L2HSIM_THREADS must be a positive integer"))?;
            if n == 0 {
                bail!("L2HSIM_THREADS must be a positive integer");
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub struct SweepPoint {
    pub run_id: String,
    pub config: SimConfig,
    pub stats: SimStats,
}

/// Run every configuration on its own worker. Results keep the input order;
/// the first failure aborts the sweep.
pub fn run_sweep(
    points: Vec<(String, SimConfig)>,
    traces: &[(usize, Trace)],
    threads: usize,
) -> anyhow::Result<Vec<SweepPoint>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<anyhow::Result<SimStats>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, points.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, config)) = points.get(i) else { break };
                let r = execute(config, traces, false).map(|o| o.stats).with_context(|| format!("run {id}"));
                let failed = r.is_err();
                results.lock().expect("sweep results")[i] = Some(r);
                if failed {
                    next.store(points.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let results = results.into_inner().expect("sweep results");
    let mut out = Vec::with_capacity(points.len());
    for ((run_id, config), r) in points.into_iter().zip(results) {
        match r {
            Some(Ok(stats)) => out.push(SweepPoint { run_id, config, stats }),
            Some(Err(e)) => return Err(e),
            None => bail!("run {run_id} was skipped after an earlier failure"),
        }
    }
    Ok(out)
}
