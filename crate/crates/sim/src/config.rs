//! Run configuration files.
//!
//! ```text
//! cores = 4
//! mode = l2h                  # or baseline
//! seed = 1
//! memory_latency = 200
//! l2_to_l2_latency = 25
//!
//! [cache.l2]
//! size = 1.25MB
//! ways = 16
//! latency = 12
//!
//! [l2h]
//! warmup_th = 256
//! features = bias(6,0); addr(9,12,29,0)
//!
//! [balancer]
//! critical_cores = 0
//! idle_cores = auto           # or a core list
//! ```
//!
//! The LLC defaults to 2 MB per core. Unknown sections and keys are errors.

use std::path::Path;

use l2h_core::balancer::CoreMask;
use l2h_core::predictor::FeatureSpec;
use l2h_core::{CacheGeometry, Mode, SimConfig};

use crate::kv::{parse_core_list, parse_number, parse_size, Document, KvError};

/// How the idle core map is populated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdleSelection {
    /// Every core without a trace that is not critical.
    Auto,
    Cores(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub idle: IdleSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), idle: IdleSelection::Auto }
    }
}

fn mask_of(cores: &[usize], core_count: usize, what: &str) -> Result<CoreMask, String> {
    if let Some(&c) = cores.iter().find(|&&c| c >= core_count) {
        return Err(format!("{what} core {c} does not exist on a {core_count}-core machine"));
    }
    Ok(CoreMask::from_cores(cores.iter().copied()))
}

fn apply_cache(g: &mut CacheGeometry, key: &str, value: &str) -> Result<bool, String> {
    match key {
        "size" => g.size_bytes = parse_size(value)?,
        "ways" => g.associativity = parse_number(value, "associativity")?,
        "line" => g.line_bytes = parse_size(value)? as u32,
        "latency" => g.hit_latency = parse_number(value, "latency")?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn parse_features(value: &str) -> Result<Vec<FeatureSpec>, String> {
    if value.trim() == "default" {
        return Ok(l2h_core::predictor::default_features());
    }
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| FeatureSpec::parse(s).map_err(|e| e.to_string()))
        .collect()
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self, KvError> {
        let doc = Document::parse(path, text)?;
        let root = &doc.sections[0];
        let cores = match root.entries.iter().find(|e| e.key == "cores") {
            Some(e) => {
                let n: usize = parse_number(&e.value, "core count").map_err(|m| doc.error(e.line, m))?;
                if !(1..=l2h_core::balancer::MAX_CORES).contains(&n) {
                    return Err(doc.error(e.line, format!("core count {n} outside 1..=128")));
                }
                n
            }
            None => 4,
        };
        let mut sim = SimConfig::with_cores(cores);
        let mut idle = IdleSelection::Auto;
        let mut critical: Vec<usize> = Vec::new();
        let mut idle_line = 0;
        for section in &doc.sections {
            for e in &section.entries {
                let fail = |m: String| doc.error(e.line, m);
                let v = e.value.as_str();
                let known = match (section.name.as_str(), e.key.as_str()) {
                    ("", "cores") => true,
                    ("", "mode") => {
                        sim.mode = match v {
                            "baseline" => Mode::Baseline,
                            "l2h" => Mode::L2h,
                            other => return Err(fail(format!("unknown mode `{other}`"))),
                        };
                        true
                    }
                    ("", "seed") => {
                        sim.seed = parse_number(v, "seed").map_err(fail)?;
                        true
                    }
                    ("", "memory_latency") => {
                        sim.memory_latency = parse_number(v, "latency").map_err(fail)?;
                        true
                    }
                    ("", "l2_to_l2_latency") => {
                        sim.l2_to_l2_latency = parse_number(v, "latency").map_err(fail)?;
                        true
                    }
                    ("cache.l1", k) => apply_cache(&mut sim.l1, k, v).map_err(fail)?,
                    ("cache.l2", k) => apply_cache(&mut sim.l2, k, v).map_err(fail)?,
                    ("cache.llc", k) => apply_cache(&mut sim.llc, k, v).map_err(fail)?,
                    ("l2h", k) => {
                        let p = &mut sim.predictor;
                        match k {
                            "warmup_th" => p.warmup_th = parse_number(v, "warmup threshold").map_err(fail)?,
                            "bloom_table_bits" => p.bloom_table_bits = parse_number(v, "table size").map_err(fail)?,
                            "bloom_reset_interval" => {
                                p.bloom_reset_interval = parse_number(v, "reset interval").map_err(fail)?
                            }
                            "dead_threshold" => p.dead_threshold = parse_number(v, "threshold").map_err(fail)?,
                            "sampler_sets" => p.sampler_sets = parse_number(v, "set count").map_err(fail)?,
                            "sampler_ways" => p.sampler_ways = parse_number(v, "way count").map_err(fail)?,
                            "features" => p.features = parse_features(v).map_err(fail)?,
                            _ => return Err(fail(format!("unknown key `{k}` in [l2h]"))),
                        }
                        true
                    }
                    ("balancer", "critical_cores") => {
                        critical = parse_core_list(v).map_err(fail)?;
                        true
                    }
                    ("balancer", "idle_cores") => {
                        idle = if v == "auto" {
                            IdleSelection::Auto
                        } else {
                            IdleSelection::Cores(parse_core_list(v).map_err(fail)?)
                        };
                        idle_line = e.line;
                        true
                    }
                    ("balancer", "mpki_epoch") => {
                        sim.balancer.mpki_epoch = parse_number(v, "epoch length").map_err(fail)?;
                        true
                    }
                    ("balancer", "mpki_th") => {
                        sim.predictor.mpki_th = parse_number(v, "mpki threshold").map_err(fail)?;
                        true
                    }
                    ("balancer", "chance_base") => {
                        sim.balancer.chance_base = parse_number(v, "chance base").map_err(fail)?;
                        true
                    }
                    (s @ ("" | "balancer"), k) => {
                        let where_ = if s.is_empty() { String::from("top level") } else { format!("[{s}]") };
                        return Err(fail(format!("unknown key `{k}` in {where_}")));
                    }
                    (s, _) => {
                        return Err(doc.error(section.line, format!("unknown section [{s}]")));
                    }
                };
                if !known {
                    return Err(fail(format!("unknown key `{}` in [{}]", e.key, section.name)));
                }
            }
        }
        sim.balancer.critical_cores = mask_of(&critical, cores, "critical").map_err(|m| doc.error(0, m))?;
        if let IdleSelection::Cores(list) = &idle {
            sim.balancer.idle_cores = mask_of(list, cores, "idle").map_err(|m| doc.error(idle_line, m))?;
        }
        Ok(Self { sim, idle })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Self::parse(path, &text)?)
    }
}
