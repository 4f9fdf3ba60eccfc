//! Deterministic synthetic workloads.
//!
//! Each core gets its own 1 TB address window starting at `core << 40`, so
//! streams never alias across cores. All addresses are line aligned.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{MemoryAccess, Op};
use crate::rng::SplitMix64;
use crate::LINE_BYTES;

pub const WINDOW_SHIFT: u32 = 40;

#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadKind {
    /// Sequential addresses, never revisited.
    Streaming,
    /// Repeated sequential sweeps over the footprint.
    WorkingSetLoop,
    /// Line popularity proportional to `rank^-s`.
    Zipfian,
    /// One child workload per core, each on its own core.
    Mix(Vec<WorkloadSpec>),
}

impl WorkloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::Streaming => "streaming",
            WorkloadKind::WorkingSetLoop => "loop",
            WorkloadKind::Zipfian => "zipfian",
            WorkloadKind::Mix(_) => "mix",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadParams {
    pub footprint_bytes: u64,
    pub access_count: u64,
    pub zipf_s: f64,
    pub pc_pool_size: u32,
    pub stride: u64,
    pub icount_min: u32,
    pub icount_max: u32,
    /// Fraction of records that are writes.
    pub write_ratio: f64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            footprint_bytes: 1 << 20,
            access_count: 16_384,
            zipf_s: 1.0,
            pc_pool_size: 16,
            stride: LINE_BYTES as u64,
            icount_min: 1,
            icount_max: 8,
            write_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub params: WorkloadParams,
    pub core: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, params: WorkloadParams, core: usize, seed: u64) -> Self {
        Self { kind, params, core, seed }
    }
}

/// The records one core issues.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreTrace {
    pub core: usize,
    pub accesses: Vec<MemoryAccess>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceGenError {
    FootprintTooSmall(u64),
    FootprintTooLarge(u64),
    ZeroAccesses,
    BadStride(u64),
    StreamTooLong { needed: u64, footprint: u64 },
    EmptyPcPool,
    BadIcountRange(u32, u32),
    BadWriteRatio(f64),
    BadZipfExponent(f64),
    CoreOutOfRange(usize),
    EmptyMix,
    NestedMix,
    DuplicateCore(usize),
}

impl fmt::Display for TraceGenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FootprintTooSmall(b) => write!(f, "footprint {b} B is smaller than one line"),
            Self::FootprintTooLarge(b) => write!(f, "footprint {b} B exceeds the 1 TB per-core window"),
            Self::ZeroAccesses => f.write_str("access count must be positive"),
            Self::BadStride(s) => write!(f, "stride {s} must be a positive multiple of {LINE_BYTES}"),
            Self::StreamTooLong { needed, footprint } => {
                write!(f, "streaming needs {needed} B of address space but the footprint is {footprint} B")
            }
            Self::EmptyPcPool => f.write_str("pc pool must hold at least one call site"),
            Self::BadIcountRange(lo, hi) => write!(f, "icount range {lo}..={hi} must satisfy 1 <= min <= max"),
            Self::BadWriteRatio(r) => write!(f, "write ratio {r} must lie in [0, 1]"),
            Self::BadZipfExponent(s) => write!(f, "zipf exponent {s} must be finite and non-negative"),
            Self::CoreOutOfRange(c) => write!(f, "core {c} is out of range"),
            Self::EmptyMix => f.write_str("mix needs at least one child workload"),
            Self::NestedMix => f.write_str("mix children cannot be mixes"),
            Self::DuplicateCore(c) => write!(f, "two mix children are bound to core {c}"),
        }
    }
}

impl core::error::Error for TraceGenError {}

fn validate(spec: &WorkloadSpec) -> Result<(), TraceGenError> {
    let p = &spec.params;
    if spec.core >= crate::balancer::MAX_CORES {
        return Err(TraceGenError::CoreOutOfRange(spec.core));
    }
    if p.footprint_bytes < LINE_BYTES as u64 {
        return Err(TraceGenError::FootprintTooSmall(p.footprint_bytes));
    }
    if p.footprint_bytes > 1 << WINDOW_SHIFT {
        return Err(TraceGenError::FootprintTooLarge(p.footprint_bytes));
    }
    if p.access_count == 0 {
        return Err(TraceGenError::ZeroAccesses);
    }
    if p.stride == 0 || !p.stride.is_multiple_of(LINE_BYTES as u64) {
        return Err(TraceGenError::BadStride(p.stride));
    }
    if p.pc_pool_size == 0 {
        return Err(TraceGenError::EmptyPcPool);
    }
    if p.icount_min == 0 || p.icount_min > p.icount_max {
        return Err(TraceGenError::BadIcountRange(p.icount_min, p.icount_max));
    }
    if !(0.0..=1.0).contains(&p.write_ratio) {
        return Err(TraceGenError::BadWriteRatio(p.write_ratio));
    }
    if !(p.zipf_s.is_finite() && p.zipf_s >= 0.0) {
        return Err(TraceGenError::BadZipfExponent(p.zipf_s));
    }
    if spec.kind == WorkloadKind::Streaming {
        let needed = p.access_count.saturating_mul(p.stride);
        if needed > p.footprint_bytes {
            return Err(TraceGenError::StreamTooLong { needed, footprint: p.footprint_bytes });
        }
    }
    Ok(())
}

/// Cumulative popularity of `lines` ranks under exponent `s`.
fn zipf_cdf(lines: u64, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    (1..=lines)
        .map(|rank| {
            acc += libm::pow(rank as f64, -s);
            acc
        })
        .collect()
}

fn generate_one(spec: &WorkloadSpec) -> CoreTrace {
    let p = &spec.params;
    let mut rng = SplitMix64::new(spec.seed).fork(spec.core as u64);
    let base = (spec.core as u64) << WINDOW_SHIFT;
    let pc_base = 0x40_0000 + ((spec.core as u64) << 32);
    let lines = p.footprint_bytes / p.stride;
    let cdf = match spec.kind {
        WorkloadKind::Zipfian => zipf_cdf(lines, p.zipf_s),
        _ => Vec::new(),
    };
    let span = (p.icount_max - p.icount_min) as u64 + 1;
    let accesses = (0..p.access_count)
        .map(|i| {
            let line = match spec.kind {
                WorkloadKind::Streaming => i,
                WorkloadKind::WorkingSetLoop => i % lines,
                WorkloadKind::Zipfian => {
                    let target = rng.next_f64() * cdf[cdf.len() - 1];
                    (cdf.partition_point(|&c| c <= target) as u64).min(lines - 1)
                }
                WorkloadKind::Mix(_) => unreachable!("mixes are expanded by the caller"),
            };
            let pc = pc_base + 4 * rng.below(p.pc_pool_size as u64);
            let icount_delta = p.icount_min + rng.below(span) as u32;
            let op = if p.write_ratio > 0.0 && rng.next_f64() < p.write_ratio { Op::Write } else { Op::Read };
            MemoryAccess { core: spec.core, op, address: base + line * p.stride, pc, icount_delta }
        })
        .collect();
    CoreTrace { core: spec.core, accesses }
}

/// Expand a workload into per-core traces, sorted by core.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<CoreTrace>, TraceGenError> {
    match &spec.kind {
        WorkloadKind::Mix(children) => {
            if children.is_empty() {
                return Err(TraceGenError::EmptyMix);
            }
            let mut cores = crate::balancer::CoreMask::EMPTY;
            for child in children {
                if matches!(child.kind, WorkloadKind::Mix(_)) {
                    return Err(TraceGenError::NestedMix);
                }
                validate(child)?;
                if cores.contains(child.core) {
                    return Err(TraceGenError::DuplicateCore(child.core));
                }
                cores.insert(child.core);
            }
            let mut out: Vec<CoreTrace> = children.iter().map(generate_one).collect();
            out.sort_by_key(|t| t.core);
            Ok(out)
        }
        _ => {
            validate(spec)?;
            Ok(alloc::vec![generate_one(spec)])
        }
    }
}

/// Named workloads used for regression and equivalence runs on the
/// default machine.
pub fn bundled_suite() -> Vec<(String, WorkloadSpec)> {
    let p = WorkloadParams::default();
    let mb = 1u64 << 20;
    let spec = |kind, params, core| WorkloadSpec::new(kind, params, core, 0x5EED);
    let mut suite = alloc::vec![
        (
            "stream",
            spec(WorkloadKind::Streaming, WorkloadParams { footprint_bytes: 64 * mb, access_count: 200_000, ..p }, 0),
        ),
        (
            "loop_fits",
            spec(
                WorkloadKind::WorkingSetLoop,
                WorkloadParams { footprint_bytes: 6 * mb, access_count: 300_000, ..p },
                0
            ),
        ),
        (
            "loop_thrash",
            spec(
                WorkloadKind::WorkingSetLoop,
                WorkloadParams { footprint_bytes: 10 * mb, access_count: 400_000, ..p },
                0
            ),
        ),
        (
            "zipf_hot",
            spec(
                WorkloadKind::Zipfian,
                WorkloadParams { footprint_bytes: 16 * mb, access_count: 200_000, zipf_s: 0.9, write_ratio: 0.2, ..p },
                0,
            ),
        ),
    ];
    let children = alloc::vec![
        spec(WorkloadKind::WorkingSetLoop, WorkloadParams { footprint_bytes: 9 * mb, access_count: 150_000, ..p }, 0),
        spec(
            WorkloadKind::Zipfian,
            WorkloadParams { footprint_bytes: 8 * mb, access_count: 150_000, zipf_s: 0.8, write_ratio: 0.3, ..p },
            1,
        ),
        spec(WorkloadKind::Streaming, WorkloadParams { footprint_bytes: 32 * mb, access_count: 150_000, ..p }, 2),
    ];
    suite.push(("mix3", spec(WorkloadKind::Mix(children), p, 0)));
    suite.into_iter().map(|(n, s)| (String::from(n), s)).collect()
}
