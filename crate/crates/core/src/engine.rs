//! The simulated machine.
//!
//! Each core owns an L1 and an L2 with L1 ⊆ L2. The shared LLC is filled
//! only by private L2 victims, so a block lives in exactly one place on
//! chip: one core's private hierarchy, the LLC, or a lender's L2. The snoop
//! filter records that place.
//!
//! Timing is additive: a request pays the hit latency of every level it
//! looks up, plus the remote-L2 or memory latency when it leaves the core.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::balancer::{Balancer, BalancerConfig, ChanceLut, CoreMask, MAX_CORES};
use crate::cache::SnoopFilter;
use crate::cache::{CacheArray, CacheError, CacheGeometry, CacheLevel, CacheLine, GeometryError, Location};
use crate::harvester::{HarvestAction, Harvester, L2Route};
use crate::predictor::{CombinerPath, Perceptron, Predictor, PredictorConfig, PredictorConfigError, BLOOM_TABLES};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
}

/// One trace record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoryAccess {
    pub core: usize,
    pub op: Op,
    pub address: u64,
    pub pc: u64,
    /// Instructions retired since the previous record of this core, at least 1.
    pub icount_delta: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Baseline,
    L2h,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::L2h => "l2h",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub core_count: usize,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub llc: CacheGeometry,
    pub memory_latency: u32,
    pub l2_to_l2_latency: u32,
    pub mode: Mode,
    pub predictor: PredictorConfig,
    pub balancer: BalancerConfig,
    pub seed: u64,
}

fn geometry(size_bytes: u64, associativity: u32, hit_latency: u32) -> CacheGeometry {
    CacheGeometry { size_bytes, associativity, line_bytes: 64, hit_latency }
}

impl SimConfig {
    /// Default machine with `core_count` cores and 2 MB of LLC per core.
    pub fn with_cores(core_count: usize) -> Self {
        Self {
            core_count,
            l1: geometry(48 * 1024, 12, 1),
            l2: geometry(1280 * 1024, 16, 12),
            llc: geometry(core_count as u64 * 2 * 1024 * 1024, 16, 25),
            memory_latency: 200,
            l2_to_l2_latency: 25,
            mode: Mode::L2h,
            predictor: PredictorConfig::default(),
            balancer: BalancerConfig::default(),
            seed: 0,
        }
    }

    /// Baseline when harvesting is off or nobody can lend.
    pub fn effective_mode(&self) -> Mode {
        if self.balancer.idle_cores.is_empty() {
            Mode::Baseline
        } else {
            self.mode
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(1..=MAX_CORES).contains(&self.core_count) {
            return Err(SimError::CoreCount(self.core_count));
        }
        for (level, g) in [(CacheLevel::L1, &self.l1), (CacheLevel::L2, &self.l2), (CacheLevel::Llc, &self.llc)] {
            g.validate().map_err(|e| SimError::Geometry(level, e))?;
        }
        if self.l1.line_bytes != self.l2.line_bytes || self.l2.line_bytes != self.llc.line_bytes {
            return Err(SimError::MixedLineSizes);
        }
        if !self.llc.size_bytes.is_multiple_of(self.core_count as u64 * self.llc.line_bytes as u64) {
            return Err(SimError::LlcNotDivisible);
        }
        self.predictor.validate().map_err(SimError::Predictor)?;
        if self.balancer.mpki_epoch == 0 {
            return Err(SimError::ZeroEpoch);
        }
        let base = self.balancer.chance_base;
        if !(base > 0.0 && base <= 1.0) {
            return Err(SimError::ChanceBase);
        }
        let idle = self.balancer.idle_cores;
        let critical = self.balancer.critical_cores;
        for (mask, what) in [(idle, "idle"), (critical, "critical")] {
            if mask.span() > self.core_count {
                return Err(SimError::MaskOutOfRange { what, core: mask.span() - 1 });
            }
        }
        if idle.intersects(critical) {
            return Err(SimError::CriticalIdleOverlap(CoreMask(idle.0 & critical.0)));
        }
        if self.mode == Mode::Baseline && !idle.is_empty() {
            return Err(SimError::BaselineWithLenders);
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::with_cores(4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    CoreCount(usize),
    Geometry(CacheLevel, GeometryError),
    MixedLineSizes,
    LlcNotDivisible,
    Predictor(PredictorConfigError),
    ZeroEpoch,
    ChanceBase,
    MaskOutOfRange { what: &'static str, core: usize },
    CriticalIdleOverlap(CoreMask),
    BaselineWithLenders,
    CoreOutOfRange { record: u64, core: usize, core_count: usize },
    IdleCoreAccess { record: u64, core: usize },
    ZeroIcount { record: u64 },
    Cache(CacheError),
    TraceMismatch { left: u64, right: u64 },
    Audit(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::CoreCount(n) => write!(f, "core count {n} outside 1..={MAX_CORES}"),
            SimError::Geometry(level, e) => write!(f, "{level}: {e}"),
            SimError::MixedLineSizes => f.write_str("all cache levels must use the same line size"),
            SimError::LlcNotDivisible => f.write_str("LLC size must be a multiple of core count times line size"),
            SimError::Predictor(e) => write!(f, "predictor: {e}"),
            SimError::ZeroEpoch => f.write_str("mpki epoch must be positive"),
            SimError::ChanceBase => f.write_str("chance base must lie in (0, 1]"),
            SimError::MaskOutOfRange { what, core } => {
                write!(f, "{what} core {core} does not exist")
            }
            SimError::CriticalIdleOverlap(m) => {
                write!(f, "cores marked both critical and idle: ")?;
                for (i, c) in m.iter().enumerate() {
                    write!(f, "{}{c}", if i == 0 { "" } else { "," })?;
                }
                Ok(())
            }
            SimError::BaselineWithLenders => f.write_str("baseline mode cannot have idle cores"),
            SimError::CoreOutOfRange { record, core, core_count } => {
                write!(f, "record {record}: core {core} out of range for {core_count} cores")
            }
            SimError::IdleCoreAccess { record, core } => {
                write!(f, "record {record}: core {core} is idle and cannot issue accesses")
            }
            SimError::ZeroIcount { record } => write!(f, "record {record}: icount must be at least 1"),
            SimError::Cache(e) => write!(f, "internal inconsistency: {e}"),
            SimError::TraceMismatch { left, right } => {
                write!(f, "runs used different traces (digest {left:016x} vs {right:016x})")
            }
            SimError::Audit(msg) => write!(f, "audit failed: {msg}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<CacheError> for SimError {
    fn from(e: CacheError) -> Self {
        SimError::Cache(e)
    }
}

/// Traffic classes. Every transfer increments exactly one of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Packet {
    /// LLC to lender L2.
    WriteUp,
    /// Dirty data towards the LLC or memory.
    WritebackDirty,
    /// Clean data from a private L2 into the LLC.
    WritebackClean,
    /// Clean redirected line leaving a lender.
    CleanEvict,
    /// Directory consultation.
    SnoopCheck,
    /// Data delivered to a requester.
    DataResponse,
}

impl Packet {
    pub const ALL: [Packet; 6] = [
        Packet::WriteUp,
        Packet::WritebackDirty,
        Packet::WritebackClean,
        Packet::CleanEvict,
        Packet::SnoopCheck,
        Packet::DataResponse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Packet::WriteUp => "writeup",
            Packet::WritebackDirty => "writeback_dirty",
            Packet::WritebackClean => "writeback_clean",
            Packet::CleanEvict => "clean_evict",
            Packet::SnoopCheck => "snoop_check",
            Packet::DataResponse => "data_response",
        }
    }

    pub fn is_snoop(self) -> bool {
        self == Packet::SnoopCheck
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Transfer endpoints for the event log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Core(usize),
    L2(usize),
    Llc,
    Directory,
    Memory,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Core(c) => write!(f, "core{c}"),
            Endpoint::L2(c) => write!(f, "L2-{c}"),
            Endpoint::Llc => f.write_str("LLC"),
            Endpoint::Directory => f.write_str("directory"),
            Endpoint::Memory => f.write_str("memory"),
        }
    }
}

/// Where a demand request was satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ServedBy {
    L1,
    L2,
    Llc,
    RemoteL2(usize),
    Memory,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    Demand {
        record: u64,
        core: usize,
        op: Op,
        block: u64,
        served_by: ServedBy,
    },
    Transfer {
        packet: Packet,
        block: u64,
        from: Endpoint,
        to: Endpoint,
    },
    Decision {
        block: u64,
        origin: usize,
        critical: bool,
        path: CombinerPath,
        seen: bool,
        mppp_dead: bool,
        alive: bool,
        avg_mpki: f64,
        action: HarvestAction,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Event::Demand { record, core, op, block, served_by } => {
                let op = if op == Op::Read { 'R' } else { 'W' };
                write!(f, "demand record={record} core={core} op={op} block={block:#x} served_by=")?;
                match served_by {
                    ServedBy::L1 => f.write_str("L1"),
                    ServedBy::L2 => f.write_str("L2"),
                    ServedBy::Llc => f.write_str("LLC"),
                    ServedBy::RemoteL2(c) => write!(f, "L2-{c}"),
                    ServedBy::Memory => f.write_str("memory"),
                }
            }
            Event::Transfer { packet, block, from, to } => {
                write!(f, "transfer packet={} block={block:#x} from={from} to={to}", packet.name())
            }
            Event::Decision { block, origin, critical, path, seen, mppp_dead, alive, avg_mpki, action } => {
                let path = match path {
                    CombinerPath::Warming => "warming",
                    CombinerPath::HighLoad => "high_load",
                    CombinerPath::LowLoad => "low_load",
                };
                write!(
                    f,
                    "decision block={block:#x} origin={origin} critical={critical} path={path} \
                     seen={seen} mppp_dead={mppp_dead} alive={alive} avg_mpki={avg_mpki:.3} action="
                )?;
                match action {
                    HarvestAction::WriteUp(c) => write!(f, "writeup:{c}"),
                    HarvestAction::WritebackToMemory => f.write_str("writeback"),
                    HarvestAction::SilentDrop => f.write_str("drop"),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub served_by: ServedBy,
    pub cycles: u64,
}

/// Demand counters for one core.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub accesses: u64,
    pub writes: u64,
    pub instructions: u64,
    pub l1_misses: u64,
    pub l2_misses: u64,
    pub llc_hits: u64,
    pub remote_hits: u64,
    pub memory_fetches: u64,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimStats {
    pub cores: Vec<CoreStats>,
    pub packets: [u64; 6],
    pub sent_up: u64,
    pub sent_up_hit: u64,
    pub sent_up_unused: u64,
    pub memory_writebacks: u64,
    pub dirty_generations: u64,
    /// Dirty blocks still on chip when the stats were taken.
    pub dirty_on_chip: u64,
    /// Per-core L2 MPKI of each completed epoch.
    pub mpki_timeline: Vec<Vec<f64>>,
    /// Order-sensitive hash of every record stepped.
    pub trace_digest: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_fold(mut h: u64, value: u64) -> u64 {
    for b in value.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

impl SimStats {
    fn new(core_count: usize) -> Self {
        Self {
            cores: alloc::vec![CoreStats::default(); core_count],
            packets: [0; 6],
            sent_up: 0,
            sent_up_hit: 0,
            sent_up_unused: 0,
            memory_writebacks: 0,
            dirty_generations: 0,
            dirty_on_chip: 0,
            mpki_timeline: alloc::vec![Vec::new(); core_count],
            trace_digest: FNV_OFFSET,
        }
    }

    fn sum(&self, f: impl Fn(&CoreStats) -> u64) -> u64 {
        self.cores.iter().map(f).sum()
    }

    pub fn accesses(&self) -> u64 {
        self.sum(|c| c.accesses)
    }

    pub fn instructions(&self) -> u64 {
        self.sum(|c| c.instructions)
    }

    pub fn total_cycles(&self) -> u64 {
        self.sum(|c| c.cycles)
    }

    /// Lookups at a level. The LLC level sees every L2 miss.
    pub fn level_accesses(&self, level: CacheLevel) -> u64 {
        match level {
            CacheLevel::L1 => self.accesses(),
            CacheLevel::L2 => self.sum(|c| c.l1_misses),
            CacheLevel::Llc => self.sum(|c| c.l2_misses),
        }
    }

    /// Misses at a level. An LLC miss is a memory fetch; remote L2 hits are
    /// neither LLC hits nor misses.
    pub fn level_misses(&self, level: CacheLevel) -> u64 {
        match level {
            CacheLevel::L1 => self.sum(|c| c.l1_misses),
            CacheLevel::L2 => self.sum(|c| c.l2_misses),
            CacheLevel::Llc => self.sum(|c| c.memory_fetches),
        }
    }

    pub fn remote_hits(&self) -> u64 {
        self.sum(|c| c.remote_hits)
    }

    pub fn mpki(&self, level: CacheLevel) -> f64 {
        let instr = self.instructions();
        if instr == 0 {
            0.0
        } else {
            self.level_misses(level) as f64 * 1000.0 / instr as f64
        }
    }

    pub fn packet(&self, packet: Packet) -> u64 {
        self.packets[packet.index()]
    }

    pub fn total_packets(&self) -> u64 {
        self.packets.iter().sum()
    }

    pub fn data_packets(&self) -> u64 {
        self.total_packets() - self.packet(Packet::SnoopCheck)
    }

    /// Average cycles per access, 0 for an empty run.
    pub fn amat(&self) -> f64 {
        let n = self.accesses();
        if n == 0 {
            0.0
        } else {
            self.total_cycles() as f64 / n as f64
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.sent_up > 0).then(|| self.sent_up_hit as f64 / self.sent_up as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonReport {
    /// Memory fetches of the candidate relative to the reference.
    pub mpki_ratio: f64,
    pub traffic_ratio: f64,
    pub data_traffic_ratio: f64,
    pub snoop_traffic_ratio: f64,
    /// Reference AMAT over candidate AMAT.
    pub amat_speedup: f64,
}

/// Compare a candidate run against a reference run over the same trace.
pub fn compare(reference: &SimStats, candidate: &SimStats) -> Result<ComparisonReport, SimError> {
    if reference.trace_digest != candidate.trace_digest {
        return Err(SimError::TraceMismatch { left: reference.trace_digest, right: candidate.trace_digest });
    }
    let f = |s: &SimStats, g: fn(&SimStats) -> u64| g(s) as f64;
    Ok(ComparisonReport {
        mpki_ratio: ratio(
            f(candidate, |s| s.level_misses(CacheLevel::Llc)),
            f(reference, |s| s.level_misses(CacheLevel::Llc)),
        ),
        traffic_ratio: ratio(f(candidate, SimStats::total_packets), f(reference, SimStats::total_packets)),
        data_traffic_ratio: ratio(f(candidate, SimStats::data_packets), f(reference, SimStats::data_packets)),
        snoop_traffic_ratio: ratio(
            f(candidate, |s| s.packet(Packet::SnoopCheck)),
            f(reference, |s| s.packet(Packet::SnoopCheck)),
        ),
        amat_speedup: ratio(reference.amat(), candidate.amat()),
    })
}

/// Hardware cost of the harvester's added structures, in bytes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageBreakdown {
    pub core_count: usize,
    pub bloom_bytes: u64,
    /// Fixed budget charged for the perceptron predictor.
    pub mppp_reference_bytes: f64,
    /// What the configured perceptron model actually needs.
    pub mppp_model_bytes: u64,
    pub icm_bytes: u64,
    pub ctm_bytes: u64,
    pub lut_bytes: u64,
}

/// KB per the 1024-byte convention used throughout the report.
pub const KIB: f64 = 1024.0;
pub const MPPP_REFERENCE_KB: f64 = 68.63;

impl StorageBreakdown {
    pub fn total_bytes(&self) -> f64 {
        (self.bloom_bytes + self.icm_bytes + self.ctm_bytes + self.lut_bytes) as f64 + self.mppp_reference_bytes
    }

    pub fn total_kb(&self) -> f64 {
        self.total_bytes() / KIB
    }
}

/// Sampler associativity. The automatic setting shadows the LLC plus the
/// lender L2 capacity available per LLC set.
pub fn sampler_ways(config: &SimConfig) -> usize {
    if config.predictor.sampler_ways != 0 {
        return config.predictor.sampler_ways;
    }
    let lent_lines = config.balancer.idle_cores.count() as u64 * config.l2.lines();
    (config.llc.associativity as u64 + lent_lines.div_ceil(config.llc.sets())) as usize
}

pub fn storage_report(config: &SimConfig) -> StorageBreakdown {
    let p = &config.predictor;
    let ways = sampler_ways(config);
    let llc_sets = config.llc.sets() as usize;
    let map_bytes = (config.core_count as u64).div_ceil(8);
    StorageBreakdown {
        core_count: config.core_count,
        bloom_bytes: BLOOM_TABLES as u64 * (p.bloom_table_bits.max(64).next_power_of_two() as u64) / 8,
        mppp_reference_bytes: MPPP_REFERENCE_KB * KIB,
        mppp_model_bytes: Perceptron::storage_for(p.features.len(), p.sampler_sets.min(llc_sets), ways),
        icm_bytes: map_bytes,
        ctm_bytes: map_bytes,
        lut_bytes: ChanceLut::storage_bytes(),
    }
}

/// The whole simulated chip.
#[derive(Clone, Debug)]
pub struct Machine {
    config: SimConfig,
    l1: Vec<CacheArray>,
    l2: Vec<CacheArray>,
    llc: CacheArray,
    snoop: SnoopFilter,
    harvester: Harvester,
    /// Last core to pull each block into its private hierarchy.
    owner: BTreeMap<u64, usize>,
    stats: SimStats,
    events: Option<Vec<Event>>,
    records: u64,
}

impl Machine {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.core_count;
        let array = |level, g: CacheGeometry| CacheArray::new(level, g).map_err(|e| SimError::Geometry(level, e));
        let l1 = (0..n).map(|_| array(CacheLevel::L1, config.l1)).collect::<Result<Vec<_>, _>>()?;
        let l2 = (0..n).map(|_| array(CacheLevel::L2, config.l2)).collect::<Result<Vec<_>, _>>()?;
        let llc = array(CacheLevel::Llc, config.llc)?;
        let root = SplitMix64::new(config.seed);
        let predictor =
            Predictor::new(&config.predictor, config.llc.sets() as usize, sampler_ways(&config), &root.fork(1))
                .map_err(SimError::Predictor)?;
        let balancer = Balancer::new(&config.balancer, n, root.fork(2));
        let harvester = Harvester::new(config.mode == Mode::L2h, predictor, balancer);
        Ok(Self {
            stats: SimStats::new(n),
            config,
            l1,
            l2,
            llc,
            snoop: SnoopFilter::new(),
            harvester,
            owner: BTreeMap::new(),
            events: None,
            records: 0,
        })
    }

    /// Start recording an event log from now on.
    pub fn record_events(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[Event] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.events.as_mut().map(core::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn harvester(&self) -> &Harvester {
        &self.harvester
    }

    pub fn harvester_mut(&mut self) -> &mut Harvester {
        &mut self.harvester
    }

    pub fn snoop_filter(&self) -> &SnoopFilter {
        &self.snoop
    }

    pub fn l1(&self, core: usize) -> &CacheArray {
        &self.l1[core]
    }

    pub fn l2(&self, core: usize) -> &CacheArray {
        &self.l2[core]
    }

    pub fn llc(&self) -> &CacheArray {
        &self.llc
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Statistics so far, including end-of-run derived counters.
    pub fn stats(&self) -> SimStats {
        let mut s = self.stats.clone();
        let ledger = self.harvester.ledger();
        s.sent_up = ledger.sent_up_total();
        s.sent_up_hit = ledger.sent_up_hit();
        s.sent_up_unused = ledger.sent_up_unused();
        s.dirty_on_chip = self.dirty_on_chip();
        let monitor = self.harvester.balancer().monitor();
        s.mpki_timeline = (0..self.config.core_count).map(|c| monitor.timeline(c).to_vec()).collect();
        s
    }

    fn dirty_on_chip(&self) -> u64 {
        let mut n = self.llc.lines().filter(|l| l.dirty).count() as u64;
        for c in 0..self.config.core_count {
            n += self.l2[c]
                .lines()
                .filter(|l| l.dirty || self.l1[c].probe(l.block_addr).is_some_and(|x| x.dirty))
                .count() as u64;
        }
        n
    }

    fn log(&mut self, event: Event) {
        if let Some(events) = &mut self.events {
            events.push(event);
        }
    }

    fn transfer(&mut self, packet: Packet, block: u64, from: Endpoint, to: Endpoint) {
        self.stats.packets[packet.index()] += 1;
        self.log(Event::Transfer { packet, block, from, to });
    }

    /// Simulate one access.
    pub fn step(&mut self, access: &MemoryAccess) -> Result<AccessOutcome, SimError> {
        let record = self.records;
        let core = access.core;
        if core >= self.config.core_count {
            return Err(SimError::CoreOutOfRange { record, core, core_count: self.config.core_count });
        }
        if self.config.balancer.idle_cores.contains(core) {
            return Err(SimError::IdleCoreAccess { record, core });
        }
        if access.icount_delta == 0 {
            return Err(SimError::ZeroIcount { record });
        }
        self.records += 1;
        let mut digest = self.stats.trace_digest;
        for v in [core as u64, (access.op == Op::Write) as u64, access.address, access.pc, access.icount_delta as u64] {
            digest = fnv_fold(digest, v);
        }
        self.stats.trace_digest = digest;

        let block = self.config.l1.block_of(access.address);
        let write = access.op == Op::Write;
        let lat_l1 = self.config.l1.hit_latency as u64;
        let lat_l2 = self.config.l2.hit_latency as u64;
        let lat_llc = self.config.llc.hit_latency as u64;

        {
            let cs = &mut self.stats.cores[core];
            cs.accesses += 1;
            cs.writes += write as u64;
            cs.instructions += access.icount_delta as u64;
        }

        let (served_by, cycles) = if self.l1[core].access(block).is_hit() {
            self.harvester.balancer_mut().monitor_mut().record_access(core, false, access.icount_delta as u64);
            (ServedBy::L1, lat_l1)
        } else if self.l2[core].access(block).is_hit() {
            self.stats.cores[core].l1_misses += 1;
            self.harvester.balancer_mut().monitor_mut().record_access(core, false, access.icount_delta as u64);
            self.l2[core].clear_redirected(block);
            self.fill_l1(core, block)?;
            (ServedBy::L2, lat_l1 + lat_l2)
        } else {
            {
                let cs = &mut self.stats.cores[core];
                cs.l1_misses += 1;
                cs.l2_misses += 1;
            }
            self.harvester.balancer_mut().monitor_mut().record_access(core, true, access.icount_delta as u64);
            self.owner.insert(block, core);
            let llc_set = self.config.llc.set_index(block);
            let (dirty, served_by, cycles, from) = match self.snoop.lookup(block) {
                Location::L1(other) | Location::L2(other) => {
                    let harvested = self.evict_private(other, block);
                    let line = harvested.expect("directory points at a private copy");
                    if line.redirected {
                        self.harvester.on_remote_l2_hit(block);
                    }
                    self.harvester.predictor_mut().on_llc_reference(llc_set, block, access.pc, false);
                    self.stats.cores[core].remote_hits += 1;
                    let cycles = lat_l1 + lat_l2 + self.config.l2_to_l2_latency as u64;
                    (line.dirty, ServedBy::RemoteL2(other), cycles, Endpoint::L2(other))
                }
                Location::Llc => {
                    let line = self.llc.invalidate(block).expect("directory points at the LLC");
                    self.harvester.predictor_mut().on_llc_reference(llc_set, block, access.pc, false);
                    self.stats.cores[core].llc_hits += 1;
                    (line.dirty, ServedBy::Llc, lat_l1 + lat_l2 + lat_llc, Endpoint::Llc)
                }
                Location::OffChip => {
                    self.harvester.predictor_mut().on_llc_reference(llc_set, block, access.pc, true);
                    self.stats.cores[core].memory_fetches += 1;
                    let cycles = lat_l1 + lat_l2 + lat_llc + self.config.memory_latency as u64;
                    (false, ServedBy::Memory, cycles, Endpoint::Memory)
                }
            };
            self.transfer(Packet::DataResponse, block, from, Endpoint::Core(core));
            self.snoop.update(block, Location::L2(core));
            if let Some(victim) = self.l2[core].fill(block, dirty, false)? {
                self.evict_l2_victim(core, victim)?;
            }
            self.fill_l1(core, block)?;
            (served_by, cycles)
        };

        if write {
            let l2_dirty = self.l2[core].probe(block).is_some_and(|l| l.dirty);
            let was_dirty = self.l1[core].probe(block).is_some_and(|l| l.dirty) || l2_dirty;
            if !was_dirty {
                self.stats.dirty_generations += 1;
            }
            self.l1[core].mark_dirty(block);
        }
        self.stats.cores[core].cycles += cycles;
        self.log(Event::Demand { record, core, op: access.op, block, served_by });
        Ok(AccessOutcome { served_by, cycles })
    }

    /// Bring a block that is in `core`'s L2 into its L1.
    fn fill_l1(&mut self, core: usize, block: u64) -> Result<(), SimError> {
        if let Some(victim) = self.l1[core].fill(block, false, false)? {
            if victim.dirty {
                self.l2[core].mark_dirty(victim.block_addr);
            }
            self.snoop.update(victim.block_addr, Location::L2(core));
        }
        self.snoop.update(block, Location::L1(core));
        Ok(())
    }

    /// Pull a block out of `core`'s private hierarchy, merging L1 dirtiness.
    fn evict_private(&mut self, core: usize, block: u64) -> Option<CacheLine> {
        let l1 = self.l1[core].invalidate(block);
        let mut line = self.l2[core].invalidate(block)?;
        line.dirty |= l1.is_some_and(|l| l.dirty);
        Some(line)
    }

    fn evict_l2_victim(&mut self, core: usize, mut victim: CacheLine) -> Result<(), SimError> {
        if let Some(l1) = self.l1[core].invalidate(victim.block_addr) {
            victim.dirty |= l1.dirty;
        }
        let block = victim.block_addr;
        self.transfer(Packet::SnoopCheck, block, Endpoint::L2(core), Endpoint::Directory);
        match self.harvester.on_l2_eviction(&victim) {
            L2Route::Llc => {
                let packet = if victim.dirty { Packet::WritebackDirty } else { Packet::WritebackClean };
                self.transfer(packet, block, Endpoint::L2(core), Endpoint::Llc);
                self.snoop.update(block, Location::Llc);
                if let Some(llc_victim) = self.llc.fill(block, victim.dirty, false)? {
                    self.evict_llc_victim(llc_victim)?;
                }
            }
            L2Route::Bypass { dirty, .. } => {
                if dirty {
                    self.transfer(Packet::WritebackDirty, block, Endpoint::L2(core), Endpoint::Memory);
                    self.stats.memory_writebacks += 1;
                } else {
                    self.transfer(Packet::CleanEvict, block, Endpoint::L2(core), Endpoint::Memory);
                }
                self.snoop.update(block, Location::OffChip);
            }
        }
        Ok(())
    }

    fn evict_llc_victim(&mut self, victim: CacheLine) -> Result<(), SimError> {
        let block = victim.block_addr;
        let origin = self.owner.get(&block).copied().unwrap_or(0);
        let outcome = self.harvester.on_llc_eviction(block, victim.dirty, origin);
        if let Some(v) = outcome.verdict {
            self.log(Event::Decision {
                block,
                origin,
                critical: outcome.critical,
                path: v.inputs.path(),
                seen: v.inputs.seen,
                mppp_dead: v.inputs.mppp_dead,
                alive: v.alive,
                avg_mpki: outcome.avg_critical_mpki,
                action: outcome.action,
            });
        }
        match outcome.action {
            HarvestAction::WriteUp(lender) => {
                self.transfer(Packet::SnoopCheck, block, Endpoint::Llc, Endpoint::Directory);
                self.transfer(Packet::WriteUp, block, Endpoint::Llc, Endpoint::L2(lender));
                self.snoop.update(block, Location::L2(lender));
                if let Some(displaced) = self.l2[lender].fill(block, victim.dirty, true)? {
                    self.evict_l2_victim(lender, displaced)?;
                }
            }
            HarvestAction::WritebackToMemory => {
                self.transfer(Packet::WritebackDirty, block, Endpoint::Llc, Endpoint::Memory);
                self.stats.memory_writebacks += 1;
                self.snoop.update(block, Location::OffChip);
            }
            HarvestAction::SilentDrop => self.snoop.update(block, Location::OffChip),
        }
        Ok(())
    }

    /// Full consistency check between the arrays and the directory.
    pub fn audit(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Audit(msg));
        let mut on_chip = 0usize;
        for c in 0..self.config.core_count {
            for (arr, name) in [(&self.l1[c], "L1"), (&self.l2[c], "L2")] {
                if let Err(e) = arr.check_invariants() {
                    return fail(alloc::format!("{name}-{c}: {e}"));
                }
            }
            for line in self.l1[c].lines() {
                if !self.l2[c].contains(line.block_addr) {
                    return fail(alloc::format!("block {:#x} in L1-{c} but not L2-{c}", line.block_addr));
                }
                if self.snoop.lookup(line.block_addr) != Location::L1(c) {
                    return fail(alloc::format!("block {:#x} in L1-{c}, directory disagrees", line.block_addr));
                }
            }
            for line in self.l2[c].lines() {
                on_chip += 1;
                let expect = if self.l1[c].contains(line.block_addr) { Location::L1(c) } else { Location::L2(c) };
                if self.snoop.lookup(line.block_addr) != expect {
                    return fail(alloc::format!("block {:#x} in L2-{c}, directory disagrees", line.block_addr));
                }
                if line.redirected {
                    if !self.config.balancer.idle_cores.contains(c) {
                        return fail(alloc::format!("redirected block {:#x} in non-lender L2-{c}", line.block_addr));
                    }
                    if self.l1[c].contains(line.block_addr) {
                        return fail(alloc::format!("redirected block {:#x} reached L1-{c}", line.block_addr));
                    }
                }
            }
        }
        if let Err(e) = self.llc.check_invariants() {
            return fail(alloc::format!("LLC: {e}"));
        }
        for line in self.llc.lines() {
            on_chip += 1;
            if self.snoop.lookup(line.block_addr) != Location::Llc {
                return fail(alloc::format!("block {:#x} in LLC, directory disagrees", line.block_addr));
            }
        }
        if on_chip != self.snoop.len() {
            return fail(alloc::format!("{} directory entries for {on_chip} resident blocks", self.snoop.len()));
        }
        Ok(())
    }
}

/// Record-by-record round robin over per-core streams.
pub fn interleave<'a>(streams: &'a [&'a [MemoryAccess]]) -> impl Iterator<Item = &'a MemoryAccess> + 'a {
    let longest = streams.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..longest).flat_map(move |i| streams.iter().filter_map(move |s| s.get(i)))
}

/// Run whole traces to completion.
pub fn run(config: SimConfig, streams: &[&[MemoryAccess]]) -> Result<SimStats, SimError> {
    let mut machine = Machine::new(config)?;
    for access in interleave(streams) {
        machine.step(access)?;
    }
    Ok(machine.stats())
}
