//! Destination choice for live LLC evictions.
//!
//! Critical applications always get a lender when one exists. Everything
//! else is sent up with a probability that decays exponentially in the
//! average L2 MPKI of the critical cores, so background work only borrows
//! capacity while the critical tenants are not under pressure.

use alloc::vec::Vec;
use core::fmt;

use crate::rng::SplitMix64;

/// Largest machine the 128-bit core masks can describe.
pub const MAX_CORES: usize = 128;
pub const CHANCE_ENTRIES: usize = 100;

/// One bit per core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CoreMask(pub u128);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskParseError {
    BadDigit(char),
    TooLong(usize),
}

impl fmt::Display for MaskParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskParseError::BadDigit(c) => write!(f, "core mask digit `{c}` is not 0 or 1"),
            MaskParseError::TooLong(n) => write!(f, "core mask has {n} digits, at most {MAX_CORES}"),
        }
    }
}

impl core::error::Error for MaskParseError {}

impl CoreMask {
    pub const EMPTY: CoreMask = CoreMask(0);

    pub fn from_cores<I: IntoIterator<Item = usize>>(cores: I) -> Self {
        let mut m = Self::EMPTY;
        for c in cores {
            m.insert(c);
        }
        m
    }

    /// Parse a bit string written most significant core first: `0010` is core 1.
    pub fn parse_msb_first(bits: &str) -> Result<Self, MaskParseError> {
        if bits.len() > MAX_CORES {
            return Err(MaskParseError::TooLong(bits.len()));
        }
        let mut value = 0u128;
        for ch in bits.chars() {
            value = (value << 1)
                | match ch {
                    '0' => 0,
                    '1' => 1,
                    other => return Err(MaskParseError::BadDigit(other)),
                };
        }
        Ok(CoreMask(value))
    }

    /// `core` must be below [`MAX_CORES`].
    pub fn insert(&mut self, core: usize) {
        self.0 |= 1u128 << core;
    }

    pub fn remove(&mut self, core: usize) {
        self.0 &= !(1u128 << core);
    }

    pub fn contains(&self, core: usize) -> bool {
        core < MAX_CORES && self.0 >> core & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn intersects(&self, other: CoreMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MAX_CORES).filter(move |&c| self.contains(c))
    }

    /// Highest set core index plus one.
    pub fn span(&self) -> usize {
        MAX_CORES - self.0.leading_zeros() as usize
    }
}

/// Cores whose L2 can be lent, scanned round robin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdleCoreMap {
    mask: CoreMask,
    cursor: usize,
    core_count: usize,
}

impl IdleCoreMap {
    /// `core_count` must be in `1..=MAX_CORES`.
    pub fn new(mask: CoreMask, core_count: usize) -> Self {
        assert!((1..=MAX_CORES).contains(&core_count));
        Self { mask, cursor: 0, core_count }
    }

    pub fn mask(&self) -> CoreMask {
        self.mask
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn set_cursor(&mut self, cursor: usize) {
        self.cursor = cursor % self.core_count;
    }

    /// Next idle core from the cursor, wrapping, without moving the cursor.
    pub fn peek(&self) -> Option<usize> {
        (0..self.core_count).map(|i| (self.cursor + i) % self.core_count).find(|&c| self.mask.contains(c))
    }

    /// Move the cursor past `core`.
    pub fn commit(&mut self, core: usize) {
        self.cursor = (core + 1) % self.core_count;
    }

    pub fn select(&mut self) -> Option<usize> {
        let core = self.peek()?;
        self.commit(core);
        Some(core)
    }
}

/// Cores running critical (latency-sensitive) applications.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CriticalTaskMap {
    mask: CoreMask,
}

impl CriticalTaskMap {
    pub fn new(mask: CoreMask) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> CoreMask {
        self.mask
    }

    pub fn is_critical(&self, core: usize) -> bool {
        self.mask.contains(core)
    }

    /// Number of critical applications. Tracked for reporting only.
    pub fn critical_count(&self) -> u32 {
        self.mask.count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct CoreCounters {
    misses: u64,
    instructions: u64,
    last_epoch_mpki: Option<f64>,
    timeline: Vec<f64>,
}

impl CoreCounters {
    fn current(&self) -> f64 {
        match self.last_epoch_mpki {
            Some(m) => m,
            None if self.instructions == 0 => 0.0,
            None => self.misses as f64 * 1000.0 / self.instructions as f64,
        }
    }
}

/// Per-core L2 misses per kilo-instruction, measured over fixed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct MpkiMonitor {
    cores: Vec<CoreCounters>,
    epoch_instructions: u64,
}

impl MpkiMonitor {
    /// `epoch_instructions` must be positive.
    pub fn new(core_count: usize, epoch_instructions: u64) -> Self {
        assert!(epoch_instructions > 0);
        Self { cores: alloc::vec![CoreCounters::default(); core_count], epoch_instructions }
    }

    pub fn epoch_instructions(&self) -> u64 {
        self.epoch_instructions
    }

    pub fn record_access(&mut self, core: usize, was_l2_miss: bool, icount_delta: u64) {
        let c = &mut self.cores[core];
        c.misses += was_l2_miss as u64;
        c.instructions += icount_delta;
        if c.instructions >= self.epoch_instructions {
            let mpki = c.misses as f64 * 1000.0 / c.instructions as f64;
            c.last_epoch_mpki = Some(mpki);
            c.timeline.push(mpki);
            c.misses = 0;
            c.instructions = 0;
        }
    }

    /// MPKI of the last completed epoch.
    pub fn last_epoch_mpki(&self, core: usize) -> Option<f64> {
        self.cores[core].last_epoch_mpki
    }

    /// The value decisions use: the last completed epoch, or the running
    /// estimate before the first epoch has completed.
    pub fn mpki(&self, core: usize) -> f64 {
        self.cores[core].current()
    }

    pub fn timeline(&self, core: usize) -> &[f64] {
        &self.cores[core].timeline
    }

    /// Mean MPKI over the cores in `mask`, 0 when the mask is empty.
    pub fn average(&self, mask: CoreMask) -> f64 {
        let (sum, n) =
            mask.iter().filter(|&c| c < self.cores.len()).fold((0.0, 0u32), |(s, n), c| (s + self.mpki(c), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Send-up probability per rounded MPKI, as 16-bit fixed point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChanceLut {
    entries: [u16; CHANCE_ENTRIES],
}

impl ChanceLut {
    /// `base` must lie in `(0, 1]`.
    pub fn new(base: f64) -> Self {
        let mut entries = [0u16; CHANCE_ENTRIES];
        for (k, e) in entries.iter_mut().enumerate() {
            *e = libm::round(libm::pow(base, k as f64) * 65535.0) as u16;
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[u16; CHANCE_ENTRIES] {
        &self.entries
    }

    pub fn index(mpki: f64) -> usize {
        // NaN and non-positive loads index the first entry.
        if mpki.is_nan() || mpki <= 0.0 {
            return 0;
        }
        (libm::round(mpki) as usize).min(CHANCE_ENTRIES - 1)
    }

    pub fn lookup(&self, mpki: f64) -> u16 {
        self.entries[Self::index(mpki)]
    }

    pub fn probability(&self, mpki: f64) -> f64 {
        self.lookup(mpki) as f64 / 65535.0
    }

    /// Whether a 16-bit draw falls under the chance for `mpki`. The full
    /// scale entry always accepts.
    pub fn accepts(&self, mpki: f64, draw: u16) -> bool {
        let threshold = self.lookup(mpki);
        threshold == u16::MAX || draw < threshold
    }

    pub const fn storage_bytes() -> u64 {
        (CHANCE_ENTRIES * 2) as u64
    }
}

impl Default for ChanceLut {
    fn default() -> Self {
        Self::new(0.95)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Destination {
    Memory,
    Lender(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalancerConfig {
    pub critical_cores: CoreMask,
    pub idle_cores: CoreMask,
    pub mpki_epoch: u64,
    pub chance_base: f64,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self { critical_cores: CoreMask::EMPTY, idle_cores: CoreMask::EMPTY, mpki_epoch: 100_000, chance_base: 0.95 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Balancer {
    icm: IdleCoreMap,
    ctm: CriticalTaskMap,
    monitor: MpkiMonitor,
    lut: ChanceLut,
    rng: SplitMix64,
    draws: u64,
}

impl Balancer {
    pub fn new(config: &BalancerConfig, core_count: usize, rng: SplitMix64) -> Self {
        Self {
            icm: IdleCoreMap::new(config.idle_cores, core_count),
            ctm: CriticalTaskMap::new(config.critical_cores),
            monitor: MpkiMonitor::new(core_count, config.mpki_epoch),
            lut: ChanceLut::new(config.chance_base),
            rng,
            draws: 0,
        }
    }

    pub fn icm(&self) -> &IdleCoreMap {
        &self.icm
    }

    pub fn icm_mut(&mut self) -> &mut IdleCoreMap {
        &mut self.icm
    }

    pub fn ctm(&self) -> &CriticalTaskMap {
        &self.ctm
    }

    pub fn monitor(&self) -> &MpkiMonitor {
        &self.monitor
    }

    pub fn monitor_mut(&mut self) -> &mut MpkiMonitor {
        &mut self.monitor
    }

    pub fn lut(&self) -> &ChanceLut {
        &self.lut
    }

    /// PRNG draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn avg_critical_mpki(&self) -> f64 {
        self.monitor.average(self.ctm.mask())
    }

    /// Pick where an evicted block goes. Only the non-critical path with a
    /// lender available consumes a draw, and the round-robin cursor moves
    /// only when a lender is actually chosen.
    pub fn decide(&mut self, dead: bool, critical: bool, avg_critical_mpki: f64) -> Destination {
        if dead {
            return Destination::Memory;
        }
        let Some(lender) = self.icm.peek() else {
            return Destination::Memory;
        };
        if !critical {
            self.draws += 1;
            if !self.lut.accepts(avg_critical_mpki, self.rng.next_u16()) {
                return Destination::Memory;
            }
        }
        self.icm.commit(lender);
        Destination::Lender(lender)
    }
}
