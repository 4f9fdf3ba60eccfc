//! Set-associative cache arrays with true-LRU replacement, and the snoop
//! filter that records the single on-chip location of every block.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

/// Which level of the hierarchy an array models.
///
/// Only private L2 arrays may hold lines with the redirected bit set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CacheLevel {
    L1,
    L2,
    Llc,
}

impl fmt::Display for CacheLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheLevel::L1 => "l1",
            CacheLevel::L2 => "l2",
            CacheLevel::Llc => "llc",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeometryError {
    ZeroAssociativity,
    LineNotPowerOfTwo(u32),
    SizeNotDivisible { size_bytes: u64, way_bytes: u64 },
    Empty,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::ZeroAssociativity => f.write_str("associativity must be at least 1"),
            GeometryError::LineNotPowerOfTwo(l) => write!(f, "line size {l} is not a power of two"),
            GeometryError::SizeNotDivisible { size_bytes, way_bytes } => {
                write!(f, "cache size {size_bytes} is not a multiple of associativity x line ({way_bytes})")
            }
            GeometryError::Empty => f.write_str("cache size must be non-zero"),
        }
    }
}

impl core::error::Error for GeometryError {}

/// Size and timing of one cache array.
///
/// Set counts need not be powers of two: a 1.25 MB 16-way L2 has 1280 sets
/// and a 12 MB 16-way LLC has 12288. Set selection is `block_number % sets`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheGeometry {
    pub size_bytes: u64,
    pub associativity: u32,
    pub line_bytes: u32,
    pub hit_latency: u32,
}

impl CacheGeometry {
    pub fn new(size_bytes: u64, associativity: u32, line_bytes: u32, hit_latency: u32) -> Result<Self, GeometryError> {
        let geometry = Self { size_bytes, associativity, line_bytes, hit_latency };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.associativity == 0 {
            return Err(GeometryError::ZeroAssociativity);
        }
        if !self.line_bytes.is_power_of_two() {
            return Err(GeometryError::LineNotPowerOfTwo(self.line_bytes));
        }
        if self.size_bytes == 0 {
            return Err(GeometryError::Empty);
        }
        let way_bytes = self.associativity as u64 * self.line_bytes as u64;
        if !self.size_bytes.is_multiple_of(way_bytes) {
            return Err(GeometryError::SizeNotDivisible { size_bytes: self.size_bytes, way_bytes });
        }
        Ok(())
    }

    pub fn sets(&self) -> u64 {
        self.size_bytes / (self.associativity as u64 * self.line_bytes as u64)
    }

    pub fn lines(&self) -> u64 {
        self.size_bytes / self.line_bytes as u64
    }

    pub fn line_shift(&self) -> u32 {
        self.line_bytes.trailing_zeros()
    }

    /// Clear the offset bits of a byte address.
    pub fn block_of(&self, addr: u64) -> u64 {
        addr & !(self.line_bytes as u64 - 1)
    }

    pub fn set_index(&self, block_addr: u64) -> usize {
        ((block_addr >> self.line_shift()) % self.sets()) as usize
    }
}

/// One tag-store entry.
///
/// `block_addr` keeps the full line-aligned address rather than a tag so that
/// victims can be reported without reconstructing anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CacheLine {
    pub block_addr: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Set on lines parked in a lender's L2 by the harvester.
    pub redirected: bool,
    /// 0 is most recently used.
    pub lru_position: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessResult {
    Hit,
    Miss,
}

impl AccessResult {
    pub fn is_hit(self) -> bool {
        matches!(self, AccessResult::Hit)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheError {
    /// The block was filled while already resident: a simulator bug.
    DoubleFill {
        level: CacheLevel,
        block_addr: u64,
    },
    RedirectOutsideL2 {
        level: CacheLevel,
        block_addr: u64,
    },
    Misaligned {
        level: CacheLevel,
        block_addr: u64,
    },
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::DoubleFill { level, block_addr } => {
                write!(f, "block {block_addr:#x} filled into {level} while already resident")
            }
            CacheError::RedirectOutsideL2 { level, block_addr } => {
                write!(f, "redirected fill of {block_addr:#x} into {level}")
            }
            CacheError::Misaligned { level, block_addr } => {
                write!(f, "address {block_addr:#x} passed to {level} is not line aligned")
            }
        }
    }
}

impl core::error::Error for CacheError {}

/// A set-associative array. Lines are stored flat, `associativity` per set.
#[derive(Clone, Debug)]
pub struct CacheArray {
    level: CacheLevel,
    geometry: CacheGeometry,
    ways: usize,
    lines: Vec<CacheLine>,
    resident: usize,
}

impl CacheArray {
    pub fn new(level: CacheLevel, geometry: CacheGeometry) -> Result<Self, GeometryError> {
        geometry.validate()?;
        let ways = geometry.associativity as usize;
        let lines = alloc::vec![CacheLine::default(); geometry.sets() as usize * ways];
        Ok(Self { level, geometry, ways, lines, resident: 0 })
    }

    pub fn level(&self) -> CacheLevel {
        self.level
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    /// Number of valid lines.
    pub fn resident(&self) -> usize {
        self.resident
    }

    fn set_range(&self, block_addr: u64) -> core::ops::Range<usize> {
        let start = self.geometry.set_index(block_addr) * self.ways;
        start..start + self.ways
    }

    fn find(&self, block_addr: u64) -> Option<usize> {
        self.set_range(block_addr).find(|&i| self.lines[i].valid && self.lines[i].block_addr == block_addr)
    }

    fn promote(&mut self, idx: usize) {
        let range = self.set_range(self.lines[idx].block_addr);
        let pos = self.lines[idx].lru_position;
        for line in &mut self.lines[range] {
            if line.valid && line.lru_position < pos {
                line.lru_position += 1;
            }
        }
        self.lines[idx].lru_position = 0;
    }

    /// Look up a block, promoting it to MRU on a hit. A miss changes nothing.
    pub fn access(&mut self, block_addr: u64) -> AccessResult {
        debug_assert_eq!(block_addr, self.geometry.block_of(block_addr));
        match self.find(block_addr) {
            Some(idx) => {
                self.promote(idx);
                AccessResult::Hit
            }
            None => AccessResult::Miss,
        }
    }

    /// Read a line without touching replacement state.
    pub fn probe(&self, block_addr: u64) -> Option<&CacheLine> {
        self.find(block_addr).map(|i| &self.lines[i])
    }

    pub fn contains(&self, block_addr: u64) -> bool {
        self.find(block_addr).is_some()
    }

    /// Set the dirty bit of a resident line; returns false if absent.
    pub fn mark_dirty(&mut self, block_addr: u64) -> bool {
        match self.find(block_addr) {
            Some(i) => {
                self.lines[i].dirty = true;
                true
            }
            None => false,
        }
    }

    pub fn clear_redirected(&mut self, block_addr: u64) -> bool {
        match self.find(block_addr) {
            Some(i) => {
                self.lines[i].redirected = false;
                true
            }
            None => false,
        }
    }

    /// Insert a block at MRU, returning the LRU victim if the set was full.
    pub fn fill(&mut self, block_addr: u64, dirty: bool, redirected: bool) -> Result<Option<CacheLine>, CacheError> {
        if block_addr != self.geometry.block_of(block_addr) {
            return Err(CacheError::Misaligned { level: self.level, block_addr });
        }
        if redirected && self.level != CacheLevel::L2 {
            return Err(CacheError::RedirectOutsideL2 { level: self.level, block_addr });
        }
        if self.find(block_addr).is_some() {
            return Err(CacheError::DoubleFill { level: self.level, block_addr });
        }
        let range = self.set_range(block_addr);
        let lru = self.ways as u32 - 1;
        let slot = range
            .clone()
            .find(|&i| !self.lines[i].valid)
            .or_else(|| range.clone().find(|&i| self.lines[i].lru_position == lru))
            .expect("full set always has an LRU line");
        let victim = self.lines[slot];
        for line in &mut self.lines[range] {
            if line.valid {
                line.lru_position += 1;
            }
        }
        if !victim.valid {
            self.resident += 1;
        }
        self.lines[slot] = CacheLine { block_addr, valid: true, dirty, redirected, lru_position: 0 };
        Ok(victim.valid.then_some(CacheLine { lru_position: lru, ..victim }))
    }

    /// Remove a block, returning it if it was resident.
    pub fn invalidate(&mut self, block_addr: u64) -> Option<CacheLine> {
        let idx = self.find(block_addr)?;
        let line = self.lines[idx];
        let range = self.set_range(block_addr);
        for other in &mut self.lines[range] {
            if other.valid && other.lru_position > line.lru_position {
                other.lru_position -= 1;
            }
        }
        self.lines[idx].valid = false;
        self.resident -= 1;
        Some(line)
    }

    /// Valid lines, in storage order.
    pub fn lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.lines.iter().filter(|l| l.valid)
    }

    /// Check the per-set replacement invariants.
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        for set in self.lines.chunks(self.ways) {
            let mut seen = [false; 64];
            let mut positions: Vec<u32> = Vec::new();
            let valid: Vec<&CacheLine> = set.iter().filter(|l| l.valid).collect();
            for (i, a) in valid.iter().enumerate() {
                if valid[i + 1..].iter().any(|b| b.block_addr == a.block_addr) {
                    return Err("duplicate tag in set");
                }
                if a.redirected && self.level != CacheLevel::L2 {
                    return Err("redirected line outside a private L2");
                }
                positions.push(a.lru_position);
            }
            if self.ways <= 64 {
                for &p in &positions {
                    if p as usize >= valid.len() || seen[p as usize] {
                        return Err("lru positions are not a permutation");
                    }
                    seen[p as usize] = true;
                }
            } else {
                positions.sort_unstable();
                if positions.iter().enumerate().any(|(i, &p)| p as usize != i) {
                    return Err("lru positions are not a permutation");
                }
            }
        }
        Ok(())
    }
}

/// Where the directory believes a block lives.
///
/// `L1(c)` means the block is in core `c`'s L1 and, by inclusion, its L2.
/// `L2(c)` means it is in core `c`'s L2 only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    L1(usize),
    L2(usize),
    Llc,
    OffChip,
}

impl Location {
    /// Core owning the private copy, if any.
    pub fn core(self) -> Option<usize> {
        match self {
            Location::L1(c) | Location::L2(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::L1(c) => write!(f, "L1-{c}"),
            Location::L2(c) => write!(f, "L2-{c}"),
            Location::Llc => f.write_str("LLC"),
            Location::OffChip => f.write_str("off-chip"),
        }
    }
}

/// Exact, unbounded directory: one location per on-chip block.
#[derive(Clone, Debug, Default)]
pub struct SnoopFilter {
    map: BTreeMap<u64, Location>,
}

impl SnoopFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, block_addr: u64, location: Location) {
        match location {
            Location::OffChip => {
                self.map.remove(&block_addr);
            }
            loc => {
                self.map.insert(block_addr, loc);
            }
        }
    }

    pub fn lookup(&self, block_addr: u64) -> Location {
        self.map.get(&block_addr).copied().unwrap_or(Location::OffChip)
    }

    /// Number of tracked on-chip blocks.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Location)> + '_ {
        self.map.iter().map(|(&b, &l)| (b, l))
    }
}
