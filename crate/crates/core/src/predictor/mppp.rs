//! Multi-perspective perceptron dead-block predictor.
//!
//! Every feature hashes some bits of the block's context into its own table
//! of 6-bit saturating counters. The prediction is the sum of the selected
//! counters; a sum above the dead threshold marks the block dead.
//!
//! Training happens on a sampler that shadows a fixed subset of LLC sets.
//! A sampled block evicted without reuse pushes its counters up (towards
//! dead). Reuse pulls the reused block's counters down, and every sampled
//! access also pulls down the counters of the blocks it pushed one LRU
//! position further from MRU.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::SplitMix64;

pub const TABLE_ENTRIES: usize = 256;
pub const COUNTER_MIN: i8 = -32;
pub const COUNTER_MAX: i8 = 31;
pub const MAX_FEATURES: usize = 16;
/// Saturation limit for the last-miss distance.
pub const LAST_MISS_MAX: u32 = (1 << 18) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Bias,
    Addr,
    Pc,
    Offset,
    LastMiss,
}

impl FeatureSource {
    fn name(self) -> &'static str {
        match self {
            FeatureSource::Bias => "bias",
            FeatureSource::Addr => "addr",
            FeatureSource::Pc => "pc",
            FeatureSource::Offset => "offset",
            FeatureSource::LastMiss => "lastmiss",
        }
    }
}

/// One feature, written in the usual `source(args)` table notation:
///
/// | notation                  | meaning                                     |
/// |---------------------------|---------------------------------------------|
/// | `bias(A, X)`              | constant index                              |
/// | `lastmiss(W, X)`          | low `W` bits of the last-miss distance      |
/// | `addr(A, B, E, [N,] X)`   | bits `B..=E` of the byte address            |
/// | `offset(A, B, E, X)`      | bits `B..=E` of the offset within a page    |
/// | `pc(A, B, E, N, X)`       | bits `B..=E` of the `N`th most recent PC    |
///
/// `A` is the LRU stack position the feature was tuned for; it is kept for
/// round-tripping but does not affect indexing. `X = 1` XORs the field with
/// the same-width field of the PC. Histories deeper than one collapse to the
/// most recent PC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub source: FeatureSource,
    pub stack_position: u8,
    pub start_bit: u8,
    pub end_bit: u8,
    pub history_depth: Option<u8>,
    pub xor_pc: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureParseError {
    pub text: String,
    pub reason: &'static str,
}

impl fmt::Display for FeatureParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad feature `{}`: {}", self.text, self.reason)
    }
}

impl core::error::Error for FeatureParseError {}

/// Context of one block at the time it was last touched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureInputs {
    pub addr: u64,
    pub pc: u64,
    pub last_miss_distance: u32,
}

fn bits(value: u64, start: u8, end: u8) -> u64 {
    let width = (end - start) as u32 + 1;
    let shifted = if start >= 64 { 0 } else { value >> start };
    if width >= 64 {
        shifted
    } else {
        shifted & ((1u64 << width) - 1)
    }
}

impl FeatureSpec {
    pub fn parse(text: &str) -> Result<Self, FeatureParseError> {
        let err = |reason| FeatureParseError { text: String::from(text), reason };
        let text_trim = text.trim();
        let open = text_trim.find('(').ok_or_else(|| err("missing `(`"))?;
        let inner = text_trim[open + 1..].strip_suffix(')').ok_or_else(|| err("missing `)`"))?;
        let mut args = [0u8; 5];
        let mut n = 0;
        for part in inner.split(',') {
            if n == args.len() {
                return Err(err("too many arguments"));
            }
            args[n] = part.trim().parse().map_err(|_| err("arguments must be small integers"))?;
            n += 1;
        }
        let flag = |v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(err("xor flag must be 0 or 1")),
        };
        let ordered = |a: u8, b: u8| if a <= b { (a, b) } else { (b, a) };
        let spec = match (&text_trim[..open], n) {
            ("bias", 2) => FeatureSpec {
                source: FeatureSource::Bias,
                stack_position: args[0],
                start_bit: 0,
                end_bit: 0,
                history_depth: None,
                xor_pc: flag(args[1])?,
            },
            ("lastmiss", 2) => {
                if args[0] == 0 || args[0] > 32 {
                    return Err(err("lastmiss width must be 1..=32"));
                }
                FeatureSpec {
                    source: FeatureSource::LastMiss,
                    stack_position: args[0],
                    start_bit: 0,
                    end_bit: args[0] - 1,
                    history_depth: None,
                    xor_pc: flag(args[1])?,
                }
            }
            (src @ ("addr" | "offset"), 4) => {
                let (start_bit, end_bit) = ordered(args[1], args[2]);
                FeatureSpec {
                    source: if src == "addr" { FeatureSource::Addr } else { FeatureSource::Offset },
                    stack_position: args[0],
                    start_bit,
                    end_bit,
                    history_depth: None,
                    xor_pc: flag(args[3])?,
                }
            }
            (src @ ("addr" | "pc"), 5) => {
                let (start_bit, end_bit) = ordered(args[1], args[2]);
                FeatureSpec {
                    source: if src == "addr" { FeatureSource::Addr } else { FeatureSource::Pc },
                    stack_position: args[0],
                    start_bit,
                    end_bit,
                    history_depth: Some(args[3]),
                    xor_pc: flag(args[4])?,
                }
            }
            ("bias" | "lastmiss" | "addr" | "offset" | "pc", _) => return Err(err("wrong number of arguments")),
            _ => return Err(err("unknown feature source")),
        };
        if spec.end_bit >= 64 {
            return Err(err("bit index out of range"));
        }
        Ok(spec)
    }

    /// Table index for a block context.
    pub fn index(&self, inputs: &FeatureInputs) -> u8 {
        let (field, start, end) = match self.source {
            FeatureSource::Bias => (0, 0, 7),
            FeatureSource::LastMiss => (bits(inputs.last_miss_distance as u64, 0, self.end_bit), 0, self.end_bit),
            FeatureSource::Addr => (bits(inputs.addr, self.start_bit, self.end_bit), self.start_bit, self.end_bit),
            FeatureSource::Offset => {
                (bits(inputs.addr & 0xFFF, self.start_bit, self.end_bit), self.start_bit, self.end_bit)
            }
            FeatureSource::Pc => (bits(inputs.pc, self.start_bit, self.end_bit), self.start_bit, self.end_bit),
        };
        let field = if self.xor_pc { field ^ bits(inputs.pc, start, end) } else { field };
        (field % TABLE_ENTRIES as u64) as u8
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = self.xor_pc as u8;
        let name = self.source.name();
        match (self.source, self.history_depth) {
            (FeatureSource::Bias, _) => write!(f, "{name}({},{x})", self.stack_position),
            (FeatureSource::LastMiss, _) => write!(f, "{name}({},{x})", self.end_bit + 1),
            (_, Some(n)) => write!(f, "{name}({},{},{},{n},{x})", self.stack_position, self.start_bit, self.end_bit),
            (_, None) => {
                write!(f, "{name}({},{},{},{x})", self.stack_position, self.start_bit, self.end_bit)
            }
        }
    }
}

/// The sixteen multicore features.
pub const DEFAULT_FEATURES: [&str; 16] = [
    "bias(6,0)",
    "addr(9,9,14,5,1)",
    "addr(9,12,29,0)",
    "addr(13,21,29,0)",
    "addr(14,17,25,0)",
    "lastmiss(6,0)",
    "lastmiss(18,0)",
    "offset(13,0,4,0)",
    "offset(14,0,6,0)",
    "offset(16,0,1,0)",
    "pc(6,13,31,4,0)",
    "pc(9,11,7,16,0)",
    "pc(13,16,24,17,0)",
    "pc(16,2,10,2,0)",
    "pc(16,4,46,9,0)",
    "pc(17,0,13,5,0)",
];

pub fn default_features() -> Vec<FeatureSpec> {
    DEFAULT_FEATURES.iter().map(|s| FeatureSpec::parse(s).expect("built-in feature")).collect()
}

/// Table indices selected by one block context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Snapshot {
    indices: [u8; MAX_FEATURES],
    len: u8,
}

impl Snapshot {
    pub fn indices(&self) -> &[u8] {
        &self.indices[..self.len as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MpppPrediction {
    pub sum: i32,
    pub dead: bool,
}

/// Training signals produced by the sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerEvent {
    /// A tracked block was touched again: towards alive.
    Reused(Snapshot),
    /// A tracked block slid one LRU position because of another access.
    Aged(Snapshot),
    /// A tracked block left the sampler untouched: towards dead.
    EvictedUnused(Snapshot),
}

#[derive(Clone, Copy, Debug)]
struct SamplerEntry {
    block_addr: u64,
    snapshot: Snapshot,
    reused: bool,
}

#[derive(Clone, Debug)]
struct Sampler {
    /// LLC set -> sampler slot, `u32::MAX` when not sampled.
    slot_of_set: Vec<u32>,
    sampled: Vec<usize>,
    /// Per slot, most recently used first.
    sets: Vec<Vec<SamplerEntry>>,
    ways: usize,
}

impl Sampler {
    fn new(llc_sets: usize, sampled_sets: usize, ways: usize, rng: &mut SplitMix64) -> Self {
        let count = sampled_sets.min(llc_sets);
        let mut order: Vec<usize> = (0..llc_sets).collect();
        for i in 0..count {
            let j = i + rng.below((llc_sets - i) as u64) as usize;
            order.swap(i, j);
        }
        let mut sampled: Vec<usize> = order[..count].to_vec();
        sampled.sort_unstable();
        let mut slot_of_set = alloc::vec![u32::MAX; llc_sets];
        for (slot, &set) in sampled.iter().enumerate() {
            slot_of_set[set] = slot as u32;
        }
        let sets = (0..count).map(|_| Vec::with_capacity(ways)).collect();
        Self { slot_of_set, sampled, sets, ways: ways.max(1) }
    }
}

#[derive(Clone, Debug)]
pub struct Perceptron {
    features: Vec<FeatureSpec>,
    weights: Vec<[i8; TABLE_ENTRIES]>,
    dead_threshold: i32,
    sampler: Sampler,
}

impl Perceptron {
    /// `features` must hold between 1 and [`MAX_FEATURES`] entries.
    pub fn new(
        features: Vec<FeatureSpec>,
        dead_threshold: i32,
        llc_sets: usize,
        sampled_sets: usize,
        sampler_ways: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        assert!(!features.is_empty() && features.len() <= MAX_FEATURES);
        let weights = alloc::vec![[0i8; TABLE_ENTRIES]; features.len()];
        let sampler = Sampler::new(llc_sets, sampled_sets, sampler_ways, rng);
        Self { features, weights, dead_threshold, sampler }
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn dead_threshold(&self) -> i32 {
        self.dead_threshold
    }

    pub fn sampled_sets(&self) -> &[usize] {
        &self.sampler.sampled
    }

    pub fn is_sampled(&self, llc_set: usize) -> bool {
        self.sampler.slot_of_set.get(llc_set).is_some_and(|&s| s != u32::MAX)
    }

    pub fn weight(&self, feature: usize, index: u8) -> i8 {
        self.weights[feature][index as usize]
    }

    /// Overwrite every counter, clamped to the counter range.
    pub fn fill_weights(&mut self, value: i8) {
        let v = value.clamp(COUNTER_MIN, COUNTER_MAX);
        for table in &mut self.weights {
            table.fill(v);
        }
    }

    pub fn weights(&self) -> impl Iterator<Item = i8> + '_ {
        self.weights.iter().flat_map(|t| t.iter().copied())
    }

    pub fn snapshot(&self, inputs: &FeatureInputs) -> Snapshot {
        let mut indices = [0u8; MAX_FEATURES];
        for (slot, spec) in indices.iter_mut().zip(&self.features) {
            *slot = spec.index(inputs);
        }
        Snapshot { indices, len: self.features.len() as u8 }
    }

    pub fn predict_snapshot(&self, snapshot: &Snapshot) -> MpppPrediction {
        let sum = snapshot.indices().iter().zip(&self.weights).map(|(&i, table)| table[i as usize] as i32).sum();
        MpppPrediction { sum, dead: sum > self.dead_threshold }
    }

    pub fn predict(&self, inputs: &FeatureInputs) -> MpppPrediction {
        self.predict_snapshot(&self.snapshot(inputs))
    }

    fn adjust(weights: &mut [[i8; TABLE_ENTRIES]], snapshot: &Snapshot, delta: i8) {
        for (&i, table) in snapshot.indices().iter().zip(weights.iter_mut()) {
            let c = &mut table[i as usize];
            *c = c.saturating_add(delta).clamp(COUNTER_MIN, COUNTER_MAX);
        }
    }

    pub fn train(&mut self, event: SamplerEvent) {
        match event {
            SamplerEvent::Reused(s) | SamplerEvent::Aged(s) => Self::adjust(&mut self.weights, &s, -1),
            SamplerEvent::EvictedUnused(s) => Self::adjust(&mut self.weights, &s, 1),
        }
    }

    /// Feed one LLC-level access (fill or hit) to the sampler. Accesses to
    /// unsampled sets are ignored.
    pub fn observe(&mut self, llc_set: usize, block_addr: u64, inputs: &FeatureInputs) {
        if !self.is_sampled(llc_set) {
            return;
        }
        let snapshot = self.snapshot(inputs);
        let slot = self.sampler.slot_of_set[llc_set] as usize;
        let ways = self.sampler.ways;
        let weights = &mut self.weights;
        let set = &mut self.sampler.sets[slot];
        match set.iter().position(|e| e.block_addr == block_addr) {
            Some(pos) => {
                let entry = set.remove(pos);
                Self::adjust(weights, &entry.snapshot, -1);
                for aged in &set[..pos] {
                    Self::adjust(weights, &aged.snapshot, -1);
                }
                set.insert(0, SamplerEntry { block_addr, snapshot, reused: true });
            }
            None => {
                if set.len() == ways {
                    let evicted = set.pop().expect("full sampler set");
                    if !evicted.reused {
                        Self::adjust(weights, &evicted.snapshot, 1);
                    }
                }
                set.insert(0, SamplerEntry { block_addr, snapshot, reused: false });
            }
        }
    }

    /// Modelled storage: 6-bit weights plus per-way sampler metadata
    /// (16-bit partial tag, one 8-bit index per feature, LRU, reuse and
    /// valid bits).
    pub fn storage_bytes(&self) -> u64 {
        Self::storage_for(self.features.len(), self.sampler.sampled.len(), self.sampler.ways)
    }

    pub fn storage_for(features: usize, sampled_sets: usize, ways: usize) -> u64 {
        let ways = ways.max(1);
        let weight_bits = (features * TABLE_ENTRIES * 6) as u64;
        let lru_bits = (usize::BITS - (ways - 1).leading_zeros()).max(1) as u64;
        let entry_bits = 16 + 8 * features as u64 + lru_bits + 2;
        let sampler_bits = sampled_sets as u64 * ways as u64 * entry_bits;
        (weight_bits + sampler_bits).div_ceil(8)
    }
}
