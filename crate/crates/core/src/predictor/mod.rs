//! Dead-block prediction at LLC eviction time.
//!
//! Two predictors vote. The bloom filter remembers recently missed
//! addresses; a block that missed recently and is being evicted again is
//! likely to come back. The perceptron learns from a sampled shadow of the
//! LLC. [`combined_predict`] arbitrates between them depending on how warm
//! the filter is and how loaded the critical cores are.

mod bloom;
mod mppp;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

pub use bloom::{BloomFilter, H3Hash, BLOOM_TABLES};
pub use mppp::{
    default_features, FeatureInputs, FeatureParseError, FeatureSource, FeatureSpec, MpppPrediction, Perceptron,
    SamplerEvent, Snapshot, COUNTER_MAX, COUNTER_MIN, DEFAULT_FEATURES, LAST_MISS_MAX, MAX_FEATURES, TABLE_ENTRIES,
};

/// Which branch of the combiner applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombinerPath {
    /// Bloom filter still warming up: the perceptron decides alone.
    Warming,
    /// Critical cores are missing heavily: both predictors must agree the block lives.
    HighLoad,
    /// Either predictor can keep the block alive.
    LowLoad,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombinerInputs {
    pub seen: bool,
    pub mppp_dead: bool,
    pub rc: u32,
    pub warmup_th: u32,
    pub l2_mpki: f64,
    pub mpki_th: f64,
}

impl CombinerInputs {
    pub fn path(&self) -> CombinerPath {
        if self.rc < self.warmup_th {
            CombinerPath::Warming
        } else if self.l2_mpki > self.mpki_th {
            CombinerPath::HighLoad
        } else {
            CombinerPath::LowLoad
        }
    }
}

/// Returns `true` when the block should be kept on chip.
pub fn combined_predict(inputs: &CombinerInputs) -> bool {
    match inputs.path() {
        CombinerPath::Warming => !inputs.mppp_dead,
        CombinerPath::HighLoad => inputs.seen && !inputs.mppp_dead,
        CombinerPath::LowLoad => inputs.seen || !inputs.mppp_dead,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub features: Vec<FeatureSpec>,
    pub dead_threshold: i32,
    pub sampler_sets: usize,
    /// 0 selects the caller's default.
    pub sampler_ways: usize,
    pub bloom_table_bits: u32,
    pub bloom_reset_interval: u32,
    pub warmup_th: u32,
    pub mpki_th: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            features: default_features(),
            dead_threshold: 320,
            sampler_sets: 256,
            sampler_ways: 0,
            bloom_table_bits: 32768,
            bloom_reset_interval: 4096,
            warmup_th: 256,
            mpki_th: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorConfigError {
    NoFeatures,
    TooManyFeatures(usize),
    ZeroResetInterval,
    ZeroSamplerSets,
    BadMpkiThreshold,
}

impl core::fmt::Display for PredictorConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NoFeatures => f.write_str("at least one perceptron feature is required"),
            Self::TooManyFeatures(n) => {
                write!(f, "{n} perceptron features given, at most {MAX_FEATURES} allowed")
            }
            Self::ZeroResetInterval => f.write_str("bloom reset interval must be positive"),
            Self::ZeroSamplerSets => f.write_str("sampler needs at least one set"),
            Self::BadMpkiThreshold => f.write_str("mpki threshold must be finite and non-negative"),
        }
    }
}

impl core::error::Error for PredictorConfigError {}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorConfigError> {
        if self.features.is_empty() {
            return Err(PredictorConfigError::NoFeatures);
        }
        if self.features.len() > MAX_FEATURES {
            return Err(PredictorConfigError::TooManyFeatures(self.features.len()));
        }
        if self.bloom_reset_interval == 0 {
            return Err(PredictorConfigError::ZeroResetInterval);
        }
        if self.sampler_sets == 0 {
            return Err(PredictorConfigError::ZeroSamplerSets);
        }
        if !(self.mpki_th.is_finite() && self.mpki_th >= 0.0) {
            return Err(PredictorConfigError::BadMpkiThreshold);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct BlockContext {
    pc: u64,
    last_miss_distance: u32,
}

/// Everything the combiner looked at for one eviction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub inputs: CombinerInputs,
    pub mppp_sum: i32,
    pub alive: bool,
}

/// Bloom filter, perceptron and the per-block context they consume.
#[derive(Clone, Debug)]
pub struct Predictor {
    bloom: BloomFilter,
    mppp: Perceptron,
    mpki_th: f64,
    contexts: BTreeMap<u64, BlockContext>,
    last_miss_at: BTreeMap<u64, u64>,
    llc_misses: u64,
}

impl Predictor {
    /// The bloom hashes and the sampled sets draw from separate forks of `rng`.
    pub fn new(
        config: &PredictorConfig,
        llc_sets: usize,
        default_sampler_ways: usize,
        rng: &SplitMix64,
    ) -> Result<Self, PredictorConfigError> {
        config.validate()?;
        let bloom = BloomFilter::new(
            config.bloom_table_bits,
            config.bloom_reset_interval,
            config.warmup_th,
            &mut rng.fork(0xB100),
        );
        let ways = if config.sampler_ways == 0 { default_sampler_ways } else { config.sampler_ways };
        let mppp = Perceptron::new(
            config.features.clone(),
            config.dead_threshold,
            llc_sets,
            config.sampler_sets,
            ways,
            &mut rng.fork(0x5A3F),
        );
        Ok(Self {
            bloom,
            mppp,
            mpki_th: config.mpki_th,
            contexts: BTreeMap::new(),
            last_miss_at: BTreeMap::new(),
            llc_misses: 0,
        })
    }

    pub fn bloom(&self) -> &BloomFilter {
        &self.bloom
    }

    pub fn perceptron(&self) -> &Perceptron {
        &self.mppp
    }

    pub fn perceptron_mut(&mut self) -> &mut Perceptron {
        &mut self.mppp
    }

    pub fn mpki_th(&self) -> f64 {
        self.mpki_th
    }

    fn inputs_for(&self, block_addr: u64) -> FeatureInputs {
        let ctx = self
            .contexts
            .get(&block_addr)
            .copied()
            .unwrap_or(BlockContext { pc: 0, last_miss_distance: LAST_MISS_MAX });
        FeatureInputs { addr: block_addr, pc: ctx.pc, last_miss_distance: ctx.last_miss_distance }
    }

    /// A demand request reached the LLC level. `off_chip` marks requests
    /// that had to go to memory; those train the bloom filter and the
    /// last-miss distance.
    pub fn on_llc_reference(&mut self, llc_set: usize, block_addr: u64, pc: u64, off_chip: bool) {
        let ctx = self.contexts.entry(block_addr).or_insert(BlockContext { pc, last_miss_distance: LAST_MISS_MAX });
        ctx.pc = pc;
        if off_chip {
            let distance = match self.last_miss_at.insert(block_addr, self.llc_misses) {
                Some(prev) => (self.llc_misses - prev).min(LAST_MISS_MAX as u64) as u32,
                None => LAST_MISS_MAX,
            };
            ctx.last_miss_distance = distance;
            self.llc_misses += 1;
            self.bloom.insert(block_addr);
        }
        let inputs = self.inputs_for(block_addr);
        self.mppp.observe(llc_set, block_addr, &inputs);
    }

    /// Judge a block that is leaving the LLC under the given load signal.
    pub fn evaluate(&self, block_addr: u64, l2_mpki: f64) -> Verdict {
        let prediction = self.mppp.predict(&self.inputs_for(block_addr));
        let inputs = CombinerInputs {
            seen: self.bloom.query(block_addr),
            mppp_dead: prediction.dead,
            rc: self.bloom.insert_count(),
            warmup_th: self.bloom.warmup_th(),
            l2_mpki,
            mpki_th: self.mpki_th,
        };
        Verdict { inputs, mppp_sum: prediction.sum, alive: combined_predict(&inputs) }
    }
}
