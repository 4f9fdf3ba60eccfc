//! Trace-driven model of a three-level cache hierarchy with an L2 harvester.
//!
//! The harvester intercepts live LLC evictions and parks them in the private
//! L2 of an idle core instead of writing them back to memory. Whether a block
//! is worth keeping is decided by a resettable blocked bloom filter combined
//! with a multi-perspective perceptron; where it goes is decided by an
//! MPKI-aware load balancer that protects critical applications.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel sweeps live in the `l2h-sim` companion crate.
//!
//! * [`cache`]: set-associative arrays and the snoop filter directory
//! * [`predictor`]: bloom filter, perceptron tables and the combiner
//! * [`balancer`]: idle/critical core maps, MPKI monitor, chance table
//! * [`harvester`]: LLC eviction hook and prediction-accuracy ledger
//! * [`engine`]: the simulated machine, statistics and reports
//! * [`tracegen`]: deterministic synthetic workloads
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod balancer;
pub mod cache;
pub mod engine;
pub mod harvester;
pub mod predictor;
pub mod rng;
pub mod tracegen;

pub use balancer::{Balancer, BalancerConfig, ChanceLut, CoreMask, Destination};
pub use cache::{AccessResult, CacheArray, CacheGeometry, CacheLevel, CacheLine, Location, SnoopFilter};
pub use engine::{
    compare, interleave, run, storage_report, AccessOutcome, ComparisonReport, Event, Machine, MemoryAccess, Mode, Op,
    Packet, ServedBy, SimConfig, SimError, SimStats, StorageBreakdown,
};
pub use harvester::{AccuracyLedger, HarvestAction, HarvestOutcome, Harvester};
pub use predictor::{BloomFilter, CombinerInputs, FeatureSpec, Perceptron, Predictor, PredictorConfig};
pub use rng::SplitMix64;
pub use tracegen::{generate, CoreTrace, WorkloadKind, WorkloadParams, WorkloadSpec};

/// Line size assumed by the trace generator and the default geometries.
pub const LINE_BYTES: u32 = 64;
