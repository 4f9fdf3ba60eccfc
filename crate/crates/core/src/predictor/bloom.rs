//! Blocked bloom filter over recently missed block addresses.
//!
//! Each of the [`BLOOM_TABLES`] hash functions owns its own bit table, so an
//! insert sets exactly one bit per table. Hashes are H3: a random bit matrix
//! whose rows are XORed together for every set bit of the key.

use alloc::vec::Vec;

use crate::rng::SplitMix64;

pub const BLOOM_TABLES: usize = 4;

/// One H3 hash function from 64-bit keys to table indices.
#[derive(Clone, Debug)]
pub struct H3Hash {
    rows: [u32; 64],
}

impl H3Hash {
    pub fn random(rng: &mut SplitMix64, index_mask: u32) -> Self {
        let mut rows = [0u32; 64];
        for row in &mut rows {
            *row = rng.next_u64() as u32 & index_mask;
        }
        Self { rows }
    }

    pub fn hash(&self, key: u64) -> u32 {
        let mut bits = key;
        let mut out = 0;
        while bits != 0 {
            let i = bits.trailing_zeros();
            out ^= self.rows[i as usize];
            bits &= bits - 1;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct BloomFilter {
    tables: [Vec<u64>; BLOOM_TABLES],
    hashes: [H3Hash; BLOOM_TABLES],
    table_bits: u32,
    insert_count: u32,
    warmup_th: u32,
    reset_interval: u32,
    resets: u64,
}

impl BloomFilter {
    /// `table_bits` is rounded up to a power of two (minimum 64).
    pub fn new(table_bits: u32, reset_interval: u32, warmup_th: u32, rng: &mut SplitMix64) -> Self {
        let table_bits = table_bits.max(64).next_power_of_two();
        let mask = table_bits - 1;
        let words = (table_bits / 64) as usize;
        Self {
            tables: core::array::from_fn(|_| alloc::vec![0u64; words]),
            hashes: core::array::from_fn(|_| H3Hash::random(rng, mask)),
            table_bits,
            insert_count: 0,
            warmup_th,
            reset_interval: reset_interval.max(1),
            resets: 0,
        }
    }

    /// Record a missed block. A full epoch is cleared first, so the block
    /// that triggers a reset is the first member of the new epoch.
    pub fn insert(&mut self, block_addr: u64) {
        if self.insert_count >= self.reset_interval {
            self.reset();
        }
        for (table, hash) in self.tables.iter_mut().zip(&self.hashes) {
            let bit = hash.hash(block_addr);
            table[(bit / 64) as usize] |= 1 << (bit % 64);
        }
        self.insert_count += 1;
    }

    pub fn query(&self, block_addr: u64) -> bool {
        self.tables.iter().zip(&self.hashes).all(|(table, hash)| {
            let bit = hash.hash(block_addr);
            table[(bit / 64) as usize] & (1 << (bit % 64)) != 0
        })
    }

    pub fn reset(&mut self) {
        for table in &mut self.tables {
            table.fill(0);
        }
        self.insert_count = 0;
        self.resets += 1;
    }

    /// Inserts since the last reset (the `RC` register).
    pub fn insert_count(&self) -> u32 {
        self.insert_count
    }

    pub fn warmup_th(&self) -> u32 {
        self.warmup_th
    }

    pub fn is_warm(&self) -> bool {
        self.insert_count >= self.warmup_th
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn table_bits(&self) -> u32 {
        self.table_bits
    }

    pub fn storage_bytes(&self) -> u64 {
        BLOOM_TABLES as u64 * self.table_bits as u64 / 8
    }

    /// Expected false-positive rate after `n` distinct inserts.
    pub fn expected_fpr(&self, n: u32) -> f64 {
        let per_table = 1.0 - libm::exp(-(n as f64) / self.table_bits as f64);
        libm::pow(per_table, BLOOM_TABLES as f64)
    }
}
