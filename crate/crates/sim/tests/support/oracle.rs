//! Brute-force reference for a single core's hierarchy: per-set MRU-first
//! lists, L1 kept inside L2 by back-invalidation, and an exclusive LLC that
//! receives L2 victims and gives up blocks on a hit.

use l2h_core::CacheGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Served {
    L1,
    L2,
    Llc,
    Memory,
}

struct Level {
    geometry: CacheGeometry,
    sets: Vec<Vec<u64>>,
}

impl Level {
    fn new(geometry: CacheGeometry) -> Self {
        Self { geometry, sets: vec![Vec::new(); geometry.sets() as usize] }
    }

    fn set(&mut self, block: u64) -> &mut Vec<u64> {
        let n = self.sets.len() as u64;
        &mut self.sets[((block / self.geometry.line_bytes as u64) % n) as usize]
    }

    fn touch(&mut self, block: u64) -> bool {
        let set = self.set(block);
        match set.iter().position(|&b| b == block) {
            Some(i) => {
                set.remove(i);
                set.insert(0, block);
                true
            }
            None => false,
        }
    }

    fn remove(&mut self, block: u64) -> bool {
        let set = self.set(block);
        match set.iter().position(|&b| b == block) {
            Some(i) => {
                set.remove(i);
                true
            }
            None => false,
        }
    }

    fn insert(&mut self, block: u64) -> Option<u64> {
        let ways = self.geometry.associativity as usize;
        let set = self.set(block);
        set.insert(0, block);
        if set.len() > ways {
            set.pop()
        } else {
            None
        }
    }
}

pub struct Oracle {
    l1: Level,
    l2: Level,
    llc: Level,
}

impl Oracle {
    pub fn new(l1: CacheGeometry, l2: CacheGeometry, llc: CacheGeometry) -> Self {
        Self { l1: Level::new(l1), l2: Level::new(l2), llc: Level::new(llc) }
    }

    pub fn access(&mut self, address: u64) -> Served {
        let block = address & !(self.l1.geometry.line_bytes as u64 - 1);
        if self.l1.touch(block) {
            return Served::L1;
        }
        if self.l2.touch(block) {
            self.l1.insert(block);
            return Served::L2;
        }
        let served = if self.llc.remove(block) { Served::Llc } else { Served::Memory };
        if let Some(victim) = self.l2.insert(block) {
            self.l1.remove(victim);
            self.llc.insert(victim);
        }
        self.l1.insert(block);
        served
    }
}
