//! LLC eviction hook: keep live blocks on chip by parking them in idle L2s.
//!
//! A parked line carries the redirected bit. When the lender later evicts
//! it, the line skips the LLC and leaves the chip, so a block gets at most
//! one extra round on chip per demand reference.

use alloc::collections::BTreeSet;

use crate::balancer::{Balancer, Destination};
use crate::cache::CacheLine;
use crate::predictor::{CombinerPath, Predictor, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HarvestAction {
    WriteUp(usize),
    WritebackToMemory,
    /// Clean block leaving the chip.
    SilentDrop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarvestOutcome {
    pub action: HarvestAction,
    pub predicted_alive: bool,
    pub critical: bool,
    pub avg_critical_mpki: f64,
    /// `None` when harvesting is disabled.
    pub verdict: Option<Verdict>,
}

impl HarvestOutcome {
    pub fn path(&self) -> Option<CombinerPath> {
        self.verdict.map(|v| v.inputs.path())
    }
}

/// Where a private L2 victim goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2Route {
    Llc,
    /// Redirected line leaving the chip directly.
    Bypass {
        dirty: bool,
        was_outstanding: bool,
    },
}

/// Tally of parked blocks and how many of them paid off.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccuracyLedger {
    outstanding: BTreeSet<u64>,
    sent_up_total: u64,
    sent_up_hit: u64,
    sent_up_unused: u64,
}

impl AccuracyLedger {
    pub fn record_send_up(&mut self, block_addr: u64) {
        self.sent_up_total += 1;
        self.outstanding.insert(block_addr);
    }

    /// First demand reference to a parked block. Returns `false` if the block
    /// was not outstanding.
    pub fn record_hit(&mut self, block_addr: u64) -> bool {
        let was = self.outstanding.remove(&block_addr);
        self.sent_up_hit += was as u64;
        was
    }

    /// A parked block left the lender untouched.
    pub fn record_unused(&mut self, block_addr: u64) -> bool {
        let was = self.outstanding.remove(&block_addr);
        self.sent_up_unused += was as u64;
        was
    }

    pub fn sent_up_total(&self) -> u64 {
        self.sent_up_total
    }

    pub fn sent_up_hit(&self) -> u64 {
        self.sent_up_hit
    }

    pub fn sent_up_unused(&self) -> u64 {
        self.sent_up_unused
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn is_outstanding(&self, block_addr: u64) -> bool {
        self.outstanding.contains(&block_addr)
    }

    /// Fraction of send-ups later requested, `None` before the first send-up.
    pub fn accuracy(&self) -> Option<f64> {
        (self.sent_up_total > 0).then(|| self.sent_up_hit as f64 / self.sent_up_total as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Harvester {
    enabled: bool,
    predictor: Predictor,
    balancer: Balancer,
    ledger: AccuracyLedger,
}

impl Harvester {
    pub fn new(enabled: bool, predictor: Predictor, balancer: Balancer) -> Self {
        Self { enabled, predictor, balancer, ledger: AccuracyLedger::default() }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut Predictor {
        &mut self.predictor
    }

    pub fn balancer(&self) -> &Balancer {
        &self.balancer
    }

    pub fn balancer_mut(&mut self) -> &mut Balancer {
        &mut self.balancer
    }

    pub fn ledger(&self) -> &AccuracyLedger {
        &self.ledger
    }

    /// Decide the fate of a block just evicted from the LLC. The caller
    /// performs the lender fill for [`HarvestAction::WriteUp`].
    pub fn on_llc_eviction(&mut self, block_addr: u64, dirty: bool, origin: usize) -> HarvestOutcome {
        let off_chip = if dirty { HarvestAction::WritebackToMemory } else { HarvestAction::SilentDrop };
        if !self.enabled {
            return HarvestOutcome {
                action: off_chip,
                predicted_alive: false,
                critical: false,
                avg_critical_mpki: 0.0,
                verdict: None,
            };
        }
        let avg = self.balancer.avg_critical_mpki();
        let verdict = self.predictor.evaluate(block_addr, avg);
        let critical = self.balancer.ctm().is_critical(origin);
        let action = match self.balancer.decide(!verdict.alive, critical, avg) {
            Destination::Lender(core) => {
                self.ledger.record_send_up(block_addr);
                HarvestAction::WriteUp(core)
            }
            Destination::Memory => off_chip,
        };
        HarvestOutcome {
            action,
            predicted_alive: verdict.alive,
            critical,
            avg_critical_mpki: avg,
            verdict: Some(verdict),
        }
    }

    /// Route a private L2 victim. Redirected lines bypass the LLC.
    pub fn on_l2_eviction(&mut self, line: &CacheLine) -> L2Route {
        if line.redirected {
            let was_outstanding = self.ledger.record_unused(line.block_addr);
            L2Route::Bypass { dirty: line.dirty, was_outstanding }
        } else {
            L2Route::Llc
        }
    }

    /// A borrower's demand request was served from a lender's L2.
    pub fn on_remote_l2_hit(&mut self, block_addr: u64) -> bool {
        self.ledger.record_hit(block_addr)
    }
}
