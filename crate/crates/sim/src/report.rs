//! `stats.csv` and `events.log` output.
//!
//! The column order of [`COLUMNS`] is part of the file format. Floats are
//! written with six decimals; an undefined accuracy is written as `n/a`.

use std::io::{self, Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use l2h_core::engine::CoreStats;
use l2h_core::{CacheLevel, Event, Packet, SimConfig, SimStats};

pub const COLUMNS: [&str; 29] = [
    "run_id",
    "mode",
    "llc_bytes",
    "lenders",
    "l1_accesses",
    "l1_misses",
    "l1_mpki",
    "l2_accesses",
    "l2_misses",
    "l2_mpki",
    "llc_accesses",
    "llc_misses",
    "llc_mpki",
    "remote_hits",
    "pkt_writeup",
    "pkt_writeback_dirty",
    "pkt_writeback_clean",
    "pkt_clean_evict",
    "pkt_snoop_check",
    "pkt_data_response",
    "sent_up",
    "sent_up_hit",
    "accuracy",
    "amat_cycles",
    "total_cycles",
    "instructions",
    "memory_writebacks",
    "trace_digest",
    "seed",
];

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn row(run_id: &str, config: &SimConfig, stats: &SimStats) -> Vec<String> {
    let mut r = vec![
        run_id.to_string(),
        config.effective_mode().name().to_string(),
        config.llc.size_bytes.to_string(),
        config.balancer.idle_cores.count().to_string(),
    ];
    for level in [CacheLevel::L1, CacheLevel::L2, CacheLevel::Llc] {
        r.push(stats.level_accesses(level).to_string());
        r.push(stats.level_misses(level).to_string());
        r.push(f6(stats.mpki(level)));
    }
    r.push(stats.remote_hits().to_string());
    for p in Packet::ALL {
        r.push(stats.packet(p).to_string());
    }
    r.push(stats.sent_up.to_string());
    r.push(stats.sent_up_hit.to_string());
    r.push(stats.accuracy().map_or_else(|| "n/a".to_string(), f6));
    r.push(f6(stats.amat()));
    r.push(stats.total_cycles().to_string());
    r.push(stats.instructions().to_string());
    r.push(stats.memory_writebacks.to_string());
    r.push(format!("{:016x}", stats.trace_digest));
    r.push(config.seed.to_string());
    debug_assert_eq!(r.len(), COLUMNS.len());
    r
}

pub fn write_csv<W: Write>(out: W, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(io::BufWriter::new(file), rows)
}

pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    out.flush()
}

/// One parsed `stats.csv` row, rebuilt into aggregate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsRow {
    pub run_id: String,
    pub mode: String,
    pub stats: SimStats,
}

pub fn read_csv<R: Read>(input: R) -> anyhow::Result<Vec<StatsRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        bail!("unexpected stats.csv header");
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let get = |name: &str| -> anyhow::Result<u64> {
            let idx = COLUMNS.iter().position(|c| *c == name).expect("known column");
            rec[idx].parse().with_context(|| format!("row {}: bad `{name}` value `{}`", i + 1, &rec[idx]))
        };
        let memory = get("llc_misses")?;
        let remote = get("remote_hits")?;
        let l2_misses = get("l2_misses")?;
        let core = CoreStats {
            accesses: get("l1_accesses")?,
            writes: 0,
            instructions: get("instructions")?,
            l1_misses: get("l1_misses")?,
            l2_misses,
            llc_hits: l2_misses.saturating_sub(memory + remote),
            remote_hits: remote,
            memory_fetches: memory,
            cycles: get("total_cycles")?,
        };
        let mut packets = [0u64; 6];
        for (slot, p) in packets.iter_mut().zip(Packet::ALL) {
            *slot = get(&format!("pkt_{}", p.name()))?;
        }
        let digest_idx = COLUMNS.iter().position(|c| *c == "trace_digest").unwrap();
        let trace_digest =
            u64::from_str_radix(&rec[digest_idx], 16).with_context(|| format!("row {}: bad trace digest", i + 1))?;
        out.push(StatsRow {
            run_id: rec[0].to_string(),
            mode: rec[1].to_string(),
            stats: SimStats {
                cores: vec![core],
                packets,
                sent_up: get("sent_up")?,
                sent_up_hit: get("sent_up_hit")?,
                sent_up_unused: 0,
                memory_writebacks: get("memory_writebacks")?,
                dirty_generations: 0,
                dirty_on_chip: 0,
                mpki_timeline: vec![Vec::new()],
                trace_digest,
            },
        });
    }
    Ok(out)
}
