//! Acceptance gate: one pass/fail line per criterion, nonzero exit on any
//! failure.

mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use l2h_core::balancer::CoreMask;
use l2h_core::engine::{Endpoint, Event};
use l2h_core::predictor::{combined_predict, CombinerPath};
use l2h_core::tracegen::bundled_suite;
use l2h_core::{
    generate, interleave, storage_report, BloomFilter, CacheGeometry, ChanceLut, CombinerInputs, HarvestAction,
    Machine, MemoryAccess, Mode, Op, Packet, ServedBy, SimConfig, SplitMix64, WorkloadKind, WorkloadParams,
    WorkloadSpec,
};
use l2h_sim::report;
use support::oracle::{Oracle, Served};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn geometry(size_bytes: u64, associativity: u32, hit_latency: u32) -> CacheGeometry {
    CacheGeometry { size_bytes, associativity, line_bytes: 64, hit_latency }
}

/// Four cores, 8 KB L1, 128 KB L2, 512 KB LLC.
fn scaled(mode: Mode, lenders: &[usize], critical: &[usize]) -> SimConfig {
    let mut c = SimConfig::with_cores(4);
    c.l1 = geometry(8 << 10, 4, 1);
    c.l2 = geometry(128 << 10, 8, 12);
    c.llc = geometry(512 << 10, 16, 25);
    c.mode = mode;
    c.balancer.idle_cores = CoreMask::from_cores(lenders.iter().copied());
    c.balancer.critical_cores = CoreMask::from_cores(critical.iter().copied());
    c.seed = 7;
    c
}

fn trace(kind: WorkloadKind, params: WorkloadParams, core: usize, seed: u64) -> Vec<MemoryAccess> {
    let mut t = generate(&WorkloadSpec::new(kind, params, core, seed)).expect("valid workload");
    t.remove(0).accesses
}

fn simulate<'a>(config: SimConfig, accesses: impl IntoIterator<Item = &'a MemoryAccess>) -> (Machine, Vec<ServedBy>) {
    let mut m = Machine::new(config).expect("valid config");
    m.record_events();
    let served = accesses.into_iter().map(|a| m.step(a).expect("valid access").served_by).collect();
    (m, served)
}

fn decisions(events: &[Event]) -> impl Iterator<Item = (&Event, bool)> {
    events
        .iter()
        .filter(|e| matches!(e, Event::Decision { .. }))
        .map(|e| (e, matches!(e, Event::Decision { action: HarvestAction::WriteUp(_), .. })))
}

fn chance_curve() -> Outcome {
    let lut = ChanceLut::new(0.95);
    let points = [(5.0, 0.77), (15.0, 0.46), (41.0, 0.12)];
    let mut ok = lut.probability(0.0) == 1.0;
    let mut detail = format!("p(0)={}", lut.probability(0.0));
    for (mpki, want) in points {
        let got = lut.probability(mpki);
        ok &= (got - want).abs() <= 0.005;
        detail += &format!(" p({mpki})={got:.4}");
    }
    let monotone = (1..100).all(|k| lut.probability(k as f64) <= lut.probability((k - 1) as f64));
    detail += &format!(" monotone={monotone}");
    check(ok && monotone, detail)
}

fn storage() -> Outcome {
    let s = storage_report(&SimConfig::with_cores(128));
    let kb = |b: f64| b / 1024.0;
    let items = [
        ("bloom", kb(s.bloom_bytes as f64), 16.0),
        ("mppp", kb(s.mppp_reference_bytes), 68.63),
        ("total", s.total_kb(), 84.85),
    ];
    let mut ok = (s.icm_bytes, s.ctm_bytes, s.lut_bytes) == (16, 16, 200);
    let mut detail = format!("icm={}B ctm={}B lut={}B", s.icm_bytes, s.ctm_bytes, s.lut_bytes);
    for (name, got, want) in items {
        ok &= (got - want).abs() <= 0.05;
        detail += &format!(" {name}={got:.3}KB");
    }
    check(ok, detail)
}

fn truth_table() -> Outcome {
    let paths =
        [(CombinerPath::Warming, 255, 50.0), (CombinerPath::HighLoad, 256, 10.5), (CombinerPath::LowLoad, 256, 10.0)];
    let mut cases = 0;
    let mut wrong = Vec::new();
    for (path, rc, l2_mpki) in paths {
        for seen in [false, true] {
            for mppp_dead in [false, true] {
                let inputs = CombinerInputs { seen, mppp_dead, rc, warmup_th: 256, l2_mpki, mpki_th: 10.0 };
                let expect = match path {
                    CombinerPath::Warming => !mppp_dead,
                    CombinerPath::HighLoad => seen && !mppp_dead,
                    CombinerPath::LowLoad => seen || !mppp_dead,
                };
                cases += 1;
                if inputs.path() != path || combined_predict(&inputs) != expect {
                    wrong.push(format!("{path:?}/seen={seen}/dead={mppp_dead}"));
                }
            }
        }
    }
    check(wrong.is_empty(), format!("{cases} cases, mismatches: {wrong:?}"))
}

/// Parked blocks must return through a demand before re-entering the LLC or
/// being sent up again.
fn second_chance_violations(events: &[Event]) -> usize {
    let mut parked = BTreeSet::new();
    let mut bad = 0;
    for e in events {
        let Event::Transfer { packet, block, to, .. } = *e else { continue };
        match (packet, to) {
            (Packet::WriteUp, _) => bad += usize::from(!parked.insert(block)),
            (Packet::DataResponse, _) | (_, Endpoint::Memory) => {
                parked.remove(&block);
            }
            (Packet::WritebackDirty | Packet::WritebackClean, Endpoint::Llc) => {
                bad += usize::from(parked.contains(&block))
            }
            _ => {}
        }
    }
    bad
}

fn circular_harvesting() -> Outcome {
    // Core 0 critical, cores 1 and 2 lend. Every cache level is a single set.
    let mut c = SimConfig::with_cores(3);
    c.l1 = geometry(128, 2, 1);
    c.l2 = geometry(256, 4, 12);
    c.llc = geometry(192, 3, 25);
    c.mode = Mode::L2h;
    c.predictor.sampler_sets = 1;
    c.balancer.idle_cores = CoreMask::from_cores([1, 2]);
    c.balancer.critical_cores = CoreMask::from_cores([0]);
    let x = 0x10_0000u64;
    let mut script = vec![MemoryAccess { core: 0, op: Op::Write, address: x, pc: 0x400, icount_delta: 1 }];
    script.extend((1..=40).map(|i| MemoryAccess {
        core: 0,
        op: Op::Read,
        address: x + i * 64,
        pc: 0x404,
        icount_delta: 1,
    }));
    let (m, _) = simulate(c, &script);
    let trail: Vec<(Packet, Endpoint, Endpoint)> = m
        .events()
        .iter()
        .filter_map(|e| match *e {
            Event::Transfer { packet, block, from, to } if block == x => Some((packet, from, to)),
            _ => None,
        })
        .collect();
    let lender = trail.iter().find_map(|&(p, _, to)| match (p, to) {
        (Packet::WriteUp, Endpoint::L2(l)) => Some(l),
        _ => None,
    });
    let expected = lender.map(|l| {
        vec![
            (Packet::DataResponse, Endpoint::Memory, Endpoint::Core(0)),
            (Packet::SnoopCheck, Endpoint::L2(0), Endpoint::Directory),
            (Packet::WritebackDirty, Endpoint::L2(0), Endpoint::Llc),
            (Packet::SnoopCheck, Endpoint::Llc, Endpoint::Directory),
            (Packet::WriteUp, Endpoint::Llc, Endpoint::L2(l)),
            (Packet::SnoopCheck, Endpoint::L2(l), Endpoint::Directory),
            (Packet::WritebackDirty, Endpoint::L2(l), Endpoint::Memory),
        ]
    });
    let scripted = expected.as_ref() == Some(&trail) && m.audit().is_ok();

    // Random multi-core traces with two active cores, one critical.
    let mut c = SimConfig::with_cores(4);
    c.l1 = geometry(512, 2, 1);
    c.l2 = geometry(2048, 4, 12);
    c.llc = geometry(4096, 4, 25);
    c.mode = Mode::L2h;
    c.predictor.sampler_sets = 16;
    c.predictor.warmup_th = 32;
    c.predictor.bloom_reset_interval = 512;
    c.balancer.mpki_epoch = 5000;
    c.balancer.idle_cores = CoreMask::from_cores([2, 3]);
    c.balancer.critical_cores = CoreMask::from_cores([0]);
    let mut violations = 0;
    let mut send_ups = 0;
    for seed in 0..3u64 {
        let mut rng = SplitMix64::new(seed);
        let random: Vec<MemoryAccess> = (0..100_000)
            .map(|_| MemoryAccess {
                core: rng.below(2) as usize,
                op: if rng.below(4) == 0 { Op::Write } else { Op::Read },
                address: rng.below(512) << 6,
                pc: 0x400 + rng.below(16) * 4,
                icount_delta: 1 + rng.below(4) as u32,
            })
            .collect();
        let (m, _) = simulate(c.clone(), &random);
        violations += second_chance_violations(m.events());
        send_ups += m.stats().sent_up;
    }
    check(
        scripted && violations == 0 && send_ups > 0,
        format!(
            "scripted trail {} ({} packets); random scan: {send_ups} send-ups, {violations} violations",
            if scripted { "matches" } else { "differs" },
            trail.len()
        ),
    )
}

fn capacity_harvest() -> Outcome {
    let footprint = 760u64 << 10;
    let lines = footprint / 64;
    let sweeps = 6;
    let t = trace(
        WorkloadKind::WorkingSetLoop,
        WorkloadParams { footprint_bytes: footprint, access_count: lines * sweeps, ..Default::default() },
        0,
        1,
    );
    let steady = |served: &[ServedBy]| -> f64 {
        let tail = &served[(2 * lines) as usize..];
        let llc_refs = tail.iter().filter(|s| !matches!(s, ServedBy::L1 | ServedBy::L2)).count();
        let memory = tail.iter().filter(|s| matches!(s, ServedBy::Memory)).count();
        memory as f64 / llc_refs.max(1) as f64
    };
    let config = scaled(Mode::Baseline, &[], &[]);
    let mut oracle = Oracle::new(config.l1, config.l2, config.llc);
    let (_, base) = simulate(config, &t);
    let oracle_agrees = t.iter().zip(&base).all(|(a, s)| {
        let want = match oracle.access(a.address) {
            Served::L1 => ServedBy::L1,
            Served::L2 => ServedBy::L2,
            Served::Llc => ServedBy::Llc,
            Served::Memory => ServedBy::Memory,
        };
        want == *s
    });
    let (m, l2h) = simulate(scaled(Mode::L2h, &[1, 2, 3], &[]), &t);
    let (b, h) = (steady(&base), steady(&l2h));
    check(
        oracle_agrees && b >= 0.90 && h <= 0.10 && m.audit().is_ok(),
        format!("baseline steady miss rate {b:.4} (oracle agrees: {oracle_agrees}), harvested {h:.4}"),
    )
}

fn streaming() -> Outcome {
    let t = trace(
        WorkloadKind::Streaming,
        WorkloadParams { footprint_bytes: 100_000 * 64, access_count: 100_000, ..Default::default() },
        0,
        1,
    );
    let (m, _) = simulate(scaled(Mode::L2h, &[1, 2, 3], &[0]), &t);
    let (mut warm, mut warm_up, mut all, mut all_up) = (0u64, 0u64, 0u64, 0u64);
    let mut warmed = false;
    for (e, up) in decisions(m.events()) {
        let Event::Decision { path, .. } = e else { unreachable!() };
        warmed |= *path != CombinerPath::Warming;
        all += 1;
        all_up += up as u64;
        if warmed {
            warm += 1;
            warm_up += up as u64;
        }
    }
    let frac = warm_up as f64 / warm.max(1) as f64;
    check(
        warm > 0 && frac <= 0.02,
        format!("{warm_up} send-ups over {warm} LLC evictions after warmup ({frac:.4}); {all_up}/{all} overall"),
    )
}

fn criticality() -> Outcome {
    let critical = trace(
        WorkloadKind::Streaming,
        WorkloadParams {
            footprint_bytes: 1 << 36,
            access_count: 400_000,
            icount_min: 24,
            icount_max: 25,
            ..Default::default()
        },
        0,
        3,
    );
    let background = trace(
        WorkloadKind::Zipfian,
        WorkloadParams { footprint_bytes: 4 << 20, access_count: 400_000, zipf_s: 0.6, ..Default::default() },
        1,
        4,
    );
    let (m, _) = simulate(scaled(Mode::L2h, &[2, 3], &[0]), interleave(&[&critical, &background]));
    let (mut nc, mut nc_up, mut cr, mut cr_up) = (0u64, 0u64, 0u64, 0u64);
    for (e, up) in decisions(m.events()) {
        let Event::Decision { alive: true, critical, .. } = e else { continue };
        if *critical {
            cr += 1;
            cr_up += up as u64;
        } else {
            nc += 1;
            nc_up += up as u64;
        }
    }
    let mpki = m.harvester().balancer().monitor().average(CoreMask::from_cores([0]));
    let frac = nc_up as f64 / nc.max(1) as f64;
    check(
        nc >= 5000 && (frac - 0.12).abs() <= 0.03 && cr > 0 && cr_up == cr,
        format!("critical MPKI {mpki:.1}; background {nc_up}/{nc} accepted ({frac:.4}); critical {cr_up}/{cr}"),
    )
}

fn csv_bytes(run_id: &str, config: &SimConfig, stats: &l2h_core::SimStats) -> Vec<u8> {
    let mut buf = Vec::new();
    report::write_csv(&mut buf, &[report::row(run_id, config, stats)]).expect("in-memory csv");
    buf
}

fn baseline_equivalence() -> Outcome {
    let mut differing = Vec::new();
    let suite = bundled_suite();
    for (name, spec) in &suite {
        let traces = generate(spec).expect("bundled workload");
        let streams: Vec<&[MemoryAccess]> = traces.iter().map(|t| t.accesses.as_slice()).collect();
        let base = SimConfig { mode: Mode::Baseline, ..SimConfig::default() };
        let l2h = SimConfig { mode: Mode::L2h, ..SimConfig::default() };
        let a = l2h_core::run(base.clone(), &streams).expect("baseline run");
        let b = l2h_core::run(l2h.clone(), &streams).expect("l2h run");
        if csv_bytes(name, &base, &a) != csv_bytes(name, &l2h, &b) {
            differing.push(name.clone());
        }
    }
    check(differing.is_empty(), format!("{} bundled traces, differing: {differing:?}", suite.len()))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = SplitMix64::new(0xACCE);
    let mut mismatches = Vec::new();
    let mut accesses = 0usize;
    for g in 0..3 {
        let mut pick = |sets: &[u64], ways: &[u32], latency| {
            let s = sets[rng.below(sets.len() as u64) as usize];
            let w = ways[rng.below(ways.len() as u64) as usize];
            geometry(s * w as u64 * 64, w, latency)
        };
        let l1 = pick(&[1, 2, 4, 8], &[1, 2, 4], 1);
        let l2 = pick(&[4, 8, 16, 12], &[2, 4, 8], 12);
        let llc = pick(&[8, 16, 24, 32], &[2, 4, 8, 16], 25);
        for t in 0..20 {
            let footprint = 64 + rng.below(2048);
            let mut addr = rng.below(footprint);
            let accesses_here: Vec<MemoryAccess> = (0..4000)
                .map(|_| {
                    addr = if rng.below(4) == 0 { rng.below(footprint) } else { (addr + rng.below(3)) % footprint };
                    MemoryAccess {
                        core: 0,
                        op: if rng.below(5) == 0 { Op::Write } else { Op::Read },
                        address: (addr << 6) | rng.below(64),
                        pc: 0x400,
                        icount_delta: 1,
                    }
                })
                .collect();
            let mut c = SimConfig::with_cores(1);
            c.l1 = l1;
            c.l2 = l2;
            c.llc = llc;
            c.mode = Mode::Baseline;
            let mut oracle = Oracle::new(l1, l2, llc);
            let (_, served) = simulate(c, &accesses_here);
            accesses += served.len();
            let first_diff = accesses_here.iter().zip(&served).position(|(a, s)| {
                let want = match oracle.access(a.address) {
                    Served::L1 => ServedBy::L1,
                    Served::L2 => ServedBy::L2,
                    Served::Llc => ServedBy::Llc,
                    Served::Memory => ServedBy::Memory,
                };
                want != *s
            });
            if let Some(i) = first_diff {
                mismatches.push(format!("geometry {g} trace {t} access {i}"));
            }
        }
    }
    check(mismatches.is_empty(), format!("60 runs, {accesses} accesses, mismatches: {mismatches:?}"))
}

fn bloom_properties() -> Outcome {
    let mut rng = SplitMix64::new(11);
    let mut f = BloomFilter::new(32768, u32::MAX, 256, &mut SplitMix64::new(3));
    let mut inserted = Vec::new();
    let mut misses = 0;
    for _ in 0..10_000 {
        let b = rng.next_u64() & !63;
        f.insert(b);
        inserted.push(b);
        misses += usize::from(!f.query(b));
    }
    misses += inserted.iter().filter(|&&b| !f.query(b)).count();

    let mut f = BloomFilter::new(32768, 4096, 256, &mut SplitMix64::new(4));
    let members: BTreeSet<u64> = (0..4096).map(|i| (i * 7919 + 13) << 6).collect();
    for &b in &members {
        f.insert(b);
    }
    let probes = 100_000u64;
    let fp = (0..probes).map(|i| (1 << 40) + (i << 6)).filter(|b| f.query(*b)).count();
    let fpr = fp as f64 / probes as f64;
    f.reset();
    let cleared = members.iter().all(|&b| !f.query(b)) && f.insert_count() == 0;
    check(
        misses == 0 && fpr <= 0.01 && cleared,
        format!("false negatives {misses}; fpr at 4096 inserts {fpr:.5}; reset clears: {cleared}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let critical = trace(
        WorkloadKind::Streaming,
        WorkloadParams {
            footprint_bytes: 1 << 30,
            access_count: 60_000,
            icount_min: 24,
            icount_max: 25,
            ..Default::default()
        },
        0,
        3,
    );
    let background = trace(
        WorkloadKind::Zipfian,
        WorkloadParams {
            footprint_bytes: 4 << 20,
            access_count: 60_000,
            zipf_s: 0.6,
            write_ratio: 0.2,
            ..Default::default()
        },
        1,
        4,
    );
    for (core, t) in [(0, &critical), (1, &background)] {
        l2h_sim::write_trace(&dir.path().join(format!("core{core}.trace")), t).map_err(|e| e.to_string())?;
    }
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "cores = 4\nmode = l2h\n[cache.l1]\nsize = 8KB\nways = 4\n[cache.l2]\nsize = 128KB\nways = 8\n\
         [cache.llc]\nsize = 512KB\nways = 16\n[balancer]\ncritical_cores = 0\nidle_cores = 2,3\n",
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_l2hsim"))
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--trace")
            .arg(format!("0={}", dir.path().join("core0.trace").display()))
            .arg("--trace")
            .arg(format!("1={}", dir.path().join("core1.trace").display()))
            .args(["--seed", "42", "--events-log", "--out"])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("run {run} exited with {status}"));
        }
        let read = |name: &str| std::fs::read(out.join(name)).map_err(|e| e.to_string());
        outputs.push((read("stats.csv")?, read("events.log")?));
    }
    let same_stats = outputs[0].0 == outputs[1].0;
    let same_events = outputs[0].1 == outputs[1].1;
    check(
        same_stats && same_events,
        format!(
            "stats.csv identical: {same_stats} ({} bytes); events.log identical: {same_events}",
            outputs[0].0.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("chance curve", chance_curve),
        ("storage accounting", storage),
        ("combiner truth table", truth_table),
        ("circular harvesting prevention", circular_harvesting),
        ("capacity harvest", capacity_harvest),
        ("streaming discipline", streaming),
        ("criticality protection", criticality),
        ("baseline equivalence", baseline_equivalence),
        ("oracle equivalence", oracle_equivalence),
        ("bloom properties", bloom_properties),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {name}: {verdict} [{secs:.2}s] {detail}", i + 1);
    }
    if failed == 0 {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
