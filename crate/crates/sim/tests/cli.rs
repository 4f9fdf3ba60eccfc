//! End-to-end checks of the `l2hsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use l2h_sim::report::{read_csv, COLUMNS};

fn l2hsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2hsim")).args(args).output().expect("spawn l2hsim")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "cores = 4\nmode = l2h\n[cache.l1]\nsize = 1KB\nways = 2\n[cache.l2]\nsize = 4KB\nways = 4\n\
                     [cache.llc]\nsize = 8KB\nways = 4\n[l2h]\nsampler_sets = 8\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self { dir: tempfile::tempdir().unwrap() };
        f.write("small.cfg", SMALL);
        let mut t = String::from("# core,op,address,pc,icount\n");
        for i in 0..600u64 {
            let op = if i % 5 == 0 { 'W' } else { 'R' };
            t += &format!("0,{op},{:#x},0x400,2\n", (i % 200) * 64);
        }
        f.write("core0.trace", &t);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }
}

fn rows(path: &Path) -> Vec<l2h_sim::report::StatsRow> {
    read_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn run_writes_stats_and_events() {
    let f = Fixture::new();
    let out = f.arg("out");
    let o = l2hsim(&[
        "run",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &format!("0={}", f.arg("core0.trace")),
        "--out",
        &out,
        "--events-log",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(f.path("out/stats.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), COLUMNS.join(","));
    let r = rows(&f.path("out/stats.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].mode, "l2h");
    let events = fs::read_to_string(f.path("out/events.log")).unwrap();
    assert_eq!(events.lines().filter(|l| l.starts_with("demand ")).count(), 600);
}

#[test]
fn garbage_line_is_reported_with_its_number() {
    let f = Fixture::new();
    f.write(
        "bad.trace",
        "# header\n0,R,0x0,0x400,1\n0,R,0x40,0x400,1\n\n0,W,0x80,0x400,1\n0,R,0xc0,0x400,1\n0,R,zz,0x400,1\n",
    );
    let o = l2hsim(&[
        "run",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &format!("0={}", f.arg("bad.trace")),
        "--out",
        &f.arg("o"),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
    assert!(!f.path("o/stats.csv").exists());
}

#[test]
fn record_for_another_core_is_rejected() {
    let f = Fixture::new();
    f.write("wrong.trace", "0,R,0x0,0x400,1\n1,R,0x40,0x400,1\n");
    let o = l2hsim(&[
        "run",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &format!("0={}", f.arg("wrong.trace")),
        "--out",
        &f.arg("o"),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn contradictory_configs_are_rejected() {
    let f = Fixture::new();
    let trace = format!("0={}", f.arg("core0.trace"));
    f.write(
        "baseline_idle.cfg",
        &SMALL
            .replace("mode = l2h", "mode = baseline")
            .replace("sampler_sets = 8\n", "sampler_sets = 8\n[balancer]\nidle_cores = 1,2\n"),
    );
    f.write("crit_idle.cfg", &format!("{SMALL}[balancer]\ncritical_cores = 2\nidle_cores = 2,3\n"));
    f.write("unknown.cfg", &format!("{SMALL}[balancer]\nlenders = 2\n"));
    for cfg in ["baseline_idle.cfg", "crit_idle.cfg", "unknown.cfg"] {
        let o = l2hsim(&["run", "--config", &f.arg(cfg), "--trace", &trace, "--out", &f.arg("o")]);
        assert!(!o.status.success(), "{cfg} accepted");
        assert!(!f.path("o/stats.csv").exists());
    }
    let o = l2hsim(&["run", "--config", &f.arg("unknown.cfg"), "--trace", &trace]);
    assert!(stderr(&o).contains("line 15"), "{}", stderr(&o));
    let o = l2hsim(&["run", "--config", &f.arg("small.cfg"), "--trace", &trace, "--trace", &trace.replace("0=", "1=")]);
    assert!(!o.status.success(), "core 0 records accepted under a core 1 binding");
}

#[test]
fn auto_idle_respects_bindings_and_critical_cores() {
    let f = Fixture::new();
    f.write("crit.cfg", &format!("{SMALL}[balancer]\ncritical_cores = 1\n"));
    let o = l2hsim(&[
        "run",
        "--config",
        &f.arg("crit.cfg"),
        "--trace",
        &format!("0={}", f.arg("core0.trace")),
        "--out",
        &f.arg("o"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(f.path("o/stats.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "2", "cores 2 and 3 lend");
}

#[test]
fn sweeps_merge_one_row_per_value() {
    let f = Fixture::new();
    let trace = format!("0={}", f.arg("core0.trace"));
    let o = l2hsim(&[
        "sweep",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &trace,
        "--out",
        &f.arg("llc"),
        "--axis",
        "llc_size",
        "--values",
        "8KB,12KB",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&f.path("llc/sweep.csv"));
    assert_eq!(r.iter().map(|r| r.run_id.as_str()).collect::<Vec<_>>(), ["llc_size=8KB", "llc_size=12KB"]);
    assert!(f.path("llc/run0.csv").exists() && f.path("llc/run1.csv").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_l2hsim"))
        .env("L2HSIM_THREADS", "2")
        .args([
            "sweep",
            "--config",
            &f.arg("small.cfg"),
            "--trace",
            &trace,
            "--out",
            &f.arg("lend"),
            "--axis",
            "lender_count",
            "--values",
            "0,1,2,3",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(f.path("lend/sweep.csv")).unwrap();
    let lenders: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(lenders, ["0", "1", "2", "3"]);
    let modes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["baseline", "l2h", "l2h", "l2h"]);

    let o = l2hsim(&[
        "sweep",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &trace,
        "--axis",
        "mpki_th",
        "--values",
        "5,10,5",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
    let o = l2hsim(&[
        "sweep",
        "--config",
        &f.arg("small.cfg"),
        "--trace",
        &trace,
        "--axis",
        "lender_count",
        "--values",
        "4",
    ]);
    assert!(!o.status.success());
}

#[test]
fn gen_is_deterministic_and_feeds_run() {
    let f = Fixture::new();
    let spec = f.write(
        "mix.wl",
        "kind = mix\nseed = 3\n[core.0]\nkind = zipf\nfootprint = 64KB\naccesses = 2000\nwrite_ratio = 0.25\n\
         [core.1]\nkind = stream\nfootprint = 1MB\naccesses = 2000\n",
    );
    let spec = spec.display().to_string();
    for out in ["g1", "g2"] {
        let o = l2hsim(&["gen", &spec, "--out", &f.arg(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for core in 0..2 {
        let name = format!("core{core}.trace");
        assert_eq!(fs::read(f.path("g1").join(&name)).unwrap(), fs::read(f.path("g2").join(&name)).unwrap());
    }
    let t0 = format!("0={}", f.path("g1/core0.trace").display());
    let t1 = format!("1={}", f.path("g1/core1.trace").display());
    let o = l2hsim(&["run", "--config", &f.arg("small.cfg"), "--trace", &t0, "--trace", &t1, "--out", &f.arg("r")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&f.path("r/stats.csv"));
    assert_eq!(r[0].stats.level_accesses(l2h_core::CacheLevel::L1), 4000);
}

#[test]
fn compare_against_a_baseline() {
    let f = Fixture::new();
    let trace = format!("0={}", f.arg("core0.trace"));
    f.write("base.cfg", &SMALL.replace("mode = l2h", "mode = baseline"));
    for (cfg, out) in [("base.cfg", "b"), ("small.cfg", "h")] {
        let o = l2hsim(&["run", "--config", &f.arg(cfg), "--trace", &trace, "--out", &f.arg(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = l2hsim(&["compare", &f.arg("b/stats.csv"), &f.arg("h/stats.csv")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("run_id,mpki_ratio,"));
    assert_eq!(text.lines().count(), 2);

    let o = l2hsim(&["compare", &f.arg("b/stats.csv"), &f.arg("b/stats.csv")]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("run,1.000000,1.000000"), "{text}");
}

#[test]
fn storage_report_for_128_cores() {
    let o = l2hsim(&["storage-report", "--cores", "128"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("84.86 KB"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("idle core map") && l.ends_with("16 B")), "{text}");
}
