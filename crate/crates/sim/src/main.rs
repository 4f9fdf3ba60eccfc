use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use l2h_core::{compare, generate, storage_report};
use l2h_sim::report::{self, read_csv};
use l2h_sim::runner::{self, collect_bindings, parse_axis_values, Axis};
use l2h_sim::{trace, workload, RunConfig, RunManifest};

#[derive(Parser)]
#[command(name = "l2hsim", version, about = "Multi-core cache hierarchy simulator with idle-L2 harvesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Machine configuration file. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bind a trace to a core, as `core=path`. Repeatable.
    #[arg(long = "trace", value_name = "CORE=PATH", required = true)]
    traces: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write events.log.
    #[arg(long)]
    events_log: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write stats.csv.
    Run(RunArgs),
    /// Generate trace files from a workload spec.
    Gen {
        spec: PathBuf,
        #[arg(long, default_value = "traces")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one simulation per axis value and write a merged CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// llc_size, lender_count or mpki_th.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `8MB,12MB`.
        #[arg(long)]
        values: String,
    },
    /// Compare a candidate stats.csv against a reference over the same trace.
    Compare { reference: PathBuf, candidate: PathBuf },
    /// Print the harvester's storage cost.
    StorageReport {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured core count.
        #[arg(long)]
        cores: Option<usize>,
    },
}

fn manifest(args: &RunArgs) -> anyhow::Result<RunManifest> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(RunManifest {
        config,
        traces: collect_bindings(&args.traces)?,
        out_dir: args.out.clone(),
        seed: args.seed,
        events_log: args.events_log,
    })
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let m = manifest(args)?;
    let sim = m.resolve()?;
    let traces = m.load_traces()?;
    let out = runner::execute(&sim, &traces, m.events_log)?;
    create_dir(&m.out_dir)?;
    report::write_csv_file(&m.out_dir.join("stats.csv"), &[report::row("run", &sim, &out.stats)])?;
    if m.events_log {
        let path = m.out_dir.join("events.log");
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        report::write_events(io::BufWriter::new(file), &out.events)?;
    }
    Ok(())
}

fn cmd_gen(spec: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut w = workload::parse_workload(spec, &text)?;
    if let Some(seed) = seed {
        w.seed = seed;
    }
    let traces = generate(&w).map_err(|e| anyhow!("{}: {e}", spec.display()))?;
    create_dir(out)?;
    for t in traces {
        let path = out.join(format!("core{}.trace", t.core));
        trace::write_trace(&path, &t.accesses)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs, axis: &str, values: &str) -> anyhow::Result<()> {
    let m = manifest(args)?;
    let axis = Axis::parse(axis)?;
    let values = parse_axis_values(axis, values)?;
    let points = values
        .iter()
        .map(|&v| Ok((format!("{}={v}", axis.name()), runner::expand(&m, axis, v)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let traces = m.load_traces()?;
    let results = runner::run_sweep(points, &traces, runner::sweep_threads()?)?;
    create_dir(&m.out_dir)?;
    let mut rows = Vec::new();
    for (i, p) in results.iter().enumerate() {
        let row = report::row(&p.run_id, &p.config, &p.stats);
        report::write_csv_file(&m.out_dir.join(format!("run{i}.csv")), std::slice::from_ref(&row))?;
        rows.push(row);
    }
    report::write_csv_file(&m.out_dir.join("sweep.csv"), &rows)
}

fn load_rows(path: &Path) -> anyhow::Result<Vec<report::StatsRow>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_csv(file).with_context(|| path.display().to_string())?;
    if rows.is_empty() {
        return Err(anyhow!("{}: no rows", path.display()));
    }
    Ok(rows)
}

fn cmd_compare(reference: &Path, candidate: &Path) -> anyhow::Result<()> {
    let base = load_rows(reference)?;
    let mut out = io::stdout().lock();
    writeln!(out, "run_id,mpki_ratio,traffic_ratio,data_traffic_ratio,snoop_traffic_ratio,amat_speedup")?;
    for row in load_rows(candidate)? {
        let r = compare(&base[0].stats, &row.stats).map_err(|e| anyhow!("{}: {e}", row.run_id))?;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            row.run_id, r.mpki_ratio, r.traffic_ratio, r.data_traffic_ratio, r.snoop_traffic_ratio, r.amat_speedup
        )?;
    }
    Ok(())
}

fn cmd_storage(config: Option<&Path>, cores: Option<usize>) -> anyhow::Result<()> {
    let mut sim = match config {
        Some(path) => RunConfig::load(path)?.sim,
        None => RunConfig::default().sim,
    };
    if let Some(n) = cores {
        let base = sim.clone();
        sim = l2h_core::SimConfig::with_cores(n);
        sim.predictor = base.predictor;
        sim.l2 = base.l2;
    }
    let s = storage_report(&sim);
    let kb = |b: f64| b / l2h_core::engine::KIB;
    let mut out = io::stdout().lock();
    writeln!(out, "cores                {}", s.core_count)?;
    writeln!(out, "bloom filter         {:>10.2} KB", kb(s.bloom_bytes as f64))?;
    writeln!(out, "perceptron           {:>10.2} KB  (model {} B)", kb(s.mppp_reference_bytes), s.mppp_model_bytes)?;
    writeln!(out, "idle core map        {:>10} B", s.icm_bytes)?;
    writeln!(out, "critical task map    {:>10} B", s.ctm_bytes)?;
    writeln!(out, "chance table         {:>10} B", s.lut_bytes)?;
    writeln!(out, "total                {:>10.2} KB", s.total_kb())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gen { spec, out, seed } => cmd_gen(spec, out, *seed),
        Command::Sweep { run, axis, values } => cmd_sweep(run, axis, values),
        Command::Compare { reference, candidate } => cmd_compare(reference, candidate),
        Command::StorageReport { config, cores } => cmd_storage(config.as_deref(), *cores),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("l2hsim: {e:#}");
            ExitCode::FAILURE
        }
    }
}
