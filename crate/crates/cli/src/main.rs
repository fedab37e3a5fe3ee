use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use cppa::cppa::{ConvergenceTrace, CppaConfig};
use cppa::ctap::{cppa_ctap, CtapConfig, OdDemand, TrafficNetwork};
use cppa::gen::{grid_on_pipe, hearn_network, random_flow_instance, random_traffic_instance, three_path_fixture, GenSpec, Sampling};
use cppa::io::{
    format_sig, parse_flow_instance, parse_traffic_instance, to_json, write_demands, write_flow_instance, write_report,
    write_trace_csv, IoError, ReportFormat, RunReport, SweepRow,
};
use cppa::maxflow::{cppa_maxflow, oracle_maxflow};
use cppa::mincost::{cppa_mcmf, oracle_mcmf};
use cppa::{Graph, Mode, NodeId, RunStatus};

#[derive(Parser)]
#[command(name = "cppa", version, about = "Capacitated Physarum flow solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum flow through a virtual-path augmented network.
    Maxflow(FlowArgs),
    /// Minimum-cost maximum flow.
    Mcmf {
        #[command(flatten)]
        flow: FlowArgs,
        /// Rerun with each of these epsilons and report the sweep.
        #[arg(long, value_delimiter = ',')]
        epsilon_sweep: Vec<f64>,
    },
    /// Traffic assignment with hard link capacities.
    Ctap(CtapArgs),
    /// Write a generated instance.
    Gen(GenArgs),
    /// Timed repeats over generated instances.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FlowArgs {
    /// DIMACS instance file.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    input: Option<PathBuf>,
    /// Random instance, e.g. `n=40,seed=3,p=0.7[,sampling=ordered]`.
    #[arg(long)]
    gen: Option<String>,
    #[arg(long, default_value_t = 0.85)]
    k: f64,
    #[arg(long, default_value_t = 5e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Flow rule; defaults to the instance's own mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Also run the exact solver and report the gap.
    #[arg(long)]
    oracle: bool,
    /// Report path (`.json`, or `.csv` for the summary table).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CtapArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    demands: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    k: f64,
    #[arg(long, default_value_t = 1e-4)]
    rgap_target: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Plain adaptation without capacity control.
    #[arg(long)]
    uncapacitated: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Grid,
    Hearn,
    Threepath,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file. Traffic instances also write `<out>.demands`.
    #[arg(long)]
    out: PathBuf,
    /// Node count for `random`.
    #[arg(long, default_value_t = 40)]
    n: usize,
    /// Link probability for `random`.
    #[arg(long, default_value_t = 0.7)]
    p: f64,
    /// Frame side and frame count for `grid`.
    #[arg(long, default_value_t = 3)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Suite {
    Mf,
    Mcmf,
    Ctap,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, value_delimiter = ',', default_value = "20,40,60")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn parse_failure(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 4, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Maxflow(args) => run_flow(&args, None, false),
        Command::Mcmf { flow, epsilon_sweep } => run_flow(&flow, Some(&epsilon_sweep), true),
        Command::Ctap(args) => run_ctap(&args),
        Command::Gen(args) => run_gen(&args).map(|_| true).map_err(Failure::from),
        Command::Bench(args) => run_bench(&args).map(|_| true).map_err(Failure::from),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn gen_spec(text: &str) -> anyhow::Result<GenSpec> {
    let (mut n, mut seed, mut p, mut sampling) = (None, 0, 0.7, Sampling::Unordered);
    for part in text.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, found `{part}`"))?;
        match key.trim() {
            "n" => n = Some(value.parse().context("n")?),
            "seed" => seed = value.parse().context("seed")?,
            "p" => p = value.parse().context("p")?,
            "sampling" => {
                sampling = match value {
                    "ordered" => Sampling::Ordered,
                    "unordered" => Sampling::Unordered,
                    other => bail!("unknown sampling `{other}`"),
                }
            }
            other => bail!("unknown generator key `{other}`"),
        }
    }
    let n: usize = n.ok_or_else(|| anyhow!("generator spec needs n"))?;
    if n < 2 || !(0.0..=1.0).contains(&p) {
        bail!("need n >= 2 and p in [0, 1]");
    }
    let mut spec = GenSpec::new(n, seed).with_probability(p);
    spec.sampling = sampling;
    Ok(spec)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)
}

fn io_failure(e: IoError) -> Failure {
    Failure { code: 2, error: e.into() }
}

/// Loads the instance and returns it with its descriptor and seed.
fn load_flow(args: &FlowArgs) -> Result<(Graph, NodeId, NodeId, String, Option<u64>), Failure> {
    if let Some(path) = &args.input {
        let file = parse_flow_instance(&read(path)?).map_err(io_failure)?;
        return Ok((file.graph, file.source, file.sink, path.display().to_string(), None));
    }
    let text = args.gen.as_deref().unwrap_or_default();
    let spec = gen_spec(text).map_err(parse_failure)?;
    let inst = random_flow_instance(&spec);
    let desc = format!("gen:{text}");
    Ok((inst.graph, inst.source, inst.sink, desc, Some(inst.seed)))
}

/// `R.json` -> `R<suffix>`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn emit(report: &mut RunReport, out: Option<&Path>, traces: &[(&str, &ConvergenceTrace)]) -> anyhow::Result<()> {
    let Some(out) = out else {
        print!("{}", write_report(report, ReportFormat::Json));
        return Ok(());
    };
    for (i, (suffix, trace)) in traces.iter().enumerate() {
        let path = sibling(out, suffix);
        fs::write(&path, write_trace_csv(trace)).with_context(|| format!("writing {}", path.display()))?;
        if i == 0 {
            report.trace = path.file_name().map(|s| s.to_string_lossy().into_owned());
        }
    }
    let format = match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => ReportFormat::Csv,
        _ => ReportFormat::Json,
    };
    fs::write(out, write_report(report, format)).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", write_report(report, ReportFormat::Csv));
    Ok(())
}

fn run_flow(args: &FlowArgs, sweep: Option<&[f64]>, mcmf: bool) -> Result<bool, Failure> {
    let (graph, source, sink, desc, seed) = load_flow(args)?;
    let config = CppaConfig {
        k: args.k,
        epsilon: args.epsilon,
        max_iterations: args.max_iters,
        mode: args.mode.unwrap_or(graph.mode()),
        ..Default::default()
    };
    config.validate().map_err(|e| parse_failure(e.into()))?;
    if !mcmf {
        let start = Instant::now();
        let result = cppa_maxflow(&graph, source, sink, &config).map_err(|e| Failure::from(anyhow!(e)))?;
        let wall = start.elapsed().as_secs_f64();
        let oracle = if args.oracle {
            let g = graph.with_mode(config.mode).map_err(|e| Failure::from(anyhow!(e)))?;
            Some(oracle_maxflow(&g, source, sink).map_err(|e| Failure::from(anyhow!(e)))?.value)
        } else {
            None
        };
        let mut report = RunReport::maxflow(&desc, &config, seed, &graph, &result, oracle);
        report.wall_time_s = wall;
        emit(&mut report, args.out.as_deref(), &[(".trace.csv", &result.trace)])?;
        return Ok(result.status == RunStatus::Converged);
    }

    let g = graph.with_mode(config.mode).map_err(|e| Failure::from(anyhow!(e)))?;
    let oracle = if args.oracle {
        let o = oracle_mcmf(&g, source, sink).map_err(|e| Failure::from(anyhow!(e)))?;
        Some((o.max_flow, o.min_cost))
    } else {
        None
    };
    let start = Instant::now();
    let result = cppa_mcmf(&graph, source, sink, &config).map_err(|e| Failure::from(anyhow!(e)))?;
    let wall = start.elapsed().as_secs_f64();
    let mut report = RunReport::mcmf(&desc, &config, seed, &graph, &result, oracle);
    report.wall_time_s = wall;
    for &epsilon in sweep.unwrap_or_default() {
        let cfg = CppaConfig { epsilon, ..config.clone() };
        cfg.validate().map_err(|e| parse_failure(e.into()))?;
        let r = cppa_mcmf(&graph, source, sink, &cfg).map_err(|e| Failure::from(anyhow!(e)))?;
        report.results.epsilon_sweep.push(SweepRow {
            epsilon,
            max_flow: r.max_flow,
            min_cost: r.min_cost,
            iterations: r.phase1_iterations + r.phase2_iterations,
            status: if r.phase1_status.is_converged() { r.phase2_status } else { r.phase1_status },
            cost_gap: oracle.map(|o| (r.min_cost - o.1).abs()),
        });
    }
    emit(
        &mut report,
        args.out.as_deref(),
        &[(".trace.csv", &result.phase2_trace), (".phase1.trace.csv", &result.phase1_trace)],
    )?;
    Ok(result.converged())
}

fn run_ctap(args: &CtapArgs) -> Result<bool, Failure> {
    let (network, demands) = parse_traffic_instance(&read(&args.network)?, &read(&args.demands)?).map_err(io_failure)?;
    let config = CtapConfig {
        k: args.k,
        rgap_target: args.rgap_target,
        max_iterations: args.max_iters,
        uncapacitated: args.uncapacitated,
        ..Default::default()
    };
    config.validate().map_err(|e| parse_failure(e.into()))?;
    let start = Instant::now();
    let result = cppa_ctap(&network, &demands, &config).map_err(|e| Failure::from(anyhow!(e)))?;
    let wall = start.elapsed().as_secs_f64();
    let desc = format!("{} {}", args.network.display(), args.demands.display());
    let mut report = RunReport::ctap(&desc, &config, &network, &result);
    report.wall_time_s = wall;
    emit(&mut report, args.out.as_deref(), &[(".trace.csv", &result.trace)])?;
    Ok(result.status == RunStatus::Converged)
}

fn write_traffic(out: &Path, network: &TrafficNetwork, demands: &[OdDemand]) -> anyhow::Result<()> {
    fs::write(out, cppa::io::write_traffic_network(network))?;
    let mut dem = out.as_os_str().to_owned();
    dem.push(".demands");
    fs::write(PathBuf::from(dem), write_demands(demands))?;
    Ok(())
}

fn run_gen(args: &GenArgs) -> anyhow::Result<()> {
    let text = match args.kind {
        Kind::Random => {
            let spec = GenSpec::new(args.n, args.seed).with_probability(args.p);
            let inst = random_flow_instance(&spec);
            format!(
                "c random n={} p={} seed={}\n{}",
                args.n,
                args.p,
                inst.seed,
                write_flow_instance(&inst.graph, inst.source, inst.sink)
            )
        }
        Kind::Grid => {
            let g = grid_on_pipe(args.width, args.depth, args.seed, (1, 10));
            let sink = NodeId(g.node_count() - 1);
            format!(
                "c grid width={} depth={} seed={}\n{}",
                args.width,
                args.depth,
                args.seed,
                write_flow_instance(&g, NodeId(0), sink)
            )
        }
        Kind::Threepath => {
            let f = three_path_fixture();
            format!("c three-path fixture\n{}", write_flow_instance(&f.graph, f.source, f.sink))
        }
        Kind::Hearn => {
            let (net, dem) = hearn_network();
            return write_traffic(&args.out, &net, &dem).with_context(|| format!("writing {}", args.out.display()));
        }
    };
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))
}

#[derive(Serialize)]
struct BenchRow {
    size: usize,
    repeat: usize,
    seed: u64,
    instance: String,
    status: RunStatus,
    iterations: usize,
    wall_time_s: f64,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
}

#[derive(Serialize)]
struct BenchSummary {
    size: usize,
    runs: usize,
    converged: usize,
    mean_iterations: f64,
    mean_wall_time_s: f64,
    mean_gap: f64,
    max_gap: f64,
}

fn bench_one(suite: Suite, size: usize, repeat: usize, seed: u64, dir: &Path) -> anyhow::Result<BenchRow> {
    let spec = GenSpec::new(size, seed);
    let config = CppaConfig {
        epsilon: if suite == Suite::Mcmf { 1e-6 } else { 5e-5 },
        ..Default::default()
    };
    let name = format!("n{size}_r{repeat}");
    match suite {
        Suite::Ctap => {
            let (net, dem) = random_traffic_instance(&spec);
            let file = dir.join(format!("{name}.tntp"));
            write_traffic(&file, &net, &dem)?;
            let cfg = CtapConfig {
                parallel: false,
                ..Default::default()
            };
            let start = Instant::now();
            let r = cppa_ctap(&net, &dem, &cfg)?;
            let wall = start.elapsed().as_secs_f64();
            Ok(BenchRow {
                size,
                repeat,
                seed,
                instance: file.display().to_string(),
                status: r.status,
                iterations: r.iterations,
                wall_time_s: wall,
                value: r.rgap.unwrap_or(f64::NAN),
                oracle: None,
                gap: None,
            })
        }
        Suite::Mf | Suite::Mcmf => {
            let inst = random_flow_instance(&spec);
            let file = dir.join(format!("{name}.dimacs"));
            fs::write(&file, write_flow_instance(&inst.graph, inst.source, inst.sink))?;
            let start = Instant::now();
            let (status, iterations, value) = if suite == Suite::Mf {
                let r = cppa_maxflow(&inst.graph, inst.source, inst.sink, &config)?;
                (r.status, r.iterations, r.value())
            } else {
                let r = cppa_mcmf(&inst.graph, inst.source, inst.sink, &config)?;
                let status = if r.phase1_status.is_converged() { r.phase2_status } else { r.phase1_status };
                (status, r.phase1_iterations + r.phase2_iterations, r.min_cost)
            };
            let wall = start.elapsed().as_secs_f64();
            let oracle = if suite == Suite::Mf {
                oracle_maxflow(&inst.graph, inst.source, inst.sink)?.value
            } else {
                oracle_mcmf(&inst.graph, inst.source, inst.sink)?.min_cost
            };
            Ok(BenchRow {
                size,
                repeat,
                seed: inst.seed,
                instance: file.display().to_string(),
                status,
                iterations,
                wall_time_s: wall,
                value,
                oracle: Some(oracle),
                gap: Some((value - oracle).abs()),
            })
        }
    }
}

fn run_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let dir = args.out.join("instances");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let jobs: Vec<(usize, usize, u64)> = args
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(si, &size)| {
            (0..args.repeats).map(move |r| (size, r, args.seed + (si * args.repeats + r) as u64))
        })
        .collect();
    let rows: Vec<BenchRow> = jobs
        .par_iter()
        .map(|&(size, repeat, seed)| bench_one(args.suite, size, repeat, seed, &dir))
        .collect::<anyhow::Result<_>>()?;

    let mut summary = Vec::new();
    let mut csv = String::from("size,runs,converged,mean_iterations,mean_wall_time_s,mean_gap,max_gap\n");
    for &size in &args.sizes {
        let group: Vec<&BenchRow> = rows.iter().filter(|r| r.size == size).collect();
        let runs = group.len().max(1) as f64;
        let gaps: Vec<f64> = group.iter().filter_map(|r| r.gap).collect();
        let s = BenchSummary {
            size,
            runs: group.len(),
            converged: group.iter().filter(|r| r.status == RunStatus::Converged).count(),
            mean_iterations: group.iter().map(|r| r.iterations as f64).sum::<f64>() / runs,
            mean_wall_time_s: group.iter().map(|r| r.wall_time_s).sum::<f64>() / runs,
            mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
            max_gap: gaps.iter().copied().fold(0.0, f64::max),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.size,
            s.runs,
            s.converged,
            format_sig(s.mean_iterations, 6),
            format_sig(s.mean_wall_time_s, 6),
            format_sig(s.mean_gap, 6),
            format_sig(s.max_gap, 6)
        ));
        summary.push(s);
    }
    #[derive(Serialize)]
    struct Bench<'a> {
        suite: Suite,
        seed: u64,
        rows: &'a [BenchRow],
        summary: &'a [BenchSummary],
    }
    let json = to_json(&Bench {
        suite: args.suite,
        seed: args.seed,
        rows: &rows,
        summary: &summary,
    });
    fs::write(args.out.join("bench.json"), json)?;
    fs::write(args.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
