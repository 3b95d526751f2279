//! The `tfperf` command line: argument parsing, config loading and report
//! emission. [`run`] is the whole program minus process setup.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tfperf_core::archsearch::{self, Candidate, EvolveParams, SearchSpace};
use tfperf_core::fusion::{fusion_sweep, PairKind};
use tfperf_core::hwmodel::{self, AcceleratorConfig, Tiler};
use tfperf_core::mapspace::{sample_mappings, LoopNest, MapspaceStats};
use tfperf_core::report::{Cell, Report, SCHEMA_VERSION};
use tfperf_core::workload::{self, Mode, ModelConfig, PrecisionModel};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

const KB: u64 = 1024;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) => m,
        }
    }
}

impl From<tfperf_core::Error> for CliError {
    fn from(e: tfperf_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "tfperf", version, about = "Analytical performance experiments for Transformer inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ideal FLOPs, MOPs and arithmetic intensity per operator and category.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seqlen: Option<u64>,
    },
    /// Per-operator latency, energy and EDP on the accelerator.
    Latency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seqlen: Option<u64>,
        #[arg(long, value_enum, default_value_t = TilerArg::Square)]
        tiler: TilerArg,
    },
    /// Ideal versus DRAM-level arithmetic intensity of one layer.
    NonidealAi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seqlen: Option<u64>,
    },
    /// Matmul latency across scratchpad / accumulator splits of a fixed SRAM budget.
    MemSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seqlen: Option<u64>,
        #[arg(long, default_value_t = 320)]
        total_kb: u64,
        /// Scratchpad sizes in kB; the accumulator gets the rest.
        #[arg(long = "scratchpad-kb", value_delimiter = ',')]
        scratchpad_kb: Vec<u64>,
    },
    /// Random mapspace sampling of one loop nest.
    Mapsearch {
        #[command(flatten)]
        common: Common,
        /// Named nest such as bert.qk or resnet.conv1.
        #[arg(long, conflicts_with = "dims")]
        op: Option<String>,
        /// Explicit matmul dims M,K,N.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<u64>>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Where to write the JSON stats summary; defaults to <out>.stats.json, or stderr.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Fused versus non-fused matmul + normalization over a grid.
    Fusion {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        pair: Vec<String>,
        #[arg(long = "acc-kb", value_delimiter = ',', default_values_t = [128u64, 256])]
        acc_kb: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [512u64, 4096])]
        seqlen: Vec<u64>,
    },
    /// Evolutionary hardware-aware architecture search.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        pop: usize,
        #[arg(long, default_value_t = 40)]
        rounds: usize,
        #[arg(long, default_value_t = 0.2)]
        mutation: f64,
        /// Where to write the per-round CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Re-cost the final front with the optimal tiler.
        #[arg(long)]
        rescore: bool,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Preset name or path to a JSON model file.
    #[arg(long, default_value = "bert-base")]
    model: String,
    /// Preset name or path to a JSON accelerator file.
    #[arg(long, default_value = "gemmini-baseline")]
    accel: String,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TilerArg {
    Square,
    Greedy,
    Optimal,
}

impl From<TilerArg> for Tiler {
    fn from(t: TilerArg) -> Self {
        match t {
            TilerArg::Square => Tiler::Square,
            TilerArg::Greedy => Tiler::Greedy,
            TilerArg::Optimal => Tiler::Optimal,
        }
    }
}

/// Runs one invocation. `args` includes the program name. Reports without an
/// `--out` path go to `stdout`; diagnostics go to stderr. Returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first}");
            return EXIT_CONFIG;
        }
    };
    let echo = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match dispatch(cli.command, &format!("tfperf {echo}"), stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn is_file_arg(s: &str) -> bool {
    s.ends_with(".json") || s.contains('/')
}

fn load_model(name: &str, seqlen: Option<u64>) -> CliResult<ModelConfig> {
    let mut cfg = if is_file_arg(name) {
        ModelConfig::from_json(&read_text(Path::new(name))?)?
    } else {
        ModelConfig::preset(name)?
    };
    if cfg.mode != Mode::Resnet50 {
        match seqlen {
            Some(l) => cfg.seq_len = l,
            None if cfg.seq_len == 0 => cfg.seq_len = 512,
            None => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_accel(name: &str) -> CliResult<AcceleratorConfig> {
    let accel = if is_file_arg(name) {
        AcceleratorConfig::from_json(&read_text(Path::new(name))?)?
    } else {
        AcceleratorConfig::preset(name)?
    };
    accel.validate()?;
    Ok(accel)
}

fn write_bytes(path: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => stdout.write_all(bytes).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

/// Serializes `report` in `format` to `path`, or to `stdout` when no path is given.
pub fn emit(report: &Report, format: Format, path: Option<&Path>, stdout: &mut dyn Write) -> CliResult<usize> {
    let text = match format {
        Format::Csv => report.to_csv()?,
        Format::Json => report.to_json()? + "\n",
    };
    write_bytes(path, text.as_bytes(), stdout)?;
    Ok(text.len())
}

fn dispatch(cmd: Command, echo: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Analyze { common, seqlen } => {
            let cfg = load_model(&common.model, seqlen)?;
            let report = analyze(&cfg, echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
        }
        Command::Latency { common, seqlen, tiler } => {
            let cfg = load_model(&common.model, seqlen)?;
            let accel = load_accel(&common.accel)?;
            let report = latency(&cfg, &accel, tiler.into(), echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
        }
        Command::NonidealAi { common, seqlen } => {
            let cfg = load_model(&common.model, seqlen)?;
            let accel = load_accel(&common.accel)?;
            let report = nonideal(&cfg, &accel, echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
        }
        Command::MemSweep { common, seqlen, total_kb, scratchpad_kb } => {
            let cfg = load_model(&common.model, seqlen)?;
            let accel = load_accel(&common.accel)?;
            let report = mem_sweep(&cfg, &accel, total_kb, &scratchpad_kb, echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
        }
        Command::Mapsearch { common, op, dims, samples, stats } => {
            let nest = match (op, dims) {
                (Some(name), None) => LoopNest::named(&name)?,
                (None, Some(d)) if d.len() == 3 => LoopNest::matmul(d[0], d[1], d[2]),
                (None, Some(d)) => return Err(CliError::Config(format!("--dims needs M,K,N, got {} values", d.len()))),
                _ => return Err(CliError::Config("mapsearch needs --op or --dims".into())),
            };
            let accel = load_accel(&common.accel)?;
            let (report, summary) = mapsearch(&nest, &accel, samples, common.seed, echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
            let stats_path = stats.or_else(|| common.out.as_ref().map(|o| with_suffix(o, ".stats.json")));
            let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))? + "\n";
            match stats_path {
                Some(p) => write_bytes(Some(&p), json.as_bytes(), stdout)?,
                None => eprint!("{json}"),
            }
        }
        Command::Fusion { common, pair, acc_kb, seqlen } => {
            let cfg = load_model(&common.model, seqlen.first().copied())?;
            let accel = load_accel(&common.accel)?;
            let pairs = pair.iter().map(|p| PairKind::parse(p)).collect::<Result<Vec<_>, _>>()?;
            let report = fusion(&cfg, &accel, &pairs, &acc_kb, &seqlen, echo)?;
            emit(&report, common.format, common.out.as_deref(), stdout)?;
        }
        Command::Search { common, space, pop, rounds, mutation, trace, rescore } => {
            let space = match space {
                Some(p) => SearchSpace::from_json(&read_text(&p)?)?,
                None => SearchSpace::default(),
            };
            let accel = load_accel(&common.accel)?;
            let params = EvolveParams { population: pop, rounds, mutation };
            let mut result = archsearch::evolve(&space, &accel, params, common.seed)?;
            if rescore {
                result.front.points = archsearch::rescore(&result.front.points, &accel)?;
            }
            let front = front_report(&result.front.points, echo)?;
            match common.format {
                Format::Csv => {
                    emit(&front, Format::Csv, common.out.as_deref(), stdout)?;
                }
                Format::Json => {
                    let doc = FrontDocument {
                        schema_version: SCHEMA_VERSION,
                        generated_by: echo.to_string(),
                        seed: common.seed,
                        baseline: result.baseline.clone(),
                        initial_min_edp: result.initial_min_edp,
                        front: result.front.points.clone(),
                    };
                    let json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))? + "\n";
                    write_bytes(common.out.as_deref(), json.as_bytes(), stdout)?;
                }
            }
            let trace_path = trace.or_else(|| common.out.as_ref().map(|o| with_suffix(o, ".trace.csv")));
            if let Some(p) = trace_path {
                emit(&trace_report(&result.trace, echo)?, Format::Csv, Some(&p), stdout)?;
            }
        }
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub const ANALYZE_COLUMNS: [&str; 9] = ["scope", "name", "category", "flops", "flops_pct", "mops", "mops_pct", "intensity", "repeat"];

pub fn analyze(cfg: &ModelConfig, echo: &str) -> CliResult<Report> {
    let ops = workload::model_ops(cfg, PrecisionModel::Ideal)?;
    let p = workload::profile(&ops)?;
    let mut r = Report::new(echo, &ANALYZE_COLUMNS);
    let total_f = p.totals.flops as f64;
    let total_m = p.totals.mops as f64;
    for row in &p.per_op {
        r.push(vec![
            "op".into(),
            row.op.name.as_str().into(),
            workload::Category::of(&row.op).label().into(),
            row.flops.into(),
            (100.0 * row.flops as f64 / total_f).into(),
            row.mops.into(),
            (100.0 * row.mops as f64 / total_m).into(),
            row.intensity.into(),
            row.op.repeat.into(),
        ])?;
    }
    for (cat, row) in &p.per_category {
        r.push(vec![
            "category".into(),
            cat.label().into(),
            cat.label().into(),
            row.flops.into(),
            row.flops_pct.into(),
            row.mops.into(),
            row.mops_pct.into(),
            row.intensity.into(),
            Cell::Null,
        ])?;
    }
    let mut totals = vec![("Total", p.totals)];
    if cfg.mode == Mode::Resnet50 {
        totals[0].0 = "Total (Unfused)";
        totals.push(("Total (Fused)", workload::fold_cnn_fusion(&p).totals));
    }
    for (name, t) in totals {
        r.push(vec![
            "total".into(),
            name.into(),
            Cell::Null,
            t.flops.into(),
            (100.0 * t.flops as f64 / total_f).into(),
            t.mops.into(),
            (100.0 * t.mops as f64 / total_m).into(),
            t.intensity.into(),
            Cell::Null,
        ])?;
    }
    Ok(r)
}

pub const LATENCY_COLUMNS: [&str; 10] =
    ["name", "category", "repeat", "latency", "energy", "edp", "dram_bytes", "compute_cycles", "memory_cycles", "compute_bound"];

pub fn latency(cfg: &ModelConfig, accel: &AcceleratorConfig, tiler: Tiler, echo: &str) -> CliResult<Report> {
    let ops = hwmodel::hardware_ops(cfg)?;
    let mut r = Report::new(echo, &LATENCY_COLUMNS);
    let mut all = Vec::with_capacity(ops.len());
    for op in &ops {
        let c = hwmodel::op_cost(op, accel, tiler)?;
        r.push(vec![
            op.name.as_str().into(),
            workload::Category::of(op).label().into(),
            op.repeat.into(),
            c.latency.into(),
            c.energy.into(),
            c.edp.into(),
            c.dram_bytes().into(),
            c.compute_cycles.into(),
            c.memory_cycles.into(),
            (if c.compute_bound { "true" } else { "false" }).into(),
        ])?;
        all.push(c);
    }
    let t = hwmodel::CostReport::sum(&all);
    r.push(vec![
        "total".into(),
        Cell::Null,
        Cell::Null,
        t.latency.into(),
        t.energy.into(),
        t.edp.into(),
        t.dram_bytes().into(),
        t.compute_cycles.into(),
        t.memory_cycles.into(),
        Cell::Null,
    ])?;
    Ok(r)
}

pub const NONIDEAL_COLUMNS: [&str; 6] = ["name", "flops", "ideal_mops", "dram_bytes", "ideal_intensity", "nonideal_intensity"];

pub fn nonideal(cfg: &ModelConfig, accel: &AcceleratorConfig, echo: &str) -> CliResult<Report> {
    let (rows, total) = hwmodel::nonideal_profile(cfg, accel)?;
    let mut r = Report::new(echo, &NONIDEAL_COLUMNS);
    for row in rows.iter().chain(std::iter::once(&total)) {
        r.push(vec![
            row.name.as_str().into(),
            row.flops.into(),
            row.ideal_mops.into(),
            row.dram_bytes.into(),
            row.ideal_intensity.into(),
            row.nonideal_intensity.into(),
        ])?;
    }
    Ok(r)
}

pub const MEM_SWEEP_COLUMNS: [&str; 5] = ["scratchpad_kb", "accumulator_kb", "matmul_latency", "best", "error"];

pub fn mem_sweep(cfg: &ModelConfig, accel: &AcceleratorConfig, total_kb: u64, spad_kb: &[u64], echo: &str) -> CliResult<Report> {
    let spads: Vec<u64> = if spad_kb.is_empty() {
        (1..).map(|i| 32 * i).take_while(|&s| s < total_kb).collect()
    } else {
        spad_kb.to_vec()
    };
    if let Some(&s) = spads.iter().find(|&&s| s > total_kb) {
        return Err(CliError::Config(format!("scratchpad {s} kB exceeds the {total_kb} kB total")));
    }
    let splits: Vec<(u64, u64)> = spads.iter().map(|&s| (s * KB, (total_kb - s) * KB)).collect();
    let sweep = hwmodel::memory_split_sweep(cfg, accel, total_kb * KB, &splits)?;
    let mut r = Report::new(echo, &MEM_SWEEP_COLUMNS);
    for (i, s) in sweep.results.iter().enumerate() {
        r.push(vec![
            (s.scratchpad_bytes / KB).into(),
            (s.accumulator_bytes / KB).into(),
            s.matmul_latency.into(),
            (if sweep.best == Some(i) { "true" } else { "false" }).into(),
            s.error.clone().into(),
        ])?;
    }
    Ok(r)
}

pub const MAPSEARCH_COLUMNS: [&str; 5] = ["sample_idx", "latency", "energy", "edp", "relative_edp"];

#[derive(Clone, Debug, Serialize)]
pub struct MapsearchSummary {
    pub schema_version: u32,
    pub n_samples: usize,
    pub min_edp: f64,
    pub median_relative_edp: f64,
    pub max_relative_edp: f64,
    pub frac_within_2x: f64,
    pub frac_within_3x: f64,
    pub frac_within_10x: f64,
}

pub fn mapsearch(nest: &LoopNest, accel: &AcceleratorConfig, n: usize, seed: u64, echo: &str) -> CliResult<(Report, MapsearchSummary)> {
    let samples = sample_mappings(nest, accel, n, seed)?;
    let edps: Vec<f64> = samples.iter().map(|(_, c)| c.edp).collect();
    let stats = MapspaceStats::from_edps(&edps)?;
    let mut r = Report::new(echo, &MAPSEARCH_COLUMNS);
    for (i, (_, c)) in samples.iter().enumerate() {
        r.push(vec![i.into(), c.latency.into(), c.energy.into(), c.edp.into(), (c.edp / stats.min_edp).into()])?;
    }
    let summary = MapsearchSummary {
        schema_version: SCHEMA_VERSION,
        n_samples: stats.n_samples,
        min_edp: stats.min_edp,
        median_relative_edp: stats.median,
        max_relative_edp: stats.max_relative_edp,
        frac_within_2x: stats.frac_within(2.0),
        frac_within_3x: stats.frac_within(3.0),
        frac_within_10x: stats.frac_within(10.0),
    };
    Ok((r, summary))
}

pub const FUSION_COLUMNS: [&str; 13] = [
    "pair",
    "accumulator_kb",
    "seq_len",
    "nonfused_latency",
    "fused_latency",
    "producer_latency",
    "fused_producer_latency",
    "consumer_latency",
    "hidden_cycles",
    "producer_penalty",
    "nonfused_dram_bytes",
    "fused_dram_bytes",
    "verdict",
];

pub fn fusion(cfg: &ModelConfig, accel: &AcceleratorConfig, pairs: &[PairKind], acc_kb: &[u64], seqlens: &[u64], echo: &str) -> CliResult<Report> {
    let mut r = Report::new(echo, &FUSION_COLUMNS);
    let acc: Vec<u64> = acc_kb.iter().map(|a| a * KB).collect();
    for &kind in pairs {
        for cell in fusion_sweep(kind, cfg, accel, &acc, seqlens)? {
            let f = &cell.report;
            r.push(vec![
                kind.label().into(),
                (cell.accumulator_bytes / KB).into(),
                cell.seq_len.into(),
                f.nonfused_latency.into(),
                f.fused_latency.into(),
                f.producer_latency.into(),
                f.fused_producer_latency.into(),
                f.consumer_latency.into(),
                f.hidden_cycles.into(),
                f.producer_penalty.into(),
                f.nonfused_dram_bytes.into(),
                f.fused_dram_bytes.into(),
                format!("{:?}", f.verdict).into(),
            ])?;
        }
    }
    Ok(r)
}

#[derive(Serialize)]
struct FrontDocument {
    schema_version: u32,
    generated_by: String,
    seed: u64,
    baseline: Candidate,
    initial_min_edp: f64,
    front: Vec<Candidate>,
}

pub const FRONT_COLUMNS: [&str; 8] = ["rank", "layers", "d", "heads", "ffn", "quality", "edp", "latency"];

fn join(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

pub fn front_report(points: &[Candidate], echo: &str) -> CliResult<Report> {
    let mut r = Report::new(echo, &FRONT_COLUMNS);
    for (i, c) in points.iter().enumerate() {
        r.push(vec![
            i.into(),
            c.layers.into(),
            c.d.into(),
            join(&c.heads).into(),
            join(&c.ffn).into(),
            c.quality.into(),
            c.edp.into(),
            c.latency.into(),
        ])?;
    }
    Ok(r)
}

pub const TRACE_COLUMNS: [&str; 5] = ["round", "best_edp", "front_size", "evaluated", "discarded"];

pub fn trace_report(trace: &[archsearch::RoundTrace], echo: &str) -> CliResult<Report> {
    let mut r = Report::new(echo, &TRACE_COLUMNS);
    for t in trace {
        r.push(vec![t.round.into(), t.best_edp.into(), t.front_size.into(), t.evaluated.into(), t.discarded.into()])?;
    }
    Ok(r)
}
