use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use infercost::costmodel::{op_costs, UpdateLayout};
use infercost::data::data_dir;
use infercost::estimator::{
    features, fit_with, load_samples, predict, FitOptions, Library, RankPolicy,
    RegressionCoefficients,
};
use infercost::hardware::HardwareSpec;
use infercost::kvsim::{
    cache_step_bytes, footprint, max_concurrency, CacheLayout, KvCapacity, DEFAULT_BLOCK_SIZE,
};
use infercost::report::{analyze, roofline_svg, roofline_table, Cell, Format, ReportTable};
use infercost::servesim::{self, ArrivalKind, SchedulingPolicy, ServingMetrics, StepModel};
use infercost::workload::{
    assign_arrivals, generate, load_trace, write_trace, ArrivalProcess, Scenario,
};
use infercost::{ModelConfig, Phase};

#[derive(Parser)]
#[command(
    name = "infercost",
    version,
    about = "Cost model and serving simulator for LLaMA-style inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-operation FLOPs, memory traffic, intensity and bound.
    Analyze(AnalyzeArgs),
    /// Roofline points as CSV, optionally an SVG scatter.
    Roofline(RooflineArgs),
    /// Fit runtime-model coefficients from timing samples.
    Fit(FitArgs),
    /// Predict step time from a coefficient file.
    Predict(PredictArgs),
    /// KV-cache footprint and concurrency per layout.
    Memory(MemoryArgs),
    /// Synthetic request traces.
    #[command(subcommand)]
    Workload(WorkloadCommand),
    /// Run the serving simulator.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum WorkloadCommand {
    /// Write a JSON-lines trace.
    Gen(GenArgs),
}

#[derive(Args)]
struct ModelArg {
    /// Preset name (llama2-7b, llama2-13b) or path to a model JSON file.
    #[arg(long, default_value = "llama2-7b")]
    model: String,
}

#[derive(Args)]
struct HardwareArg {
    /// Preset name (rtx-3090, rtx-4090, a800) or path to a hardware JSON file.
    #[arg(long, default_value = "a800")]
    hardware: String,
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, default_value_t = 8)]
    b: u64,
    #[arg(long, default_value_t = 512)]
    s: u64,
    #[arg(long, default_value = "prefill")]
    phase: Phase,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Vanilla,
    Paged,
    Token,
}

impl LayoutArg {
    fn update(self) -> UpdateLayout {
        match self {
            LayoutArg::Vanilla => UpdateLayout::Vanilla,
            LayoutArg::Paged => UpdateLayout::Paged,
            LayoutArg::Token => UpdateLayout::TokenGranular,
        }
    }

    fn cache(self, block_size: u64, reserved_len: u64) -> CacheLayout {
        match self {
            LayoutArg::Vanilla => CacheLayout::Vanilla { reserved_len },
            LayoutArg::Paged => CacheLayout::Paged { block_size },
            LayoutArg::Token => CacheLayout::TokenGranular,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => Format::Markdown,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    hardware: HardwareArg,
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, value_enum, default_value = "paged")]
    layout: LayoutArg,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RooflineArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    hardware: HardwareArg,
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, value_enum, default_value = "paged")]
    layout: LayoutArg,
    /// Also write an SVG scatter to this path.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Timing samples (phase,b,s,time_ms). Defaults to the bundled
    /// Transformers measurements.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value = "prefill")]
    phase: Phase,
    /// Fail instead of returning the minimum-norm fit when the samples do not
    /// determine every coefficient.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Coefficient JSON file.
    #[arg(long)]
    coefficients: PathBuf,
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 8)]
    b: u64,
    #[arg(long, default_value_t = 512)]
    s: u64,
    /// Phase to predict; defaults to the coefficient file's phase.
    #[arg(long)]
    phase: Option<Phase>,
}

#[derive(Args)]
struct MemoryArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    hardware: HardwareArg,
    /// Number of sequences.
    #[arg(long, default_value_t = 8)]
    b: u64,
    /// Tokens per sequence.
    #[arg(long, default_value_t = 512)]
    s: u64,
    /// Report a single layout instead of all three.
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: u64,
    /// Per-sequence reservation for the vanilla layout (default 2048).
    #[arg(long, default_value_t = 2048)]
    reserved_len: u64,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrivalArg {
    Offline,
    Poisson,
    Uniform,
}

#[derive(Args)]
struct GenArgs {
    /// s2s, s2l, s16k or l2s.
    #[arg(long)]
    scenario: Scenario,
    /// Number of requests (default depends on the scenario).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "offline")]
    arrival: ArrivalArg,
    /// Requests per second for timed arrivals.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Static,
    Continuous,
    Splitfuse,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    hardware: HardwareArg,
    /// Trace file; if absent a trace is generated from --scenario.
    #[arg(long, conflicts_with = "scenario")]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "s2s")]
    scenario: Scenario,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated policies.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "static,continuous,splitfuse"
    )]
    policy: Vec<PolicyArg>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 256)]
    max_seqs: usize,
    #[arg(long, default_value_t = 4096)]
    max_batch_tokens: u64,
    #[arg(long, default_value_t = 512)]
    token_budget: u64,
    /// Comma-separated arrival rates (requests/s, `inf` for offline). Without
    /// rates the trace runs once as given and nothing is trimmed.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// Seeds per rate, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_enum, default_value = "poisson")]
    arrival: ArrivalArg,
    /// Library whose bundled coefficients drive step times (transformers, vllm).
    #[arg(long, default_value = "vllm")]
    library: Library,
    #[arg(long)]
    prefill_coefficients: Option<PathBuf>,
    #[arg(long)]
    decode_coefficients: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paged")]
    layout: LayoutArg,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: u64,
    #[arg(long, default_value_t = 2048)]
    reserved_len: u64,
    /// Floor on every predicted step, in milliseconds.
    #[arg(long, default_value_t = servesim::DEFAULT_MIN_STEP_MS)]
    min_step_ms: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Roofline(a) => cmd_roofline(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Memory(a) => cmd_memory(a),
        Command::Workload(WorkloadCommand::Gen(a)) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn model(arg: &ModelArg) -> Result<ModelConfig> {
    ModelConfig::resolve(&arg.model).with_context(|| format!("model `{}`", arg.model))
}

fn hardware(arg: &HardwareArg) -> Result<HardwareSpec> {
    HardwareSpec::resolve(&arg.hardware).with_context(|| format!("hardware `{}`", arg.hardware))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let table = analyze(
        &model(&a.model)?,
        &hardware(&a.hardware)?,
        a.point.b,
        a.point.s,
        a.point.phase,
        a.layout.update(),
    )?;
    emit(a.out.as_deref(), &table.render(a.format.into()))
}

fn cmd_roofline(a: RooflineArgs) -> Result<()> {
    let cfg = model(&a.model)?;
    let hw = hardware(&a.hardware)?;
    let costs = op_costs(&cfg, a.point.phase, a.point.b, a.point.s, a.layout.update())?;
    if let Some(path) = &a.svg {
        fs::write(path, roofline_svg(&costs, &hw))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    emit(a.out.as_deref(), &roofline_table(&costs, &hw).to_csv())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = model(&a.model)?;
    let path = a
        .samples
        .unwrap_or_else(|| data_dir().join("transformers_samples.csv"));
    let samples: Vec<_> = load_samples(&path)?
        .into_iter()
        .filter(|s| s.phase == a.phase)
        .collect();
    if samples.is_empty() {
        bail!("{} has no {} samples", path.display(), a.phase);
    }
    let opts = FitOptions {
        rank_policy: if a.strict {
            RankPolicy::Reject
        } else {
            RankPolicy::MinimumNorm
        },
        ..FitOptions::default()
    };
    let report = fit_with(&samples, &cfg, a.phase, opts)?;
    eprintln!(
        "fit {} samples: rank {}/{}, rms relative error {:.4}{}",
        samples.len(),
        report.rank,
        report.coefficients.values().len(),
        report.rms_relative_error,
        if report.condition_warning {
            " (warning: coefficients not individually identifiable)"
        } else {
            ""
        }
    );
    let mut json = report.coefficients.to_json();
    json.push('\n');
    emit(a.out.as_deref(), &json)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cfg = model(&a.model)?;
    let coeffs = RegressionCoefficients::from_path(&a.coefficients)?;
    let phase = a.phase.unwrap_or(coeffs.phase());
    let feats = features(&cfg, phase, a.b, a.s)?;
    let ms = predict(&coeffs, &feats).with_context(|| {
        format!(
            "{} coefficients cannot score {phase} features",
            coeffs.phase()
        )
    })?;
    emit(None, &format!("{ms}\n"))
}

fn cmd_memory(a: MemoryArgs) -> Result<()> {
    let cfg = model(&a.model)?;
    let hw = hardware(&a.hardware)?;
    if a.b == 0 {
        bail!("--b must be positive");
    }
    let layouts: Vec<LayoutArg> = match a.layout {
        Some(l) => vec![l],
        None => vec![LayoutArg::Vanilla, LayoutArg::Paged, LayoutArg::Token],
    };
    let lens = vec![a.s; a.b as usize];
    let mut table = ReportTable::new(
        format!(
            "KV cache, {} sequences x {} tokens on {}",
            a.b, a.s, hw.name
        ),
        &[
            "layout",
            "allocated_bytes",
            "live_bytes",
            "wasted_bytes",
            "step_update_bytes",
            "max_concurrency",
        ],
    );
    for l in layouts {
        let layout = l.cache(a.block_size, a.reserved_len);
        let stats = footprint(layout, &cfg, &lens)?;
        table.push(vec![
            Cell::Text(layout.to_string()),
            Cell::Int(stats.allocated_bytes),
            Cell::Int(stats.live_bytes),
            Cell::Int(stats.wasted_bytes),
            Cell::Int(cache_step_bytes(layout, &cfg, a.b, a.s)?),
            Cell::Int(max_concurrency(
                layout,
                &cfg,
                &hw,
                cfg.decoder_weight_bytes(),
                a.s,
            )?),
        ])?;
    }
    emit(a.out.as_deref(), &table.render(a.format.into()))
}

fn arrival_process(kind: ArrivalArg, rate: Option<f64>) -> Result<ArrivalProcess> {
    Ok(match (kind, rate) {
        (ArrivalArg::Offline, _) => ArrivalProcess::Offline,
        (_, None) => bail!("--rate is required for timed arrivals"),
        (ArrivalArg::Poisson, Some(rate)) => ArrivalProcess::Poisson { rate },
        (ArrivalArg::Uniform, Some(rate)) => ArrivalProcess::Uniform { rate },
    })
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let n = a.n.unwrap_or_else(|| a.scenario.default_count());
    let mut trace = generate(a.scenario, n, a.seed);
    assign_arrivals(&mut trace, arrival_process(a.arrival, a.rate)?, a.seed)?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace)?;
    emit(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn step_model(a: &SimulateArgs, cfg: ModelConfig) -> Result<StepModel> {
    let lib = match a.library {
        Library::Transformers => "transformers",
        Library::Vllm => "vllm",
    };
    let load = |given: &Option<PathBuf>, phase: Phase| -> Result<RegressionCoefficients> {
        let path = given.clone().unwrap_or_else(|| {
            data_dir()
                .join("coefficients")
                .join(format!("{lib}-{phase}.json"))
        });
        RegressionCoefficients::from_path(&path).map_err(Into::into)
    };
    let prefill = load(&a.prefill_coefficients, Phase::Prefill)?;
    let decode = load(&a.decode_coefficients, Phase::Decode)?;
    Ok(StepModel::new(cfg, Some(prefill), Some(decode))?.with_min_step_ms(a.min_step_ms))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = model(&a.model)?;
    let hw = hardware(&a.hardware)?;
    let steps = step_model(&a, cfg)?;
    let capacity = KvCapacity::for_device(a.layout.cache(a.block_size, a.reserved_len), &cfg, &hw)?;
    let trace = match &a.trace {
        Some(path) => load_trace(path)?,
        None => generate(
            a.scenario,
            a.n.unwrap_or_else(|| a.scenario.default_count()),
            a.seed,
        ),
    };
    if a.policy.is_empty() {
        bail!("no --policy given");
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["policy", "rate", "trim_warning"];
    header.extend(ServingMetrics::CSV_COLUMNS);
    w.write_record(&header)?;

    for &p in &a.policy {
        let policy = match p {
            PolicyArg::Static => SchedulingPolicy::Static {
                batch_size: a.batch_size,
            },
            PolicyArg::Continuous => SchedulingPolicy::Continuous {
                max_seqs: a.max_seqs,
                max_batch_tokens: a.max_batch_tokens,
            },
            PolicyArg::Splitfuse => SchedulingPolicy::SplitFuse {
                token_budget: a.token_budget,
            },
        };
        if a.rates.is_empty() {
            let outcome = servesim::run(policy, &trace, &steps, capacity)?;
            let mut row = vec![policy.to_string(), "trace".into(), "false".into()];
            row.extend(outcome.metrics.csv_values());
            w.write_record(&row)?;
            continue;
        }
        let arrivals = match a.arrival {
            ArrivalArg::Poisson => ArrivalKind::Poisson,
            ArrivalArg::Uniform => ArrivalKind::Uniform,
            ArrivalArg::Offline => {
                bail!("--arrival offline cannot be combined with --rates (use `inf`)")
            }
        };
        let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed.wrapping_add(i)).collect();
        let points =
            servesim::sweep_rates(policy, &trace, &a.rates, &seeds, arrivals, &steps, capacity)?;
        for point in points {
            let mut row = vec![
                policy.to_string(),
                point.rate.to_string(),
                point.trim_warning.to_string(),
            ];
            row.extend(point.metrics.csv_values());
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    emit(a.out.as_deref(), std::str::from_utf8(&bytes)?)
}
