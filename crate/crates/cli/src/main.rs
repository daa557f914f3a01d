mod output;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anmi::estimators::VarianceConvention;
use anmi::mcmc::{run_chain, write_trace_csv, ChainSettings, Method, LOW_ACCEPTANCE, WARNING_WINDOW};
use anmi::sim::{
    block_label, builtin_scenarios, emit_report, mi_estimates, run_scenario, ReportFormat,
    ScenarioConfig, ScenarioReport, TotalsTable, DEFAULT_MASTER_SEED,
};
use anmi::survey::{read_sample_csv, write_sample_csv, AuxiliaryMargin, MarginDeclaration};
use anmi::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use output::{resolve_output, RunManifest, StagedDir, Timings};

#[derive(Parser)]
#[command(name = "anmi", version, about = "Multiple imputation of nonignorable item nonresponse with auxiliary margins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario or a scenario config file and write its report.
    Simulate(SimulateArgs),
    /// Impute a survey CSV and write completed datasets and MI estimates.
    Impute(ImputeArgs),
    /// List built-in scenarios or imputation methods.
    List(ListArgs),
}

#[derive(Args)]
struct ChainFlags {
    /// Total MCMC iterations per chain.
    #[arg(long)]
    iterations: Option<usize>,
    /// Iterations discarded before datasets are retained.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep a completed dataset every this many post-burn-in iterations.
    #[arg(long)]
    thin: Option<usize>,
    /// Worker threads (default: number of logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Use the with-replacement design variance (no finite population correction).
    #[arg(long)]
    with_replacement_variance: bool,
}

#[derive(Args)]
struct OutputFlags {
    /// Output directory (default: $ANMI_OUTPUT_ROOT/<name>, or ./<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the output directory if it exists.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario id (see `anmi list --scenarios`) or path to a JSON config.
    scenario: String,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulation runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    chain: ChainFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct ImputeArgs {
    /// Survey CSV with columns stratum, weight, y, x, r (empty x when missing).
    #[arg(long)]
    data: PathBuf,
    /// Margin declaration JSON; required by the constraint methods.
    #[arg(long)]
    margin: Option<PathBuf>,
    /// Imputation method (label, code, or kebab-case name).
    #[arg(long)]
    method: String,
    /// Chain seed.
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED)]
    seed: u64,
    #[command(flatten)]
    chain: ChainFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
#[group(required = true, multiple = true)]
struct ListArgs {
    #[arg(long)]
    scenarios: bool,
    #[arg(long)]
    methods: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

/// A failed command: exit code and diagnostic.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

/// Input and configuration problems are usage errors; everything else,
/// including sampler failures, is a runtime error.
fn classify(e: Error) -> Failure {
    match e {
        Error::Schema(rows) => {
            let mut msg = format!("{} schema violation(s) in input:", rows.len());
            for r in rows {
                msg.push_str(&format!("\n  {r}"));
            }
            Failure::usage(msg)
        }
        Error::Config(_) | Error::Settings(_) | Error::Json(_) | Error::ParameterDomain(_) => {
            Failure::usage(e.to_string())
        }
        Error::Chain { .. } => Failure::runtime(format!("chain failed: {e}")),
        other => Failure::runtime(other.to_string()),
    }
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if jobs == Some(0) {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::runtime(format!("cannot start worker pool: {e}")))
}

fn convention(flag: bool) -> VarianceConvention {
    if flag {
        VarianceConvention::WithReplacement
    } else {
        VarianceConvention::WithoutReplacement
    }
}

fn load_scenario(arg: &str) -> Result<ScenarioConfig, Failure> {
    if let Some(c) = builtin_scenarios().remove(arg) {
        return Ok(c);
    }
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {arg}: {e}")))?;
        return serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{arg}: {e}")));
    }
    let known: Vec<String> = builtin_scenarios().into_keys().collect();
    Err(Failure::usage(format!(
        "unknown scenario {arg:?}; expected a config file or one of: {}",
        known.join(", ")
    )))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut timings = Timings::default();
    let mut config = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(n) = args.chain.iterations {
        config.chain.iterations = n;
    }
    if let Some(n) = args.chain.burn_in {
        config.chain.burn_in = n;
    }
    if let Some(n) = args.chain.thin {
        config.chain.thin = n;
    }
    if args.chain.with_replacement_variance {
        config.variance_convention = VarianceConvention::WithReplacement;
    }
    config.validate().map_err(classify)?;
    let target = resolve_output(args.output.out, &config.id);
    let staged = StagedDir::new(&target, args.output.force).map_err(Failure::usage)?;

    let pool = thread_pool(args.chain.jobs)?;
    let report = timings
        .time("simulate", || pool.install(|| run_scenario(&config)))
        .map_err(classify)?;

    timings
        .time("write", || emit_report(&report, staged.path(), args.format.into()))
        .map_err(classify)?;
    let config_bytes = serde_json::to_vec(&config).expect("config serializes");
    let seeds = json!({
        "master_seed": config.master_seed,
        "runs": report.runs.iter().map(|r| &r.seeds).collect::<Vec<_>>(),
    });
    RunManifest::new(&config_bytes, seeds, timings)
        .write(staged.path())
        .map_err(Failure::runtime)?;
    let dir = staged.commit().map_err(Failure::runtime)?;

    print_totals(&report);
    report_warnings(&report.warnings);
    println!("report written to {}", dir.display());
    Ok(())
}

fn print_totals(report: &ScenarioReport) {
    let table = TotalsTable::from_report(report);
    let fmt = |v: Option<f64>, digits: usize| v.map_or_else(|| "---".to_string(), |v| format!("{v:.digits$}"));
    println!("{}: {}", report.config.id, report.config.description);
    print!("{:<22} {:>10} {:>8}", "method", "T_X mean", "SE");
    for b in &table.blocks {
        print!(" {:>20}", format!("accept {b}"));
    }
    println!();
    for row in &table.rows {
        print!("{:<22} {:>10} {:>8}", row.label, fmt(row.mean, 0), fmt(row.se, 0));
        for a in &row.acceptance {
            let cell = a.map_or_else(
                || "---".to_string(),
                |a| format!("{:.2} [{:.2}, {:.2}]", a.mean, a.min, a.max),
            );
            print!(" {cell:>20}");
        }
        println!();
    }
}

fn report_warnings(warnings: &[String]) {
    const SHOWN: usize = 10;
    for w in warnings.iter().take(SHOWN) {
        eprintln!("warning: {w}");
    }
    if warnings.len() > SHOWN {
        eprintln!("warning: {} more warning(s) in the output files", warnings.len() - SHOWN);
    }
}

fn impute(args: ImputeArgs) -> Result<(), Failure> {
    let mut timings = Timings::default();
    let method: Method = args.method.parse().map_err(classify)?;
    let file = File::open(&args.data)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", args.data.display())))?;
    let sample = timings.time("read", || read_sample_csv(file)).map_err(classify)?;

    let margin = match &args.margin {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            let decl: MarginDeclaration =
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let m = AuxiliaryMargin::try_from(decl).map_err(classify)?;
            m.check_against(&sample).map_err(classify)?;
            Some(m)
        }
        None => None,
    };
    if method.uses_constraint() && margin.is_none() {
        return Err(Failure::usage(format!("{method} needs a margin declaration (--margin)")));
    }
    if !method.uses_constraint() && margin.is_some() {
        eprintln!("warning: {method} does not use a margin; --margin ignored");
    }

    let mut settings = ChainSettings::new(method, args.seed);
    settings.iterations = args.chain.iterations.unwrap_or(settings.iterations);
    settings.burn_in = args.chain.burn_in.unwrap_or(settings.burn_in);
    settings.thin = args.chain.thin.unwrap_or(settings.thin);
    settings.validate().map_err(classify)?;
    let convention = convention(args.chain.with_replacement_variance);

    let target = resolve_output(args.output.out, &format!("impute-{}", method.code().to_lowercase()));
    let staged = StagedDir::new(&target, args.output.force).map_err(Failure::usage)?;
    let pool = thread_pool(args.chain.jobs)?;

    let chain = timings
        .time("chain", || run_chain(&sample, margin.as_ref(), &settings))
        .map_err(|e| {
            classify(Error::Chain {
                context: format!("{method} (chain seed {})", settings.seed),
                source: Box::new(e),
            })
        })?;
    let responses: Vec<u8> = sample.units().iter().map(|u| u.r()).collect();
    let (estimates, mut warnings) = timings.time("estimate", || {
        pool.install(|| mi_estimates(&chain.datasets, &responses, &chain.response_terms, convention))
    });
    warnings.splice(0..0, chain.warnings.iter().cloned());

    let dir = staged.path();
    timings
        .time("write", || -> anmi::Result<()> {
            let completed = dir.join("completed");
            fs::create_dir(&completed)?;
            let width = chain.datasets.len().to_string().len().max(3);
            for (l, d) in chain.datasets.iter().enumerate() {
                let f = File::create(completed.join(format!("completed_{:0width$}.csv", l + 1)))?;
                write_sample_csv(d, BufWriter::new(f))?;
            }
            let f = File::create(dir.join("mi_estimates.json"))?;
            serde_json::to_writer_pretty(
                f,
                &json!({
                    "method": method,
                    "L": chain.datasets.len(),
                    "variance_convention": convention,
                    "estimates": estimates,
                    "warnings": warnings,
                }),
            )?;
            let acceptance: BTreeMap<String, f64> = chain
                .trace
                .blocks
                .iter()
                .enumerate()
                .map(|(b, &s)| (block_label(s), chain.trace.block_ratio(b)))
                .collect();
            let low: Vec<_> = chain
                .trace
                .low_windows(WARNING_WINDOW, LOW_ACCEPTANCE)
                .into_iter()
                .map(|(start, block, ratio)| {
                    json!({"start": settings.burn_in + start + 1, "block": block_label(block), "ratio": ratio})
                })
                .collect();
            let f = File::create(dir.join("diagnostics.json"))?;
            serde_json::to_writer_pretty(
                f,
                &json!({
                    "method": method,
                    "settings": settings,
                    "margin": margin.as_ref().map(MarginDeclaration::from),
                    "constrained": chain.trace.constrained,
                    "acceptance": acceptance,
                    "overall_acceptance": chain.trace.overall_ratio(),
                    "low_acceptance_windows": low,
                    "missing": sample.missing_count(),
                    "units": sample.len(),
                    "warnings": chain.warnings,
                }),
            )?;
            write_trace_csv(&chain, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
            Ok(())
        })
        .map_err(classify)?;

    let config_bytes = serde_json::to_vec(&json!({
        "data": fs::read(&args.data).map(|b| output::sha256_hex(&b)).unwrap_or_default(),
        "margin": margin.as_ref().map(MarginDeclaration::from),
        "settings": settings,
        "variance_convention": convention,
    }))
    .expect("config serializes");
    RunManifest::new(&config_bytes, json!({ "chain": settings.seed }), timings)
        .write(dir)
        .map_err(Failure::runtime)?;
    let out = staged.commit().map_err(Failure::runtime)?;

    report_warnings(&warnings);
    println!(
        "{method}: {} completed datasets, acceptance {:.3}",
        chain.datasets.len(),
        chain.trace.overall_ratio()
    );
    for (name, e) in &estimates {
        println!("{name:<10} {:>14.6} (SE {:.6})", e.point, e.se());
    }
    println!("output written to {}", out.display());
    Ok(())
}

fn list(args: ListArgs) {
    if args.scenarios {
        for (id, c) in builtin_scenarios() {
            println!("{id:<16} {}", c.description);
        }
    }
    if args.methods {
        for m in Method::ALL {
            println!("{:<22} {}", m.label(), m.description());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Impute(a) => impute(a),
        Command::List(a) => {
            list(a);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
