use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use persona_synth::calibrate::ResponseMode;
use persona_synth::ingest::MergeStrategy;
use persona_synth::llmclient::{LlmSettings, CACHE_DIR_ENV};
use persona_synth::pipeline::DEFAULT_INDIVIDUALS;
use persona_synth::respond::{BackendConfig, BackendKind, Method};
use persona_synth_cli::{cmd_compare, cmd_evaluate, cmd_fixture, cmd_generate, CompareArgs, RunManifest};

#[derive(Parser)]
#[command(name = "persona-synth", version, about = "Persona-based synthetic survey generation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey with one method.
    Generate(GenerateArgs),
    /// Score a run directory against a benchmark.
    Evaluate(EvaluateArgs),
    /// Run all six methods with the deterministic backend and summarize.
    Compare(CompareCmd),
    /// Write the bundled schema, synthetic benchmark and prior to a directory.
    Fixture {
        #[arg(long, default_value = "fixture")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Survey config (attributes and questions); bundled default if omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Naive prior marginals; bundled prior if omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Individuals to draw for the non-persona methods.
    #[arg(long, default_value_t = DEFAULT_INDIVIDUALS)]
    n: usize,
    /// per-group | overall
    #[arg(long, default_value = "per-group")]
    response_mode: ResponseMode,
    /// How "not specified" shares are folded in: argmax | proportional
    #[arg(long, default_value = "argmax")]
    merge: MergeStrategy,
}

#[derive(Args)]
struct GenerateArgs {
    /// naive | structured | guided | naive-persona | structured-persona | guided-persona
    #[arg(long)]
    method: Method,
    /// deterministic | llm
    #[arg(long, default_value = "deterministic")]
    backend: BackendKind,
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Cache directory for model exchanges (llm backend).
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
    /// Chat-completion base URL (llm backend).
    #[arg(long)]
    base_url: Option<String>,
    /// Model name (llm backend).
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory written by `generate`.
    #[arg(long)]
    run: PathBuf,
    /// Benchmark file; defaults to the one recorded in the run manifest.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Where to write metrics and plots; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCmd {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long, default_value = "compare")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn generate(args: GenerateArgs) -> Result<()> {
    let c = args.common;
    let mut m = RunManifest::new(args.method, c.seed, args.out);
    m.schema = c.schema;
    m.benchmark = args.benchmark;
    m.prior = c.prior;
    m.n = c.n;
    m.response_mode = c.response_mode;
    m.merge = c.merge;
    m.backend = match args.backend {
        BackendKind::Deterministic => BackendConfig::deterministic(args.method, c.seed),
        BackendKind::Llm => {
            let mut llm = LlmSettings { cache_dir: args.cache_dir, ..LlmSettings::default() };
            if let Some(url) = args.base_url {
                llm.base_url = url;
            }
            if let Some(model) = args.model {
                llm.model = model;
            }
            BackendConfig { kind: BackendKind::Llm, method: args.method, seed: None, llm: Some(llm) }
        }
    };
    let written = cmd_generate(&m)?;
    println!("{} run written to {}", written.method, written.out.display());
    Ok(())
}

fn print_report(r: &persona_synth::evaluate::MetricReport) {
    let p = &r.pooled;
    println!(
        "{:<20} MAE {:>7.3}  RMSE {:>7.3}  JS {:.4}  H {:.3}  |dH| {:.4}  V {:.3}",
        r.method, p.mae, p.rmse, p.js_distance, p.entropy, p.conditional_entropy_gap, p.cramers_v
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Evaluate(args) => {
            cmd_evaluate(&args.run, args.benchmark.as_deref(), args.out.as_deref()).map(|r| print_report(&r))
        }
        Command::Compare(args) => {
            let c = args.common;
            cmd_compare(&CompareArgs {
                schema: c.schema,
                benchmark: args.benchmark,
                prior: c.prior,
                seed: c.seed,
                n: c.n,
                response_mode: c.response_mode,
                merge: c.merge,
                out: args.out,
            })
            .map(|reports| reports.iter().for_each(print_report))
        }
        Command::Fixture { out } => cmd_fixture(&out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
