//! Command implementations behind the `persona-synth` binary.
//!
//! A run directory holds plain files: `manifest.json`, the generated tables
//! (`personas.csv` + `profiles_<question>.csv` for persona methods,
//! `individuals.csv` otherwise), `calibration.txt` and `run.log`. Evaluation
//! adds `metrics.json`, `metrics.csv` and one `plot_<question>.svg` per
//! question.

pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use persona_synth::calibrate::ResponseMode;
use persona_synth::evaluate::{MetricReport, METRIC_CSV_HEADER};
use persona_synth::ingest::{
    ingest_benchmark, Benchmark, IngestOptions, MarginalTargets, MergeStrategy, BENCHMARK_FIXTURE_CSV, NAIVE_PRIOR_CSV,
};
use persona_synth::llmclient::{LlmBackend, LlmClient, PromptTemplate};
use persona_synth::persona::{read_persona_table, write_persona_table};
use persona_synth::pipeline::{evaluate_run, run, synthetic_distributions, RunOutput, RunSpec};
use persona_synth::respond::{
    read_individuals, write_individuals, BackendConfig, BackendKind, DeterministicBackend, Method, ProfileSet,
    ResponseBackend,
};
use persona_synth::schema::{load_config, SurveyConfig, DEFAULT_SCHEMA_TOML};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PERSONAS_FILE: &str = "personas.csv";
pub const INDIVIDUALS_FILE: &str = "individuals.csv";
pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const LOG_FILE: &str = "run.log";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn profiles_file(question_id: &str) -> String {
    format!("profiles_{question_id}.csv")
}

pub fn plot_file(question_id: &str) -> String {
    format!("plot_{question_id}.svg")
}

/// Everything needed to reproduce a run. Input files are identified by path
/// and SHA-256; `None` paths mean the bundled defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: Method,
    pub schema: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Individuals drawn by the non-persona methods.
    pub n: usize,
    pub response_mode: ResponseMode,
    pub merge: MergeStrategy,
    pub out: PathBuf,
    pub tool_version: String,
    #[serde(default)]
    pub input_hashes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(method: Method, seed: u64, out: impl Into<PathBuf>) -> Self {
        RunManifest {
            method,
            schema: None,
            benchmark: None,
            prior: None,
            backend: BackendConfig::deterministic(method, seed),
            seed,
            n: persona_synth::pipeline::DEFAULT_INDIVIDUALS,
            response_mode: ResponseMode::default(),
            merge: MergeStrategy::default(),
            out: out.into(),
            tool_version: TOOL_VERSION.to_string(),
            input_hashes: BTreeMap::new(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: Option<&Path>, bundled: &str) -> Result<Vec<u8>> {
    match path {
        Some(p) => fs::read(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(bundled.as_bytes().to_vec()),
    }
}

/// Parsed inputs of a run, plus their content hashes.
pub struct Inputs {
    pub config: SurveyConfig,
    pub benchmark: Option<Benchmark>,
    pub prior: MarginalTargets,
    pub hashes: BTreeMap<String, String>,
}

pub fn load_inputs(
    schema: Option<&Path>,
    benchmark: Option<&Path>,
    prior: Option<&Path>,
    merge: MergeStrategy,
) -> Result<Inputs> {
    let mut hashes = BTreeMap::new();
    let schema_bytes = read_input(schema, DEFAULT_SCHEMA_TOML)?;
    hashes.insert("schema".to_string(), sha256_hex(&schema_bytes));
    let text = String::from_utf8(schema_bytes).context("schema file is not UTF-8")?;
    let config = load_config(&text).context("loading schema")?;

    let opts = IngestOptions { merge, ..IngestOptions::default() };
    let benchmark = match benchmark {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            hashes.insert("benchmark".to_string(), sha256_hex(&bytes));
            Some(ingest_benchmark(bytes.as_slice(), &config, &opts).with_context(|| format!("ingesting {}", p.display()))?)
        }
        None => None,
    };
    let prior_bytes = read_input(prior, NAIVE_PRIOR_CSV)?;
    hashes.insert("prior".to_string(), sha256_hex(&prior_bytes));
    let prior = ingest_benchmark(prior_bytes.as_slice(), &config, &opts)
        .context("ingesting prior marginals")?
        .marginals;
    if !prior.is_complete() {
        bail!("prior must give a marginal for every attribute");
    }
    Ok(Inputs { config, benchmark, prior, hashes })
}

fn build_backend(manifest: &RunManifest) -> Result<Box<dyn ResponseBackend>> {
    manifest.backend.validate()?;
    match manifest.backend.kind {
        BackendKind::Deterministic => Ok(Box::new(DeterministicBackend::new(
            manifest.backend.seed.unwrap_or(manifest.seed),
        ))),
        BackendKind::Llm => {
            let settings = manifest.backend.llm.clone().unwrap_or_default();
            let client = LlmClient::from_env(settings)?;
            Ok(Box::new(LlmBackend::new(client, PromptTemplate::default_for(manifest.method))))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> persona_synth::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)
}

fn calibration_text(output: &RunOutput) -> String {
    if output.reports.is_empty() {
        return "no calibration for this method\n".to_string();
    }
    output
        .reports
        .iter()
        .map(|(name, r)| format!("[{name}]\n{}", r.to_text()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn log_text(manifest: &RunManifest, backend: &dyn ResponseBackend, output: &RunOutput) -> String {
    let mut lines = vec![
        format!("method: {} ({})", manifest.method, manifest.method.title()),
        format!("backend: {}", backend.id()),
        format!("seed: {}", manifest.seed),
    ];
    match (&output.records, &output.table) {
        (Some(r), _) => lines.push(format!("individuals: {}", r.len())),
        (None, Some(t)) => lines.push(format!("personas: {}", t.len())),
        _ => {}
    }
    for p in &output.profiles {
        lines.push(format!("profiles for {}: {}", p.question_id(), p.len()));
    }
    for (name, r) in &output.reports {
        lines.push(format!(
            "calibration {name}: converged={} iterations={} max_deviation={:e}",
            r.converged, r.iterations, r.max_deviation
        ));
    }
    lines.join("\n") + "\n"
}

/// Runs the manifest's method and writes the run directory. Returns the
/// manifest as written, with input hashes filled in.
pub fn cmd_generate(manifest: &RunManifest) -> Result<RunManifest> {
    if manifest.method.needs_benchmark() && manifest.benchmark.is_none() {
        bail!(persona_synth::Error::Config(format!(
            "method {} needs --benchmark",
            manifest.method
        )));
    }
    let inputs = load_inputs(
        manifest.schema.as_deref(),
        manifest.benchmark.as_deref(),
        manifest.prior.as_deref(),
        manifest.merge,
    )?;
    let mut manifest = manifest.clone();
    manifest.input_hashes = inputs.hashes.clone();
    manifest.backend.method = manifest.method;

    let backend = build_backend(&manifest)?;
    let mut spec = RunSpec::new(
        manifest.method,
        &inputs.config,
        inputs.benchmark.as_ref(),
        &inputs.prior,
        backend.as_ref(),
        manifest.seed,
    );
    spec.n = manifest.n;
    spec.response_mode = manifest.response_mode;
    let output = run(&spec)?;

    let out = &manifest.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let schema = inputs.config.schema();
    match (&output.records, &output.table) {
        (Some(records), _) => write_with(&out.join(INDIVIDUALS_FILE), |w| {
            write_individuals(w, schema, &inputs.config.questions, records)
        })?,
        (None, Some(table)) => {
            write_with(&out.join(PERSONAS_FILE), |w| write_persona_table(w, schema, table))?;
            for (q, p) in inputs.config.questions.iter().zip(&output.profiles) {
                write_with(&out.join(profiles_file(&q.id)), |w| p.write_csv(w, schema, table, q))?;
            }
        }
        (None, None) => unreachable!("every method yields records or a persona table"),
    }
    write_file(&out.join(CALIBRATION_FILE), calibration_text(&output).as_bytes())?;
    write_file(&out.join(LOG_FILE), log_text(&manifest, backend.as_ref(), &output).as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&out.join(MANIFEST_FILE), json.as_bytes())?;
    log::info!("wrote {} run to {}", manifest.method, out.display());
    Ok(manifest)
}

fn require_files(dir: &Path, names: &[String]) -> Result<()> {
    let missing: Vec<&str> = names
        .iter()
        .filter(|n| !dir.join(n).is_file())
        .map(String::as_str)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(anyhow!(
            "run directory {} is missing: {}",
            dir.display(),
            missing.join(", ")
        ))
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Reloads a run directory written by [`cmd_generate`].
pub fn load_run(dir: &Path) -> Result<(RunManifest, SurveyConfig, RunOutput)> {
    require_files(dir, &[MANIFEST_FILE.to_string()])?;
    let manifest: RunManifest = serde_json::from_reader(open(&dir.join(MANIFEST_FILE))?)
        .with_context(|| format!("parsing {}", dir.join(MANIFEST_FILE).display()))?;
    let schema_bytes = read_input(manifest.schema.as_deref(), DEFAULT_SCHEMA_TOML)?;
    let config = load_config(&String::from_utf8(schema_bytes).context("schema file is not UTF-8")?)?;
    let schema = config.schema();

    let output = if manifest.method.persona {
        let mut needed = vec![PERSONAS_FILE.to_string()];
        needed.extend(config.questions.iter().map(|q| profiles_file(&q.id)));
        require_files(dir, &needed)?;
        let table = read_persona_table(open(&dir.join(PERSONAS_FILE))?, schema)?;
        let profiles = config
            .questions
            .iter()
            .map(|q| Ok(ProfileSet::read_csv(open(&dir.join(profiles_file(&q.id)))?, schema, q)?))
            .collect::<Result<Vec<_>>>()?;
        RunOutput { method: manifest.method, table: Some(table), profiles, records: None, reports: vec![] }
    } else {
        require_files(dir, &[INDIVIDUALS_FILE.to_string()])?;
        let records = read_individuals(open(&dir.join(INDIVIDUALS_FILE))?, schema, &config.questions)?;
        RunOutput { method: manifest.method, table: None, profiles: vec![], records: Some(records), reports: vec![] }
    };
    Ok((manifest, config, output))
}

fn metrics_csv(reports: &[MetricReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRIC_CSV_HEADER)?;
    for r in reports {
        for row in r.csv_rows() {
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

/// Scores a run directory against a benchmark and writes metrics and plots
/// into `out` (the run directory when `None`). The benchmark defaults to
/// the one recorded in the manifest.
pub fn cmd_evaluate(run_dir: &Path, benchmark: Option<&Path>, out: Option<&Path>) -> Result<MetricReport> {
    let (manifest, config, output) = load_run(run_dir)?;
    let bench_path = benchmark
        .map(Path::to_path_buf)
        .or_else(|| manifest.benchmark.clone())
        .ok_or_else(|| anyhow!("no benchmark recorded for this run; pass --benchmark"))?;
    let inputs = load_inputs(manifest.schema.as_deref(), Some(&bench_path), manifest.prior.as_deref(), manifest.merge)?;
    let bench = inputs.benchmark.expect("benchmark path was given");
    let report = evaluate_run(&output, &config, &bench)?;

    let out = out.unwrap_or(run_dir);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(METRICS_JSON), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    write_file(&out.join(METRICS_CSV), &metrics_csv(std::slice::from_ref(&report))?)?;
    let synth = synthetic_distributions(&output, &config)?;
    for (q, s) in config.questions.iter().zip(synth) {
        if let Some(real) = bench.response(&q.id) {
            let svg = plot::render(&q.text, real, &[(manifest.method.title().to_string(), s)]);
            write_file(&out.join(plot_file(&q.id)), svg.as_bytes())?;
        }
    }
    Ok(report)
}

/// Settings shared by every method in [`cmd_compare`].
#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub schema: Option<PathBuf>,
    pub benchmark: PathBuf,
    pub prior: Option<PathBuf>,
    pub seed: u64,
    pub n: usize,
    pub response_mode: ResponseMode,
    pub merge: MergeStrategy,
    pub out: PathBuf,
}

/// Runs all six methods with the deterministic backend into
/// `out/<method>/`, then writes `summary.csv`, `summary.json` and one
/// six-panel `compare_<question>.svg` per question.
pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    let mut panels: BTreeMap<String, Vec<(String, persona_synth::ingest::GroupedDistribution)>> = BTreeMap::new();
    for method in Method::ALL {
        let mut m = RunManifest::new(method, args.seed, args.out.join(method.name()));
        m.schema = args.schema.clone();
        m.benchmark = Some(args.benchmark.clone());
        m.prior = args.prior.clone();
        m.n = args.n;
        m.response_mode = args.response_mode;
        m.merge = args.merge;
        let written = cmd_generate(&m)?;
        reports.push(cmd_evaluate(&written.out, None, None)?);
        let (_, config, output) = load_run(&written.out)?;
        for (q, s) in config.questions.iter().zip(synthetic_distributions(&output, &config)?) {
            panels.entry(q.id.clone()).or_default().push((method.title().to_string(), s));
        }
    }
    let inputs = load_inputs(args.schema.as_deref(), Some(&args.benchmark), args.prior.as_deref(), args.merge)?;
    let bench = inputs.benchmark.expect("benchmark path was given");
    for q in &inputs.config.questions {
        if let (Some(real), Some(p)) = (bench.response(&q.id), panels.get(&q.id)) {
            let svg = plot::render(&q.text, real, p);
            write_file(&args.out.join(format!("compare_{}.svg", q.id)), svg.as_bytes())?;
        }
    }
    write_file(&args.out.join("summary.csv"), &metrics_csv(&reports)?)?;
    write_file(&args.out.join("summary.json"), (serde_json::to_string_pretty(&reports)? + "\n").as_bytes())?;
    Ok(reports)
}

/// Writes the bundled schema, synthetic benchmark fixture and naive prior.
pub fn cmd_fixture(out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = [
        ("schema.toml", DEFAULT_SCHEMA_TOML),
        ("benchmark.csv", BENCHMARK_FIXTURE_CSV),
        ("prior.csv", NAIVE_PRIOR_CSV),
    ];
    files
        .iter()
        .map(|(name, text)| {
            let p = out.join(name);
            write_file(&p, text.as_bytes())?;
            Ok(p)
        })
        .collect()
}
