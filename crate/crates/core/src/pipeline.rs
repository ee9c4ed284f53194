//! The six generation methods end to end, and their evaluation.

use std::collections::BTreeSet;

use crate::calibrate::{
    fit_densities_to_marginals, fit_responses_to_benchmark, CalibrationOptions, CalibrationReport, ResponseMode,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    aggregate_individuals, aggregate_personas, full_report, group_weights, joint_distribution,
    record_group_weights, table_group_weights, MetricReport,
};
use crate::ingest::{Benchmark, GroupedDistribution, MarginalTargets};
use crate::persona::PersonaTable;
use crate::prior::prior_densities;
use crate::respond::{
    generate_profiles, sample_attributes, sample_responses, DensitySource, IndividualRecord, Method, ProfileSet,
    ResponseBackend, Tier,
};
use crate::schema::{Question, SurveyConfig};

/// Population size for the non-persona methods.
pub const DEFAULT_INDIVIDUALS: usize = 10_000;

pub struct RunSpec<'a> {
    pub method: Method,
    pub config: &'a SurveyConfig,
    pub benchmark: Option<&'a Benchmark>,
    pub prior: &'a MarginalTargets,
    pub backend: &'a dyn ResponseBackend,
    pub seed: u64,
    pub n: usize,
    pub response_mode: ResponseMode,
    pub calibration: CalibrationOptions,
}

impl<'a> RunSpec<'a> {
    pub fn new(
        method: Method,
        config: &'a SurveyConfig,
        benchmark: Option<&'a Benchmark>,
        prior: &'a MarginalTargets,
        backend: &'a dyn ResponseBackend,
        seed: u64,
    ) -> Self {
        RunSpec {
            method,
            config,
            benchmark,
            prior,
            backend,
            seed,
            n: DEFAULT_INDIVIDUALS,
            response_mode: ResponseMode::default(),
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    /// Persona densities: the final table for persona methods, the sampling
    /// table for joint-sampled methods, `None` for independent sampling.
    pub table: Option<PersonaTable>,
    pub profiles: Vec<ProfileSet>,
    pub records: Option<Vec<IndividualRecord>>,
    /// Named calibration reports, e.g. `densities` or `responses:walking`.
    pub reports: Vec<(String, CalibrationReport)>,
}

fn target_for<'b>(benchmark: Option<&'b Benchmark>, question: &Question) -> Result<&'b GroupedDistribution> {
    benchmark.and_then(|b| b.response(&question.id)).ok_or_else(|| {
        Error::Config(format!(
            "guided methods need benchmark responses for question {:?}",
            question.id
        ))
    })
}

fn stats_for<'b>(spec: &RunSpec<'b>, question: &Question) -> Option<&'b GroupedDistribution> {
    if spec.method.tier == Tier::Guided {
        spec.benchmark.and_then(|b| b.response(&question.id))
    } else {
        None
    }
}

fn calibrated_table(spec: &RunSpec<'_>, reports: &mut Vec<(String, CalibrationReport)>) -> Result<PersonaTable> {
    let schema = spec.config.schema();
    let seed_table = prior_densities(schema, spec.prior)?;
    if spec.method.tier == Tier::Naive {
        return Ok(seed_table);
    }
    let benchmark = spec
        .benchmark
        .ok_or_else(|| Error::Config(format!("method {} requires a benchmark", spec.method)))?;
    let (table, report) = fit_densities_to_marginals(&seed_table, &benchmark.marginals, schema, &spec.calibration)?;
    if !report.converged {
        log::warn!(
            "density calibration stopped after {} iterations at deviation {:e}",
            report.iterations,
            report.max_deviation
        );
    }
    reports.push(("densities".into(), report));
    Ok(table)
}

/// Runs one method.
pub fn run(spec: &RunSpec<'_>) -> Result<RunOutput> {
    spec.config.validate()?;
    spec.calibration.validate()?;
    if spec.method.needs_benchmark() && spec.benchmark.is_none() {
        return Err(Error::Config(format!("method {} requires a benchmark", spec.method)));
    }
    if spec.method.persona {
        run_personas(spec)
    } else {
        run_individuals(spec)
    }
}

fn run_personas(spec: &RunSpec<'_>) -> Result<RunOutput> {
    let schema = spec.config.schema();
    let mut reports = Vec::new();
    let table = calibrated_table(spec, &mut reports)?;
    let live: Vec<usize> = (0..table.len()).filter(|&i| table.density(i) > 0.0).collect();
    let mut profiles = Vec::new();
    for q in &spec.config.questions {
        let set = generate_profiles(&table, schema, q, spec.backend, stats_for(spec, q), Some(&live))?;
        if spec.method.tier == Tier::Guided {
            let target = target_for(spec.benchmark, q)?;
            let (fitted, report) =
                fit_responses_to_benchmark(&set, &table, target, schema, spec.response_mode, &spec.calibration)?;
            reports.push((format!("responses:{}", q.id), report));
            profiles.push(fitted);
        } else {
            profiles.push(set);
        }
    }
    Ok(RunOutput {
        method: spec.method,
        table: Some(table),
        profiles,
        records: None,
        reports,
    })
}

fn run_individuals(spec: &RunSpec<'_>) -> Result<RunOutput> {
    let schema = spec.config.schema();
    let mut reports = Vec::new();
    let (table, personas) = match spec.method.tier {
        Tier::Naive => (None, sample_attributes(spec.n, DensitySource::Marginals(spec.prior), schema, spec.seed)?),
        _ => {
            let t = calibrated_table(spec, &mut reports)?;
            let p = sample_attributes(spec.n, DensitySource::Table(&t), schema, spec.seed)?;
            (Some(t), p)
        }
    };
    // one profile per distinct sampled cell
    let cells: Vec<usize> = personas.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut counts = vec![0.0; schema.sizes().iter().product()];
    for &p in &personas {
        counts[p] += 1.0;
    }
    let empirical = PersonaTable::from_parts(&schema.sizes(), counts)?;
    let mut profiles = Vec::new();
    for q in &spec.config.questions {
        let set = generate_profiles(&empirical, schema, q, spec.backend, stats_for(spec, q), Some(&cells))?;
        if spec.method.tier == Tier::Guided {
            let target = target_for(spec.benchmark, q)?;
            let (fitted, report) =
                fit_responses_to_benchmark(&set, &empirical, target, schema, spec.response_mode, &spec.calibration)?;
            reports.push((format!("responses:{}", q.id), report));
            profiles.push(fitted);
        } else {
            profiles.push(set);
        }
    }
    let refs: Vec<&ProfileSet> = profiles.iter().collect();
    let responses = sample_responses(&personas, &refs, spec.seed)?;
    let provenance = format!("{}:{}", spec.backend.id(), spec.seed);
    let records = personas
        .into_iter()
        .zip(responses)
        .map(|(p, r)| IndividualRecord {
            categories: empirical.persona(p).0,
            responses: r,
            provenance: provenance.clone(),
        })
        .collect();
    Ok(RunOutput {
        method: spec.method,
        table,
        profiles,
        records: Some(records),
        reports,
    })
}

/// Synthetic grouped distribution for each question, in config order.
pub fn synthetic_distributions(output: &RunOutput, config: &SurveyConfig) -> Result<Vec<GroupedDistribution>> {
    let schema = config.schema();
    config
        .questions
        .iter()
        .enumerate()
        .map(|(qi, q)| match (&output.records, &output.table) {
            (Some(records), _) => aggregate_individuals(records, schema, q, qi, &q.group_attribute),
            (None, Some(table)) => aggregate_personas(table, &output.profiles[qi], schema, q, &q.group_attribute),
            (None, None) => Err(Error::Evaluate("run has neither records nor a persona table".into())),
        })
        .collect()
}

/// Metrics against the benchmark for every question the benchmark covers.
pub fn evaluate_run(output: &RunOutput, config: &SurveyConfig, benchmark: &Benchmark) -> Result<MetricReport> {
    let schema = config.schema();
    let synth = synthetic_distributions(output, config)?;
    let mut rows = Vec::new();
    for (q, s) in config.questions.iter().zip(&synth) {
        let Some(real) = benchmark.response(&q.id) else {
            log::warn!("benchmark has no responses for {:?}; skipped", q.id);
            continue;
        };
        let real_w = group_weights(real, &benchmark.marginals, schema)?;
        let synth_w = match (&output.records, &output.table) {
            (Some(records), _) => record_group_weights(s, records, schema)?,
            (None, Some(table)) => table_group_weights(s, table, schema)?,
            (None, None) => unreachable!("checked by synthetic_distributions"),
        };
        let joint = joint_distribution(s, &synth_w)?;
        rows.push(full_report(s, real, &joint, &real_w)?);
    }
    MetricReport::new(output.method.name(), rows)
}
