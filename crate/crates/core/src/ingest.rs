//! Benchmark tables: demographic marginals and grouped response distributions.
//!
//! File layout (comma separated, `#` starts a comment line, header required):
//!
//! ```text
//! kind,attribute,category,question,response,share_percent
//! marginal,Age Group,14--17,,,5.0
//! response,Age Group,14--17,walking,Completely Agree,22.0
//! ```
//!
//! Shares are percentages in the file and fractions everywhere else. A
//! "not specified" row is folded into the remaining options before the block
//! is renormalized.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, SurveyConfig};

pub const BENCHMARK_FIXTURE_CSV: &str = include_str!("../data/benchmark_fixture.csv");
pub const NAIVE_PRIOR_CSV: &str = include_str!("../data/naive_prior.csv");

pub const NOT_SPECIFIED: &str = "Not specified";

/// Tolerance on a block's raw total before renormalization.
pub const RAW_SUM_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    /// All "not specified" mass goes to the single largest remaining option.
    #[default]
    Argmax,
    /// "Not specified" mass is spread over the remaining options in proportion to their shares.
    Proportional,
}

impl std::str::FromStr for MergeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(MergeStrategy::Argmax),
            "proportional" => Ok(MergeStrategy::Proportional),
            other => Err(Error::Config(format!("unknown merge strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub not_specified_label: String,
    pub merge: MergeStrategy,
    /// Also fold "not specified" rows inside demographic marginals.
    pub merge_marginals: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            not_specified_label: NOT_SPECIFIED.to_string(),
            merge: MergeStrategy::Argmax,
            merge_marginals: true,
        }
    }
}

/// Per-attribute category shares, aligned to the schema. Attributes the
/// benchmark does not cover are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTargets {
    pub attributes: Vec<String>,
    pub shares: Vec<Option<Vec<f64>>>,
}

impl MarginalTargets {
    pub fn empty(schema: &AttributeSchema) -> Self {
        MarginalTargets {
            attributes: schema.attributes().iter().map(|a| a.name.clone()).collect(),
            shares: vec![None; schema.len()],
        }
    }

    /// Targets for every attribute from raw fraction vectors.
    pub fn from_vectors(schema: &AttributeSchema, shares: Vec<Vec<f64>>) -> Result<Self> {
        let mut t = Self::empty(schema);
        if shares.len() != schema.len() {
            return Err(Error::Benchmark(format!(
                "expected {} marginal vectors, got {}",
                schema.len(),
                shares.len()
            )));
        }
        for (k, v) in shares.into_iter().enumerate() {
            t.set(schema, k, v)?;
        }
        Ok(t)
    }

    pub fn set(&mut self, schema: &AttributeSchema, attribute: usize, shares: Vec<f64>) -> Result<()> {
        let attr = &schema.attributes()[attribute];
        if shares.len() != attr.len() {
            return Err(Error::Benchmark(format!(
                "attribute {:?} has {} categories, got {} shares",
                attr.name,
                attr.len(),
                shares.len()
            )));
        }
        if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Benchmark(format!("negative or non-finite share for {:?}", attr.name)));
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Benchmark(format!(
                "shares for {:?} sum to {total}, expected 1",
                attr.name
            )));
        }
        self.shares[attribute] = Some(shares);
        Ok(())
    }

    pub fn get(&self, attribute: usize) -> Option<&[f64]> {
        self.shares.get(attribute).and_then(|s| s.as_deref())
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        let k = self.attributes.iter().position(|a| a == name)?;
        self.get(k)
    }

    pub fn covered(&self) -> usize {
        self.shares.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.covered() == self.shares.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShares {
    pub category: String,
    pub shares: Vec<f64>,
}

/// Response shares per category of one grouping attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDistribution {
    pub question_id: String,
    pub group_attribute: String,
    pub responses: Vec<String>,
    pub groups: Vec<GroupShares>,
    /// Groups that could not be normalized and were left out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omitted: Vec<String>,
}

impl GroupedDistribution {
    pub fn group(&self, category: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|g| g.category == category)
            .map(|g| g.shares.as_slice())
    }

    pub fn categories(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.category.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.groups {
            if g.shares.len() != self.responses.len() {
                return Err(Error::Benchmark(format!(
                    "group {:?} has {} shares for {} responses",
                    g.category,
                    g.shares.len(),
                    self.responses.len()
                )));
            }
            if g.shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(Error::Benchmark(format!("group {:?} has a negative share", g.category)));
            }
            let total: f64 = g.shares.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Benchmark(format!(
                    "group {:?} sums to {total}",
                    g.category
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub marginals: MarginalTargets,
    pub responses: Vec<GroupedDistribution>,
}

impl Benchmark {
    pub fn response(&self, question_id: &str) -> Option<&GroupedDistribution> {
        self.responses.iter().find(|d| d.question_id == question_id)
    }
}

/// Folds the share at `not_specified` into the remaining entries and drops it.
pub fn merge_not_specified(shares: &[f64], not_specified: usize, strategy: MergeStrategy) -> Result<Vec<f64>> {
    if not_specified >= shares.len() {
        return Err(Error::Merge(format!(
            "index {not_specified} out of range for {} shares",
            shares.len()
        )));
    }
    let extra = shares[not_specified];
    let mut rest: Vec<f64> = shares
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != not_specified)
        .map(|(_, &s)| s)
        .collect();
    let rest_total: f64 = rest.iter().sum();
    if rest.is_empty() || rest_total <= 0.0 {
        if extra > 0.0 {
            return Err(Error::Merge("all mass is on \"not specified\"".into()));
        }
        return Err(Error::Merge("no response carries any mass".into()));
    }
    match strategy {
        MergeStrategy::Argmax => {
            let mut best = 0;
            for (i, &s) in rest.iter().enumerate() {
                if s > rest[best] {
                    best = i;
                }
            }
            rest[best] += extra;
        }
        MergeStrategy::Proportional => {
            for s in rest.iter_mut() {
                *s += extra * *s / rest_total;
            }
        }
    }
    Ok(rest)
}

pub fn ingest_benchmark_file(path: &Path, config: &SurveyConfig, opts: &IngestOptions) -> Result<Benchmark> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ingest_benchmark(text.as_slice(), config, opts)
}

#[derive(Debug, Deserialize)]
struct Row {
    kind: String,
    attribute: String,
    category: String,
    #[serde(default)]
    question: String,
    #[serde(default)]
    response: String,
    share_percent: f64,
}

/// Accumulates one block of shares keyed by option index; `None` is the not-specified slot.
#[derive(Default)]
struct Block {
    first_row: usize,
    values: BTreeMap<Option<usize>, f64>,
}

impl Block {
    fn insert(&mut self, row: usize, slot: Option<usize>, value: f64, what: &str) -> Result<()> {
        if self.values.is_empty() {
            self.first_row = row;
        }
        if self.values.insert(slot, value).is_some() {
            return Err(Error::Ingest {
                row,
                message: format!("duplicate entry for {what}"),
            });
        }
        Ok(())
    }

    fn finish(self, len: usize, strategy: MergeStrategy, label: &str) -> Result<Vec<f64>> {
        let mut raw = vec![0.0; len];
        let mut ns = None;
        for (slot, v) in self.values {
            match slot {
                Some(i) => raw[i] = v / 100.0,
                None => ns = Some(v / 100.0),
            }
        }
        let total = raw.iter().sum::<f64>() + ns.unwrap_or(0.0);
        if (total - 1.0).abs() > RAW_SUM_TOLERANCE {
            return Err(Error::Ingest {
                row: self.first_row,
                message: format!(
                    "{label}: shares total {:.4}%, outside 100% ± {}",
                    total * 100.0,
                    RAW_SUM_TOLERANCE * 100.0
                ),
            });
        }
        let merged = match ns {
            Some(extra) => {
                raw.push(extra);
                merge_not_specified(&raw, len, strategy).map_err(|e| Error::Ingest {
                    row: self.first_row,
                    message: format!("{label}: {e}"),
                })?
            }
            None => raw,
        };
        let sum: f64 = merged.iter().sum();
        Ok(merged.into_iter().map(|s| s / sum).collect())
    }
}

/// Parses a benchmark table against the schema and questions in `config`.
pub fn ingest_benchmark<R: Read>(reader: R, config: &SurveyConfig, opts: &IngestOptions) -> Result<Benchmark> {
    let schema = config.schema();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut marginal_blocks: BTreeMap<usize, Block> = BTreeMap::new();
    // (question index, group attribute index, group category) -> block
    let mut response_blocks: BTreeMap<(usize, usize, usize), Block> = BTreeMap::new();
    let ns = opts.not_specified_label.as_str();

    let headers = rdr.headers()?.clone();
    for result in rdr.records() {
        let record = result?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: Row = record.deserialize(Some(&headers))?;
        let row_err = |message: String| Error::Ingest { row: line, message };
        if !row.share_percent.is_finite() || row.share_percent < 0.0 {
            return Err(row_err(format!("invalid share {}", row.share_percent)));
        }
        let attr_idx = schema
            .index_of(&row.attribute)
            .ok_or_else(|| row_err(format!("unknown attribute {:?}", row.attribute)))?;
        let attr = &schema.attributes()[attr_idx];
        match row.kind.as_str() {
            "marginal" => {
                let slot = match attr.index_of(&row.category) {
                    Some(i) => Some(i),
                    None if opts.merge_marginals && row.category == ns => None,
                    None => {
                        return Err(row_err(format!(
                            "unknown category {:?} for attribute {:?}",
                            row.category, row.attribute
                        )))
                    }
                };
                marginal_blocks.entry(attr_idx).or_default().insert(
                    line,
                    slot,
                    row.share_percent,
                    &format!("{}/{}", row.attribute, row.category),
                )?;
            }
            "response" => {
                let group = attr.index_of(&row.category).ok_or_else(|| {
                    row_err(format!(
                        "unknown category {:?} for attribute {:?}",
                        row.category, row.attribute
                    ))
                })?;
                let q_idx = config
                    .questions
                    .iter()
                    .position(|q| q.id == row.question)
                    .ok_or_else(|| row_err(format!("unknown question {:?}", row.question)))?;
                let question = &config.questions[q_idx];
                let slot = match question.response_index(&row.response) {
                    Some(i) => Some(i),
                    None if row.response == ns => None,
                    None => {
                        return Err(row_err(format!(
                            "unknown response {:?} for question {:?}",
                            row.response, row.question
                        )))
                    }
                };
                response_blocks.entry((q_idx, attr_idx, group)).or_default().insert(
                    line,
                    slot,
                    row.share_percent,
                    &format!("{}/{}/{}", row.question, row.category, row.response),
                )?;
            }
            other => return Err(row_err(format!("unknown row kind {other:?}"))),
        }
    }

    let mut marginals = MarginalTargets::empty(schema);
    for (k, block) in marginal_blocks {
        let attr = &schema.attributes()[k];
        let v = block.finish(attr.len(), opts.merge, &attr.name)?;
        marginals.shares[k] = Some(v);
    }

    let mut responses: Vec<GroupedDistribution> = Vec::new();
    for ((q_idx, attr_idx, group), block) in response_blocks {
        let question = &config.questions[q_idx];
        let attr = &schema.attributes()[attr_idx];
        let label = format!("{}/{}", question.id, attr.categories[group]);
        let shares = block.finish(question.responses.len(), opts.merge, &label)?;
        let existing = responses
            .iter_mut()
            .find(|d| d.question_id == question.id && d.group_attribute == attr.name);
        let dist = match existing {
            Some(d) => d,
            None => {
                if responses.iter().any(|d| d.question_id == question.id) {
                    return Err(Error::Benchmark(format!(
                        "question {:?} is grouped by more than one attribute",
                        question.id
                    )));
                }
                responses.push(GroupedDistribution {
                    question_id: question.id.clone(),
                    group_attribute: attr.name.clone(),
                    responses: question.responses.clone(),
                    groups: Vec::new(),
                    omitted: Vec::new(),
                });
                responses.last_mut().unwrap()
            }
        };
        dist.groups.push(GroupShares {
            category: attr.categories[group].clone(),
            shares,
        });
    }

    Ok(Benchmark { marginals, responses })
}

/// Parses the bundled synthetic fixture against the bundled default config.
pub fn fixture_benchmark(config: &SurveyConfig) -> Result<Benchmark> {
    ingest_benchmark(BENCHMARK_FIXTURE_CSV.as_bytes(), config, &IngestOptions::default())
}

/// Bundled naive prior marginals (synthetic).
pub fn naive_prior(config: &SurveyConfig) -> Result<MarginalTargets> {
    ingest_benchmark(NAIVE_PRIOR_CSV.as_bytes(), config, &IngestOptions::default()).map(|b| b.marginals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "kind,attribute,category,question,response,share_percent\n";

    fn cfg() -> SurveyConfig {
        SurveyConfig::default_config()
    }

    #[test]
    fn merge_examples() {
        let m = merge_not_specified(&[0.5, 0.3, 0.2], 2, MergeStrategy::Argmax).unwrap();
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
        let m = merge_not_specified(&[0.4, 0.4, 0.2], 2, MergeStrategy::Argmax).unwrap();
        assert!((m[0] - 0.6).abs() < 1e-15 && (m[1] - 0.4).abs() < 1e-15);
        assert!(merge_not_specified(&[0.0, 0.0, 1.0], 2, MergeStrategy::Argmax).is_err());
        let m = merge_not_specified(&[0.6, 0.2, 0.2], 2, MergeStrategy::Proportional).unwrap();
        assert!((m[0] - 0.75).abs() < 1e-15 && (m[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fixture_parses() {
        let b = fixture_benchmark(&cfg()).unwrap();
        assert!(b.marginals.is_complete());
        assert_eq!(b.responses.len(), 1);
        let walking = &b.responses[0];
        assert_eq!(walking.group_attribute, "Age Group");
        assert_eq!(walking.groups.len(), 9);
        walking.validate().unwrap();
        for k in 0..5 {
            let s: f64 = b.marginals.get(k).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        // Education: 1% not specified folded into "Medium" (31.5%)
        let edu = b.marginals.get(1).unwrap();
        assert!((edu[2] - 0.325).abs() < 1e-12);
        // 14--17: 1% not specified folded into "Rather Agree" (30%)
        let young = walking.group("14--17").unwrap();
        assert!((young[1] - 0.31).abs() < 1e-12);
    }

    #[test]
    fn point_mass_marginal() {
        let text = format!("{HEADER}marginal,Age Group,14--17,,,100\n");
        let b = ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).unwrap();
        let age = b.marginals.get(0).unwrap();
        assert_eq!(age[0], 1.0);
        assert!(age[1..].iter().all(|&s| s == 0.0));
        assert_eq!(b.marginals.covered(), 1);
    }

    #[test]
    fn unknown_category_names_row() {
        let text = format!("{HEADER}marginal,Age Group,14--17,,,50\nmarginal,Age Group,Unknown-Category,,,50\n");
        let err = ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::Ingest { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("Unknown-Category"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_are_case_sensitive() {
        let text = format!("{HEADER}marginal,age group,14--17,,,100\n");
        assert!(ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).is_err());
    }

    #[test]
    fn corrupt_sum_rejected() {
        let text = format!("{HEADER}marginal,Economic Status,Low,,,50\nmarginal,Economic Status,High,,,40\n");
        let err = ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ingest { .. }));
        // 99% is inside the band and gets renormalized
        let text = format!("{HEADER}marginal,Economic Status,Low,,,59\nmarginal,Economic Status,High,,,40\n");
        let b = ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).unwrap();
        let s: f64 = b.marginals.get(3).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_not_specified_can_be_disabled() {
        let text = format!("{HEADER}marginal,Economic Status,Low,,,99\nmarginal,Economic Status,Not specified,,,1\n");
        let opts = IngestOptions {
            merge_marginals: false,
            ..Default::default()
        };
        assert!(ingest_benchmark(text.as_bytes(), &cfg(), &opts).is_err());
        let b = ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).unwrap();
        assert_eq!(b.marginals.get(3).unwrap()[1], 1.0);
    }

    #[test]
    fn duplicate_row_rejected() {
        let text = format!("{HEADER}marginal,Age Group,14--17,,,50\nmarginal,Age Group,14--17,,,50\n");
        assert!(ingest_benchmark(text.as_bytes(), &cfg(), &IngestOptions::default()).is_err());
    }

    #[test]
    fn deterministic() {
        let a = fixture_benchmark(&cfg()).unwrap();
        let b = fixture_benchmark(&cfg()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn merge_preserves_mass(raw in prop::collection::vec(0.0f64..1.0, 2..8), ns in 0usize..8) {
            let ns = ns % raw.len();
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let shares: Vec<f64> = raw.iter().map(|v| v / total).collect();
            prop_assume!(shares.iter().enumerate().any(|(i, &s)| i != ns && s > 0.0));
            for strategy in [MergeStrategy::Argmax, MergeStrategy::Proportional] {
                let out = merge_not_specified(&shares, ns, strategy).unwrap();
                let before: f64 = shares.iter().sum();
                let after: f64 = out.iter().sum();
                prop_assert!((before - after).abs() < 1e-12);
                let max_before = shares.iter().enumerate().filter(|&(i, _)| i != ns).map(|(_, &s)| s).fold(0.0, f64::max);
                let max_after = out.iter().cloned().fold(0.0, f64::max);
                prop_assert!(max_after >= max_before);
            }
        }
    }
}
