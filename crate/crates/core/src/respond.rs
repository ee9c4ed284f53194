//! Per-persona response profiles and individual-level sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GroupedDistribution, MarginalTargets};
use crate::llmclient::LlmSettings;
use crate::persona::{Persona, PersonaTable};
use crate::schema::{AttributeSchema, Question};

const SUM_TOLERANCE: f64 = 1e-9;

/// How much benchmark information a method uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Naive,
    Structured,
    Guided,
}

/// One of the six survey generation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub tier: Tier,
    pub persona: bool,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method { tier: Tier::Naive, persona: false },
        Method { tier: Tier::Structured, persona: false },
        Method { tier: Tier::Guided, persona: false },
        Method { tier: Tier::Naive, persona: true },
        Method { tier: Tier::Structured, persona: true },
        Method { tier: Tier::Guided, persona: true },
    ];

    pub fn name(&self) -> &'static str {
        match (self.tier, self.persona) {
            (Tier::Naive, false) => "naive",
            (Tier::Structured, false) => "structured",
            (Tier::Guided, false) => "guided",
            (Tier::Naive, true) => "naive-persona",
            (Tier::Structured, true) => "structured-persona",
            (Tier::Guided, true) => "guided-persona",
        }
    }

    pub fn title(&self) -> &'static str {
        match (self.tier, self.persona) {
            (Tier::Naive, false) => "Naive AI Survey",
            (Tier::Structured, false) => "Structured AI Survey",
            (Tier::Guided, false) => "Guided AI Survey",
            (Tier::Naive, true) => "Naive Persona-based AI Survey",
            (Tier::Structured, true) => "Structured Persona-based AI Survey",
            (Tier::Guided, true) => "Guided Persona-based AI Survey",
        }
    }

    pub fn needs_benchmark(&self) -> bool {
        self.tier != Tier::Naive
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Deterministic,
    Llm,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(BackendKind::Deterministic),
            "llm" => Ok(BackendKind::Llm),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmSettings>,
}

impl BackendConfig {
    pub fn deterministic(method: Method, seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Deterministic,
            method,
            seed: Some(seed),
            llm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::Deterministic if self.seed.is_none() => {
                Err(Error::Config("deterministic backend requires a seed".into()))
            }
            BackendKind::Llm if self.llm.is_none() => {
                Err(Error::Config("llm backend requires endpoint parameters".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Response probability vectors for one question, keyed by persona index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    question_id: String,
    n_options: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

fn check_profile(probs: &[f64], n_options: usize) -> Result<()> {
    if probs.len() != n_options {
        return Err(Error::Backend {
            message: format!("profile has {} entries, expected {n_options}", probs.len()),
            raw: None,
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Backend {
            message: "profile has a negative or non-finite probability".into(),
            raw: None,
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Backend {
            message: format!("profile sums to {total}"),
            raw: None,
        });
    }
    Ok(())
}

impl ProfileSet {
    pub fn new(question_id: impl Into<String>, n_options: usize) -> Self {
        ProfileSet {
            question_id: question_id.into(),
            n_options,
            rows: BTreeMap::new(),
        }
    }

    /// One profile per persona index `0..rows.len()`.
    pub fn dense(question_id: impl Into<String>, n_options: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut set = Self::new(question_id, n_options);
        for (i, r) in rows.into_iter().enumerate() {
            set.insert(i, r)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, persona: usize, probs: Vec<f64>) -> Result<()> {
        check_profile(&probs, self.n_options)?;
        self.rows.insert(persona, probs);
        Ok(())
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, persona: usize) -> Option<&[f64]> {
        self.rows.get(&persona).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &Vec<f64>)> {
        self.rows.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&usize, &mut Vec<f64>)> {
        self.rows.iter_mut()
    }

    pub fn write_csv<W: Write>(&self, writer: W, schema: &AttributeSchema, table: &PersonaTable, question: &Question) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
        header.extend(question.responses.iter().map(String::as_str));
        w.write_record(&header)?;
        for (&i, probs) in &self.rows {
            let mut rec: Vec<String> = table.persona(i).labels(schema).into_iter().map(String::from).collect();
            rec.extend(probs.iter().map(|p| format!("{p:e}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<profiles>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, schema: &AttributeSchema, question: &Question) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let n_attr = schema.len();
        let expected: Vec<&str> = schema
            .attributes()
            .iter()
            .map(|a| a.name.as_str())
            .chain(question.responses.iter().map(String::as_str))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Backend {
                message: format!("unexpected profile header {headers:?}"),
                raw: None,
            });
        }
        let table = PersonaTable::uniform(&schema.sizes());
        let mut set = ProfileSet::new(&question.id, question.responses.len());
        for rec in r.records() {
            let rec = rec?;
            let mut cats = Vec::with_capacity(n_attr);
            for (k, attr) in schema.attributes().iter().enumerate() {
                cats.push(attr.index_of(&rec[k]).ok_or_else(|| Error::Backend {
                    message: format!("unknown category {:?}", &rec[k]),
                    raw: None,
                })?);
            }
            let probs = (n_attr..rec.len())
                .map(|j| {
                    rec[j].parse::<f64>().map_err(|_| Error::Backend {
                        message: format!("bad probability {:?}", &rec[j]),
                        raw: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let idx = table.index_of(&Persona(cats)).expect("validated categories");
            set.insert(idx, probs)?;
        }
        Ok(set)
    }
}

/// Produces response probability vectors for personas.
pub trait ResponseBackend: Sync {
    /// Identifier recorded in individual provenance.
    fn id(&self) -> String;

    fn profile(
        &self,
        schema: &AttributeSchema,
        persona: &Persona,
        question: &Question,
        stats: Option<&GroupedDistribution>,
    ) -> Result<Vec<f64>>;

    /// Profiles for many personas; backends may override to batch or parallelize.
    fn profiles(
        &self,
        schema: &AttributeSchema,
        personas: &[Persona],
        question: &Question,
        stats: Option<&GroupedDistribution>,
    ) -> Result<Vec<Vec<f64>>> {
        personas
            .iter()
            .map(|p| self.profile(schema, p, question, stats))
            .collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable across platforms and releases, unlike `std::hash`.
fn stable_hash(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix64(seed);
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        // separator so ("ab","c") != ("a","bc")
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Seeded stand-in for a language model.
///
/// Logits per response option are the sum of one hashed effect per
/// (attribute, category), a hashed per-persona effect, and, when the question
/// sets `trend`, a monotone shift along the question's grouping attribute:
/// later categories lean toward the first response option. Probabilities are
/// the softmax of the logits.
#[derive(Debug, Clone)]
pub struct DeterministicBackend {
    pub seed: u64,
    pub attribute_scale: f64,
    pub persona_scale: f64,
}

impl DeterministicBackend {
    pub fn new(seed: u64) -> Self {
        DeterministicBackend {
            seed,
            attribute_scale: 0.8,
            persona_scale: 0.3,
        }
    }
}

impl ResponseBackend for DeterministicBackend {
    fn id(&self) -> String {
        format!("deterministic:{}", self.seed)
    }

    fn profile(
        &self,
        schema: &AttributeSchema,
        persona: &Persona,
        question: &Question,
        _stats: Option<&GroupedDistribution>,
    ) -> Result<Vec<f64>> {
        let k = question.responses.len();
        let labels = persona.labels(schema);
        let mut logits = vec![0.0; k];
        for (i, logit) in logits.iter_mut().enumerate() {
            let idx = (i as u64).to_le_bytes();
            for (attr, label) in schema.attributes().iter().zip(&labels) {
                let h = stable_hash(self.seed, &[question.id.as_bytes(), attr.name.as_bytes(), label.as_bytes(), &idx]);
                *logit += self.attribute_scale * (2.0 * unit(h) - 1.0);
            }
            let joined = labels.join("\u{1f}");
            let h = stable_hash(self.seed, &[question.id.as_bytes(), b"persona", joined.as_bytes(), &idx]);
            *logit += self.persona_scale * (2.0 * unit(h) - 1.0);
        }
        if question.trend != 0.0 {
            if let Some(g) = schema.index_of(&question.group_attribute) {
                let n = schema.attributes()[g].len();
                let pos = if n > 1 { persona.0[g] as f64 / (n - 1) as f64 } else { 0.5 };
                let center = (k - 1) as f64 / 2.0;
                for (i, logit) in logits.iter_mut().enumerate() {
                    let lean = (center - i as f64) / center;
                    *logit += question.trend * (2.0 * pos - 1.0) * lean;
                }
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / total).collect())
    }
}

/// Generates profiles for `indices` (all personas when `None`).
pub fn generate_profiles(
    table: &PersonaTable,
    schema: &AttributeSchema,
    question: &Question,
    backend: &dyn ResponseBackend,
    stats: Option<&GroupedDistribution>,
    indices: Option<&[usize]>,
) -> Result<ProfileSet> {
    if !table.matches_schema(schema) {
        return Err(Error::Persona("persona table does not match schema".into()));
    }
    question.validate()?;
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..table.len()).collect();
            &all
        }
    };
    let personas: Vec<Persona> = indices.iter().map(|&i| table.persona(i)).collect();
    let rows = backend.profiles(schema, &personas, question, stats)?;
    let mut set = ProfileSet::new(&question.id, question.responses.len());
    for (&i, probs) in indices.iter().zip(rows) {
        set.insert(i, probs)?;
    }
    Ok(set)
}

/// One synthetic survey respondent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndividualRecord {
    pub categories: Vec<usize>,
    /// One selected response index per question, in question order.
    pub responses: Vec<usize>,
    pub provenance: String,
}

impl IndividualRecord {
    pub fn validate(&self, schema: &AttributeSchema, questions: &[Question]) -> Result<()> {
        let sizes = schema.sizes();
        if self.categories.len() != sizes.len() || self.categories.iter().zip(&sizes).any(|(c, n)| c >= n) {
            return Err(Error::Sampling(format!("invalid categories {:?}", self.categories)));
        }
        if self.responses.len() != questions.len()
            || self.responses.iter().zip(questions).any(|(r, q)| *r >= q.responses.len())
        {
            return Err(Error::Sampling(format!("invalid responses {:?}", self.responses)));
        }
        Ok(())
    }
}

/// Where sampled attributes come from.
#[derive(Debug, Clone, Copy)]
pub enum DensitySource<'a> {
    /// Joint sampling over personas.
    Table(&'a PersonaTable),
    /// Independent sampling per attribute.
    Marginals(&'a MarginalTargets),
}

const ATTRIBUTE_STREAM: u64 = 0x6174_7472;
const RESPONSE_STREAM: u64 = 0x7265_7370;

/// Counter-based generator for individual `index`: independent of how many
/// other individuals are drawn or in which order.
fn individual_rng(seed: u64, purpose: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(index as u64);
    rng
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; never returns a zero-weight index.
fn draw(cdf: &[f64], weights: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap_or(&0.0);
    let target = u * total;
    let i = cdf.partition_point(|&c| c <= target);
    if i < cdf.len() {
        return i;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws `n` personas (as lexicographic indices).
pub fn sample_attributes(n: usize, source: DensitySource<'_>, schema: &AttributeSchema, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Sampling("n must be at least 1".into()));
    }
    let sizes = schema.sizes();
    let layout = PersonaTable::uniform(&sizes);
    match source {
        DensitySource::Table(table) => {
            if table.sizes() != sizes.as_slice() {
                return Err(Error::Sampling("persona table does not match schema".into()));
            }
            let cdf = cumulative(table.densities());
            Ok((0..n)
                .map(|j| {
                    let u: f64 = individual_rng(seed, ATTRIBUTE_STREAM, j).random();
                    draw(&cdf, table.densities(), u)
                })
                .collect())
        }
        DensitySource::Marginals(targets) => {
            let marginals: Vec<&[f64]> = (0..schema.len())
                .map(|k| {
                    targets.get(k).ok_or_else(|| {
                        Error::Sampling(format!(
                            "no marginal for attribute {:?}",
                            schema.attributes()[k].name
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let cdfs: Vec<Vec<f64>> = marginals.iter().map(|m| cumulative(m)).collect();
            Ok((0..n)
                .map(|j| {
                    let mut rng = individual_rng(seed, ATTRIBUTE_STREAM, j);
                    let cats: Vec<usize> = (0..sizes.len())
                        .map(|k| draw(&cdfs[k], marginals[k], rng.random()))
                        .collect();
                    layout.index_of(&Persona(cats)).expect("in range")
                })
                .collect())
        }
    }
}

/// Draws one response per question for each sampled persona.
pub fn sample_responses(personas: &[usize], profiles: &[&ProfileSet], seed: u64) -> Result<Vec<Vec<usize>>> {
    personas
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let mut rng = individual_rng(seed, RESPONSE_STREAM, j);
            profiles
                .iter()
                .map(|set| {
                    let probs = set.get(p).ok_or_else(|| {
                        Error::Sampling(format!(
                            "no profile for persona {p} in question {:?}",
                            set.question_id()
                        ))
                    })?;
                    let cdf = cumulative(probs);
                    Ok(draw(&cdf, probs, rng.random()))
                })
                .collect()
        })
        .collect()
}

/// Samples `n` individuals with attributes from `source` and responses from `profiles`.
pub fn sample_individuals(
    n: usize,
    source: DensitySource<'_>,
    schema: &AttributeSchema,
    profiles: &[&ProfileSet],
    seed: u64,
    provenance: &str,
) -> Result<Vec<IndividualRecord>> {
    let personas = sample_attributes(n, source, schema, seed)?;
    let responses = sample_responses(&personas, profiles, seed)?;
    let layout = PersonaTable::uniform(&schema.sizes());
    Ok(personas
        .into_iter()
        .zip(responses)
        .map(|(p, r)| IndividualRecord {
            categories: layout.persona(p).0,
            responses: r,
            provenance: provenance.to_string(),
        })
        .collect())
}

pub fn write_individuals<W: Write>(
    writer: W,
    schema: &AttributeSchema,
    questions: &[Question],
    records: &[IndividualRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
    header.extend(questions.iter().map(|q| q.id.as_str()));
    header.push("provenance");
    w.write_record(&header)?;
    for rec in records {
        let mut row: Vec<&str> = rec
            .categories
            .iter()
            .zip(schema.attributes())
            .map(|(&c, a)| a.categories[c].as_str())
            .collect();
        row.extend(rec.responses.iter().zip(questions).map(|(&r, q)| q.responses[r].as_str()));
        row.push(&rec.provenance);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<individuals>", e))?;
    Ok(())
}

pub fn read_individuals<R: Read>(reader: R, schema: &AttributeSchema, questions: &[Question]) -> Result<Vec<IndividualRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let n_attr = schema.len();
    let expected: Vec<&str> = schema
        .attributes()
        .iter()
        .map(|a| a.name.as_str())
        .chain(questions.iter().map(|q| q.id.as_str()))
        .chain(std::iter::once("provenance"))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Sampling(format!("unexpected individuals header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let categories = schema
            .attributes()
            .iter()
            .enumerate()
            .map(|(k, a)| {
                a.index_of(&rec[k])
                    .ok_or_else(|| Error::Sampling(format!("unknown category {:?}", &rec[k])))
            })
            .collect::<Result<Vec<_>>>()?;
        let responses = questions
            .iter()
            .enumerate()
            .map(|(j, q)| {
                q.response_index(&rec[n_attr + j])
                    .ok_or_else(|| Error::Sampling(format!("unknown response {:?}", &rec[n_attr + j])))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(IndividualRecord {
            categories,
            responses,
            provenance: rec[n_attr + questions.len()].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::enumerate_personas;
    use crate::schema::SurveyConfig;
    use proptest::prelude::*;

    fn walking() -> (SurveyConfig, Question) {
        let cfg = SurveyConfig::default_config();
        let q = cfg.question("walking").unwrap().clone();
        (cfg, q)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("random".parse::<Method>().is_err());
    }

    #[test]
    fn backend_config_requirements() {
        let mut cfg = BackendConfig::deterministic(Method::ALL[0], 7);
        cfg.validate().unwrap();
        cfg.seed = None;
        assert!(cfg.validate().is_err());
        let llm = BackendConfig { kind: BackendKind::Llm, method: Method::ALL[0], seed: None, llm: None };
        assert!(llm.validate().is_err());
    }

    #[test]
    fn deterministic_profiles_bit_identical() {
        let (cfg, q) = walking();
        let table = enumerate_personas(cfg.schema());
        let b = DeterministicBackend::new(7);
        let a = generate_profiles(&table, cfg.schema(), &q, &b, None, None).unwrap();
        let c = generate_profiles(&table, cfg.schema(), &q, &b, None, None).unwrap();
        assert_eq!(a.len(), 15840);
        for ((i, x), (j, y)) in a.iter().zip(c.iter()) {
            assert_eq!(i, j);
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn age_changes_profile() {
        let (cfg, q) = walking();
        let b = DeterministicBackend::new(7);
        let young = Persona(vec![0, 1, 0, 2, 3]);
        let old = Persona(vec![8, 1, 0, 2, 3]);
        let py = b.profile(cfg.schema(), &young, &q, None).unwrap();
        let po = b.profile(cfg.schema(), &old, &q, None).unwrap();
        assert_ne!(py, po);
        // the age trend pushes older personas toward agreement
        assert!(po[0] > py[0]);
    }

    #[test]
    fn profiles_independent_of_enumeration_order() {
        let (cfg, q) = walking();
        let table = enumerate_personas(cfg.schema());
        let b = DeterministicBackend::new(3);
        let full = generate_profiles(&table, cfg.schema(), &q, &b, None, None).unwrap();
        let reversed: Vec<usize> = (0..table.len()).rev().step_by(7).collect();
        let subset = generate_profiles(&table, cfg.schema(), &q, &b, None, Some(&reversed)).unwrap();
        for &i in &reversed {
            assert_eq!(subset.get(i), full.get(i));
        }
    }

    #[test]
    fn point_mass_sampling() {
        let schema = AttributeSchema::from_sizes(&[2, 3]).unwrap();
        let table = PersonaTable::from_parts(&[2, 3], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let profiles = ProfileSet::dense("q", 2, vec![vec![0.5, 0.5]; 6]).unwrap();
        let recs = sample_individuals(1, DensitySource::Table(&table), &schema, &[&profiles], 1, "t").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].categories, vec![1, 1]);
    }

    #[test]
    fn sampling_is_reproducible_and_prefix_stable() {
        let schema = AttributeSchema::from_sizes(&[3, 3]).unwrap();
        let table = enumerate_personas(&schema);
        let profiles = ProfileSet::dense("q", 2, vec![vec![0.3, 0.7]; 9]).unwrap();
        let a = sample_individuals(500, DensitySource::Table(&table), &schema, &[&profiles], 11, "t").unwrap();
        let b = sample_individuals(500, DensitySource::Table(&table), &schema, &[&profiles], 11, "t").unwrap();
        assert_eq!(a, b);
        let c = sample_individuals(50, DensitySource::Table(&table), &schema, &[&profiles], 11, "t").unwrap();
        assert_eq!(&a[..50], c.as_slice());
        let d = sample_individuals(500, DensitySource::Table(&table), &schema, &[&profiles], 12, "t").unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn missing_profile_errors() {
        let schema = AttributeSchema::from_sizes(&[2]).unwrap();
        let table = enumerate_personas(&schema);
        let mut profiles = ProfileSet::new("q", 2);
        profiles.insert(0, vec![1.0, 0.0]).unwrap();
        let err = sample_individuals(200, DensitySource::Table(&table), &schema, &[&profiles], 1, "t");
        assert!(matches!(err, Err(Error::Sampling(_))));
    }

    #[test]
    fn zero_weight_never_drawn() {
        let w = [0.0, 0.5, 0.0, 0.5, 0.0];
        let cdf = cumulative(&w);
        for u in [0.0, 0.25, 0.5, 0.75, 0.999_999_999, 1.0] {
            let i = draw(&cdf, &w, u);
            assert!(w[i] > 0.0, "u={u} drew {i}");
        }
    }

    #[test]
    fn individuals_csv_round_trip() {
        let (cfg, _) = walking();
        let table = enumerate_personas(cfg.schema());
        let q = cfg.question("walking").unwrap();
        let b = DeterministicBackend::new(1);
        let prof = generate_profiles(&table, cfg.schema(), q, &b, None, None).unwrap();
        let recs = sample_individuals(20, DensitySource::Table(&table), cfg.schema(), &[&prof], 5, "det").unwrap();
        let mut buf = Vec::new();
        write_individuals(&mut buf, cfg.schema(), &cfg.questions, &recs).unwrap();
        let back = read_individuals(buf.as_slice(), cfg.schema(), &cfg.questions).unwrap();
        assert_eq!(back, recs);
    }

    proptest! {
        #[test]
        fn records_and_profiles_validate(
            sizes in prop::collection::vec(1usize..4, 1..4),
            options in 2usize..6,
            seed in any::<u64>(),
        ) {
            let schema = AttributeSchema::from_sizes(&sizes).unwrap();
            let labels: Vec<String> = (0..options).map(|i| format!("r{i}")).collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let q = Question::new("q", "?", &refs).with_group("A0");
            let table = enumerate_personas(&schema);
            let prof = generate_profiles(&table, &schema, &q, &DeterministicBackend::new(seed), None, None).unwrap();
            for (_, p) in prof.iter() {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|&x| x >= 0.0));
            }
            let recs = sample_individuals(30, DensitySource::Table(&table), &schema, &[&prof], seed, "p").unwrap();
            for r in &recs {
                r.validate(&schema, std::slice::from_ref(&q)).unwrap();
            }
        }
    }
}
