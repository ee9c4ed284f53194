//! Grouped aggregation and the alignment metrics.
//!
//! Conventions: MAE and RMSE are in percentage points; JS distance is the
//! square root of the base-2 Jensen-Shannon divergence; entropies are in
//! bits. Scalar metrics over groups are weighted by the real group shares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GroupShares, GroupedDistribution, MarginalTargets};
use crate::persona::PersonaTable;
use crate::respond::{IndividualRecord, ProfileSet};
use crate::schema::{AttributeSchema, Question};

const SUM_TOLERANCE: f64 = 1e-9;

/// Density-weighted response shares per category of `group_attribute`,
/// normalized within each group. Groups without density are omitted.
pub fn aggregate_personas(
    table: &PersonaTable,
    profiles: &ProfileSet,
    schema: &AttributeSchema,
    question: &Question,
    group_attribute: &str,
) -> Result<GroupedDistribution> {
    let g = schema.require_index(group_attribute)?;
    let attr = &schema.attributes()[g];
    let k = question.responses.len();
    if profiles.n_options() != k {
        return Err(Error::Evaluate(format!(
            "profiles have {} options, question {:?} has {k}",
            profiles.n_options(),
            question.id
        )));
    }
    let mut sums = vec![vec![0.0; k]; attr.len()];
    for (i, &d) in table.densities().iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let probs = profiles
            .get(i)
            .ok_or_else(|| Error::Evaluate(format!("no profile for persona {i} with positive density")))?;
        let c = table.category(i, g);
        for (s, p) in sums[c].iter_mut().zip(probs) {
            *s += d * p;
        }
    }
    Ok(normalized_groups(question, attr.name.as_str(), &attr.categories, sums))
}

fn normalized_groups(question: &Question, group_attribute: &str, categories: &[String], sums: Vec<Vec<f64>>) -> GroupedDistribution {
    let mut groups = Vec::new();
    let mut omitted = Vec::new();
    for (cat, row) in categories.iter().zip(sums) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            groups.push(GroupShares {
                category: cat.clone(),
                shares: row.into_iter().map(|x| x / total).collect(),
            });
        } else {
            log::warn!("group {cat:?} has no weight and is omitted");
            omitted.push(cat.clone());
        }
    }
    GroupedDistribution {
        question_id: question.id.clone(),
        group_attribute: group_attribute.to_string(),
        responses: question.responses.clone(),
        groups,
        omitted,
    }
}

/// Empirical response frequencies per group. `question_index` selects the
/// response column of each record.
pub fn aggregate_individuals(
    records: &[IndividualRecord],
    schema: &AttributeSchema,
    question: &Question,
    question_index: usize,
    group_attribute: &str,
) -> Result<GroupedDistribution> {
    if records.is_empty() {
        return Err(Error::Evaluate("no records to aggregate".into()));
    }
    let g = schema.require_index(group_attribute)?;
    let attr = &schema.attributes()[g];
    let k = question.responses.len();
    let mut counts = vec![vec![0.0; k]; attr.len()];
    for r in records {
        let c = *r
            .categories
            .get(g)
            .ok_or_else(|| Error::Evaluate("record is missing the group attribute".into()))?;
        let resp = *r
            .responses
            .get(question_index)
            .ok_or_else(|| Error::Evaluate("record is missing the question".into()))?;
        if c >= attr.len() || resp >= k {
            return Err(Error::Evaluate(format!("record out of range: {r:?}")));
        }
        counts[c][resp] += 1.0;
    }
    Ok(normalized_groups(question, attr.name.as_str(), &attr.categories, counts))
}

fn check_aligned(synth: &GroupedDistribution, real: &GroupedDistribution) -> Result<()> {
    if synth.responses != real.responses {
        return Err(Error::Evaluate(format!(
            "response sets differ for question {:?}",
            real.question_id
        )));
    }
    if synth.categories() != real.categories() {
        return Err(Error::Evaluate(format!(
            "group sets differ: {:?} vs {:?}",
            synth.categories(),
            real.categories()
        )));
    }
    Ok(())
}

/// Mean absolute and root-mean-square error over all (group, response) cells,
/// in percentage points.
pub fn mae_rmse(synth: &GroupedDistribution, real: &GroupedDistribution) -> Result<(f64, f64)> {
    check_aligned(synth, real)?;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (s, r) in synth.groups.iter().zip(&real.groups) {
        for (a, b) in s.shares.iter().zip(&r.shares) {
            let d = (a - b) * 100.0;
            abs += d.abs();
            sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Evaluate("no cells to compare".into()));
    }
    Ok((abs / n as f64, (sq / n as f64).sqrt()))
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Evaluate(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Evaluate(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// Square root of the base-2 Jensen-Shannon divergence, in [0, 1].
pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Evaluate(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut div = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            div += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            div += 0.5 * b * (b / m).log2();
        }
    }
    Ok(div.clamp(0.0, 1.0).sqrt())
}

/// Shannon entropy in bits, with 0·log 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Real group shares for `real`'s groups, renormalized over the groups present.
pub fn group_weights(
    real: &GroupedDistribution,
    marginals: &MarginalTargets,
    schema: &AttributeSchema,
) -> Result<Vec<f64>> {
    let g = schema.require_index(&real.group_attribute)?;
    let shares = marginals.get(g).ok_or_else(|| {
        Error::Evaluate(format!("benchmark has no marginal for {:?}", real.group_attribute))
    })?;
    weights_for_groups(real, shares, &schema.attributes()[g].categories)
}

/// Group shares from a persona table.
pub fn table_group_weights(
    dist: &GroupedDistribution,
    table: &PersonaTable,
    schema: &AttributeSchema,
) -> Result<Vec<f64>> {
    let g = schema.require_index(&dist.group_attribute)?;
    weights_for_groups(dist, &table.marginal(g), &schema.attributes()[g].categories)
}

/// Group shares from individual records.
pub fn record_group_weights(
    dist: &GroupedDistribution,
    records: &[IndividualRecord],
    schema: &AttributeSchema,
) -> Result<Vec<f64>> {
    let g = schema.require_index(&dist.group_attribute)?;
    let attr = &schema.attributes()[g];
    let mut counts = vec![0.0; attr.len()];
    for r in records {
        counts[r.categories[g]] += 1.0;
    }
    weights_for_groups(dist, &counts, &attr.categories)
}

fn weights_for_groups(dist: &GroupedDistribution, shares: &[f64], categories: &[String]) -> Result<Vec<f64>> {
    let w = dist
        .groups
        .iter()
        .map(|g| {
            categories
                .iter()
                .position(|c| *c == g.category)
                .map(|i| shares[i])
                .ok_or_else(|| Error::Evaluate(format!("unknown group {:?}", g.category)))
        })
        .collect::<Result<Vec<f64>>>()?;
    normalize_weights(w)
}

fn normalize_weights(w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Evaluate("group weights have no mass".into()));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

fn check_weights(dist: &GroupedDistribution, weights: &[f64]) -> Result<()> {
    if weights.len() != dist.groups.len() {
        return Err(Error::Evaluate(format!(
            "{} weights for {} groups",
            weights.len(),
            dist.groups.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Evaluate(format!("group weights sum to {total}")));
    }
    Ok(())
}

/// JS distance per group, averaged with `weights`.
pub fn grouped_js_distance(synth: &GroupedDistribution, real: &GroupedDistribution, weights: &[f64]) -> Result<f64> {
    check_aligned(synth, real)?;
    check_weights(real, weights)?;
    let mut acc = 0.0;
    for ((s, r), w) in synth.groups.iter().zip(&real.groups).zip(weights) {
        acc += w * js_distance(&s.shares, &r.shares)?;
    }
    Ok(acc)
}

/// H(R | A) = Σ_a w_a · H(R | A = a).
pub fn conditional_entropy(dist: &GroupedDistribution, weights: &[f64]) -> Result<f64> {
    check_weights(dist, weights)?;
    Ok(dist
        .groups
        .iter()
        .zip(weights)
        .map(|(g, w)| w * entropy(&g.shares))
        .sum())
}

/// |H_synth(R|A) − H_real(R|A)|, both weighted by the real group shares.
pub fn conditional_entropy_gap(synth: &GroupedDistribution, real: &GroupedDistribution, weights: &[f64]) -> Result<f64> {
    check_aligned(synth, real)?;
    Ok((conditional_entropy(synth, weights)? - conditional_entropy(real, weights)?).abs())
}

/// Comonotone coupling of two distributions over the same ordered scale:
/// mass is paired by matching cumulative quantiles. Rows index `real`,
/// columns index `synth`.
pub fn monotone_coupling(real: &[f64], synth: &[f64]) -> Result<Vec<Vec<f64>>> {
    if real.len() != synth.len() {
        return Err(Error::Evaluate("coupling needs equal support sizes".into()));
    }
    let k = real.len();
    let mut table = vec![vec![0.0; k]; k];
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut sb) = (real.first().copied().unwrap_or(0.0), synth.first().copied().unwrap_or(0.0));
    const EPS: f64 = 1e-15;
    while i < k && j < k {
        let m = ra.min(sb);
        table[i][j] += m;
        ra -= m;
        sb -= m;
        if ra <= EPS {
            i += 1;
            ra = real.get(i).copied().unwrap_or(0.0);
        }
        if sb <= EPS {
            j += 1;
            sb = synth.get(j).copied().unwrap_or(0.0);
        }
    }
    Ok(table)
}

/// Cramér's V of a contingency table of masses. Empty rows and columns are
/// dropped first. A 1×1 table is perfectly associated (V = 1); a table with
/// one row or one column but not both carries no association (V = 0).
pub fn cramers_v_from_table(table: &[Vec<f64>]) -> Result<f64> {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols_n = table.first().map(Vec::len).unwrap_or(0);
    if table.iter().any(|r| r.len() != cols_n) {
        return Err(Error::Evaluate("ragged contingency table".into()));
    }
    if table.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Evaluate("contingency table has a negative entry".into()));
    }
    let cols: Vec<f64> = (0..cols_n).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Evaluate("contingency table is empty".into()));
    }
    let r = rows.iter().filter(|&&x| x > 0.0).count();
    let c = cols.iter().filter(|&&x| x > 0.0).count();
    let dim = r.min(c);
    if dim <= 1 {
        return Ok(if r == 1 && c == 1 { 1.0 } else { 0.0 });
    }
    // phi² = Σ O²/(row·col) − 1 on the normalized table
    let mut s = 0.0;
    for (i, row) in table.iter().enumerate() {
        if rows[i] <= 0.0 {
            continue;
        }
        for (j, &o) in row.iter().enumerate() {
            if cols[j] <= 0.0 || o == 0.0 {
                continue;
            }
            s += (o / total) * (o / total) / ((rows[i] / total) * (cols[j] / total));
        }
    }
    let phi2 = (s - 1.0).max(0.0);
    Ok((phi2 / (dim - 1) as f64).sqrt().min(1.0))
}

/// Monotone-coupling tables per group, summed with `weights`.
pub fn coupled_table(synth: &GroupedDistribution, real: &GroupedDistribution, weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_aligned(synth, real)?;
    check_weights(real, weights)?;
    let k = real.responses.len();
    let mut acc = vec![vec![0.0; k]; k];
    for ((s, r), &w) in synth.groups.iter().zip(&real.groups).zip(weights) {
        let t = monotone_coupling(&r.shares, &s.shares)?;
        for (arow, trow) in acc.iter_mut().zip(t) {
            for (a, x) in arow.iter_mut().zip(trow) {
                *a += w * x;
            }
        }
    }
    Ok(acc)
}

pub fn cramers_v(synth: &GroupedDistribution, real: &GroupedDistribution, weights: &[f64]) -> Result<f64> {
    cramers_v_from_table(&coupled_table(synth, real, weights)?)
}

/// Joint (group, response) distribution: group share times within-group share.
pub fn joint_distribution(dist: &GroupedDistribution, group_shares: &[f64]) -> Result<Vec<f64>> {
    check_weights(dist, group_shares)?;
    Ok(dist
        .groups
        .iter()
        .zip(group_shares)
        .flat_map(|(g, w)| g.shares.iter().map(move |s| w * s))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub mae: f64,
    pub rmse: f64,
    pub js_distance: f64,
    pub entropy: f64,
    pub conditional_entropy_gap: f64,
    pub cramers_v: f64,
}

/// All metrics for one question.
pub fn full_report(
    synth: &GroupedDistribution,
    real: &GroupedDistribution,
    joint_synth: &[f64],
    real_weights: &[f64],
) -> Result<QuestionMetrics> {
    check_distribution(joint_synth, "joint synthetic distribution")?;
    let (mae, rmse) = mae_rmse(synth, real)?;
    Ok(QuestionMetrics {
        question_id: real.question_id.clone(),
        mae,
        rmse,
        js_distance: grouped_js_distance(synth, real, real_weights)?,
        entropy: entropy(joint_synth),
        conditional_entropy_gap: conditional_entropy_gap(synth, real, real_weights)?,
        cramers_v: cramers_v(synth, real, real_weights)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub questions: Vec<QuestionMetrics>,
    /// Unweighted mean over questions.
    pub pooled: QuestionMetrics,
}

pub const METRIC_CSV_HEADER: [&str; 8] = [
    "method",
    "question",
    "mae",
    "rmse",
    "js_distance",
    "entropy",
    "conditional_entropy_gap",
    "cramers_v",
];

impl MetricReport {
    pub fn new(method: impl Into<String>, questions: Vec<QuestionMetrics>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::Evaluate("no questions evaluated".into()));
        }
        let n = questions.len() as f64;
        let mean = |f: fn(&QuestionMetrics) -> f64| questions.iter().map(f).sum::<f64>() / n;
        let pooled = QuestionMetrics {
            question_id: "pooled".into(),
            mae: mean(|q| q.mae),
            rmse: mean(|q| q.rmse),
            js_distance: mean(|q| q.js_distance),
            entropy: mean(|q| q.entropy),
            conditional_entropy_gap: mean(|q| q.conditional_entropy_gap),
            cramers_v: mean(|q| q.cramers_v),
        };
        Ok(MetricReport {
            method: method.into(),
            questions,
            pooled,
        })
    }

    /// Table rows: one per question plus the pooled row.
    pub fn csv_rows(&self) -> Vec<[String; 8]> {
        self.questions
            .iter()
            .chain(std::iter::once(&self.pooled))
            .map(|q| {
                [
                    self.method.clone(),
                    q.question_id.clone(),
                    format!("{:.4}", q.mae),
                    format!("{:.4}", q.rmse),
                    format!("{:.4}", q.js_distance),
                    format!("{:.4}", q.entropy),
                    format!("{:.4}", q.conditional_entropy_gap),
                    format!("{:.4}", q.cramers_v),
                ]
            })
            .collect()
    }
}
