//! Multiplicative calibration of persona densities and response profiles.
//!
//! Densities are fitted to one-dimensional attribute marginals by cyclic
//! iterative proportional fitting. Response profiles are fitted to grouped
//! benchmark shares with the same multiplicative update applied to
//! (group, response) cells, followed by per-persona renormalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{GroupedDistribution, MarginalTargets};
use crate::persona::PersonaTable;
use crate::respond::ProfileSet;
use crate::schema::AttributeSchema;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Largest accepted absolute deviation, as a fraction.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Density given to structurally empty cells whose target is positive.
    pub zero_floor: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            tolerance: 1e-6,
            max_iterations: 1000,
            zero_floor: 0.0,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.zero_floor >= 0.0) || !self.zero_floor.is_finite() {
            return Err(Error::Config(format!("zero_floor must be >= 0, got {}", self.zero_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub iterations: usize,
    pub max_deviation: f64,
    pub converged: bool,
    /// One row per convergence check: deviation per calibrated dimension
    /// (attribute for densities, group for responses).
    pub trace: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("iterations: {}\n", self.iterations));
        out.push_str(&format!("converged: {}\n", self.converged));
        out.push_str(&format!("max_deviation: {:e}\n", self.max_deviation));
        if let Some(last) = self.trace.last() {
            for (label, d) in self.labels.iter().zip(last) {
                out.push_str(&format!("  {label}: {d:e}\n"));
            }
        }
        out
    }
}

fn marginal_deviations(table: &PersonaTable, targets: &[(usize, &[f64])]) -> Vec<f64> {
    targets
        .iter()
        .map(|&(k, target)| {
            table
                .marginal(k)
                .iter()
                .zip(target)
                .map(|(m, t)| (m - t).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// One multiplicative pass over a single attribute.
fn rake_attribute(table: &mut PersonaTable, attribute: usize, target: &[f64]) {
    let current = table.marginal(attribute);
    let factors: Vec<f64> = current
        .iter()
        .zip(target)
        .map(|(&c, &t)| if c > 0.0 { t / c } else { 0.0 })
        .collect();
    let n = table.len();
    for i in 0..n {
        let c = table.category(i, attribute);
        table.densities_mut()[i] *= factors[c];
    }
}

/// Fits persona densities to the attribute marginals present in `targets`.
pub fn fit_densities_to_marginals(
    table: &PersonaTable,
    targets: &MarginalTargets,
    schema: &AttributeSchema,
    opts: &CalibrationOptions,
) -> Result<(PersonaTable, CalibrationReport)> {
    opts.validate()?;
    if !table.matches_schema(schema) {
        return Err(Error::Calibration("persona table does not match schema".into()));
    }
    let active: Vec<(usize, &[f64])> = (0..schema.len())
        .filter_map(|k| targets.get(k).map(|t| (k, t)))
        .collect();
    for &(k, t) in &active {
        if t.len() != schema.attributes()[k].len() {
            return Err(Error::Calibration(format!(
                "target for {:?} has wrong length",
                schema.attributes()[k].name
            )));
        }
    }
    let labels: Vec<String> = active
        .iter()
        .map(|&(k, _)| schema.attributes()[k].name.clone())
        .collect();

    let mut fitted = table.clone();

    // structural zeros that the targets need filled
    let mut floored = false;
    for &(k, target) in &active {
        let current = fitted.marginal(k);
        for (c, (&m, &t)) in current.iter().zip(target).enumerate() {
            if t > 0.0 && m <= 0.0 {
                let attr = &schema.attributes()[k];
                if opts.zero_floor <= 0.0 {
                    return Err(Error::Infeasible(format!(
                        "{} = {:?} has target {t} but no seed density",
                        attr.name, attr.categories[c]
                    )));
                }
                for i in 0..fitted.len() {
                    if fitted.category(i, k) == c {
                        fitted.densities_mut()[i] = opts.zero_floor;
                    }
                }
                floored = true;
            }
        }
    }
    if floored {
        fitted.normalize()?;
    }

    let mut trace = Vec::new();
    for iteration in 1..=opts.max_iterations {
        let devs = marginal_deviations(&fitted, &active);
        let max = devs.iter().cloned().fold(0.0, f64::max);
        trace.push(devs);
        if max <= opts.tolerance {
            return Ok((
                fitted,
                CalibrationReport {
                    iterations: iteration,
                    max_deviation: max,
                    converged: true,
                    trace,
                    labels,
                },
            ));
        }
        for &(k, target) in &active {
            rake_attribute(&mut fitted, k, target);
        }
        fitted.normalize().map_err(|_| {
            Error::Infeasible("raking removed all density; targets contradict the seed".into())
        })?;
    }
    let devs = marginal_deviations(&fitted, &active);
    let max = devs.iter().cloned().fold(0.0, f64::max);
    trace.push(devs);
    Ok((
        fitted,
        CalibrationReport {
            iterations: opts.max_iterations,
            max_deviation: max,
            converged: max <= opts.tolerance,
            trace,
            labels,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMode {
    /// Match the target distribution inside every group.
    #[default]
    PerGroup,
    /// Match only the population-wide average of the target.
    Overall,
}

impl std::str::FromStr for ResponseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-group" => Ok(ResponseMode::PerGroup),
            "overall" => Ok(ResponseMode::Overall),
            other => Err(Error::Config(format!("unknown response mode {other:?}"))),
        }
    }
}

/// Weighted response aggregate per calibration cell, normalized by cell weight.
fn cell_aggregates(
    profiles: &ProfileSet,
    table: &PersonaTable,
    cell_of: &dyn Fn(usize) -> Option<usize>,
    cells: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = profiles.n_options();
    let mut agg = vec![vec![0.0; k]; cells];
    let mut weight = vec![0.0; cells];
    for (&i, probs) in profiles.iter() {
        let d = table.density(i);
        if d == 0.0 {
            continue;
        }
        if let Some(c) = cell_of(i) {
            weight[c] += d;
            for (a, p) in agg[c].iter_mut().zip(probs) {
                *a += d * p;
            }
        }
    }
    for (row, &w) in agg.iter_mut().zip(&weight) {
        if w > 0.0 {
            row.iter_mut().for_each(|x| *x /= w);
        }
    }
    (agg, weight)
}

/// Fits per-persona response profiles so their density-weighted aggregate
/// matches `target`. Returns the adjusted profiles and a report.
pub fn fit_responses_to_benchmark(
    profiles: &ProfileSet,
    table: &PersonaTable,
    target: &GroupedDistribution,
    schema: &AttributeSchema,
    mode: ResponseMode,
    opts: &CalibrationOptions,
) -> Result<(ProfileSet, CalibrationReport)> {
    opts.validate()?;
    target.validate()?;
    if target.responses.len() != profiles.n_options() {
        return Err(Error::Calibration(format!(
            "target has {} responses, profiles have {}",
            target.responses.len(),
            profiles.n_options()
        )));
    }
    let g = schema.require_index(&target.group_attribute)?;
    let attr = &schema.attributes()[g];
    // target row index for each category of the group attribute
    let mut row_of_category = vec![None; attr.len()];
    for (row, gs) in target.groups.iter().enumerate() {
        let c = attr.index_of(&gs.category).ok_or_else(|| {
            Error::Calibration(format!("unknown group {:?} in target", gs.category))
        })?;
        row_of_category[c] = Some(row);
    }
    for i in 0..table.len() {
        if table.density(i) > 0.0 && row_of_category[table.category(i, g)].is_some() && profiles.get(i).is_none() {
            return Err(Error::Calibration(format!("no profile for persona {i}")));
        }
    }

    let (cell_targets, labels, cell_of): (Vec<Vec<f64>>, Vec<String>, Box<dyn Fn(usize) -> Option<usize>>) =
        match mode {
            ResponseMode::PerGroup => {
                let rows = row_of_category.clone();
                (
                    target.groups.iter().map(|gs| gs.shares.clone()).collect(),
                    target.groups.iter().map(|gs| gs.category.clone()).collect(),
                    Box::new(move |i| rows[table.category(i, g)]),
                )
            }
            ResponseMode::Overall => {
                // overall target: group targets weighted by the table's group shares
                let marginal = table.marginal(g);
                let mut overall = vec![0.0; profiles.n_options()];
                let mut total = 0.0;
                for (c, row) in row_of_category.iter().enumerate() {
                    if let Some(r) = row {
                        total += marginal[c];
                        for (o, t) in overall.iter_mut().zip(&target.groups[*r].shares) {
                            *o += marginal[c] * t;
                        }
                    }
                }
                if total <= 0.0 {
                    return Err(Error::Calibration("target groups carry no persona weight".into()));
                }
                overall.iter_mut().for_each(|x| *x /= total);
                let rows = row_of_category.clone();
                (
                    vec![overall],
                    vec!["overall".to_string()],
                    Box::new(move |i| rows[table.category(i, g)].map(|_| 0)),
                )
            }
        };
    let cells = cell_targets.len();

    let (agg, weight) = cell_aggregates(profiles, table, &cell_of, cells);
    for (c, w) in weight.iter().enumerate() {
        if *w <= 0.0 {
            return Err(Error::Calibration(format!(
                "group {:?} has a target but zero persona weight",
                labels[c]
            )));
        }
    }
    for c in 0..cells {
        for (i, (&t, &a)) in cell_targets[c].iter().zip(&agg[c]).enumerate() {
            if t > 0.0 && a <= 0.0 {
                return Err(Error::Infeasible(format!(
                    "group {:?} needs response {:?} but no persona gives it any probability",
                    labels[c], target.responses[i]
                )));
            }
        }
    }

    let mut fitted = profiles.clone();
    let mut trace = Vec::new();
    let deviations = |agg: &[Vec<f64>]| -> Vec<f64> {
        agg.iter()
            .zip(&cell_targets)
            .map(|(a, t)| a.iter().zip(t).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            .collect()
    };

    let mut current = agg;
    for iteration in 1..=opts.max_iterations {
        let devs = deviations(&current);
        let max = devs.iter().cloned().fold(0.0, f64::max);
        trace.push(devs);
        if max <= opts.tolerance {
            return Ok((
                fitted,
                CalibrationReport {
                    iterations: iteration,
                    max_deviation: max,
                    converged: true,
                    trace,
                    labels,
                },
            ));
        }
        let factors: Vec<Vec<f64>> = current
            .iter()
            .zip(&cell_targets)
            .map(|(a, t)| {
                a.iter()
                    .zip(t)
                    .map(|(&x, &y)| if x > 0.0 { y / x } else { 0.0 })
                    .collect()
            })
            .collect();
        for (&i, probs) in fitted.iter_mut() {
            let Some(c) = cell_of(i) else { continue };
            let mut total = 0.0;
            for (p, f) in probs.iter_mut().zip(&factors[c]) {
                *p *= f;
                total += *p;
            }
            if total > 0.0 {
                probs.iter_mut().for_each(|p| *p /= total);
            } else {
                // every supported option was scaled to zero: fall back to the cell target
                probs.copy_from_slice(&cell_targets[c]);
            }
        }
        current = cell_aggregates(&fitted, table, &cell_of, cells).0;
    }
    let devs = deviations(&current);
    let max = devs.iter().cloned().fold(0.0, f64::max);
    trace.push(devs);
    Ok((
        fitted,
        CalibrationReport {
            iterations: opts.max_iterations,
            max_deviation: max,
            converged: max <= opts.tolerance,
            trace,
            labels,
        },
    ))
}
