//! Naive prior: a chain of conditionals built from the bundled prior
//! marginals plus a few common-sense age affinities.
//!
//! The affinities only apply to labels of the default schema. For any other
//! schema the chain reduces to independent marginals.

use crate::error::{Error, Result};
use crate::ingest::MarginalTargets;
use crate::persona::{density_from_conditionals, ConditionalTable, PersonaTable};
use crate::schema::{AttributeSchema, DEFAULT_GROUP_ATTRIBUTE};

// Age bands of the default schema, youngest first.
const AGE_LABELS: [&str; 9] = [
    "14--17", "18--29", "30--39", "40--49", "50--59", "60--64", "65--74", "75--79", "80+",
];

/// Relative likelihood of `label` for someone in age band `age`
/// (index into `AGE_LABELS`). 1.0 means no adjustment.
fn affinity(attribute: &str, label: &str, age: usize) -> f64 {
    let young = age <= 2;
    let middle = (2..=4).contains(&age);
    let old = age >= 5;
    match (attribute, label) {
        ("Main Activity", "Pupil") => match age {
            0 => 20.0,
            1 => 0.3,
            _ => 0.01,
        },
        ("Main Activity", "Student") => match age {
            0 => 0.3,
            1 => 5.0,
            2 => 0.5,
            _ => 0.02,
        },
        ("Main Activity", "Pensioner") => match age {
            0..=3 => 0.02,
            4 => 0.3,
            5 => 2.0,
            _ => 10.0,
        },
        ("Main Activity", "Full-time employee" | "Part-time employee" | "Employed (unspecified)") => {
            match age {
                0 => 0.05,
                5 => 0.7,
                6.. => 0.05,
                _ => 1.0,
            }
        }
        ("Education Level", "No Degree (yet)") => {
            if age == 0 {
                20.0
            } else {
                0.3
            }
        }
        ("Household Type", "Young singles" | "Young two-person households") => {
            if young {
                3.0
            } else if old {
                0.1
            } else {
                1.0
            }
        }
        ("Household Type", "Older singles" | "Older two-person households") => {
            if old {
                4.0
            } else if young {
                0.1
            } else {
                1.0
            }
        }
        ("Household Type", "Middle-aged singles" | "Middle-aged two-person households") => {
            if middle {
                3.0
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

fn has_default_ages(schema: &AttributeSchema) -> bool {
    schema.attributes().first().is_some_and(|a| {
        a.name == DEFAULT_GROUP_ATTRIBUTE && a.categories.iter().map(String::as_str).eq(AGE_LABELS)
    })
}

/// Conditional chain for the naive tiers. Attribute 0 follows its prior
/// marginal; later attributes follow their marginal tilted by the age
/// affinities and renormalized.
pub fn prior_conditionals(schema: &AttributeSchema, marginals: &MarginalTargets) -> Result<ConditionalTable> {
    let sizes = schema.sizes();
    let vectors: Vec<Vec<f64>> = (0..schema.len())
        .map(|k| {
            marginals.get(k).map(<[f64]>::to_vec).ok_or_else(|| {
                Error::Config(format!(
                    "prior has no marginal for {:?}",
                    schema.attributes()[k].name
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut cond = ConditionalTable::independent(&sizes, &vectors)?;
    if !has_default_ages(schema) {
        return Ok(cond);
    }
    for k in 1..schema.len() {
        let attr = &schema.attributes()[k];
        let rows: Vec<Vec<f64>> = (0..AGE_LABELS.len())
            .map(|age| {
                let tilted: Vec<f64> = attr
                    .categories
                    .iter()
                    .zip(&vectors[k])
                    .map(|(label, p)| p * affinity(&attr.name, label, age))
                    .collect();
                let total: f64 = tilted.iter().sum();
                if total > 0.0 {
                    tilted.into_iter().map(|x| x / total).collect()
                } else {
                    vectors[k].clone()
                }
            })
            .collect();
        if rows.iter().all(|r| *r == vectors[k]) {
            continue;
        }
        // the factor only depends on age, so every prefix sharing an age gets the same row
        let inner: usize = sizes[1..k].iter().product();
        for (age, row) in rows.iter().enumerate() {
            for rest in 0..inner {
                let mut prefix = vec![age];
                let mut r = rest;
                for &n in sizes[1..k].iter().rev() {
                    prefix.insert(1, r % n);
                    r /= n;
                }
                cond.set(k, &prefix, row.clone())?;
            }
        }
    }
    Ok(cond)
}

/// Persona densities implied by the naive prior.
pub fn prior_densities(schema: &AttributeSchema, marginals: &MarginalTargets) -> Result<PersonaTable> {
    let cond = prior_conditionals(schema, marginals)?;
    density_from_conditionals(&PersonaTable::uniform(&schema.sizes()), &cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::naive_prior;
    use crate::schema::SurveyConfig;

    #[test]
    fn prior_table_is_normalized_and_age_exact() {
        let config = SurveyConfig::default_config();
        let schema = config.schema();
        let prior = naive_prior(&config).unwrap();
        let table = prior_densities(&schema, &prior).unwrap();
        assert_eq!(table.len(), 15840);
        assert!((table.densities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in table.marginal(0).iter().zip(prior.get(0).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pupils_are_young() {
        let config = SurveyConfig::default_config();
        let schema = config.schema();
        let prior = naive_prior(&config).unwrap();
        let cond = prior_conditionals(&schema, &prior).unwrap();
        let pupil = schema.attributes()[2].index_of("Pupil").unwrap();
        let teen = cond.get(2, &[0, 1]).unwrap()[pupil];
        let retiree = cond.get(2, &[7, 1]).unwrap()[pupil];
        assert!(teen > 10.0 * retiree);
    }

    #[test]
    fn other_schemas_are_independent() {
        let schema = AttributeSchema::from_sizes(&[2, 3]).unwrap();
        let m = MarginalTargets::from_vectors(&schema, vec![vec![0.25, 0.75], vec![0.2, 0.3, 0.5]]).unwrap();
        let table = prior_densities(&schema, &m).unwrap();
        assert!((table.density(0) - 0.05).abs() < 1e-15);
        assert!((table.density(5) - 0.375).abs() < 1e-15);
    }
}
