//! Persona partition and densities from conditional probability chains.
//!
//! Personas are indexed in lexicographic (mixed-radix) order over the schema
//! attributes, last attribute varying fastest. A persona's density is the
//! product of one factor per attribute, each conditioned on all attributes
//! before it in schema order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::schema::{persona_space_size, AttributeSchema};

const SUM_TOLERANCE: f64 = 1e-9;

/// One category index per schema attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Persona(pub Vec<usize>);

impl Persona {
    pub fn categories(&self) -> &[usize] {
        &self.0
    }

    pub fn labels<'a>(&self, schema: &'a AttributeSchema) -> Vec<&'a str> {
        self.0
            .iter()
            .zip(schema.attributes())
            .map(|(&c, a)| a.categories[c].as_str())
            .collect()
    }
}

/// Densities over the full persona space, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaTable {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    densities: Vec<f64>,
}

impl PersonaTable {
    pub fn uniform(sizes: &[usize]) -> Self {
        // every density exactly 1/n; renormalizing the rounded sum would perturb them
        let n: usize = sizes.iter().product();
        let mut table = Self::from_parts(sizes, vec![1.0; n]).expect("uniform table is valid");
        table.densities.fill(1.0 / n as f64);
        table
    }

    /// Builds a table from raw densities; they are checked and renormalized.
    pub fn from_parts(sizes: &[usize], densities: Vec<f64>) -> Result<Self> {
        let n: usize = sizes.iter().product();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Persona("every attribute needs at least one category".into()));
        }
        if densities.len() != n {
            return Err(Error::Persona(format!(
                "expected {n} densities, got {}",
                densities.len()
            )));
        }
        if densities.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Persona("densities must be finite and non-negative".into()));
        }
        let mut strides = vec![1; sizes.len()];
        for k in (0..sizes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * sizes[k + 1];
        }
        let mut table = PersonaTable {
            sizes: sizes.to_vec(),
            strides,
            densities,
        };
        table.normalize()?;
        Ok(table)
    }

    pub(crate) fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.densities.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Persona("densities have no mass".into()));
        }
        if total != 1.0 {
            for d in &mut self.densities {
                *d /= total;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub(crate) fn densities_mut(&mut self) -> &mut [f64] {
        &mut self.densities
    }

    pub fn density(&self, index: usize) -> f64 {
        self.densities[index]
    }

    /// Category of attribute `attribute` for the persona at `index`.
    #[inline]
    pub fn category(&self, index: usize, attribute: usize) -> usize {
        (index / self.strides[attribute]) % self.sizes[attribute]
    }

    pub fn persona(&self, index: usize) -> Persona {
        Persona((0..self.sizes.len()).map(|k| self.category(index, k)).collect())
    }

    pub fn index_of(&self, persona: &Persona) -> Option<usize> {
        if persona.0.len() != self.sizes.len() {
            return None;
        }
        let mut idx = 0;
        for (k, &c) in persona.0.iter().enumerate() {
            if c >= self.sizes[k] {
                return None;
            }
            idx += c * self.strides[k];
        }
        Some(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Persona, f64)> + '_ {
        (0..self.len()).map(move |i| (self.persona(i), self.densities[i]))
    }

    /// Marginal distribution of one attribute.
    pub fn marginal(&self, attribute: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.sizes[attribute]];
        for (i, &d) in self.densities.iter().enumerate() {
            out[self.category(i, attribute)] += d;
        }
        out
    }

    pub fn matches_schema(&self, schema: &AttributeSchema) -> bool {
        self.sizes == schema.sizes()
    }
}

/// All personas of the schema with uniform density.
pub fn enumerate_personas(schema: &AttributeSchema) -> PersonaTable {
    debug_assert_eq!(persona_space_size(schema), schema.sizes().iter().product::<usize>());
    PersonaTable::uniform(&schema.sizes())
}

fn check_vector(v: &[f64], expected_len: usize, context: &str) -> Result<()> {
    if v.len() != expected_len {
        return Err(Error::Persona(format!(
            "{context}: expected {expected_len} probabilities, got {}",
            v.len()
        )));
    }
    if let Some(p) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Persona(format!("{context}: invalid probability {p}")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Persona(format!("{context}: probabilities sum to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Factor {
    entries: BTreeMap<Vec<usize>, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

/// Chain factors `P(x_k | x_0..x_{k-1})` in schema order.
///
/// Entries are keyed by the full prefix. A factor may carry a fallback
/// vector used for any prefix without an explicit entry. Prefixes reached
/// with zero probability may be left undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    sizes: Vec<usize>,
    factors: Vec<Factor>,
}

impl ConditionalTable {
    pub fn new(sizes: &[usize]) -> Self {
        ConditionalTable {
            sizes: sizes.to_vec(),
            factors: vec![Factor::default(); sizes.len()],
        }
    }

    /// Independent attributes: every factor ignores its prefix.
    pub fn independent(sizes: &[usize], marginals: &[Vec<f64>]) -> Result<Self> {
        if marginals.len() != sizes.len() {
            return Err(Error::Persona("one marginal per attribute required".into()));
        }
        let mut t = Self::new(sizes);
        for (k, m) in marginals.iter().enumerate() {
            t.set_fallback(k, m.clone())?;
        }
        Ok(t)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn set(&mut self, attribute: usize, prefix: &[usize], probs: Vec<f64>) -> Result<()> {
        if attribute >= self.sizes.len() {
            return Err(Error::Persona(format!("no attribute {attribute}")));
        }
        if prefix.len() != attribute {
            return Err(Error::Persona(format!(
                "factor {attribute} needs a prefix of length {attribute}, got {}",
                prefix.len()
            )));
        }
        if prefix.iter().zip(&self.sizes).any(|(&c, &n)| c >= n) {
            return Err(Error::Persona(format!("prefix {prefix:?} out of range")));
        }
        check_vector(&probs, self.sizes[attribute], &format!("factor {attribute} {prefix:?}"))?;
        self.factors[attribute].entries.insert(prefix.to_vec(), probs);
        Ok(())
    }

    pub fn set_fallback(&mut self, attribute: usize, probs: Vec<f64>) -> Result<()> {
        if attribute >= self.sizes.len() {
            return Err(Error::Persona(format!("no attribute {attribute}")));
        }
        check_vector(&probs, self.sizes[attribute], &format!("factor {attribute} fallback"))?;
        self.factors[attribute].fallback = Some(probs);
        Ok(())
    }

    pub fn get(&self, attribute: usize, prefix: &[usize]) -> Option<&[f64]> {
        let f = &self.factors[attribute];
        f.entries
            .get(prefix)
            .or(f.fallback.as_ref())
            .map(Vec::as_slice)
    }
}

/// Evaluates every persona's density as the product of its chain factors.
///
/// The returned table keeps the persona order of `table`; its densities are
/// renormalized once after the product pass.
pub fn density_from_conditionals(table: &PersonaTable, cond: &ConditionalTable) -> Result<PersonaTable> {
    if table.sizes() != cond.sizes() {
        return Err(Error::Persona(format!(
            "conditional table sizes {:?} do not match persona table {:?}",
            cond.sizes(),
            table.sizes()
        )));
    }
    let sizes = table.sizes();
    let mut densities = vec![0.0; table.len()];
    let mut prefix = Vec::with_capacity(sizes.len());
    fill(cond, sizes, &mut prefix, 1.0, 0, &mut densities)?;
    PersonaTable::from_parts(sizes, densities)
}

fn fill(
    cond: &ConditionalTable,
    sizes: &[usize],
    prefix: &mut Vec<usize>,
    mass: f64,
    offset: usize,
    out: &mut [f64],
) -> Result<()> {
    let k = prefix.len();
    if k == sizes.len() {
        out[offset] = mass;
        return Ok(());
    }
    let probs = cond.get(k, prefix).ok_or_else(|| {
        Error::Persona(format!(
            "missing conditional for attribute {k} given prefix {prefix:?}"
        ))
    })?;
    let stride: usize = sizes[k + 1..].iter().product();
    for (c, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        prefix.push(c);
        fill(cond, sizes, prefix, mass * p, offset + c * stride, out)?;
        prefix.pop();
    }
    Ok(())
}

/// Writes one row per persona: category labels then density.
pub fn write_persona_table<W: Write>(writer: W, schema: &AttributeSchema, table: &PersonaTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
    header.push("density");
    w.write_record(&header)?;
    for i in 0..table.len() {
        let mut rec: Vec<String> = table.persona(i).labels(schema).into_iter().map(String::from).collect();
        rec.push(format!("{:e}", table.density(i)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<persona table>", e))?;
    Ok(())
}

pub fn read_persona_table<R: Read>(reader: R, schema: &AttributeSchema) -> Result<PersonaTable> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let expected: Vec<&str> = schema
        .attributes()
        .iter()
        .map(|a| a.name.as_str())
        .chain(std::iter::once("density"))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Persona(format!("unexpected persona table header {headers:?}")));
    }
    let sizes = schema.sizes();
    let uniform = PersonaTable::uniform(&sizes);
    let mut densities = vec![f64::NAN; uniform.len()];
    for rec in r.records() {
        let rec = rec?;
        let mut cats = Vec::with_capacity(sizes.len());
        for (k, attr) in schema.attributes().iter().enumerate() {
            let c = attr
                .index_of(&rec[k])
                .ok_or_else(|| Error::Persona(format!("unknown category {:?}", &rec[k])))?;
            cats.push(c);
        }
        let idx = uniform.index_of(&Persona(cats)).expect("categories validated");
        let d: f64 = rec[sizes.len()]
            .parse()
            .map_err(|_| Error::Persona(format!("bad density {:?}", &rec[sizes.len()])))?;
        if !densities[idx].is_nan() {
            return Err(Error::Persona(format!("duplicate persona row {idx}")));
        }
        densities[idx] = d;
    }
    if densities.iter().any(|d| d.is_nan()) {
        return Err(Error::Persona("persona table does not cover the full space".into()));
    }
    PersonaTable::from_parts(&sizes, densities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enumerate_default() {
        let schema = crate::schema::SurveyConfig::default_config().attributes;
        let t = enumerate_personas(&schema);
        assert_eq!(t.len(), 15840);
        assert!(t.densities().iter().all(|&d| d == 1.0 / 15840.0));
    }

    #[test]
    fn enumerate_order() {
        let t = enumerate_personas(&AttributeSchema::from_sizes(&[2, 2]).unwrap());
        let order: Vec<_> = (0..4).map(|i| t.persona(i).0).collect();
        assert_eq!(order, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let single = enumerate_personas(&AttributeSchema::from_sizes(&[1, 1, 1, 1, 1]).unwrap());
        assert_eq!(single.len(), 1);
        assert_eq!(single.density(0), 1.0);
    }

    #[test]
    fn chain_product() {
        // persona (1,0,1,0,0) with factors 0.5, 0.4, 0.5, 0.2, 0.1
        let sizes = [2, 2, 2, 2, 2];
        let mut c = ConditionalTable::new(&sizes);
        c.set_fallback(0, vec![0.5, 0.5]).unwrap();
        c.set_fallback(1, vec![0.5, 0.5]).unwrap();
        c.set_fallback(2, vec![0.5, 0.5]).unwrap();
        c.set_fallback(3, vec![0.5, 0.5]).unwrap();
        c.set_fallback(4, vec![0.5, 0.5]).unwrap();
        c.set(1, &[1], vec![0.4, 0.6]).unwrap();
        c.set(2, &[1, 0], vec![0.5, 0.5]).unwrap();
        c.set(3, &[1, 0, 1], vec![0.2, 0.8]).unwrap();
        c.set(4, &[1, 0, 1, 0], vec![0.1, 0.9]).unwrap();
        let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
        let idx = t.index_of(&Persona(vec![1, 0, 1, 0, 0])).unwrap();
        assert!((t.density(idx) - 0.002).abs() < 1e-15);
        assert!((t.densities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_factors_give_uniform_density() {
        let sizes = [3, 2, 4];
        let m: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
        let c = ConditionalTable::independent(&sizes, &m).unwrap();
        let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
        for &d in t.densities() {
            assert!((d - 1.0 / 24.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_factor_is_absorbing_and_sparse_ok() {
        let sizes = [2, 3];
        let mut c = ConditionalTable::new(&sizes);
        c.set(0, &[], vec![1.0, 0.0]).unwrap();
        c.set(1, &[0], vec![0.2, 0.0, 0.8]).unwrap();
        // prefix [1] left undefined: it is unreachable
        let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
        assert_eq!(t.densities(), &[0.2, 0.0, 0.8, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_reachable_prefix_errors() {
        let sizes = [2, 2];
        let mut c = ConditionalTable::new(&sizes);
        c.set(0, &[], vec![0.5, 0.5]).unwrap();
        c.set(1, &[0], vec![0.5, 0.5]).unwrap();
        assert!(density_from_conditionals(&PersonaTable::uniform(&sizes), &c).is_err());
    }

    #[test]
    fn negative_probability_rejected() {
        let mut c = ConditionalTable::new(&[2]);
        assert!(c.set(0, &[], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn table_csv_round_trip() {
        let schema = AttributeSchema::from_sizes(&[2, 3]).unwrap();
        let t = PersonaTable::from_parts(&[2, 3], vec![0.1, 0.2, 0.05, 0.15, 0.3, 0.2]).unwrap();
        let mut buf = Vec::new();
        write_persona_table(&mut buf, &schema, &t).unwrap();
        let back = read_persona_table(buf.as_slice(), &schema).unwrap();
        assert_eq!(t.densities(), back.densities());
    }

    fn random_conditionals(sizes: &[usize], seed: &[f64]) -> ConditionalTable {
        // every prefix gets its own vector; weights drawn cyclically from `seed`
        let mut c = ConditionalTable::new(sizes);
        let mut pos = 0;
        let mut next = || {
            let v = seed[pos % seed.len()];
            pos += 1;
            v
        };
        for k in 0..sizes.len() {
            let prefixes: usize = sizes[..k].iter().product();
            for p in 0..prefixes {
                let mut prefix = vec![0; k];
                let mut rem = p;
                for j in (0..k).rev() {
                    prefix[j] = rem % sizes[j];
                    rem /= sizes[j];
                }
                let mut w: Vec<f64> = (0..sizes[k]).map(|_| next()).collect();
                if w.iter().sum::<f64>() == 0.0 {
                    w[0] = 1.0;
                }
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                c.set(k, &prefix, w).unwrap();
            }
        }
        c
    }

    proptest! {
        #[test]
        fn densities_sum_to_one(
            sizes in prop::collection::vec(1usize..5, 1..5),
            seed in prop::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let c = random_conditionals(&sizes, &seed);
            let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
            prop_assert!((t.densities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(t.densities().iter().all(|&d| d >= 0.0));
        }

        #[test]
        fn marginalizing_recovers_chain_prefix(
            sizes in prop::collection::vec(1usize..5, 2..5),
            seed in prop::collection::vec(0.01f64..1.0, 1..40),
        ) {
            prop_assume!(sizes.iter().product::<usize>() <= 200);
            let c = random_conditionals(&sizes, &seed);
            let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
            // P(x_0 .. x_k) by brute-force summation over the remaining attributes
            for k in 0..sizes.len() {
                let prefix_space: usize = sizes[..=k].iter().product();
                let tail: usize = sizes[k + 1..].iter().product();
                for p in 0..prefix_space {
                    let summed: f64 = t.densities()[p * tail..(p + 1) * tail].iter().sum();
                    let persona = t.persona(p * tail);
                    let mut chain = 1.0;
                    for j in 0..=k {
                        chain *= c.get(j, &persona.0[..j]).unwrap()[persona.0[j]];
                    }
                    prop_assert!((summed - chain).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn independent_is_outer_product(
            sizes in prop::collection::vec(1usize..5, 1..4),
            seed in prop::collection::vec(0.01f64..1.0, 1..20),
        ) {
            let mut pos = 0;
            let marginals: Vec<Vec<f64>> = sizes.iter().map(|&n| {
                let w: Vec<f64> = (0..n).map(|_| { pos += 1; seed[pos % seed.len()] }).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            }).collect();
            let c = ConditionalTable::independent(&sizes, &marginals).unwrap();
            let t = density_from_conditionals(&PersonaTable::uniform(&sizes), &c).unwrap();
            for i in 0..t.len() {
                let p = t.persona(i);
                let outer: f64 = p.0.iter().enumerate().map(|(k, &x)| marginals[k][x]).product();
                prop_assert!((t.density(i) - outer).abs() < 1e-12);
            }
        }
    }
}
