//! Statistics over mapping sources: view cardinalities (S1), distinct counts
//! of template-argument projections (S2) and facing-value counts between
//! projections sharing a function symbol (S3).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Term, Value};
use crate::mapping::{MappingSet, Template};
use crate::oracle::engine::{Evaluator, Row};
use crate::oracle::DataInstance;

/// A projection `V[a,b]` of a relation onto some of its columns.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttrKey {
    pub relation: String,
    pub attrs: Vec<String>,
}

impl AttrKey {
    pub fn new(relation: &str, attrs: &[&str]) -> Self {
        AttrKey {
            relation: relation.to_string(),
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for AttrKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.relation, self.attrs.join(","))
    }
}

/// Canonical key of an unordered pair of projections.
pub fn facing_key(a: &AttrKey, b: &AttrKey) -> String {
    let (a, b) = (a.to_string(), b.to_string());
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub c_t: f64,
    pub c_j: f64,
    pub c_u: f64,
    pub c_m: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            c_t: 0.2,
            c_j: 1.0,
            c_u: 1.1,
            c_m: 0.8,
        }
    }
}

impl CostConstants {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("c_t", self.c_t), ("c_j", self.c_j), ("c_u", self.c_u), ("c_m", self.c_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InconsistentStats(format!("cost constant {n} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, l: f64) -> Self {
        CostConstants {
            c_t: self.c_t * l,
            c_j: self.c_j * l,
            c_u: self.c_u * l,
            c_m: self.c_m * l,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: CostConstants = serde_json::from_str(&fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsCatalog {
    pub view_card: BTreeMap<String, u64>,
    pub table_card: BTreeMap<String, u64>,
    pub dist_proj: BTreeMap<String, u64>,
    pub facing: BTreeMap<String, u64>,
}

impl StatsCatalog {
    pub fn lookup_view_card(&self, view: &str) -> Result<u64> {
        self.view_card
            .get(view)
            .copied()
            .ok_or_else(|| Error::MissingStatistic(format!("|{view}|")))
    }

    pub fn lookup_table_card(&self, table: &str) -> Result<u64> {
        self.table_card
            .get(table)
            .copied()
            .ok_or_else(|| Error::MissingStatistic(format!("|{table}|")))
    }

    pub fn lookup_dist(&self, key: &AttrKey) -> Result<u64> {
        let k = key.to_string();
        self.dist_proj.get(&k).copied().ok_or(Error::MissingStatistic(k))
    }

    /// Facing values of two projections; a projection faces itself with all
    /// of its distinct values.
    pub fn lookup_facing(&self, a: &AttrKey, b: &AttrKey) -> Result<u64> {
        if a == b {
            return self.lookup_dist(a);
        }
        let k = facing_key(a, b);
        self.facing.get(&k).copied().ok_or(Error::MissingStatistic(k))
    }

    pub fn set_view_card(&mut self, view: &str, n: u64) {
        self.view_card.insert(view.to_string(), n);
    }

    pub fn set_dist(&mut self, key: &AttrKey, n: u64) {
        self.dist_proj.insert(key.to_string(), n);
    }

    pub fn set_facing(&mut self, a: &AttrKey, b: &AttrKey, n: u64) {
        self.facing.insert(facing_key(a, b), n);
    }

    /// Checks `dist <= |V|` and `facing <= min(dist, dist)`.
    pub fn validate(&self) -> Result<()> {
        for (k, &n) in &self.dist_proj {
            let view = k.split('[').next().unwrap_or(k);
            if let Some(&card) = self.view_card.get(view) {
                if n > card {
                    return Err(Error::InconsistentStats(format!("{k} = {n} exceeds |{view}| = {card}")));
                }
            }
        }
        for (k, &n) in &self.facing {
            let (a, b) = k
                .split_once('|')
                .ok_or_else(|| Error::InconsistentStats(format!("malformed facing key `{k}`")))?;
            if b < a {
                return Err(Error::InconsistentStats(format!("facing key `{k}` is not canonical")));
            }
            for side in [a, b] {
                if let Some(&d) = self.dist_proj.get(side) {
                    if n > d {
                        return Err(Error::InconsistentStats(format!("{k} = {n} exceeds {side} = {d}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: StatsCatalog = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Entries of `other` added to (or replacing) ours.
    pub fn merge(&mut self, other: &StatsCatalog) {
        self.view_card.extend(other.view_card.iter().map(|(k, v)| (k.clone(), *v)));
        self.table_card.extend(other.table_card.iter().map(|(k, v)| (k.clone(), *v)));
        self.dist_proj.extend(other.dist_proj.iter().map(|(k, v)| (k.clone(), *v)));
        self.facing.extend(other.facing.iter().map(|(k, v)| (k.clone(), *v)));
    }
}

/// Projections a mapping set needs statistics for, grouped by the function
/// symbol (and argument count) they feed. Plain target positions form the
/// group `_`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TemplateKeys {
    pub sources: BTreeSet<String>,
    pub groups: BTreeMap<(String, usize), BTreeSet<AttrKey>>,
}

impl TemplateKeys {
    pub fn all(&self) -> BTreeSet<&AttrKey> {
        self.groups.values().flatten().collect()
    }

    /// Unordered pairs of distinct projections sharing a group.
    pub fn pairs(&self) -> Vec<(&AttrKey, &AttrKey)> {
        let mut out = Vec::new();
        for keys in self.groups.values() {
            let keys: Vec<&AttrKey> = keys.iter().collect();
            for i in 0..keys.len() {
                for j in i + 1..keys.len() {
                    out.push((keys[i], keys[j]));
                }
            }
        }
        out
    }
}

/// Column names of `source` holding the variables of target term `t`.
pub fn term_attrs(m: &MappingSet, source: &crate::ir::Atom, t: &Term) -> Result<Vec<String>> {
    let cols = m.columns(&source.pred)?;
    t.vars()
        .into_iter()
        .map(|v| {
            source
                .args
                .iter()
                .position(|a| a.as_var() == Some(v))
                .map(|p| cols[p].clone())
                .ok_or_else(|| Error::UnknownAttribute(format!("{}.{v}", source.pred)))
        })
        .collect()
}

pub fn template_keys(m: &MappingSet) -> Result<TemplateKeys> {
    let mut keys = TemplateKeys::default();
    for a in &m.assertions {
        keys.sources.insert(a.source.pred.clone());
        for t in &a.target.args {
            if matches!(t, Term::Const(_)) {
                continue;
            }
            let attrs = term_attrs(m, &a.source, t)?;
            let group = match Template::of(t) {
                Template::Func(s, _) => (s, attrs.len()),
                Template::Plain => ("_".to_string(), 1),
            };
            keys.groups.entry(group).or_default().insert(AttrKey {
                relation: a.source.pred.clone(),
                attrs,
            });
        }
    }
    Ok(keys)
}

fn project(m: &MappingSet, rows: &[Row], key: &AttrKey) -> Result<HashSet<Vec<Value>>> {
    let cols = m.columns(&key.relation)?;
    let idx: Vec<usize> = key
        .attrs
        .iter()
        .map(|a| {
            cols.iter()
                .position(|c| c == a)
                .ok_or_else(|| Error::UnknownAttribute(key.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect())
}

/// Exact statistics of `m`'s sources over `d`.
pub fn collect(m: &MappingSet, d: &DataInstance) -> Result<StatsCatalog> {
    let keys = template_keys(m)?;
    let mut ev = Evaluator::new(d, m);
    let mut rels = BTreeMap::new();
    for s in &keys.sources {
        rels.insert(s.clone(), ev.relation(s)?);
    }
    let mut tables = BTreeSet::new();
    for s in &keys.sources {
        tables.extend(m.base_tables(s));
    }

    let mut cat = StatsCatalog::default();
    for (s, rows) in &rels {
        cat.view_card.insert(s.clone(), rows.len() as u64);
    }
    for t in tables {
        cat.table_card.insert(t.clone(), d.table(&t)?.len() as u64);
    }

    let all: Vec<&AttrKey> = keys.all().into_iter().collect();
    let projections: Vec<HashSet<Vec<Value>>> = all
        .par_iter()
        .map(|k| project(m, &rels[&k.relation], k))
        .collect::<Result<_>>()?;
    let index: BTreeMap<&AttrKey, usize> = all.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    for (k, p) in all.iter().zip(&projections) {
        cat.set_dist(k, p.len() as u64);
    }
    let pairs = keys.pairs();
    let counts: Vec<u64> = pairs
        .par_iter()
        .map(|(a, b)| {
            let (pa, pb) = (&projections[index[a]], &projections[index[b]]);
            let (small, large) = if pa.len() <= pb.len() { (pa, pb) } else { (pb, pa) };
            small.iter().filter(|x| large.contains(*x)).count() as u64
        })
        .collect();
    for ((a, b), n) in pairs.iter().zip(counts) {
        cat.set_facing(a, b, n);
    }
    cat.validate()?;
    Ok(cat)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Statistics of the three-table example used throughout the estimator
    /// tests.
    pub(crate) fn example_catalog() -> StatsCatalog {
        let mut c = StatsCatalog::default();
        c.set_view_card("T1", 5);
        c.set_view_card("T2", 10);
        c.set_view_card("T3", 10);
        c.set_dist(&AttrKey::new("T1", &["a"]), 5);
        c.set_dist(&AttrKey::new("T2", &["d"]), 5);
        c.set_dist(&AttrKey::new("T2", &["c"]), 10);
        c.set_dist(&AttrKey::new("T3", &["f"]), 10);
        c.set_dist(&AttrKey::new("T3", &["e"]), 10);
        c.set_facing(&AttrKey::new("T1", &["a"]), &AttrKey::new("T2", &["c"]), 3);
        c.set_facing(&AttrKey::new("T2", &["d"]), &AttrKey::new("T3", &["e"]), 5);
        c.set_facing(&AttrKey::new("T1", &["a"]), &AttrKey::new("T3", &["f"]), 1);
        c
    }

    #[test]
    fn lookups() {
        let c = example_catalog();
        assert_eq!(c.lookup_facing(&AttrKey::new("T1", &["a"]), &AttrKey::new("T2", &["c"])).unwrap(), 3);
        assert_eq!(c.lookup_facing(&AttrKey::new("T2", &["c"]), &AttrKey::new("T1", &["a"])).unwrap(), 3);
        assert_eq!(c.lookup_view_card("T1").unwrap(), 5);
        assert_eq!(c.lookup_facing(&AttrKey::new("T2", &["d"]), &AttrKey::new("T2", &["d"])).unwrap(), 5);
        match c.lookup_view_card("T9") {
            Err(Error::MissingStatistic(k)) => assert_eq!(k, "|T9|"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(c.lookup_dist(&AttrKey::new("T1", &["b"])), Err(Error::MissingStatistic(_))));
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = example_catalog();
        assert_eq!(StatsCatalog::from_json(&c.to_json()).unwrap(), c);
        let mut bad = c.clone();
        bad.set_dist(&AttrKey::new("T1", &["a"]), 6);
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.set_facing(&AttrKey::new("T1", &["a"]), &AttrKey::new("T2", &["c"]), 7);
        assert!(bad.validate().is_err());
    }
}
