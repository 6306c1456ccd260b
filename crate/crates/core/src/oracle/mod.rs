//! Exact in-memory evaluation: views, virtual ABoxes, certain answers and
//! translations, with operation counters that mirror the cost model.

pub mod data;
pub mod engine;
pub mod naive;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Term, Ucq, Value};
use crate::mapping::{saturate, MappingSet, Tbox, ViewDef};
use crate::stats::{facing_key, AttrKey, StatsCatalog, CostConstants};
use crate::unfold::{TranslationKind, UnfoldedQuery};

pub use data::{Column, ColumnType, DataInstance, Table};
use engine::{Evaluator, Row};
use naive::Naive;

/// Operation counts of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub tuples_scanned: u64,
    pub join_probes: u64,
    pub tuples_materialized: u64,
    pub dedup_comparisons: u64,
}

impl OpCounters {
    /// The counts priced with the cost constants.
    pub fn cost(&self, c: &CostConstants) -> f64 {
        self.tuples_scanned as f64 * c.c_t
            + self.join_probes as f64 * c.c_j
            + self.tuples_materialized as f64 * c.c_m
            + self.dedup_comparisons as f64 * c.c_u
    }

    fn add(&mut self, o: &OpCounters) {
        self.tuples_scanned += o.tuples_scanned;
        self.join_probes += o.join_probes;
        self.tuples_materialized += o.tuples_materialized;
        self.dedup_comparisons += o.dedup_comparisons;
    }
}

/// Comparisons charged for sort-deduplicating `n` tuples: `n·log2 n`,
/// rounded, and zero for `n <= 1`.
pub fn sort_comparisons(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        (n as f64 * (n as f64).log2()).round() as u64
    }
}

/// Ground facts `pred(values)`; templated positions hold rendered IRIs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualAbox {
    pub facts: BTreeSet<(String, Vec<Value>)>,
}

impl VirtualAbox {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    fn by_pred(&self) -> BTreeMap<String, Vec<Vec<Value>>> {
        let mut out: BTreeMap<String, Vec<Vec<Value>>> = BTreeMap::new();
        for (p, vals) in &self.facts {
            out.entry(p.clone()).or_default().push(vals.clone());
        }
        out
    }
}

pub fn virtual_abox(m: &MappingSet, d: &DataInstance) -> Result<VirtualAbox> {
    let mut naive = Naive::new(d, m);
    let mut facts = BTreeSet::new();
    for a in &m.assertions {
        let rows = naive.rule(&a.target.args, std::slice::from_ref(&a.source), &[])?;
        for r in rows {
            facts.insert((a.target.pred.clone(), r));
        }
    }
    Ok(VirtualAbox { facts })
}

/// Closes an ABox under the atomic inclusions of `t`.
pub fn saturate_abox(abox: &VirtualAbox, t: &Tbox) -> VirtualAbox {
    let mut facts = BTreeSet::new();
    for (p, vals) in &abox.facts {
        for sup in t.supers(p) {
            facts.insert((sup, vals.clone()));
        }
    }
    VirtualAbox { facts }
}

/// Answers of `q` over the ABox of the T-mapping of `m`.
pub fn certain_answers(q: &Ucq, t: &Tbox, m: &MappingSet, d: &DataInstance) -> Result<BTreeSet<Vec<Value>>> {
    let mt = saturate(m, t)?;
    let facts = virtual_abox(&mt, d)?.by_pred();
    let mut out = BTreeSet::new();
    for cq in &q.cqs {
        out.extend(naive::eval_over_facts(&cq.head, &cq.body, &facts));
    }
    Ok(out)
}

/// Distinct rows of a view, charging a scan of every base table under it,
/// a probe per table per result and the sort for duplicate removal.
pub fn eval_view(v: &ViewDef, m: &MappingSet, d: &DataInstance) -> Result<(Vec<Row>, OpCounters)> {
    let mut schema = m.clone();
    schema.views.insert(v.name.clone(), v.clone());
    let mut ev = Evaluator::new(d, &schema);
    let rows = ev.relation(&v.name)?;
    let mut c = OpCounters::default();
    let mut bag = 0;
    for b in &v.branches {
        let out = ev.branch(b)?;
        let tables = branch_tables(&schema, &b.body);
        c.tuples_scanned += scan_size(d, &tables)?;
        c.join_probes += tables.len() as u64 * distinct(&out);
        bag += out.len() as u64;
    }
    if v.is_union() || bag != rows.len() as u64 {
        c.dedup_comparisons += sort_comparisons(rows.len() as u64);
    }
    Ok(((*rows).clone(), c))
}

fn branch_tables(schema: &MappingSet, body: &[crate::ir::Atom]) -> Vec<String> {
    body.iter().flat_map(|a| schema.base_tables(&a.pred)).collect()
}

fn scan_size(d: &DataInstance, tables: &[String]) -> Result<u64> {
    tables.iter().map(|t| Ok(d.table(t)?.len() as u64)).sum()
}

fn distinct(rows: &[Row]) -> u64 {
    rows.iter().collect::<BTreeSet<_>>().len() as u64
}

/// Result of [`eval_translation`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub answers: BTreeSet<Vec<Value>>,
    pub counters: OpCounters,
    /// Distinct answers of each rule, in rule order.
    pub per_rule: Vec<u64>,
}

/// Evaluates a translation with the physical plan the cost model assumes.
///
/// * A CQ scans every base table under its body and probes once per table
///   and result tuple (hash joins).
/// * A UCQ adds a sort-based duplicate removal over its distinct results.
/// * A join of UCQs evaluates each fragment view as a UCQ (deduplicated
///   when it unions several branches), materializes all
///   fragments except the largest one (which is pipelined) and merge-joins
///   them, probing once per fragment and result tuple.
/// * A union of such joins is deduplicated only when the query projects out
///   variables; otherwise the branches are disjoint.
pub fn eval_translation(u: &UnfoldedQuery, d: &DataInstance) -> Result<Evaluation> {
    let mut ev = Evaluator::new(d, &u.schema);
    let mut counters = OpCounters::default();
    let mut answers = BTreeSet::new();
    let mut per_rule = Vec::with_capacity(u.rules.len());
    for r in &u.rules {
        let out: BTreeSet<Row> = ev.rule(&r.head, &r.body, &[])?.into_iter().collect();
        match u.kind {
            TranslationKind::Ucq => {
                let tables = branch_tables(&u.schema, &r.body);
                counters.tuples_scanned += scan_size(d, &tables)?;
                counters.join_probes += tables.len() as u64 * out.len() as u64;
            }
            TranslationKind::Jucq => {
                let mut sizes = Vec::with_capacity(r.body.len());
                for a in &r.body {
                    let (size, c) = fragment_cost(&mut ev, &u.schema, d, &a.pred)?;
                    counters.add(&c);
                    sizes.push(size);
                }
                let largest = sizes.iter().enumerate().max_by_key(|(i, s)| (**s, usize::MAX - i)).map(|(i, _)| i);
                for (i, s) in sizes.iter().enumerate() {
                    if Some(i) != largest {
                        counters.tuples_materialized += s;
                    }
                }
                counters.join_probes += r.body.len() as u64 * out.len() as u64;
            }
        }
        per_rule.push(out.len() as u64);
        answers.extend(out);
    }
    let dedup = match u.kind {
        TranslationKind::Ucq => true,
        TranslationKind::Jucq => u.projected,
    };
    if dedup && !u.rules.is_empty() {
        counters.dedup_comparisons += sort_comparisons(answers.len() as u64);
    }
    Ok(Evaluation {
        answers,
        counters,
        per_rule,
    })
}

/// Size and evaluation counters of a fragment view evaluated as a UCQ.
fn fragment_cost(ev: &mut Evaluator, schema: &MappingSet, d: &DataInstance, view: &str) -> Result<(u64, OpCounters)> {
    let def = schema
        .views
        .get(view)
        .ok_or_else(|| Error::UnknownRelation(view.to_string()))?;
    let mut c = OpCounters::default();
    for b in &def.branches {
        let out = ev.branch(b)?;
        let tables = branch_tables(schema, &b.body);
        c.tuples_scanned += scan_size(d, &tables)?;
        c.join_probes += tables.len() as u64 * distinct(&out);
    }
    let size = ev.relation(view)?.len() as u64;
    if def.branches.len() > 1 {
        c.dedup_comparisons += sort_comparisons(size);
    }
    Ok((size, c))
}

/// Statistics recomputed with nested loops and ordered sets.
pub fn brute_stats(m: &MappingSet, d: &DataInstance) -> Result<StatsCatalog> {
    let mut naive = Naive::new(d, m);
    let mut cat = StatsCatalog::default();
    // (symbol, width) -> projections
    let mut groups: Vec<((String, usize), AttrKey)> = Vec::new();
    for a in &m.assertions {
        let src = &a.source.pred;
        let rows = naive.relation(src)?;
        cat.view_card.insert(src.clone(), rows.len() as u64);
        for table in m.base_tables(src) {
            let n = d.table(&table)?.rows.len() as u64;
            cat.table_card.insert(table, n);
        }
        let cols = m.columns(src)?;
        for t in &a.target.args {
            let (symbol, vars) = match t {
                Term::Const(_) => continue,
                Term::Var(v) => ("_".to_string(), vec![v]),
                Term::Func(s, args) => (s.clone(), args.iter().filter_map(|x| x.as_var()).collect()),
            };
            let mut attrs = Vec::new();
            for v in &vars {
                let mut found = None;
                for (p, arg) in a.source.args.iter().enumerate() {
                    if arg.as_var() == Some(*v) && found.is_none() {
                        found = Some(cols[p].clone());
                    }
                }
                attrs.push(found.ok_or_else(|| Error::UnknownAttribute(format!("{src}.{v}")))?);
            }
            let width = attrs.len();
            let key = AttrKey {
                relation: src.clone(),
                attrs,
            };
            if !groups.iter().any(|(g, k)| *g == (symbol.clone(), width) && *k == key) {
                groups.push(((symbol, width), key));
            }
        }
    }

    let mut proj: Vec<BTreeSet<Vec<Value>>> = Vec::new();
    for (_, key) in &groups {
        let rows = naive.relation(&key.relation)?;
        let cols = m.columns(&key.relation)?;
        let mut set = BTreeSet::new();
        for r in &rows {
            let mut t = Vec::new();
            for a in &key.attrs {
                for (i, c) in cols.iter().enumerate() {
                    if c == a {
                        t.push(r[i].clone());
                        break;
                    }
                }
            }
            set.insert(t);
        }
        cat.dist_proj.insert(key.to_string(), set.len() as u64);
        proj.push(set);
    }
    for i in 0..groups.len() {
        for j in 0..groups.len() {
            if i < j && groups[i].0 == groups[j].0 && groups[i].1 != groups[j].1 {
                let n = proj[i].intersection(&proj[j]).count() as u64;
                cat.facing.insert(facing_key(&groups[i].1, &groups[j].1), n);
            }
        }
    }
    Ok(cat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_mappings, parse_query, parse_tbox};

    fn ints(rows: &[&[i64]]) -> Vec<Vec<Value>> {
        rows.iter().map(|r| r.iter().map(|&i| Value::Int(i)).collect()).collect()
    }

    fn one_row_instance() -> DataInstance {
        let mut d = DataInstance::new();
        for (name, width) in [("V1", 1), ("V2", 1), ("V3", 1), ("V4", 2)] {
            let cols = (0..width).map(|i| Column::int(&format!("c{i}"))).collect();
            let row = (0..width).map(|i| Value::Int(i as i64 + 1)).collect();
            d.insert(name, Table::new(cols, vec![row]).unwrap());
        }
        d
    }

    fn section3() -> MappingSet {
        parse_mappings(
            "C(f(a)) <- V1(a)
             D(f(b)) <- V2(b)
             D(g(c)) <- V3(c)
             P(f(d),h(e)) <- V4(d,e)",
        )
        .unwrap()
    }

    #[test]
    fn abox_of_one_row_views() {
        let abox = virtual_abox(&section3(), &one_row_instance()).unwrap();
        assert_eq!(abox.len(), 4);
        assert!(abox.facts.contains(&("P".to_string(), vec![Value::str("f:1"), Value::str("h:2")])));
        assert!(virtual_abox(&section3(), &DataInstance::new()).is_err());
    }

    #[test]
    fn certain_answers_use_the_tbox() {
        let m = section3();
        let d = one_row_instance();
        let q = parse_query("q(x) :- D(x)").unwrap().into_ucq();
        assert_eq!(certain_answers(&q, &Tbox::default(), &m, &d).unwrap().len(), 2);
        let t = parse_tbox("C subClassOf D").unwrap();
        assert_eq!(certain_answers(&q, &t, &m, &d).unwrap().len(), 2);
        let t = parse_tbox("C subClassOf E").unwrap();
        let q = parse_query("q(x) :- E(x)").unwrap().into_ucq();
        assert_eq!(certain_answers(&q, &t, &m, &d).unwrap().len(), 1);
        let q = parse_query("q(x) :- Z(x)").unwrap().into_ucq();
        assert!(certain_answers(&q, &t, &m, &d).unwrap().is_empty());
    }

    #[test]
    fn view_with_filter_and_union() {
        let m = parse_mappings("V(x) := T(x,y) & y < 2\nV(x) := T(y,x)\nA(f(x)) <- V(x)").unwrap();
        let mut d = DataInstance::new();
        d.insert("T", Table::new(vec![Column::int("x"), Column::int("y")], ints(&[&[1, 1], &[2, 5], &[3, 1]])).unwrap());
        let (rows, c) = eval_view(&m.views["V"], &m, &d).unwrap();
        assert_eq!(rows, ints(&[&[1], &[3], &[5]]));
        assert_eq!(c.tuples_scanned, 6);
        assert!(c.dedup_comparisons > 0);
        d.insert("T", Table::new(vec![Column::int("x"), Column::int("y")], vec![]).unwrap());
        assert!(eval_view(&m.views["V"], &m, &d).unwrap().0.is_empty());
    }

    #[test]
    fn brute_stats_on_empty_instance() {
        let m = section3();
        let mut d = one_row_instance();
        for t in d.tables.values_mut() {
            t.rows.clear();
        }
        let cat = brute_stats(&m, &d).unwrap();
        assert!(cat.view_card.values().all(|&n| n == 0));
        assert!(cat.dist_proj.values().all(|&n| n == 0));
        assert_eq!(cat, crate::stats::collect(&m, &d).unwrap());
    }

    #[test]
    fn single_view_has_no_facing_pairs() {
        let m = parse_mappings("A(f(x)) <- V(x)").unwrap();
        let mut d = DataInstance::new();
        d.insert("V", Table::new(vec![Column::int("x")], ints(&[&[1], &[2]])).unwrap());
        let cat = brute_stats(&m, &d).unwrap();
        assert!(cat.facing.is_empty());
        assert_eq!(cat.view_card["V"], 2);
    }

    #[test]
    fn sort_cost() {
        assert_eq!(sort_comparisons(0), 0);
        assert_eq!(sort_comparisons(1), 0);
        assert_eq!(sort_comparisons(8), 24);
    }
}
