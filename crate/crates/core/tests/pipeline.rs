//! End-to-end run over a small hand-written scenario: saturation, wrapping,
//! unfolding, estimation, planning, evaluation and SQL emission.

use obda_core::estimate::{estimate_unfolding, EstimationContext};
use obda_core::ir::{Cq, Ucq, Value};
use obda_core::mapping::{saturate, wrap, MappingSet, Tbox};
use obda_core::oracle::{certain_answers, eval_translation, Column, DataInstance, Table};
use obda_core::parse::{parse_cq, parse_mappings, parse_tbox};
use obda_core::planner::{collect_for_planning, plan};
use obda_core::sql::emit_sql;
use obda_core::stats::CostConstants;
use obda_core::unfold::{atm, unfold_ucq};

const MAPPINGS: &str = "A(l(a)) <- T1(a)
C(l(b)) <- T2(b)
P1(l(c),m(d)) <- T3(c,d)
R1(l(e),m(f)) <- T4(e,f)
P2(l(g),m(h)) <- T5(g,h)
P2(l(g),n(h)) <- T5(g,h)
R2(l(i),m(j)) <- T6(i,j)";

const TBOX: &str = "A subClassOf C\nP1 subPropertyOf R1\nP2 subPropertyOf R2";

fn setup() -> (MappingSet, Tbox, Cq) {
    let m = parse_mappings(MAPPINGS).unwrap();
    let t = parse_tbox(TBOX).unwrap();
    let q = parse_cq("q(x,y,z) :- C(x), R1(x,y), R2(x,z)").unwrap();
    (m, t, q)
}

fn table(cols: &[&str], rows: &[&[i64]]) -> Table {
    Table::new(
        cols.iter().map(|c| Column::int(c)).collect(),
        rows.iter().map(|r| r.iter().map(|&v| Value::Int(v)).collect()).collect(),
    )
    .unwrap()
}

fn data() -> DataInstance {
    let mut d = DataInstance::new();
    d.insert("T1", table(&["a"], &[&[1], &[2], &[3]]));
    d.insert("T2", table(&["b"], &[&[3], &[4], &[5]]));
    d.insert("T3", table(&["c", "d"], &[&[1, 10], &[2, 11], &[4, 12]]));
    d.insert("T4", table(&["e", "f"], &[&[3, 13], &[5, 14], &[6, 15]]));
    d.insert("T5", table(&["g", "h"], &[&[1, 20], &[3, 21], &[4, 22], &[9, 23]]));
    d.insert("T6", table(&["i", "j"], &[&[2, 30], &[5, 31], &[7, 32]]));
    d
}

#[test]
fn saturation_adds_four_assertions() {
    let (m, t, _) = setup();
    assert_eq!(saturate(&m, &t).unwrap().len(), m.len() + 4);
}

#[test]
fn wrapped_unfolding_has_two_rules_with_distinct_templates() {
    let (m, t, q) = setup();
    let wmt = wrap(&saturate(&m, &t).unwrap());
    let ucq: Ucq = q.into();
    let u = unfold_ucq(&ucq, &wmt);
    assert_eq!(u.len(), 2);
    let rows = atm(&u).rows;
    let expected = [["l", "m", "m"], ["l", "m", "n"]];
    let mut got: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|s| s.clone().unwrap()).collect()).collect();
    got.sort();
    assert_eq!(got, expected.map(|r| r.map(String::from).to_vec()).to_vec());
    assert!(atm(&u).rows_distinct());
}

#[test]
fn translations_compute_certain_answers() {
    let (m, t, q) = setup();
    let d = data();
    let ucq: Ucq = q.clone().into();
    let cert = certain_answers(&ucq, &t, &m, &d).unwrap();
    // x in {1,3,4} has a C fact, an R1 fact and an R2 fact.
    assert!(!cert.is_empty());
    let mt = saturate(&m, &t).unwrap();
    assert_eq!(eval_translation(&unfold_ucq(&ucq, &mt), &d).unwrap().answers, cert);
    assert_eq!(eval_translation(&unfold_ucq(&ucq, &wrap(&mt)), &d).unwrap().answers, cert);

    let stats = collect_for_planning(&m, &t, &d).unwrap();
    let plans = plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap();
    assert!(plans.len() > 1);
    for p in &plans {
        assert_eq!(eval_translation(p.translation.unfolded(), &d).unwrap().answers, cert, "{}", p.cover);
    }
}

#[test]
fn estimate_total_sums_distinct_rule_estimates() {
    let (m, t, q) = setup();
    let d = data();
    let stats = collect_for_planning(&m, &t, &d).unwrap();
    let wmt = wrap(&saturate(&m, &t).unwrap());
    let ucq: Ucq = q.into();
    let u = unfold_ucq(&ucq, &wmt);
    let mut ctx = EstimationContext::new(&stats);
    let est = estimate_unfolding(&mut ctx, &ucq, &wmt, &u.rules).unwrap();
    assert_eq!(est.per_rule.len(), 2);
    assert_eq!(est.total, est.per_rule.iter().sum::<u64>());
    assert!(est.flags.is_empty());
}

#[test]
fn data_round_trips_through_disk() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    assert_eq!(DataInstance::load(dir.path()).unwrap(), d);
}

#[test]
fn every_candidate_emits_sql() {
    let (m, t, q) = setup();
    let d = data();
    let stats = collect_for_planning(&m, &t, &d).unwrap();
    for p in plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap() {
        for dialect in ["ansi", "postgres"] {
            let sql = emit_sql(&p, dialect).unwrap();
            assert!(sql.contains("SELECT"));
            assert!(sql.contains("\"T5\""));
        }
    }
    let p = &plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap()[0];
    assert!(emit_sql(p, "oracle").is_err());
}
