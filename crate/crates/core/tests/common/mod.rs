//! Random OBDA scenarios for integration tests.
#![allow(dead_code)]

use obda_core::ir::{Cq, Value};
use obda_core::mapping::{saturate, MappingSet, Tbox};
use obda_core::oracle::{Column, DataInstance, Table};
use obda_core::parse::{parse_cq, parse_mappings, parse_tbox};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scenario {
    pub mappings: MappingSet,
    pub tbox: Tbox,
    pub data: DataInstance,
    pub queries: Vec<Cq>,
}

const TABLES: [(&str, usize); 3] = [("T1", 2), ("T2", 3), ("T3", 2)];
const CONCEPTS: [&str; 3] = ["A", "B", "C"];
const ROLES: [&str; 3] = ["P", "R", "S"];
/// Template symbols for one-argument and two-argument templates.
const UNARY: [&str; 2] = ["f", "g"];
const BINARY: [&str; 1] = ["k"];

fn vars(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// A random table atom over fresh variables, sharing `join` with the
/// previous atom when given.
fn table_atom(rng: &mut ChaCha8Rng, tag: &str, join: Option<&str>) -> (String, Vec<String>) {
    let (name, arity) = TABLES[rng.gen_range(0..TABLES.len())];
    let mut args = vars(tag, arity);
    if let Some(j) = join {
        let p = rng.gen_range(0..arity);
        args[p] = j.to_string();
    }
    (format!("{name}({})", args.join(",")), args)
}

/// A view definition of the given arity: one or two branches, each a join
/// of one or two tables with an optional filter.
fn view(rng: &mut ChaCha8Rng, name: &str, arity: usize) -> String {
    let mut text = String::new();
    let branches = if rng.gen_bool(0.3) { 2 } else { 1 };
    for b in 0..branches {
        let (a1, vs1) = table_atom(rng, &format!("a{b}_"), None);
        let mut body = vec![a1];
        let mut available = vs1.clone();
        if rng.gen_bool(0.4) {
            let j = vs1.choose(rng).unwrap().clone();
            let (a2, vs2) = table_atom(rng, &format!("b{b}_"), Some(&j));
            body.push(a2);
            available.extend(vs2);
        }
        available.sort();
        available.dedup();
        let head: Vec<String> = (0..arity).map(|_| available.choose(rng).unwrap().clone()).collect();
        if rng.gen_bool(0.3) {
            let v = available.choose(rng).unwrap();
            body.push(format!("{v} < {}", rng.gen_range(2..6)));
        }
        text.push_str(&format!("{name}({}) := {}\n", head.join(","), body.join(" & ")));
    }
    text
}

fn template(rng: &mut ChaCha8Rng, width: usize, args: &mut impl Iterator<Item = String>) -> String {
    if width == 2 {
        format!("{}({},{})", BINARY[0], args.next().unwrap(), args.next().unwrap())
    } else {
        let s = UNARY[rng.gen_range(0..UNARY.len())];
        format!("{s}({})", args.next().unwrap())
    }
}

fn random_mappings(rng: &mut ChaCha8Rng, n_views: usize) -> String {
    let mut text = String::new();
    for (name, arity) in TABLES {
        text.push_str(&format!("table {name}({})\n", vars("c", arity).join(",")));
    }
    for i in 0..n_views {
        let role = rng.gen_bool(0.6);
        // Decide templates first so the view arity matches their arguments.
        let pred = if role {
            ROLES[rng.gen_range(0..ROLES.len())]
        } else {
            CONCEPTS[rng.gen_range(0..CONCEPTS.len())]
        };
        let slots = if role { 2 } else { 1 };
        let widths: Vec<usize> = (0..slots).map(|_| if rng.gen_bool(0.15) { 2 } else { 1 }).collect();
        let arity: usize = widths.iter().sum();
        let name = format!("V{}", i + 1);
        text.push_str(&view(rng, &name, arity));
        let cols = vars("x", arity);
        let mut it = cols.clone().into_iter();
        let targets: Vec<String> = widths.iter().map(|&w| template(rng, w, &mut it)).collect();
        text.push_str(&format!("{pred}({}) <- {name}({})\n", targets.join(","), cols.join(",")));
        // Occasionally a second assertion over the same view.
        if rng.gen_bool(0.2) {
            let mut it = cols.clone().into_iter();
            let t: Vec<String> = widths.iter().map(|&w| template(rng, w, &mut it)).collect();
            text.push_str(&format!("{pred}({}) <- {name}({})\n", t.join(","), cols.join(",")));
        }
    }
    text
}

fn random_tbox(rng: &mut ChaCha8Rng) -> String {
    let mut text = String::new();
    for _ in 0..rng.gen_range(0..3) {
        let a = CONCEPTS.choose(rng).unwrap();
        let b = CONCEPTS.choose(rng).unwrap();
        if a != b {
            text.push_str(&format!("{a} subClassOf {b}\n"));
        }
    }
    for _ in 0..rng.gen_range(0..2) {
        let a = ROLES.choose(rng).unwrap();
        let b = ROLES.choose(rng).unwrap();
        if a != b {
            text.push_str(&format!("{a} subPropertyOf {b}\n"));
        }
    }
    text
}

fn random_data(rng: &mut ChaCha8Rng, max_rows: usize) -> DataInstance {
    let mut d = DataInstance::new();
    for (name, arity) in TABLES {
        let n = rng.gen_range(0..=max_rows);
        let rows = (0..n)
            .map(|_| (0..arity).map(|_| Value::Int(rng.gen_range(0..4))).collect())
            .collect();
        let cols = vars("c", arity).iter().map(|c| Column::int(c)).collect();
        d.insert(name, Table::new(cols, rows).unwrap());
    }
    d
}

/// A connected query of 2 to 4 atoms over the given predicates. With
/// `all_answer`, every variable is an answer variable.
pub fn random_query(rng: &mut ChaCha8Rng, all_answer: bool, concepts: &[String], roles: &[String]) -> Cq {
    let n = rng.gen_range(2..=4);
    let mut atoms = Vec::new();
    let mut used = vec!["v0".to_string()];
    for i in 0..n {
        let anchor = used.choose(rng).unwrap().clone();
        if roles.is_empty() || (!concepts.is_empty() && rng.gen_bool(0.4)) {
            atoms.push(format!("{}({anchor})", concepts.choose(rng).unwrap()));
        } else {
            let fresh = format!("v{}", i + 1);
            let role = roles.choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                atoms.push(format!("{role}({anchor},{fresh})"));
            } else {
                atoms.push(format!("{role}({fresh},{anchor})"));
            }
            used.push(fresh);
        }
    }
    let head: Vec<String> = if all_answer {
        used.clone()
    } else {
        let mut h: Vec<String> = used.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
        if h.is_empty() {
            h.push(used[0].clone());
        }
        h
    };
    parse_cq(&format!("q({}) :- {}", head.join(","), atoms.join(", "))).unwrap()
}

/// Scenario `seed`: at most six views, at most `max_rows` rows per table.
pub fn scenario(seed: u64, max_rows: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_views = rng.gen_range(2..=6);
    let mappings = parse_mappings(&random_mappings(&mut rng, n_views)).unwrap();
    mappings.validate().unwrap();
    let tbox = parse_tbox(&random_tbox(&mut rng)).unwrap();
    let data = random_data(&mut rng, max_rows);
    // Predicates with at least one assertion after saturation.
    let mt = saturate(&mappings, &tbox).unwrap();
    let mut concepts = Vec::new();
    let mut roles = Vec::new();
    for a in &mt.assertions {
        let list = if a.target.arity() == 1 { &mut concepts } else { &mut roles };
        if !list.contains(&a.target.pred) {
            list.push(a.target.pred.clone());
        }
    }
    let queries = vec![
        random_query(&mut rng, false, &concepts, &roles),
        random_query(&mut rng, true, &concepts, &roles),
    ];
    Scenario {
        mappings,
        tbox,
        data,
        queries,
    }
}
