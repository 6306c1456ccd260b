//! Wisconsin-style data, the J/O/M/R mapping grid and the benchmark suite.
//!
//! Every table row has an identifier `x` (column `unique2`) and a
//! `onepercent` value `o` in `0..100`. Slice `s` of a table holds the
//! identifiers `s·N .. (s+1)·N`. Property 1 selects `o` in `[0,20)` and
//! properties 2 and 3 select `o` in `[O,O+20)` with `O = 20 - j`, so that
//! the subjects of properties 1 and 2 overlap on `j%` of the rows.
//!
//! Property 3 reads "crossed" tables in which `o` is a permutation of
//! `x mod 100` that depends on the block `(x / 100) mod 20`. Its subjects
//! also meet those of property 1 on `j%` of the rows, but independently of
//! property 2, which is what the join estimator assumes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Cover, Cq, Value};
use crate::mapping::{MappingSet, Tbox};
use crate::oracle::{eval_translation, Column, DataInstance, Table};
use crate::parse::{parse_cq, parse_mappings};
use crate::planner::{collect_for_planning, plan, PlanKind};
use crate::stats::CostConstants;

pub const COLUMNS: [&str; 6] = ["unique1", "unique2", "onepercent", "evenOnePercent", "stringu1", "stringu2"];
pub const SELECTIVITIES: [u32; 4] = [5, 10, 15, 20];
pub const MAX_MAPPINGS: u32 = 6;
/// Grid data needs whole 20-block cycles of 100 rows.
pub const GRID_ROW_QUANTUM: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Aligned,
    Crossed { j: u32 },
}

/// Short base-26 rendering of `n`.
fn encode(mut n: u64) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn crossed_target(window: u32) -> Vec<u32> {
    let mut t: Vec<u32> = (window..window + 20).collect();
    t.extend((0..100).filter(|v| !(window..window + 20).contains(v)));
    t
}

/// `onepercent` of a row whose identifier has residue `a` and block `c`.
fn onepercent(layout: Layout, a: u32, c: u32) -> u32 {
    match layout {
        Layout::Aligned => a,
        Layout::Crossed { j } => {
            let t = crossed_target(20 - j);
            if c < j {
                t[a as usize]
            } else {
                // a in 20..100 takes the window first, a in 0..20 lands
                // outside it.
                let k = if a >= 20 { a - 20 } else { a + 80 };
                t[k as usize]
            }
        }
    }
}

fn wisconsin_table(rows: usize, slice: usize, layout: Layout, rng: &mut ChaCha8Rng) -> Result<Table> {
    let n = rows as u64;
    let per_class = rows / 100;
    // Ranks of the rows within each onepercent class.
    let mut ranks: Vec<Vec<u64>> = (0..100)
        .map(|_| {
            let mut r: Vec<u64> = (0..per_class as u64).collect();
            r.shuffle(rng);
            r
        })
        .collect();
    let mut out = Vec::with_capacity(rows);
    for k in 0..n {
        let a = (k % 100) as u32;
        let c = ((k / 100) % 20) as u32;
        let o = onepercent(layout, a, c);
        let rank = ranks[o as usize].pop().ok_or_else(|| Error::InvalidGrid("unbalanced onepercent classes".into()))?;
        let unique1 = o as u64 + 100 * rank;
        let unique2 = slice as u64 * n + k;
        out.push(vec![
            Value::Int(unique1 as i64),
            Value::Int(unique2 as i64),
            Value::Int(o as i64),
            Value::Int(2 * (unique1 % 50) as i64),
            Value::Str(encode(unique1)),
            Value::Str(encode(unique2)),
        ]);
    }
    let columns = COLUMNS
        .iter()
        .map(|c| if c.starts_with("string") { Column::str(c) } else { Column::int(c) })
        .collect();
    Table::new(columns, out)
}

fn check_rows(rows: usize) -> Result<()> {
    if rows < 100 || !rows.is_multiple_of(100) {
        return Err(Error::InvalidGrid(format!("row count {rows} must be a positive multiple of 100")));
    }
    Ok(())
}

/// `tables` Wisconsin tables `wisc_0 ..` of `rows` rows each, with
/// `onepercent = unique1 mod 100`.
pub fn gen_wisconsin(rows: usize, tables: usize, seed: u64) -> Result<DataInstance> {
    check_rows(rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DataInstance::new();
    for t in 0..tables {
        d.insert(format!("wisc_{t}"), wisconsin_table(rows, t, Layout::Aligned, &mut rng)?);
    }
    Ok(d)
}

fn aligned_name(slice: usize) -> String {
    format!("wa_{slice}")
}

fn crossed_name(j: u32, slice: usize) -> String {
    format!("wx{j}_{slice}")
}

/// The tables every grid point reads: six aligned slices and six crossed
/// slices per selectivity.
pub fn gen_grid_data(rows: usize, seed: u64) -> Result<DataInstance> {
    check_rows(rows)?;
    if !rows.is_multiple_of(GRID_ROW_QUANTUM) {
        return Err(Error::InvalidGrid(format!("grid row count {rows} must be a multiple of {GRID_ROW_QUANTUM}")));
    }
    let mut specs = Vec::new();
    for s in 0..MAX_MAPPINGS as usize {
        specs.push((aligned_name(s), s, Layout::Aligned));
        for j in SELECTIVITIES {
            specs.push((crossed_name(j, s), s, Layout::Crossed { j }));
        }
    }
    let tables: Vec<(String, Table)> = specs
        .into_par_iter()
        .enumerate()
        .map(|(i, (name, slice, layout))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            Ok((name, wisconsin_table(rows, slice, layout, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let mut d = DataInstance::new();
    for (name, t) in tables {
        d.insert(name, t);
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub j: u32,
    pub m: u32,
    pub r: u32,
    pub atoms: u32,
}

impl GridPoint {
    pub fn validate(&self) -> Result<()> {
        let ok = SELECTIVITIES.contains(&self.j)
            && (1..=MAX_MAPPINGS).contains(&self.m)
            && self.r < self.m
            && matches!(self.atoms, 3 | 4);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("{self:?}")))
        }
    }

    pub fn offset(&self) -> u32 {
        20 - self.j
    }

    /// Name of property `p` (1-based).
    pub fn property(&self, p: u32) -> String {
        format!("J{}O{}M{}R{}Prop{p}", self.j, self.offset(), self.m, self.r)
    }

    /// Every grid point with `atoms` atoms: 84 of them.
    pub fn all(atoms: u32) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for j in SELECTIVITIES {
            for m in 1..=MAX_MAPPINGS {
                for r in 0..m {
                    out.push(GridPoint { j, m, r, atoms });
                }
            }
        }
        out
    }
}

/// Mappings, query and reference cover of one grid point.
#[derive(Clone, Debug)]
pub struct GridInstance {
    pub point: GridPoint,
    pub mappings: MappingSet,
    pub query: Cq,
    pub cover: Cover,
}

/// Slice read by mapping `i`: the first `m - r` mappings read distinct
/// slices, the others repeat them.
pub fn mapping_slice(point: &GridPoint, i: u32) -> usize {
    let distinct = point.m - point.r;
    (if i < distinct { i } else { (i - distinct) % distinct }) as usize
}

pub fn gen_grid(point: GridPoint) -> Result<GridInstance> {
    point.validate()?;
    let mut text = String::new();
    let mut used = std::collections::BTreeSet::new();
    for p in 1..=3 {
        for i in 0..point.m {
            let slice = mapping_slice(&point, i);
            let table = if p == 3 { crossed_name(point.j, slice) } else { aligned_name(slice) };
            used.insert(table.clone());
            let lo = if p == 1 { 0 } else { point.offset() };
            let view = format!("v{p}_{i}");
            writeln!(
                text,
                "{view}(u2,e,s1,s2) := {table}(u1,u2,o,e,s1,s2) & o >= {lo} & o < {}",
                lo + 20
            )
            .unwrap();
            writeln!(text, "{}(number(u2),name(e,s1,s2)) <- {view}(u2,e,s1,s2)", point.property(p)).unwrap();
        }
    }
    let header: String = used
        .iter()
        .map(|t| format!("table {t}({})\n", COLUMNS.join(",")))
        .collect();
    let mappings = parse_mappings(&(header + &text))?;
    let (p1, p2, p3) = (point.property(1), point.property(2), point.property(3));
    let (query, cover) = if point.atoms == 3 {
        (format!("q(x,y1,y2,y3) :- {p1}(x,y1), {p2}(x,y2), {p3}(x,y3)"), "1,2|3")
    } else {
        (
            format!("q(x,y1,y2,y3,y4) :- {p1}(x,y1), {p2}(x,y2), {p3}(x,y3), {p3}(x,y4)"),
            "1,2|3|4",
        )
    };
    let query = parse_cq(&query)?;
    let cover = Cover::parse(cover, query.body.len())?;
    Ok(GridInstance {
        point,
        mappings,
        query,
        cover,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub rows: usize,
    pub seed: u64,
    pub atoms: Vec<u32>,
    pub max_fragments: usize,
    pub constants: CostConstants,
    /// Grid points to run; all of them for each `atoms` value when empty.
    pub points: Vec<GridPoint>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rows: 10_000,
            seed: 7,
            atoms: vec![3],
            max_fragments: 3,
            constants: CostConstants::default(),
            points: Vec::new(),
        }
    }
}

impl BenchConfig {
    pub fn grid(&self) -> Vec<GridPoint> {
        if !self.points.is_empty() {
            return self.points.clone();
        }
        self.atoms.iter().flat_map(|&a| GridPoint::all(a)).collect()
    }
}

/// One candidate translation of one grid query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub j: u32,
    pub m: u32,
    pub r: u32,
    pub atoms: u32,
    pub query_id: String,
    pub candidate: String,
    pub kind: PlanKind,
    pub est_card: u64,
    pub true_card: u64,
    pub est_cost: f64,
    pub oracle_cost: f64,
    pub chosen: bool,
    /// Gain of the reference cover over the UCQ, from oracle costs.
    pub g: f64,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            j: self.j,
            m: self.m,
            r: self.r,
            atoms: self.atoms,
        }
    }
}

pub fn query_id(point: &GridPoint) -> String {
    format!("J{}M{}R{}A{}", point.j, point.m, point.r, point.atoms)
}

/// Plans and evaluates every candidate of one grid point.
pub fn run_point(point: GridPoint, data: &DataInstance, config: &BenchConfig) -> Result<Vec<ReportRow>> {
    let g = gen_grid(point)?;
    let t = Tbox::default();
    let stats = collect_for_planning(&g.mappings, &t, data)?;
    let plans = plan(&g.query, &g.mappings, &t, &stats, &config.constants, config.max_fragments)?;
    let evals = plans
        .iter()
        .map(|p| eval_translation(p.translation.unfolded(), data))
        .collect::<Result<Vec<_>>>()?;
    let oracle: Vec<f64> = evals.iter().map(|e| e.counters.cost(&config.constants)).collect();
    let ucq = plans.iter().position(|p| p.kind == PlanKind::Ucq);
    let reference = plans.iter().position(|p| p.cover == g.cover);
    let gain = match (ucq, reference) {
        (Some(u), Some(j)) if oracle[u] > 0.0 => 1.0 - oracle[j] / oracle[u],
        _ => 0.0,
    };
    Ok(plans
        .iter()
        .zip(&evals)
        .zip(&oracle)
        .enumerate()
        .map(|(i, ((p, e), &oc))| ReportRow {
            j: point.j,
            m: point.m,
            r: point.r,
            atoms: point.atoms,
            query_id: query_id(&point),
            candidate: p.cover.to_string(),
            kind: p.kind,
            est_card: p.est_card,
            true_card: e.answers.len() as u64,
            est_cost: p.cost.total,
            oracle_cost: oc,
            chosen: i == 0,
            g: gain,
            error: None,
        })
        .collect())
}

/// Runs every grid point of `config` over `data`. A failing point yields a
/// single row carrying the error.
pub fn run_suite_on(config: &BenchConfig, data: &DataInstance) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = config
        .grid()
        .into_par_iter()
        .flat_map_iter(|point| match run_point(point, data, config) {
            Ok(rows) => rows,
            Err(e) => vec![ReportRow {
                j: point.j,
                m: point.m,
                r: point.r,
                atoms: point.atoms,
                query_id: query_id(&point),
                candidate: String::new(),
                kind: PlanKind::Ucq,
                est_card: 0,
                true_card: 0,
                est_cost: 0.0,
                oracle_cost: 0.0,
                chosen: false,
                g: 0.0,
                error: Some(e.to_string()),
            }],
        })
        .collect();
    // Stable: keeps plan rank order within a point.
    rows.sort_by_key(|r| r.point());
    rows
}

pub fn run_suite(config: &BenchConfig) -> Result<Vec<ReportRow>> {
    let data = gen_grid_data(config.rows, config.seed)?;
    Ok(run_suite_on(config, &data))
}

pub const CSV_HEADER: [&str; 12] = [
    "j", "m", "r", "atoms", "query_id", "candidate", "est_card", "true_card", "est_cost", "oracle_cost", "chosen", "g",
];

pub fn write_csv<W: std::io::Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.j.to_string(),
            r.m.to_string(),
            r.r.to_string(),
            r.atoms.to_string(),
            r.query_id.clone(),
            r.candidate.clone(),
            r.est_card.to_string(),
            r.true_card.to_string(),
            format!("{:.1}", r.est_cost),
            format!("{:.1}", r.oracle_cost),
            r.chosen.to_string(),
            format!("{:.4}", r.g),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_csv(rows, &mut f)?;
    f.flush()?;
    Ok(())
}
