//! Cover enumeration, costing and ranking of candidate translations.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostEstimate, CostInputs, CostModel, CostQuantities};
use crate::error::Result;
use crate::ir::{enumerate_covers, Cover, Cq};
use crate::mapping::{saturate, wrap, MappingSet, Tbox};
use crate::oracle::DataInstance;
use crate::stats::{collect, CostConstants, StatsCatalog};
use crate::unfold::{unfold_jucq_type2, unfold_ucq, JucqTranslation, UnfoldedQuery};

pub const DEFAULT_MAX_FRAGMENTS: usize = 3;

/// Above this many atoms covers are searched greedily instead of enumerated.
pub const ENUMERATION_LIMIT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    Ucq,
    Ujucq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Translation {
    Ucq(UnfoldedQuery),
    Ujucq(JucqTranslation),
}

impl Translation {
    /// The executable program: rules over source (UCQ) or fragment views.
    pub fn unfolded(&self) -> &UnfoldedQuery {
        match self {
            Translation::Ucq(u) => u,
            Translation::Ujucq(t) => &t.query,
        }
    }

    /// Number of CQs the translation evaluates.
    pub fn n_cqs(&self) -> usize {
        match self {
            Translation::Ucq(u) => u.len(),
            Translation::Ujucq(t) => t.cq_branches(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanChoice {
    pub cover: Cover,
    pub kind: PlanKind,
    pub translation: Translation,
    pub est_card: u64,
    pub cost: CostEstimate,
    /// The translation has no rules, so the query has no answers.
    pub zero_answers: bool,
    pub n_cqs: usize,
    pub sql: Option<String>,
}

/// The mappings statistics must cover for planning over `m`: the T-mapping
/// and its wrapped form.
pub fn planning_mappings(m: &MappingSet, t: &Tbox) -> Result<(MappingSet, MappingSet)> {
    let mt = saturate(m, t)?;
    let wmt = wrap(&mt);
    Ok((mt, wmt))
}

/// Statistics of `M_T ∪ wrap(M_T)` over `d`.
pub fn collect_for_planning(m: &MappingSet, t: &Tbox, d: &DataInstance) -> Result<StatsCatalog> {
    let (mt, wmt) = planning_mappings(m, t)?;
    let mut both = wmt;
    both.assertions.extend(mt.assertions);
    collect(&both, d)
}

struct Planner<'a> {
    q: &'a Cq,
    mt: &'a MappingSet,
    wmt: &'a MappingSet,
    stats: &'a StatsCatalog,
    consts: CostConstants,
}

impl Planner<'_> {
    fn build(&self, cover: &Cover) -> Result<PlanChoice> {
        let translation = if cover.is_single() {
            Translation::Ucq(unfold_ucq(&self.q.clone().into(), self.mt))
        } else {
            Translation::Ujucq(unfold_jucq_type2(self.q, cover, self.mt)?)
        };
        let kind = match translation {
            Translation::Ucq(_) => PlanKind::Ucq,
            Translation::Ujucq(_) => PlanKind::Ujucq,
        };
        let n_cqs = translation.n_cqs();
        let zero_answers = translation.unfolded().is_empty();
        let (est_card, cost) = if zero_answers {
            (0, CostEstimate::from_quantities(CostQuantities::default(), &self.consts))
        } else {
            let inputs = CostInputs {
                query: self.q,
                mappings: self.mt,
                wrapped: self.wmt,
            };
            let mut model = CostModel::new(inputs, self.stats, self.consts);
            let cost = match &translation {
                Translation::Ucq(u) => model.cost_ucq(u)?,
                Translation::Ujucq(t) => model.cost_ujucq(t)?,
            };
            (model.query_card()?, cost)
        };
        Ok(PlanChoice {
            cover: cover.clone(),
            kind,
            translation,
            est_card,
            cost,
            zero_answers,
            n_cqs,
            sql: None,
        })
    }

    fn build_all(&self, covers: &[Cover]) -> Result<Vec<PlanChoice>> {
        covers.par_iter().map(|c| self.build(c)).collect()
    }

    /// Covers visited by repeatedly merging the pair of blocks whose merge
    /// is cheapest, starting from one block per atom.
    fn greedy_covers(&self, max_fragments: usize) -> Result<Vec<Cover>> {
        let n = self.q.body.len();
        let mut out = vec![Cover::single(n)];
        let mut current: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        while current.len() > 2 {
            let mut merges = Vec::new();
            for i in 0..current.len() {
                for j in i + 1..current.len() {
                    let mut blocks = current.clone();
                    let b = blocks.remove(j);
                    blocks[i].extend(b);
                    merges.push(Cover::new(blocks, n)?);
                }
            }
            let plans = self.build_all(&merges)?;
            let best = plans
                .into_iter()
                .min_by(rank)
                .expect("at least one merge");
            current = best.cover.fragments.clone();
            if current.len() <= max_fragments {
                out.push(best.cover);
            }
        }
        Ok(out)
    }
}

/// Ascending cost, then fewer CQs, then the cover itself.
fn rank(a: &PlanChoice, b: &PlanChoice) -> Ordering {
    a.cost
        .total
        .total_cmp(&b.cost.total)
        .then(a.n_cqs.cmp(&b.n_cqs))
        .then_with(|| a.cover.cmp(&b.cover))
}

/// Every candidate translation of `q`, cheapest first.
pub fn plan(
    q: &Cq,
    m: &MappingSet,
    t: &Tbox,
    stats: &StatsCatalog,
    consts: &CostConstants,
    max_fragments: usize,
) -> Result<Vec<PlanChoice>> {
    let (mt, wmt) = planning_mappings(m, t)?;
    let planner = Planner {
        q,
        mt: &mt,
        wmt: &wmt,
        stats,
        consts: *consts,
    };
    let covers = if q.body.len() > ENUMERATION_LIMIT {
        planner.greedy_covers(max_fragments)?
    } else {
        enumerate_covers(q, max_fragments)
    };
    let mut plans = planner.build_all(&covers)?;
    plans.sort_by(rank);
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{certain_answers, eval_translation};
    use crate::parse::{parse_cq, parse_mappings, parse_tbox};
    use crate::oracle::{Column, Table};
    use crate::ir::Value;

    fn setup() -> (MappingSet, DataInstance) {
        let m = parse_mappings(
            "table T1(a,b)
             table T2(c,d)
             P(f(a),g(b)) <- T1(a,b)
             P(f(c),h(d)) <- T2(c,d)
             V1(b) := T1(a,b)
             V2(d) := T2(c,d)
             A(g(b)) <- V1(b)
             B(h(d)) <- V2(d)",
        )
        .unwrap();
        let mut d = DataInstance::new();
        let rows = |v: &[(i64, i64)]| v.iter().map(|&(x, y)| vec![Value::Int(x), Value::Int(y)]).collect();
        d.insert(
            "T1",
            Table::new(vec![Column::int("a"), Column::int("b")], rows(&[(1, 2), (2, 3), (3, 3)])).unwrap(),
        );
        d.insert(
            "T2",
            Table::new(vec![Column::int("c"), Column::int("d")], rows(&[(1, 5), (4, 6)])).unwrap(),
        );
        (m, d)
    }

    #[test]
    fn single_atom_has_only_the_ucq_plan() {
        let (m, d) = setup();
        let t = Tbox::default();
        let stats = collect_for_planning(&m, &t, &d).unwrap();
        let q = parse_cq("q(x,y) :- P(x,y)").unwrap();
        let plans = plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].kind, PlanKind::Ucq);
        assert_eq!(plans[0].n_cqs, 2);
    }

    #[test]
    fn candidates_are_ranked_and_equivalent() {
        let (m, d) = setup();
        let t = parse_tbox("A subClassOf C\nB subClassOf C").unwrap();
        let stats = collect_for_planning(&m, &t, &d).unwrap();
        let q = parse_cq("q(x,y) :- P(x,y), C(y)").unwrap();
        let plans = plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap();
        assert_eq!(plans.len(), 2);
        assert!(plans.windows(2).all(|w| w[0].cost.total <= w[1].cost.total));
        let expected = certain_answers(&q.clone().into(), &t, &m, &d).unwrap();
        for p in &plans {
            assert_eq!(p.kind == PlanKind::Ucq, p.cover.is_single());
            let ev = eval_translation(p.translation.unfolded(), &d).unwrap();
            assert_eq!(ev.answers, expected);
        }
    }

    #[test]
    fn empty_translation_costs_nothing() {
        let (m, d) = setup();
        let t = Tbox::default();
        let stats = collect_for_planning(&m, &t, &d).unwrap();
        let q = parse_cq("q(x,y) :- P(x,y), Z(y)").unwrap();
        let plans = plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap();
        assert!(plans.iter().all(|p| p.zero_answers && p.cost.total == 0.0));
    }

    #[test]
    fn greedy_search_for_long_queries() {
        let (m, d) = setup();
        let t = Tbox::default();
        let stats = collect_for_planning(&m, &t, &d).unwrap();
        let q = parse_cq("q(x1,x2,x3,x4,x5,x6,x7) :- P(x1,x2), P(x1,x3), P(x1,x4), P(x1,x5), P(x1,x6), P(x1,x7)").unwrap();
        let plans = plan(&q, &m, &t, &stats, &CostConstants::default(), 3).unwrap();
        assert!(plans.iter().any(|p| p.cover.is_single()));
        assert!(plans.iter().all(|p| p.cover.len() <= 3));
        assert!(plans.len() >= 2);
    }
}
