//! Evaluation cost of UCQ and join-of-UCQ translations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimate::{estimate_rules, EstimationContext};
use crate::ir::{Cq, Ucq};
use crate::mapping::{MappingSet, Template};
use crate::oracle::OpCounters;
use crate::stats::CostConstants;
use crate::unfold::{unfold_ucq, JucqTranslation, UnfoldedQuery, UnfoldedRule};

/// Unit counts behind a cost: tuples scanned, hash-join work, sort work,
/// tuples materialized and merge-join work.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostQuantities {
    pub scan: f64,
    pub hash_join: f64,
    pub dedup: f64,
    pub materialize: f64,
    pub merge_join: f64,
}

impl CostQuantities {
    fn add(&mut self, o: &CostQuantities) {
        self.scan += o.scan;
        self.hash_join += o.hash_join;
        self.dedup += o.dedup;
        self.materialize += o.materialize;
        self.merge_join += o.merge_join;
    }

    /// Feature vector in constant order `(c_t, c_j, c_u, c_m)`.
    pub fn features(&self) -> [f64; 4] {
        [self.scan, self.hash_join + self.merge_join, self.dedup, self.materialize]
    }
}

impl From<&OpCounters> for CostQuantities {
    /// Join probes are booked as hash-join work.
    fn from(c: &OpCounters) -> Self {
        CostQuantities {
            scan: c.tuples_scanned as f64,
            hash_join: c.join_probes as f64,
            dedup: c.dedup_comparisons as f64,
            materialize: c.tuples_materialized as f64,
            merge_join: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub scan: f64,
    pub hash_join: f64,
    pub dedup: f64,
    pub materialize: f64,
    pub merge_join: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub total: f64,
    pub breakdown: Breakdown,
    pub quantities: CostQuantities,
}

impl CostEstimate {
    pub fn from_quantities(q: CostQuantities, c: &CostConstants) -> Self {
        let breakdown = Breakdown {
            scan: q.scan * c.c_t,
            hash_join: q.hash_join * c.c_j,
            dedup: q.dedup * c.c_u,
            materialize: q.materialize * c.c_m,
            merge_join: q.merge_join * c.c_j,
        };
        CostEstimate {
            total: breakdown.scan + breakdown.hash_join + breakdown.dedup + breakdown.materialize + breakdown.merge_join,
            breakdown,
            quantities: q,
        }
    }
}

/// `n·log2 n`, zero for `n <= 1`.
pub fn sort_work(n: u64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        n as f64 * (n as f64).log2()
    }
}

/// Scans of the given base-table sizes plus a hash join producing `card`
/// tuples.
pub fn cq_quantities(table_cards: &[u64], card: u64) -> CostQuantities {
    CostQuantities {
        scan: table_cards.iter().map(|&n| n as f64).sum(),
        hash_join: table_cards.len() as f64 * card as f64,
        ..Default::default()
    }
}

/// What costing a translation of `query` needs: the T-mapping its
/// translations are built over, and the wrapped T-mapping used for
/// cardinalities.
pub struct CostInputs<'a> {
    pub query: &'a Cq,
    pub mappings: &'a MappingSet,
    pub wrapped: &'a MappingSet,
}

/// Costs translations of one query, caching unfoldings over the wrapped
/// mappings.
pub struct CostModel<'a, 's> {
    pub inputs: CostInputs<'a>,
    pub consts: CostConstants,
    pub ctx: EstimationContext<'s>,
    wrapped_unfoldings: BTreeMap<String, (Ucq, UnfoldedQuery)>,
}

type Sig = Vec<Template>;

fn rule_sig(r: &UnfoldedRule, vars: &[crate::ir::Term]) -> Sig {
    vars.iter()
        .map(|t| match t.as_var().and_then(|v| r.binding(v)) {
            Some(b) => Template::of(b),
            None => Template::of(t),
        })
        .collect()
}

impl<'a, 's> CostModel<'a, 's> {
    pub fn new(inputs: CostInputs<'a>, stats: &'s crate::stats::StatsCatalog, consts: CostConstants) -> Self {
        CostModel {
            inputs,
            consts,
            ctx: EstimationContext::new(stats),
            wrapped_unfoldings: BTreeMap::new(),
        }
    }

    fn wrapped_unfolding(&mut self, q: &Cq) -> (Ucq, UnfoldedQuery) {
        let key = q.to_string();
        if let Some(u) = self.wrapped_unfoldings.get(&key) {
            return u.clone();
        }
        let ucq: Ucq = q.clone().into();
        let u = unfold_ucq(&ucq, self.inputs.wrapped);
        self.wrapped_unfoldings.insert(key, (ucq.clone(), u.clone()));
        (ucq, u)
    }

    /// Estimated answers of `q`, restricted to the wrapped rules whose
    /// images of `sig_terms` have templates `sig` (all rules when `None`).
    fn card_of(&mut self, q: &Cq, filter: Option<(&[crate::ir::Term], &Sig)>) -> Result<u64> {
        let (ucq, u) = self.wrapped_unfolding(q);
        let rules: Vec<&UnfoldedRule> = u
            .rules
            .iter()
            .filter(|r| filter.is_none_or(|(terms, sig)| rule_sig(r, terms) == *sig))
            .collect();
        let wrapped = self.inputs.wrapped;
        Ok(estimate_rules(&mut self.ctx, &ucq, wrapped, &rules)?.total)
    }

    /// Estimated answers of the query.
    pub fn query_card(&mut self) -> Result<u64> {
        let q = self.inputs.query.clone();
        self.card_of(&q, None)
    }

    /// Scan and hash join of one CQ of `u` (an unfolding of `q` over the
    /// T-mapping).
    pub fn cost_cq(&mut self, q: &Ucq, rule: &UnfoldedRule) -> Result<CostQuantities> {
        let m = self.inputs.mappings;
        let mut cards = Vec::new();
        for a in &rule.body {
            for t in m.base_tables(&a.pred) {
                cards.push(self.ctx.stats.lookup_table_card(&t)?);
            }
        }
        let cq = &q.cqs[rule.cq];
        let e = crate::relexpr::rule_expr(cq, m, rule)?;
        let card = self.ctx.card(&e)?;
        Ok(cq_quantities(&cards, card))
    }

    /// The UCQ translation `u` of the query: its CQs plus duplicate removal.
    pub fn cost_ucq(&mut self, u: &UnfoldedQuery) -> Result<CostEstimate> {
        let q: Ucq = self.inputs.query.clone().into();
        let mut total = CostQuantities::default();
        for r in &u.rules {
            total.add(&self.cost_cq(&q, r)?);
        }
        if !u.rules.is_empty() {
            total.dedup += sort_work(self.query_card()?);
        }
        Ok(CostEstimate::from_quantities(total, &self.consts))
    }

    /// One join of fragment views (rule `rule` of a Type 2 translation).
    pub fn cost_jucq(&mut self, t: &JucqTranslation, rule: usize) -> Result<CostEstimate> {
        Ok(CostEstimate::from_quantities(self.jucq_quantities(t, rule)?, &self.consts))
    }

    fn jucq_quantities(&mut self, t: &JucqTranslation, rule: usize) -> Result<CostQuantities> {
        let r = &t.query.rules[rule];
        let mut total = CostQuantities::default();
        let mut sizes = Vec::with_capacity(r.body.len());
        let mut sigs = Vec::with_capacity(r.body.len());
        for (f, atom) in r.body.iter().enumerate() {
            let frag = &t.fragments[f];
            let members = frag.views.get(&atom.pred).cloned().unwrap_or_default();
            let fq: Ucq = frag.query.clone().into();
            for &i in &members {
                total.add(&self.cost_cq(&fq, &frag.unfolding.rules[i])?);
            }
            let sig: Sig = members
                .first()
                .map(|&i| frag.unfolding.rules[i].head.iter().map(Template::of).collect())
                .unwrap_or_default();
            let query = frag.query.clone();
            let card = self.card_of(&query, Some((&query.head, &sig)))?;
            // A single-branch view has no union to deduplicate.
            if members.len() > 1 {
                total.dedup += sort_work(card);
            }
            sizes.push(card);
            sigs.push(sig);
        }
        // The largest fragment is pipelined, the others materialized.
        let largest = sizes.iter().enumerate().max_by_key(|(i, s)| (**s, usize::MAX - i)).map(|(i, _)| i);
        for (i, s) in sizes.iter().enumerate() {
            if Some(i) != largest {
                total.materialize += *s as f64;
            }
        }
        let card = self.jucq_card(t, &sigs)?;
        total.merge_join += r.body.len() as f64 * card as f64;
        Ok(total)
    }

    /// Wrapped rules of the query whose fragment heads carry `sigs`.
    fn jucq_card(&mut self, t: &JucqTranslation, sigs: &[Sig]) -> Result<u64> {
        let q = self.inputs.query.clone();
        let (ucq, u) = self.wrapped_unfolding(&q);
        let rules: Vec<&UnfoldedRule> = u
            .rules
            .iter()
            .filter(|r| {
                t.fragments
                    .iter()
                    .zip(sigs)
                    .all(|(f, sig)| rule_sig(r, &f.query.head) == *sig)
            })
            .collect();
        let wrapped = self.inputs.wrapped;
        Ok(estimate_rules(&mut self.ctx, &ucq, wrapped, &rules)?.total)
    }

    /// A union of joins: the sum of its joins, plus duplicate removal when
    /// the query projects out variables.
    pub fn cost_ujucq(&mut self, t: &JucqTranslation) -> Result<CostEstimate> {
        let mut total = CostQuantities::default();
        for i in 0..t.query.rules.len() {
            total.add(&self.jucq_quantities(t, i)?);
        }
        if t.query.projected && !t.query.rules.is_empty() {
            total.dedup += sort_work(self.query_card()?);
        }
        Ok(CostEstimate::from_quantities(total, &self.consts))
    }
}

/// One calibration observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub quantities: CostQuantities,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub constants: CostConstants,
    /// Set when the defaults were returned instead of a fit.
    pub fallback: Option<String>,
    pub residual: f64,
}

/// Minimum number of samples for a fit.
pub const MIN_SAMPLES: usize = 8;

/// Nonnegative least-squares fit of the constants, solved exactly by trying
/// every support set of the four unknowns.
pub fn calibrate(samples: &[CalibrationSample]) -> Calibration {
    let defaults = |reason: &str| Calibration {
        constants: CostConstants::default(),
        fallback: Some(reason.to_string()),
        residual: f64::NAN,
    };
    if samples.len() < MIN_SAMPLES {
        return defaults("fewer than 8 samples");
    }
    let rows = samples.len();
    let a = DMatrix::from_fn(rows, 4, |i, j| samples[i].quantities.features()[j]);
    let b = DVector::from_iterator(rows, samples.iter().map(|s| s.observed));
    if b.iter().all(|&x| x == 0.0) {
        return Calibration {
            constants: CostConstants {
                c_t: 0.0,
                c_j: 0.0,
                c_u: 0.0,
                c_m: 0.0,
            },
            fallback: None,
            residual: 0.0,
        };
    }
    let mut best: Option<(f64, [f64; 4])> = None;
    for mask in 1u32..16 {
        let cols: Vec<usize> = (0..4).filter(|j| mask >> j & 1 == 1).collect();
        let sub = DMatrix::from_fn(rows, cols.len(), |i, k| a[(i, cols[k])]);
        let svd = sub.clone().svd(true, true);
        if svd.rank(1e-9 * svd.singular_values.max().max(1.0)) < cols.len() {
            continue;
        }
        let Ok(x) = svd.solve(&b, 1e-12) else {
            continue;
        };
        if x.iter().any(|&v| v < 0.0) {
            continue;
        }
        let residual = (&sub * &x - &b).norm_squared();
        let mut full = [0.0; 4];
        for (k, &j) in cols.iter().enumerate() {
            full[j] = x[k];
        }
        if best.is_none_or(|(r, _)| residual < r) {
            best = Some((residual, full));
        }
    }
    match best {
        Some((residual, x)) => Calibration {
            constants: CostConstants {
                c_t: x[0],
                c_j: x[1],
                c_u: x[2],
                c_m: x[3],
            },
            fallback: None,
            residual,
        },
        None => defaults("degenerate design matrix"),
    }
}

/// Flat CSV form of a calibration sample.
#[derive(Deserialize)]
struct SampleRecord {
    scan: f64,
    hash_join: f64,
    dedup: f64,
    materialize: f64,
    merge_join: f64,
    observed: f64,
}

/// Reads samples from CSV with the header
/// `scan,hash_join,dedup,materialize,merge_join,observed`.
pub fn read_samples<R: std::io::Read>(input: R) -> Result<Vec<CalibrationSample>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        let r: SampleRecord = rec?;
        out.push(CalibrationSample {
            quantities: CostQuantities {
                scan: r.scan,
                hash_join: r.hash_join,
                dedup: r.dedup,
                materialize: r.materialize,
                merge_join: r.merge_join,
            },
            observed: r.observed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_table_join_cost() {
        let c = CostConstants {
            c_t: 1.0,
            c_j: 1.0,
            c_u: 1.0,
            c_m: 1.0,
        };
        let e = CostEstimate::from_quantities(cq_quantities(&[5, 10], 3), &c);
        assert_eq!(e.total, 21.0);
        assert_eq!(e.breakdown.scan, 15.0);
        assert_eq!(e.breakdown.hash_join, 6.0);
        assert_eq!(CostEstimate::from_quantities(cq_quantities(&[0], 0), &c).total, 0.0);
    }

    #[test]
    fn sort_term() {
        assert_eq!(sort_work(0), 0.0);
        assert_eq!(sort_work(1), 0.0);
        assert_eq!(sort_work(8), 24.0);
    }

    fn synthetic(truth: &CostConstants, n: usize, seed: u64) -> Vec<CalibrationSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let q = CostQuantities {
                    scan: rng.gen_range(100.0..10_000.0),
                    hash_join: rng.gen_range(100.0..10_000.0),
                    dedup: rng.gen_range(0.0..50_000.0),
                    materialize: rng.gen_range(0.0..5_000.0),
                    merge_join: 0.0,
                };
                let observed = CostEstimate::from_quantities(q, truth).total;
                CalibrationSample { quantities: q, observed }
            })
            .collect()
    }

    #[test]
    fn calibration_recovers_constants() {
        let truth = CostConstants {
            c_t: 0.3,
            c_j: 1.7,
            c_u: 0.05,
            c_m: 0.9,
        };
        let fit = calibrate(&synthetic(&truth, 40, 7));
        assert!(fit.fallback.is_none());
        let c = fit.constants;
        for (got, want) in [(c.c_t, truth.c_t), (c.c_j, truth.c_j), (c.c_u, truth.c_u), (c.c_m, truth.c_m)] {
            assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn calibration_fallbacks() {
        let few = synthetic(&CostConstants::default(), 5, 1);
        assert_eq!(calibrate(&few).constants, CostConstants::default());
        let zeros: Vec<CalibrationSample> = synthetic(&CostConstants::default(), 10, 2)
            .into_iter()
            .map(|s| CalibrationSample { observed: 0.0, ..s })
            .collect();
        let fit = calibrate(&zeros);
        assert_eq!(fit.constants.c_t, 0.0);
        assert_eq!(fit.constants.c_m, 0.0);
        let flat: Vec<CalibrationSample> = (0..10)
            .map(|_| CalibrationSample {
                quantities: CostQuantities::default(),
                observed: 1.0,
            })
            .collect();
        assert!(calibrate(&flat).fallback.is_some());
    }

    #[test]
    fn samples_from_csv() {
        let text = "scan,hash_join,dedup,materialize,merge_join,observed\n1,2,3,4,5,6.5\n";
        let s = read_samples(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].quantities.features(), [1.0, 7.0, 3.0, 4.0]);
        assert_eq!(s[0].observed, 6.5);
        assert!(read_samples("scan\nx\n".as_bytes()).is_err());
    }
}
