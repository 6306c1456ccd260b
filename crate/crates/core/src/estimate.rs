//! Cardinality estimation over basic join chains and unfoldings.
//!
//! Every division is an exact integer ceiling. A zero denominator with a
//! zero numerator yields 0; a positive numerator over 0 is an error.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Cq, Ucq, Var};
use crate::mapping::MappingSet;
use crate::relexpr::{rule_expr, Chain, QualAttrs, RelationalExpr};
use crate::stats::{AttrKey, StatsCatalog};
use crate::unfold::UnfoldedRule;

/// Default maximum number of branches for the inclusion-exclusion bound.
pub const UNION_LIMIT: usize = 8;

fn ceil_div(num: u128, den: u128, context: &str) -> Result<u128> {
    if den == 0 {
        if num == 0 {
            return Ok(0);
        }
        return Err(Error::ZeroDenominator {
            numerator: num,
            context: context.to_string(),
        });
    }
    Ok(num.div_ceil(den))
}

fn to_u64(x: u128) -> u64 {
    u64::try_from(x).unwrap_or(u64::MAX)
}

/// Attribute tuples made equal by the join conditions of an expression.
pub type AttributeClass = BTreeSet<QualAttrs>;

fn closure(conds: &[crate::relexpr::JoinCond], q: &QualAttrs) -> AttributeClass {
    let mut class = AttributeClass::from([q.clone()]);
    loop {
        let before = class.len();
        for c in conds {
            if class.contains(&c.left) {
                class.insert(c.right.clone());
            }
            if class.contains(&c.right) {
                class.insert(c.left.clone());
            }
        }
        if class.len() == before {
            return class;
        }
    }
}

fn basic_chain(e: &RelationalExpr) -> Result<Chain> {
    if !e.is_basic() {
        return Err(Error::NotBasic(e.to_string()));
    }
    Chain::from_expr(e)
}

fn check_occurs(chain: &Chain, n: usize, q: &QualAttrs) -> Result<()> {
    if chain.aliases[..=n].contains(&q.alias) {
        Ok(())
    } else {
        Err(Error::UnknownAttribute(q.to_string()))
    }
}

/// Statistics plus per-run memoization of `card`, `fv` and `dist`.
pub struct EstimationContext<'s> {
    pub stats: &'s StatsCatalog,
    memo: HashMap<String, u64>,
}

impl<'s> EstimationContext<'s> {
    pub fn new(stats: &'s StatsCatalog) -> Self {
        EstimationContext {
            stats,
            memo: HashMap::new(),
        }
    }

    fn rel_card(&self, relation: &str) -> Result<u64> {
        self.stats
            .lookup_view_card(relation)
            .or_else(|_| self.stats.lookup_table_card(relation))
    }

    fn s2(&self, q: &QualAttrs) -> Result<u64> {
        self.stats.lookup_dist(&q.key())
    }

    fn s3(&self, a: &QualAttrs, b: &QualAttrs) -> Result<u64> {
        self.stats.lookup_facing(&a.key(), &b.key())
    }

    /// Equivalent attributes of `q` in `e`.
    pub fn jc(&self, e: &RelationalExpr, q: &QualAttrs) -> Result<AttributeClass> {
        let chain = Chain::from_expr(e)?;
        check_occurs(&chain, chain.joins.len(), q)?;
        let mut conds = chain.joins.clone();
        conds.extend(chain.extra.iter().cloned());
        Ok(closure(&conds, q))
    }

    /// The longest prefix of `e` whose last join adds an attribute
    /// equivalent to `q`.
    pub fn jp(&self, e: &RelationalExpr, q: &QualAttrs) -> Result<Option<RelationalExpr>> {
        let chain = basic_chain(e)?;
        let n = chain.joins.len();
        check_occurs(&chain, n, q)?;
        Ok(jp_index(&chain, n, q).map(|k| chain.prefix_expr(k)))
    }

    /// Estimated number of distinct tuples of `e`. Leftover join conditions
    /// and a top-level projection are handled by [`Self::extend_joins`] and
    /// [`Self::estimate_projection`].
    pub fn card(&mut self, e: &RelationalExpr) -> Result<u64> {
        let chain = Chain::from_expr(e)?;
        match &chain.projection {
            Some(attrs) => {
                let attrs = attrs.clone();
                self.projection_of(&chain, &attrs)
            }
            None => self.extended(&chain),
        }
    }

    pub fn dist(&mut self, e: &RelationalExpr, q: &QualAttrs) -> Result<u64> {
        let chain = basic_chain(e)?;
        let n = chain.joins.len();
        check_occurs(&chain, n, q)?;
        self.dist_at(&chain, n, q)
    }

    /// Facing values of the last join of `e`.
    pub fn fv(&mut self, e: &RelationalExpr) -> Result<u64> {
        let chain = basic_chain(e)?;
        if chain.joins.is_empty() {
            return Err(Error::NotBasic("facing values of a single relation".into()));
        }
        self.fv_at(&chain, chain.joins.len())
    }

    /// Cardinality of a join with arbitrary equality conditions.
    pub fn extend_joins(&mut self, e: &RelationalExpr) -> Result<u64> {
        let chain = Chain::from_expr(e)?;
        self.extended(&chain)
    }

    pub fn estimate_projection(&mut self, e: &RelationalExpr, attrs: &[QualAttrs]) -> Result<u64> {
        let mut chain = Chain::from_expr(e)?;
        chain.projection = None;
        self.projection_of(&chain, attrs)
    }

    fn projection_of(&mut self, chain: &Chain, attrs: &[QualAttrs]) -> Result<u64> {
        let n = chain.joins.len();
        let card = self.extended(chain)?;
        let mut prod: u128 = 1;
        for a in attrs {
            check_occurs(chain, n, a)?;
            prod = prod.saturating_mul(self.dist_at(chain, n, a)? as u128);
        }
        Ok(card.min(to_u64(prod)))
    }

    fn extended(&mut self, chain: &Chain) -> Result<u64> {
        let card = self.card_at(chain, chain.joins.len())? as u128;
        if chain.extra.is_empty() {
            return Ok(card as u64);
        }
        let (mut num, mut den) = (card, 1u128);
        let mut overflow = false;
        for c in &chain.extra {
            let fv = self.s3(&c.left, &c.right)? as u128;
            let d = self.s2(&c.left)? as u128;
            match (num.checked_mul(fv), den.checked_mul(d)) {
                (Some(a), Some(b)) if !overflow => {
                    num = a;
                    den = b;
                }
                _ => overflow = true,
            }
        }
        if overflow {
            let mut x = card as f64;
            for c in &chain.extra {
                let d = self.s2(&c.left)?;
                if d == 0 {
                    return Ok(0);
                }
                x *= self.s3(&c.left, &c.right)? as f64 / d as f64;
            }
            return Ok(x.ceil() as u64);
        }
        Ok(to_u64(ceil_div(num, den, "leftover join condition")?))
    }

    fn key(chain: &Chain, n: usize) -> String {
        let mut k = chain.aliases[0].to_string();
        for j in &chain.joins[..n] {
            k.push_str(&format!("|{j}"));
        }
        k
    }

    fn card_at(&mut self, chain: &Chain, n: usize) -> Result<u64> {
        if n == 0 {
            return self.rel_card(&chain.aliases[0].relation);
        }
        let key = format!("card {}", Self::key(chain, n));
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let cond = chain.joins[n - 1].clone();
        let fv = self.fv_at(chain, n)? as u128;
        let prev = self.card_at(chain, n - 1)? as u128;
        let w = self.rel_card(&cond.right.alias.relation)? as u128;
        let dl = self.dist_at(chain, n - 1, &cond.left)? as u128;
        let dr = self.s2(&cond.right)? as u128;
        let v = to_u64(ceil_div(fv * prev * w, dl * dr, &format!("card at {cond}"))?);
        self.memo.insert(key, v);
        Ok(v)
    }

    fn fv_at(&mut self, chain: &Chain, n: usize) -> Result<u64> {
        let cond = chain.joins[n - 1].clone();
        let s3 = self.s3(&cond.left, &cond.right)?;
        if n == 1 {
            return Ok(s3);
        }
        let key = format!("fv {}", Self::key(chain, n));
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let d = self.dist_at(chain, n - 1, &cond.left)? as u128;
        let s2 = self.s2(&cond.left)? as u128;
        let v = to_u64(ceil_div(s3 as u128 * d, s2, &format!("fv at {cond}"))?);
        self.memo.insert(key, v);
        Ok(v)
    }

    fn dist_at(&mut self, chain: &Chain, n: usize, q: &QualAttrs) -> Result<u64> {
        let s2 = self.s2(q)?;
        if n == 0 {
            return Ok(s2);
        }
        let key = format!("dist {} @ {q}", Self::key(chain, n));
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let card = self.card_at(chain, n)? as u128;
        let v = match jp_index(chain, n, q) {
            Some(k) => {
                let fv = self.fv_at(chain, k)?;
                let ck = self.card_at(chain, k)? as u128;
                if ck == 0 {
                    0
                } else {
                    to_u64(ceil_div(fv as u128 * card, ck, "dist over a join prefix")?).min(fv)
                }
            }
            None => {
                let rel = self.rel_card(&q.alias.relation)? as u128;
                to_u64(ceil_div(s2 as u128 * card, rel, &format!("dist of {q}"))?).min(s2)
            }
        };
        self.memo.insert(key, v);
        Ok(v)
    }
}

/// Number of joins of the longest prefix of `chain[..=n]` whose last join
/// adds an attribute equivalent to `q`. One-join prefixes qualify.
fn jp_index(chain: &Chain, n: usize, q: &QualAttrs) -> Option<usize> {
    let class = closure(&chain.joins[..n], q);
    (1..=n).rev().find(|&k| class.contains(&chain.joins[k - 1].right))
}

/// Classical estimate: facing values taken as the smaller distinct count,
/// distinct counts of intermediate results capped by their cardinality.
pub fn estimate_std(stats: &StatsCatalog, e: &RelationalExpr) -> Result<u64> {
    let ctx = EstimationContext::new(stats);
    let chain = Chain::from_expr(e)?;
    let dist = |q: &QualAttrs, card: u64| -> Result<u64> { Ok(ctx.s2(q)?.min(card)) };
    let mut card = ctx.rel_card(&chain.aliases[0].relation)?;
    for j in &chain.joins {
        let dl = dist(&j.left, card)? as u128;
        let dr = ctx.s2(&j.right)? as u128;
        let w = ctx.rel_card(&j.right.alias.relation)? as u128;
        card = to_u64(ceil_div(dl.min(dr) * card as u128 * w, dl * dr, "standard estimate")?);
    }
    for j in &chain.extra {
        let m = ctx.s2(&j.left)?.max(ctx.s2(&j.right)?) as u128;
        card = to_u64(ceil_div(card as u128, m, "standard estimate")?);
    }
    if let Some(attrs) = &chain.projection {
        let mut prod: u128 = 1;
        for a in attrs {
            prod = prod.saturating_mul(dist(a, card)? as u128);
        }
        card = card.min(to_u64(prod));
    }
    Ok(card)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnionBound {
    pub value: u64,
    /// Set when the branch count exceeded the limit and the largest branch
    /// was returned instead.
    pub fallback: bool,
}

/// Size of a union of sets from their sizes and pairwise intersections,
/// taking every larger intersection as the minimum of the pairwise ones it
/// contains. `pairwise[i][j]` is read for `i < j`.
pub fn union_lower_bound(distincts: &[u64], pairwise: &[Vec<u64>], limit: usize) -> UnionBound {
    let n = distincts.len();
    let max = distincts.iter().copied().max().unwrap_or(0);
    let sum: u128 = distincts.iter().map(|&d| d as u128).sum();
    if n > limit || n >= 64 {
        return UnionBound {
            value: max,
            fallback: true,
        };
    }
    let mut total: i128 = 0;
    for mask in 1u64..(1u64 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let x = if members.len() == 1 {
            distincts[members[0]]
        } else {
            let mut m = u64::MAX;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    m = m.min(pairwise[i][j]);
                }
            }
            m
        };
        if members.len() % 2 == 1 {
            total += x as i128;
        } else {
            total -= x as i128;
        }
    }
    let value = total.clamp(max as i128, sum as i128) as u64;
    UnionBound {
        value,
        fallback: false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// Rules with equal head templates were combined with the distinct-value
    /// ratio; this generalizes the single shape worked out by hand.
    GeneralizedRatio { group: usize },
    /// A group of rules with equal head templates lacked the shared view or
    /// the single linking variable the ratio needs; its rules were summed.
    SummedOverlap { group: usize, reason: String },
    /// Too many distinct branches for inclusion-exclusion.
    UnionLimit { group: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub rules: Vec<usize>,
    pub sum: u64,
    pub estimate: u64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfoldingEstimate {
    pub total: u64,
    pub per_rule: Vec<u64>,
    pub groups: Vec<GroupEstimate>,
    pub flags: Vec<EstimateFlag>,
}

/// Estimated answer count of an unfolding of `q` over the (wrapped) mapping
/// set `m`.
pub fn estimate_unfolding(
    ctx: &mut EstimationContext,
    q: &Ucq,
    m: &MappingSet,
    rules: &[UnfoldedRule],
) -> Result<UnfoldingEstimate> {
    let refs: Vec<&UnfoldedRule> = rules.iter().collect();
    estimate_rules(ctx, q, m, &refs)
}

/// As [`estimate_unfolding`], over a subset of an unfolding's rules.
pub fn estimate_rules(
    ctx: &mut EstimationContext,
    q: &Ucq,
    m: &MappingSet,
    rules: &[&UnfoldedRule],
) -> Result<UnfoldingEstimate> {
    let mut exprs = Vec::with_capacity(rules.len());
    let mut per_rule = Vec::with_capacity(rules.len());
    for r in rules {
        let cq = q
            .cqs
            .get(r.cq)
            .ok_or_else(|| Error::IllFormed(format!("rule refers to disjunct {}", r.cq)))?;
        let e = rule_expr(cq, m, r)?;
        per_rule.push(ctx.card(&e)?);
        exprs.push(e);
    }

    let mut by_row: BTreeMap<Vec<Option<String>>, Vec<usize>> = BTreeMap::new();
    for (i, r) in rules.iter().enumerate() {
        by_row.entry(r.templates()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_row.into_values().collect();
    groups.sort();

    let mut out = UnfoldingEstimate {
        total: 0,
        per_rule,
        groups: Vec::new(),
        flags: Vec::new(),
    };
    for (gi, members) in groups.into_iter().enumerate() {
        let sum: u64 = members.iter().map(|&i| out.per_rule[i]).sum();
        let mut g = GroupEstimate {
            rules: members.clone(),
            sum,
            estimate: sum,
            ratio: None,
        };
        if members.len() > 1 && sum > 0 {
            match overlap_ratio(ctx, q, m, rules, &exprs, &members)? {
                Ok((num, den, limited)) => {
                    out.flags.push(EstimateFlag::GeneralizedRatio { group: gi });
                    if limited {
                        out.flags.push(EstimateFlag::UnionLimit { group: gi });
                    }
                    g.estimate = to_u64(ceil_div(num as u128 * sum as u128, den as u128, "duplicate ratio")?);
                    g.ratio = Some(if den == 0 { 0.0 } else { num as f64 / den as f64 });
                }
                Err(reason) => out.flags.push(EstimateFlag::SummedOverlap { group: gi, reason }),
            }
        }
        out.total = out.total.saturating_add(g.estimate);
        out.groups.push(g);
    }
    Ok(out)
}

type Ratio = std::result::Result<(u64, u64, bool), String>;

/// Distinct values of the linking answer variable across the group, over
/// their sum. The inner `Err` explains why the group has to be summed.
fn overlap_ratio(
    ctx: &mut EstimationContext,
    q: &Ucq,
    m: &MappingSet,
    rules: &[&UnfoldedRule],
    exprs: &[RelationalExpr],
    members: &[usize],
) -> Result<Ratio> {
    let ci = rules[members[0]].cq;
    if members.iter().any(|&i| rules[i].cq != ci) {
        return Ok(Err("rules come from different disjuncts".into()));
    }
    let cq: &Cq = &q.cqs[ci];
    let answer: BTreeSet<Var> = cq.answer_vars().into_iter().collect();
    let shared: Vec<bool> = (0..cq.body.len())
        .map(|p| members.iter().all(|&i| rules[i].choice[p] == rules[members[0]].choice[p]))
        .collect();
    for (p, atom) in cq.body.iter().enumerate() {
        let all_answer = atom.var_list().iter().all(|v| answer.contains(v));
        if all_answer && !shared[p] {
            return Ok(Err(format!("atom {} is not shared", p + 1)));
        }
    }
    if !shared.iter().any(|&s| s) {
        return Ok(Err("no shared view".into()));
    }
    let mut exported: BTreeSet<Var> = BTreeSet::new();
    let mut first_atom: BTreeMap<Var, usize> = BTreeMap::new();
    for (p, atom) in cq.body.iter().enumerate() {
        if shared[p] {
            continue;
        }
        for v in atom.var_list() {
            if answer.contains(&v) {
                exported.insert(v.clone());
                first_atom.entry(v).or_insert(p);
            }
        }
    }
    if exported.len() != 1 {
        return Ok(Err(format!("{} linking answer variables", exported.len())));
    }
    let y = exported.into_iter().next().expect("one variable");
    let p = first_atom[&y];
    let pos = cq.body[p]
        .args
        .iter()
        .position(|t| t.as_var() == Some(&y))
        .expect("variable occurs in its atom");

    // One branch per rule: the linking column of its differing atom.
    let mut branches: BTreeMap<AttrKey, u64> = BTreeMap::new();
    let mut den: u64 = 0;
    for &i in members {
        let r = rules[i];
        let mapping = &m.assertions[r.choice[p]];
        let attrs = crate::stats::term_attrs(m, &mapping.source, &mapping.target.args[pos])?;
        let chain = Chain::from_expr(&exprs[i])?;
        let alias = chain
            .aliases
            .iter()
            .filter(|a| a.relation == mapping.source.pred)
            .nth(
                r.choice[..p]
                    .iter()
                    .filter(|&&c| m.assertions[c].source.pred == mapping.source.pred)
                    .count(),
            )
            .cloned()
            .ok_or_else(|| Error::UnknownAttribute(mapping.source.pred.clone()))?;
        let qa = QualAttrs { alias, attrs };
        let d = ctx.dist_at(&chain, chain.joins.len(), &qa)?;
        den += d;
        let slot = branches.entry(qa.key()).or_insert(0);
        *slot = (*slot).max(d);
    }
    let keys: Vec<AttrKey> = branches.keys().cloned().collect();
    let distincts: Vec<u64> = branches.values().copied().collect();
    let n = keys.len();
    let mut pairwise = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s3 = ctx.stats.lookup_facing(&keys[i], &keys[j])? as f64;
            let fi = scale(distincts[i], ctx.stats.lookup_dist(&keys[i])?);
            let fj = scale(distincts[j], ctx.stats.lookup_dist(&keys[j])?);
            let x = (s3 * fi * fj).ceil() as u64;
            pairwise[i][j] = x.min(distincts[i]).min(distincts[j]);
        }
    }
    let bound = union_lower_bound(&distincts, &pairwise, UNION_LIMIT);
    Ok(Ok((bound.value, den, bound.fallback)))
}

fn scale(d: u64, s2: u64) -> f64 {
    if s2 == 0 {
        0.0
    } else {
        d as f64 / s2 as f64
    }
}
