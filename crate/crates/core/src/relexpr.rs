//! Aliased select-project-join expressions over source views.
//!
//! The estimator works on [`Chain`]s: left-deep join sequences where each
//! join has one equality (the spanning-tree edge) and any remaining
//! equalities are kept aside.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Cq, Term, Value, Var};
use crate::mapping::{CmpOp, MappingSet};
use crate::stats::{term_attrs, AttrKey};
use crate::unfold::UnfoldedRule;

/// The `occurrence`-th (1-based) use of a relation in an expression,
/// written `V#i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alias {
    pub relation: String,
    pub occurrence: usize,
}

impl Alias {
    pub fn new(relation: &str, occurrence: usize) -> Self {
        Alias {
            relation: relation.to_string(),
            occurrence,
        }
    }

    /// Parses `V#i`; a bare `V` is its first occurrence.
    pub fn parse(text: &str) -> Result<Self> {
        match text.split_once('#') {
            None => Ok(Alias::new(text, 1)),
            Some((rel, n)) => {
                let occurrence = n
                    .parse()
                    .ok()
                    .filter(|&n: &usize| n >= 1)
                    .ok_or_else(|| Error::UnknownAttribute(text.to_string()))?;
                Ok(Alias::new(rel, occurrence))
            }
        }
    }
}

impl fmt::Display for Alias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.relation, self.occurrence)
    }
}

/// An attribute tuple of an alias, such as `T1#1.a` or `V#2.(a,b)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QualAttrs {
    pub alias: Alias,
    pub attrs: Vec<String>,
}

impl QualAttrs {
    pub fn new(alias: Alias, attrs: &[&str]) -> Self {
        QualAttrs {
            alias,
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `V#i.a` or `V#i.(a,b)`.
    pub fn parse(text: &str) -> Result<Self> {
        let (alias, attrs) = text
            .rsplit_once('.')
            .ok_or_else(|| Error::UnknownAttribute(text.to_string()))?;
        let attrs = attrs.trim_start_matches('(').trim_end_matches(')');
        Ok(QualAttrs {
            alias: Alias::parse(alias)?,
            attrs: attrs.split(',').map(|s| s.trim().to_string()).collect(),
        })
    }

    /// Statistics key of the underlying relation projection.
    pub fn key(&self) -> AttrKey {
        AttrKey {
            relation: self.alias.relation.clone(),
            attrs: self.attrs.clone(),
        }
    }
}

impl fmt::Display for QualAttrs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.attrs.len() == 1 {
            write!(f, "{}.{}", self.alias, self.attrs[0])
        } else {
            write!(f, "{}.({})", self.alias, self.attrs.join(","))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JoinCond {
    pub left: QualAttrs,
    pub right: QualAttrs,
}

impl JoinCond {
    pub fn new(left: QualAttrs, right: QualAttrs) -> Self {
        JoinCond { left, right }
    }

    fn flipped(&self) -> JoinCond {
        JoinCond {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

impl fmt::Display for JoinCond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.left, self.right)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjItem {
    pub attrs: QualAttrs,
    pub template: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColFilter {
    pub attr: QualAttrs,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationalExpr {
    Scan(Alias),
    Join {
        left: Box<RelationalExpr>,
        right: Box<RelationalExpr>,
        on: Vec<JoinCond>,
    },
    Project {
        input: Box<RelationalExpr>,
        items: Vec<ProjItem>,
    },
    Filter {
        input: Box<RelationalExpr>,
        preds: Vec<ColFilter>,
    },
    Union(Vec<RelationalExpr>),
}

impl RelationalExpr {
    pub fn scan(relation: &str, occurrence: usize) -> Self {
        RelationalExpr::Scan(Alias::new(relation, occurrence))
    }

    pub fn join(self, right: RelationalExpr, on: Vec<JoinCond>) -> Self {
        RelationalExpr::Join {
            left: Box::new(self),
            right: Box::new(right),
            on,
        }
    }

    /// Aliases in left-to-right order.
    pub fn aliases(&self) -> Vec<Alias> {
        let mut out = Vec::new();
        self.collect_aliases(&mut out);
        out
    }

    fn collect_aliases(&self, out: &mut Vec<Alias>) {
        match self {
            RelationalExpr::Scan(a) => out.push(a.clone()),
            RelationalExpr::Join { left, right, .. } => {
                left.collect_aliases(out);
                right.collect_aliases(out);
            }
            RelationalExpr::Project { input, .. } | RelationalExpr::Filter { input, .. } => input.collect_aliases(out),
            RelationalExpr::Union(children) => children.iter().for_each(|c| c.collect_aliases(out)),
        }
    }

    /// Left-deep, one equality per join, each relating the new alias to one
    /// earlier alias.
    pub fn is_basic(&self) -> bool {
        match self {
            RelationalExpr::Scan(_) => true,
            RelationalExpr::Join { left, right, on } => {
                let RelationalExpr::Scan(new) = right.as_ref() else {
                    return false;
                };
                let prior = left.aliases();
                on.len() == 1
                    && left.is_basic()
                    && !prior.contains(new)
                    && ((on[0].right.alias == *new && prior.contains(&on[0].left.alias))
                        || (on[0].left.alias == *new && prior.contains(&on[0].right.alias)))
            }
            _ => false,
        }
    }

    /// Every qualified attribute must name a column of its relation.
    pub fn check_attributes(&self, schema: &MappingSet) -> Result<()> {
        let aliases = self.aliases();
        let check = |q: &QualAttrs| -> Result<()> {
            if !aliases.contains(&q.alias) {
                return Err(Error::UnknownAttribute(q.to_string()));
            }
            let cols = schema.columns(&q.alias.relation)?;
            for a in &q.attrs {
                if !cols.contains(a) {
                    return Err(Error::UnknownAttribute(q.to_string()));
                }
            }
            Ok(())
        };
        match self {
            RelationalExpr::Scan(_) => Ok(()),
            RelationalExpr::Join { left, right, on } => {
                left.check_attributes(schema)?;
                right.check_attributes(schema)?;
                on.iter().try_for_each(|c| check(&c.left).and(check(&c.right)))
            }
            RelationalExpr::Project { input, items } => {
                input.check_attributes(schema)?;
                items.iter().try_for_each(|i| check(&i.attrs))
            }
            RelationalExpr::Filter { input, preds } => {
                input.check_attributes(schema)?;
                preds.iter().try_for_each(|p| check(&p.attr))
            }
            RelationalExpr::Union(children) => children.iter().try_for_each(|c| c.check_attributes(schema)),
        }
    }
}

impl fmt::Display for RelationalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationalExpr::Scan(a) => write!(f, "{a}"),
            RelationalExpr::Join { left, right, on } => {
                let conds: Vec<String> = on.iter().map(|c| c.to_string()).collect();
                write!(f, "({left} ⋈[{}] {right})", conds.join(" ∧ "))
            }
            RelationalExpr::Project { input, items } => {
                let items: Vec<String> = items
                    .iter()
                    .map(|i| match &i.template {
                        Some(t) => format!("{t}({})", i.attrs),
                        None => i.attrs.to_string(),
                    })
                    .collect();
                write!(f, "π[{}]({input})", items.join(", "))
            }
            RelationalExpr::Filter { input, preds } => {
                let preds: Vec<String> = preds
                    .iter()
                    .map(|p| format!("{} {} {}", p.attr, p.op.symbol(), p.value))
                    .collect();
                write!(f, "σ[{}]({input})", preds.join(" ∧ "))
            }
            RelationalExpr::Union(children) => {
                let parts: Vec<String> = children.iter().map(|c| c.to_string()).collect();
                write!(f, "({})", parts.join(" ∪ "))
            }
        }
    }
}

/// A basic join chain plus leftover equalities and an optional projection.
///
/// `joins[k]` adds `aliases[k + 1]`: its left side belongs to an earlier
/// alias and its right side to the new one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    pub aliases: Vec<Alias>,
    pub joins: Vec<JoinCond>,
    pub extra: Vec<JoinCond>,
    pub projection: Option<Vec<QualAttrs>>,
}

impl Chain {
    /// Normalizes a join tree. Aliases are visited in first-occurrence
    /// order; each next alias is the earliest one connected to those already
    /// placed, joined by the first condition linking them. All other
    /// conditions become leftovers.
    pub fn from_expr(e: &RelationalExpr) -> Result<Chain> {
        let (inner, projection) = match e {
            RelationalExpr::Project { input, items } => (input.as_ref(), Some(items.iter().map(|i| i.attrs.clone()).collect())),
            other => (other, None),
        };
        let mut aliases = Vec::new();
        let mut conds = Vec::new();
        flatten(inner, &mut aliases, &mut conds)?;
        let mut chain = Chain::from_parts(aliases, conds)?;
        chain.projection = projection;
        Ok(chain)
    }

    pub fn from_parts(aliases: Vec<Alias>, conds: Vec<JoinCond>) -> Result<Chain> {
        if aliases.is_empty() {
            return Err(Error::NotBasic("no relations".into()));
        }
        for (i, a) in aliases.iter().enumerate() {
            if aliases[..i].contains(a) {
                return Err(Error::NotBasic(format!("alias {a} occurs twice")));
            }
        }
        for c in &conds {
            for side in [&c.left, &c.right] {
                if !aliases.contains(&side.alias) {
                    return Err(Error::UnknownAttribute(side.to_string()));
                }
            }
        }
        let mut placed = vec![aliases[0].clone()];
        let mut used = vec![false; conds.len()];
        let mut joins = Vec::new();
        let mut remaining: Vec<Alias> = aliases[1..].to_vec();
        while !remaining.is_empty() {
            let mut found = None;
            'outer: for (ri, cand) in remaining.iter().enumerate() {
                for (ci, c) in conds.iter().enumerate() {
                    if used[ci] {
                        continue;
                    }
                    if c.right.alias == *cand && placed.contains(&c.left.alias) {
                        found = Some((ri, ci, c.clone()));
                        break 'outer;
                    }
                    if c.left.alias == *cand && placed.contains(&c.right.alias) {
                        found = Some((ri, ci, c.flipped()));
                        break 'outer;
                    }
                }
            }
            let (ri, ci, edge) = found.ok_or(Error::DisconnectedJoin)?;
            used[ci] = true;
            placed.push(remaining.remove(ri));
            joins.push(edge);
        }
        let extra = conds
            .into_iter()
            .zip(used)
            .filter(|(c, u)| !u && c.left != c.right)
            .map(|(c, _)| c)
            .collect();
        Ok(Chain {
            aliases: placed,
            joins,
            extra,
            projection: None,
        })
    }

    /// The basic expression `E^(n)`: the first `n + 1` aliases.
    pub fn prefix_expr(&self, n: usize) -> RelationalExpr {
        let mut e = RelationalExpr::Scan(self.aliases[0].clone());
        for k in 0..n {
            e = e.join(RelationalExpr::Scan(self.aliases[k + 1].clone()), vec![self.joins[k].clone()]);
        }
        e
    }

    pub fn to_expr(&self) -> RelationalExpr {
        let mut e = RelationalExpr::Scan(self.aliases[0].clone());
        for k in 0..self.joins.len() {
            let new = &self.aliases[k + 1];
            let mut on = vec![self.joins[k].clone()];
            for c in &self.extra {
                let pos = |a: &Alias| self.aliases.iter().position(|x| x == a).unwrap_or(usize::MAX);
                if pos(&c.left.alias).max(pos(&c.right.alias)) == k + 1 {
                    on.push(c.clone());
                }
            }
            e = e.join(RelationalExpr::Scan(new.clone()), on);
        }
        match &self.projection {
            Some(attrs) => RelationalExpr::Project {
                input: Box::new(e),
                items: attrs
                    .iter()
                    .map(|a| ProjItem {
                        attrs: a.clone(),
                        template: None,
                    })
                    .collect(),
            },
            None => e,
        }
    }
}

fn flatten(e: &RelationalExpr, aliases: &mut Vec<Alias>, conds: &mut Vec<JoinCond>) -> Result<()> {
    match e {
        RelationalExpr::Scan(a) => {
            aliases.push(a.clone());
            Ok(())
        }
        RelationalExpr::Join { left, right, on } => {
            flatten(left, aliases, conds)?;
            flatten(right, aliases, conds)?;
            conds.extend(on.iter().cloned());
            Ok(())
        }
        RelationalExpr::Project { .. } => Err(Error::NotBasic("projection below a join".into())),
        RelationalExpr::Filter { .. } => Err(Error::Unsupported("selections in estimated expressions".into())),
        RelationalExpr::Union(_) => Err(Error::NotBasic("union inside a join".into())),
    }
}

/// The join expression of an unfolded rule: one alias per body atom, and an
/// equality between the template-argument columns of every pair of atoms
/// sharing a query variable (first occurrence against each later one). The
/// projection onto answer variables is added when the query has existential
/// variables.
pub fn rule_expr(q: &Cq, m: &MappingSet, rule: &UnfoldedRule) -> Result<RelationalExpr> {
    if rule.choice.len() != q.body.len() {
        return Err(Error::IllFormed("rule does not match the query body".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut aliases = Vec::new();
    for &c in &rule.choice {
        let a = m
            .assertions
            .get(c)
            .ok_or_else(|| Error::IllFormed(format!("no mapping assertion {c}")))?;
        let n = counts.entry(a.source.pred.as_str()).or_insert(0);
        *n += 1;
        aliases.push(Alias::new(&a.source.pred, *n));
    }

    // Occurrences of each query variable as template-argument columns.
    let mut occ: BTreeMap<Var, Vec<(usize, QualAttrs)>> = BTreeMap::new();
    let mut order: Vec<Var> = Vec::new();
    for (i, atom) in q.body.iter().enumerate() {
        let mapping = &m.assertions[rule.choice[i]];
        for (p, t) in atom.args.iter().enumerate() {
            let Term::Var(v) = t else {
                return Err(Error::Unsupported(format!("constant `{t}` in an estimated query")));
            };
            let attrs = term_attrs(m, &mapping.source, &mapping.target.args[p])?;
            let qa = QualAttrs {
                alias: aliases[i].clone(),
                attrs,
            };
            let entry = occ.entry(v.clone()).or_default();
            if entry.is_empty() {
                order.push(v.clone());
            }
            if !entry.iter().any(|(_, x)| *x == qa) {
                entry.push((i, qa));
            }
        }
    }

    let mut per_atom: Vec<Vec<JoinCond>> = vec![Vec::new(); q.body.len()];
    for v in &order {
        let list = &occ[v];
        let (first_atom, first) = &list[0];
        for (atom, qa) in &list[1..] {
            if atom != first_atom {
                per_atom[*atom].push(JoinCond::new(first.clone(), qa.clone()));
            }
        }
    }
    let mut e = RelationalExpr::Scan(aliases[0].clone());
    for i in 1..q.body.len() {
        e = e.join(RelationalExpr::Scan(aliases[i].clone()), std::mem::take(&mut per_atom[i]));
    }
    if q.existential_vars().is_empty() {
        return Ok(e);
    }
    let items = q
        .answer_vars()
        .iter()
        .map(|v| ProjItem {
            attrs: occ[v][0].1.clone(),
            template: rule.binding(v).and_then(|t| t.template().map(str::to_string)),
        })
        .collect();
    Ok(RelationalExpr::Project {
        input: Box::new(e),
        items,
    })
}
