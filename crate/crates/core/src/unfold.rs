//! Unification and the UCQ / JUCQ unfoldings of queries over mappings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ir::{make_fragment_query, Atom, Cover, Cq, Term, Ucq, Var};
use crate::mapping::{split, wrap, MappingAssertion, MappingSet, Template, ViewBranch, ViewDef};

/// An idempotent substitution over non-nested terms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Substitution {
    map: BTreeMap<Var, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, v: &Var) -> Option<&Term> {
        self.map.get(v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Term)> {
        self.map.iter()
    }

    /// `None` when the result would nest function symbols.
    pub fn apply_term(&self, t: &Term) -> Option<Term> {
        match t {
            Term::Var(v) => Some(self.map.get(v).cloned().unwrap_or_else(|| t.clone())),
            Term::Const(_) => Some(t.clone()),
            Term::Func(s, args) => {
                let mut out = Vec::with_capacity(args.len());
                for a in args {
                    match self.apply_term(a)? {
                        Term::Func(..) => return None,
                        x => out.push(x),
                    }
                }
                Some(Term::Func(s.clone(), out))
            }
        }
    }

    pub fn apply_atom(&self, a: &Atom) -> Option<Atom> {
        let args = a.args.iter().map(|t| self.apply_term(t)).collect::<Option<Vec<_>>>()?;
        Some(Atom::new(a.pred.clone(), args))
    }

    fn bind(&mut self, v: Var, t: Term) -> bool {
        if t.vars().contains(&&v) {
            return false;
        }
        let single = Substitution {
            map: BTreeMap::from([(v.clone(), t.clone())]),
        };
        for s in self.map.values_mut() {
            match single.apply_term(s) {
                Some(x) => *s = x,
                None => return false,
            }
        }
        self.map.insert(v, t);
        true
    }

    /// Extends the substitution to unify `a` and `b`. When both sides are
    /// variables the right-hand one is bound. On failure the substitution is
    /// left in an unspecified state.
    pub fn unify_terms(&mut self, a: &Term, b: &Term) -> bool {
        let (Some(a), Some(b)) = (self.apply_term(a), self.apply_term(b)) else {
            return false;
        };
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x == y => true,
            (_, Term::Var(y)) => self.bind(y.clone(), a),
            (Term::Var(x), _) => self.bind(x.clone(), b),
            (Term::Const(c), Term::Const(d)) => c == d,
            (Term::Func(f, xs), Term::Func(g, ys)) => {
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify_terms(x, y))
            }
            _ => false,
        }
    }

    pub fn unify_atoms(&mut self, a: &Atom, b: &Atom) -> bool {
        a.pred == b.pred
            && a.args.len() == b.args.len()
            && a.args.iter().zip(&b.args).all(|(x, y)| self.unify_terms(x, y))
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, t)) in self.map.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v} -> {t}")?;
        }
        f.write_str("}")
    }
}

/// Most general unifier of all pairs, or `None` on a clash.
pub fn mgu(pairs: &[(Atom, Atom)]) -> Option<Substitution> {
    let mut s = Substitution::new();
    for (a, b) in pairs {
        if !s.unify_atoms(a, b) {
            return None;
        }
    }
    Some(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TranslationKind {
    /// Rules over source views: each rule is a CQ.
    Ucq,
    /// Rules over fragment views: each rule is a join of UCQs.
    Jucq,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfoldedRule {
    pub head: Vec<Term>,
    pub body: Vec<Atom>,
    /// Disjunct of the unfolded UCQ this rule comes from.
    pub cq: usize,
    /// Index of the mapping assertion chosen for each query atom.
    pub choice: Vec<usize>,
    /// Image of every query variable.
    pub bindings: Vec<(Var, Term)>,
}

impl UnfoldedRule {
    /// Function symbols of the head, `None` for plain positions.
    pub fn templates(&self) -> Vec<Option<String>> {
        self.head.iter().map(|t| t.template().map(str::to_string)).collect()
    }

    pub fn binding(&self, v: &Var) -> Option<&Term> {
        self.bindings.iter().find(|(x, _)| x == v).map(|(_, t)| t)
    }

    fn key(&self) -> Cq {
        Cq {
            name: String::new(),
            head: self.head.clone(),
            body: self.body.clone(),
        }
        .canonical()
    }
}

/// A Datalog program over views: the translation of a query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfoldedQuery {
    pub name: String,
    pub arity: usize,
    pub kind: TranslationKind,
    /// Whether some disjunct has existential variables, so that different
    /// rules may produce the same answer.
    pub projected: bool,
    pub rules: Vec<UnfoldedRule>,
    /// Views and tables the rule bodies refer to.
    pub schema: MappingSet,
}

impl UnfoldedQuery {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }
}

impl fmt::Display for UnfoldedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            let cq = Cq {
                name: self.name.clone(),
                head: r.head.clone(),
                body: r.body.clone(),
            };
            writeln!(f, "{cq}")?;
        }
        Ok(())
    }
}

/// `name` suffixed so that it avoids every name in `taken`.
fn fresh_var(name: &str, suffix: usize, taken: &BTreeSet<Var>) -> Var {
    let mut candidate = format!("{name}_{suffix}");
    while taken.contains(&Var(candidate.clone())) {
        candidate.push('_');
    }
    Var(candidate)
}

/// Copy of `m` with variables renamed apart from `taken`, using `suffix`.
fn rename_apart(m: &MappingAssertion, suffix: usize, taken: &BTreeSet<Var>) -> MappingAssertion {
    let ren: BTreeMap<Var, Var> = m
        .source
        .var_list()
        .into_iter()
        .map(|v| {
            let fresh = fresh_var(&v.0, suffix, taken);
            (v, fresh)
        })
        .collect();
    MappingAssertion {
        target: crate::ir::rename_atom(&m.target, &ren),
        source: crate::ir::rename_atom(&m.source, &ren),
    }
}

/// Unfolds every disjunct over `m`. Rules are kept in enumeration order
/// (disjunct, then mapping choice per atom) with α-duplicates removed.
pub fn unfold_ucq(q: &Ucq, m: &MappingSet) -> UnfoldedQuery {
    let mut by_pred: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in m.assertions.iter().enumerate() {
        by_pred.entry(a.target.pred.as_str()).or_default().push(i);
    }
    let mut rules = Vec::new();
    let mut seen = BTreeSet::new();
    for (ci, cq) in q.cqs.iter().enumerate() {
        let taken: BTreeSet<Var> = cq.var_order().into_iter().collect();
        let candidates: Vec<Vec<(usize, MappingAssertion)>> = cq
            .body
            .iter()
            .enumerate()
            .map(|(pos, atom)| {
                by_pred
                    .get(atom.pred.as_str())
                    .map(|ids| {
                        ids.iter()
                            .filter(|&&i| m.assertions[i].target.arity() == atom.arity())
                            .map(|&i| (i, rename_apart(&m.assertions[i], pos + 1, &taken)))
                            .collect()
                    })
                    .unwrap_or_default()
            })
            .collect();
        let mut choice = Vec::with_capacity(cq.body.len());
        search(cq, ci, &candidates, 0, Substitution::new(), &mut choice, &mut |rule| {
            if seen.insert(rule.key()) {
                rules.push(rule);
            }
        });
    }
    UnfoldedQuery {
        name: q.cqs[0].name.clone(),
        arity: q.arity(),
        kind: TranslationKind::Ucq,
        projected: q.cqs.iter().any(|c| !c.existential_vars().is_empty()),
        rules,
        schema: m.with_assertions(Vec::new()),
    }
}

fn search(
    cq: &Cq,
    ci: usize,
    candidates: &[Vec<(usize, MappingAssertion)>],
    pos: usize,
    sigma: Substitution,
    choice: &mut Vec<usize>,
    emit: &mut impl FnMut(UnfoldedRule),
) {
    if pos == cq.body.len() {
        if let Some(rule) = build_rule(cq, ci, candidates, &sigma, choice) {
            emit(rule);
        }
        return;
    }
    for (idx, m) in &candidates[pos] {
        let mut s = sigma.clone();
        if s.unify_atoms(&cq.body[pos], &m.target) {
            choice.push(*idx);
            search(cq, ci, candidates, pos + 1, s, choice, emit);
            choice.pop();
        }
    }
}

fn build_rule(
    cq: &Cq,
    ci: usize,
    candidates: &[Vec<(usize, MappingAssertion)>],
    sigma: &Substitution,
    choice: &[usize],
) -> Option<UnfoldedRule> {
    let head = cq.head.iter().map(|t| sigma.apply_term(t)).collect::<Option<Vec<_>>>()?;
    let mut body = Vec::with_capacity(choice.len());
    for (pos, idx) in choice.iter().enumerate() {
        let m = &candidates[pos].iter().find(|(i, _)| i == idx)?.1;
        let src = sigma.apply_atom(&m.source)?;
        // A source column cannot hold a constructed term.
        if src.args.iter().any(|t| matches!(t, Term::Func(..))) {
            return None;
        }
        body.push(src);
    }
    let bindings = cq
        .var_order()
        .into_iter()
        .map(|v| {
            let t = sigma.apply_term(&Term::Var(v.clone()))?;
            Some((v, t))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(UnfoldedRule {
        head,
        body,
        cq: ci,
        choice: choice.to_vec(),
        bindings,
    })
}

/// Rows of function symbols of the rule heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atm {
    pub rows: Vec<Vec<Option<String>>>,
}

impl Atm {
    pub fn rows_distinct(&self) -> bool {
        let set: BTreeSet<&Vec<Option<String>>> = self.rows.iter().collect();
        set.len() == self.rows.len()
    }
}

pub fn atm(u: &UnfoldedQuery) -> Atm {
    Atm {
        rows: u.rules.iter().map(|r| r.templates()).collect(),
    }
}

/// One fragment of a JUCQ translation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub query: Cq,
    /// Unfolding of the fragment query over the input mappings.
    pub unfolding: UnfoldedQuery,
    /// Fragment views of the translation, each with the indices of the
    /// fragment rules it unions.
    pub views: BTreeMap<String, Vec<usize>>,
}

/// A join-of-UCQs translation (Type 1) or union of such joins (Type 2).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JucqTranslation {
    pub cover: Cover,
    pub fragments: Vec<Fragment>,
    /// Rules over fragment views; body atom `i` refers to fragment `i`.
    pub query: UnfoldedQuery,
    /// Set when some fragment has no unfolding, making the translation empty.
    pub empty_fragment: bool,
}

impl JucqTranslation {
    /// Number of CQ branches across all fragment views.
    pub fn cq_branches(&self) -> usize {
        self.fragments.iter().map(|f| f.unfolding.len()).sum()
    }
}

struct Aux {
    fragments: Vec<Fragment>,
    query: Cq,
    maux: MappingSet,
    empty: bool,
}

fn auxiliary(q: &Cq, cover: &Cover, m: &MappingSet) -> Result<Aux> {
    cover.validate(q.body.len())?;
    let mut maux = m.with_assertions(Vec::new());
    let mut fragments = Vec::new();
    let mut body = Vec::new();
    let mut next = 1;
    for f in 0..cover.len() {
        let fq = make_fragment_query(q, f, cover)?;
        let unfolding = unfold_ucq(&fq.clone().into(), m);
        let (uname, k) = maux.fresh_name("U_", next);
        next = k + 1;
        let arity = fq.head.len();
        let columns: Vec<String> = (1..=arity).map(|i| format!("c{i}")).collect();
        let branches: Vec<ViewBranch> = unfolding
            .rules
            .iter()
            .map(|r| ViewBranch {
                head: r.head.clone(),
                body: r.body.clone(),
                filters: Vec::new(),
            })
            .collect();
        let aux_pred = format!("Aux_{}", f + 1);
        let args: Vec<Term> = fq.head.clone();
        if !branches.is_empty() {
            maux.views.insert(
                uname.clone(),
                ViewDef {
                    name: uname.clone(),
                    columns,
                    branches,
                },
            );
            maux.assertions.push(MappingAssertion {
                target: Atom::new(aux_pred.clone(), args.clone()),
                source: Atom::new(uname.clone(), args.clone()),
            });
        }
        body.push(Atom::new(aux_pred, args));
        fragments.push(Fragment {
            query: fq,
            views: BTreeMap::from([(uname, (0..unfolding.len()).collect())]),
            unfolding,
        });
    }
    let empty = fragments.iter().any(|f| f.unfolding.is_empty());
    let query = Cq {
        name: q.name.clone(),
        head: q.head.clone(),
        body,
    };
    Ok(Aux {
        fragments,
        query,
        maux,
        empty,
    })
}

/// Joins the fragment unfoldings on their shared answer variables. The
/// fragment views produce constructed values, so joins compare IRIs.
pub fn unfold_jucq_type1(q: &Cq, cover: &Cover, m: &MappingSet) -> Result<JucqTranslation> {
    let aux = auxiliary(q, cover, m)?;
    let mut query = unfold_ucq(&aux.query.clone().into(), &aux.maux);
    query.kind = TranslationKind::Jucq;
    Ok(JucqTranslation {
        cover: cover.clone(),
        fragments: aux.fragments,
        query,
        empty_fragment: aux.empty,
    })
}

/// The optimized unfolding: unfolds the auxiliary query over
/// `wrap(split(M_aux))`, yielding one join per tuple of fragment signatures,
/// joined on source columns.
pub fn unfold_jucq_type2(q: &Cq, cover: &Cover, m: &MappingSet) -> Result<JucqTranslation> {
    let mut aux = auxiliary(q, cover, m)?;
    let wrapped = wrap(&split(&aux.maux));
    let mut query = unfold_ucq(&aux.query.clone().into(), &wrapped);
    query.kind = TranslationKind::Jucq;

    for (f, frag) in aux.fragments.iter_mut().enumerate() {
        let pred = format!("Aux_{}", f + 1);
        frag.views.clear();
        for a in wrapped.assertions.iter().filter(|a| a.target.pred == pred) {
            let sig: Vec<Template> = a.target.args.iter().map(Template::of).collect();
            let members: Vec<usize> = frag
                .unfolding
                .rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.head.iter().map(Template::of).collect::<Vec<_>>() == sig)
                .map(|(i, _)| i)
                .collect();
            frag.views.insert(a.source.pred.clone(), members);
        }
    }
    Ok(JucqTranslation {
        cover: cover.clone(),
        fragments: aux.fragments,
        query,
        empty_fragment: aux.empty,
    })
}
