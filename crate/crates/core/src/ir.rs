//! Terms, atoms, conjunctive queries and covers.
//!
//! Function symbols never nest: the argument list of a [`Term::Func`] only
//! holds variables and constants. Constructors check this, so code that
//! receives a `Term` can rely on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A database value. Strings and integers never compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    /// Rendering used inside grounded templates and by the SQL emitter.
    pub fn render(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Str(s) => s.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(Var),
    Const(Value),
    Func(String, Vec<Term>),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(Var::new(name))
    }

    pub fn int(i: i64) -> Self {
        Term::Const(Value::Int(i))
    }

    /// Builds `symbol(args...)`, rejecting nested functional arguments.
    pub fn func(symbol: impl Into<String>, args: Vec<Term>) -> Result<Self> {
        let symbol = symbol.into();
        if args.iter().any(|a| matches!(a, Term::Func(..))) {
            return Err(Error::IllFormed(format!(
                "nested functional term under `{symbol}`"
            )));
        }
        Ok(Term::Func(symbol, args))
    }

    /// Shorthand for `symbol(v1, v2, ...)` over variables.
    pub fn fvars(symbol: &str, vars: &[&str]) -> Self {
        Term::Func(symbol.to_string(), vars.iter().map(|v| Term::var(*v)).collect())
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// The template symbol of a functional term.
    pub fn template(&self) -> Option<&str> {
        match self {
            Term::Func(s, _) => Some(s),
            _ => None,
        }
    }

    pub fn vars(&self) -> Vec<&Var> {
        match self {
            Term::Var(v) => vec![v],
            Term::Const(_) => Vec::new(),
            Term::Func(_, args) => args.iter().filter_map(Term::as_var).collect(),
        }
    }

    pub fn is_ground(&self) -> bool {
        self.vars().is_empty()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{c}"),
            Term::Func(s, args) => {
                write!(f, "{s}(")?;
                write_list(f, args)?;
                f.write_str(")")
            }
        }
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            pred: pred.into(),
            args,
        }
    }

    /// Atom whose arguments are all variables.
    pub fn vars(pred: &str, vars: &[&str]) -> Self {
        Atom::new(pred, vars.iter().map(|v| Term::var(*v)).collect())
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Variables in left-to-right order of first occurrence.
    pub fn var_list(&self) -> Vec<Var> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.args {
            for v in t.vars() {
                if seen.insert(v.clone()) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        write_list(f, &self.args)?;
        f.write_str(")")
    }
}

/// A conjunctive query `name(head) :- body`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cq {
    pub name: String,
    pub head: Vec<Term>,
    pub body: Vec<Atom>,
}

impl Cq {
    /// Builds a CQ, checking that the body is non-empty and the head is safe.
    pub fn new(name: impl Into<String>, head: Vec<Term>, body: Vec<Atom>) -> Result<Self> {
        let cq = Cq {
            name: name.into(),
            head,
            body,
        };
        cq.validate()?;
        Ok(cq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.body.is_empty() {
            return Err(Error::IllFormed(format!("`{}` has an empty body", self.name)));
        }
        let body_vars = self.body_vars();
        for t in &self.head {
            for v in t.vars() {
                if !body_vars.contains(v) {
                    return Err(Error::IllFormed(format!(
                        "head variable `{v}` of `{}` does not occur in the body",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn body_vars(&self) -> BTreeSet<Var> {
        self.body
            .iter()
            .flat_map(|a| a.var_list())
            .collect::<BTreeSet<_>>()
    }

    /// Answer variables in head order, without repetitions.
    pub fn answer_vars(&self) -> Vec<Var> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.head {
            for v in t.vars() {
                if seen.insert(v.clone()) {
                    out.push(v.clone());
                }
            }
        }
        out
    }

    /// Variables of the body that are not answer variables.
    pub fn existential_vars(&self) -> BTreeSet<Var> {
        let ans: BTreeSet<Var> = self.answer_vars().into_iter().collect();
        self.body_vars().into_iter().filter(|v| !ans.contains(v)).collect()
    }

    /// All variables numbered left to right: head first, then body.
    pub fn var_order(&self) -> Vec<Var> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let terms = self.head.iter().chain(self.body.iter().flat_map(|a| a.args.iter()));
        for t in terms {
            for v in t.vars() {
                if seen.insert(v.clone()) {
                    out.push(v.clone());
                }
            }
        }
        out
    }

    /// α-normal form: variables renamed `v0, v1, ...` in [`Cq::var_order`].
    pub fn canonical(&self) -> Cq {
        let ren: BTreeMap<Var, Var> = self
            .var_order()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, Var(format!("v{i}"))))
            .collect();
        self.rename(&ren)
    }

    pub fn rename(&self, ren: &BTreeMap<Var, Var>) -> Cq {
        Cq {
            name: self.name.clone(),
            head: self.head.iter().map(|t| rename_term(t, ren)).collect(),
            body: self.body.iter().map(|a| rename_atom(a, ren)).collect(),
        }
    }

    pub fn alpha_eq(&self, other: &Cq) -> bool {
        self.canonical() == other.canonical()
    }
}

pub fn rename_term(t: &Term, ren: &BTreeMap<Var, Var>) -> Term {
    match t {
        Term::Var(v) => Term::Var(ren.get(v).cloned().unwrap_or_else(|| v.clone())),
        Term::Const(_) => t.clone(),
        Term::Func(s, args) => Term::Func(s.clone(), args.iter().map(|a| rename_term(a, ren)).collect()),
    }
}

pub fn rename_atom(a: &Atom, ren: &BTreeMap<Var, Var>) -> Atom {
    Atom::new(a.pred.clone(), a.args.iter().map(|t| rename_term(t, ren)).collect())
}

impl fmt::Display for Cq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        write_list(f, &self.head)?;
        f.write_str(") :- ")?;
        write_list(f, &self.body)
    }
}

/// A union of CQs sharing head name and arity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ucq {
    pub cqs: Vec<Cq>,
}

impl Ucq {
    pub fn new(cqs: Vec<Cq>) -> Result<Self> {
        let first = cqs
            .first()
            .ok_or_else(|| Error::IllFormed("empty union".into()))?;
        for cq in &cqs[1..] {
            if cq.head.len() != first.head.len() {
                return Err(Error::Arity {
                    name: cq.name.clone(),
                    expected: first.head.len(),
                    found: cq.head.len(),
                });
            }
        }
        Ok(Ucq { cqs })
    }

    pub fn arity(&self) -> usize {
        self.cqs[0].head.len()
    }
}

impl From<Cq> for Ucq {
    fn from(cq: Cq) -> Self {
        Ucq { cqs: vec![cq] }
    }
}

impl fmt::Display for Ucq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for cq in &self.cqs {
            writeln!(f, "{cq}")?;
        }
        Ok(())
    }
}

/// A set partition of a CQ's body atoms.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cover {
    pub fragments: Vec<Vec<usize>>,
}

impl Cover {
    /// Normalizes fragment order (each block sorted, blocks ordered by their
    /// smallest atom) and validates against a body of `n_atoms` atoms.
    pub fn new(fragments: Vec<Vec<usize>>, n_atoms: usize) -> Result<Self> {
        let mut fragments: Vec<Vec<usize>> = fragments
            .into_iter()
            .map(|mut f| {
                f.sort_unstable();
                f.dedup();
                f
            })
            .collect();
        fragments.sort();
        let cover = Cover { fragments };
        cover.validate(n_atoms)?;
        Ok(cover)
    }

    pub fn single(n_atoms: usize) -> Self {
        Cover {
            fragments: vec![(0..n_atoms).collect()],
        }
    }

    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        if self.fragments.is_empty() {
            return Err(Error::InvalidCover("no fragments".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fragments {
            if f.is_empty() {
                return Err(Error::InvalidCover("empty fragment".into()));
            }
            for &i in f {
                if i >= n_atoms {
                    return Err(Error::InvalidCover(format!(
                        "atom index {i} out of range for {n_atoms} atoms"
                    )));
                }
                seen.insert(i);
            }
        }
        if seen.len() != n_atoms {
            return Err(Error::InvalidCover(
                "fragments do not cover every atom".into(),
            ));
        }
        for (i, a) in self.fragments.iter().enumerate() {
            for (j, b) in self.fragments.iter().enumerate() {
                if i != j && a.iter().all(|x| b.contains(x)) {
                    return Err(Error::InvalidCover(format!(
                        "fragment {i} is included in fragment {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn is_single(&self) -> bool {
        self.fragments.len() == 1
    }

    /// Parses `"1,2|3"` with 1-based atom positions.
    pub fn parse(text: &str, n_atoms: usize) -> Result<Self> {
        let mut fragments = Vec::new();
        for block in text.split('|') {
            let mut f = Vec::new();
            for item in block.split(',') {
                let item = item.trim();
                let pos: usize = item
                    .parse()
                    .map_err(|_| Error::InvalidCover(format!("bad atom position `{item}`")))?;
                if pos == 0 {
                    return Err(Error::InvalidCover("atom positions start at 1".into()));
                }
                f.push(pos - 1);
            }
            fragments.push(f);
        }
        Cover::new(fragments, n_atoms)
    }
}

impl fmt::Display for Cover {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, frag) in self.fragments.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            let items: Vec<String> = frag.iter().map(|a| (a + 1).to_string()).collect();
            f.write_str(&items.join(","))?;
        }
        Ok(())
    }
}

/// The fragment query of `q` induced by fragment `frag` of `cover`.
///
/// Its head lists the answer variables of `q` occurring in the fragment (in
/// head order), followed by existential variables shared with some other
/// fragment (in order of first occurrence).
pub fn make_fragment_query(q: &Cq, frag: usize, cover: &Cover) -> Result<Cq> {
    cover.validate(q.body.len())?;
    let atoms = cover
        .fragments
        .get(frag)
        .ok_or_else(|| Error::InvalidCover(format!("no fragment {frag}")))?;
    let body: Vec<Atom> = atoms.iter().map(|&i| q.body[i].clone()).collect();
    let frag_vars: BTreeSet<Var> = body.iter().flat_map(|a| a.var_list()).collect();
    let other_vars: BTreeSet<Var> = cover
        .fragments
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != frag)
        .flat_map(|(_, f)| f.iter().flat_map(|&i| q.body[i].var_list()))
        .collect();
    let answer: Vec<Var> = q.answer_vars();
    let answer_set: BTreeSet<&Var> = answer.iter().collect();

    let mut head = Vec::new();
    let mut seen = BTreeSet::new();
    for v in &answer {
        if frag_vars.contains(v) && seen.insert(v.clone()) {
            head.push(Term::Var(v.clone()));
        }
    }
    for a in &body {
        for v in a.var_list() {
            if !answer_set.contains(&v) && other_vars.contains(&v) && seen.insert(v.clone()) {
                head.push(Term::Var(v));
            }
        }
    }
    Cq::new(format!("{}_f{}", q.name, frag + 1), head, body)
}

/// All set partitions of `q`'s body into at most `max_fragments` blocks.
/// The single-block cover comes first, then by block count and in
/// restricted-growth order.
pub fn enumerate_covers(q: &Cq, max_fragments: usize) -> Vec<Cover> {
    let n = q.body.len();
    let max = max_fragments.max(1).min(n.max(1));
    let mut by_blocks: Vec<Vec<Cover>> = vec![Vec::new(); max + 1];
    let mut rgs = vec![0usize; n];
    partitions(&mut rgs, 0, 0, max, &mut |rgs| {
        let k = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut frags = vec![Vec::new(); k];
        for (i, &b) in rgs.iter().enumerate() {
            frags[b].push(i);
        }
        by_blocks[k].push(Cover { fragments: frags });
    });
    by_blocks.into_iter().flatten().collect()
}

fn partitions(
    rgs: &mut Vec<usize>,
    pos: usize,
    used: usize,
    max: usize,
    emit: &mut impl FnMut(&[usize]),
) {
    if pos == rgs.len() {
        if !rgs.is_empty() {
            emit(rgs);
        }
        return;
    }
    let limit = if pos == 0 { 1 } else { (used + 1).min(max) };
    for b in 0..limit {
        rgs[pos] = b;
        let used = used.max(b + 1);
        partitions(rgs, pos + 1, used, max, emit);
    }
}

/// Number of set partitions of `n` atoms into at most `k` blocks.
pub fn cover_count(n: usize, k: usize) -> u128 {
    // Stirling numbers of the second kind, summed over 1..=k blocks.
    let mut s = vec![vec![0u128; n + 1]; n + 1];
    s[0][0] = 1;
    for i in 1..=n {
        for j in 1..=i {
            s[i][j] = j as u128 * s[i - 1][j] + s[i - 1][j - 1];
        }
    }
    (1..=k.min(n)).map(|j| s[n][j]).sum()
}
