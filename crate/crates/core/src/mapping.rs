//! Mapping assertions, source views and the transformations on mapping sets:
//! restriction, wrap, split and saturation against an atomic TBox.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{rename_atom, rename_term, Atom, Term, Value, Var};
use crate::oracle::{virtual_abox, DataInstance};
use crate::unfold::mgu;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn sql(self) -> &'static str {
        match self {
            CmpOp::Ne => "<>",
            other => other.symbol(),
        }
    }
}

/// `var op const` comparison inside a view branch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Filter {
    pub var: Var,
    pub op: CmpOp,
    pub value: Value,
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.var, self.op.symbol(), self.value)
    }
}

/// One select-project-join rule of a view.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewBranch {
    pub head: Vec<Term>,
    pub body: Vec<Atom>,
    pub filters: Vec<Filter>,
}

impl ViewBranch {
    pub fn vars(&self) -> BTreeSet<Var> {
        self.body.iter().flat_map(|a| a.var_list()).collect()
    }

    fn rename(&self, ren: &BTreeMap<Var, Var>) -> ViewBranch {
        ViewBranch {
            head: self.head.iter().map(|t| rename_term(t, ren)).collect(),
            body: self.body.iter().map(|a| rename_atom(a, ren)).collect(),
            filters: self
                .filters
                .iter()
                .map(|f| Filter {
                    var: ren.get(&f.var).cloned().unwrap_or_else(|| f.var.clone()),
                    op: f.op,
                    value: f.value.clone(),
                })
                .collect(),
        }
    }

    fn has_templates(&self) -> bool {
        self.head.iter().any(|t| !matches!(t, Term::Var(_)))
    }
}

/// A named source view: a single SPJ query or a union of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDef {
    pub name: String,
    pub columns: Vec<String>,
    pub branches: Vec<ViewBranch>,
}

impl ViewDef {
    pub fn new(name: impl Into<String>, columns: Vec<String>, branches: Vec<ViewBranch>) -> Result<Self> {
        let v = ViewDef {
            name: name.into(),
            columns,
            branches,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn is_union(&self) -> bool {
        self.branches.len() > 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::IllFormed(format!("view `{}` has no branches", self.name)));
        }
        for b in &self.branches {
            if b.head.len() != self.columns.len() {
                return Err(Error::Arity {
                    name: self.name.clone(),
                    expected: self.columns.len(),
                    found: b.head.len(),
                });
            }
            if b.body.is_empty() {
                return Err(Error::IllFormed(format!("view `{}` has an empty branch", self.name)));
            }
            let vars = b.vars();
            for t in &b.head {
                if let Term::Func(_, args) = t {
                    if args.iter().any(|a| matches!(a, Term::Func(..))) {
                        return Err(Error::IllFormed(format!("nested template in view `{}`", self.name)));
                    }
                }
                for v in t.vars() {
                    if !vars.contains(v) {
                        return Err(Error::IllFormed(format!(
                            "head variable `{v}` of view `{}` is not bound by its body",
                            self.name
                        )));
                    }
                }
            }
            for f in &b.filters {
                if !vars.contains(&f.var) {
                    return Err(Error::IllFormed(format!(
                        "filter variable `{}` of view `{}` is not bound by its body",
                        f.var, self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ViewDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.branches {
            write!(f, "{}(", self.name)?;
            for (i, t) in b.head.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{t}")?;
            }
            f.write_str(") := ")?;
            let mut parts: Vec<String> = b.body.iter().map(|a| a.to_string()).collect();
            parts.extend(b.filters.iter().map(|x| x.to_string()));
            writeln!(f, "{}", parts.join(" & "))?;
        }
        Ok(())
    }
}

/// Template of one target position: a function symbol with its arity, or a
/// plain variable/constant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Template {
    Plain,
    Func(String, usize),
}

impl Template {
    pub fn of(t: &Term) -> Template {
        match t {
            Term::Func(s, args) => Template::Func(s.clone(), args.len()),
            _ => Template::Plain,
        }
    }

    pub fn symbol(&self) -> Option<&str> {
        match self {
            Template::Func(s, _) => Some(s),
            Template::Plain => None,
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::Plain => f.write_str("_"),
            Template::Func(s, _) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub pred: String,
    pub templates: Vec<Template>,
}

impl Signature {
    pub fn new(pred: &str, templates: &[&str]) -> Self {
        Signature {
            pred: pred.to_string(),
            templates: templates
                .iter()
                .map(|s| if *s == "_" { Template::Plain } else { Template::Func(s.to_string(), 1) })
                .collect(),
        }
    }

    /// Same predicate and symbols; arities of templates are not compared.
    pub fn matches(&self, other: &Signature) -> bool {
        self.pred == other.pred
            && self.templates.len() == other.templates.len()
            && self
                .templates
                .iter()
                .zip(&other.templates)
                .all(|(a, b)| a.symbol() == b.symbol())
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.templates.iter().map(|t| t.to_string()).collect();
        write!(f, "{}({})", self.pred, items.join(","))
    }
}

/// `target <- source`, where `source` is a view or base-table atom over
/// variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappingAssertion {
    pub target: Atom,
    pub source: Atom,
}

impl MappingAssertion {
    pub fn new(target: Atom, source: Atom) -> Result<Self> {
        let m = MappingAssertion { target, source };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.args.iter().any(|t| matches!(t, Term::Func(..))) {
            return Err(Error::IllFormed(format!(
                "source `{}` has a functional argument",
                self.source
            )));
        }
        let tv: BTreeSet<Var> = self.target.var_list().into_iter().collect();
        let sv: BTreeSet<Var> = self.source.var_list().into_iter().collect();
        if tv != sv {
            return Err(Error::IllFormed(format!(
                "variables of `{}` differ from those of `{}`",
                self.target, self.source
            )));
        }
        Ok(())
    }

    pub fn signature(&self) -> Signature {
        Signature {
            pred: self.target.pred.clone(),
            templates: self.target.args.iter().map(Template::of).collect(),
        }
    }

    /// α-normal form, used to detect duplicate assertions.
    pub fn canonical(&self) -> MappingAssertion {
        let mut ren = BTreeMap::new();
        for v in self.target.var_list().into_iter().chain(self.source.var_list()) {
            let n = ren.len();
            ren.entry(v).or_insert_with(|| Var(format!("v{n}")));
        }
        MappingAssertion {
            target: rename_atom(&self.target, &ren),
            source: rename_atom(&self.source, &ren),
        }
    }
}

impl fmt::Display for MappingAssertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <- {}", self.target, self.source)
    }
}

/// A set of mapping assertions together with the views and base tables
/// their sources refer to.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSet {
    pub assertions: Vec<MappingAssertion>,
    pub views: BTreeMap<String, ViewDef>,
    pub tables: BTreeMap<String, Vec<String>>,
}

impl MappingSet {
    pub fn is_view(&self, name: &str) -> bool {
        self.views.contains_key(name)
    }

    /// Column names of a view or base table.
    pub fn columns(&self, relation: &str) -> Result<&[String]> {
        if let Some(v) = self.views.get(relation) {
            return Ok(&v.columns);
        }
        self.tables
            .get(relation)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    pub fn signatures(&self) -> BTreeSet<Signature> {
        self.assertions.iter().map(|m| m.signature()).collect()
    }

    pub fn len(&self) -> usize {
        self.assertions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assertions.is_empty()
    }

    /// Same views and tables, different assertions.
    pub fn with_assertions(&self, assertions: Vec<MappingAssertion>) -> MappingSet {
        MappingSet {
            assertions,
            views: self.views.clone(),
            tables: self.tables.clone(),
        }
    }

    /// Checks assertions against declared relations and view definitions.
    pub fn validate(&self) -> Result<()> {
        for v in self.views.values() {
            v.validate()?;
            for b in &v.branches {
                for a in &b.body {
                    self.check_arity(a)?;
                }
            }
        }
        for m in &self.assertions {
            m.validate()?;
            self.check_arity(&m.source)?;
        }
        Ok(())
    }

    fn check_arity(&self, a: &Atom) -> Result<()> {
        let cols = self.columns(&a.pred)?;
        if cols.len() != a.arity() {
            return Err(Error::Arity {
                name: a.pred.clone(),
                expected: cols.len(),
                found: a.arity(),
            });
        }
        Ok(())
    }

    /// Base tables reachable from `relation`, with multiplicity, in
    /// left-to-right order through every branch.
    pub fn base_tables(&self, relation: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_base_tables(relation, &mut out, 0);
        out
    }

    fn collect_base_tables(&self, relation: &str, out: &mut Vec<String>, depth: usize) {
        match self.views.get(relation) {
            Some(v) if depth < 64 => {
                for b in &v.branches {
                    for a in &b.body {
                        self.collect_base_tables(&a.pred, out, depth + 1);
                    }
                }
            }
            _ => out.push(relation.to_string()),
        }
    }

    /// Name not used by any view or table, of the form `{prefix}{k}` for the
    /// smallest `k >= start`.
    pub fn fresh_name(&self, prefix: &str, start: usize) -> (String, usize) {
        let mut k = start;
        loop {
            let name = format!("{prefix}{k}");
            if !self.views.contains_key(&name) && !self.tables.contains_key(&name) {
                return (name, k);
            }
            k += 1;
        }
    }
}

impl fmt::Display for MappingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, cols) in &self.tables {
            writeln!(f, "table {name}({})", cols.join(","))?;
        }
        for v in self.views.values() {
            write!(f, "{v}")?;
        }
        for m in &self.assertions {
            writeln!(f, "{m}")?;
        }
        Ok(())
    }
}

/// Assertions of `m` whose signature equals `sig`.
pub fn restrict(m: &MappingSet, sig: &Signature) -> MappingSet {
    m.with_assertions(
        m.assertions
            .iter()
            .filter(|a| a.signature().matches(sig))
            .cloned()
            .collect(),
    )
}

/// Groups the assertions by signature, one union view `W_<k>` per group.
pub fn wrap(m: &MappingSet) -> MappingSet {
    let mut groups: BTreeMap<Signature, Vec<&MappingAssertion>> = BTreeMap::new();
    for a in &m.assertions {
        groups.entry(a.signature()).or_default().push(a);
    }
    let mut out = m.with_assertions(Vec::new());
    let mut next = 1;
    for (sig, members) in groups {
        let (name, k) = out.fresh_name("W_", next);
        next = k + 1;

        // One slot variable per template argument (or plain position).
        let mut slots = Vec::new();
        let mut target_args = Vec::new();
        for (p, t) in sig.templates.iter().enumerate() {
            match t {
                Template::Plain => {
                    let v = Var(format!("v{p}"));
                    slots.push(v.clone());
                    target_args.push(Term::Var(v));
                }
                Template::Func(s, n) => {
                    let args: Vec<Term> = (0..*n)
                        .map(|j| {
                            let v = Var(format!("v{p}_{j}"));
                            slots.push(v.clone());
                            Term::Var(v)
                        })
                        .collect();
                    target_args.push(Term::Func(s.clone(), args));
                }
            }
        }

        let branches: Vec<ViewBranch> = members
            .iter()
            .map(|a| {
                let head = a
                    .target
                    .args
                    .iter()
                    .flat_map(|t| match t {
                        Term::Func(_, args) => args.clone(),
                        other => vec![other.clone()],
                    })
                    .collect();
                ViewBranch {
                    head,
                    body: vec![a.source.clone()],
                    filters: Vec::new(),
                }
            })
            .collect();
        let mut seen = BTreeSet::new();
        let branches: Vec<ViewBranch> = branches
            .into_iter()
            .filter(|b| seen.insert(canonical_branch(b)))
            .collect();

        let view = ViewDef {
            name: name.clone(),
            columns: slots.iter().map(|v| v.0.clone()).collect(),
            branches,
        };
        out.views.insert(name.clone(), view);
        out.assertions.push(MappingAssertion {
            target: Atom::new(sig.pred.clone(), target_args),
            source: Atom::new(name, slots.into_iter().map(Term::Var).collect()),
        });
    }
    out
}

fn canonical_branch(b: &ViewBranch) -> ViewBranch {
    let mut ren = BTreeMap::new();
    let vars = b
        .head
        .iter()
        .flat_map(|t| t.vars().into_iter().cloned().collect::<Vec<_>>())
        .chain(b.body.iter().flat_map(|a| a.var_list()));
    for v in vars {
        let n = ren.len();
        ren.entry(v).or_insert_with(|| Var(format!("v{n}")));
    }
    b.rename(&ren)
}

/// Distributes union views with per-branch templates over their branches.
///
/// Each branch becomes one assertion. A branch whose body is a single atom
/// exposing exactly the target variables is used directly as the source;
/// otherwise a fresh single-branch view `S_<k>` is introduced.
pub fn split(m: &MappingSet) -> MappingSet {
    let mut out = m.with_assertions(Vec::new());
    let mut next = 1;
    let mut seen = BTreeSet::new();
    for a in &m.assertions {
        let pieces = match m.views.get(&a.source.pred) {
            Some(v) if v.is_union() || v.branches.iter().any(|b| b.has_templates()) => {
                split_one(a, v)
            }
            _ => None,
        };
        let Some(pieces) = pieces else {
            if seen.insert(a.canonical()) {
                out.assertions.push(a.clone());
            }
            continue;
        };
        for (target, branch) in pieces {
            let target_vars = target.var_list();
            let direct = branch.filters.is_empty()
                && branch.body.len() == 1
                && {
                    let src = &branch.body[0];
                    let vars = src.var_list();
                    src.args.iter().all(|t| matches!(t, Term::Var(_)))
                        && vars.len() == src.arity()
                        && vars.iter().collect::<BTreeSet<_>>() == target_vars.iter().collect::<BTreeSet<_>>()
                };
            let assertion = if direct {
                MappingAssertion {
                    target,
                    source: branch.body[0].clone(),
                }
            } else {
                let (name, k) = out.fresh_name("S_", next);
                next = k + 1;
                let head: Vec<Term> = target_vars.iter().cloned().map(Term::Var).collect();
                out.views.insert(
                    name.clone(),
                    ViewDef {
                        name: name.clone(),
                        columns: target_vars.iter().map(|v| v.0.clone()).collect(),
                        branches: vec![ViewBranch {
                            head: head.clone(),
                            body: branch.body,
                            filters: branch.filters,
                        }],
                    },
                );
                MappingAssertion {
                    target,
                    source: Atom::new(name, head),
                }
            };
            if seen.insert(assertion.canonical()) {
                out.assertions.push(assertion);
            }
        }
    }
    out
}

/// Target and branch for each branch of `v`, or `None` when composing the
/// target with a branch head would nest function symbols.
fn split_one(a: &MappingAssertion, v: &ViewDef) -> Option<Vec<(Atom, ViewBranch)>> {
    let mut out = Vec::new();
    for (i, b) in v.branches.iter().enumerate() {
        let ren: BTreeMap<Var, Var> = b
            .vars()
            .into_iter()
            .map(|x| {
                let fresh = Var(format!("{}__{}", x.0, i + 1));
                (x, fresh)
            })
            .collect();
        let b = b.rename(&ren);
        let head_atom = Atom::new(v.name.clone(), b.head.clone());
        let Some(sigma) = mgu(&[(a.source.clone(), head_atom)]) else {
            continue;
        };
        let target = sigma.apply_atom(&a.target)?;
        let body = b
            .body
            .iter()
            .map(|x| sigma.apply_atom(x))
            .collect::<Option<Vec<_>>>()?;
        let mut filters = Vec::new();
        for f in &b.filters {
            match sigma.apply_term(&Term::Var(f.var.clone()))? {
                Term::Var(var) => filters.push(Filter {
                    var,
                    op: f.op,
                    value: f.value.clone(),
                }),
                _ => return None,
            }
        }
        out.push((target, ViewBranch { head: Vec::new(), body, filters }));
    }
    Some(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AxiomKind {
    SubClass,
    SubProperty,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Axiom {
    pub kind: AxiomKind,
    pub sub: String,
    pub sup: String,
}

/// A TBox of atomic concept and role inclusions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tbox {
    pub axioms: Vec<Axiom>,
}

impl Tbox {
    pub fn arity(kind: AxiomKind) -> usize {
        match kind {
            AxiomKind::SubClass => 1,
            AxiomKind::SubProperty => 2,
        }
    }

    /// Predicates entailed by `pred` (reflexive-transitive closure).
    pub fn supers(&self, pred: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::from([pred.to_string()]);
        loop {
            let before = out.len();
            for ax in &self.axioms {
                if out.contains(&ax.sub) {
                    out.insert(ax.sup.clone());
                }
            }
            if out.len() == before {
                return out;
            }
        }
    }

    fn check(&self, m: &MappingSet) -> Result<()> {
        for ax in &self.axioms {
            let want = Tbox::arity(ax.kind);
            for a in &m.assertions {
                if (a.target.pred == ax.sub || a.target.pred == ax.sup) && a.target.arity() != want {
                    return Err(Error::InvalidTbox(format!(
                        "`{}` is used with arity {} but axiom `{} ⊑ {}` needs {want}",
                        a.target.pred,
                        a.target.arity(),
                        ax.sub,
                        ax.sup
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Tbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ax in &self.axioms {
            let kw = match ax.kind {
                AxiomKind::SubClass => "subClassOf",
                AxiomKind::SubProperty => "subPropertyOf",
            };
            writeln!(f, "{} {kw} {}", ax.sub, ax.sup)?;
        }
        Ok(())
    }
}

/// The T-mapping of `m`: closes the assertions under the TBox inclusions.
pub fn saturate(m: &MappingSet, t: &Tbox) -> Result<MappingSet> {
    t.check(m)?;
    let mut out = m.with_assertions(Vec::new());
    let mut seen = BTreeSet::new();
    for a in &m.assertions {
        if seen.insert(a.canonical()) {
            out.assertions.push(a.clone());
        }
    }
    let mut i = 0;
    while i < out.assertions.len() {
        let a = out.assertions[i].clone();
        for ax in &t.axioms {
            if ax.sub == a.target.pred {
                let derived = MappingAssertion {
                    target: Atom::new(ax.sup.clone(), a.target.args.clone()),
                    source: a.source.clone(),
                };
                if seen.insert(derived.canonical()) {
                    out.assertions.push(derived);
                }
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Whether both mapping sets expose the same virtual ABox over `d`.
pub fn equiv(m1: &MappingSet, m2: &MappingSet, d: &DataInstance) -> Result<bool> {
    Ok(virtual_abox(m1, d)? == virtual_abox(m2, d)?)
}
