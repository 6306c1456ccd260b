//! Nested-loop evaluation, kept separate from the hash-join engine so the
//! two can check each other.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ir::{Atom, Term, Value, Var};
use crate::mapping::{Filter, MappingSet};

use super::data::DataInstance;

type Env = BTreeMap<Var, Value>;

pub struct Naive<'a> {
    data: &'a DataInstance,
    schema: &'a MappingSet,
    memo: BTreeMap<String, BTreeSet<Vec<Value>>>,
}

impl<'a> Naive<'a> {
    pub fn new(data: &'a DataInstance, schema: &'a MappingSet) -> Self {
        Naive {
            data,
            schema,
            memo: BTreeMap::new(),
        }
    }

    pub fn relation(&mut self, name: &str) -> Result<BTreeSet<Vec<Value>>> {
        if let Some(r) = self.memo.get(name) {
            return Ok(r.clone());
        }
        let out = match self.schema.views.get(name) {
            Some(view) => {
                let mut out = BTreeSet::new();
                for b in &view.branches {
                    out.extend(self.rule(&b.head, &b.body, &b.filters)?);
                }
                out
            }
            None => match self.data.tables.get(name) {
                Some(t) => t.rows.iter().cloned().collect(),
                None => return Err(Error::UnknownRelation(name.to_string())),
            },
        };
        self.memo.insert(name.to_string(), out.clone());
        Ok(out)
    }

    pub fn rule(&mut self, head: &[Term], body: &[Atom], filters: &[Filter]) -> Result<BTreeSet<Vec<Value>>> {
        let mut rels = Vec::new();
        for a in body {
            rels.push(self.relation(&a.pred)?.into_iter().collect::<Vec<_>>());
        }
        let mut out = BTreeSet::new();
        let mut env = Env::new();
        descend(body, &rels, 0, &mut env, &mut |env| {
            if filters.iter().all(|f| env.get(&f.var).is_some_and(|v| f.op.eval(v, &f.value))) {
                out.insert(head.iter().map(|t| ground(t, env)).collect());
            }
        });
        Ok(out)
    }
}

fn descend(body: &[Atom], rels: &[Vec<Vec<Value>>], i: usize, env: &mut Env, emit: &mut impl FnMut(&Env)) {
    if i == body.len() {
        emit(env);
        return;
    }
    for row in &rels[i] {
        let mut added = Vec::new();
        let mut ok = row.len() == body[i].args.len();
        for (t, v) in body[i].args.iter().zip(row) {
            if !ok {
                break;
            }
            match t {
                Term::Const(c) => ok = c == v,
                Term::Var(x) => match env.get(x) {
                    Some(bound) => ok = bound == v,
                    None => {
                        env.insert(x.clone(), v.clone());
                        added.push(x.clone());
                    }
                },
                Term::Func(..) => ok = false,
            }
        }
        if ok {
            descend(body, rels, i + 1, env, emit);
        }
        for x in added {
            env.remove(&x);
        }
    }
}

/// Value of a term under `env`; functional terms render as `f:a|b`.
pub fn ground(t: &Term, env: &Env) -> Value {
    match t {
        Term::Var(v) => env[v].clone(),
        Term::Const(c) => c.clone(),
        Term::Func(s, args) => {
            let parts: Vec<String> = args.iter().map(|a| ground(a, env).render()).collect();
            Value::Str(format!("{s}:{}", parts.join("|")))
        }
    }
}

/// Matches `atoms` against a set of ground facts and projects `head`.
pub fn eval_over_facts(
    head: &[Term],
    atoms: &[Atom],
    facts: &BTreeMap<String, Vec<Vec<Value>>>,
) -> BTreeSet<Vec<Value>> {
    let empty = Vec::new();
    let rels: Vec<Vec<Vec<Value>>> = atoms
        .iter()
        .map(|a| facts.get(&a.pred).unwrap_or(&empty).clone())
        .collect();
    let mut out = BTreeSet::new();
    let mut env = Env::new();
    descend(atoms, &rels, 0, &mut env, &mut |env| {
        out.insert(head.iter().map(|t| ground(t, env)).collect());
    });
    out
}
