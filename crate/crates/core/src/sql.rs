//! SQL text for planned translations.
//!
//! Views become common table expressions. Templates are applied only in
//! select lists; joins and filters compare raw columns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::ir::{Atom, Term, Value, Var};
use crate::mapping::{Filter, MappingSet};
use crate::planner::PlanChoice;
use crate::unfold::UnfoldedQuery;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    Ansi,
    Postgres,
}

impl Dialect {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ansi" => Ok(Dialect::Ansi),
            "postgres" | "postgresql" => Ok(Dialect::Postgres),
            other => Err(Error::Unsupported(format!("SQL dialect `{other}`"))),
        }
    }

    fn concat(self, parts: &[String]) -> String {
        match self {
            Dialect::Ansi => parts.join(" || "),
            Dialect::Postgres => format!("CONCAT({})", parts.join(", ")),
        }
    }

    fn as_text(self, expr: &str) -> String {
        match self {
            Dialect::Ansi => format!("CAST({expr} AS VARCHAR)"),
            Dialect::Postgres => expr.to_string(),
        }
    }
}

fn ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn literal(v: &Value) -> String {
    v.to_string()
}

/// SQL of a planned translation.
pub fn emit_sql(plan: &PlanChoice, dialect: &str) -> Result<String> {
    emit_unfolded(plan.translation.unfolded(), Dialect::parse(dialect)?)
}

/// SQL of an unfolded query.
pub fn emit_unfolded(u: &UnfoldedQuery, dialect: Dialect) -> Result<String> {
    let schema = &u.schema;
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    for r in &u.rules {
        for a in &r.body {
            view_order(schema, &a.pred, &mut seen, &mut order);
        }
    }

    let mut out = String::new();
    if !order.is_empty() {
        out.push_str("WITH ");
        for (i, name) in order.iter().enumerate() {
            let view = &schema.views[name];
            let cols: Vec<String> = view.columns.iter().map(|c| ident(c)).collect();
            let branches = view
                .branches
                .iter()
                .map(|b| select(schema, &b.head, &b.body, &b.filters, dialect, false, None))
                .collect::<Result<Vec<_>>>()?;
            if i > 0 {
                out.push_str(",\n     ");
            }
            write!(out, "{}({}) AS (\n  {}\n)", ident(name), cols.join(", "), branches.join("\n  UNION\n  ")).unwrap();
        }
        out.push('\n');
    }

    let names: Vec<String> = (1..=u.arity).map(|i| format!("c{i}")).collect();
    if u.rules.is_empty() {
        // No rule: an empty result with the right columns.
        let cols: Vec<String> = names.iter().map(|n| format!("NULL AS {}", ident(n))).collect();
        write!(out, "SELECT {} WHERE 1 = 0", cols.join(", ")).unwrap();
        return Ok(out);
    }
    let distinct = u.rules.len() == 1;
    let rules = u
        .rules
        .iter()
        .map(|r| select(schema, &r.head, &r.body, &[], dialect, distinct, Some(&names)))
        .collect::<Result<Vec<_>>>()?;
    out.push_str(&rules.join("\nUNION\n"));
    Ok(out)
}

/// Views reachable from `name`, dependencies first.
fn view_order(schema: &MappingSet, name: &str, seen: &mut BTreeSet<String>, order: &mut Vec<String>) {
    let Some(view) = schema.views.get(name) else {
        return;
    };
    if !seen.insert(name.to_string()) {
        return;
    }
    for b in &view.branches {
        for a in &b.body {
            view_order(schema, &a.pred, seen, order);
        }
    }
    order.push(name.to_string());
}

fn select(
    schema: &MappingSet,
    head: &[Term],
    body: &[Atom],
    filters: &[Filter],
    dialect: Dialect,
    distinct: bool,
    names: Option<&[String]>,
) -> Result<String> {
    let mut from = Vec::new();
    let mut first: BTreeMap<&Var, String> = BTreeMap::new();
    let mut conds = Vec::new();
    for (i, a) in body.iter().enumerate() {
        let alias = format!("t{}", i + 1);
        let cols = schema.columns(&a.pred)?;
        from.push(format!("{} {}", ident(&a.pred), alias));
        for (arg, col) in a.args.iter().zip(cols) {
            let column = format!("{alias}.{}", ident(col));
            match arg {
                Term::Var(v) => match first.get(v) {
                    Some(prev) => conds.push(format!("{prev} = {column}")),
                    None => {
                        first.insert(v, column);
                    }
                },
                Term::Const(c) => conds.push(format!("{column} = {}", literal(c))),
                Term::Func(..) => {
                    return Err(Error::Unsupported(format!("function term in body atom `{a}`")));
                }
            }
        }
    }
    for f in filters {
        let col = first
            .get(&f.var)
            .ok_or_else(|| Error::IllFormed(format!("filter on unbound variable `{}`", f.var)))?;
        conds.push(format!("{col} {} {}", f.op.sql(), literal(&f.value)));
    }

    let expr = |t: &Term| -> Result<String> {
        match t {
            Term::Var(v) => first
                .get(v)
                .cloned()
                .ok_or_else(|| Error::IllFormed(format!("head variable `{v}` not in body"))),
            Term::Const(c) => Ok(literal(c)),
            Term::Func(symbol, args) => {
                let mut parts = vec![literal(&Value::Str(format!("{symbol}:")))];
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        parts.push(literal(&Value::Str("|".into())));
                    }
                    let inner = match arg {
                        Term::Var(v) => first
                            .get(v)
                            .cloned()
                            .ok_or_else(|| Error::IllFormed(format!("head variable `{v}` not in body")))?,
                        Term::Const(c) => literal(&Value::Str(c.render())),
                        Term::Func(..) => return Err(Error::Unsupported("nested function term".into())),
                    };
                    parts.push(dialect.as_text(&inner));
                }
                Ok(dialect.concat(&parts))
            }
        }
    };
    let mut items = Vec::with_capacity(head.len());
    for (i, t) in head.iter().enumerate() {
        let e = expr(t)?;
        items.push(match names {
            Some(n) => format!("{e} AS {}", ident(&n[i])),
            None => e,
        });
    }

    let mut s = String::from("SELECT ");
    if distinct {
        s.push_str("DISTINCT ");
    }
    s.push_str(&items.join(", "));
    if !from.is_empty() {
        write!(s, " FROM {}", from.join(", ")).unwrap();
    }
    if !conds.is_empty() {
        write!(s, " WHERE {}", conds.join(" AND ")).unwrap();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Cover;
    use crate::parse::{parse_cq, parse_mappings};
    use crate::unfold::{unfold_jucq_type2, unfold_ucq};

    fn running() -> MappingSet {
        parse_mappings(
            "table T(a,b,c)
             V1(a,b) := T(a,b,c) & c > 3
             V2(a,b) := T(a,b,c) & c <= 3
             P1(f(a),g(b)) <- V1(a,b)
             P1(f(a),g(b)) <- V2(a,b)
             V3(a) := T(a,b,c)
             C(f(a)) <- V3(a)
             P2(f(a),k(b)) <- V1(a,b)",
        )
        .unwrap()
    }

    fn where_clauses(sql: &str) -> Vec<&str> {
        sql.split(" WHERE ")
            .skip(1)
            .map(|w| w.split(['\n', ')']).next().unwrap_or(""))
            .collect()
    }

    #[test]
    fn single_rule_is_plain_select() {
        let m = parse_mappings("table T(a,b)\nP(f(a),b) <- T(a,b)").unwrap();
        let u = unfold_ucq(&parse_cq("q(x,y) :- P(x,y)").unwrap().into(), &m);
        let sql = emit_unfolded(&u, Dialect::Ansi).unwrap();
        assert_eq!(
            sql,
            "SELECT DISTINCT 'f:' || CAST(t1.\"a\" AS VARCHAR) AS \"c1\", t1.\"b\" AS \"c2\" FROM \"T\" t1"
        );
        assert!(!sql.contains("UNION"));
    }

    #[test]
    fn type2_joins_raw_columns() {
        let m = running();
        let q = parse_cq("q(x,y,z) :- P1(x,y), C(x), P2(x,z)").unwrap();
        let cover = Cover::new(vec![vec![0, 1], vec![2]], 3).unwrap();
        let t = unfold_jucq_type2(&q, &cover, &m).unwrap();
        for d in [Dialect::Ansi, Dialect::Postgres] {
            let sql = emit_unfolded(&t.query, d).unwrap();
            assert!(sql.starts_with("WITH "));
            for w in where_clauses(&sql) {
                assert!(!w.contains("||") && !w.contains("CONCAT"), "{w}");
            }
        }
        let pg = emit_unfolded(&t.query, Dialect::Postgres).unwrap();
        assert!(pg.contains("CONCAT('f:', "));
    }

    #[test]
    fn ucq_branches_are_unioned() {
        let m = running();
        let u = unfold_ucq(&parse_cq("q(x,y) :- P1(x,y)").unwrap().into(), &m);
        let sql = emit_unfolded(&u, Dialect::Ansi).unwrap();
        assert_eq!(sql.matches("\nUNION\n").count(), 1);
        assert!(sql.contains("\"V1\"(\"a\", \"b\") AS"));
        assert!(sql.contains("t1.\"c\" > 3"));
    }

    #[test]
    fn unknown_dialect() {
        assert!(matches!(Dialect::parse("oracle"), Err(Error::Unsupported(_))));
    }
}
