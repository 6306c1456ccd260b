//! Text formats for queries, mapping files and TBoxes.
//!
//! ```text
//! q(x,y) :- D(x), P(x,y)
//! q(x) :- A(x); q(x) :- B(x)
//!
//! table T1(a,b)
//! V(x,y) := T1(x,y) & T2(y) & y > 5
//! P(f(x),g(y)) <- V(x,y)
//!
//! A subClassOf B
//! P subPropertyOf R
//! ```
//!
//! Statements end at a newline or `;`, except that a line ending in `,`,
//! `&`, `:-`, `:=` or `<-` continues on the next one. `#` and `%` start
//! comments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ir::{Atom, Cq, Term, Ucq, Value, Var};
use crate::mapping::{Axiom, AxiomKind, CmpOp, Filter, MappingAssertion, MappingSet, Tbox, ViewBranch, ViewDef};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    End,
    Implies,
    Define,
    Arrow,
    Amp,
    Cmp(CmpOp),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column: col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let start = (line, col);
        let push = |out: &mut Vec<Token>, tok: Tok| out.push(Token { tok, line: start.0, col: start.1 });
        match c {
            '\n' => {
                let continues = matches!(
                    out.last().map(|t| &t.tok),
                    Some(Tok::Comma | Tok::Amp | Tok::Implies | Tok::Define | Tok::Arrow)
                );
                if !continues {
                    push(&mut out, Tok::End);
                }
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            '#' | '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            c if c.is_whitespace() => {}
            '(' => push(&mut out, Tok::LParen),
            ')' => push(&mut out, Tok::RParen),
            ',' => push(&mut out, Tok::Comma),
            ';' | '.' => push(&mut out, Tok::End),
            '&' => push(&mut out, Tok::Amp),
            ':' if chars.get(i + 1) == Some(&'-') => {
                push(&mut out, Tok::Implies);
                i += 1;
                col += 1;
            }
            ':' if chars.get(i + 1) == Some(&'=') => {
                push(&mut out, Tok::Define);
                i += 1;
                col += 1;
            }
            '<' if chars.get(i + 1) == Some(&'-') => {
                push(&mut out, Tok::Arrow);
                i += 1;
                col += 1;
            }
            '<' | '>' | '=' | '!' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', Some('>')) => (CmpOp::Ne, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    ('=', _) => (CmpOp::Eq, 1),
                    _ => return Err(syntax(line, col, "unexpected `!`")),
                };
                push(&mut out, Tok::Cmp(op));
                i += len;
                col += len;
                continue;
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                col += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(syntax(start.0, start.1, "unterminated string")),
                        Some(&ch) if ch == quote => {
                            if chars.get(i + 1) == Some(&quote) {
                                s.push(quote);
                                i += 2;
                                col += 2;
                            } else {
                                break;
                            }
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                push(&mut out, Tok::Str(s));
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v = s
                    .parse::<i64>()
                    .map_err(|_| syntax(line, col, format!("integer `{s}` out of range")))?;
                push(&mut out, Tok::Int(v));
                col += j - i;
                i = j;
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                push(&mut out, Tok::Ident(chars[i..j].iter().collect()));
                col += j - i;
                i = j;
                continue;
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::End,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    arities: BTreeMap<String, usize>,
    symbols: BTreeMap<String, usize>,
}

impl Parser {
    fn new(text: &str) -> Result<Self> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
            arities: BTreeMap::new(),
            symbols: BTreeMap::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        let (l, c) = self.here();
        syntax(l, c, message)
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn skip_ends(&mut self) {
        while *self.peek() == Tok::End && self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
    }

    fn at_eof(&self) -> bool {
        self.pos + 1 >= self.toks.len()
    }

    fn end_statement(&mut self) -> Result<()> {
        if *self.peek() == Tok::End {
            self.next();
            Ok(())
        } else {
            Err(self.err("expected end of statement"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Tok::Ident(s) => Ok(s),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected identifier"))
            }
        }
    }

    fn check_arity(table: &mut BTreeMap<String, usize>, name: &str, n: usize) -> Result<()> {
        match table.get(name) {
            Some(&expected) if expected != n => Err(Error::Arity {
                name: name.to_string(),
                expected,
                found: n,
            }),
            _ => {
                table.insert(name.to_string(), n);
                Ok(())
            }
        }
    }

    fn term(&mut self, allow_func: bool) -> Result<Term> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.next();
                Ok(Term::Const(Value::Int(i)))
            }
            Tok::Str(s) => {
                self.next();
                Ok(Term::Const(Value::Str(s)))
            }
            Tok::Ident(name) => {
                self.next();
                if *self.peek() != Tok::LParen {
                    return Ok(Term::Var(Var(name)));
                }
                if !allow_func {
                    return Err(self.err(format!("functional term `{name}` not allowed here")));
                }
                self.next();
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        let t = self.term(false)?;
                        args.push(t);
                        if *self.peek() == Tok::Comma {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen, "`)`")?;
                Self::check_arity(&mut self.symbols, &name, args.len())?;
                Ok(Term::Func(name, args))
            }
            _ => Err(self.err("expected term")),
        }
    }

    fn atom(&mut self, allow_func: bool) -> Result<Atom> {
        let pred = self.ident()?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.term(allow_func)?);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Self::check_arity(&mut self.arities, &pred, args.len())?;
        Ok(Atom::new(pred, args))
    }
}

/// Result of [`parse_query`]: one rule or a union of rules.
#[derive(Clone, Debug, PartialEq)]
pub enum ParsedQuery {
    Cq(Cq),
    Ucq(Ucq),
}

impl ParsedQuery {
    pub fn into_ucq(self) -> Ucq {
        match self {
            ParsedQuery::Cq(q) => q.into(),
            ParsedQuery::Ucq(u) => u,
        }
    }

    /// The query if it has a single rule.
    pub fn into_cq(self) -> Result<Cq> {
        match self {
            ParsedQuery::Cq(q) => Ok(q),
            ParsedQuery::Ucq(_) => Err(Error::Unsupported("expected a single conjunctive query".into())),
        }
    }
}

pub fn parse_query(text: &str) -> Result<ParsedQuery> {
    let mut p = Parser::new(text)?;
    let mut cqs: Vec<Cq> = Vec::new();
    p.skip_ends();
    while !p.at_eof() {
        let (line, col) = p.here();
        let head = p.atom(true)?;
        p.expect(Tok::Implies, "`:-`")?;
        let mut body = vec![p.atom(false)?];
        while *p.peek() == Tok::Comma {
            p.next();
            body.push(p.atom(false)?);
        }
        p.end_statement()?;
        p.skip_ends();
        if let Some(first) = cqs.first() {
            if first.name != head.pred {
                return Err(syntax(line, col, format!("head `{}` differs from `{}`", head.pred, first.name)));
            }
        }
        let cq = Cq::new(head.pred, head.args, body).map_err(|e| syntax(line, col, e.to_string()))?;
        cqs.push(cq);
    }
    match cqs.len() {
        0 => Err(syntax(1, 1, "empty query")),
        1 => Ok(ParsedQuery::Cq(cqs.pop().unwrap())),
        _ => Ok(ParsedQuery::Ucq(Ucq::new(cqs)?)),
    }
}

/// Parses a single conjunctive query.
pub fn parse_cq(text: &str) -> Result<Cq> {
    parse_query(text)?.into_cq()
}

enum BodyItem {
    Atom(Atom),
    Filter(Filter),
}

fn body_item(p: &mut Parser) -> Result<BodyItem> {
    let is_atom = matches!(p.peek(), Tok::Ident(_)) && p.peek_at(1) == Some(&Tok::LParen);
    if is_atom {
        return Ok(BodyItem::Atom(p.atom(false)?));
    }
    let lhs = p.term(false)?;
    let op = match p.next() {
        Tok::Cmp(op) => op,
        _ => {
            p.pos -= 1;
            return Err(p.err("expected comparison operator"));
        }
    };
    let rhs = p.term(false)?;
    let flip = |op: CmpOp| match op {
        CmpOp::Lt => CmpOp::Gt,
        CmpOp::Le => CmpOp::Ge,
        CmpOp::Gt => CmpOp::Lt,
        CmpOp::Ge => CmpOp::Le,
        o => o,
    };
    match (lhs, rhs) {
        (Term::Var(var), Term::Const(value)) => Ok(BodyItem::Filter(Filter { var, op, value })),
        (Term::Const(value), Term::Var(var)) => Ok(BodyItem::Filter(Filter { var, op: flip(op), value })),
        _ => Err(p.err("comparisons must relate a variable and a constant")),
    }
}

/// Parses a mapping file: table declarations, view definitions and
/// assertions. Relations used but neither declared nor defined are base
/// tables whose columns are named after the variables of their first use.
pub fn parse_mappings(text: &str) -> Result<MappingSet> {
    let mut p = Parser::new(text)?;
    let mut set = MappingSet::default();
    let mut branches: BTreeMap<String, Vec<ViewBranch>> = BTreeMap::new();
    let mut view_order: Vec<String> = Vec::new();
    let mut uses: Vec<Atom> = Vec::new();
    p.skip_ends();
    while !p.at_eof() {
        let (line, col) = p.here();
        if matches!(p.peek(), Tok::Ident(s) if s == "table") && matches!(p.peek_at(1), Some(Tok::Ident(_))) {
            p.next();
            let name = p.ident()?;
            p.expect(Tok::LParen, "`(`")?;
            let mut cols = Vec::new();
            loop {
                cols.push(p.ident()?);
                if *p.peek() == Tok::Comma {
                    p.next();
                } else {
                    break;
                }
            }
            p.expect(Tok::RParen, "`)`")?;
            Parser::check_arity(&mut p.arities, &name, cols.len())?;
            set.tables.insert(name, cols);
        } else {
            let head = p.atom(true)?;
            match p.next() {
                Tok::Arrow => {
                    let source = p.atom(false)?;
                    uses.push(source.clone());
                    let m = MappingAssertion::new(head, source).map_err(|e| syntax(line, col, e.to_string()))?;
                    set.assertions.push(m);
                }
                Tok::Define => {
                    let mut body = Vec::new();
                    let mut filters = Vec::new();
                    loop {
                        match body_item(&mut p)? {
                            BodyItem::Atom(a) => body.push(a),
                            BodyItem::Filter(f) => filters.push(f),
                        }
                        if *p.peek() == Tok::Amp || *p.peek() == Tok::Comma {
                            p.next();
                        } else {
                            break;
                        }
                    }
                    uses.extend(body.iter().cloned());
                    if !branches.contains_key(&head.pred) {
                        view_order.push(head.pred.clone());
                    }
                    branches.entry(head.pred).or_default().push(ViewBranch {
                        head: head.args,
                        body,
                        filters,
                    });
                }
                _ => {
                    p.pos -= 1;
                    return Err(p.err("expected `<-` or `:=`"));
                }
            }
        }
        p.end_statement()?;
        p.skip_ends();
    }

    for name in view_order {
        let bs = branches.remove(&name).unwrap();
        let columns = column_names(&bs[0].head);
        let view = ViewDef::new(name.clone(), columns, bs)?;
        set.views.insert(name, view);
    }
    for a in uses {
        if !set.views.contains_key(&a.pred) && !set.tables.contains_key(&a.pred) {
            set.tables.insert(a.pred.clone(), column_names(&a.args));
        }
    }
    set.validate()?;
    Ok(set)
}

/// Variable names when they are distinct variables, else `c1..cn`.
fn column_names(terms: &[Term]) -> Vec<String> {
    let names: Vec<String> = terms
        .iter()
        .filter_map(|t| t.as_var().map(|v| v.0.clone()))
        .collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    if names.len() == terms.len() && sorted.len() == names.len() {
        names
    } else {
        (1..=terms.len()).map(|i| format!("c{i}")).collect()
    }
}

pub fn parse_tbox(text: &str) -> Result<Tbox> {
    let mut p = Parser::new(text)?;
    let mut axioms = Vec::new();
    p.skip_ends();
    while !p.at_eof() {
        let sub = p.ident()?;
        let kw = p.ident()?;
        let kind = match kw.as_str() {
            "subClassOf" => AxiomKind::SubClass,
            "subPropertyOf" => AxiomKind::SubProperty,
            other => {
                return Err(Error::InvalidTbox(format!(
                    "unsupported axiom keyword `{other}`; only atomic inclusions are allowed"
                )))
            }
        };
        let sup = p.ident()?;
        if *p.peek() != Tok::End {
            return Err(Error::InvalidTbox(format!(
                "right-hand side of `{sub} {kw}` must be an atomic name"
            )));
        }
        p.end_statement()?;
        p.skip_ends();
        axioms.push(Axiom { kind, sub, sup });
    }
    let tbox = Tbox { axioms };
    for ax in &tbox.axioms {
        for other in &tbox.axioms {
            for name in [&ax.sub, &ax.sup] {
                if (name == &other.sub || name == &other.sup) && ax.kind != other.kind {
                    return Err(Error::InvalidTbox(format!("`{name}` is used both as a concept and as a role")));
                }
            }
        }
    }
    Ok(tbox)
}
