//! Concrete syntax for `.afl` files: a parenthesized prefix format in the
//! style of SMT-LIB2 commands, plus a pretty-printer that round-trips.
//!
//! Commands: `(declare-array a)`, `(declare-int x)`, `(assert B)`;
//! `(check-sat)` and `(get-model)` are accepted and ignored. Boolean terms
//! use `= < not and` (with `<= >= > or` as sugar), integer terms use
//! `+ select len` constants and variables (with `-` and constant `*` as
//! sugar), array terms are variables or `(store a T T)`, vector terms are
//! `(vec T ...)` or `(fold a V (branches (branch GRD UPD) ...))`.
//! Guard atoms compare `e`, `i`, `(c k)`, `s` against integer terms;
//! updates are `(inc (c k) n)`, `(set-s n)`, `skip`, `break`, `(seq ...)`.
//! `_` denotes a unique unconstrained integer variable. Comments run from
//! `;` to end of line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::ast::*;

/// A half-open byte range plus the 1-based line/column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub message: String,
    pub span: SourceSpan,
    pub line: usize,
    pub column: usize,
}

fn err<T>(message: impl Into<String>, span: SourceSpan) -> Result<T, ParseError> {
    Err(ParseError {
        message: message.into(),
        line: span.line,
        column: span.column,
        span,
    })
}

// ---------------------------------------------------------------------------
// S-expression layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum Sexp {
    Atom(String, SourceSpan),
    List(Vec<Sexp>, SourceSpan),
}

impl Sexp {
    pub(crate) fn span(&self) -> SourceSpan {
        match self {
            Sexp::Atom(_, s) | Sexp::List(_, s) => *s,
        }
    }
    pub(crate) fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a, _) => Some(a),
            _ => None,
        }
    }
}

pub(crate) struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn here(&self) -> SourceSpan {
        SourceSpan {
            start: self.pos,
            end: self.pos,
            line: self.line,
            column: self.col,
        }
    }

    fn bump(&mut self) {
        if self.src[self.pos] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.pos += 1;
    }

    fn skip_trivia(&mut self) {
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_whitespace() {
                self.bump();
            } else if c == b';' {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    pub(crate) fn parse_all(&mut self) -> Result<Vec<Sexp>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            if self.pos >= self.src.len() {
                return Ok(out);
            }
            out.push(self.parse_sexp()?);
        }
    }

    fn parse_sexp(&mut self) -> Result<Sexp, ParseError> {
        self.skip_trivia();
        let start = self.here();
        if self.pos >= self.src.len() {
            return err("unexpected end of input", start);
        }
        match self.src[self.pos] {
            b'(' => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    if self.pos >= self.src.len() {
                        return err("unclosed parenthesis", start);
                    }
                    if self.src[self.pos] == b')' {
                        self.bump();
                        let span = SourceSpan {
                            start: start.start,
                            end: self.pos,
                            ..start
                        };
                        return Ok(Sexp::List(items, span));
                    }
                    items.push(self.parse_sexp()?);
                }
            }
            b')' => err("unexpected `)`", start),
            _ => {
                let begin = self.pos;
                while self.pos < self.src.len() {
                    let c = self.src[self.pos];
                    if c.is_ascii_whitespace() || c == b'(' || c == b')' || c == b';' {
                        break;
                    }
                    self.bump();
                }
                let text = std::str::from_utf8(&self.src[begin..self.pos])
                    .expect("input is valid utf-8")
                    .to_string();
                let span = SourceSpan {
                    start: begin,
                    end: self.pos,
                    ..start
                };
                Ok(Sexp::Atom(text, span))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Translation to AST
// ---------------------------------------------------------------------------

const FORBIDDEN: &[&str] = &["forall", "exists", "concat"];

struct Ctx {
    decls: BTreeMap<Name, Sort>,
    /// Every atom appearing anywhere in the input; fresh wildcard names
    /// must avoid these so later declarations cannot clash.
    taken: BTreeSet<String>,
    next_wild: usize,
}

impl Ctx {
    fn fresh_wildcard(&mut self) -> Name {
        loop {
            let n = format!("_x{}", self.next_wild);
            self.next_wild += 1;
            if !self.taken.contains(&n) && !self.decls.contains_key(&n) {
                self.decls.insert(n.clone(), Sort::Int);
                return n;
            }
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    s != "_" && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '!')
}

fn parse_i64(s: &str) -> Option<i64> {
    if s == "-" {
        return None;
    }
    let body = s.strip_prefix('-').unwrap_or(s);
    if body.is_empty() || !body.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn collect_atoms(s: &Sexp, out: &mut BTreeSet<String>) {
    match s {
        Sexp::Atom(a, _) => {
            out.insert(a.clone());
        }
        Sexp::List(items, _) => {
            for i in items {
                collect_atoms(i, out);
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Formula, ParseError> {
    let sexps = Lexer::new(text).parse_all()?;
    let mut taken = BTreeSet::new();
    for s in &sexps {
        collect_atoms(s, &mut taken);
    }
    let mut ctx = Ctx {
        decls: BTreeMap::new(),
        taken,
        next_wild: 0,
    };
    let mut assertions = Vec::new();
    for cmd in &sexps {
        let Sexp::List(items, span) = cmd else {
            return err("expected a command list", cmd.span());
        };
        let head = items
            .first()
            .and_then(Sexp::atom)
            .ok_or(())
            .or_else(|_| err::<&str>("expected a command name", *span))?;
        match head {
            "declare-array" | "declare-int" => {
                if items.len() != 2 {
                    return err(format!("`{head}` takes one argument"), *span);
                }
                let name = items[1]
                    .atom()
                    .filter(|n| is_ident(n))
                    .ok_or(())
                    .or_else(|_| err::<&str>("expected an identifier", items[1].span()))?;
                let sort = if head == "declare-array" {
                    Sort::Array
                } else {
                    Sort::Int
                };
                if ctx.decls.insert(name.to_string(), sort).is_some() {
                    return err(format!("`{name}` is declared twice"), items[1].span());
                }
            }
            "assert" => {
                if items.len() != 2 {
                    return err("`assert` takes one argument", *span);
                }
                assertions.push(parse_bool(&items[1], &mut ctx)?);
            }
            "check-sat" | "get-model" => {}
            other if FORBIDDEN.contains(&other) => {
                return err(format!("`{other}` is not supported"), *span);
            }
            other => return err(format!("unknown command `{other}`"), *span),
        }
    }
    let f = Formula {
        decls: ctx.decls,
        assertions,
    };
    let errs = validate(&f);
    if let Some(e) = errs.first() {
        return err(
            format!("ill-formed formula: {e}"),
            SourceSpan {
                start: 0,
                end: text.len(),
                line: 1,
                column: 1,
            },
        );
    }
    Ok(f)
}

/// What kind of term an operand of `=` looks like, before committing.
enum Operand {
    Arr(ArrayTerm),
    Int(IntTerm),
    Vec(VectorTerm),
}

fn classify(s: &Sexp, ctx: &mut Ctx) -> Result<Operand, ParseError> {
    match s {
        Sexp::Atom(a, _) => {
            if ctx.decls.get(a.as_str()) == Some(&Sort::Array) {
                return Ok(Operand::Arr(ArrayTerm::Var(a.clone())));
            }
            Ok(Operand::Int(parse_int(s, ctx)?))
        }
        Sexp::List(items, _) => match items.first().and_then(Sexp::atom) {
            Some("store") => Ok(Operand::Arr(parse_array(s, ctx)?)),
            Some("vec") | Some("fold") => Ok(Operand::Vec(parse_vector(s, ctx)?)),
            _ => Ok(Operand::Int(parse_int(s, ctx)?)),
        },
    }
}

fn parse_bool(s: &Sexp, ctx: &mut Ctx) -> Result<BoolTerm, ParseError> {
    let Sexp::List(items, span) = s else {
        return err("expected a boolean term", s.span());
    };
    let head = items
        .first()
        .and_then(Sexp::atom)
        .ok_or(())
        .or_else(|_| err::<&str>("expected an operator", *span))?;
    let arity = items.len() - 1;
    match head {
        "=" => {
            if arity != 2 {
                return err("`=` takes two arguments", *span);
            }
            let l = classify(&items[1], ctx)?;
            let r = classify(&items[2], ctx)?;
            match (l, r) {
                (Operand::Arr(a), Operand::Arr(b)) => Ok(BoolTerm::ArrayEq(a, b)),
                (Operand::Vec(a), Operand::Vec(b)) => Ok(BoolTerm::VecEq(a, b)),
                (Operand::Vec(a), Operand::Int(t)) if a.arity() == 1 => {
                    Ok(BoolTerm::VecEq(a, VectorTerm::Tuple(vec![t])))
                }
                (Operand::Int(t), Operand::Vec(b)) if b.arity() == 1 => {
                    Ok(BoolTerm::VecEq(VectorTerm::Tuple(vec![t]), b))
                }
                (Operand::Int(a), Operand::Int(b)) => Ok(BoolTerm::IntEq(a, b)),
                _ => err("`=` operands have different sorts", *span),
            }
        }
        "<" | ">" | "<=" | ">=" | "!=" => {
            if arity != 2 {
                return err(format!("`{head}` takes two arguments"), *span);
            }
            let l = parse_int(&items[1], ctx)?;
            let r = parse_int(&items[2], ctx)?;
            Ok(match head {
                "<" => BoolTerm::IntLt(l, r),
                ">" => BoolTerm::IntLt(r, l),
                "<=" => BoolTerm::not(BoolTerm::IntLt(r, l)),
                ">=" => BoolTerm::not(BoolTerm::IntLt(l, r)),
                _ => BoolTerm::not(BoolTerm::IntEq(l, r)),
            })
        }
        "not" => {
            if arity != 1 {
                return err("`not` takes one argument", *span);
            }
            Ok(BoolTerm::not(parse_bool(&items[1], ctx)?))
        }
        "and" | "or" => {
            if arity < 2 {
                return err(format!("`{head}` takes at least two arguments"), *span);
            }
            let mut terms = Vec::new();
            for it in &items[1..] {
                terms.push(parse_bool(it, ctx)?);
            }
            let mut acc = terms.pop().expect("at least two operands");
            while let Some(t) = terms.pop() {
                acc = if head == "and" {
                    BoolTerm::and(t, acc)
                } else {
                    // a \/ b == not (not a /\ not b)
                    BoolTerm::not(BoolTerm::and(BoolTerm::not(t), BoolTerm::not(acc)))
                };
            }
            Ok(acc)
        }
        other if FORBIDDEN.contains(&other) => err(format!("`{other}` is not supported"), *span),
        other => err(format!("unknown boolean operator `{other}`"), *span),
    }
}

fn parse_array(s: &Sexp, ctx: &mut Ctx) -> Result<ArrayTerm, ParseError> {
    match s {
        Sexp::Atom(a, span) => {
            if ctx.decls.get(a.as_str()) == Some(&Sort::Array) {
                Ok(ArrayTerm::Var(a.clone()))
            } else {
                err(format!("`{a}` is not a declared array"), *span)
            }
        }
        Sexp::List(items, span) => {
            if items.first().and_then(Sexp::atom) != Some("store") || items.len() != 4 {
                return err("expected `(store a T T)`", *span);
            }
            let base = items[1]
                .atom()
                .filter(|n| ctx.decls.get(*n) == Some(&Sort::Array))
                .ok_or(())
                .or_else(|_| err::<&str>("`store` base must be a declared array", items[1].span()))?
                .to_string();
            let index = parse_int(&items[2], ctx)?;
            let value = parse_int(&items[3], ctx)?;
            Ok(ArrayTerm::Write {
                base,
                index: Box::new(index),
                value: Box::new(value),
            })
        }
    }
}

fn parse_int(s: &Sexp, ctx: &mut Ctx) -> Result<IntTerm, ParseError> {
    match s {
        Sexp::Atom(a, span) => {
            if a == "_" {
                return Ok(IntTerm::Var(ctx.fresh_wildcard()));
            }
            if let Some(n) = parse_i64(a) {
                return Ok(IntTerm::Const(n));
            }
            if is_ident(a) {
                match ctx.decls.get(a.as_str()) {
                    Some(Sort::Int) => Ok(IntTerm::Var(a.clone())),
                    Some(Sort::Array) => err(format!("`{a}` is an array, not an integer"), *span),
                    None => err(format!("undeclared identifier `{a}`"), *span),
                }
            } else {
                err(format!("cannot parse `{a}` as an integer term"), *span)
            }
        }
        Sexp::List(items, span) => {
            let head = items
                .first()
                .and_then(Sexp::atom)
                .ok_or(())
                .or_else(|_| err::<&str>("expected an integer operator", *span))?;
            let arity = items.len() - 1;
            match head {
                "+" => {
                    if arity < 2 {
                        return err("`+` takes at least two arguments", *span);
                    }
                    let mut acc = parse_int(&items[1], ctx)?;
                    for it in &items[2..] {
                        acc = IntTerm::add(acc, parse_int(it, ctx)?);
                    }
                    Ok(acc)
                }
                "-" => match arity {
                    1 => Ok(IntTerm::Mul(-1, Box::new(parse_int(&items[1], ctx)?))),
                    2 => Ok(IntTerm::add(
                        parse_int(&items[1], ctx)?,
                        IntTerm::Mul(-1, Box::new(parse_int(&items[2], ctx)?)),
                    )),
                    _ => err("`-` takes one or two arguments", *span),
                },
                "*" => {
                    if arity != 2 {
                        return err("`*` takes two arguments", *span);
                    }
                    let l = parse_int(&items[1], ctx)?;
                    let r = parse_int(&items[2], ctx)?;
                    match (l, r) {
                        (IntTerm::Const(n), t) | (t, IntTerm::Const(n)) => {
                            Ok(IntTerm::Mul(n, Box::new(t)))
                        }
                        _ => err("`*` requires one constant operand", *span),
                    }
                }
                "select" => {
                    if arity != 2 {
                        return err("`select` takes two arguments", *span);
                    }
                    let a = items[1]
                        .atom()
                        .filter(|n| ctx.decls.get(*n) == Some(&Sort::Array))
                        .ok_or(())
                        .or_else(|_| {
                            err::<&str>("`select` needs a declared array", items[1].span())
                        })?
                        .to_string();
                    Ok(IntTerm::Read(a, Box::new(parse_int(&items[2], ctx)?)))
                }
                "len" => {
                    if arity != 1 {
                        return err("`len` takes one argument", *span);
                    }
                    let a = items[1]
                        .atom()
                        .filter(|n| ctx.decls.get(*n) == Some(&Sort::Array))
                        .ok_or(())
                        .or_else(|_| err::<&str>("`len` needs a declared array", items[1].span()))?
                        .to_string();
                    Ok(IntTerm::Len(a))
                }
                other if FORBIDDEN.contains(&other) => {
                    err(format!("`{other}` is not supported"), *span)
                }
                other => err(format!("unknown integer operator `{other}`"), *span),
            }
        }
    }
}

fn parse_vector(s: &Sexp, ctx: &mut Ctx) -> Result<VectorTerm, ParseError> {
    let Sexp::List(items, span) = s else {
        // A bare integer term is an arity-1 vector.
        return Ok(VectorTerm::Tuple(vec![parse_int(s, ctx)?]));
    };
    match items.first().and_then(Sexp::atom) {
        Some("vec") => {
            if items.len() < 2 {
                return err("`vec` takes at least one component", *span);
            }
            let mut ts = Vec::new();
            for it in &items[1..] {
                ts.push(parse_int(it, ctx)?);
            }
            Ok(VectorTerm::Tuple(ts))
        }
        Some("fold") => {
            if items.len() != 4 {
                return err("expected `(fold a V (branches ...))`", *span);
            }
            let array = items[1]
                .atom()
                .filter(|n| ctx.decls.get(*n) == Some(&Sort::Array))
                .ok_or(())
                .or_else(|_| err::<&str>("`fold` needs a declared array", items[1].span()))?
                .to_string();
            let init = parse_vector(&items[2], ctx)?;
            let arity = init.arity();
            let func = parse_branches(&items[3], arity, ctx)?;
            Ok(VectorTerm::Fold {
                array,
                init: Box::new(init),
                func,
            })
        }
        _ => Ok(VectorTerm::Tuple(vec![parse_int(s, ctx)?])),
    }
}

fn parse_branches(s: &Sexp, arity: usize, ctx: &mut Ctx) -> Result<FoldFunction, ParseError> {
    let Sexp::List(items, span) = s else {
        return err("expected `(branches ...)`", s.span());
    };
    if items.first().and_then(Sexp::atom) != Some("branches") {
        return err("expected `(branches ...)`", *span);
    }
    let mut branches = Vec::new();
    for b in &items[1..] {
        let Sexp::List(bi, bspan) = b else {
            return err("expected `(branch GRD UPD)`", b.span());
        };
        if bi.first().and_then(Sexp::atom) != Some("branch") || bi.len() != 3 {
            return err("expected `(branch GRD UPD)`", *bspan);
        }
        let mut guard = Vec::new();
        parse_guard(&bi[1], ctx, &mut guard)?;
        let mut updates = Vec::new();
        parse_update(&bi[2], ctx, &mut updates)?;
        branches.push(Branch { guard, updates });
    }
    Ok(FoldFunction { arity, branches })
}

fn parse_guard_lhs(s: &Sexp) -> Result<GuardLhs, ParseError> {
    match s {
        Sexp::Atom(a, span) => match a.as_str() {
            "e" => Ok(GuardLhs::Elem),
            "i" => Ok(GuardLhs::Index),
            "s" => Ok(GuardLhs::State),
            _ => err("guard compares `e`, `i`, `(c k)`, or `s`", *span),
        },
        Sexp::List(items, span) => {
            if items.len() == 2 && items[0].atom() == Some("c") {
                if let Some(k) = items[1].atom().and_then(parse_i64) {
                    if k >= 1 {
                        return Ok(GuardLhs::Counter(k as usize));
                    }
                }
            }
            err("expected `(c k)` with k >= 1", *span)
        }
    }
}

fn parse_guard(s: &Sexp, ctx: &mut Ctx, out: &mut Vec<GuardAtom>) -> Result<(), ParseError> {
    if s.atom() == Some("true") {
        return Ok(());
    }
    let Sexp::List(items, span) = s else {
        return err("expected a guard", s.span());
    };
    let head = items
        .first()
        .and_then(Sexp::atom)
        .ok_or(())
        .or_else(|_| err::<&str>("expected a guard operator", *span))?;
    match head {
        "and" => {
            for it in &items[1..] {
                parse_guard(it, ctx, out)?;
            }
            Ok(())
        }
        "=" | "<" | ">" | "!=" | "<=" | ">=" => {
            if items.len() != 3 {
                return err(format!("guard `{head}` takes two arguments"), *span);
            }
            let lhs = parse_guard_lhs(&items[1])?;
            let rhs = parse_int(&items[2], ctx)?;
            let (cmp, rhs) = match head {
                "=" => (Cmp::Eq, rhs),
                "<" => (Cmp::Lt, rhs),
                ">" => (Cmp::Gt, rhs),
                "!=" => (Cmp::Ne, rhs),
                "<=" => (Cmp::Lt, IntTerm::add(rhs, IntTerm::Const(1))),
                _ => (Cmp::Gt, IntTerm::add(rhs, IntTerm::Const(-1))),
            };
            out.push(GuardAtom { lhs, cmp, rhs });
            Ok(())
        }
        other => err(format!("unknown guard operator `{other}`"), *span),
    }
}

fn parse_update(s: &Sexp, ctx: &mut Ctx, out: &mut Vec<UpdateAtom>) -> Result<(), ParseError> {
    match s {
        Sexp::Atom(a, span) => match a.as_str() {
            "skip" => {
                out.push(UpdateAtom::Skip);
                Ok(())
            }
            "break" => {
                out.push(UpdateAtom::Break);
                Ok(())
            }
            _ => err("expected an update", *span),
        },
        Sexp::List(items, span) => {
            let head = items
                .first()
                .and_then(Sexp::atom)
                .ok_or(())
                .or_else(|_| err::<&str>("expected an update operator", *span))?;
            match head {
                "seq" => {
                    for it in &items[1..] {
                        parse_update(it, ctx, out)?;
                    }
                    Ok(())
                }
                "inc" => {
                    if items.len() != 3 {
                        return err("expected `(inc (c k) n)`", *span);
                    }
                    let GuardLhs::Counter(k) = parse_guard_lhs(&items[1])? else {
                        return err("`inc` updates a counter `(c k)`", items[1].span());
                    };
                    let n = items[2]
                        .atom()
                        .and_then(parse_i64)
                        .ok_or(())
                        .or_else(|_| err::<i64>("`inc` amount must be a constant", items[2].span()))?;
                    out.push(UpdateAtom::CtrAdd(k, n));
                    Ok(())
                }
                "set-s" => {
                    if items.len() != 2 {
                        return err("expected `(set-s n)`", *span);
                    }
                    let n = items[1]
                        .atom()
                        .and_then(parse_i64)
                        .ok_or(())
                        .or_else(|_| err::<i64>("state must be a constant", items[1].span()))?;
                    out.push(UpdateAtom::SetState(n));
                    Ok(())
                }
                other => err(format!("unknown update `{other}`"), *span),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

pub fn print(f: &Formula) -> String {
    let mut out = String::new();
    for (name, sort) in &f.decls {
        match sort {
            Sort::Array => writeln!(out, "(declare-array {name})").unwrap(),
            Sort::Int => writeln!(out, "(declare-int {name})").unwrap(),
        }
    }
    for a in &f.assertions {
        writeln!(out, "(assert {})", print_bool(a)).unwrap();
    }
    out
}

fn print_bool(b: &BoolTerm) -> String {
    match b {
        BoolTerm::ArrayEq(l, r) => format!("(= {} {})", print_array(l), print_array(r)),
        BoolTerm::IntEq(l, r) => format!("(= {} {})", print_int(l), print_int(r)),
        BoolTerm::IntLt(l, r) => format!("(< {} {})", print_int(l), print_int(r)),
        BoolTerm::Not(x) => format!("(not {})", print_bool(x)),
        BoolTerm::And(l, r) => format!("(and {} {})", print_bool(l), print_bool(r)),
        BoolTerm::VecEq(l, r) => format!("(= {} {})", print_vector(l), print_vector(r)),
    }
}

fn print_array(a: &ArrayTerm) -> String {
    match a {
        ArrayTerm::Var(n) => n.clone(),
        ArrayTerm::Write { base, index, value } => {
            format!("(store {base} {} {})", print_int(index), print_int(value))
        }
    }
}

fn print_int(t: &IntTerm) -> String {
    match t {
        IntTerm::Const(n) => n.to_string(),
        IntTerm::Var(n) => n.clone(),
        IntTerm::Add(l, r) => format!("(+ {} {})", print_int(l), print_int(r)),
        IntTerm::Mul(n, x) => format!("(* {n} {})", print_int(x)),
        IntTerm::Read(a, i) => format!("(select {a} {})", print_int(i)),
        IntTerm::Len(a) => format!("(len {a})"),
    }
}

fn print_vector(v: &VectorTerm) -> String {
    match v {
        VectorTerm::Tuple(ts) => {
            let body: Vec<String> = ts.iter().map(print_int).collect();
            format!("(vec {})", body.join(" "))
        }
        VectorTerm::Fold { array, init, func } => {
            let mut brs = String::new();
            for b in &func.branches {
                let guard = if b.guard.is_empty() {
                    "true".to_string()
                } else {
                    let atoms: Vec<String> = b.guard.iter().map(print_guard_atom).collect();
                    if atoms.len() == 1 {
                        atoms.into_iter().next().unwrap()
                    } else {
                        format!("(and {})", atoms.join(" "))
                    }
                };
                let upds: Vec<String> = b.updates.iter().map(print_update).collect();
                let upd = if upds.len() == 1 {
                    upds.into_iter().next().unwrap()
                } else {
                    format!("(seq {})", upds.join(" "))
                };
                write!(brs, " (branch {guard} {upd})").unwrap();
            }
            format!("(fold {array} {} (branches{brs}))", print_vector(init))
        }
    }
}

fn print_guard_atom(g: &GuardAtom) -> String {
    let lhs = match g.lhs {
        GuardLhs::Elem => "e".to_string(),
        GuardLhs::Index => "i".to_string(),
        GuardLhs::Counter(k) => format!("(c {k})"),
        GuardLhs::State => "s".to_string(),
    };
    let op = match g.cmp {
        Cmp::Lt => "<",
        Cmp::Gt => ">",
        Cmp::Eq => "=",
        Cmp::Ne => "!=",
    };
    format!("({op} {lhs} {})", print_int(&g.rhs))
}

fn print_update(u: &UpdateAtom) -> String {
    match u {
        UpdateAtom::CtrAdd(k, n) => format!("(inc (c {k}) {n})"),
        UpdateAtom::SetState(n) => format!("(set-s {n})"),
        UpdateAtom::Skip => "skip".to_string(),
        UpdateAtom::Break => "break".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_formula() {
        let f = parse("(assert (= 0 0))").unwrap();
        assert!(f.decls.is_empty());
        assert_eq!(
            f.assertions,
            vec![BoolTerm::IntEq(IntTerm::Const(0), IntTerm::Const(0))]
        );
    }

    #[test]
    fn boundedness_example() {
        let text = "\
(declare-array a)
(declare-int l)
(declare-int u)
(assert (= (fold a (vec 0) (branches (branch (and (>= e l) (<= e u)) skip))) (len a)))
(check-sat)
";
        let f = parse(text).unwrap();
        assert_eq!(f.assertions.len(), 1);
        let BoolTerm::VecEq(l, r) = &f.assertions[0] else {
            panic!("expected VecEq");
        };
        assert!(matches!(l, VectorTerm::Fold { .. }));
        assert_eq!(r, &VectorTerm::Tuple(vec![IntTerm::Len("a".to_string())]));
    }

    #[test]
    fn forall_rejected() {
        let e = parse("(assert (forall x (= x x)))").unwrap_err();
        assert!(e.message.contains("not supported"), "{}", e.message);
    }

    #[test]
    fn undeclared_rejected() {
        let e = parse("(assert (= x 0))").unwrap_err();
        assert!(e.message.contains("undeclared"), "{}", e.message);
    }

    #[test]
    fn wildcard_becomes_fresh_var() {
        let text = "\
(declare-array a)
(assert (= (fold a (vec 0 0) (branches (branch (= e 0) (inc (c 1) 1)))) (vec _ 3)))
";
        let f = parse(text).unwrap();
        // Fresh variable declared with Int sort.
        assert!(f.decls.keys().any(|k| k.starts_with("_x")));
        // And the formula validates.
        assert!(validate(&f).is_empty());
    }

    #[test]
    fn spans_within_bounds() {
        let text = "(assert (= y 0))";
        let e = parse(text).unwrap_err();
        assert!(e.span.start <= e.span.end && e.span.end <= text.len());
        assert_eq!(&text[e.span.start..e.span.end], "y");
    }

    fn roundtrip(text: &str) {
        let f = parse(text).unwrap();
        let printed = print(&f);
        let f2 = parse(&printed).unwrap();
        assert_eq!(f, f2, "round-trip failed for:\n{printed}");
    }

    #[test]
    fn roundtrip_examples() {
        roundtrip("(assert (= 0 0))");
        roundtrip(
            "(declare-array a)(declare-int n)\
             (assert (= (fold a (vec 0 0 0) (branches \
               (branch (and (= s 0) (= e 0)) (inc (c 1) 1)) \
               (branch (and (= s 0) (= e 1)) (seq (inc (c 2) 1) (set-s 1))) \
               (branch (and (= s 1) (= e 1)) (inc (c 2) 1)))) \
               (vec (len a) n n)))",
        );
        roundtrip(
            "(declare-array a)(declare-int x)\
             (assert (= (store a 0 x) a))(assert (< (+ x -3) (select a 2)))",
        );
        roundtrip("(declare-int z)(assert (= z -5))");
    }

    #[test]
    fn empty_document_roundtrip() {
        let f = parse("").unwrap();
        assert_eq!(print(&f), "");
    }

    #[test]
    fn negative_constants_preserved() {
        let f = parse("(declare-int x)(assert (= x -7))").unwrap();
        let printed = print(&f);
        assert!(printed.contains("-7"));
        assert_eq!(parse(&printed).unwrap(), f);
    }
}
