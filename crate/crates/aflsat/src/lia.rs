//! Quantifier-free linear integer arithmetic formulas: the target language
//! of the encoding. Includes a deterministic SMT-LIB2 printer, a re-parser
//! for the printed subset, and direct evaluation under a model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::parser::{Lexer, Sexp};

pub type Name = String;

/// A linear expression: sum of coefficient * variable plus a constant.
/// Coefficients are never stored as zero.
#[derive(Debug, Clone, PartialEq, Eq, Default, PartialOrd, Ord)]
pub struct LinExpr {
    pub coeffs: BTreeMap<Name, i64>,
    pub constant: i64,
}

impl LinExpr {
    pub fn constant(n: i64) -> LinExpr {
        LinExpr {
            coeffs: BTreeMap::new(),
            constant: n,
        }
    }
    pub fn var(n: impl Into<Name>) -> LinExpr {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(n.into(), 1);
        LinExpr {
            coeffs,
            constant: 0,
        }
    }
    pub fn scaled_var(n: impl Into<Name>, c: i64) -> LinExpr {
        let mut e = LinExpr::constant(0);
        e.add_term(&n.into(), c);
        e
    }
    pub fn add_term(&mut self, var: &str, c: i64) {
        if c == 0 {
            return;
        }
        let entry = self.coeffs.entry(var.to_string()).or_insert(0);
        *entry = entry.checked_add(c).expect("coefficient overflow");
        if *entry == 0 {
            self.coeffs.remove(var);
        }
    }
    pub fn plus(mut self, other: &LinExpr) -> LinExpr {
        for (v, c) in &other.coeffs {
            self.add_term(v, *c);
        }
        self.constant = self
            .constant
            .checked_add(other.constant)
            .expect("constant overflow");
        self
    }
    pub fn minus(self, other: &LinExpr) -> LinExpr {
        self.plus(&other.clone().scale(-1))
    }
    pub fn scale(mut self, k: i64) -> LinExpr {
        if k == 0 {
            return LinExpr::constant(0);
        }
        for c in self.coeffs.values_mut() {
            *c = c.checked_mul(k).expect("coefficient overflow");
        }
        self.constant = self.constant.checked_mul(k).expect("constant overflow");
        self
    }
    pub fn plus_const(mut self, n: i64) -> LinExpr {
        self.constant = self.constant.checked_add(n).expect("constant overflow");
        self
    }
    pub fn is_const(&self) -> Option<i64> {
        if self.coeffs.is_empty() {
            Some(self.constant)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rel {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Rel {
    pub fn holds(self, l: i128, r: i128) -> bool {
        match self {
            Rel::Eq => l == r,
            Rel::Ne => l != r,
            Rel::Lt => l < r,
            Rel::Le => l <= r,
            Rel::Gt => l > r,
            Rel::Ge => l >= r,
        }
    }
    pub fn negated(self) -> Rel {
        match self {
            Rel::Eq => Rel::Ne,
            Rel::Ne => Rel::Eq,
            Rel::Lt => Rel::Ge,
            Rel::Le => Rel::Gt,
            Rel::Gt => Rel::Le,
            Rel::Ge => Rel::Lt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiaFormula {
    True,
    False,
    Atom(LinExpr, Rel, LinExpr),
    Not(Box<LiaFormula>),
    And(Vec<LiaFormula>),
    Or(Vec<LiaFormula>),
}

impl LiaFormula {
    pub fn atom(l: LinExpr, rel: Rel, r: LinExpr) -> LiaFormula {
        LiaFormula::Atom(l, rel, r)
    }
    pub fn eq(l: LinExpr, r: LinExpr) -> LiaFormula {
        LiaFormula::Atom(l, Rel::Eq, r)
    }
    pub fn and(items: Vec<LiaFormula>) -> LiaFormula {
        // Flatten nested conjunctions so that iterated `and` calls build a
        // wide vector instead of a deep binary tree.
        let mut flat = Vec::with_capacity(items.len());
        for f in items {
            match f {
                LiaFormula::True => {}
                LiaFormula::False => return LiaFormula::False,
                LiaFormula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => LiaFormula::True,
            1 => flat.pop().unwrap(),
            _ => LiaFormula::And(flat),
        }
    }
    pub fn or(items: Vec<LiaFormula>) -> LiaFormula {
        let mut flat = Vec::with_capacity(items.len());
        for f in items {
            match f {
                LiaFormula::False => {}
                LiaFormula::True => return LiaFormula::True,
                LiaFormula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => LiaFormula::False,
            1 => flat.pop().unwrap(),
            _ => LiaFormula::Or(flat),
        }
    }
    pub fn not(f: LiaFormula) -> LiaFormula {
        match f {
            LiaFormula::True => LiaFormula::False,
            LiaFormula::False => LiaFormula::True,
            LiaFormula::Atom(l, rel, r) => LiaFormula::Atom(l, rel.negated(), r),
            LiaFormula::Not(x) => *x,
            other => LiaFormula::Not(Box::new(other)),
        }
    }
    pub fn implies(a: LiaFormula, b: LiaFormula) -> LiaFormula {
        LiaFormula::or(vec![LiaFormula::not(a), b])
    }

    pub fn variables(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }
    fn collect_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            LiaFormula::True | LiaFormula::False => {}
            LiaFormula::Atom(l, _, r) => {
                out.extend(l.coeffs.keys().cloned());
                out.extend(r.coeffs.keys().cloned());
            }
            LiaFormula::Not(x) => x.collect_vars(out),
            LiaFormula::And(items) | LiaFormula::Or(items) => {
                for i in items {
                    i.collect_vars(out);
                }
            }
        }
    }

    /// Number of atoms; a rough size measure used in tests and reports.
    pub fn atom_count(&self) -> usize {
        match self {
            LiaFormula::True | LiaFormula::False => 0,
            LiaFormula::Atom(..) => 1,
            LiaFormula::Not(x) => x.atom_count(),
            LiaFormula::And(items) | LiaFormula::Or(items) => {
                items.iter().map(|i| i.atom_count()).sum()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

pub type LiaModel = BTreeMap<Name, i64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("model does not assign variable `{0}`")]
pub struct MissingVariable(pub Name);

pub fn eval_linexpr(e: &LinExpr, m: &LiaModel) -> Result<i128, MissingVariable> {
    let mut acc = e.constant as i128;
    for (v, c) in &e.coeffs {
        let val = *m.get(v).ok_or_else(|| MissingVariable(v.clone()))? as i128;
        acc += (*c as i128) * val;
    }
    Ok(acc)
}

pub fn eval_lia(f: &LiaFormula, m: &LiaModel) -> Result<bool, MissingVariable> {
    match f {
        LiaFormula::True => Ok(true),
        LiaFormula::False => Ok(false),
        LiaFormula::Atom(l, rel, r) => Ok(rel.holds(eval_linexpr(l, m)?, eval_linexpr(r, m)?)),
        LiaFormula::Not(x) => Ok(!eval_lia(x, m)?),
        LiaFormula::And(items) => {
            for i in items {
                if !eval_lia(i, m)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        LiaFormula::Or(items) => {
            for i in items {
                if eval_lia(i, m)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

// ---------------------------------------------------------------------------
// SMT-LIB2 printing
// ---------------------------------------------------------------------------

/// Prints the formula as a complete SMT-LIB2 script (logic QF_LIA) with one
/// `declare-const` per variable in sorted order. The output is a
/// deterministic function of the formula.
pub fn print_smt(f: &LiaFormula) -> String {
    let mut out = String::new();
    out.push_str("(set-logic QF_LIA)\n");
    for v in f.variables() {
        writeln!(out, "(declare-const {v} Int)").unwrap();
    }
    // One assert per top-level conjunct keeps individual terms small.
    match f {
        LiaFormula::And(items) => {
            for item in items {
                writeln!(out, "(assert {})", print_term(item)).unwrap();
            }
        }
        other => writeln!(out, "(assert {})", print_term(other)).unwrap(),
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

fn print_const(n: i64) -> String {
    if n < 0 {
        format!("(- {})", n.unsigned_abs())
    } else {
        n.to_string()
    }
}

fn print_linexpr(e: &LinExpr) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (v, c) in &e.coeffs {
        if *c == 1 {
            parts.push(v.clone());
        } else {
            parts.push(format!("(* {} {v})", print_const(*c)));
        }
    }
    if e.constant != 0 || parts.is_empty() {
        parts.push(print_const(e.constant));
    }
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        format!("(+ {})", parts.join(" "))
    }
}

fn print_term(f: &LiaFormula) -> String {
    match f {
        LiaFormula::True => "true".to_string(),
        LiaFormula::False => "false".to_string(),
        LiaFormula::Atom(l, rel, r) => {
            let op = match rel {
                Rel::Eq => "=",
                Rel::Ne => "distinct",
                Rel::Lt => "<",
                Rel::Le => "<=",
                Rel::Gt => ">",
                Rel::Ge => ">=",
            };
            format!("({op} {} {})", print_linexpr(l), print_linexpr(r))
        }
        LiaFormula::Not(x) => format!("(not {})", print_term(x)),
        LiaFormula::And(items) => {
            let body: Vec<String> = items.iter().map(print_term).collect();
            format!("(and {})", body.join(" "))
        }
        LiaFormula::Or(items) => {
            let body: Vec<String> = items.iter().map(print_term).collect();
            format!("(or {})", body.join(" "))
        }
    }
}

// ---------------------------------------------------------------------------
// Re-parsing the printed subset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("smt parse error: {0}")]
pub struct SmtParseError(pub String);

/// Parses scripts in the exact shape emitted by [`print_smt`]. Used to keep
/// the printer honest via round-trip tests.
pub fn parse_smt(text: &str) -> Result<LiaFormula, SmtParseError> {
    let sexps = Lexer::new(text)
        .parse_all()
        .map_err(|e| SmtParseError(e.to_string()))?;
    let mut asserts = Vec::new();
    for cmd in &sexps {
        let Sexp::List(items, _) = cmd else {
            return Err(SmtParseError("expected a command".into()));
        };
        match items.first().and_then(Sexp::atom) {
            Some("set-logic") | Some("declare-const") | Some("check-sat") | Some("get-model") => {}
            Some("assert") if items.len() == 2 => asserts.push(parse_term(&items[1])?),
            other => return Err(SmtParseError(format!("unexpected command {other:?}"))),
        }
    }
    if asserts.is_empty() {
        return Err(SmtParseError("no assert found".into()));
    }
    Ok(LiaFormula::and(asserts))
}

fn parse_term(s: &Sexp) -> Result<LiaFormula, SmtParseError> {
    match s {
        Sexp::Atom(a, _) => match a.as_str() {
            "true" => Ok(LiaFormula::True),
            "false" => Ok(LiaFormula::False),
            other => Err(SmtParseError(format!("unexpected atom `{other}`"))),
        },
        Sexp::List(items, _) => {
            let head = items
                .first()
                .and_then(Sexp::atom)
                .ok_or_else(|| SmtParseError("empty list".into()))?;
            match head {
                "=" | "distinct" | "<" | "<=" | ">" | ">=" => {
                    if items.len() != 3 {
                        return Err(SmtParseError(format!("`{head}` arity")));
                    }
                    let rel = match head {
                        "=" => Rel::Eq,
                        "distinct" => Rel::Ne,
                        "<" => Rel::Lt,
                        "<=" => Rel::Le,
                        ">" => Rel::Gt,
                        _ => Rel::Ge,
                    };
                    Ok(LiaFormula::Atom(
                        parse_expr(&items[1])?,
                        rel,
                        parse_expr(&items[2])?,
                    ))
                }
                "not" if items.len() == 2 => Ok(LiaFormula::Not(Box::new(parse_term(&items[1])?))),
                "and" | "or" => {
                    let mut body = Vec::new();
                    for i in &items[1..] {
                        body.push(parse_term(i)?);
                    }
                    Ok(if head == "and" {
                        LiaFormula::And(body)
                    } else {
                        LiaFormula::Or(body)
                    })
                }
                other => Err(SmtParseError(format!("unexpected operator `{other}`"))),
            }
        }
    }
}

/// Parses integer value s-expressions: `5`, `(- 5)`.
pub(crate) fn parse_smt_int(s: &Sexp) -> Option<i64> {
    match s {
        Sexp::Atom(a, _) => a.parse().ok(),
        Sexp::List(items, _) => {
            if items.len() == 2 && items[0].atom() == Some("-") {
                let n: i64 = items[1].atom()?.parse().ok()?;
                n.checked_neg()
            } else {
                None
            }
        }
    }
}

fn parse_expr(s: &Sexp) -> Result<LinExpr, SmtParseError> {
    match s {
        Sexp::Atom(a, _) => {
            if let Ok(n) = a.parse::<i64>() {
                Ok(LinExpr::constant(n))
            } else {
                Ok(LinExpr::var(a.clone()))
            }
        }
        Sexp::List(items, _) => {
            let head = items
                .first()
                .and_then(Sexp::atom)
                .ok_or_else(|| SmtParseError("empty expr".into()))?;
            match head {
                "+" => {
                    let mut acc = LinExpr::constant(0);
                    for i in &items[1..] {
                        acc = acc.plus(&parse_expr(i)?);
                    }
                    Ok(acc)
                }
                "-" if items.len() == 2 => {
                    if let Some(n) = parse_smt_int(s) {
                        Ok(LinExpr::constant(n))
                    } else {
                        Ok(parse_expr(&items[1])?.scale(-1))
                    }
                }
                "*" if items.len() == 3 => {
                    let l = parse_expr(&items[1])?;
                    let r = parse_expr(&items[2])?;
                    match (l.is_const(), r.is_const()) {
                        (Some(k), _) => Ok(r.scale(k)),
                        (_, Some(k)) => Ok(l.scale(k)),
                        _ => Err(SmtParseError("nonlinear product".into())),
                    }
                }
                other => Err(SmtParseError(format!("unexpected expr `{other}`"))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> LinExpr {
        LinExpr::var("x")
    }

    #[test]
    fn eval_atom() {
        let f = LiaFormula::atom(x(), Rel::Lt, LinExpr::constant(3));
        let mut m = LiaModel::new();
        m.insert("x".into(), 2);
        assert_eq!(eval_lia(&f, &m), Ok(true));
        m.insert("x".into(), 3);
        assert_eq!(eval_lia(&f, &m), Ok(false));
    }

    #[test]
    fn eval_contradiction() {
        let f = LiaFormula::and(vec![
            LiaFormula::atom(x(), Rel::Lt, LinExpr::constant(3)),
            LiaFormula::atom(x(), Rel::Gt, LinExpr::constant(3)),
        ]);
        for v in -5..5 {
            let mut m = LiaModel::new();
            m.insert("x".into(), v);
            assert_eq!(eval_lia(&f, &m), Ok(false));
        }
    }

    #[test]
    fn missing_variable_detected() {
        let f = LiaFormula::atom(x(), Rel::Eq, LinExpr::constant(0));
        assert_eq!(
            eval_lia(&f, &LiaModel::new()),
            Err(MissingVariable("x".into()))
        );
    }

    #[test]
    fn printer_is_deterministic() {
        let f = LiaFormula::and(vec![
            LiaFormula::atom(
                x().plus(&LinExpr::scaled_var("y", -2)).plus_const(7),
                Rel::Le,
                LinExpr::constant(0),
            ),
            LiaFormula::or(vec![
                LiaFormula::atom(LinExpr::var("y"), Rel::Ne, LinExpr::constant(-3)),
                LiaFormula::Not(Box::new(LiaFormula::atom(x(), Rel::Eq, x()))),
            ]),
        ]);
        assert_eq!(print_smt(&f), print_smt(&f.clone()));
        assert!(print_smt(&f).contains("(set-logic QF_LIA)"));
    }

    #[test]
    fn roundtrip() {
        let cases = vec![
            LiaFormula::atom(x(), Rel::Eq, LinExpr::constant(-5)),
            LiaFormula::and(vec![
                LiaFormula::atom(
                    x().plus(&LinExpr::scaled_var("y", 3)),
                    Rel::Ge,
                    LinExpr::constant(2),
                ),
                LiaFormula::or(vec![
                    LiaFormula::atom(LinExpr::var("z"), Rel::Ne, x()),
                    LiaFormula::True,
                ]),
            ]),
            LiaFormula::Not(Box::new(LiaFormula::And(vec![
                LiaFormula::Atom(x(), Rel::Lt, LinExpr::constant(0)),
                LiaFormula::Atom(x(), Rel::Gt, LinExpr::constant(0)),
            ]))),
            LiaFormula::True,
        ];
        for f in cases {
            let printed = print_smt(&f);
            let back = parse_smt(&printed).unwrap();
            // Compare via printing again: structural equality can differ on
            // flattening, printing is canonical.
            assert_eq!(print_smt(&back), printed);
        }
    }

    #[test]
    fn linexpr_arithmetic() {
        let e = x().plus(&x()).plus_const(4); // 2x + 4
        assert_eq!(e.coeffs["x"], 2);
        let z = e.clone().minus(&e);
        assert_eq!(z.is_const(), Some(0));
    }
}
