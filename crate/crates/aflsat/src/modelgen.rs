//! Turns a satisfying assignment of ψ back into concrete arrays and
//! integers: an Eulerian path through the count multigraph yields the cell
//! order, input-constraint witnesses yield the cell values, and the result
//! is validated against the reference evaluator before it is ever reported.

use std::collections::BTreeMap;

use crate::ast::{Formula, Name, Sort};
use crate::encoder::{EncodingMap, GroupEncoding};
use crate::eval::{eval_formula, Interpretation};
use crate::lia::{eval_linexpr, LiaModel};
use crate::scm::replay;

/// Hard cap on materialized array lengths; a solver is free to pick huge
/// lengths for unconstrained arrays and we refuse to allocate them.
pub const MAX_ARRAY_LEN: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelGenError {
    #[error("model lacks a value for `{0}`")]
    MissingVariable(Name),
    #[error("no Eulerian path realizes the transition counts (encoder bug)")]
    NoEulerianPath,
    #[error("run length {run} does not match array length {len} (encoder bug)")]
    LengthMismatch { run: usize, len: i64 },
    #[error("model replay failed: {0}")]
    Replay(String),
    #[error("array length {0} exceeds the synthesis cap")]
    ArrayTooLarge(i64),
}

fn get(m: &LiaModel, v: &str) -> Result<i64, ModelGenError> {
    m.get(v)
        .copied()
        .ok_or_else(|| ModelGenError::MissingVariable(v.to_string()))
}

/// Eulerian path through the multigraph with each mode transition repeated
/// count-many times, starting at the initial state (Hierholzer's
/// algorithm). Returns the sequence of mode-transition indices.
pub fn extract_run(group: &GroupEncoding, m: &LiaModel) -> Result<Vec<usize>, ModelGenError> {
    let mg = &group.mode;
    let mut counts: Vec<i64> = Vec::with_capacity(mg.transitions.len());
    let mut total: i64 = 0;
    for v in &group.count_vars {
        let c = get(m, v)?;
        counts.push(c);
        total += c;
    }
    if total > MAX_ARRAY_LEN {
        return Err(ModelGenError::ArrayTooLarge(total));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); mg.n_states()];
    for (mt, t) in mg.transitions.iter().enumerate() {
        if counts[mt] > 0 {
            adj[t.from].push(mt);
        }
    }
    let mut cursor = vec![0usize; mg.n_states()];
    let mut stack: Vec<(usize, Option<usize>)> = vec![(mg.init, None)];
    let mut path: Vec<usize> = Vec::new();
    while let Some(&(v, via)) = stack.last() {
        let mut advanced = false;
        while cursor[v] < adj[v].len() {
            let mt = adj[v][cursor[v]];
            if counts[mt] > 0 {
                counts[mt] -= 1;
                stack.push((mg.transitions[mt].to, Some(mt)));
                advanced = true;
                break;
            }
            cursor[v] += 1;
        }
        if !advanced {
            stack.pop();
            if let Some(mt) = via {
                path.push(mt);
            }
        }
    }
    if counts.iter().any(|&c| c != 0) {
        return Err(ModelGenError::NoEulerianPath);
    }
    path.reverse();
    Ok(path)
}

/// Cell values for every position and tag of a group's run, read off the
/// input-constraint witness variables; unconstrained cells default to 0.
fn run_cells(
    group: &GroupEncoding,
    run: &[usize],
    m: &LiaModel,
) -> Result<Vec<Vec<i64>>, ModelGenError> {
    let n_tags = group.scm.n_tags.max(1);
    let mut cells = Vec::with_capacity(run.len());
    for &mt in run {
        let mut row = vec![0i64; n_tags];
        for (&tag, wv) in &group.witness_vars[mt] {
            row[tag] = get(m, wv)?;
        }
        cells.push(row);
    }
    Ok(cells)
}

/// Builds the full interpretation from a ψ-model: machine-group arrays from
/// Eulerian runs and witnesses, fold-free arrays from Ackermannized read
/// values (unconstrained cells 0), integers straight from the model.
pub fn synthesize(map: &EncodingMap, m: &LiaModel) -> Result<Interpretation, ModelGenError> {
    let mut sigma = Interpretation::default();
    for v in &map.int_vars {
        sigma.ints.insert(v.clone(), m.get(v).copied().unwrap_or(0));
    }
    for a in &map.empty_arrays {
        sigma.arrays.insert(a.clone(), Vec::new());
    }
    for g in &map.groups {
        let len = get(m, &g.len_var)?;
        if len > MAX_ARRAY_LEN {
            return Err(ModelGenError::ArrayTooLarge(len));
        }
        let run = extract_run(g, m)?;
        if run.len() as i64 != len {
            return Err(ModelGenError::LengthMismatch {
                run: run.len(),
                len,
            });
        }
        let cells = run_cells(g, &run, m)?;
        // Sanity: the run must replay against the machine's constraints
        // under the model environment.
        let scm_run: Vec<usize> = run.iter().map(|&mt| g.mode.transitions[mt].scm_t).collect();
        replay(&g.scm, &scm_run, &cells, m)
            .map_err(|e| ModelGenError::Replay(e.to_string()))?;
        for (name, tag) in &g.arrays {
            let content: Vec<i64> = cells.iter().map(|row| row[*tag]).collect();
            sigma.arrays.insert(name.clone(), content);
        }
    }
    for g in &map.ack_groups {
        let len = get(m, &g.len_var)?;
        if len > MAX_ARRAY_LEN {
            return Err(ModelGenError::ArrayTooLarge(len));
        }
        let mut content = vec![0i64; len.max(0) as usize];
        for (idx, val) in &g.reads {
            let i = eval_linexpr(idx, m)
                .map_err(|e| ModelGenError::MissingVariable(e.0.clone()))?;
            if i >= 0 && (i as usize) < content.len() {
                content[i as usize] = get(m, val)?;
            }
        }
        for name in &g.arrays {
            sigma.arrays.insert(name.clone(), content.clone());
        }
    }
    Ok(sigma)
}

/// Final gate before a SAT answer is reported: the reference evaluator must
/// accept the synthesized interpretation.
pub fn validate_model(f: &Formula, sigma: &Interpretation) -> bool {
    matches!(eval_formula(f, sigma), Ok(true))
}

// ---------------------------------------------------------------------------
// Model text format
// ---------------------------------------------------------------------------

/// Prints an interpretation in the `.afl-model` format:
/// `(model (a (seq 0 0 1 1)) (x 3))`, entries sorted by name.
pub fn print_model(sigma: &Interpretation) -> String {
    let mut out = String::from("(model");
    for (name, cells) in &sigma.arrays {
        out.push_str(&format!("\n  ({name} (seq"));
        for c in cells {
            out.push_str(&format!(" {c}"));
        }
        out.push_str("))");
    }
    for (name, v) in &sigma.ints {
        out.push_str(&format!("\n  ({name} {v})"));
    }
    out.push_str(")\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed model document: {0}")]
pub struct ModelParseError(pub String);

/// Parses the `.afl-model` format back. Entry sorts are taken from the
/// formula declarations when provided, else inferred from the shape.
pub fn parse_model_text(
    text: &str,
    decls: Option<&BTreeMap<Name, Sort>>,
) -> Result<Interpretation, ModelParseError> {
    use crate::parser::{Lexer, Sexp};
    let sexps =
        Lexer::new(text).parse_all().map_err(|e| ModelParseError(e.to_string()))?;
    let [Sexp::List(items, _)] = &sexps[..] else {
        return Err(ModelParseError("expected a single (model ...) form".into()));
    };
    match items.first() {
        Some(Sexp::Atom(a, _)) if a == "model" => {}
        _ => return Err(ModelParseError("expected (model ...)".into())),
    }
    let mut sigma = Interpretation::default();
    for entry in &items[1..] {
        let Sexp::List(pair, _) = entry else {
            return Err(ModelParseError("expected (name value) entries".into()));
        };
        let [Sexp::Atom(name, _), value] = &pair[..] else {
            return Err(ModelParseError("expected (name value) entries".into()));
        };
        match value {
            Sexp::Atom(v, _) => {
                let v: i64 = v
                    .parse()
                    .map_err(|_| ModelParseError(format!("bad integer `{v}`")))?;
                if decls.map_or(false, |d| d.get(name) == Some(&Sort::Array)) {
                    return Err(ModelParseError(format!("array `{name}` given an integer")));
                }
                sigma.ints.insert(name.clone(), v);
            }
            Sexp::List(seq, _) => {
                match seq.first() {
                    Some(Sexp::Atom(a, _)) if a == "seq" => {}
                    _ => return Err(ModelParseError("array values use (seq ...)".into())),
                }
                let mut cells = Vec::new();
                for c in &seq[1..] {
                    let Sexp::Atom(c, _) = c else {
                        return Err(ModelParseError("non-integer cell".into()));
                    };
                    cells.push(
                        c.parse()
                            .map_err(|_| ModelParseError(format!("bad integer `{c}`")))?,
                    );
                }
                sigma.arrays.insert(name.clone(), cells);
            }
        }
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_text_round_trip() {
        let mut sigma = Interpretation::default();
        sigma.arrays.insert("a".into(), vec![0, 0, 1, 1]);
        sigma.arrays.insert("b".into(), vec![]);
        sigma.ints.insert("x".into(), 3);
        sigma.ints.insert("y".into(), -7);
        let text = print_model(&sigma);
        assert!(text.starts_with("(model"));
        let back = parse_model_text(&text, None).unwrap();
        assert_eq!(back, sigma);
    }

    #[test]
    fn model_text_rejects_garbage() {
        assert!(parse_model_text("(mode)", None).is_err());
        assert!(parse_model_text("(model (a (vec 1)))", None).is_err());
        assert!(parse_model_text("(model (x true))", None).is_err());
    }
}
