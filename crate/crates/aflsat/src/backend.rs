//! Discharges linear-integer-arithmetic queries: a client for an external
//! SMT solver speaking SMT-LIB2 over a child process's standard streams,
//! plus a built-in bounded-enumeration fallback so the test suite can run
//! without external dependencies. Models returned by the external process
//! are always re-checked by direct evaluation.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::lia::*;
use crate::parser::{Lexer, Sexp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    External,
    Fallback,
    /// External if it can be spawned, otherwise fallback.
    Auto,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Solver command line (split on whitespace). `None` selects the
    /// `AFL_SOLVER_CMD` environment variable or the bundled Node wrapper.
    pub command: Option<String>,
    pub timeout: Duration,
    pub choice: BackendChoice,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            command: None,
            timeout: Duration::from_secs(60),
            choice: BackendChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    Sat(LiaModel),
    Unsat {
        /// False when the answer comes from the bounded fallback on a
        /// formula outside its complete fragment: no model was found within
        /// bounds, but that is not a proof.
        complete: bool,
    },
    Unknown(String),
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("could not spawn solver `{cmd}`: {source}")]
    SolverSpawn {
        cmd: String,
        source: std::io::Error,
    },
    #[error("solver protocol error: {0}")]
    Protocol(String),
    #[error("solver timed out after {0:?}")]
    Timeout(Duration),
}

const SENTINEL: &str = "AFLSAT_QUERY_DONE";

// ---------------------------------------------------------------------------
// External solver client with process reuse
// ---------------------------------------------------------------------------

struct Server {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    cmd: String,
}

impl Server {
    fn spawn(cmd: &str) -> Result<Server, BackendError> {
        let parts: Vec<&str> = cmd.split_whitespace().collect();
        let (prog, args) = parts.split_first().ok_or_else(|| BackendError::SolverSpawn {
            cmd: cmd.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| BackendError::SolverSpawn {
                cmd: cmd.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, lines) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Server {
            child,
            stdin,
            lines,
            cmd: cmd.to_string(),
        })
    }

    /// Sends one SMT-LIB2 script and returns the response lines up to the
    /// sentinel. The wrapper evaluates each framed chunk in a fresh solver
    /// context, so queries are independent despite process reuse.
    fn query(&mut self, script: &str, timeout: Duration) -> Result<Vec<String>, BackendError> {
        // Discard anything still buffered from a previous exchange (some
        // solvers emit stray diagnostics after their answer).
        while self.lines.try_recv().is_ok() {}
        let framed = format!("{script}(echo \"{SENTINEL}\")\n(reset)\n");
        self.stdin
            .write_all(framed.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| BackendError::Protocol(format!("write failed: {e}")))?;
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        loop {
            let remaining = deadline
                .checked_duration_since(Instant::now())
                .ok_or(BackendError::Timeout(timeout))?;
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => {
                    if line.trim() == SENTINEL {
                        return Ok(out);
                    }
                    out.push(line);
                }
                Ok(Err(e)) => {
                    return Err(BackendError::Protocol(format!("read failed: {e}")));
                }
                Err(RecvTimeoutError::Timeout) => return Err(BackendError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(BackendError::Protocol("solver process exited".into()));
                }
            }
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.stdin.write_all(b"(exit)\n");
        let _ = self.stdin.flush();
        // Give it a moment, then make sure it is gone.
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

static POOL: Mutex<Vec<Server>> = Mutex::new(Vec::new());

fn default_command() -> String {
    if let Ok(cmd) = std::env::var("AFL_SOLVER_CMD") {
        if !cmd.trim().is_empty() {
            return cmd;
        }
    }
    let local = std::path::Path::new("tools/z3-server.mjs");
    if local.exists() {
        return format!("node {}", local.display());
    }
    let bundled = concat!(env!("CARGO_MANIFEST_DIR"), "/../../tools/z3-server.mjs");
    format!("node {bundled}")
}

fn external_solve(psi: &LiaFormula, cfg: &SolverConfig) -> Result<SolveResult, BackendError> {
    let cmd = cfg.command.clone().unwrap_or_else(default_command);
    // The canned QF_LIA tactic exhausts the WASM build's fixed heap on
    // large queries; a light preprocessing pipeline in front of the plain
    // smt core handles them and is much faster on large unsat instances.
    let script = print_smt(psi).replace(
        "(check-sat)",
        "(check-sat-using (then simplify propagate-values solve-eqs smt))",
    );
    // The WASM solver build occasionally garbles a well-formed script right
    // after startup (a race in its threaded runtime surfacing as a spurious
    // parse error), so protocol-level failures get a fresh process and one
    // more try. Timeouts are final.
    let mut last_err = None;
    for _ in 0..3 {
        let mut server = {
            let mut pool = POOL.lock().unwrap();
            match pool.iter().position(|s| s.cmd == cmd) {
                Some(i) => pool.swap_remove(i),
                None => Server::spawn(&cmd)?,
            }
        };
        match server.query(&script, cfg.timeout) {
            Ok(lines) => match parse_solver_output(psi, &lines) {
                Ok(result) => {
                    POOL.lock().unwrap().push(server);
                    return Ok(result);
                }
                Err(e) => last_err = Some(e), // server dropped, retry fresh
            },
            Err(e @ BackendError::Timeout(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn parse_solver_output(
    psi: &LiaFormula,
    lines: &[String],
) -> Result<SolveResult, BackendError> {
    // `unsupported` is front-end noise for commands a solver build does not
    // know (never a final answer); skip it wherever it appears.
    let mut iter = lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && *l != "unsupported");
    let status = iter
        .next()
        .ok_or_else(|| BackendError::Protocol("empty solver response".into()))?;
    match status {
        "unsat" => Ok(SolveResult::Unsat { complete: true }),
        "unknown" => Ok(SolveResult::Unknown("solver returned unknown".into())),
        "sat" => {
            let rest: String = lines
                .iter()
                .skip_while(|l| l.trim() != "sat")
                .skip(1)
                .map(|l| l.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let mut model = parse_model(&rest)?;
            // Default any unassigned variable to 0, then never trust the
            // external process: re-check the model by direct evaluation.
            for v in psi.variables() {
                model.entry(v).or_insert(0);
            }
            match eval_lia(psi, &model) {
                Ok(true) => Ok(SolveResult::Sat(model)),
                Ok(false) => Err(BackendError::Protocol(
                    "solver model does not satisfy the query".into(),
                )),
                Err(e) => Err(BackendError::Protocol(format!("model re-check failed: {e}"))),
            }
        }
        other if other.starts_with("(error") => Err(BackendError::Protocol(format!(
            "solver error: {}",
            lines.join(" ")
        ))),
        other => Err(BackendError::Protocol(format!(
            "unexpected solver answer `{other}`"
        ))),
    }
}

fn parse_model(text: &str) -> Result<LiaModel, BackendError> {
    let mut model = LiaModel::new();
    // Z3 may print an error s-expression instead of a model in corner
    // cases; treat a completely unparsable body as empty only if empty.
    if text.trim().is_empty() {
        return Ok(model);
    }
    let sexps = Lexer::new(text)
        .parse_all()
        .map_err(|e| BackendError::Protocol(format!("unparsable model: {e}")))?;
    for s in &sexps {
        let Sexp::List(items, _) = s else { continue };
        // Either `(model (define-fun ...) ...)` or a bare list of them.
        let entries: Vec<&Sexp> = if items.first().and_then(Sexp::atom) == Some("model") {
            items[1..].iter().collect()
        } else {
            items.iter().collect()
        };
        for e in entries {
            let Sexp::List(def, _) = e else { continue };
            if def.first().and_then(Sexp::atom) != Some("define-fun") || def.len() != 5 {
                continue;
            }
            let name = def[1]
                .atom()
                .ok_or_else(|| BackendError::Protocol("bad define-fun name".into()))?;
            let value = crate::lia::parse_smt_int(&def[4]).ok_or_else(|| {
                BackendError::Protocol(format!("non-integer model value for {name}"))
            })?;
            model.insert(name.to_string(), value);
        }
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Bounded fallback solver
// ---------------------------------------------------------------------------

/// Atoms where each side mentions at most one variable, with coefficient
/// 1: for these, exhaustive search within the computed box is complete
/// (order the model values; gaps beyond the largest constant magnitude can
/// be shrunk to 1 without changing any atom's truth).
fn is_simple_fragment(f: &LiaFormula) -> bool {
    match f {
        LiaFormula::True | LiaFormula::False => true,
        LiaFormula::Atom(l, _, r) => {
            let ok = |e: &LinExpr| e.coeffs.len() <= 1 && e.coeffs.values().all(|&c| c == 1);
            ok(l) && ok(r)
        }
        LiaFormula::Not(x) => is_simple_fragment(x),
        LiaFormula::And(items) | LiaFormula::Or(items) => items.iter().all(is_simple_fragment),
    }
}

fn max_const(f: &LiaFormula) -> i64 {
    match f {
        LiaFormula::True | LiaFormula::False => 0,
        LiaFormula::Atom(l, _, r) => {
            let m = |e: &LinExpr| {
                e.constant
                    .unsigned_abs()
                    .max(e.coeffs.values().map(|c| c.unsigned_abs()).max().unwrap_or(0))
            };
            m(l).max(m(r)).min(i64::MAX as u64) as i64
        }
        LiaFormula::Not(x) => max_const(x),
        LiaFormula::And(items) | LiaFormula::Or(items) => {
            items.iter().map(max_const).max().unwrap_or(0)
        }
    }
}

/// Three-valued evaluation under a partial assignment.
fn tv_eval(f: &LiaFormula, m: &LiaModel) -> Option<bool> {
    match f {
        LiaFormula::True => Some(true),
        LiaFormula::False => Some(false),
        LiaFormula::Atom(l, rel, r) => {
            let value = |e: &LinExpr| -> Option<i128> {
                let mut acc = e.constant as i128;
                for (v, c) in &e.coeffs {
                    acc += (*c as i128) * (*m.get(v)? as i128);
                }
                Some(acc)
            };
            Some(rel.holds(value(l)?, value(r)?))
        }
        LiaFormula::Not(x) => tv_eval(x, m).map(|b| !b),
        LiaFormula::And(items) => {
            let mut all_true = true;
            for i in items {
                match tv_eval(i, m) {
                    Some(false) => return Some(false),
                    Some(true) => {}
                    None => all_true = false,
                }
            }
            if all_true {
                Some(true)
            } else {
                None
            }
        }
        LiaFormula::Or(items) => {
            let mut all_false = true;
            for i in items {
                match tv_eval(i, m) {
                    Some(true) => return Some(true),
                    Some(false) => {}
                    None => all_false = false,
                }
            }
            if all_false {
                Some(false)
            } else {
                None
            }
        }
    }
}

const FALLBACK_BOX_CAP: i64 = 48;
const FALLBACK_NODE_BUDGET: u64 = 20_000_000;

/// Bounded depth-first search with partial-evaluation pruning. Complete
/// (within the reported flag) for the simple fragment; otherwise UNSAT
/// answers carry `complete: false`.
pub fn fallback_solve(psi: &LiaFormula) -> SolveResult {
    let vars: Vec<Name> = psi.variables().into_iter().collect();
    let simple = is_simple_fragment(psi);
    let needed = max_const(psi)
        .saturating_add(vars.len() as i64)
        .saturating_add(2);
    let bound = needed.min(FALLBACK_BOX_CAP);
    let complete = simple && needed <= FALLBACK_BOX_CAP;
    let mut m = LiaModel::new();
    let mut nodes: u64 = 0;
    match dfs(psi, &vars, 0, bound, &mut m, &mut nodes) {
        Some(true) => {
            for v in &vars {
                m.entry(v.clone()).or_insert(0);
            }
            debug_assert_eq!(eval_lia(psi, &m), Ok(true));
            SolveResult::Sat(m)
        }
        Some(false) => SolveResult::Unsat { complete },
        None => SolveResult::Unknown("fallback budget exceeded".into()),
    }
}

/// Value ordering: 0, 1, -1, 2, -2, ... keeps found models small.
fn spiral(bound: i64) -> impl Iterator<Item = i64> {
    (0..=2 * bound as u64).map(|k| {
        let half = (k as i64 + 1) / 2;
        if k % 2 == 0 {
            half
        } else {
            -half
        }
    })
}

fn dfs(
    psi: &LiaFormula,
    vars: &[Name],
    i: usize,
    bound: i64,
    m: &mut LiaModel,
    nodes: &mut u64,
) -> Option<bool> {
    *nodes += 1;
    if *nodes > FALLBACK_NODE_BUDGET {
        return None;
    }
    match tv_eval(psi, m) {
        Some(true) => return Some(true),
        Some(false) => return Some(false),
        None => {}
    }
    if i == vars.len() {
        // All variables assigned but still undecided: impossible.
        return Some(false);
    }
    let mut exhausted = true;
    for v in spiral(bound) {
        m.insert(vars[i].clone(), v);
        match dfs(psi, vars, i + 1, bound, m, nodes) {
            Some(true) => return Some(true),
            Some(false) => {}
            None => exhausted = false,
        }
    }
    m.remove(&vars[i]);
    if exhausted {
        Some(false)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

pub fn solve_lia(psi: &LiaFormula, cfg: &SolverConfig) -> Result<SolveResult, BackendError> {
    match cfg.choice {
        BackendChoice::External => external_solve(psi, cfg),
        BackendChoice::Fallback => Ok(fallback_solve(psi)),
        BackendChoice::Auto => match external_solve(psi, cfg) {
            Ok(r) => Ok(r),
            Err(BackendError::SolverSpawn { .. }) => Ok(fallback_solve(psi)),
            Err(e) => Err(e),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> LinExpr {
        LinExpr::var("x")
    }

    #[test]
    fn fallback_x_eq_x_plus_1() {
        let f = LiaFormula::eq(x(), x().plus_const(1));
        assert!(matches!(
            fallback_solve(&f),
            SolveResult::Unsat { complete: true }
        ));
    }

    #[test]
    fn fallback_x_plus_x_eq_4() {
        let f = LiaFormula::eq(x().plus(&x()), LinExpr::constant(4));
        match fallback_solve(&f) {
            SolveResult::Sat(m) => assert_eq!(m["x"], 2),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn fallback_disjunction() {
        let f = LiaFormula::or(vec![
            LiaFormula::eq(x(), LinExpr::constant(-7)),
            LiaFormula::And(vec![LiaFormula::False]),
        ]);
        match fallback_solve(&f) {
            SolveResult::Sat(m) => assert_eq!(m["x"], -7),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    fn external_available() -> bool {
        let cfg = SolverConfig {
            choice: BackendChoice::External,
            ..SolverConfig::default()
        };
        solve_lia(&LiaFormula::True, &cfg).is_ok()
    }

    #[test]
    fn external_sat_unsat_and_recheck() {
        if !external_available() {
            eprintln!("skipping: external solver unavailable");
            return;
        }
        let cfg = SolverConfig {
            choice: BackendChoice::External,
            ..SolverConfig::default()
        };
        let sat = LiaFormula::eq(x().plus(&x()), LinExpr::constant(4));
        match solve_lia(&sat, &cfg).unwrap() {
            SolveResult::Sat(m) => {
                assert_eq!(m["x"], 2);
                assert_eq!(eval_lia(&sat, &m), Ok(true));
            }
            other => panic!("expected sat, got {other:?}"),
        }
        let unsat = LiaFormula::eq(x(), x().plus_const(1));
        assert_eq!(
            solve_lia(&unsat, &cfg).unwrap(),
            SolveResult::Unsat { complete: true }
        );
        // Negative model values parse.
        let neg = LiaFormula::eq(x(), LinExpr::constant(-3));
        match solve_lia(&neg, &cfg).unwrap() {
            SolveResult::Sat(m) => assert_eq!(m["x"], -3),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn fallback_and_external_agree_on_corpus() {
        let queries = vec![
            LiaFormula::eq(x(), LinExpr::constant(5)),
            LiaFormula::and(vec![
                LiaFormula::atom(x(), Rel::Lt, LinExpr::var("y")),
                LiaFormula::atom(LinExpr::var("y"), Rel::Lt, x()),
            ]),
            LiaFormula::or(vec![
                LiaFormula::atom(x(), Rel::Ge, LinExpr::constant(10)),
                LiaFormula::atom(x(), Rel::Le, LinExpr::constant(-10)),
            ]),
        ];
        let have_external = external_available();
        let cfg = SolverConfig {
            choice: BackendChoice::External,
            ..SolverConfig::default()
        };
        for q in queries {
            let fb = fallback_solve(&q);
            if have_external {
                let ext = solve_lia(&q, &cfg).unwrap();
                let sat = |r: &SolveResult| matches!(r, SolveResult::Sat(_));
                assert_eq!(sat(&fb), sat(&ext), "disagreement on {q:?}");
            }
        }
    }
}
