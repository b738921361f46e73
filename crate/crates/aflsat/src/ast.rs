//! Abstract syntax for array-fold formulas, well-formedness checks,
//! control-flow graphs of fold functions, and normalization.

use std::collections::BTreeMap;
use std::fmt;

use petgraph::graph::DiGraph;

/// Variable names. Plain strings; the parser guarantees they are valid
/// identifiers, and fresh names introduced by normalization start with `_`
/// so they cannot clash with user input (the surface syntax reserves a
/// bare `_` for wildcards and rejects other `_`-prefixed identifiers).
pub type Name = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sort {
    Array,
    Int,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Array => write!(f, "array"),
            Sort::Int => write!(f, "int"),
        }
    }
}

/// A formula: declarations plus a list of asserted Boolean terms,
/// interpreted conjunctively. All free variables are implicitly
/// existentially quantified.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Formula {
    pub decls: BTreeMap<Name, Sort>,
    pub assertions: Vec<BoolTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArrayTerm {
    Var(Name),
    /// `a{i <- v}`: array `a` with position `i` replaced by `v`.
    Write {
        base: Name,
        index: Box<IntTerm>,
        value: Box<IntTerm>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntTerm {
    Const(i64),
    Var(Name),
    Add(Box<IntTerm>, Box<IntTerm>),
    /// Multiplication by a constant; produced when desugaring `(* n T)`.
    Mul(i64, Box<IntTerm>),
    /// `a[t]`
    Read(Name, Box<IntTerm>),
    /// `|a|`
    Len(Name),
}

impl IntTerm {
    pub fn add(a: IntTerm, b: IntTerm) -> IntTerm {
        IntTerm::Add(Box::new(a), Box::new(b))
    }
    pub fn var(n: &str) -> IntTerm {
        IntTerm::Var(n.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BoolTerm {
    /// Equality between array terms. The surface grammar only allows array
    /// variables and writes here, so nesting stays flat.
    ArrayEq(ArrayTerm, ArrayTerm),
    IntEq(IntTerm, IntTerm),
    IntLt(IntTerm, IntTerm),
    Not(Box<BoolTerm>),
    And(Box<BoolTerm>, Box<BoolTerm>),
    VecEq(VectorTerm, VectorTerm),
}

impl BoolTerm {
    pub fn not(b: BoolTerm) -> BoolTerm {
        BoolTerm::Not(Box::new(b))
    }
    pub fn and(a: BoolTerm, b: BoolTerm) -> BoolTerm {
        BoolTerm::And(Box::new(a), Box::new(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum VectorTerm {
    Tuple(Vec<IntTerm>),
    Fold {
        array: Name,
        init: Box<VectorTerm>,
        func: FoldFunction,
    },
}

impl VectorTerm {
    pub fn arity(&self) -> usize {
        match self {
            VectorTerm::Tuple(ts) => ts.len(),
            VectorTerm::Fold { func, .. } => func.arity,
        }
    }
}

/// A fold function: a list of guarded branches over the implicit variables
/// `e` (current element), `i` (index), `c_1..c_{m-1}` (counters), and
/// `s` (control state).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoldFunction {
    /// m: vector arity. The fold manipulates the index plus m-1 counters.
    pub arity: usize,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Branch {
    /// Conjunction of atoms; empty means `true`.
    pub guard: Vec<GuardAtom>,
    pub updates: Vec<UpdateAtom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GuardLhs {
    Elem,
    Index,
    /// 1-based counter number.
    Counter(usize),
    State,
}

impl fmt::Display for GuardLhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuardLhs::Elem => write!(f, "e"),
            GuardLhs::Index => write!(f, "i"),
            GuardLhs::Counter(k) => write!(f, "c{k}"),
            GuardLhs::State => write!(f, "s"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cmp {
    Lt,
    Gt,
    Eq,
    Ne,
}

impl Cmp {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
        }
    }
    /// The comparison satisfied exactly when `self` is not.
    pub fn negate(self) -> Vec<Cmp> {
        match self {
            Cmp::Lt => vec![Cmp::Gt, Cmp::Eq],
            Cmp::Gt => vec![Cmp::Lt, Cmp::Eq],
            Cmp::Eq => vec![Cmp::Ne],
            Cmp::Ne => vec![Cmp::Eq],
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cmp::Lt => write!(f, "<"),
            Cmp::Gt => write!(f, ">"),
            Cmp::Eq => write!(f, "="),
            Cmp::Ne => write!(f, "!="),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GuardAtom {
    pub lhs: GuardLhs,
    pub cmp: Cmp,
    /// For `lhs = State` the term must be a constant (checked by validate).
    pub rhs: IntTerm,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum UpdateAtom {
    /// `c_k += n` (1-based k).
    CtrAdd(usize, i64),
    /// `s <- n`, n >= 0.
    SetState(i64),
    Skip,
    Break,
}

// ---------------------------------------------------------------------------
// Well-formedness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WellFormednessError {
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(Name),
    #[error("`{0}` is declared as {1} but used as {2}")]
    SortMismatch(Name, Sort, Sort),
    #[error("vector equality between arities {0} and {1}")]
    ArityMismatch(usize, usize),
    #[error("fold init arity {0} does not match function arity {1}")]
    FoldArityMismatch(usize, usize),
    #[error("duplicate update of {0} in one branch")]
    DuplicateUpdate(String),
    #[error("state variable compared to a non-constant term")]
    StateComparedToTerm,
    #[error("negative state constant {0}")]
    NegativeState(i64),
    #[error("counter c{0} out of range for arity {1}")]
    CounterOutOfRange(usize, usize),
    #[error("fold function must have arity at least 1")]
    ZeroArity,
}

/// Collects all syntactic well-formedness violations. Guard exclusivity and
/// SCC-monotonicity are semantic and are checked separately.
pub fn validate(f: &Formula) -> Vec<WellFormednessError> {
    let mut errs = Vec::new();
    for b in &f.assertions {
        validate_bool(b, f, &mut errs);
    }
    errs
}

fn check_var(n: &Name, want: Sort, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    match f.decls.get(n) {
        None => errs.push(WellFormednessError::UndeclaredVariable(n.clone())),
        Some(&s) if s != want => errs.push(WellFormednessError::SortMismatch(n.clone(), s, want)),
        _ => {}
    }
}

fn validate_bool(b: &BoolTerm, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    match b {
        BoolTerm::ArrayEq(l, r) => {
            validate_array(l, f, errs);
            validate_array(r, f, errs);
        }
        BoolTerm::IntEq(l, r) | BoolTerm::IntLt(l, r) => {
            validate_int(l, f, errs);
            validate_int(r, f, errs);
        }
        BoolTerm::Not(x) => validate_bool(x, f, errs),
        BoolTerm::And(l, r) => {
            validate_bool(l, f, errs);
            validate_bool(r, f, errs);
        }
        BoolTerm::VecEq(l, r) => {
            if l.arity() != r.arity() {
                errs.push(WellFormednessError::ArityMismatch(l.arity(), r.arity()));
            }
            validate_vector(l, f, errs);
            validate_vector(r, f, errs);
        }
    }
}

fn validate_array(a: &ArrayTerm, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    match a {
        ArrayTerm::Var(n) => check_var(n, Sort::Array, f, errs),
        ArrayTerm::Write { base, index, value } => {
            check_var(base, Sort::Array, f, errs);
            validate_int(index, f, errs);
            validate_int(value, f, errs);
        }
    }
}

fn validate_int(t: &IntTerm, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    match t {
        IntTerm::Const(_) => {}
        IntTerm::Var(n) => check_var(n, Sort::Int, f, errs),
        IntTerm::Add(l, r) => {
            validate_int(l, f, errs);
            validate_int(r, f, errs);
        }
        IntTerm::Mul(_, x) => validate_int(x, f, errs),
        IntTerm::Read(a, i) => {
            check_var(a, Sort::Array, f, errs);
            validate_int(i, f, errs);
        }
        IntTerm::Len(a) => check_var(a, Sort::Array, f, errs),
    }
}

fn validate_vector(v: &VectorTerm, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    match v {
        VectorTerm::Tuple(ts) => {
            for t in ts {
                validate_int(t, f, errs);
            }
        }
        VectorTerm::Fold { array, init, func } => {
            check_var(array, Sort::Array, f, errs);
            if init.arity() != func.arity {
                errs.push(WellFormednessError::FoldArityMismatch(
                    init.arity(),
                    func.arity,
                ));
            }
            validate_vector(init, f, errs);
            validate_fold_fn(func, f, errs);
        }
    }
}

fn validate_fold_fn(func: &FoldFunction, f: &Formula, errs: &mut Vec<WellFormednessError>) {
    if func.arity == 0 {
        errs.push(WellFormednessError::ZeroArity);
    }
    for br in &func.branches {
        for g in &br.guard {
            if let GuardLhs::Counter(k) = g.lhs {
                if k == 0 || k >= func.arity {
                    errs.push(WellFormednessError::CounterOutOfRange(k, func.arity));
                }
            }
            if g.lhs == GuardLhs::State && !matches!(g.rhs, IntTerm::Const(_)) {
                errs.push(WellFormednessError::StateComparedToTerm);
            }
            validate_int(&g.rhs, f, errs);
        }
        let mut seen_ctr = Vec::new();
        let mut seen_state = false;
        for u in &br.updates {
            match u {
                UpdateAtom::CtrAdd(k, _) => {
                    if *k == 0 || *k >= func.arity {
                        errs.push(WellFormednessError::CounterOutOfRange(*k, func.arity));
                    }
                    if seen_ctr.contains(k) {
                        errs.push(WellFormednessError::DuplicateUpdate(format!("c{k}")));
                    }
                    seen_ctr.push(*k);
                }
                UpdateAtom::SetState(n) => {
                    if *n < 0 {
                        errs.push(WellFormednessError::NegativeState(*n));
                    }
                    if seen_state {
                        errs.push(WellFormednessError::DuplicateUpdate("s".to_string()));
                    }
                    seen_state = true;
                }
                UpdateAtom::Skip | UpdateAtom::Break => {}
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Control flow graph over the state variable
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFlowGraph {
    /// State constants, sorted, always containing 0.
    pub states: Vec<i64>,
    pub edges: Vec<CfgEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgEdge {
    pub from: i64,
    pub to: i64,
    /// Index into the fold function's branch list.
    pub branch: usize,
}

/// State constants mentioned in a branch's `s ~ n` guard atoms, used to
/// decide at which source states the branch can fire.
fn state_guard_allows(branch: &Branch, state: i64) -> bool {
    branch.guard.iter().all(|g| {
        if g.lhs != GuardLhs::State {
            return true;
        }
        match g.rhs {
            IntTerm::Const(n) => g.cmp.holds(state, n),
            // Rejected by validate; treat as unsatisfiable to stay safe.
            _ => false,
        }
    })
}

fn branch_target(branch: &Branch, source: i64) -> i64 {
    for u in &branch.updates {
        if let UpdateAtom::SetState(n) = u {
            return *n;
        }
    }
    source
}

pub fn build_cfg(func: &FoldFunction) -> ControlFlowGraph {
    let mut states = vec![0i64];
    for br in &func.branches {
        for u in &br.updates {
            if let UpdateAtom::SetState(n) = u {
                if !states.contains(n) {
                    states.push(*n);
                }
            }
        }
    }
    states.sort_unstable();
    let mut edges = Vec::new();
    for &s in &states {
        for (bi, br) in func.branches.iter().enumerate() {
            if state_guard_allows(br, s) {
                edges.push(CfgEdge {
                    from: s,
                    to: branch_target(br, s),
                    branch: bi,
                });
            }
        }
    }
    ControlFlowGraph { states, edges }
}

/// True iff within every strongly connected component, each counter's
/// increments on SCC-internal edges agree in sign.
pub fn check_scc_monotone(func: &FoldFunction, g: &ControlFlowGraph) -> bool {
    let mut graph = DiGraph::<i64, usize>::new();
    let mut idx = BTreeMap::new();
    for &s in &g.states {
        idx.insert(s, graph.add_node(s));
    }
    for e in &g.edges {
        graph.add_edge(idx[&e.from], idx[&e.to], e.branch);
    }
    let sccs = petgraph::algo::tarjan_scc(&graph);
    for scc in sccs {
        if scc.len() == 1 {
            // A singleton is a cycle only if it has a self-loop.
            let n = scc[0];
            let has_self_loop = graph
                .edges(n)
                .any(|er| petgraph::visit::EdgeRef::target(&er) == n);
            if !has_self_loop {
                continue;
            }
        }
        // Collect per-counter signs over edges internal to this SCC.
        let mut signs: BTreeMap<usize, (bool, bool)> = BTreeMap::new(); // (pos, neg)
        for er in graph.edge_references() {
            use petgraph::visit::EdgeRef;
            if scc.contains(&er.source()) && scc.contains(&er.target()) {
                let br = &func.branches[*er.weight()];
                for u in &br.updates {
                    if let UpdateAtom::CtrAdd(k, n) = u {
                        let entry = signs.entry(*k).or_default();
                        if *n > 0 {
                            entry.0 = true;
                        }
                        if *n < 0 {
                            entry.1 = true;
                        }
                    }
                }
            }
        }
        if signs.values().any(|&(pos, neg)| pos && neg) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Generates names that cannot clash with user identifiers: the surface
/// syntax rejects identifiers starting with `_`.
pub struct FreshNames {
    next: usize,
    prefix: &'static str,
}

impl FreshNames {
    pub fn new(prefix: &'static str) -> Self {
        FreshNames { next: 0, prefix }
    }
    pub fn next(&mut self, decls: &BTreeMap<Name, Sort>) -> Name {
        loop {
            let n = format!("_{}{}", self.prefix, self.next);
            self.next += 1;
            if !decls.contains_key(&n) {
                return n;
            }
        }
    }
}

/// Hoists folds out of fold init vectors: every `fold_a (fold_b v f) g`
/// becomes `u = fold_b v f /\ fold_a u g` with a fresh tuple `u`.
/// The result has no Fold nested inside another Fold's init and is
/// equisatisfiable with the input (free variables are existential).
pub fn normalize(f: &Formula) -> Formula {
    let mut out = Formula {
        decls: f.decls.clone(),
        assertions: Vec::new(),
    };
    let mut fresh = FreshNames::new("h");
    let mut extra = Vec::new();
    for b in &f.assertions {
        let nb = normalize_bool(b, &mut out.decls, &mut fresh, &mut extra);
        out.assertions.push(nb);
    }
    out.assertions.extend(extra);
    out
}

fn normalize_bool(
    b: &BoolTerm,
    decls: &mut BTreeMap<Name, Sort>,
    fresh: &mut FreshNames,
    extra: &mut Vec<BoolTerm>,
) -> BoolTerm {
    match b {
        BoolTerm::VecEq(l, r) => BoolTerm::VecEq(
            normalize_vector(l, decls, fresh, extra),
            normalize_vector(r, decls, fresh, extra),
        ),
        BoolTerm::Not(x) => BoolTerm::not(normalize_bool(x, decls, fresh, extra)),
        BoolTerm::And(l, r) => BoolTerm::and(
            normalize_bool(l, decls, fresh, extra),
            normalize_bool(r, decls, fresh, extra),
        ),
        other => other.clone(),
    }
}

fn normalize_vector(
    v: &VectorTerm,
    decls: &mut BTreeMap<Name, Sort>,
    fresh: &mut FreshNames,
    extra: &mut Vec<BoolTerm>,
) -> VectorTerm {
    match v {
        VectorTerm::Tuple(_) => v.clone(),
        VectorTerm::Fold { array, init, func } => {
            let init = match init.as_ref() {
                t @ VectorTerm::Tuple(_) => t.clone(),
                inner @ VectorTerm::Fold { .. } => {
                    // Recursively normalize the inner fold, then hoist it.
                    let inner = normalize_vector(inner, decls, fresh, extra);
                    let m = inner.arity();
                    let mut vars = Vec::with_capacity(m);
                    for _ in 0..m {
                        let n = fresh.next(decls);
                        decls.insert(n.clone(), Sort::Int);
                        vars.push(IntTerm::Var(n));
                    }
                    extra.push(BoolTerm::VecEq(VectorTerm::Tuple(vars.clone()), inner));
                    VectorTerm::Tuple(vars)
                }
            };
            VectorTerm::Fold {
                array: array.clone(),
                init: Box::new(init),
                func: func.clone(),
            }
        }
    }
}

/// Counts logical operators plus fold branches; the size measure used by
/// the benchmark report.
pub fn formula_size(f: &Formula) -> usize {
    fn bool_size(b: &BoolTerm) -> usize {
        match b {
            BoolTerm::ArrayEq(..) | BoolTerm::IntEq(..) | BoolTerm::IntLt(..) => 1,
            BoolTerm::Not(x) => 1 + bool_size(x),
            BoolTerm::And(l, r) => 1 + bool_size(l) + bool_size(r),
            BoolTerm::VecEq(l, r) => 1 + vec_size(l) + vec_size(r),
        }
    }
    fn vec_size(v: &VectorTerm) -> usize {
        match v {
            VectorTerm::Tuple(_) => 0,
            VectorTerm::Fold { init, func, .. } => func.branches.len() + vec_size(init),
        }
    }
    let mut n = f.assertions.iter().map(bool_size).sum();
    if f.assertions.len() > 1 {
        n += f.assertions.len() - 1; // implicit conjunctions
    }
    n
}

/// All folds in a formula, paired with the path-independent array name.
pub fn collect_folds(f: &Formula) -> Vec<(&Name, &VectorTerm)> {
    let mut out = Vec::new();
    fn walk_bool<'a>(b: &'a BoolTerm, out: &mut Vec<(&'a Name, &'a VectorTerm)>) {
        match b {
            BoolTerm::VecEq(l, r) => {
                walk_vec(l, out);
                walk_vec(r, out);
            }
            BoolTerm::Not(x) => walk_bool(x, out),
            BoolTerm::And(l, r) => {
                walk_bool(l, out);
                walk_bool(r, out);
            }
            _ => {}
        }
    }
    fn walk_vec<'a>(v: &'a VectorTerm, out: &mut Vec<(&'a Name, &'a VectorTerm)>) {
        if let VectorTerm::Fold { array, init, .. } = v {
            out.push((array, v));
            walk_vec(init, out);
        }
    }
    for b in &f.assertions {
        walk_bool(b, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decl(pairs: &[(&str, Sort)]) -> BTreeMap<Name, Sort> {
        pairs
            .iter()
            .map(|(n, s)| (n.to_string(), *s))
            .collect()
    }

    /// Boundedness: fold_a 0 (l <= e <= u => skip) = |a|, desugared to
    /// two atoms (not (e < l)) and (not (u < e)) -> guard atoms e>l-1? The
    /// parser desugars `<=` as the primitive atom with flipped strictness;
    /// here we write the atoms directly.
    fn boundedness() -> Formula {
        let func = FoldFunction {
            arity: 1,
            branches: vec![Branch {
                guard: vec![
                    GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Gt,
                        rhs: IntTerm::add(IntTerm::var("l"), IntTerm::Const(-1)),
                    },
                    GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Lt,
                        rhs: IntTerm::add(IntTerm::var("u"), IntTerm::Const(1)),
                    },
                ],
                updates: vec![UpdateAtom::Skip],
            }],
        };
        Formula {
            decls: decl(&[("a", Sort::Array), ("l", Sort::Int), ("u", Sort::Int)]),
            assertions: vec![BoolTerm::VecEq(
                VectorTerm::Fold {
                    array: "a".to_string(),
                    init: Box::new(VectorTerm::Tuple(vec![IntTerm::Const(0)])),
                    func,
                },
                VectorTerm::Tuple(vec![IntTerm::Len("a".to_string())]),
            )],
        }
    }

    fn periodicity_fn() -> FoldFunction {
        // s=0 /\ e=0 => s<-1 ; s=1 /\ e=1 => s<-0
        FoldFunction {
            arity: 1,
            branches: vec![
                Branch {
                    guard: vec![
                        GuardAtom {
                            lhs: GuardLhs::State,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(0),
                        },
                        GuardAtom {
                            lhs: GuardLhs::Elem,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(0),
                        },
                    ],
                    updates: vec![UpdateAtom::SetState(1)],
                },
                Branch {
                    guard: vec![
                        GuardAtom {
                            lhs: GuardLhs::State,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(1),
                        },
                        GuardAtom {
                            lhs: GuardLhs::Elem,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(1),
                        },
                    ],
                    updates: vec![UpdateAtom::SetState(0)],
                },
            ],
        }
    }

    pub(crate) fn pumping_fn() -> FoldFunction {
        // s=0 /\ e=0 => c1++ ; s=0 /\ e=1 => c2++, s<-1 ; s=1 /\ e=1 => c2++
        let atom = |lhs, cmp, n| GuardAtom {
            lhs,
            cmp,
            rhs: IntTerm::Const(n),
        };
        FoldFunction {
            arity: 3,
            branches: vec![
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, Cmp::Eq, 0),
                        atom(GuardLhs::Elem, Cmp::Eq, 0),
                    ],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, Cmp::Eq, 0),
                        atom(GuardLhs::Elem, Cmp::Eq, 1),
                    ],
                    updates: vec![UpdateAtom::CtrAdd(2, 1), UpdateAtom::SetState(1)],
                },
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, Cmp::Eq, 1),
                        atom(GuardLhs::Elem, Cmp::Eq, 1),
                    ],
                    updates: vec![UpdateAtom::CtrAdd(2, 1)],
                },
            ],
        }
    }

    #[test]
    fn boundedness_is_well_formed() {
        assert_eq!(validate(&boundedness()), vec![]);
    }

    #[test]
    fn duplicate_update_detected() {
        let f = Formula {
            decls: decl(&[("a", Sort::Array)]),
            assertions: vec![BoolTerm::VecEq(
                VectorTerm::Fold {
                    array: "a".to_string(),
                    init: Box::new(VectorTerm::Tuple(vec![
                        IntTerm::Const(0),
                        IntTerm::Const(0),
                    ])),
                    func: FoldFunction {
                        arity: 2,
                        branches: vec![Branch {
                            guard: vec![],
                            updates: vec![UpdateAtom::CtrAdd(1, 1), UpdateAtom::CtrAdd(1, 2)],
                        }],
                    },
                },
                VectorTerm::Tuple(vec![IntTerm::Const(0), IntTerm::Const(0)]),
            )],
        };
        assert_eq!(
            validate(&f),
            vec![WellFormednessError::DuplicateUpdate("c1".to_string())]
        );
    }

    #[test]
    fn arity_mismatch_detected() {
        let f = Formula {
            decls: decl(&[("a", Sort::Array)]),
            assertions: vec![BoolTerm::VecEq(
                VectorTerm::Tuple(vec![IntTerm::Const(0), IntTerm::Const(0)]),
                VectorTerm::Fold {
                    array: "a".to_string(),
                    init: Box::new(VectorTerm::Tuple(vec![
                        IntTerm::Const(0),
                        IntTerm::Const(0),
                        IntTerm::Const(0),
                    ])),
                    func: FoldFunction {
                        arity: 3,
                        branches: vec![Branch {
                            guard: vec![],
                            updates: vec![UpdateAtom::Skip],
                        }],
                    },
                },
            )],
        };
        let errs = validate(&f);
        assert!(errs.contains(&WellFormednessError::ArityMismatch(2, 3)));
    }

    #[test]
    fn cfg_periodicity() {
        let g = build_cfg(&periodicity_fn());
        assert_eq!(g.states, vec![0, 1]);
        let pairs: Vec<(i64, i64)> = g.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn cfg_single_skip_branch() {
        let func = FoldFunction {
            arity: 1,
            branches: vec![Branch {
                guard: vec![],
                updates: vec![UpdateAtom::Skip],
            }],
        };
        let g = build_cfg(&func);
        assert_eq!(g.states, vec![0]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!((g.edges[0].from, g.edges[0].to), (0, 0));
    }

    #[test]
    fn cfg_pumping() {
        let g = build_cfg(&pumping_fn());
        assert_eq!(g.states, vec![0, 1]);
        let pairs: Vec<(i64, i64)> = g.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn scc_monotone_pumping() {
        let func = pumping_fn();
        let g = build_cfg(&func);
        assert!(check_scc_monotone(&func, &g));
    }

    #[test]
    fn scc_mixed_signs_rejected() {
        let atom = |n| GuardAtom {
            lhs: GuardLhs::Elem,
            cmp: Cmp::Eq,
            rhs: IntTerm::Const(n),
        };
        let func = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![atom(0)],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![atom(1)],
                    updates: vec![UpdateAtom::CtrAdd(1, -1)],
                },
            ],
        };
        let g = build_cfg(&func);
        assert!(!check_scc_monotone(&func, &g));
    }

    #[test]
    fn dag_mixed_signs_allowed() {
        // c1++ in state 0, c1-- in state 1, but 1 never returns to 0 and
        // neither state has a monotonicity-violating self-loop pair.
        let func = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![GuardAtom {
                        lhs: GuardLhs::State,
                        cmp: Cmp::Eq,
                        rhs: IntTerm::Const(0),
                    }],
                    updates: vec![UpdateAtom::CtrAdd(1, 1), UpdateAtom::SetState(1)],
                },
                Branch {
                    guard: vec![
                        GuardAtom {
                            lhs: GuardLhs::State,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(1),
                        },
                        GuardAtom {
                            lhs: GuardLhs::Elem,
                            cmp: Cmp::Eq,
                            rhs: IntTerm::Const(5),
                        },
                    ],
                    updates: vec![UpdateAtom::CtrAdd(1, -1), UpdateAtom::SetState(2)],
                },
            ],
        };
        let g = build_cfg(&func);
        assert!(check_scc_monotone(&func, &g));
    }

    #[test]
    fn normalize_hoists_nested_fold() {
        let inner = VectorTerm::Fold {
            array: "b".to_string(),
            init: Box::new(VectorTerm::Tuple(vec![IntTerm::Const(0)])),
            func: FoldFunction {
                arity: 1,
                branches: vec![Branch {
                    guard: vec![],
                    updates: vec![UpdateAtom::Skip],
                }],
            },
        };
        let outer = VectorTerm::Fold {
            array: "a".to_string(),
            init: Box::new(inner.clone()),
            func: FoldFunction {
                arity: 1,
                branches: vec![Branch {
                    guard: vec![],
                    updates: vec![UpdateAtom::Skip],
                }],
            },
        };
        let f = Formula {
            decls: decl(&[("a", Sort::Array), ("b", Sort::Array)]),
            assertions: vec![BoolTerm::VecEq(
                outer,
                VectorTerm::Tuple(vec![IntTerm::Const(3)]),
            )],
        };
        let n = normalize(&f);
        // Two assertions now: the rewritten outer fold and the hoisted inner.
        assert_eq!(n.assertions.len(), 2);
        for (_, fold) in collect_folds(&n) {
            if let VectorTerm::Fold { init, .. } = fold {
                assert!(matches!(init.as_ref(), VectorTerm::Tuple(_)));
            }
        }
        // Idempotent.
        assert_eq!(normalize(&n), n);
    }

    #[test]
    fn normalize_idempotent_on_flat() {
        let f = boundedness();
        assert_eq!(normalize(&f), f);
    }
}
