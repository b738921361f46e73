//! Assembles the decision-procedure formula ψ = ψ_n ∧ ψ_e ∧ ψ_l:
//! the fold-free part of the input (ψ_n), per-array-group Parikh/counter/
//! input encodings of the product machines (ψ_e), and the linking of fold
//! initial and final configurations to formula variables (ψ_l).
//!
//! Counter constraints are decided per mode copy: within a copy every
//! counter moves monotonically (enforced by per-copy direction variables),
//! so a constraint holds at every step of the copy iff it holds at the
//! copy's entry and exit values. Constraints on copy-advancing transitions
//! are checked exactly at the target copy's entry value, which is the
//! pre-state of that transition by construction.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::ast::{
    normalize, ArrayTerm, BoolTerm, Cmp, Formula, FoldFunction, FreshNames, GuardAtom, GuardLhs,
    IntTerm, Name, Sort, VectorTerm,
};
use crate::backend::{solve_lia, BackendError, SolveResult, SolverConfig};
use crate::lia::{LiaFormula, LinExpr, Rel};
use crate::scm::{
    align, drop_subsumed, product, restrict_machine_order, reversal_bound, specialize_position_atoms,
    translate_fold, Cmp6,
    CounterAtom, InputAtom, InputRhs, MachineInfo, Rhs, Scm, ScmError, StateMeta, Transition,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("encoding too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

// ---------------------------------------------------------------------------
// Regions and mode copies
// ---------------------------------------------------------------------------

/// Per-counter boundary terms collected from the machine's counter
/// constraints. A counter with b boundaries partitions ℤ into 2b+1
/// regions (point regions at each boundary plus the open gaps).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSystem {
    pub boundaries: Vec<Vec<Rhs>>,
}

impl RegionSystem {
    pub fn region_count(&self, ctr: usize) -> usize {
        2 * self.boundaries[ctr].len() + 1
    }
}

pub fn build_regions(scm: &Scm) -> RegionSystem {
    let mut boundaries: Vec<BTreeSet<Rhs>> = vec![BTreeSet::new(); scm.k];
    for t in &scm.transitions {
        for a in &t.cc {
            boundaries[a.ctr].insert(a.rhs.clone());
        }
    }
    RegionSystem {
        boundaries: boundaries.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}

/// Number of mode copies needed: one plus, per counter, the maximal number
/// of region changes ((r+1 monotone phases) × (2b changes each)) plus the
/// r direction reversals themselves.
pub fn mode_copy_count(regions: &RegionSystem, reversals: &[usize]) -> usize {
    let mut total = 1usize;
    for (b, &r) in regions.boundaries.iter().zip(reversals) {
        total += (r + 1) * 2 * b.len() + r;
    }
    total
}

pub const MODE_COPY_CAP: usize = 96;
pub const MODE_TRANSITION_CAP: usize = 400_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeTransition {
    pub from: usize,
    pub to: usize,
    pub scm_t: usize,
    /// Segment this transition's increment belongs to: its own copy for
    /// intra-copy transitions, the target copy for advancing ones.
    pub copy: usize,
    pub advance: bool,
}

/// The NFA A_j: `copies` stratified copies of the machine's control
/// structure, with every transition duplicated as an intra-copy step and
/// as a copy-advancing step into the next stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeGraph {
    pub n_scm_states: usize,
    pub copies: usize,
    pub init: usize,
    pub transitions: Vec<ModeTransition>,
}

impl ModeGraph {
    pub fn n_states(&self) -> usize {
        self.n_scm_states * self.copies
    }
    pub fn state(&self, q: usize, copy: usize) -> usize {
        (copy - 1) * self.n_scm_states + q
    }
    pub fn unpack(&self, s: usize) -> (usize, usize) {
        (s % self.n_scm_states, s / self.n_scm_states + 1)
    }
}

pub fn build_mode_graph(scm: &Scm, copies: usize) -> Result<ModeGraph, EncodeError> {
    if copies > MODE_COPY_CAP {
        return Err(EncodeError::TooLarge(format!("{copies} mode copies")));
    }
    let n = scm.states.len();
    let mut mg = ModeGraph {
        n_scm_states: n,
        copies,
        init: scm.init_state,
        transitions: Vec::new(),
    };
    for c in 1..=copies {
        for (ti, t) in scm.transitions.iter().enumerate() {
            mg.transitions.push(ModeTransition {
                from: mg.state(t.from, c),
                to: mg.state(t.to, c),
                scm_t: ti,
                copy: c,
                advance: false,
            });
            if c < copies {
                mg.transitions.push(ModeTransition {
                    from: mg.state(t.from, c),
                    to: mg.state(t.to, c + 1),
                    scm_t: ti,
                    copy: c + 1,
                    advance: true,
                });
            }
        }
    }
    if mg.transitions.len() > MODE_TRANSITION_CAP {
        return Err(EncodeError::TooLarge(format!(
            "{} mode transitions",
            mg.transitions.len()
        )));
    }
    Ok(mg)
}

// ---------------------------------------------------------------------------
// Parikh encoding
// ---------------------------------------------------------------------------

/// Flow-based Parikh encoding of an NFA given as an explicit transition
/// list: per-transition occurrence counts with Kirchhoff balance between
/// the initial state and a chosen accepting sink, plus spanning-tree depth
/// variables for connectivity. Solutions are exactly the Parikh images of
/// accepting runs.
pub fn encode_parikh(
    n_states: usize,
    transitions: &[(usize, usize)],
    init: usize,
    accepting: &[bool],
    prefix: &str,
) -> (LiaFormula, Vec<Name>, Vec<Name>) {
    let count_vars: Vec<Name> = (0..transitions.len())
        .map(|t| format!("{prefix}n{t}"))
        .collect();
    let sink_vars: Vec<Name> = (0..n_states).map(|q| format!("{prefix}s{q}")).collect();
    let mut parts: Vec<LiaFormula> = Vec::new();
    for v in &count_vars {
        parts.push(LiaFormula::atom(
            LinExpr::var(v.clone()),
            Rel::Ge,
            LinExpr::constant(0),
        ));
    }
    let mut sink_sum = LinExpr::constant(0);
    for (q, v) in sink_vars.iter().enumerate() {
        if accepting[q] {
            parts.push(LiaFormula::atom(
                LinExpr::var(v.clone()),
                Rel::Ge,
                LinExpr::constant(0),
            ));
            parts.push(LiaFormula::atom(
                LinExpr::var(v.clone()),
                Rel::Le,
                LinExpr::constant(1),
            ));
        } else {
            parts.push(LiaFormula::eq(LinExpr::var(v.clone()), LinExpr::constant(0)));
        }
        sink_sum.add_term(v, 1);
    }
    parts.push(LiaFormula::eq(sink_sum, LinExpr::constant(1)));
    // Flow balance.
    for q in 0..n_states {
        let mut flow = LinExpr::constant(0);
        for (t, &(f, to)) in transitions.iter().enumerate() {
            if f == q {
                flow.add_term(&count_vars[t], 1);
            }
            if to == q {
                flow.add_term(&count_vars[t], -1);
            }
        }
        let mut rhs = LinExpr::scaled_var(sink_vars[q].clone(), -1);
        if q == init {
            rhs = rhs.plus_const(1);
        }
        parts.push(LiaFormula::eq(flow, rhs));
    }
    // Connectivity: states receiving flow must be reachable from init
    // through positive-count transitions, witnessed by strictly increasing
    // depth values.
    let depth = |q: usize| -> LinExpr { LinExpr::var(format!("{prefix}d{q}")) };
    parts.push(LiaFormula::eq(depth(init), LinExpr::constant(1)));
    for q in 0..n_states {
        if q == init {
            continue;
        }
        let incoming: Vec<usize> = (0..transitions.len())
            .filter(|&t| transitions[t].1 == q)
            .collect();
        let mut in_sum = LinExpr::constant(0);
        for &t in &incoming {
            in_sum.add_term(&count_vars[t], 1);
        }
        let mut cases = vec![LiaFormula::and(vec![
            LiaFormula::eq(in_sum, LinExpr::constant(0)),
            LiaFormula::eq(depth(q), LinExpr::constant(0)),
        ])];
        // One case per predecessor state (parallel edges share a case).
        let mut preds: BTreeMap<usize, LinExpr> = BTreeMap::new();
        for &t in &incoming {
            let p = transitions[t].0;
            if p == q {
                continue;
            }
            preds
                .entry(p)
                .or_insert_with(|| LinExpr::constant(0))
                .add_term(&count_vars[t], 1);
        }
        for (p, sum) in preds {
            cases.push(LiaFormula::and(vec![
                LiaFormula::atom(sum, Rel::Ge, LinExpr::constant(1)),
                LiaFormula::atom(depth(p), Rel::Ge, LinExpr::constant(1)),
                LiaFormula::eq(depth(q), depth(p).plus_const(1)),
            ]));
        }
        parts.push(LiaFormula::or(cases));
    }
    (LiaFormula::and(parts), count_vars, sink_vars)
}

// ---------------------------------------------------------------------------
// Counter constraints (ψ_c)
// ---------------------------------------------------------------------------

fn rhs_lin(r: &Rhs) -> LinExpr {
    match r {
        Rhs::Const(n) => LinExpr::constant(*n),
        Rhs::Var(x) => LinExpr::var(x.clone()),
    }
}

fn cmp_rel(c: Cmp6) -> Rel {
    match c {
        Cmp6::Lt => Rel::Lt,
        Cmp6::Le => Rel::Le,
        Cmp6::Gt => Rel::Gt,
        Cmp6::Ge => Rel::Ge,
        Cmp6::Eq => Rel::Eq,
        Cmp6::Ne => Rel::Ne,
    }
}

/// Per mode copy and counter: entry/exit value variables chained across
/// copies, direction variables forcing monotone movement within a copy,
/// and implications validating every counter constraint of a transition
/// with positive count. Returns the constraint formula and the final exit
/// value of each counter.
pub fn encode_counter_constraints(
    scm: &Scm,
    mg: &ModeGraph,
    count_vars: &[Name],
    inits: &[LinExpr],
    prefix: &str,
) -> (LiaFormula, Vec<LinExpr>) {
    let mut parts: Vec<LiaFormula> = Vec::new();
    let en = |c: usize, i: usize| -> LinExpr { LinExpr::var(format!("{prefix}en{c}c{i}")) };
    let ex = |c: usize, i: usize| -> LinExpr { LinExpr::var(format!("{prefix}ex{c}c{i}")) };
    let ep = |c: usize, i: usize| -> LinExpr { LinExpr::var(format!("{prefix}ep{c}c{i}")) };

    let has_atoms: Vec<bool> = (0..scm.k)
        .map(|i| scm.transitions.iter().any(|t| t.cc.iter().any(|a| a.ctr == i)))
        .collect();
    let mixed_signs: Vec<bool> = (0..scm.k)
        .map(|i| {
            let pos = scm.transitions.iter().any(|t| t.inc[i] > 0);
            let neg = scm.transitions.iter().any(|t| t.inc[i] < 0);
            pos && neg
        })
        .collect();

    for i in 0..scm.k {
        parts.push(LiaFormula::eq(en(1, i), inits[i].clone()));
        for c in 1..=mg.copies {
            // exit = entry + sum of increments over this copy's segment;
            // post-advance entry adds only the advancing transition's step.
            let mut seg = en(c, i);
            let mut adv = en(c, i);
            for (mt, t) in mg.transitions.iter().enumerate() {
                if t.copy != c {
                    continue;
                }
                let w = scm.transitions[t.scm_t].inc[i];
                if w != 0 {
                    seg.add_term(&count_vars[mt], w);
                    if t.advance {
                        adv.add_term(&count_vars[mt], w);
                    }
                }
            }
            parts.push(LiaFormula::eq(ex(c, i), seg));
            if has_atoms[i] {
                parts.push(LiaFormula::eq(ep(c, i), adv));
            }
            if c < mg.copies {
                parts.push(LiaFormula::eq(en(c + 1, i), ex(c, i)));
            }
            // Direction: all intra-copy increments of this counter share a
            // sign, so values between post-advance entry and exit are
            // monotone. Counters whose increments already agree globally
            // (e.g. the position track) need no direction variable.
            if has_atoms[i] && mixed_signs[i] {
                let dir = LinExpr::var(format!("{prefix}dr{c}c{i}"));
                for (mt, t) in mg.transitions.iter().enumerate() {
                    if t.copy != c || t.advance {
                        continue;
                    }
                    let w = scm.transitions[t.scm_t].inc[i];
                    if w != 0 {
                        parts.push(LiaFormula::implies(
                            LiaFormula::atom(
                                LinExpr::var(count_vars[mt].clone()),
                                Rel::Ge,
                                LinExpr::constant(1),
                            ),
                            LiaFormula::eq(dir.clone(), LinExpr::constant(w.signum())),
                        ));
                    }
                }
            }
        }
    }

    // Constraint validation per transition occurrence.
    for (mt, t) in mg.transitions.iter().enumerate() {
        let cc = &scm.transitions[t.scm_t].cc;
        if cc.is_empty() {
            continue;
        }
        let fired = LiaFormula::atom(
            LinExpr::var(count_vars[mt].clone()),
            Rel::Ge,
            LinExpr::constant(1),
        );
        let mut checks: Vec<LiaFormula> = Vec::new();
        for a in cc {
            let b = rhs_lin(&a.rhs);
            if t.advance {
                // Pre-state of an advancing transition is exactly the
                // target copy's entry value.
                checks.push(LiaFormula::atom(en(t.copy, a.ctr), cmp_rel(a.cmp), b));
            } else if a.cmp == Cmp6::Ne {
                // Monotone interval must avoid the boundary entirely.
                checks.push(LiaFormula::or(vec![
                    LiaFormula::and(vec![
                        LiaFormula::atom(ep(t.copy, a.ctr), Rel::Lt, b.clone()),
                        LiaFormula::atom(ex(t.copy, a.ctr), Rel::Lt, b.clone()),
                    ]),
                    LiaFormula::and(vec![
                        LiaFormula::atom(ep(t.copy, a.ctr), Rel::Gt, b.clone()),
                        LiaFormula::atom(ex(t.copy, a.ctr), Rel::Gt, b),
                    ]),
                ]));
            } else {
                checks.push(LiaFormula::atom(ep(t.copy, a.ctr), cmp_rel(a.cmp), b.clone()));
                checks.push(LiaFormula::atom(ex(t.copy, a.ctr), cmp_rel(a.cmp), b));
            }
        }
        parts.push(LiaFormula::implies(fired, LiaFormula::and(checks)));
    }

    let finals = (0..scm.k).map(|i| ex(mg.copies, i)).collect();
    (LiaFormula::and(parts), finals)
}

// ---------------------------------------------------------------------------
// Input constraints (ψ_i)
// ---------------------------------------------------------------------------

/// One witness variable per (machine transition, cell tag) mentioned by the
/// transition's input constraints, shared by all of its mode copies: every
/// constraint on a cell is an atom of the transition that consumes it, so a
/// run stays valid when all occurrences of a transition use the same cell
/// values. Positive total count implies the constraints hold over the
/// witnesses, and model generation reads cell values off them.
pub fn encode_inputs(
    scm: &Scm,
    mg: &ModeGraph,
    count_vars: &[Name],
    prefix: &str,
) -> (LiaFormula, Vec<BTreeMap<usize, Name>>) {
    let mut parts: Vec<LiaFormula> = Vec::new();
    let mut by_scm: Vec<BTreeMap<usize, Name>> = vec![BTreeMap::new(); scm.transitions.len()];
    let mut totals: Vec<LinExpr> = vec![LinExpr::constant(0); scm.transitions.len()];
    for (mt, t) in mg.transitions.iter().enumerate() {
        totals[t.scm_t].add_term(&count_vars[mt], 1);
    }
    for (ti, t) in scm.transitions.iter().enumerate() {
        if t.ic.is_empty() {
            continue;
        }
        let wit = |tag: usize, by_scm: &mut Vec<BTreeMap<usize, Name>>| -> Name {
            by_scm[ti]
                .entry(tag)
                .or_insert_with(|| format!("{prefix}w{ti}t{tag}"))
                .clone()
        };
        let mut checks = Vec::new();
        for a in &t.ic {
            let l = LinExpr::var(wit(a.tag, &mut by_scm));
            let r = match &a.rhs {
                InputRhs::Const(n) => LinExpr::constant(*n),
                InputRhs::Var(x) => LinExpr::var(x.clone()),
                InputRhs::Cell(t2) => LinExpr::var(wit(*t2, &mut by_scm)),
            };
            checks.push(LiaFormula::atom(l, cmp_rel(a.cmp), r));
        }
        parts.push(LiaFormula::implies(
            LiaFormula::atom(totals[ti].clone(), Rel::Ge, LinExpr::constant(1)),
            LiaFormula::and(checks),
        ));
    }
    let witnesses = mg
        .transitions
        .iter()
        .map(|t| by_scm[t.scm_t].clone())
        .collect();
    (LiaFormula::and(parts), witnesses)
}

// ---------------------------------------------------------------------------
// Guard exclusivity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Exclusivity {
    Exclusive,
    Overlap { state: i64, branches: (usize, usize) },
    Undetermined { state: i64, branches: (usize, usize) },
}

/// Semantic mutual-exclusivity check: for every pair of branches enabled at
/// a common control state, queries the backend for satisfiability of the
/// conjunction of both guards (over the element, a non-negative index, the
/// counters, and one opaque variable per distinct guard term).
pub fn check_guard_exclusivity(
    func: &FoldFunction,
    cfg: &SolverConfig,
) -> Result<Exclusivity, BackendError> {
    let cfg_states = crate::ast::build_cfg(func).states;
    let mut terms: BTreeMap<IntTerm, Name> = BTreeMap::new();
    // Linear structure of the guard term must be kept: `e > l` and `e < l+1`
    // are disjoint over the integers, but not if `l+1` turns into an opaque
    // variable. Only non-linear leaves (reads, lengths) get opaque names.
    fn lin_term(t: &IntTerm, terms: &mut BTreeMap<IntTerm, Name>) -> LinExpr {
        match t {
            IntTerm::Const(n) => LinExpr::constant(*n),
            IntTerm::Var(x) => LinExpr::var(format!("_u_{x}")),
            IntTerm::Add(a, b) => lin_term(a, terms).plus(&lin_term(b, terms)),
            IntTerm::Mul(k, a) => lin_term(a, terms).scale(*k),
            _ => {
                let next = terms.len();
                let name = terms
                    .entry(t.clone())
                    .or_insert_with(|| format!("_t{next}"))
                    .clone();
                LinExpr::var(name)
            }
        }
    }
    let mut guard_lin = |g: &GuardAtom| -> LiaFormula {
        let lhs = match g.lhs {
            GuardLhs::Elem => LinExpr::var("_e"),
            GuardLhs::Index => LinExpr::var("_i"),
            GuardLhs::Counter(k) => LinExpr::var(format!("_c{k}")),
            GuardLhs::State => unreachable!(),
        };
        let rhs = lin_term(&g.rhs, &mut terms);
        let rel = match g.cmp {
            Cmp::Lt => Rel::Lt,
            Cmp::Gt => Rel::Gt,
            Cmp::Eq => Rel::Eq,
            Cmp::Ne => Rel::Ne,
        };
        LiaFormula::atom(lhs, rel, rhs)
    };
    let mut checked: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &s in &cfg_states {
        let enabled: Vec<usize> = (0..func.branches.len())
            .filter(|&bi| {
                func.branches[bi].guard.iter().all(|g| {
                    g.lhs != GuardLhs::State
                        || matches!(g.rhs, IntTerm::Const(n) if g.cmp.holds(s, n))
                })
            })
            .collect();
        for (xi, &b1) in enabled.iter().enumerate() {
            for &b2 in &enabled[xi + 1..] {
                if !checked.insert((b1, b2)) {
                    continue;
                }
                let mut conj = vec![LiaFormula::atom(
                    LinExpr::var("_i"),
                    Rel::Ge,
                    LinExpr::constant(0),
                )];
                for g in func.branches[b1]
                    .guard
                    .iter()
                    .chain(func.branches[b2].guard.iter())
                {
                    if g.lhs != GuardLhs::State {
                        conj.push(guard_lin(g));
                    }
                }
                match solve_lia(&LiaFormula::and(conj), cfg)? {
                    SolveResult::Sat(_) => {
                        return Ok(Exclusivity::Overlap {
                            state: s,
                            branches: (b1, b2),
                        })
                    }
                    SolveResult::Unsat { complete: true } => {}
                    _ => {
                        return Ok(Exclusivity::Undetermined {
                            state: s,
                            branches: (b1, b2),
                        })
                    }
                }
            }
        }
    }
    Ok(Exclusivity::Exclusive)
}

// ---------------------------------------------------------------------------
// Array grouping and formula assembly
// ---------------------------------------------------------------------------

/// Where model generation finds each piece of a satisfying assignment.
#[derive(Debug, Clone)]
pub struct EncodingMap {
    pub int_vars: Vec<Name>,
    pub groups: Vec<GroupEncoding>,
    pub ack_groups: Vec<AckGroup>,
    /// Declared arrays never referenced: synthesized as empty.
    pub empty_arrays: Vec<Name>,
}

#[derive(Debug, Clone)]
pub struct GroupEncoding {
    /// Array name -> cell tag within this lockstep group.
    pub arrays: Vec<(Name, usize)>,
    pub len_var: Name,
    pub scm: Scm,
    pub mode: ModeGraph,
    pub count_vars: Vec<Name>,
    pub sink_vars: Vec<Name>,
    pub witness_vars: Vec<BTreeMap<usize, Name>>,
}

/// A fold-free array class handled by Ackermann expansion.
#[derive(Debug, Clone)]
pub struct AckGroup {
    pub arrays: Vec<Name>,
    pub len_var: Name,
    /// (index expression, value variable) per read occurrence.
    pub reads: Vec<(LinExpr, Name)>,
}

struct FoldInstance {
    array: Name,
    init: Vec<IntTerm>,
    func: FoldFunction,
    out: Vec<Name>,
}

struct LinkInstance {
    /// Tag of the written array (left side) and of the base array.
    dst: Name,
    base: Name,
    index: IntTerm,
    value: IntTerm,
}

struct ObserverInstance {
    group: usize,
    tag: usize,
    idx: Rhs,
    val_var: Name,
}

/// Union-find over integer variables tracking affine offsets: each member
/// satisfies `x = root + offset(x)` in every model, justified by `x = y + c`
/// equalities on the conjunctive spine of the input.
struct AffineUf {
    parent: BTreeMap<Name, (Name, i64)>,
}

impl AffineUf {
    fn new() -> AffineUf {
        AffineUf {
            parent: BTreeMap::new(),
        }
    }
    fn find(&mut self, x: &Name) -> (Name, i64) {
        let (p, c) = match self.parent.get(x) {
            None => {
                self.parent.insert(x.clone(), (x.clone(), 0));
                return (x.clone(), 0);
            }
            Some(pc) => pc.clone(),
        };
        if p == *x {
            return (p, c);
        }
        let (r, rc) = self.find(&p);
        self.parent.insert(x.clone(), (r.clone(), c + rc));
        (r, c + rc)
    }
    /// Records `x = y + c`.
    fn union(&mut self, x: &Name, y: &Name, c: i64) {
        let (rx, cx) = self.find(x);
        let (ry, cy) = self.find(y);
        if rx != ry {
            // rx = x - cx = y + c - cx = ry + cy + c - cx.
            self.parent.insert(rx, (ry, cy + c - cx));
        }
    }
    /// `Some(c)` when `x = y + c` is entailed by the recorded facts.
    fn offset(&mut self, x: &Name, y: &Name) -> Option<i64> {
        let (rx, cx) = self.find(x);
        let (ry, cy) = self.find(y);
        (rx == ry).then_some(cx - cy)
    }
}

/// `Some((x, c))` when the term is syntactically `x + c`.
fn as_var_offset(t: &IntTerm) -> Option<(&Name, i64)> {
    match t {
        IntTerm::Var(x) => Some((x, 0)),
        IntTerm::Add(a, b) => match (a.as_ref(), b.as_ref()) {
            (IntTerm::Var(x), IntTerm::Const(c)) | (IntTerm::Const(c), IntTerm::Var(x)) => {
                Some((x, *c))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Union-find over array names.
struct Uf {
    parent: BTreeMap<Name, Name>,
}

impl Uf {
    fn new() -> Uf {
        Uf {
            parent: BTreeMap::new(),
        }
    }
    fn find(&mut self, x: &Name) -> Name {
        let p = match self.parent.get(x) {
            None => {
                self.parent.insert(x.clone(), x.clone());
                return x.clone();
            }
            Some(p) => p.clone(),
        };
        if p == *x {
            return p;
        }
        let r = self.find(&p);
        self.parent.insert(x.clone(), r.clone());
        r
    }
    fn union(&mut self, a: &Name, b: &Name) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(hi, lo);
        }
    }
}

/// Walks the conjunctive-positive spine of an assertion: the assertion
/// itself, both sides of `and`, and through double negation.
fn conjunctive_positive<'a>(b: &'a BoolTerm, out: &mut Vec<&'a BoolTerm>) {
    match b {
        BoolTerm::And(l, r) => {
            conjunctive_positive(l, out);
            conjunctive_positive(r, out);
        }
        BoolTerm::Not(x) => match x.as_ref() {
            BoolTerm::Not(y) => conjunctive_positive(y, out),
            _ => out.push(b),
        },
        _ => out.push(b),
    }
}

pub struct Encoding {
    pub psi: LiaFormula,
    pub map: EncodingMap,
}

struct Assembler {
    decls: BTreeMap<Name, Sort>,
    fresh: FreshNames,
    psi_n: Vec<LiaFormula>,
    folds: Vec<FoldInstance>,
    links: Vec<LinkInstance>,
    /// Alias-class representative per array (pure equality).
    alias: Uf,
    /// Lockstep-group representative per array (equality + writes).
    group: Uf,
    group_reps: Vec<Name>,
    group_of: BTreeMap<Name, usize>,
    tag_of: BTreeMap<Name, usize>,
    machine_group: Vec<bool>,
    len_vars: Vec<Name>,
    observers: Vec<ObserverInstance>,
    observer_dedupe: BTreeMap<(usize, usize, LinExpr), Name>,
    ack_reads: Vec<Vec<(LinExpr, Name)>>,
}

impl Assembler {
    fn fresh_var(&mut self) -> Name {
        let n = self.fresh.next(&self.decls);
        self.decls.insert(n.clone(), Sort::Int);
        n
    }

    fn len_lin(&self, g: usize) -> LinExpr {
        LinExpr::var(self.len_vars[g].clone())
    }

    /// Collapses a linear expression to a variable name, introducing a
    /// defining equality when it is not already one.
    fn as_var(&mut self, e: &LinExpr) -> Name {
        if e.constant == 0 && e.coeffs.len() == 1 {
            let (v, c) = e.coeffs.iter().next().unwrap();
            if *c == 1 {
                return v.clone();
            }
        }
        let v = self.fresh_var();
        self.psi_n
            .push(LiaFormula::eq(LinExpr::var(v.clone()), e.clone()));
        v
    }

    fn as_rhs(&mut self, e: &LinExpr) -> Rhs {
        match e.is_const() {
            Some(c) => Rhs::Const(c),
            None => Rhs::Var(self.as_var(e)),
        }
    }

    fn trans_int(&mut self, t: &IntTerm) -> Result<LinExpr, EncodeError> {
        Ok(match t {
            IntTerm::Const(n) => LinExpr::constant(*n),
            IntTerm::Var(x) => LinExpr::var(x.clone()),
            IntTerm::Add(a, b) => {
                let a = self.trans_int(a)?;
                a.plus(&self.trans_int(b)?)
            }
            IntTerm::Mul(k, a) => self.trans_int(a)?.scale(*k),
            IntTerm::Len(a) => {
                let g = self.group_of[&self.group.find(a)];
                self.len_lin(g)
            }
            IntTerm::Read(a, idx) => {
                let idx = self.trans_int(idx)?;
                let g = self.group_of[&self.group.find(a)];
                // Reads are in-bounds in every model (out-of-bounds reads
                // evaluate to an error, matching the evaluator).
                self.psi_n.push(LiaFormula::atom(
                    idx.clone(),
                    Rel::Ge,
                    LinExpr::constant(0),
                ));
                self.psi_n
                    .push(LiaFormula::atom(idx.clone(), Rel::Lt, self.len_lin(g)));
                if self.machine_group[g] {
                    let tag = self.tag_of[&self.alias.find(a)];
                    if let Some(v) = self.observer_dedupe.get(&(g, tag, idx.clone())) {
                        return Ok(LinExpr::var(v.clone()));
                    }
                    let idx_rhs = self.as_rhs(&idx);
                    let val_var = self.fresh_var();
                    self.observer_dedupe
                        .insert((g, tag, idx), val_var.clone());
                    self.observers.push(ObserverInstance {
                        group: g,
                        tag,
                        idx: idx_rhs,
                        val_var: val_var.clone(),
                    });
                    LinExpr::var(val_var)
                } else {
                    let val_var = self.fresh_var();
                    self.ack_reads[g].push((idx, val_var.clone()));
                    LinExpr::var(val_var)
                }
            }
        })
    }

    fn trans_bool(&mut self, b: &BoolTerm, conj_pos: bool) -> Result<LiaFormula, EncodeError> {
        Ok(match b {
            BoolTerm::IntEq(l, r) => {
                let l = self.trans_int(l)?;
                LiaFormula::eq(l, self.trans_int(r)?)
            }
            BoolTerm::IntLt(l, r) => {
                let l = self.trans_int(l)?;
                LiaFormula::atom(l, Rel::Lt, self.trans_int(r)?)
            }
            BoolTerm::And(l, r) => {
                let l = self.trans_bool(l, conj_pos)?;
                LiaFormula::and(vec![l, self.trans_bool(r, conj_pos)?])
            }
            BoolTerm::Not(x) => match x.as_ref() {
                BoolTerm::Not(y) => self.trans_bool(y, conj_pos)?,
                _ => LiaFormula::not(self.trans_bool(x, false)?),
            },
            BoolTerm::VecEq(l, r) => {
                let (VectorTerm::Tuple(ls), VectorTerm::Tuple(rs)) = (l, r) else {
                    unreachable!("folds replaced before translation");
                };
                let mut parts = Vec::new();
                for (a, b) in ls.iter().zip(rs) {
                    let a = self.trans_int(a)?;
                    parts.push(LiaFormula::eq(a, self.trans_int(b)?));
                }
                LiaFormula::and(parts)
            }
            BoolTerm::ArrayEq(..) => {
                if conj_pos {
                    // Realized by the grouping pass (shared tag or a write
                    // link machine); nothing left to assert here.
                    LiaFormula::True
                } else {
                    return Err(EncodeError::Unsupported(
                        "array equality under negation or disjunction".to_string(),
                    ));
                }
            }
        })
    }
}

fn replace_folds(
    b: &BoolTerm,
    decls: &mut BTreeMap<Name, Sort>,
    fresh: &mut FreshNames,
    folds: &mut Vec<FoldInstance>,
) -> BoolTerm {
    match b {
        BoolTerm::VecEq(l, r) => {
            let mut repl = |v: &VectorTerm| -> VectorTerm {
                match v {
                    VectorTerm::Tuple(_) => v.clone(),
                    VectorTerm::Fold { array, init, func } => {
                        let VectorTerm::Tuple(init) = init.as_ref() else {
                            unreachable!("normalized formulas have tuple inits");
                        };
                        let mut out = Vec::new();
                        for _ in 0..func.arity {
                            let n = fresh.next(decls);
                            decls.insert(n.clone(), Sort::Int);
                            out.push(n);
                        }
                        folds.push(FoldInstance {
                            array: array.clone(),
                            init: init.clone(),
                            func: func.clone(),
                            out: out.clone(),
                        });
                        VectorTerm::Tuple(out.into_iter().map(IntTerm::Var).collect())
                    }
                }
            };
            BoolTerm::VecEq(repl(l), repl(r))
        }
        BoolTerm::Not(x) => BoolTerm::not(replace_folds(x, decls, fresh, folds)),
        BoolTerm::And(l, r) => BoolTerm::and(
            replace_folds(l, decls, fresh, folds),
            replace_folds(r, decls, fresh, folds),
        ),
        other => other.clone(),
    }
}

/// Builds ψ and the provenance map for a validated formula. The formula is
/// normalized first; fold terms become fresh output tuples whose values are
/// pinned by the machine encodings.
pub fn assemble(f: &Formula) -> Result<Encoding, EncodeError> {
    let f = normalize(f);
    let mut decls = f.decls.clone();
    let mut fresh = FreshNames::new("v");
    let mut folds = Vec::new();
    let assertions: Vec<BoolTerm> = f
        .assertions
        .iter()
        .map(|b| replace_folds(b, &mut decls, &mut fresh, &mut folds))
        .collect();

    // Affine equalities between integer variables on the conjunctive spine
    // feed the activation-order restriction of product machines.
    let mut affine = AffineUf::new();
    for b in &assertions {
        let mut spine = Vec::new();
        conjunctive_positive(b, &mut spine);
        for item in spine {
            let pairs: Vec<(&IntTerm, &IntTerm)> = match item {
                BoolTerm::IntEq(l, r) => vec![(l, r)],
                BoolTerm::VecEq(VectorTerm::Tuple(l), VectorTerm::Tuple(r))
                    if l.len() == r.len() =>
                {
                    l.iter().zip(r.iter()).collect()
                }
                _ => continue,
            };
            for (l, r) in pairs {
                if let (Some((x, cx)), Some((y, cy))) = (as_var_offset(l), as_var_offset(r)) {
                    affine.union(x, y, cy - cx);
                }
            }
        }
    }

    // Grouping pass: alias classes from pure equalities, lockstep groups
    // additionally joined by writes.
    let mut alias = Uf::new();
    let mut group = Uf::new();
    let mut links = Vec::new();
    for (a, s) in &f.decls {
        if *s == Sort::Array {
            alias.find(a);
            group.find(a);
        }
    }
    for b in &assertions {
        let mut spine = Vec::new();
        conjunctive_positive(b, &mut spine);
        for item in spine {
            if let BoolTerm::ArrayEq(l, r) = item {
                match (l, r) {
                    (ArrayTerm::Var(a), ArrayTerm::Var(b)) => {
                        alias.union(a, b);
                        group.union(a, b);
                    }
                    (ArrayTerm::Var(a), ArrayTerm::Write { base, index, value })
                    | (ArrayTerm::Write { base, index, value }, ArrayTerm::Var(a)) => {
                        group.union(a, base);
                        links.push(LinkInstance {
                            dst: a.clone(),
                            base: base.clone(),
                            index: index.as_ref().clone(),
                            value: value.as_ref().clone(),
                        });
                    }
                    _ => {
                        return Err(EncodeError::Unsupported(
                            "equality between two write terms".to_string(),
                        ))
                    }
                }
            }
        }
    }

    // Deterministic group numbering by representative name; tags per alias
    // class within each group.
    let array_names: Vec<Name> = f
        .decls
        .iter()
        .filter(|(_, s)| **s == Sort::Array)
        .map(|(n, _)| n.clone())
        .collect();
    let mut group_reps: Vec<Name> = array_names
        .iter()
        .map(|a| group.find(a))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // Only keep groups that are actually referenced; unreferenced arrays
    // are detected later and synthesized as empty.
    let mut referenced: BTreeSet<Name> = BTreeSet::new();
    {
        fn walk_int(t: &IntTerm, out: &mut BTreeSet<Name>) {
            match t {
                IntTerm::Read(a, idx) => {
                    out.insert(a.clone());
                    walk_int(idx, out);
                }
                IntTerm::Len(a) => {
                    out.insert(a.clone());
                }
                IntTerm::Add(a, b) => {
                    walk_int(a, out);
                    walk_int(b, out);
                }
                IntTerm::Mul(_, a) => walk_int(a, out),
                _ => {}
            }
        }
        fn walk_bool(b: &BoolTerm, out: &mut BTreeSet<Name>) {
            match b {
                BoolTerm::ArrayEq(l, r) => {
                    for t in [l, r] {
                        match t {
                            ArrayTerm::Var(a) => {
                                out.insert(a.clone());
                            }
                            ArrayTerm::Write { base, index, value } => {
                                out.insert(base.clone());
                                walk_int(index, out);
                                walk_int(value, out);
                            }
                        }
                    }
                }
                BoolTerm::IntEq(l, r) | BoolTerm::IntLt(l, r) => {
                    walk_int(l, out);
                    walk_int(r, out);
                }
                BoolTerm::Not(x) => walk_bool(x, out),
                BoolTerm::And(l, r) => {
                    walk_bool(l, out);
                    walk_bool(r, out);
                }
                BoolTerm::VecEq(l, r) => {
                    for v in [l, r] {
                        if let VectorTerm::Tuple(ts) = v {
                            for t in ts {
                                walk_int(t, out);
                            }
                        }
                    }
                }
            }
        }
        for b in &assertions {
            walk_bool(b, &mut referenced);
        }
        for fi in &folds {
            referenced.insert(fi.array.clone());
            for t in &fi.init {
                walk_int(t, &mut referenced);
            }
            for br in &fi.func.branches {
                for g in &br.guard {
                    walk_int(&g.rhs, &mut referenced);
                }
            }
        }
        for l in &links {
            referenced.insert(l.dst.clone());
            referenced.insert(l.base.clone());
        }
        let referenced_reps: BTreeSet<Name> =
            referenced.iter().map(|a| group.find(a)).collect();
        group_reps.retain(|r| referenced_reps.contains(r));
    }
    let group_of: BTreeMap<Name, usize> = group_reps
        .iter()
        .enumerate()
        .map(|(i, r)| (r.clone(), i))
        .collect();
    let empty_arrays: Vec<Name> = array_names
        .iter()
        .filter(|a| !referenced.contains(*a))
        .cloned()
        .collect();

    let mut tag_of: BTreeMap<Name, usize> = BTreeMap::new();
    let mut tags_per_group = vec![0usize; group_reps.len()];
    let mut group_arrays: Vec<Vec<(Name, usize)>> = vec![Vec::new(); group_reps.len()];
    for a in &array_names {
        if !referenced.contains(a) {
            continue;
        }
        let g = group_of[&group.find(a)];
        let rep = alias.find(a);
        let tag = *tag_of.entry(rep).or_insert_with(|| {
            let t = tags_per_group[g];
            tags_per_group[g] += 1;
            t
        });
        group_arrays[g].push((a.clone(), tag));
    }

    let machine_group: Vec<bool> = (0..group_reps.len())
        .map(|g| {
            folds
                .iter()
                .any(|fi| group_of[&group.find(&fi.array)] == g)
                || links
                    .iter()
                    .any(|l| group_of[&group.find(&l.dst)] == g)
        })
        .collect();

    let len_vars: Vec<Name> = (0..group_reps.len()).map(|g| format!("_len{g}")).collect();

    let mut asm = Assembler {
        decls,
        fresh,
        psi_n: Vec::new(),
        folds,
        links,
        alias,
        group,
        group_reps,
        group_of,
        tag_of,
        machine_group,
        len_vars,
        observers: Vec::new(),
        observer_dedupe: BTreeMap::new(),
        ack_reads: Vec::new(),
    };
    asm.ack_reads = vec![Vec::new(); asm.group_reps.len()];
    for g in 0..asm.group_reps.len() {
        asm.psi_n.push(LiaFormula::atom(
            asm.len_lin(g),
            Rel::Ge,
            LinExpr::constant(0),
        ));
    }

    // ψ_n: the fold-free formula.
    for b in &assertions {
        let t = asm.trans_bool(b, true)?;
        asm.psi_n.push(t);
    }

    // Fold inits and guard terms, hoisted through the same translation.
    struct FoldMachineSpec {
        group: usize,
        tag: usize,
        start: Rhs,
        inits: Vec<Rhs>,
        func: FoldFunction,
        out: Vec<Name>,
    }
    let mut fold_specs: Vec<FoldMachineSpec> = Vec::new();
    let fold_insts = std::mem::take(&mut asm.folds);
    for fi in &fold_insts {
        let g = asm.group_of[&asm.group.find(&fi.array)];
        let tag = asm.tag_of[&asm.alias.find(&fi.array)];
        let mut inits = Vec::new();
        for t in &fi.init {
            let e = asm.trans_int(t)?;
            inits.push(asm.as_rhs(&e));
        }
        fold_specs.push(FoldMachineSpec {
            group: g,
            tag,
            start: inits[0].clone(),
            inits,
            func: fi.func.clone(),
            out: fi.out.clone(),
        });
    }
    let link_insts = std::mem::take(&mut asm.links);
    struct LinkMachineSpec {
        group: usize,
        dst_tag: usize,
        base_tag: usize,
        idx: Rhs,
        val: Rhs,
    }
    let mut link_specs = Vec::new();
    for l in &link_insts {
        let g = asm.group_of[&asm.group.find(&l.dst)];
        let dst_tag = asm.tag_of[&asm.alias.find(&l.dst)];
        let base_tag = asm.tag_of[&asm.alias.find(&l.base)];
        let idx = asm.trans_int(&l.index)?;
        // In-bounds side condition for the write position.
        asm.psi_n
            .push(LiaFormula::atom(idx.clone(), Rel::Ge, LinExpr::constant(0)));
        asm.psi_n
            .push(LiaFormula::atom(idx.clone(), Rel::Lt, asm.len_lin(g)));
        let idx = asm.as_rhs(&idx);
        let val = asm.trans_int(&l.value)?;
        let val = asm.as_rhs(&val);
        if dst_tag == base_tag {
            return Err(EncodeError::Unsupported(
                "write between aliased arrays".to_string(),
            ));
        }
        link_specs.push(LinkMachineSpec {
            group: g,
            dst_tag,
            base_tag,
            idx,
            val,
        });
    }

    // Shared hoisting of guard comparison terms across all machines.
    let mut hoist_cache: BTreeMap<IntTerm, Rhs> = BTreeMap::new();
    let mut hoisted_defs: Vec<LiaFormula> = Vec::new();
    // Translate guard terms up-front (trans_int may create observers, which
    // must exist before machines are built).
    {
        let mut terms: Vec<IntTerm> = Vec::new();
        for s in &fold_specs {
            for br in &s.func.branches {
                for g in &br.guard {
                    if g.lhs != GuardLhs::State && !matches!(g.rhs, IntTerm::Const(_)) {
                        terms.push(g.rhs.clone());
                    }
                }
            }
        }
        for t in terms {
            if hoist_cache.contains_key(&t) {
                continue;
            }
            let e = asm.trans_int(&t)?;
            let r = asm.as_rhs(&e);
            hoist_cache.insert(t, r);
        }
    }
    asm.psi_n.append(&mut hoisted_defs);

    // Build machines per group.
    let n_groups = asm.group_reps.len();
    let mut group_machines: Vec<Vec<(Scm, MachineKind)>> = (0..n_groups).map(|_| Vec::new()).collect();
    #[derive(Clone)]
    enum MachineKind {
        Fold { out: Vec<Name> },
        Observer { idx: Rhs },
        Link,
    }
    for s in &fold_specs {
        let mut hoist = |t: &IntTerm| -> Rhs {
            hoist_cache
                .get(t)
                .cloned()
                .expect("guard terms hoisted up-front")
        };
        let core = translate_fold(
            &s.func,
            group_machines[s.group].len(),
            s.tag,
            s.start.clone(),
            s.inits.clone(),
            &mut hoist,
        )?;
        let mut aligned = align(&specialize_position_atoms(&core));
        drop_subsumed(&mut aligned);
        group_machines[s.group].push((aligned, MachineKind::Fold { out: s.out.clone() }));
    }
    for o in &asm.observers {
        // A hand-built two-state core: one transition consuming the observed
        // cell and requiring it to equal the read's value variable. The
        // activation schedule in ψ_l pins the consuming step to the read
        // index, so no guard on the position is needed; going through
        // translate_fold instead would spray catch-all transitions and
        // position boundaries over the whole product.
        let core = Scm {
            k: 1,
            n_tags: o.tag + 1,
            machines: vec![MachineInfo {
                fold_id: group_machines[o.group].len(),
                ctr_lo: 0,
                k: 1,
                start: o.idx.clone(),
                inits: vec![o.idx.clone()],
                tag: o.tag,
            }],
            states: vec![
                StateMeta {
                    name: "read".to_string(),
                    waiting: vec![false],
                    done: vec![false],
                },
                StateMeta {
                    name: "done".to_string(),
                    waiting: vec![false],
                    done: vec![true],
                },
            ],
            transitions: vec![Transition {
                from: 0,
                to: 1,
                cc: vec![],
                ic: vec![InputAtom {
                    tag: o.tag,
                    cmp: Cmp6::Eq,
                    rhs: InputRhs::Var(o.val_var.clone()),
                }],
                inc: vec![1],
                activates: vec![],
            }],
            init_state: 0,
        };
        group_machines[o.group].push((
            align(&core),
            MachineKind::Observer { idx: o.idx.clone() },
        ));
    }
    for s in &link_specs {
        let scm = link_machine(s.group, s.dst_tag, s.base_tag, &s.idx, &s.val, &asm);
        group_machines[s.group].push((scm, MachineKind::Link));
    }

    // Per-group encodings.
    let mut psi_parts: Vec<LiaFormula> = std::mem::take(&mut asm.psi_n);
    let mut groups_out: Vec<GroupEncoding> = Vec::new();
    let mut ack_out: Vec<AckGroup> = Vec::new();
    for g in 0..n_groups {
        if !asm.machine_group[g] {
            // Ackermann expansion for fold-free classes.
            let reads = asm.ack_reads[g].clone();
            for (x, (i1, v1)) in reads.iter().enumerate() {
                for (i2, v2) in reads.iter().skip(x + 1) {
                    psi_parts.push(LiaFormula::implies(
                        LiaFormula::eq(i1.clone(), i2.clone()),
                        LiaFormula::eq(LinExpr::var(v1.clone()), LinExpr::var(v2.clone())),
                    ));
                }
            }
            ack_out.push(AckGroup {
                arrays: group_arrays[g].iter().map(|(n, _)| n.clone()).collect(),
                len_var: asm.len_vars[g].clone(),
                reads,
            });
            continue;
        }
        let machines = &group_machines[g];
        // Chained activation: a machine whose start index equals (or lies
        // beyond) another fold's index output can only run once that fold
        // is done.
        let mut order_pairs: Vec<(usize, usize)> = Vec::new();
        for (ai, (_, kind)) in machines.iter().enumerate() {
            let MachineKind::Fold { out } = kind else { continue };
            for (bi, (m, _)) in machines.iter().enumerate() {
                let Rhs::Var(s) = &m.machines[0].start else { continue };
                if ai != bi && matches!(affine.offset(s, &out[0]), Some(c) if c >= 0) {
                    order_pairs.push((ai, bi));
                }
            }
        }
        let mut prod = machines[0].0.clone();
        for (m, _) in &machines[1..] {
            prod = product(&prod, m)?;
            let live = prod.machines.len();
            restrict_machine_order(
                &mut prod,
                &order_pairs
                    .iter()
                    .filter(|&&(a, b)| a < live && b < live)
                    .copied()
                    .collect::<Vec<_>>(),
            );
            drop_subsumed(&mut prod);
        }
        let enc_scm = with_position_track(&prod);
        let regions = build_regions(&enc_scm);
        let revs = reversal_bound(&enc_scm);
        let copies = mode_copy_count(&regions, &revs);
        let mg = build_mode_graph(&enc_scm, copies)?;
        let prefix = format!("_g{g}");
        let nfa_edges: Vec<(usize, usize)> = mg.transitions.iter().map(|t| (t.from, t.to)).collect();
        let accepting = vec![true; mg.n_states()];
        let (psi_p, count_vars, sink_vars) =
            encode_parikh(mg.n_states(), &nfa_edges, mg.init, &accepting, &prefix);
        psi_parts.push(psi_p);
        let mut inits: Vec<LinExpr> = prod
            .machines
            .iter()
            .flat_map(|m| m.inits.iter().map(rhs_lin))
            .collect();
        inits.push(LinExpr::constant(0)); // the position track
        let (psi_c, finals) =
            encode_counter_constraints(&enc_scm, &mg, &count_vars, &inits, &prefix);
        psi_parts.push(psi_c);
        let (psi_i, witness_vars) = encode_inputs(&prod, &mg, &count_vars, &prefix);
        psi_parts.push(psi_i);

        // ψ_l: outputs, observers, links, activation schedule, run length.
        let len = asm.len_lin(g);
        let mut total = LinExpr::constant(0);
        for v in &count_vars {
            total.add_term(v, 1);
        }
        psi_parts.push(LiaFormula::eq(total, len.clone()));
        for (mi, m) in prod.machines.iter().enumerate() {
            match &machines[mi].1 {
                MachineKind::Fold { out } => {
                    for (j, o) in out.iter().enumerate() {
                        psi_parts.push(LiaFormula::eq(
                            LinExpr::var(o.clone()),
                            finals[m.ctr_lo + j].clone(),
                        ));
                    }
                }
                MachineKind::Observer { idx } => {
                    psi_parts.push(LiaFormula::eq(
                        finals[m.ctr_lo].clone(),
                        rhs_lin(idx).plus_const(1),
                    ));
                }
                MachineKind::Link => {
                    psi_parts.push(LiaFormula::eq(finals[m.ctr_lo].clone(), len.clone()));
                }
            }
            // Activation schedule for machines with a waiting phase: if the
            // machine activates, the number of cells consumed while it was
            // waiting equals its start index; otherwise the start index
            // must lie outside the array.
            let has_wait = prod.states.iter().any(|s| s.waiting[mi]);
            if has_wait {
                let mut act = LinExpr::constant(0);
                let mut wsrc = LinExpr::constant(0);
                for (mt, t) in mg.transitions.iter().enumerate() {
                    let st = &prod.transitions[t.scm_t];
                    if st.activates.contains(&mi) {
                        act.add_term(&count_vars[mt], 1);
                    }
                    if prod.states[st.from].waiting[mi] {
                        wsrc.add_term(&count_vars[mt], 1);
                    }
                }
                let start = rhs_lin(&m.start);
                psi_parts.push(LiaFormula::implies(
                    LiaFormula::atom(act.clone(), Rel::Ge, LinExpr::constant(1)),
                    LiaFormula::eq(wsrc, start.clone().plus_const(1)),
                ));
                psi_parts.push(LiaFormula::implies(
                    LiaFormula::eq(act, LinExpr::constant(0)),
                    LiaFormula::or(vec![
                        LiaFormula::atom(start.clone(), Rel::Lt, LinExpr::constant(0)),
                        LiaFormula::atom(start, Rel::Ge, len.clone()),
                    ]),
                ));
            }
        }

        groups_out.push(GroupEncoding {
            arrays: group_arrays[g].clone(),
            len_var: asm.len_vars[g].clone(),
            scm: prod,
            mode: mg,
            count_vars,
            sink_vars,
            witness_vars,
        });
    }

    let int_vars: Vec<Name> = f
        .decls
        .iter()
        .filter(|(_, s)| **s == Sort::Int)
        .map(|(n, _)| n.clone())
        .collect();

    Ok(Encoding {
        psi: LiaFormula::and(psi_parts),
        map: EncodingMap {
            int_vars,
            groups: groups_out,
            ack_groups: ack_out,
            empty_arrays,
        },
    })
}

/// Adds a shared stream-position counter to a product machine: every
/// transition advances it by one, and constraints on the machines' own
/// index counters are restated against it. An active machine's index
/// always equals the stream position (activation is pinned to the start
/// index, and both advance together from there), and index constraints
/// only occur on transitions of active machines, so the restatement is
/// exact. This collapses all index boundaries into one monotone track and
/// frees the per-machine index counters — which still track values for the
/// fold outputs — from the region and direction machinery.
fn with_position_track(scm: &Scm) -> Scm {
    let mut out = scm.clone();
    let pos = scm.k;
    out.k += 1;
    let index: BTreeSet<usize> = scm.machines.iter().map(|m| m.ctr_lo).collect();
    for t in &mut out.transitions {
        t.inc.push(1);
        for a in &mut t.cc {
            if index.contains(&a.ctr) {
                a.ctr = pos;
            }
        }
    }
    out
}

/// Lockstep machine realizing `dst = base{idx <- val}`: at the write
/// position the destination cell equals the written value, everywhere else
/// it copies the base cell. Fully traverses the group (exit index pinned
/// to the length by ψ_l).
fn link_machine(
    _group: usize,
    dst_tag: usize,
    base_tag: usize,
    idx: &Rhs,
    val: &Rhs,
    _asm: &Assembler,
) -> Scm {
    let idx_atom = |cmp: Cmp6| CounterAtom {
        ctr: 0,
        cmp,
        rhs: idx.clone(),
    };
    let val_rhs = match val {
        Rhs::Const(n) => InputRhs::Const(*n),
        Rhs::Var(x) => InputRhs::Var(x.clone()),
    };
    Scm {
        k: 1,
        n_tags: dst_tag.max(base_tag) + 1,
        machines: vec![MachineInfo {
            fold_id: 0,
            ctr_lo: 0,
            k: 1,
            start: Rhs::Const(0),
            inits: vec![Rhs::Const(0)],
            tag: dst_tag,
        }],
        states: vec![StateMeta {
            name: "copy".to_string(),
            waiting: vec![false],
            done: vec![false],
        }],
        transitions: vec![
            Transition {
                from: 0,
                to: 0,
                cc: vec![idx_atom(Cmp6::Eq)],
                ic: vec![InputAtom {
                    tag: dst_tag,
                    cmp: Cmp6::Eq,
                    rhs: val_rhs,
                }],
                inc: vec![1],
                activates: vec![],
            },
            Transition {
                from: 0,
                to: 0,
                cc: vec![idx_atom(Cmp6::Ne)],
                ic: vec![InputAtom {
                    tag: dst_tag,
                    cmp: Cmp6::Eq,
                    rhs: InputRhs::Cell(base_tag),
                }],
                inc: vec![1],
                activates: vec![],
            },
        ],
        init_state: 0,
    }
}
