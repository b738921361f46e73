//! Symbolic counter machines: construction from fold functions, alignment
//! to a shared cell stream, parallel products, reversal bounds, and
//! deterministic replay/simulation used for cross-checking against the
//! reference evaluator.
//!
//! A machine reads the cells of one array group in order. Fold starts at
//! arbitrary indices are handled positionally: a machine whose fold starts
//! at index `x_s` idles in a waiting state for the first `x_s` cells and
//! activates on cell `x_s`; an early `break` (explicit or the implicit
//! catch-all) parks it in a done state whose self-loop consumes the
//! remaining cells without touching the counters.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{
    build_cfg, check_scc_monotone, Branch, Cmp, FoldFunction, GuardAtom, GuardLhs, IntTerm, Name,
    UpdateAtom,
};

/// Comparison operators closed under negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cmp6 {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Cmp6 {
    pub fn holds(self, l: i64, r: i64) -> bool {
        match self {
            Cmp6::Lt => l < r,
            Cmp6::Le => l <= r,
            Cmp6::Gt => l > r,
            Cmp6::Ge => l >= r,
            Cmp6::Eq => l == r,
            Cmp6::Ne => l != r,
        }
    }
    pub fn negated(self) -> Cmp6 {
        match self {
            Cmp6::Lt => Cmp6::Ge,
            Cmp6::Le => Cmp6::Gt,
            Cmp6::Gt => Cmp6::Le,
            Cmp6::Ge => Cmp6::Lt,
            Cmp6::Eq => Cmp6::Ne,
            Cmp6::Ne => Cmp6::Eq,
        }
    }
    pub fn from_ast(c: Cmp) -> Cmp6 {
        match c {
            Cmp::Lt => Cmp6::Lt,
            Cmp::Gt => Cmp6::Gt,
            Cmp::Eq => Cmp6::Eq,
            Cmp::Ne => Cmp6::Ne,
        }
    }
    /// The set of elementary order relations (<, =, >) this comparison
    /// admits between subject and right-hand side.
    pub fn allowed(self) -> [bool; 3] {
        match self {
            Cmp6::Lt => [true, false, false],
            Cmp6::Le => [true, true, false],
            Cmp6::Gt => [false, false, true],
            Cmp6::Ge => [false, true, true],
            Cmp6::Eq => [false, true, false],
            Cmp6::Ne => [true, false, true],
        }
    }
}

impl fmt::Display for Cmp6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cmp6::Lt => "<",
            Cmp6::Le => "<=",
            Cmp6::Gt => ">",
            Cmp6::Ge => ">=",
            Cmp6::Eq => "=",
            Cmp6::Ne => "!=",
        };
        write!(f, "{s}")
    }
}

/// Right-hand side of a counter constraint or a start/init value: a
/// constant or a (hoisted) integer variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rhs {
    Const(i64),
    Var(Name),
}

impl fmt::Display for Rhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhs::Const(n) => write!(f, "{n}"),
            Rhs::Var(x) => write!(f, "{x}"),
        }
    }
}

/// Right-hand side of an input constraint; `Cell(t)` compares against the
/// current cell of another array in the same lockstep group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InputRhs {
    Const(i64),
    Var(Name),
    Cell(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CounterAtom {
    pub ctr: usize,
    pub cmp: Cmp6,
    pub rhs: Rhs,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputAtom {
    /// Which array of the lockstep group the constrained cell belongs to.
    pub tag: usize,
    pub cmp: Cmp6,
    pub rhs: InputRhs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    /// Conjunction of counter constraints, checked against pre-step values.
    pub cc: Vec<CounterAtom>,
    /// Conjunction of constraints on the consumed cells.
    pub ic: Vec<InputAtom>,
    /// Counter increments, arity `Scm::k`.
    pub inc: Vec<i64>,
    /// Machines that leave their waiting state on this transition.
    pub activates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateMeta {
    pub name: String,
    /// Per machine: still waiting for its fold's start position.
    pub waiting: Vec<bool>,
    /// Per machine: fold already terminated (break or catch-all).
    pub done: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineInfo {
    /// Identifier of the fold occurrence this machine came from.
    pub fold_id: usize,
    /// Counters `[ctr_lo, ctr_lo + k)` belong to this machine; `ctr_lo` is
    /// its fold-index counter.
    pub ctr_lo: usize,
    pub k: usize,
    /// Initial index (activation position).
    pub start: Rhs,
    /// Initial values: index first, then the counters.
    pub inits: Vec<Rhs>,
    /// Cell tag this machine reads.
    pub tag: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scm {
    pub k: usize,
    pub n_tags: usize,
    pub machines: Vec<MachineInfo>,
    pub states: Vec<StateMeta>,
    pub transitions: Vec<Transition>,
    pub init_state: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScmError {
    #[error("fold function violates SCC-monotonicity")]
    NonMonotoneScc,
    #[error("catch-all expansion too large ({0} combinations)")]
    CatchAllTooLarge(usize),
    #[error("product machine too large ({states} states)")]
    ProductTooLarge { states: usize },
}

// ---------------------------------------------------------------------------
// Translation of a fold function (Definition-style construction)
// ---------------------------------------------------------------------------

const CATCH_ALL_CAP: usize = 4096;
pub const PRODUCT_STATE_CAP: usize = 40_000;

/// Splits a branch guard into counter atoms (over this machine's counters)
/// and input atoms (over the read cell), hoisting non-constant comparison
/// terms through `hoist`. State atoms are dropped: they are realized by the
/// control structure.
fn split_guard(
    guard: &[GuardAtom],
    ctr_lo: usize,
    tag: usize,
    hoist: &mut dyn FnMut(&IntTerm) -> Rhs,
    negate: Option<usize>,
) -> (Vec<CounterAtom>, Vec<InputAtom>) {
    let mut cc = Vec::new();
    let mut ic = Vec::new();
    for (gi, g) in guard.iter().enumerate() {
        if g.lhs == GuardLhs::State {
            continue;
        }
        let mut cmp = Cmp6::from_ast(g.cmp);
        if negate == Some(gi) {
            cmp = cmp.negated();
        } else if negate.is_some() {
            continue;
        }
        let rhs = match &g.rhs {
            IntTerm::Const(n) => Rhs::Const(*n),
            t => hoist(t),
        };
        match g.lhs {
            GuardLhs::Elem => ic.push(InputAtom {
                tag,
                cmp,
                rhs: match rhs {
                    Rhs::Const(n) => InputRhs::Const(n),
                    Rhs::Var(x) => InputRhs::Var(x),
                },
            }),
            GuardLhs::Index => cc.push(CounterAtom { ctr: ctr_lo, cmp, rhs }),
            GuardLhs::Counter(c) => cc.push(CounterAtom {
                ctr: ctr_lo + c,
                cmp,
                rhs,
            }),
            GuardLhs::State => unreachable!(),
        }
    }
    (cc, ic)
}

/// Indices of non-state atoms of a guard.
fn non_state_atoms(guard: &[GuardAtom]) -> Vec<usize> {
    guard
        .iter()
        .enumerate()
        .filter(|(_, g)| g.lhs != GuardLhs::State)
        .map(|(i, _)| i)
        .collect()
}

fn state_guard_allows(branch: &Branch, state: i64) -> bool {
    branch.guard.iter().all(|g| {
        if g.lhs != GuardLhs::State {
            return true;
        }
        match g.rhs {
            IntTerm::Const(n) => g.cmp.holds(state, n),
            _ => false,
        }
    })
}

/// Translates one fold function into a single-machine SCM. The machine has
/// the control-flow states of the function plus a `done` state reached by
/// `break` branches and by the materialized catch-all (one transition per
/// choice of one negated atom per enabled branch). The waiting state and
/// the done self-loop are added by [`align`].
pub fn translate_fold(
    func: &FoldFunction,
    fold_id: usize,
    tag: usize,
    start: Rhs,
    inits: Vec<Rhs>,
    hoist: &mut dyn FnMut(&IntTerm) -> Rhs,
) -> Result<Scm, ScmError> {
    let cfg = build_cfg(func);
    if !check_scc_monotone(func, &cfg) {
        return Err(ScmError::NonMonotoneScc);
    }
    let k = func.arity;
    let mut states: Vec<StateMeta> = cfg
        .states
        .iter()
        .map(|s| StateMeta {
            name: format!("s{s}"),
            waiting: vec![false],
            done: vec![false],
        })
        .collect();
    let state_index: BTreeMap<i64, usize> = cfg
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i))
        .collect();
    let done = states.len();
    states.push(StateMeta {
        name: "done".to_string(),
        waiting: vec![false],
        done: vec![true],
    });

    let mut transitions = Vec::new();
    for (&sv, &si) in &state_index {
        let enabled: Vec<usize> = (0..func.branches.len())
            .filter(|&bi| state_guard_allows(&func.branches[bi], sv))
            .collect();
        // Active and break transitions.
        for &bi in &enabled {
            let br = &func.branches[bi];
            let (cc, ic) = split_guard(&br.guard, 0, tag, hoist, None);
            if br.updates.contains(&UpdateAtom::Break) {
                transitions.push(Transition {
                    from: si,
                    to: done,
                    cc,
                    ic,
                    inc: vec![0; k],
                    activates: vec![],
                });
            } else {
                let mut inc = vec![0i64; k];
                inc[0] = 1;
                let mut target = sv;
                for u in &br.updates {
                    match u {
                        UpdateAtom::CtrAdd(c, n) => inc[*c] += n,
                        UpdateAtom::SetState(n) => target = *n,
                        _ => {}
                    }
                }
                transitions.push(Transition {
                    from: si,
                    to: state_index[&target],
                    cc,
                    ic,
                    inc,
                    activates: vec![],
                });
            }
        }
        // Catch-all: one transition per way of refuting every enabled
        // branch by negating one of its non-state atoms.
        let choice_sets: Vec<Vec<usize>> = enabled
            .iter()
            .map(|&bi| non_state_atoms(&func.branches[bi].guard))
            .collect();
        if choice_sets.iter().all(|s| !s.is_empty()) {
            let combos: usize = choice_sets.iter().map(|s| s.len()).product();
            if combos > CATCH_ALL_CAP {
                return Err(ScmError::CatchAllTooLarge(combos));
            }
            let mut pick = vec![0usize; choice_sets.len()];
            loop {
                let mut cc = Vec::new();
                let mut ic = Vec::new();
                for (j, &bi) in enabled.iter().enumerate() {
                    let (mut c1, mut i1) = split_guard(
                        &func.branches[bi].guard,
                        0,
                        tag,
                        hoist,
                        Some(choice_sets[j][pick[j]]),
                    );
                    cc.append(&mut c1);
                    ic.append(&mut i1);
                }
                let t = Transition {
                    from: si,
                    to: done,
                    cc,
                    ic,
                    inc: vec![0; k],
                    activates: vec![],
                };
                if !transition_unsat(&t, &[MachineInfo {
                    fold_id,
                    ctr_lo: 0,
                    k,
                    start: start.clone(),
                    inits: inits.clone(),
                    tag,
                }]) {
                    transitions.push(t);
                }
                // Next combination.
                let mut j = choice_sets.len();
                let mut carry = true;
                while carry && j > 0 {
                    j -= 1;
                    pick[j] += 1;
                    if pick[j] < choice_sets[j].len() {
                        carry = false;
                    } else {
                        pick[j] = 0;
                    }
                }
                if carry {
                    break;
                }
            }
        }
        // If some enabled branch has an always-true guard (no non-state
        // atoms) the catch-all is unsatisfiable at this state: no
        // transitions added. If no branch is enabled at all, the catch-all
        // guard is `true`: a single unguarded transition to done.
        if enabled.is_empty() {
            transitions.push(Transition {
                from: si,
                to: done,
                cc: vec![],
                ic: vec![],
                inc: vec![0; k],
                activates: vec![],
            });
        }
    }

    Ok(Scm {
        k,
        n_tags: tag + 1,
        machines: vec![MachineInfo {
            fold_id,
            ctr_lo: 0,
            k,
            start,
            inits,
            tag,
        }],
        states,
        transitions,
        init_state: state_index[&0],
    })
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Makes a core machine composable over a shared cell stream:
/// - the done state gets an unconstrained self-loop consuming cells;
/// - unless the fold provably starts at index 0, a waiting state is
///   prepended with a counter-free self-loop and one activating copy of
///   every transition leaving the original initial state.
///
/// The activation position is not guarded here; the encoder pins the
/// number of waiting steps to the start index, and the deterministic
/// simulator activates exactly at that position.
pub fn align(scm: &Scm) -> Scm {
    assert_eq!(scm.machines.len(), 1, "align applies to single machines");
    let mut out = scm.clone();
    // Specialization can prove the done state unreachable (a fold that
    // provably never breaks early); such a machine scans to the end of the
    // word and needs no idling loop.
    if let Some(done) = out.states.iter().position(|s| s.done[0]) {
        out.transitions.push(Transition {
            from: done,
            to: done,
            cc: vec![],
            ic: vec![],
            inc: vec![0; out.k],
            activates: vec![],
        });
    }
    if out.machines[0].start == Rhs::Const(0) {
        return out;
    }
    let wait = out.states.len();
    out.states.push(StateMeta {
        name: "wait".to_string(),
        waiting: vec![true],
        done: vec![false],
    });
    out.transitions.push(Transition {
        from: wait,
        to: wait,
        cc: vec![],
        ic: vec![],
        inc: vec![0; out.k],
        activates: vec![],
    });
    let from_init: Vec<Transition> = out
        .transitions
        .iter()
        .filter(|t| t.from == out.init_state && t.to != wait)
        .cloned()
        .collect();
    for t in from_init {
        out.transitions.push(Transition {
            from: wait,
            to: t.to,
            cc: t.cc,
            ic: t.ic,
            inc: t.inc,
            activates: vec![0],
        });
    }
    out.init_state = wait;
    out
}

// ---------------------------------------------------------------------------
// Positional specialization
// ---------------------------------------------------------------------------

/// What a bounded position offset tells us about one index atom.
enum Decide {
    True,
    False,
    Keep,
}

fn decide_index_atom(atom: &CounterAtom, start: &Rhs, lvl: Option<i64>, cap: i64) -> Decide {
    // The machine's index equals start + d where d is the exact offset
    // `lvl`, or at least `cap` when `lvl` is None.
    let vs_zero = |cmp: Cmp6| match lvl {
        Some(d) => {
            if cmp.holds(d, 0) {
                Decide::True
            } else {
                Decide::False
            }
        }
        // d >= cap >= 1, so every comparison against 0 is determined.
        None => match cmp {
            Cmp6::Lt | Cmp6::Le | Cmp6::Eq => Decide::False,
            Cmp6::Gt | Cmp6::Ge | Cmp6::Ne => Decide::True,
        },
    };
    if atom.rhs == *start {
        return vs_zero(atom.cmp);
    }
    if let (Rhs::Const(s0), Rhs::Const(c)) = (start, &atom.rhs) {
        return match lvl {
            Some(d) => {
                if atom.cmp.holds(s0 + d, *c) {
                    Decide::True
                } else {
                    Decide::False
                }
            }
            None => {
                // index >= s0 + cap.
                let floor = s0 + cap;
                match atom.cmp {
                    Cmp6::Lt | Cmp6::Le | Cmp6::Eq if floor > *c => Decide::False,
                    Cmp6::Gt | Cmp6::Ge | Cmp6::Ne if floor > *c => Decide::True,
                    Cmp6::Ge if floor == *c => Decide::True,
                    Cmp6::Lt if floor == *c => Decide::False,
                    _ => Decide::Keep,
                }
            }
        };
    }
    Decide::Keep
}

/// Unrolls a single core machine by its position offset and statically
/// decides index guards against the machine's own start index. A fold like
/// `⟨i⟩ = fold a ⟨x⟩ (i = x ∧ e = v ⇒ skip)` turns into a straight-line
/// machine whose guard atoms are gone: the atom `i = x` is true on the
/// activation step and false afterwards, no matter what `x` is. Removing
/// these atoms eliminates whole families of catch-all transitions and,
/// more importantly, position boundaries that would otherwise multiply the
/// mode copies of everything sharing the product.
pub fn specialize_position_atoms(scm: &Scm) -> Scm {
    assert_eq!(scm.machines.len(), 1, "specialization applies to core machines");
    let start = scm.machines[0].start.clone();
    if !scm.transitions.iter().any(|t| t.cc.iter().any(|a| a.ctr == 0)) {
        return scm.clone();
    }
    // Offsets beyond the largest decidable constant behave uniformly.
    let mut cap = 1i64;
    if let Rhs::Const(s0) = &start {
        for t in &scm.transitions {
            for a in &t.cc {
                if a.ctr == 0 {
                    if let Rhs::Const(c) = &a.rhs {
                        cap = cap.max((c - s0 + 1).clamp(1, 16));
                    }
                }
            }
        }
    }

    let mut states: Vec<StateMeta> = Vec::new();
    let mut index: BTreeMap<(usize, Option<i64>), usize> = BTreeMap::new();
    let mut queue: Vec<(usize, Option<i64>)> = Vec::new();
    let add = |key: (usize, Option<i64>),
                   states: &mut Vec<StateMeta>,
                   index: &mut BTreeMap<(usize, Option<i64>), usize>,
                   queue: &mut Vec<(usize, Option<i64>)>|
     -> usize {
        // A single collapsed done state keeps `align` applicable.
        let key = if scm.states[key.0].done[0] { (key.0, Some(0)) } else { key };
        if let Some(&i) = index.get(&key) {
            return i;
        }
        let meta = StateMeta {
            name: match key.1 {
                Some(d) => format!("{}@{d}", scm.states[key.0].name),
                None => format!("{}@+", scm.states[key.0].name),
            },
            ..scm.states[key.0].clone()
        };
        let i = states.len();
        states.push(meta);
        index.insert(key, i);
        queue.push(key);
        i
    };

    let init = add((scm.init_state, Some(0)), &mut states, &mut index, &mut queue);
    let mut transitions: Vec<Transition> = Vec::new();
    let mut qi = 0;
    while qi < queue.len() {
        let (s, lvl) = queue[qi];
        qi += 1;
        let from = index[&(s, lvl)];
        'next: for t in scm.transitions.iter().filter(|t| t.from == s) {
            let mut cc = Vec::new();
            for a in &t.cc {
                if a.ctr == 0 {
                    match decide_index_atom(a, &start, lvl, cap) {
                        Decide::True => continue,
                        Decide::False => continue 'next,
                        Decide::Keep => {}
                    }
                }
                cc.push(a.clone());
            }
            let next_lvl = match (lvl, t.inc[0]) {
                (Some(d), delta) if d + delta < cap => Some(d + delta),
                _ => None,
            };
            let to = add((t.to, next_lvl), &mut states, &mut index, &mut queue);
            transitions.push(Transition {
                from,
                to,
                cc,
                ic: t.ic.clone(),
                inc: t.inc.clone(),
                activates: t.activates.clone(),
            });
        }
    }
    Scm {
        states,
        transitions,
        init_state: init,
        ..scm.clone()
    }
}

/// Drops transitions whose constraints are a strict superset of a parallel
/// transition with the same source, target, increments and activations:
/// they accept a subset of the same cells and contribute nothing to the
/// machine's language.
pub fn drop_subsumed(scm: &mut Scm) {
    use std::collections::BTreeSet;
    let keys: Vec<(usize, usize, Vec<i64>, Vec<usize>)> = scm
        .transitions
        .iter()
        .map(|t| (t.from, t.to, t.inc.clone(), t.activates.clone()))
        .collect();
    let atom_sets: Vec<(BTreeSet<&CounterAtom>, BTreeSet<&InputAtom>)> = scm
        .transitions
        .iter()
        .map(|t| (t.cc.iter().collect(), t.ic.iter().collect()))
        .collect();
    let n = scm.transitions.len();
    let mut dead = vec![false; n];
    for i in 0..n {
        if dead[i] {
            continue;
        }
        for j in 0..n {
            if i == j || dead[j] || keys[i] != keys[j] {
                continue;
            }
            let subset = atom_sets[i].0.is_subset(&atom_sets[j].0)
                && atom_sets[i].1.is_subset(&atom_sets[j].1);
            let proper = atom_sets[i].0.len() + atom_sets[i].1.len()
                < atom_sets[j].0.len() + atom_sets[j].1.len();
            if subset && (proper || i < j) {
                dead[j] = true;
            }
        }
    }
    let mut it = dead.iter();
    scm.transitions.retain(|_| !*it.next().unwrap());
}

/// Removes product states that contradict a known activation ordering:
/// for every pair `(a, b)`, machine `b` starts at machine `a`'s final
/// index, so `b` cannot have left its waiting state while `a` is still
/// running. While a machine is active its index equals the stream
/// position, so its final index is either its break position (where `b`
/// activates on the very transition that parks `a` in done) or the array
/// length (where `b` never activates). Unreachable states and their
/// transitions are dropped and the machine is renumbered.
pub fn restrict_machine_order(scm: &mut Scm, pairs: &[(usize, usize)]) {
    if pairs.is_empty() {
        return;
    }
    let allowed: Vec<bool> = scm
        .states
        .iter()
        .map(|s| {
            pairs
                .iter()
                .all(|&(a, b)| a == b || s.waiting[b] || s.done[a])
        })
        .collect();
    if allowed.iter().all(|&x| x) {
        return;
    }
    let mut remap: Vec<Option<usize>> = vec![None; scm.states.len()];
    let mut order: Vec<usize> = Vec::new();
    if allowed[scm.init_state] {
        remap[scm.init_state] = Some(0);
        order.push(scm.init_state);
    }
    let mut qi = 0;
    while qi < order.len() {
        let s = order[qi];
        qi += 1;
        for t in scm.transitions.iter().filter(|t| t.from == s) {
            if allowed[t.to] && remap[t.to].is_none() {
                remap[t.to] = Some(order.len());
                order.push(t.to);
            }
        }
    }
    scm.states = order.iter().map(|&s| scm.states[s].clone()).collect();
    scm.transitions = std::mem::take(&mut scm.transitions)
        .into_iter()
        .filter_map(|t| match (remap[t.from], remap[t.to]) {
            (Some(f), Some(to)) => Some(Transition { from: f, to, ..t }),
            _ => None,
        })
        .collect();
    scm.init_state = 0;
}

// ---------------------------------------------------------------------------
// Syntactic unsatisfiability pruning
// ---------------------------------------------------------------------------

/// Subject of an atomic constraint for pruning purposes. All fold-index
/// counters of active machines equal the current stream position, so their
/// atoms share one subject.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Subject {
    Position,
    Counter(usize),
    Cell(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum PruneRhs {
    Const(i64),
    Var(Name),
    Cell(usize),
}

/// True if the conjunction of the transition's constraints is syntactically
/// unsatisfiable: contradictory constant bounds on one subject, or
/// incompatible comparisons of one subject against one symbolic term.
/// Sound to prune only when definitely unsatisfiable.
pub fn transition_unsat(t: &Transition, machines: &[MachineInfo]) -> bool {
    let mut atoms: Vec<(Subject, Cmp6, PruneRhs)> = Vec::new();
    for a in &t.cc {
        let is_index = machines.iter().any(|m| m.ctr_lo == a.ctr);
        let subj = if is_index {
            Subject::Position
        } else {
            Subject::Counter(a.ctr)
        };
        let rhs = match &a.rhs {
            Rhs::Const(n) => PruneRhs::Const(*n),
            Rhs::Var(x) => PruneRhs::Var(x.clone()),
        };
        atoms.push((subj, a.cmp, rhs));
    }
    for a in &t.ic {
        let rhs = match &a.rhs {
            InputRhs::Const(n) => PruneRhs::Const(*n),
            InputRhs::Var(x) => PruneRhs::Var(x.clone()),
            InputRhs::Cell(c) => PruneRhs::Cell(*c),
        };
        atoms.push((Subject::Cell(a.tag), a.cmp, rhs));
    }
    atoms.sort();

    // Group by subject.
    let mut i = 0;
    while i < atoms.len() {
        let mut j = i;
        while j < atoms.len() && atoms[j].0 == atoms[i].0 {
            j += 1;
        }
        let group = &atoms[i..j];
        // Constant interval reasoning. The stream position is >= 0.
        let mut lo = if group[0].0 == Subject::Position {
            0i64
        } else {
            i64::MIN
        };
        let mut hi = i64::MAX;
        let mut nes: Vec<i64> = Vec::new();
        for (_, cmp, rhs) in group {
            if let PruneRhs::Const(c) = rhs {
                match cmp {
                    Cmp6::Lt => hi = hi.min(c - 1),
                    Cmp6::Le => hi = hi.min(*c),
                    Cmp6::Gt => lo = lo.max(c + 1),
                    Cmp6::Ge => lo = lo.max(*c),
                    Cmp6::Eq => {
                        lo = lo.max(*c);
                        hi = hi.min(*c);
                    }
                    Cmp6::Ne => nes.push(*c),
                }
            }
        }
        if lo > hi {
            return true;
        }
        if lo == hi && nes.contains(&lo) {
            return true;
        }
        // Pairwise symbolic reasoning: comparisons of the subject against
        // the same symbolic right-hand side must admit a common order.
        for x in 0..group.len() {
            if matches!(group[x].2, PruneRhs::Const(_)) {
                continue;
            }
            for y in x + 1..group.len() {
                if group[x].2 == group[y].2 {
                    let ax = group[x].1.allowed();
                    let ay = group[y].1.allowed();
                    if (0..3).all(|r| !(ax[r] && ay[r])) {
                        return true;
                    }
                }
            }
        }
        i = j;
    }
    false
}

// ---------------------------------------------------------------------------
// Product
// ---------------------------------------------------------------------------

/// Parallel composition: counters concatenate, states pair up, transitions
/// are pairwise conjunctions. Built lazily from the initial pair and
/// pruned with [`transition_unsat`], so unreachable and contradictory
/// combinations never materialize.
pub fn product(m1: &Scm, m2: &Scm) -> Result<Scm, ScmError> {
    let k = m1.k + m2.k;
    let mut machines = m1.machines.clone();
    for m in &m2.machines {
        machines.push(MachineInfo {
            ctr_lo: m.ctr_lo + m1.k,
            ..m.clone()
        });
    }
    let shift_cc = |a: &CounterAtom| CounterAtom {
        ctr: a.ctr + m1.k,
        ..a.clone()
    };

    let mut states: Vec<StateMeta> = Vec::new();
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut queue: Vec<(usize, usize)> = Vec::new();
    let mut transitions = Vec::new();

    let add_state = |pair: (usize, usize),
                     states: &mut Vec<StateMeta>,
                     index: &mut BTreeMap<(usize, usize), usize>,
                     queue: &mut Vec<(usize, usize)>|
     -> usize {
        if let Some(&i) = index.get(&pair) {
            return i;
        }
        let (a, b) = pair;
        let sa = &m1.states[a];
        let sb = &m2.states[b];
        let meta = StateMeta {
            name: format!("{}|{}", sa.name, sb.name),
            waiting: sa.waiting.iter().chain(sb.waiting.iter()).copied().collect(),
            done: sa.done.iter().chain(sb.done.iter()).copied().collect(),
        };
        let i = states.len();
        states.push(meta);
        index.insert(pair, i);
        queue.push(pair);
        i
    };

    let init = add_state(
        (m1.init_state, m2.init_state),
        &mut states,
        &mut index,
        &mut queue,
    );
    let mut qi = 0;
    while qi < queue.len() {
        let (a, b) = queue[qi];
        qi += 1;
        let from = index[&(a, b)];
        for t1 in m1.transitions.iter().filter(|t| t.from == a) {
            for t2 in m2.transitions.iter().filter(|t| t.from == b) {
                let mut cc = t1.cc.clone();
                cc.extend(t2.cc.iter().map(shift_cc));
                let mut ic = t1.ic.clone();
                ic.extend(t2.ic.iter().cloned());
                let mut inc = t1.inc.clone();
                inc.extend_from_slice(&t2.inc);
                let mut activates = t1.activates.clone();
                activates.extend(t2.activates.iter().map(|m| m + m1.machines.len()));
                let t = Transition {
                    from,
                    to: 0, // fixed below
                    cc,
                    ic,
                    inc,
                    activates,
                };
                if transition_unsat(&t, &machines) {
                    continue;
                }
                let to = add_state((t1.to, t2.to), &mut states, &mut index, &mut queue);
                if states.len() > PRODUCT_STATE_CAP {
                    return Err(ScmError::ProductTooLarge {
                        states: states.len(),
                    });
                }
                transitions.push(Transition { to, ..t });
            }
        }
    }

    Ok(Scm {
        k,
        n_tags: m1.n_tags.max(m2.n_tags),
        machines,
        states,
        transitions,
        init_state: init,
    })
}

// ---------------------------------------------------------------------------
// Reversal bound
// ---------------------------------------------------------------------------

/// Per-counter upper bound on increment sign alternations along any path:
/// dynamic programming over the condensation DAG of the state graph.
pub fn reversal_bound(scm: &Scm) -> Vec<usize> {
    use petgraph::graph::DiGraph;
    let mut g = DiGraph::<(), usize>::new();
    let nodes: Vec<_> = (0..scm.states.len()).map(|_| g.add_node(())).collect();
    for (ti, t) in scm.transitions.iter().enumerate() {
        g.add_edge(nodes[t.from], nodes[t.to], ti);
    }
    let sccs = petgraph::algo::tarjan_scc(&g);
    // Map state -> scc id (tarjan returns reverse topological order).
    let mut scc_of = vec![0usize; scm.states.len()];
    for (si, scc) in sccs.iter().enumerate() {
        for n in scc {
            scc_of[n.index()] = si;
        }
    }
    let n_scc = sccs.len();

    let mut bounds = vec![0usize; scm.k];
    for ctr in 0..scm.k {
        // Sign contributed by each SCC's internal edges (monotone per SCC),
        // and condensation edges with their own signs.
        let mut scc_sign = vec![0i64; n_scc];
        let mut dag_edges: Vec<(usize, usize, i64)> = Vec::new();
        for t in &scm.transitions {
            let (a, b) = (scc_of[t.from], scc_of[t.to]);
            let s = t.inc[ctr].signum();
            if a == b {
                if s != 0 {
                    scc_sign[a] = s; // uniform by SCC-monotonicity
                }
            } else {
                dag_edges.push((a, b, s));
            }
        }
        // f[scc][sign(0,1,2 for 0,+,-)] = max reversals on a path ending in
        // this scc with the given last nonzero sign. Process in topological
        // order: tarjan's order reversed.
        let order: Vec<usize> = (0..n_scc).rev().collect();
        let mut f = vec![[i64::MIN; 3]; n_scc];
        let enc = |s: i64| -> usize {
            match s {
                1 => 1,
                -1 => 2,
                _ => 0,
            }
        };
        let step = |state: [i64; 3], s: i64| -> [i64; 3] {
            if s == 0 {
                return state;
            }
            let idx = enc(s);
            let other = enc(-s);
            let mut out = [i64::MIN; 3];
            let mut best = state[0].max(state[idx]);
            if state[other] != i64::MIN {
                best = best.max(state[other] + 1);
            }
            out[idx] = best;
            out
        };
        // Entering an SCC also traverses its internal sign (possibly many
        // times, but alternation within an SCC is impossible).
        for &sc in &order {
            let mut state = f[sc];
            if scc_of[scm.init_state] == sc {
                state[0] = state[0].max(0);
            }
            if state.iter().all(|&v| v == i64::MIN) {
                continue;
            }
            let state = step(state, scc_sign[sc]);
            f[sc] = merge(f[sc], state);
            for &(a, b, s) in &dag_edges {
                if a == sc {
                    let nxt = step(f[sc], s);
                    f[b] = merge(f[b], nxt);
                }
            }
        }
        let best = f
            .iter()
            .flat_map(|s| s.iter())
            .copied()
            .filter(|&v| v != i64::MIN)
            .max()
            .unwrap_or(0);
        bounds[ctr] = best.max(0) as usize;
    }
    bounds
}

fn merge(a: [i64; 3], b: [i64; 3]) -> [i64; 3] {
    [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])]
}

// ---------------------------------------------------------------------------
// Simulation and replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("no enabled transition at position {pos} (state {state})")]
    Stuck { pos: usize, state: String },
    #[error("ambiguous enabled transitions at position {pos}")]
    Ambiguous { pos: usize },
    #[error("unbound symbol `{0}` during simulation")]
    Unbound(Name),
}

fn rhs_value(r: &Rhs, env: &BTreeMap<Name, i64>) -> Result<i64, SimError> {
    match r {
        Rhs::Const(n) => Ok(*n),
        Rhs::Var(x) => env.get(x).copied().ok_or_else(|| SimError::Unbound(x.clone())),
    }
}

fn input_rhs_value(
    r: &InputRhs,
    cells: &[i64],
    env: &BTreeMap<Name, i64>,
) -> Result<i64, SimError> {
    match r {
        InputRhs::Const(n) => Ok(*n),
        InputRhs::Var(x) => env.get(x).copied().ok_or_else(|| SimError::Unbound(x.clone())),
        InputRhs::Cell(t) => Ok(cells[*t]),
    }
}

fn transition_enabled(
    t: &Transition,
    counters: &[i64],
    cells: &[i64],
    env: &BTreeMap<Name, i64>,
) -> Result<bool, SimError> {
    for a in &t.cc {
        if !a.cmp.holds(counters[a.ctr], rhs_value(&a.rhs, env)?) {
            return Ok(false);
        }
    }
    for a in &t.ic {
        if !a.cmp.holds(cells[a.tag], input_rhs_value(&a.rhs, cells, env)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Deterministically runs an aligned machine (or product) over a cell
/// stream: `cells[p]` holds the values of all tags at position p. Machines
/// activate exactly when the position reaches their start index. Returns
/// the final counter vector.
pub fn simulate(
    scm: &Scm,
    cells: &[Vec<i64>],
    env: &BTreeMap<Name, i64>,
) -> Result<Vec<i64>, SimError> {
    let mut counters = vec![0i64; scm.k];
    for m in &scm.machines {
        for (j, init) in m.inits.iter().enumerate() {
            counters[m.ctr_lo + j] = rhs_value(init, env)?;
        }
    }
    let mut state = scm.init_state;
    for (pos, cell) in cells.iter().enumerate() {
        // Machines that must activate now.
        let mut required: Vec<usize> = Vec::new();
        for (mi, m) in scm.machines.iter().enumerate() {
            if scm.states[state].waiting[mi] && rhs_value(&m.start, env)? == pos as i64 {
                required.push(mi);
            }
        }
        let mut chosen: Option<(usize, Vec<i64>)> = None;
        let mut found = false;
        for t in scm.transitions.iter().filter(|t| t.from == state) {
            if t.activates != required {
                continue;
            }
            if !transition_enabled(t, &counters, cell, env)? {
                continue;
            }
            found = true;
            match &chosen {
                None => chosen = Some((t.to, t.inc.clone())),
                Some((to, inc)) => {
                    if *to != t.to || *inc != t.inc {
                        return Err(SimError::Ambiguous { pos });
                    }
                }
            }
        }
        if !found {
            return Err(SimError::Stuck {
                pos,
                state: scm.states[state].name.clone(),
            });
        }
        let (to, inc) = chosen.unwrap();
        for (c, d) in counters.iter_mut().zip(&inc) {
            *c += d;
        }
        state = to;
    }
    Ok(counters)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("replay failed at step {step}: {reason}")]
pub struct ReplayError {
    pub step: usize,
    pub reason: String,
}

/// Replays an explicit transition sequence, checking every counter and
/// input constraint under `env`, and returns the final counters.
pub fn replay(
    scm: &Scm,
    run: &[usize],
    cell_values: &[Vec<i64>],
    env: &BTreeMap<Name, i64>,
) -> Result<Vec<i64>, ReplayError> {
    assert_eq!(run.len(), cell_values.len());
    let mut counters = vec![0i64; scm.k];
    for m in &scm.machines {
        for (j, init) in m.inits.iter().enumerate() {
            counters[m.ctr_lo + j] = rhs_value(init, env).map_err(|e| ReplayError {
                step: 0,
                reason: e.to_string(),
            })?;
        }
    }
    let mut state = scm.init_state;
    for (step, (&ti, cell)) in run.iter().zip(cell_values).enumerate() {
        let t = &scm.transitions[ti];
        if t.from != state {
            return Err(ReplayError {
                step,
                reason: format!("transition {ti} does not start in the current state"),
            });
        }
        match transition_enabled(t, &counters, cell, env) {
            Ok(true) => {}
            Ok(false) => {
                return Err(ReplayError {
                    step,
                    reason: format!("constraint violated on transition {ti}"),
                })
            }
            Err(e) => {
                return Err(ReplayError {
                    step,
                    reason: e.to_string(),
                })
            }
        }
        for (c, d) in counters.iter_mut().zip(&t.inc) {
            *c += d;
        }
        state = t.to;
    }
    Ok(counters)
}

// ---------------------------------------------------------------------------
// Debug dump
// ---------------------------------------------------------------------------

impl fmt::Display for Scm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scm: {} counters, {} states, {} transitions",
            self.k,
            self.states.len(),
            self.transitions.len()
        )?;
        for (mi, m) in self.machines.iter().enumerate() {
            writeln!(
                f,
                "  machine {mi}: fold {} counters [{}..{}) start {} tag {}",
                m.fold_id,
                m.ctr_lo,
                m.ctr_lo + m.k,
                m.start,
                m.tag
            )?;
        }
        for (si, s) in self.states.iter().enumerate() {
            let mark = if si == self.init_state { "*" } else { " " };
            writeln!(f, " {mark}state {si}: {}", s.name)?;
        }
        for (ti, t) in self.transitions.iter().enumerate() {
            let cc: Vec<String> = t
                .cc
                .iter()
                .map(|a| format!("c{}{}{}", a.ctr, a.cmp, a.rhs))
                .collect();
            let ic: Vec<String> = t
                .ic
                .iter()
                .map(|a|

                    format!(
                        "e{}{}{}",
                        a.tag,
                        a.cmp,
                        match &a.rhs {
                            InputRhs::Const(n) => n.to_string(),
                            InputRhs::Var(x) => x.clone(),
                            InputRhs::Cell(c) => format!("e{c}"),
                        }
                    ))
                .collect();
            writeln!(
                f,
                "  t{ti}: {} -> {} [{}] [{}] inc {:?}{}",
                t.from,
                t.to,
                cc.join(","),
                ic.join(","),
                t.inc,
                if t.activates.is_empty() {
                    String::new()
                } else {
                    format!(" activates {:?}", t.activates)
                }
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{Branch, Cmp as AstCmp, FoldFunction, GuardAtom, GuardLhs, IntTerm};
    use crate::eval::{eval_fold, Interpretation};

    fn no_hoist() -> impl FnMut(&IntTerm) -> Rhs {
        let mut n = 0usize;
        let mut seen: BTreeMap<IntTerm, Name> = BTreeMap::new();
        move |t: &IntTerm| {
            if let IntTerm::Var(x) = t {
                return Rhs::Var(x.clone());
            }
            let name = seen.entry(t.clone()).or_insert_with(|| {
                n += 1;
                format!("_t{n}")
            });
            Rhs::Var(name.clone())
        }
    }

    fn atom(lhs: GuardLhs, cmp: AstCmp, rhs: IntTerm) -> GuardAtom {
        GuardAtom { lhs, cmp, rhs }
    }

    fn periodicity_fn() -> FoldFunction {
        FoldFunction {
            arity: 1,
            branches: vec![
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, AstCmp::Eq, IntTerm::Const(0)),
                        atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(0)),
                    ],
                    updates: vec![UpdateAtom::SetState(1)],
                },
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, AstCmp::Eq, IntTerm::Const(1)),
                        atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(1)),
                    ],
                    updates: vec![UpdateAtom::SetState(0)],
                },
            ],
        }
    }

    fn translate(func: &FoldFunction, start: Rhs) -> Scm {
        let mut inits = vec![start.clone()];
        for j in 1..func.arity {
            inits.push(Rhs::Const(j as i64 * 0));
        }
        translate_fold(func, 0, 0, start, inits, &mut no_hoist()).unwrap()
    }

    #[test]
    fn periodicity_machine_shape() {
        let m = translate(&periodicity_fn(), Rhs::Const(0));
        assert_eq!(m.k, 1);
        assert_eq!(m.states.len(), 3); // states 0, 1, done
        let active: Vec<_> = m
            .transitions
            .iter()
            .filter(|t| !m.states[t.to].done[0])
            .collect();
        assert_eq!(active.len(), 2);
        // One catch-all per state (single enabled branch each).
        let catch: Vec<_> = m
            .transitions
            .iter()
            .filter(|t| m.states[t.to].done[0])
            .collect();
        assert_eq!(catch.len(), 2);
    }

    #[test]
    fn fig1c_first_fold_machine() {
        // e = min => c1++ ; e > min => skip
        let func = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::var("min"))],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Gt, IntTerm::var("min"))],
                    updates: vec![UpdateAtom::Skip],
                },
            ],
        };
        let m = translate(&func, Rhs::Const(0));
        assert_eq!(m.k, 2);
        let incs: Vec<&Vec<i64>> = m
            .transitions
            .iter()
            .filter(|t| !m.states[t.to].done[0])
            .map(|t| &t.inc)
            .collect();
        assert!(incs.contains(&&vec![1, 1]));
        assert!(incs.contains(&&vec![1, 0]));
        // Catch-all combines the two negations e != min and e <= min.
        let catch: Vec<_> = m
            .transitions
            .iter()
            .filter(|t| m.states[t.to].done[0])
            .collect();
        assert_eq!(catch.len(), 1);
        assert_eq!(catch[0].ic.len(), 2);
    }

    #[test]
    fn break_only_machine() {
        let func = FoldFunction {
            arity: 1,
            branches: vec![Branch {
                guard: vec![],
                updates: vec![UpdateAtom::Break],
            }],
        };
        let m = translate(&func, Rhs::Const(0));
        assert_eq!(m.transitions.len(), 1);
        assert!(m.states[m.transitions[0].to].done[0]);
        assert_eq!(m.transitions[0].inc, vec![0]);
    }

    #[test]
    fn product_with_skip_identity() {
        let skip = FoldFunction {
            arity: 1,
            branches: vec![Branch {
                guard: vec![],
                updates: vec![UpdateAtom::Skip],
            }],
        };
        let a = align(&translate(&periodicity_fn(), Rhs::Const(0)));
        let b = align(&translate(&skip, Rhs::Const(0)));
        let p = product(&a, &b).unwrap();
        assert_eq!(p.k, 2);
        // The skip machine never leaves its single live state, so reachable
        // product states mirror the periodicity machine's reachable states.
        let reach_a: usize = a.states.len();
        assert_eq!(p.states.len(), reach_a);
    }

    #[test]
    fn reversal_bounds() {
        let m = align(&translate(&periodicity_fn(), Rhs::Const(0)));
        assert_eq!(reversal_bound(&m), vec![0]);

        // Machine with +1 in one SCC then -1 in a successor SCC.
        let func = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, AstCmp::Eq, IntTerm::Const(0)),
                        atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(0)),
                    ],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, AstCmp::Eq, IntTerm::Const(0)),
                        atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(1)),
                    ],
                    updates: vec![UpdateAtom::SetState(1)],
                },
                Branch {
                    guard: vec![
                        atom(GuardLhs::State, AstCmp::Eq, IntTerm::Const(1)),
                        atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(1)),
                    ],
                    updates: vec![UpdateAtom::CtrAdd(1, -1)],
                },
            ],
        };
        let m = align(&translate(&func, Rhs::Const(0)));
        let b = reversal_bound(&m);
        assert_eq!(b[0], 0); // index
        assert_eq!(b[1], 1); // one reversal
    }

    #[test]
    fn product_counters_concatenate() {
        let a = align(&translate(&periodicity_fn(), Rhs::Const(0)));
        let p = product(&a, &a).unwrap();
        assert_eq!(p.k, 2);
        assert_eq!(p.machines.len(), 2);
        assert_eq!(p.machines[1].ctr_lo, 1);
    }

    fn sim_one(func: &FoldFunction, a: &[i64], init: &[i64], env: &BTreeMap<Name, i64>) -> Vec<i64> {
        let start = Rhs::Const(init[0]);
        let inits: Vec<Rhs> = init.iter().map(|&v| Rhs::Const(v)).collect();
        let core = translate_fold(func, 0, 0, start, inits, &mut |t: &IntTerm| match t {
            IntTerm::Var(x) => Rhs::Var(x.clone()),
            _ => panic!("test guards use only vars and consts"),
        })
        .unwrap();
        let m = align(&core);
        let cells: Vec<Vec<i64>> = a.iter().map(|&v| vec![v]).collect();
        simulate(&m, &cells, env).unwrap()
    }

    #[test]
    fn simulate_matches_eval_fold_basic() {
        let func = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::var("min"))],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Gt, IntTerm::var("min"))],
                    updates: vec![UpdateAtom::Skip],
                },
            ],
        };
        let mut env = BTreeMap::new();
        env.insert("min".to_string(), 1);
        let mut sigma = Interpretation::default();
        sigma.ints.insert("min".to_string(), 1);
        for a in [
            &[1i64, 2, 7, 4, 1, 3, 7, 5][..],
            &[0, 1, 1],
            &[],
            &[2, 2, 2],
        ] {
            for start in [-1i64, 0, 1, 5] {
                let want = eval_fold(a, &[start, 0], &func, &sigma).unwrap();
                let got = sim_one(&func, a, &[start, 0], &env);
                assert_eq!(got, want, "array {a:?} start {start}");
            }
        }
    }

    #[test]
    fn simulate_product_equals_paired_simulation() {
        let f1 = periodicity_fn();
        let f2 = FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Eq, IntTerm::Const(0))],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![atom(GuardLhs::Elem, AstCmp::Ne, IntTerm::Const(0))],
                    updates: vec![UpdateAtom::Skip],
                },
            ],
        };
        let m1 = align(&translate(&f1, Rhs::Const(0)));
        let m2 = align(&translate(&f2, Rhs::Const(0)));
        let p = product(&m1, &m2).unwrap();
        let env = BTreeMap::new();
        for a in [&[0i64, 1, 0, 1][..], &[0, 0], &[1, 0, 1], &[]] {
            let cells: Vec<Vec<i64>> = a.iter().map(|&v| vec![v]).collect();
            let r1 = simulate(&m1, &cells, &env).unwrap();
            let r2 = simulate(&m2, &cells, &env).unwrap();
            let rp = simulate(&p, &cells, &env).unwrap();
            let mut paired = r1.clone();
            paired.extend(r2);
            assert_eq!(rp, paired, "array {a:?}");
        }
    }

    #[test]
    fn replay_checks_constraints() {
        let m = align(&translate(&periodicity_fn(), Rhs::Const(0)));
        let env = BTreeMap::new();
        // Find the active transition from state 0 (guard e = 0).
        let t0 = m
            .transitions
            .iter()
            .position(|t| t.from == m.init_state && !m.states[t.to].done[0])
            .unwrap();
        // Replaying it with a violating cell fails at step 0.
        let err = replay(&m, &[t0], &[vec![1]], &env).unwrap_err();
        assert_eq!(err.step, 0);
        // With the right cell it succeeds.
        let out = replay(&m, &[t0], &[vec![0]], &env).unwrap();
        assert_eq!(out, vec![1]);
        // Empty run returns the initial counters.
        assert_eq!(replay(&m, &[], &[], &env).unwrap(), vec![0]);
    }

    #[test]
    fn prune_detects_constant_contradiction() {
        let machines = vec![MachineInfo {
            fold_id: 0,
            ctr_lo: 0,
            k: 1,
            start: Rhs::Const(0),
            inits: vec![Rhs::Const(0)],
            tag: 0,
        }];
        let t = Transition {
            from: 0,
            to: 0,
            cc: vec![],
            ic: vec![
                InputAtom {
                    tag: 0,
                    cmp: Cmp6::Eq,
                    rhs: InputRhs::Const(3),
                },
                InputAtom {
                    tag: 0,
                    cmp: Cmp6::Eq,
                    rhs: InputRhs::Const(5),
                },
            ],
            inc: vec![0],
            activates: vec![],
        };
        assert!(transition_unsat(&t, &machines));
        let t2 = Transition {
            ic: vec![
                InputAtom {
                    tag: 0,
                    cmp: Cmp6::Lt,
                    rhs: InputRhs::Var("x".into()),
                },
                InputAtom {
                    tag: 0,
                    cmp: Cmp6::Ge,
                    rhs: InputRhs::Var("x".into()),
                },
            ],
            ..t.clone()
        };
        assert!(transition_unsat(&t2, &machines));
        let t3 = Transition {
            ic: vec![InputAtom {
                tag: 0,
                cmp: Cmp6::Lt,
                rhs: InputRhs::Var("x".into()),
            }],
            ..t
        };
        assert!(!transition_unsat(&t3, &machines));
    }
}
