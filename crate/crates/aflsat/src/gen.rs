//! Seeded random generators for differential testing: fold functions with
//! exclusive-by-construction guards, small AFL formulas in the supported
//! fragment, and small NFAs for the Parikh encoding oracle.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;

use crate::ast::{
    Branch, Cmp, Formula, FoldFunction, GuardAtom, GuardLhs, IntTerm, Sort, UpdateAtom, VectorTerm,
};
use crate::ast::BoolTerm;
use crate::lia::{eval_lia, LiaModel};

/// Random fold function: guards partition the element range at random cut
/// points (hence semantically exclusive), counter increments have a fixed
/// per-counter sign (hence SCC-monotone), constants stay in [-2,2].
pub fn random_fold_function(rng: &mut impl Rng, int_vars: &[&str]) -> FoldFunction {
    let n_counters = rng.gen_range(0..=2);
    let arity = 1 + n_counters;
    let n_branches = rng.gen_range(1..=3);
    // Disjoint element intervals: cuts c1 <= c2 split ℤ into up to three
    // pieces (-inf,c1), [c1,c2), [c2,inf); each branch claims one piece.
    let mut c1 = rng.gen_range(-2..=2);
    let mut c2 = rng.gen_range(-2..=2);
    if c1 > c2 {
        std::mem::swap(&mut c1, &mut c2);
    }
    let pieces: Vec<Vec<GuardAtom>> = vec![
        vec![atom(GuardLhs::Elem, Cmp::Lt, IntTerm::Const(c1))],
        vec![
            atom(GuardLhs::Elem, Cmp::Gt, IntTerm::Const(c1 - 1)),
            atom(GuardLhs::Elem, Cmp::Lt, IntTerm::Const(c2)),
        ],
        vec![atom(GuardLhs::Elem, Cmp::Gt, IntTerm::Const(c2 - 1))],
    ];
    let mut piece_ids: Vec<usize> = (0..3).collect();
    for i in (1..piece_ids.len()).rev() {
        piece_ids.swap(i, rng.gen_range(0..=i));
    }
    // Fixed movement sign per counter keeps every cycle monotone.
    let signs: Vec<i64> = (0..n_counters)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    let mut branches = Vec::new();
    for b in 0..n_branches {
        let mut guard = pieces[piece_ids[b]].clone();
        // Occasional extra atom narrows the guard but cannot break
        // exclusivity.
        if rng.gen_bool(0.3) {
            let lhs = if n_counters > 0 && rng.gen_bool(0.5) {
                GuardLhs::Counter(rng.gen_range(1..=n_counters))
            } else {
                GuardLhs::Index
            };
            let cmp = [Cmp::Lt, Cmp::Gt, Cmp::Eq, Cmp::Ne][rng.gen_range(0..4)];
            let rhs = if !int_vars.is_empty() && rng.gen_bool(0.3) {
                IntTerm::var(int_vars[rng.gen_range(0..int_vars.len())])
            } else {
                IntTerm::Const(rng.gen_range(-2..=2))
            };
            guard.push(GuardAtom { lhs, cmp, rhs });
        }
        let mut updates = Vec::new();
        if rng.gen_bool(0.1) {
            updates.push(UpdateAtom::Break);
        } else {
            for (k, &s) in signs.iter().enumerate() {
                let step = rng.gen_range(0..=2);
                if step != 0 {
                    updates.push(UpdateAtom::CtrAdd(k + 1, s * step));
                }
            }
            if updates.is_empty() {
                updates.push(UpdateAtom::Skip);
            }
        }
        branches.push(Branch { guard, updates });
    }
    FoldFunction { arity, branches }
}

/// Random formula in the supported fragment: up to two arrays with up to
/// two folds each, plus occasional length/integer side constraints.
pub fn random_formula(rng: &mut impl Rng) -> Formula {
    let mut f = Formula::default();
    let n_arrays = rng.gen_range(1..=2);
    let arrays = &["a", "b"][..n_arrays];
    for a in arrays {
        f.decls.insert(a.to_string(), Sort::Array);
    }
    f.decls.insert("n".to_string(), Sort::Int);
    let int_vars = ["n"];
    for a in arrays {
        let n_folds = rng.gen_range(1..=2);
        for _ in 0..n_folds {
            let func = random_fold_function(rng, &int_vars);
            let init: Vec<IntTerm> = (0..func.arity)
                .map(|j| {
                    if j == 0 {
                        // Start index: usually 0, sometimes off the ends.
                        IntTerm::Const(*[0, 0, 0, 1, -1].get(rng.gen_range(0..5)).unwrap())
                    } else {
                        IntTerm::Const(rng.gen_range(-2..=2))
                    }
                })
                .collect();
            let out: Vec<IntTerm> = (0..func.arity)
                .map(|_| match rng.gen_range(0..6) {
                    0 | 1 => IntTerm::var("n"),
                    2 => IntTerm::Len(a.to_string()),
                    _ => IntTerm::Const(rng.gen_range(-2..=2)),
                })
                .collect();
            f.assertions.push(BoolTerm::VecEq(
                VectorTerm::Fold {
                    array: a.to_string(),
                    init: Box::new(VectorTerm::Tuple(init)),
                    func,
                },
                VectorTerm::Tuple(out),
            ));
        }
    }
    if rng.gen_bool(0.5) {
        let l = IntTerm::Len(arrays[rng.gen_range(0..arrays.len())].to_string());
        let r = match rng.gen_range(0..2) {
            0 => IntTerm::Const(rng.gen_range(0..=3)),
            _ => IntTerm::var("n"),
        };
        let c = if rng.gen_bool(0.5) {
            BoolTerm::IntEq(l, r)
        } else {
            BoolTerm::IntLt(l, r)
        };
        f.assertions.push(c);
    }
    f
}

/// Random array contents for trace-equivalence tests.
pub fn random_array(rng: &mut impl Rng, max_len: usize, range: (i64, i64)) -> Vec<i64> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| rng.gen_range(range.0..=range.1)).collect()
}

/// Random environment for the integer variables a fold function mentions.
pub fn random_env(rng: &mut impl Rng, vars: &[&str], range: (i64, i64)) -> BTreeMap<String, i64> {
    vars.iter()
        .map(|v| (v.to_string(), rng.gen_range(range.0..=range.1)))
        .collect()
}

fn atom(lhs: GuardLhs, cmp: Cmp, rhs: IntTerm) -> GuardAtom {
    GuardAtom { lhs, cmp, rhs }
}

// ---------------------------------------------------------------------------
// NFAs for the Parikh-encoding oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nfa {
    pub n_states: usize,
    pub init: usize,
    pub accepting: Vec<bool>,
    /// Distinct (from, to, label) edges; the label only induces parallel
    /// transitions, Parikh images are over transition counts.
    pub edges: Vec<(usize, usize)>,
}

/// Random NFA with up to `max_states` states and parallel edges from up to
/// `max_labels` labels. At least one state accepts.
pub fn random_nfa(rng: &mut impl Rng, max_states: usize, max_labels: usize) -> Nfa {
    let n_states = rng.gen_range(1..=max_states);
    let n_labels = rng.gen_range(1..=max_labels);
    let mut edges = Vec::new();
    for from in 0..n_states {
        for to in 0..n_states {
            for _ in 0..n_labels {
                if rng.gen_bool(0.15) {
                    edges.push((from, to));
                }
            }
        }
    }
    let mut accepting: Vec<bool> = (0..n_states).map(|_| rng.gen_bool(0.4)).collect();
    if !accepting.iter().any(|&a| a) {
        accepting[rng.gen_range(0..n_states)] = true;
    }
    Nfa {
        n_states,
        init: rng.gen_range(0..n_states),
        accepting,
        edges,
    }
}

/// Parikh images of the NFA's accepting paths of length <= `max_len`, by
/// direct path enumeration.
pub fn brute_parikh_images(nfa: &Nfa, max_len: usize) -> BTreeSet<Vec<i64>> {
    let nt = nfa.edges.len();
    let mut out = BTreeSet::new();
    let mut stack = vec![(nfa.init, vec![0i64; nt], 0usize)];
    while let Some((q, counts, len)) = stack.pop() {
        if nfa.accepting[q] {
            out.insert(counts.clone());
        }
        if len == max_len {
            continue;
        }
        for (t, &(a, b)) in nfa.edges.iter().enumerate() {
            if a == q {
                let mut c2 = counts.clone();
                c2[t] += 1;
                stack.push((b, c2, len + 1));
            }
        }
    }
    out
}

/// Solutions of [`crate::encoder::encode_parikh`] with total count <=
/// `max_total`: every candidate count vector is checked against the
/// encoding by supplying each accepting sink and BFS depths over its
/// positive-count edges.
pub fn parikh_encoding_solutions(nfa: &Nfa, max_total: usize) -> BTreeSet<Vec<i64>> {
    let (psi, count_vars, _) = crate::encoder::encode_parikh(
        nfa.n_states,
        &nfa.edges,
        nfa.init,
        &nfa.accepting,
        "_p",
    );
    let nt = nfa.edges.len();
    let mut out = BTreeSet::new();
    let mut counts = vec![0i64; nt];
    // Enumerate count vectors by remaining budget.
    fn enumerate(
        i: usize,
        budget: i64,
        counts: &mut Vec<i64>,
        check: &mut dyn FnMut(&[i64]) -> bool,
        out: &mut BTreeSet<Vec<i64>>,
    ) {
        if i == counts.len() {
            if check(counts) {
                out.insert(counts.clone());
            }
            return;
        }
        for v in 0..=budget {
            counts[i] = v;
            enumerate(i + 1, budget - v, counts, check, out);
        }
        counts[i] = 0;
    }
    let mut check = |counts: &[i64]| -> bool {
        let mut m = LiaModel::new();
        for (t, v) in count_vars.iter().enumerate() {
            m.insert(v.clone(), counts[t]);
        }
        for q in 0..nfa.n_states {
            if !nfa.accepting[q] {
                continue;
            }
            for s in 0..nfa.n_states {
                m.insert(format!("_ps{s}"), (s == q) as i64);
            }
            let mut depth = vec![0i64; nfa.n_states];
            depth[nfa.init] = 1;
            let mut frontier = vec![nfa.init];
            while let Some(p) = frontier.pop() {
                for (t, &(a, b)) in nfa.edges.iter().enumerate() {
                    if a == p && counts[t] > 0 && depth[b] == 0 && b != nfa.init {
                        depth[b] = depth[p] + 1;
                        frontier.push(b);
                    }
                }
            }
            for s in 0..nfa.n_states {
                m.insert(format!("_pd{s}"), depth[s]);
            }
            if eval_lia(&psi, &m).unwrap() {
                return true;
            }
        }
        false
    };
    enumerate(0, max_total as i64, &mut counts, &mut check, &mut out);
    out
}
