//! Reference evaluator for array-fold formulas: exact semantics of folds,
//! ground-truth model checking, and a bounded brute-force satisfiability
//! oracle for tiny domains.

use std::collections::BTreeMap;

use crate::ast::*;

/// An assignment of integers to integer variables and finite integer
/// sequences to array variables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Interpretation {
    pub ints: BTreeMap<Name, i64>,
    pub arrays: BTreeMap<Name, Vec<i64>>,
}

impl Interpretation {
    pub fn int(&self, n: &str) -> Option<i64> {
        self.ints.get(n).copied()
    }
    pub fn array(&self, n: &str) -> Option<&Vec<i64>> {
        self.arrays.get(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("read of {array}[{index}] is out of bounds (length {len})")]
    OutOfBoundsRead {
        array: Name,
        index: i64,
        len: usize,
    },
    #[error("write index {index} out of bounds for `{array}` (length {len})")]
    OutOfBoundsWrite {
        array: Name,
        index: i64,
        len: usize,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(Name),
    #[error("two branch guards hold simultaneously at step {step} (branches {first} and {second})")]
    GuardOverlap {
        step: usize,
        first: usize,
        second: usize,
    },
    #[error("integer overflow during evaluation")]
    Overflow,
}

fn checked_add(a: i64, b: i64) -> Result<i64, EvalError> {
    a.checked_add(b).ok_or(EvalError::Overflow)
}

fn checked_mul(a: i64, b: i64) -> Result<i64, EvalError> {
    a.checked_mul(b).ok_or(EvalError::Overflow)
}

pub fn eval_int(t: &IntTerm, sigma: &Interpretation) -> Result<i64, EvalError> {
    match t {
        IntTerm::Const(n) => Ok(*n),
        IntTerm::Var(x) => sigma
            .int(x)
            .ok_or_else(|| EvalError::UnboundVariable(x.clone())),
        IntTerm::Add(l, r) => checked_add(eval_int(l, sigma)?, eval_int(r, sigma)?),
        IntTerm::Mul(n, x) => checked_mul(*n, eval_int(x, sigma)?),
        IntTerm::Read(a, idx) => {
            let arr = sigma
                .array(a)
                .ok_or_else(|| EvalError::UnboundVariable(a.clone()))?;
            let i = eval_int(idx, sigma)?;
            if i < 0 || i as usize >= arr.len() {
                return Err(EvalError::OutOfBoundsRead {
                    array: a.clone(),
                    index: i,
                    len: arr.len(),
                });
            }
            Ok(arr[i as usize])
        }
        IntTerm::Len(a) => {
            let arr = sigma
                .array(a)
                .ok_or_else(|| EvalError::UnboundVariable(a.clone()))?;
            Ok(arr.len() as i64)
        }
    }
}

fn eval_array_term(a: &ArrayTerm, sigma: &Interpretation) -> Result<Vec<i64>, EvalError> {
    match a {
        ArrayTerm::Var(n) => sigma
            .array(n)
            .cloned()
            .ok_or_else(|| EvalError::UnboundVariable(n.clone())),
        ArrayTerm::Write { base, index, value } => {
            let mut arr = sigma
                .array(base)
                .cloned()
                .ok_or_else(|| EvalError::UnboundVariable(base.clone()))?;
            let i = eval_int(index, sigma)?;
            let v = eval_int(value, sigma)?;
            if i < 0 || i as usize >= arr.len() {
                return Err(EvalError::OutOfBoundsWrite {
                    array: base.clone(),
                    index: i,
                    len: arr.len(),
                });
            }
            arr[i as usize] = v;
            Ok(arr)
        }
    }
}

fn guard_holds(
    guard: &[GuardAtom],
    elem: i64,
    index: i64,
    counters: &[i64],
    state: i64,
    sigma: &Interpretation,
) -> Result<bool, EvalError> {
    for g in guard {
        let lhs = match g.lhs {
            GuardLhs::Elem => elem,
            GuardLhs::Index => index,
            GuardLhs::Counter(k) => counters[k - 1],
            GuardLhs::State => state,
        };
        let rhs = eval_int(&g.rhs, sigma)?;
        if !g.cmp.holds(lhs, rhs) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Folds `func` over `a` starting from `init` (index followed by the
/// counters), with state 0. Returns the final vector: the fold stops and
/// returns the current vector when the index leaves `[0, |a|)`, when no
/// guard holds, or when the enabled branch executes `break` (in which case
/// the branch's other updates are discarded).
pub fn eval_fold(
    a: &[i64],
    init: &[i64],
    func: &FoldFunction,
    sigma: &Interpretation,
) -> Result<Vec<i64>, EvalError> {
    assert_eq!(init.len(), func.arity, "init arity must match the function");
    let mut index = init[0];
    let mut counters: Vec<i64> = init[1..].to_vec();
    let mut state: i64 = 0;
    let mut step = 0usize;
    loop {
        if index < 0 || index as usize >= a.len() {
            break;
        }
        let elem = a[index as usize];
        let mut enabled: Option<usize> = None;
        for (bi, br) in func.branches.iter().enumerate() {
            if guard_holds(&br.guard, elem, index, &counters, state, sigma)? {
                if let Some(first) = enabled {
                    return Err(EvalError::GuardOverlap {
                        step,
                        first,
                        second: bi,
                    });
                }
                enabled = Some(bi);
            }
        }
        let Some(bi) = enabled else {
            break; // implicit catch-all break
        };
        let br = &func.branches[bi];
        if br.updates.contains(&UpdateAtom::Break) {
            break; // break discards the branch's sibling updates
        }
        for u in &br.updates {
            match u {
                UpdateAtom::CtrAdd(k, n) => {
                    counters[k - 1] = checked_add(counters[k - 1], *n)?;
                }
                UpdateAtom::SetState(n) => state = *n,
                UpdateAtom::Skip | UpdateAtom::Break => {}
            }
        }
        index = checked_add(index, 1)?;
        step += 1;
    }
    let mut out = Vec::with_capacity(func.arity);
    out.push(index);
    out.extend_from_slice(&counters);
    Ok(out)
}

fn eval_vector(v: &VectorTerm, sigma: &Interpretation) -> Result<Vec<i64>, EvalError> {
    match v {
        VectorTerm::Tuple(ts) => ts.iter().map(|t| eval_int(t, sigma)).collect(),
        VectorTerm::Fold { array, init, func } => {
            let a = sigma
                .array(array)
                .ok_or_else(|| EvalError::UnboundVariable(array.clone()))?
                .clone();
            let init = eval_vector(init, sigma)?;
            eval_fold(&a, &init, func, sigma)
        }
    }
}

pub fn eval_bool(b: &BoolTerm, sigma: &Interpretation) -> Result<bool, EvalError> {
    match b {
        BoolTerm::ArrayEq(l, r) => Ok(eval_array_term(l, sigma)? == eval_array_term(r, sigma)?),
        BoolTerm::IntEq(l, r) => Ok(eval_int(l, sigma)? == eval_int(r, sigma)?),
        BoolTerm::IntLt(l, r) => Ok(eval_int(l, sigma)? < eval_int(r, sigma)?),
        BoolTerm::Not(x) => Ok(!eval_bool(x, sigma)?),
        BoolTerm::And(l, r) => Ok(eval_bool(l, sigma)? && eval_bool(r, sigma)?),
        BoolTerm::VecEq(l, r) => Ok(eval_vector(l, sigma)? == eval_vector(r, sigma)?),
    }
}

/// True iff `sigma` satisfies every assertion of `f`.
pub fn eval_formula(f: &Formula, sigma: &Interpretation) -> Result<bool, EvalError> {
    for b in &f.assertions {
        if !eval_bool(b, sigma)? {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Brute-force satisfiability on tiny domains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BruteBounds {
    pub max_len: usize,
    /// Inclusive range for array cell values.
    pub value_range: (i64, i64),
    /// Inclusive range for integer variables.
    pub int_range: (i64, i64),
    /// Maximum number of interpretations to try.
    pub budget: u64,
}

impl Default for BruteBounds {
    fn default() -> Self {
        BruteBounds {
            max_len: 4,
            value_range: (-2, 2),
            int_range: (-2, 2),
            budget: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BruteResult {
    Sat(Interpretation),
    /// No model exists within the given bounds. Not a proof of
    /// unsatisfiability.
    UnsatWithinBounds,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("brute-force enumeration exceeded its budget of {0} interpretations")]
pub struct BudgetExceeded(pub u64);

/// Enumerates all interpretations within `bounds` in lexicographic order
/// (integer variables cycle fastest; array contents before lengths) and
/// returns the first satisfying one. Interpretations on which evaluation
/// errors (out-of-bounds reads or writes, overlapping guards) are skipped:
/// they are not models.
pub fn brute_force_sat(
    f: &Formula,
    bounds: &BruteBounds,
) -> Result<BruteResult, BudgetExceeded> {
    let arrays: Vec<&Name> = f
        .decls
        .iter()
        .filter(|(_, s)| **s == Sort::Array)
        .map(|(n, _)| n)
        .collect();
    let ints: Vec<&Name> = f
        .decls
        .iter()
        .filter(|(_, s)| **s == Sort::Int)
        .map(|(n, _)| n)
        .collect();

    let mut sigma = Interpretation::default();
    for a in &arrays {
        sigma.arrays.insert((*a).clone(), Vec::new());
    }
    for x in &ints {
        sigma.ints.insert((*x).clone(), bounds.int_range.0);
    }
    let mut tried: u64 = 0;
    let found = enumerate_arrays(f, bounds, &arrays, 0, &ints, &mut sigma, &mut tried)?;
    if found {
        Ok(BruteResult::Sat(sigma))
    } else {
        Ok(BruteResult::UnsatWithinBounds)
    }
}

fn enumerate_arrays(
    f: &Formula,
    bounds: &BruteBounds,
    arrays: &[&Name],
    ai: usize,
    ints: &[&Name],
    sigma: &mut Interpretation,
    tried: &mut u64,
) -> Result<bool, BudgetExceeded> {
    if ai == arrays.len() {
        return enumerate_ints(f, bounds, ints, 0, sigma, tried);
    }
    for len in 0..=bounds.max_len {
        let mut cells = vec![bounds.value_range.0; len];
        'combos: loop {
            sigma.arrays.insert(arrays[ai].clone(), cells.clone());
            if enumerate_arrays(f, bounds, arrays, ai + 1, ints, sigma, tried)? {
                return Ok(true);
            }
            // Odometer step over the cells; stop after a full wrap-around.
            let mut pos = len;
            while pos > 0 {
                pos -= 1;
                if cells[pos] < bounds.value_range.1 {
                    cells[pos] += 1;
                    for c in cells.iter_mut().skip(pos + 1) {
                        *c = bounds.value_range.0;
                    }
                    continue 'combos;
                }
                cells[pos] = bounds.value_range.0;
            }
            break;
        }
    }
    Ok(false)
}

fn enumerate_ints(
    f: &Formula,
    bounds: &BruteBounds,
    ints: &[&Name],
    xi: usize,
    sigma: &mut Interpretation,
    tried: &mut u64,
) -> Result<bool, BudgetExceeded> {
    if xi == ints.len() {
        *tried += 1;
        if *tried > bounds.budget {
            return Err(BudgetExceeded(bounds.budget));
        }
        return Ok(matches!(eval_formula(f, sigma), Ok(true)));
    }
    for v in bounds.int_range.0..=bounds.int_range.1 {
        sigma.ints.insert(ints[xi].clone(), v);
        if enumerate_ints(f, bounds, ints, xi + 1, sigma, tried)? {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn sigma(ints: &[(&str, i64)], arrays: &[(&str, &[i64])]) -> Interpretation {
        Interpretation {
            ints: ints.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            arrays: arrays
                .iter()
                .map(|(n, v)| (n.to_string(), v.to_vec()))
                .collect(),
        }
    }

    #[test]
    fn eval_int_read() {
        let s = sigma(&[], &[("a", &[1, 2, 7, 4, 1, 3, 7, 5])]);
        let t = IntTerm::Read("a".to_string(), Box::new(IntTerm::Const(0)));
        assert_eq!(eval_int(&t, &s), Ok(1));
    }

    #[test]
    fn eval_len_empty() {
        let s = sigma(&[], &[("a", &[])]);
        assert_eq!(eval_int(&IntTerm::Len("a".to_string()), &s), Ok(0));
    }

    #[test]
    fn eval_add_var() {
        let s = sigma(&[("x", 3)], &[]);
        let t = IntTerm::add(IntTerm::Const(2), IntTerm::var("x"));
        assert_eq!(eval_int(&t, &s), Ok(5));
    }

    fn count_min_fn() -> FoldFunction {
        // e = min => c1++ ; e > min => skip
        FoldFunction {
            arity: 2,
            branches: vec![
                Branch {
                    guard: vec![GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Eq,
                        rhs: IntTerm::var("min"),
                    }],
                    updates: vec![UpdateAtom::CtrAdd(1, 1)],
                },
                Branch {
                    guard: vec![GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Gt,
                        rhs: IntTerm::var("min"),
                    }],
                    updates: vec![UpdateAtom::Skip],
                },
            ],
        }
    }

    #[test]
    fn toy_example_counts_two_ones() {
        let s = sigma(&[("min", 1)], &[]);
        let a = [1, 2, 7, 4, 1, 3, 7, 5];
        let out = eval_fold(&a, &[0, 0], &count_min_fn(), &s).unwrap();
        assert_eq!(out, vec![8, 2]);
    }

    #[test]
    fn empty_array_returns_init() {
        let s = sigma(&[("min", 0)], &[]);
        let out = eval_fold(&[], &[0, 5], &count_min_fn(), &s).unwrap();
        assert_eq!(out, vec![0, 5]);
    }

    #[test]
    fn periodicity_breaks_on_00() {
        // (01)* checker run on [0,0]: at index 1 state is 1 but e = 0, so no
        // guard fires and the catch-all breaks with index 1.
        let text = "\
(declare-array a)
(assert (= (fold a (vec 0) (branches \
  (branch (and (= s 0) (= e 0)) (set-s 1)) \
  (branch (and (= s 1) (= e 1)) (set-s 0)))) (len a)))";
        let f = parse(text).unwrap();
        let BoolTerm::VecEq(VectorTerm::Fold { func, .. }, _) = &f.assertions[0] else {
            panic!()
        };
        let s = sigma(&[], &[]);
        assert_eq!(eval_fold(&[0, 0], &[0], func, &s).unwrap(), vec![1]);
        assert_eq!(eval_fold(&[0, 1], &[0], func, &s).unwrap(), vec![2]);
    }

    #[test]
    fn break_discards_sibling_updates() {
        let func = FoldFunction {
            arity: 2,
            branches: vec![Branch {
                guard: vec![],
                updates: vec![UpdateAtom::CtrAdd(1, 7), UpdateAtom::Break],
            }],
        };
        let s = sigma(&[], &[]);
        assert_eq!(eval_fold(&[9], &[0, 0], &func, &s).unwrap(), vec![0, 0]);
    }

    #[test]
    fn guard_overlap_reported() {
        let func = FoldFunction {
            arity: 1,
            branches: vec![
                Branch {
                    guard: vec![GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Gt,
                        rhs: IntTerm::Const(0),
                    }],
                    updates: vec![UpdateAtom::Skip],
                },
                Branch {
                    guard: vec![GuardAtom {
                        lhs: GuardLhs::Elem,
                        cmp: Cmp::Gt,
                        rhs: IntTerm::Const(1),
                    }],
                    updates: vec![UpdateAtom::Skip],
                },
            ],
        };
        let s = sigma(&[], &[]);
        let e = eval_fold(&[2], &[0], &func, &s).unwrap_err();
        assert!(matches!(e, EvalError::GuardOverlap { .. }));
    }

    #[test]
    fn negative_start_returns_init() {
        let s = sigma(&[("min", 0)], &[]);
        let out = eval_fold(&[1, 2], &[-1, 3], &count_min_fn(), &s).unwrap();
        assert_eq!(out, vec![-1, 3]);
    }

    #[test]
    fn toy_formula_model_check() {
        // Figure-style toy formula: equal counts of min and max occurrences.
        let text = "\
(declare-array a)(declare-int min)(declare-int max)
(declare-int i1)(declare-int i2)(declare-int j)(declare-int k)
(assert (<= 0 i1))(assert (< i1 (len a)))
(assert (<= 0 i2))(assert (< i2 (len a)))
(assert (= (select a i1) min))(assert (= (select a i2) max))
(assert (= (fold a (vec 0 0) (branches \
  (branch (= e min) (inc (c 1) 1)) (branch (> e min) skip))) (vec (len a) j)))
(assert (= (fold a (vec 0 0) (branches \
  (branch (= e max) (inc (c 1) 1)) (branch (< e max) skip))) (vec (len a) k)))
(assert (= j k))";
        let f = parse(text).unwrap();
        let good = sigma(
            &[("min", 1), ("max", 7), ("i1", 0), ("i2", 2), ("j", 2), ("k", 2)],
            &[("a", &[1, 2, 7, 4, 1, 3, 7, 5])],
        );
        assert_eq!(eval_formula(&f, &good), Ok(true));
        // The modified array has only one 7: j = k fails for every witness.
        for j in 0..=8 {
            for k in 0..=8 {
                let bad = sigma(
                    &[("min", 1), ("max", 7), ("i1", 0), ("i2", 2), ("j", j), ("k", k)],
                    &[("a", &[1, 2, 7, 4, 1, 3, 6, 5])],
                );
                assert_eq!(eval_formula(&f, &bad), Ok(false), "j={j} k={k}");
            }
        }
    }

    #[test]
    fn trivial_formula_true() {
        let f = parse("(assert (= 0 0))").unwrap();
        assert_eq!(eval_formula(&f, &Interpretation::default()), Ok(true));
    }

    #[test]
    fn brute_force_pumping_n2() {
        let text = "\
(declare-array a)
(assert (= (fold a (vec 0 0 0) (branches \
  (branch (and (= s 0) (= e 0)) (inc (c 1) 1)) \
  (branch (and (= s 0) (= e 1)) (seq (inc (c 2) 1) (set-s 1))) \
  (branch (and (= s 1) (= e 1)) (inc (c 2) 1)))) (vec (len a) 2 2)))";
        let f = parse(text).unwrap();
        let bounds = BruteBounds {
            max_len: 4,
            value_range: (0, 1),
            int_range: (0, 0),
            budget: 1_000_000,
        };
        match brute_force_sat(&f, &bounds).unwrap() {
            BruteResult::Sat(s) => assert_eq!(s.arrays["a"], vec![0, 0, 1, 1]),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn brute_force_unsat_within_bounds() {
        // Boundedness with l=0, u=1 plus a[0] = 5 and |a| >= 1.
        let text = "\
(declare-array a)
(assert (= (fold a (vec 0) (branches (branch (and (>= e 0) (<= e 1)) skip))) (len a)))
(assert (= (select a 0) 5))
(assert (>= (len a) 1))";
        let f = parse(text).unwrap();
        let bounds = BruteBounds {
            max_len: 3,
            value_range: (-1, 6),
            int_range: (0, 0),
            budget: 10_000_000,
        };
        assert_eq!(
            brute_force_sat(&f, &bounds).unwrap(),
            BruteResult::UnsatWithinBounds
        );
    }

    #[test]
    fn brute_force_trivial_true() {
        let f = parse("(assert (= 0 0))").unwrap();
        assert_eq!(
            brute_force_sat(&f, &BruteBounds::default()).unwrap(),
            BruteResult::Sat(Interpretation::default())
        );
    }

    #[test]
    fn final_index_in_range() {
        // Index component of the result lies in [init_index, |a|] whenever
        // the start is in range.
        let func = count_min_fn();
        let s = sigma(&[("min", 0)], &[]);
        for a in [&[0i64, 1, 0][..], &[1, 1], &[0]] {
            for start in 0..a.len() as i64 {
                let out = eval_fold(a, &[start, 0], &func, &s).unwrap();
                assert!(out[0] >= start && out[0] <= a.len() as i64);
            }
        }
    }
}
