//! End-to-end acceptance checks: the bundled corpus with its expected
//! statuses, and the three seeded differential oracles (whole-formula
//! brute force, Parikh-image enumeration, machine simulation). Criteria
//! run in order inside a single test so the final model-validation tally
//! covers every solver run; each criterion prints one pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines on success.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use aflsat::ast::IntTerm;
use aflsat::backend::{BackendChoice, SolverConfig};
use aflsat::eval::{brute_force_sat, eval_fold, BruteBounds, BruteResult, Interpretation};
use aflsat::gen::{
    brute_parikh_images, parikh_encoding_solutions, random_array, random_env,
    random_fold_function, random_formula, random_nfa,
};
use aflsat::modelgen::validate_model;
use aflsat::parser::parse;
use aflsat::scm::{align, simulate, translate_fold, Rhs};
use aflsat::solver::{solve_formula, Outcome};
use aflsat::Formula;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every SAT answer any criterion sees, and how many of their models
/// failed re-validation (the final criterion requires zero).
static SAT_REPORTS: AtomicUsize = AtomicUsize::new(0);
static FAILED_VALIDATIONS: AtomicUsize = AtomicUsize::new(0);

fn cfg(secs: u64) -> SolverConfig {
    SolverConfig {
        command: None,
        timeout: Duration::from_secs(secs),
        choice: BackendChoice::External,
    }
}

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(name)
}

fn record_sat(f: &Formula, sigma: &Interpretation) {
    SAT_REPORTS.fetch_add(1, Ordering::SeqCst);
    if !validate_model(f, sigma) {
        FAILED_VALIDATIONS.fetch_add(1, Ordering::SeqCst);
    }
}

/// Solves a corpus file and re-validates any model it returns.
fn solve_file(name: &str, secs: u64) -> Result<(Outcome, Formula, Duration), String> {
    let path = corpus(name);
    let text =
        std::fs::read_to_string(&path).map_err(|e| format!("{name}: read failed: {e}"))?;
    let f = parse(&text).map_err(|e| format!("{name}: parse failed: {e}"))?;
    let start = Instant::now();
    let out = solve_formula(&f, &cfg(secs)).map_err(|e| format!("{name}: {e}"))?;
    let elapsed = start.elapsed();
    if let Outcome::Sat(sigma) = &out {
        record_sat(&f, sigma);
    }
    Ok((out, f, elapsed))
}

fn expect_status(name: &str, secs: u64, want_sat: bool) -> Result<Duration, String> {
    let (out, _, t) = solve_file(name, secs)?;
    match (&out, want_sat) {
        (Outcome::Sat(_), true) | (Outcome::Unsat, false) => Ok(t),
        _ => Err(format!(
            "{name}: got {} after {:.1}s, expected {}",
            outcome_name(&out),
            t.as_secs_f64(),
            if want_sat { "sat" } else { "unsat" }
        )),
    }
}

fn outcome_name(out: &Outcome) -> String {
    match out {
        Outcome::Sat(_) => "sat".into(),
        Outcome::Unsat => "unsat".into(),
        Outcome::Unknown(r) => format!("unknown ({r})"),
    }
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn intro_examples() -> Result<String, String> {
    let files = [
        "ex1_boundedness.afl",
        "ex2_partitioning.afl",
        "ex3_periodicity.afl",
        "ex4_pumping.afl",
        "ex5_equal_count.afl",
        "ex6_histogram.afl",
        "ex7_format_fields.afl",
    ];
    let mut max = Duration::ZERO;
    for name in files {
        let t = expect_status(name, 30, true)?;
        if t >= Duration::from_secs(30) {
            return Err(format!("{name}: took {:.1}s (limit 30s)", t.as_secs_f64()));
        }
        max = max.max(t);
    }
    Ok(format!("7 examples sat, slowest {:.1}s", max.as_secs_f64()))
}

fn figure_pair() -> Result<String, String> {
    let t1 = expect_status("fig1c.afl", 120, true)?;
    let t2 = expect_status("fig1c_reject.afl", 300, false)?;
    Ok(format!(
        "accept sat {:.1}s, pinned-contents variant unsat {:.1}s",
        t1.as_secs_f64(),
        t2.as_secs_f64()
    ))
}

fn pumping_model() -> Result<String, String> {
    let (out, _, _) = solve_file("pumping_n3.afl", 60)?;
    let Outcome::Sat(sigma) = out else {
        return Err(format!("pumping_n3.afl: got {}", outcome_name(&out)));
    };
    let a = sigma
        .array("a")
        .ok_or_else(|| "model has no array a".to_string())?;
    if a == &[0, 0, 0, 1, 1, 1] {
        Ok("model array is exactly [0,0,0,1,1,1]".into())
    } else {
        Err(format!("model array is {a:?}, expected [0,0,0,1,1,1]"))
    }
}

fn histograms_and_markdown() -> Result<String, String> {
    let mut lens = Vec::new();
    for n in 4..=8 {
        let name = format!("histogram_{n}.afl");
        let (out, _, t) = solve_file(&name, 120)?;
        let Outcome::Sat(sigma) = out else {
            return Err(format!("{name}: got {}", outcome_name(&out)));
        };
        if n == 8 && t >= Duration::from_secs(120) {
            return Err(format!("{name}: took {:.1}s (limit 120s)", t.as_secs_f64()));
        }
        lens.push(sigma.array("a").map_or(0, Vec::len));
    }
    expect_status("histogram_unsat.afl", 120, false)?;
    let t = expect_status("markdown_1.afl", 300, true)?;
    Ok(format!(
        "histogram 4..8 sat (array lengths {lens:?}), contradictory counts unsat, \
         markdown sat {:.1}s",
        t.as_secs_f64()
    ))
}

fn verification_conditions() -> Result<String, String> {
    let files = [
        "vc_min_in_array.afl",
        "vc_linear_search.afl",
        "vc_sentinel.afl",
        "vc_find.afl",
        "vc_vararg.afl",
        "vc_call3.afl",
    ];
    for name in files {
        expect_status(name, 120, false)?;
        let text = std::fs::read_to_string(corpus(name)).map_err(|e| e.to_string())?;
        let f = parse(&text).map_err(|e| e.to_string())?;
        match brute_force_sat(&f, &BruteBounds::default()) {
            Ok(BruteResult::UnsatWithinBounds) => {}
            Ok(BruteResult::Sat(sigma)) => {
                return Err(format!("{name}: brute force found a model {sigma:?}"))
            }
            Err(e) => return Err(format!("{name}: {e}")),
        }
    }
    Ok("6 conditions unsat, brute force agrees within bounds".into())
}

/// A model that lies inside the brute-force bounds: if the solver finds
/// one where enumeration found none, one of the two is wrong.
fn within_bounds(sigma: &Interpretation, b: &BruteBounds) -> bool {
    sigma.arrays.values().all(|a| {
        a.len() <= b.max_len
            && a.iter().all(|&v| (b.value_range.0..=b.value_range.1).contains(&v))
    }) && sigma
        .ints
        .values()
        .all(|&v| (b.int_range.0..=b.int_range.1).contains(&v))
    }

fn differential_formulas() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let bounds = BruteBounds::default();
    let cfg = cfg(60);
    let (mut sat, mut unsat) = (0usize, 0usize);
    for i in 0..500 {
        let f = random_formula(&mut rng);
        let brute = brute_force_sat(&f, &bounds).map_err(|e| format!("formula {i}: {e}"))?;
        let out = solve_formula(&f, &cfg).map_err(|e| format!("formula {i}: {e}"))?;
        match &out {
            Outcome::Sat(sigma) => {
                record_sat(&f, sigma);
                sat += 1;
                if within_bounds(sigma, &bounds) && brute == BruteResult::UnsatWithinBounds {
                    return Err(format!(
                        "formula {i}: solver model {sigma:?} is within bounds but \
                         enumeration found nothing"
                    ));
                }
            }
            Outcome::Unsat => {
                unsat += 1;
                if let BruteResult::Sat(sigma) = &brute {
                    return Err(format!(
                        "formula {i}: solver says unsat but {sigma:?} is a model"
                    ));
                }
            }
            Outcome::Unknown(r) => return Err(format!("formula {i}: unknown ({r})")),
        }
    }
    Ok(format!("500 formulas, {sat} sat / {unsat} unsat, no disagreement"))
}

fn differential_parikh() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for i in 0..100 {
        let nfa = random_nfa(&mut rng, 5, 3);
        let want = brute_parikh_images(&nfa, 6);
        let got = parikh_encoding_solutions(&nfa, 6);
        if got != want {
            return Err(format!(
                "nfa {i} ({:?}): encoding solutions {got:?} != path images {want:?}",
                nfa
            ));
        }
    }
    Ok("100 automata, Parikh images up to total 6 match exactly".into())
}

fn differential_simulation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let vars = ["u", "v"];
    for i in 0..1000 {
        let func = random_fold_function(&mut rng, &vars);
        let a = random_array(&mut rng, 5, (-2, 2));
        let env: BTreeMap<String, i64> = random_env(&mut rng, &vars, (-2, 2));
        let mut init = vec![rng.gen_range(-1..=2)];
        for _ in 1..func.arity {
            init.push(rng.gen_range(-2..=2));
        }
        let mut sigma = Interpretation::default();
        sigma.ints = env.clone();
        let want = eval_fold(&a, &init, &func, &sigma)
            .map_err(|e| format!("triple {i}: evaluation failed: {e}"))?;
        let inits: Vec<Rhs> = init.iter().map(|&v| Rhs::Const(v)).collect();
        let core = translate_fold(&func, 0, 0, Rhs::Const(init[0]), inits, &mut |t| match t {
            IntTerm::Var(x) => Rhs::Var(x.clone()),
            IntTerm::Const(c) => Rhs::Const(*c),
            other => panic!("generated guards use only vars and consts, got {other:?}"),
        })
        .map_err(|e| format!("triple {i}: translation failed: {e}"))?;
        let machine = align(&core);
        let cells: Vec<Vec<i64>> = a.iter().map(|&v| vec![v]).collect();
        let got = simulate(&machine, &cells, &env)
            .map_err(|e| format!("triple {i}: simulation failed: {e}"))?;
        if got != want {
            return Err(format!(
                "triple {i}: simulate gave {got:?}, evaluator gave {want:?} \
                 (array {a:?}, init {init:?}, env {env:?})"
            ));
        }
    }
    Ok("1000 triples, machine simulation matches the evaluator".into())
}

fn validation_tally() -> Result<String, String> {
    let total = SAT_REPORTS.load(Ordering::SeqCst);
    let failed = FAILED_VALIDATIONS.load(Ordering::SeqCst);
    if total == 0 {
        return Err("no sat answer was observed; earlier criteria did not run".into());
    }
    if failed > 0 {
        return Err(format!("{failed} of {total} reported models failed validation"));
    }
    Ok(format!("{total} sat answers, every model validated"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Result<String, String>); 9] = [
        ("introductory examples sat and validated", intro_examples),
        ("figure pair accept/reject", figure_pair),
        ("pumping model is 000111", pumping_model),
        ("histogram family and markdown", histograms_and_markdown),
        ("verification conditions unsat", verification_conditions),
        ("differential: formulas vs brute force", differential_formulas),
        ("differential: Parikh encoding vs paths", differential_parikh),
        ("differential: simulation vs evaluator", differential_simulation),
        ("all reported models validate", validation_tally),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} ({name}): pass — {detail}", i + 1),
            Err(detail) => {
                println!("criterion {} ({name}): FAIL — {detail}", i + 1);
                failures.push(format!("criterion {} ({name}): {detail}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
