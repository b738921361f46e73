//! Command-line driver: solve `.afl` files, validate models against the
//! reference evaluator, benchmark a corpus directory, and fuzz the solver
//! against the brute-force oracle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aflsat::ast::{collect_folds, formula_size, Formula, VectorTerm};
use aflsat::backend::{BackendChoice, SolverConfig};
use aflsat::eval::{brute_force_sat, eval_formula, BruteBounds, BruteResult};
use aflsat::gen::random_formula;
use aflsat::lia::print_smt;
use aflsat::modelgen::{parse_model_text, print_model, validate_model};
use aflsat::parser::parse;
use aflsat::solver::{prepare, solve_formula, Outcome};

#[derive(Parser)]
#[command(name = "aflsat")]
#[command(about = "Satisfiability solver for array folds logic")]
#[command(version)]
struct Cli {
    /// Solver backend for linear arithmetic queries.
    #[arg(long, global = true, value_enum, default_value_t = Backend::Auto)]
    backend: Backend,

    /// Per-query solver timeout in seconds.
    #[arg(long, global = true, default_value_t = 60)]
    timeout: u64,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    External,
    Fallback,
    Auto,
}

#[derive(Subcommand)]
enum Commands {
    /// Decide satisfiability of an `.afl` file.
    Solve {
        file: PathBuf,

        /// Print the satisfying model (validated against the evaluator).
        #[arg(long)]
        model: bool,

        /// Write the linear arithmetic encoding ψ as SMT-LIB2.
        #[arg(long, value_name = "PATH")]
        dump_smt: Option<PathBuf>,

        /// Re-check printed models through the text round-trip.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        validate: bool,
    },
    /// Check a model file against a formula with the evaluator.
    Validate { formula: PathBuf, model: PathBuf },
    /// Run a corpus of `.afl` files with `.expect` sidecars.
    Bench {
        dir: PathBuf,

        /// Parallel corpus workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,

        /// Also write the table as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Compare the solver against bounded brute-force enumeration on
    /// random formulas.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = SolverConfig {
        command: None,
        timeout: Duration::from_secs(cli.timeout),
        choice: match cli.backend {
            Backend::External => BackendChoice::External,
            Backend::Fallback => BackendChoice::Fallback,
            Backend::Auto => BackendChoice::Auto,
        },
    };
    match cli.command {
        Commands::Solve {
            file,
            model,
            dump_smt,
            validate,
        } => cmd_solve(&file, model, dump_smt.as_deref(), validate, &cfg),
        Commands::Validate { formula, model } => cmd_validate(&formula, &model),
        Commands::Bench { dir, jobs, csv } => cmd_bench(&dir, jobs, csv.as_deref(), &cfg),
        Commands::Fuzz { seed, count } => cmd_fuzz(seed, count, &cfg),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(3)
}

fn load_formula(path: &Path) -> Result<Formula, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}:{e}", path.display()))
}

fn cmd_solve(
    file: &Path,
    want_model: bool,
    dump_smt: Option<&Path>,
    validate: bool,
    cfg: &SolverConfig,
) -> ExitCode {
    let f = match load_formula(file) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    if let Some(path) = dump_smt {
        match prepare(&f) {
            Ok(Ok(enc)) => {
                if let Err(e) = std::fs::write(path, print_smt(&enc.psi)) {
                    return fail(format!("{}: {e}", path.display()));
                }
            }
            Ok(Err(e)) => return fail(format!("cannot encode: {e}")),
            Err(e) => return fail(e),
        }
    }
    match solve_formula(&f, cfg) {
        Ok(Outcome::Sat(sigma)) => {
            println!("sat");
            if want_model {
                let text = print_model(&sigma);
                if validate {
                    // Round-trip the printed text and re-check with the
                    // evaluator, so what we print is what holds.
                    match parse_model_text(&text, Some(&f.decls)) {
                        Ok(back) if validate_model(&f, &back) => {}
                        _ => return fail("printed model failed re-validation"),
                    }
                }
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Ok(Outcome::Unsat) => {
            println!("unsat");
            ExitCode::from(1)
        }
        Ok(Outcome::Unknown(reason)) => {
            println!("unknown");
            eprintln!("note: {reason}");
            ExitCode::from(2)
        }
        Err(e) => fail(e),
    }
}

fn cmd_validate(formula: &Path, model: &Path) -> ExitCode {
    let f = match load_formula(formula) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let text = match std::fs::read_to_string(model) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", model.display())),
    };
    let sigma = match parse_model_text(&text, Some(&f.decls)) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", model.display())),
    };
    match eval_formula(&f, &sigma) {
        Ok(true) => {
            println!("valid");
            ExitCode::SUCCESS
        }
        Ok(false) => {
            println!("invalid");
            ExitCode::from(1)
        }
        Err(e) => {
            println!("invalid");
            eprintln!("note: {e}");
            ExitCode::from(1)
        }
    }
}

struct BenchRow {
    name: String,
    size: usize,
    folds: usize,
    mfpa: usize,
    translate_ms: u128,
    solve_ms: u128,
    status: &'static str,
    len: String,
    expected: String,
    pass: bool,
}

fn bench_one(path: &Path, cfg: &SolverConfig) -> Result<BenchRow, String> {
    let f = load_formula(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let folds: Vec<&str> = collect_folds(&f)
        .into_iter()
        .filter(|(_, v)| matches!(v, VectorTerm::Fold { .. }))
        .map(|(a, _)| a.as_str())
        .collect();
    let mfpa = folds
        .iter()
        .map(|a| folds.iter().filter(|b| *b == a).count())
        .max()
        .unwrap_or(0);
    let expected = std::fs::read_to_string(path.with_extension("expect"))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "?".to_string());
    // Translation is timed separately; the full pipeline re-encodes, so
    // the solve column subtracts the (cheap) second translation.
    let t0 = Instant::now();
    let _ = prepare(&f);
    let translate_ms = t0.elapsed().as_millis();
    let t1 = Instant::now();
    let outcome = solve_formula(&f, cfg).map_err(|e| format!("{}: {e}", path.display()))?;
    let solve_ms = t1.elapsed().as_millis().saturating_sub(translate_ms);
    let (status, len) = match &outcome {
        Outcome::Sat(sigma) => {
            let len = sigma
                .arrays
                .values()
                .map(|a| a.len())
                .max()
                .map(|l| l.to_string())
                .unwrap_or_else(|| "-".to_string());
            ("sat", len)
        }
        Outcome::Unsat => ("unsat", "-".to_string()),
        Outcome::Unknown(_) => ("unknown", "-".to_string()),
    };
    Ok(BenchRow {
        name,
        size: formula_size(&f),
        folds: folds.len(),
        mfpa,
        translate_ms,
        solve_ms,
        status,
        len,
        expected: expected.clone(),
        pass: expected == "?" || expected == status,
    })
}

fn cmd_bench(dir: &Path, jobs: usize, csv: Option<&Path>, cfg: &SolverConfig) -> ExitCode {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |x| x == "afl"))
            .collect(),
        Err(e) => return fail(format!("{}: {e}", dir.display())),
    };
    files.sort();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<BenchRow, String>> = pool.install(|| {
        use rayon::prelude::*;
        files.par_iter().map(|p| bench_one(p, cfg)).collect()
    });
    let header = format!(
        "{:<18} {:>5} {:>5} {:>4} {:>8} {:>8} {:>8} {:>5} {:>8} {:>5}",
        "name", "|phi|", "folds", "mfpa", "t_enc_ms", "t_sol_ms", "status", "len", "expected", "pass"
    );
    println!("{header}");
    let mut all_pass = true;
    let mut csv_text = String::from(
        "name,size,folds,mfpa,translate_ms,solve_ms,status,len,expected,pass\n",
    );
    for r in &results {
        match r {
            Ok(r) => {
                println!(
                    "{:<18} {:>5} {:>5} {:>4} {:>8} {:>8} {:>8} {:>5} {:>8} {:>5}",
                    r.name,
                    r.size,
                    r.folds,
                    r.mfpa,
                    r.translate_ms,
                    r.solve_ms,
                    r.status,
                    r.len,
                    r.expected,
                    if r.pass { "ok" } else { "FAIL" }
                );
                writeln!(
                    csv_text,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.name,
                    r.size,
                    r.folds,
                    r.mfpa,
                    r.translate_ms,
                    r.solve_ms,
                    r.status,
                    r.len,
                    r.expected,
                    r.pass
                )
                .unwrap();
                all_pass &= r.pass;
            }
            Err(e) => {
                eprintln!("error: {e}");
                all_pass = false;
            }
        }
    }
    if let Some(path) = csv {
        if let Err(e) = std::fs::write(path, csv_text) {
            return fail(format!("{}: {e}", path.display()));
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_fuzz(seed: u64, count: usize, cfg: &SolverConfig) -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = BruteBounds {
        max_len: 3,
        value_range: (-2, 2),
        int_range: (-2, 2),
        budget: 5_000_000,
    };
    let (mut sat, mut unsat, mut unknown, mut disagree) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..count {
        let f = random_formula(&mut rng);
        let outcome = match solve_formula(&f, cfg) {
            Ok(o) => o,
            Err(e) => return fail(format!("formula {i}: {e}")),
        };
        match &outcome {
            Outcome::Sat(_) => sat += 1,
            Outcome::Unsat => unsat += 1,
            Outcome::Unknown(_) => unknown += 1,
        }
        let brute = brute_force_sat(&f, &bounds);
        let bad = match (&outcome, &brute) {
            (Outcome::Unsat, Ok(BruteResult::Sat(_))) => true,
            (Outcome::Unknown(_), _) => false,
            (o, Ok(BruteResult::Sat(_))) => !matches!(o, Outcome::Sat(_)),
            _ => false,
        };
        if bad {
            disagree += 1;
            eprintln!("disagreement on seed {seed} formula {i}");
        }
    }
    println!(
        "checked {count}: sat {sat}, unsat {unsat}, unknown {unknown}, disagreements {disagree}"
    );
    if disagree == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
