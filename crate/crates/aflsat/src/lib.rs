//! Satisfiability solver for Array Folds Logic (AFL): a quantifier-free
//! theory of integer arrays extended with fold terms that count over array
//! contents. Folds are translated to symbolic reversal-bounded counter
//! machines whose reachability is encoded into quantifier-free linear
//! integer arithmetic; a model of the encoding is turned back into concrete
//! arrays and validated against a reference evaluator.

pub mod ast;
pub mod backend;
pub mod encoder;
pub mod eval;
pub mod gen;
pub mod lia;
pub mod modelgen;
pub mod parser;
pub mod scm;
pub mod solver;

pub use ast::{Formula, Sort};
