//! Induction of probabilistic tree-generating programs from examples.
//!
//! The engine starts from a program that memorizes the observations as a
//! uniform choice, then greedily compresses it with two families of
//! transformations — abstraction (anti-unification plus pattern replacement)
//! and deargumentation (internalizing a function argument as a constant,
//! Gaussian draw, sibling variable, or stochastic recursion) — guided by an
//! unnormalized posterior: a size prior times an exact, parse-enumeration
//! likelihood.
//!
//! See the `progmerge` CLI for the end-to-end pipeline, or start with
//! [`treedom::incorporate_data`] and [`search::beam_search`].

pub mod antiunify;
pub mod dearg;
pub mod fixtures;
pub mod likelihood;
pub mod model;
pub mod search;
pub mod sexpr;
pub mod treedom;
pub mod unify;

pub use model::{Abstraction, Program, ScoredProgram};
pub use sexpr::{SExpr, SymbolGenerator};
pub use treedom::{IncorporationMode, Tree};
