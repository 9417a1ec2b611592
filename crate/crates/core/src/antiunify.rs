//! Candidate abstraction generation: anti-unify pairs of subexpressions into
//! patterns, and turn the surviving patterns into compressed programs.

use crate::model::{program_size, Abstraction, Program};
use crate::sexpr::{all_subexprs, sexpr_size, SExpr, SymbolGenerator};
use crate::unify::{compress_program, unify};

/// The least general pattern common to two expressions, with the fresh
/// variables in order of first introduction. Each variable occurs exactly
/// once in the pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct AntiUnifyResult {
    pub pattern: SExpr,
    pub variables: Vec<String>,
}

/// Recursively compare two expressions: equal atoms stay, equal-length lists
/// recurse elementwise, and every other combination becomes a fresh variable.
pub fn anti_unify(e1: &SExpr, e2: &SExpr, gen: &mut SymbolGenerator) -> AntiUnifyResult {
    let mut variables = Vec::new();
    let pattern = build_pattern(e1, e2, gen, &mut variables);
    AntiUnifyResult { pattern, variables }
}

fn build_pattern(
    e1: &SExpr,
    e2: &SExpr,
    gen: &mut SymbolGenerator,
    variables: &mut Vec<String>,
) -> SExpr {
    let fresh = |gen: &mut SymbolGenerator, variables: &mut Vec<String>| {
        let v = gen.fresh_var();
        variables.push(v.clone());
        SExpr::sym(v)
    };
    match (e1, e2) {
        (SExpr::List(a), SExpr::List(b)) => {
            if a.len() != b.len() {
                fresh(gen, variables)
            } else {
                SExpr::List(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| build_pattern(x, y, gen, variables))
                        .collect(),
                )
            }
        }
        (SExpr::List(_), _) | (_, SExpr::List(_)) => fresh(gen, variables),
        _ => {
            if e1 == e2 {
                e1.clone()
            } else {
                fresh(gen, variables)
            }
        }
    }
}

/// The expressions transformations operate on: abstraction bodies in order,
/// then the program body.
pub fn condense_program(p: &Program) -> Vec<SExpr> {
    p.bodies().cloned().collect()
}

/// Pattern with its variables renumbered left to right, used to detect
/// duplicates up to renaming.
fn canonical_key(pattern: &SExpr, vars: &[String]) -> String {
    fn renumber(e: &SExpr, vars: &[String], seen: &mut Vec<String>) -> SExpr {
        match e {
            SExpr::Sym(s) if vars.contains(s) => {
                let idx = match seen.iter().position(|v| v == s) {
                    Some(i) => i,
                    None => {
                        seen.push(s.clone());
                        seen.len() - 1
                    }
                };
                SExpr::sym(format!("V{}", idx + 1))
            }
            SExpr::List(items) => {
                SExpr::List(items.iter().map(|i| renumber(i, vars, seen)).collect())
            }
            _ => e.clone(),
        }
    }
    renumber(pattern, vars, &mut Vec::new()).to_string()
}

/// Anti-unify every unordered pair of list subexpressions drawn across the
/// whole condensed sequence (an expression can pair with itself at a
/// different position). Keeps candidates with some structure, dropping lone
/// variables, single-atom patterns, duplicates up to variable renaming, and
/// patterns that cannot match two occurrences (compression needs two; the
/// λ-binding guard can invalidate a pattern at its own source).
pub fn possible_abstractions(exprs: &[SExpr], gen: &mut SymbolGenerator) -> Vec<Abstraction> {
    fn has_concrete_atom(pattern: &SExpr, vars: &[String]) -> bool {
        match pattern {
            SExpr::Num(_) => true,
            SExpr::Sym(s) => !vars.iter().any(|v| v == s),
            SExpr::List(items) => items.iter().any(|i| has_concrete_atom(i, vars)),
        }
    }
    let wrapper = SExpr::List(exprs.to_vec());
    // skip index 0: the wrapper list is bookkeeping, not program content
    let subs = &all_subexprs(&wrapper)[1..];
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for i in 0..subs.len() {
        for j in (i + 1)..subs.len() {
            // candidates live in separate programs, so each pair can draw
            // from the same starting point; names stay small and fresh
            let mut gen = gen.clone();
            let au = anti_unify(subs[i], subs[j], &mut gen);
            if sexpr_size(&au.pattern) <= 1 || !has_concrete_atom(&au.pattern, &au.variables) {
                continue; // a lone variable or a pattern with no structure
            }
            let key = canonical_key(&au.pattern, &au.variables);
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let occurrences = subs
                .iter()
                .filter(|s| unify(s, &au.pattern, &au.variables).is_some())
                .count();
            if occurrences < 2 {
                continue;
            }
            let mut gen = gen.clone();
            out.push(Abstraction::new(gen.fresh_func(), au.variables, au.pattern));
        }
    }
    out
}

/// All candidate compressions of a program. Unless `no_filter` is set, only
/// programs that do not grow beyond the original size plus one are kept.
pub fn compressions(p: &Program, gen: &mut SymbolGenerator, no_filter: bool) -> Vec<Program> {
    let condensed = condense_program(p);
    let candidates = possible_abstractions(&condensed, gen);
    let original = program_size(p);
    candidates
        .into_iter()
        .map(|a| compress_program(p, a).expect("generated abstraction names are fresh"))
        .filter(|cp| no_filter || program_size(cp) <= original + 1)
        .collect()
}
