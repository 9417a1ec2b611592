//! Unification of expressions against abstraction bodies, and
//! pattern-replacement compression of programs.

use crate::model::{Abstraction, ModelError, Program};
use crate::sexpr::{SExpr, LAMBDA};

/// Variable bindings produced by a successful unification. Each variable is
/// bound at most once; repeated pattern variables must have agreed during
/// construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Substitution {
    bindings: Vec<(String, SExpr)>,
}

impl Substitution {
    pub fn get(&self, var: &str) -> Option<&SExpr> {
        self.bindings.iter().find(|(v, _)| v == var).map(|(_, e)| e)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SExpr)> {
        self.bindings.iter().map(|(v, e)| (v.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    /// Add a binding, failing on an inconsistent repeat.
    fn insert(&mut self, var: &str, value: &SExpr) -> bool {
        match self.get(var) {
            Some(existing) => existing == value,
            None => {
                self.bindings.push((var.to_string(), value.clone()));
                true
            }
        }
    }

    /// Instantiate a pattern with these bindings. Unbound symbols pass through.
    pub fn apply(&self, pattern: &SExpr) -> SExpr {
        match pattern {
            SExpr::Sym(s) => self.get(s).cloned().unwrap_or_else(|| pattern.clone()),
            SExpr::Num(_) => pattern.clone(),
            SExpr::List(items) => SExpr::List(items.iter().map(|i| self.apply(i)).collect()),
        }
    }
}

/// Match `e` against `pattern`, whose parameter variables are `vars`.
/// Returns the consistent bindings, or `None` when there is no match.
/// A variable never binds to the bare `λ` symbol itself.
pub fn unify(e: &SExpr, pattern: &SExpr, vars: &[String]) -> Option<Substitution> {
    let mut sub = Substitution::default();
    if unify_into(e, pattern, vars, &mut sub) {
        Some(sub)
    } else {
        None
    }
}

fn unify_into(e: &SExpr, pattern: &SExpr, vars: &[String], sub: &mut Substitution) -> bool {
    if let Some(v) = pattern.as_sym() {
        if vars.iter().any(|x| x == v) {
            if e.as_sym() == Some(LAMBDA) {
                return false;
            }
            return sub.insert(v, e);
        }
    }
    match (e, pattern) {
        (SExpr::List(es), SExpr::List(ps)) => {
            es.len() == ps.len()
                && es.iter().zip(ps).all(|(ei, pi)| unify_into(ei, pi, vars, sub))
        }
        (SExpr::List(_), _) | (_, SExpr::List(_)) => false,
        _ => e == pattern,
    }
}

/// Top-down rewriting of every match of `a`'s body into a call of `a`.
/// Arguments are themselves rewritten, so nested occurrences become nested
/// calls.
pub fn replace_matches(e: &SExpr, a: &Abstraction) -> SExpr {
    if let Some(sub) = unify(e, &a.body, &a.vars) {
        if a.vars.iter().all(|v| sub.get(v).is_some()) {
            let mut call = Vec::with_capacity(1 + a.vars.len());
            call.push(SExpr::sym(a.name.clone()));
            call.extend(a.vars.iter().map(|v| replace_matches(sub.get(v).unwrap(), a)));
            return SExpr::List(call);
        }
    }
    match e {
        SExpr::List(items) => SExpr::List(items.iter().map(|i| replace_matches(i, a)).collect()),
        _ => e.clone(),
    }
}

/// Prepend `a` and rewrite every existing abstraction body and the program
/// body in terms of it. `a`'s own body is left untouched.
pub fn compress_program(p: &Program, a: Abstraction) -> Result<Program, ModelError> {
    if p.abstraction(&a.name).is_some() {
        return Err(ModelError::DuplicateAbstraction(a.name));
    }
    let mut abstractions = Vec::with_capacity(p.abstractions.len() + 1);
    let body = replace_matches(&p.body, &a);
    abstractions.push(a.clone());
    for old in &p.abstractions {
        abstractions.push(Abstraction::new(
            old.name.clone(),
            old.vars.clone(),
            replace_matches(&old.body, &a),
        ));
    }
    Ok(Program::new(abstractions, body))
}
