//! Deargumentation: remove one parameter from an abstraction, replacing its
//! uses with an internally defined value — a constant, a Gaussian draw, a
//! sibling variable, or a stochastic recursion.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{replace_abstraction, Abstraction, ModelError, Program};
use crate::sexpr::{all_subexprs, variable_index, SExpr, LAMBDA};

/// How the removed argument's value is reintroduced inside the body.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplacementKind {
    /// Constant: the mean of all numeric instances.
    NoisyMean,
    /// Noisy constructor: `(gaussian mean sd)` from the numeric instances.
    NoisyGaussian,
    /// Another parameter of the same abstraction with similar instances.
    SameVariable,
    /// A flip between a recursive call and the non-recursive instances.
    Recursion,
}

pub const ALL_KINDS: [ReplacementKind; 4] = [
    ReplacementKind::NoisyMean,
    ReplacementKind::NoisyGaussian,
    ReplacementKind::SameVariable,
    ReplacementKind::Recursion,
];

/// Either a definition expression for the removed variable, or a signal that
/// this transform does not apply here.
#[derive(Clone, Debug, PartialEq)]
pub enum ReplacementOutcome {
    NoReplacement,
    Definition(SExpr),
}

#[derive(Debug, Error)]
pub enum DeargError {
    #[error("{var} is not a parameter of {name}")]
    NoSuchVariable { name: String, var: String },
    #[error("application `{site}` of {name} has {got} arguments, expected {expected}")]
    SiteArity { name: String, site: String, expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn variable_position(a: &Abstraction, v: &str) -> Result<usize, DeargError> {
    a.vars
        .iter()
        .position(|x| x == v)
        .ok_or_else(|| DeargError::NoSuchVariable { name: a.name.clone(), var: v.to_string() })
}

/// Every application of `a` anywhere in the program, program body first,
/// then abstraction bodies, in preorder. Positional duplicates kept.
fn abstraction_applications<'p>(p: &'p Program, a: &Abstraction) -> Vec<&'p SExpr> {
    std::iter::once(&p.body)
        .chain(p.abstractions.iter().map(|b| &b.body))
        .flat_map(all_subexprs)
        .filter(|s| s.is_call_of(&a.name))
        .collect()
}

/// The argument expression passed for `v` at every application of `a`, in
/// discovery order.
pub fn find_variable_instances(
    p: &Program,
    a: &Abstraction,
    v: &str,
) -> Result<Vec<SExpr>, DeargError> {
    let pos = variable_position(a, v)?;
    let mut out = Vec::new();
    for site in abstraction_applications(p, a) {
        let items = site.as_list().unwrap();
        if items.len() - 1 != a.vars.len() {
            return Err(DeargError::SiteArity {
                name: a.name.clone(),
                site: site.to_string(),
                expected: a.vars.len(),
                got: items.len() - 1,
            });
        }
        out.push(items[1 + pos].clone());
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with the n−1 denominator; 0 for a single value.
fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

fn numeric_instances(instances: &[SExpr]) -> Option<Vec<f64>> {
    instances.iter().map(|e| e.as_num().map(|n| n.value())).collect()
}

/// Two instance values are similar when they have the same list structure or
/// are both numbers; symbols must be identical.
fn similar(a: &SExpr, b: &SExpr) -> bool {
    match (a, b) {
        (SExpr::List(xs), SExpr::List(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| similar(x, y))
        }
        (SExpr::Num(_), SExpr::Num(_)) => true,
        _ => a == b,
    }
}

/// Variable names bound anywhere in the program: abstraction parameters and
/// inner λ binders, plus anything spelled like `V<n>`.
fn bound_variable_names(p: &Program) -> Vec<String> {
    let mut names: Vec<String> = p.abstractions.iter().flat_map(|a| a.vars.clone()).collect();
    for body in p.bodies() {
        for sub in all_subexprs(body) {
            let items = sub.as_list().unwrap();
            if items.len() == 3 && items[0].as_sym() == Some(LAMBDA) {
                if let Some(binders) = items[1].as_list() {
                    names.extend(binders.iter().filter_map(|b| b.as_sym().map(String::from)));
                }
            }
        }
    }
    names
}

fn contains_variable(e: &SExpr, bound: &[String]) -> bool {
    match e {
        SExpr::Sym(s) => variable_index(s).is_some() || bound.iter().any(|b| b == s),
        SExpr::Num(_) => false,
        SExpr::List(items) => items.iter().any(|i| contains_variable(i, bound)),
    }
}

/// Sibling parameters whose instance lists are elementwise similar to the
/// given instances, in declaration order.
pub fn same_variable_matches(
    p: &Program,
    a: &Abstraction,
    v: &str,
    instances: &[SExpr],
) -> Result<Vec<String>, DeargError> {
    let mut matches = Vec::new();
    for w in a.vars.iter().filter(|w| *w != v) {
        let w_instances = find_variable_instances(p, a, w)?;
        if w_instances.len() == instances.len()
            && w_instances.iter().zip(instances).all(|(x, y)| similar(x, y))
        {
            matches.push(w.clone());
        }
    }
    Ok(matches)
}

fn recursion_definition(
    p: &Program,
    a: &Abstraction,
    instances: &[SExpr],
) -> ReplacementOutcome {
    let bound = bound_variable_names(p);
    let valid: Vec<&SExpr> =
        instances.iter().filter(|e| !contains_variable(e, &bound)).collect();
    let (recursive, non_recursive): (Vec<&&SExpr>, Vec<&&SExpr>) =
        valid.iter().partition(|e| e.is_call_of(&a.name));
    if valid.is_empty() || recursive.is_empty() || non_recursive.is_empty() {
        return ReplacementOutcome::NoReplacement;
    }
    let non_recursive: Vec<SExpr> = non_recursive.iter().map(|e| (***e).clone()).collect();
    if !terminates(p, &a.name, &non_recursive) {
        return ReplacementOutcome::NoReplacement;
    }
    let mut choice = vec![SExpr::sym("uniform-choice")];
    choice.extend(non_recursive);
    ReplacementOutcome::Definition(SExpr::list(vec![
        SExpr::sym("if"),
        SExpr::list(vec![
            SExpr::sym("flip"),
            SExpr::ratio(recursive.len() as i64, valid.len() as i64),
        ]),
        (**recursive[0]).clone(),
        SExpr::list(choice),
    ]))
}

/// Compute the definition that would replace `v`, or `NoReplacement` when
/// the transform does not apply. `SameVariable` picks the first matching
/// sibling in declaration order; [`all_deargument_candidates`] enumerates
/// them all.
pub fn replacement(
    kind: ReplacementKind,
    p: &Program,
    a: &Abstraction,
    v: &str,
    instances: &[SExpr],
) -> Result<ReplacementOutcome, DeargError> {
    Ok(match kind {
        ReplacementKind::NoisyMean => match numeric_instances(instances) {
            Some(xs) if !xs.is_empty() => {
                ReplacementOutcome::Definition(SExpr::real(mean(&xs)))
            }
            _ => ReplacementOutcome::NoReplacement,
        },
        ReplacementKind::NoisyGaussian => match numeric_instances(instances) {
            Some(xs) if !xs.is_empty() => ReplacementOutcome::Definition(SExpr::list(vec![
                SExpr::sym("gaussian"),
                SExpr::real(mean(&xs)),
                SExpr::real(sample_sd(&xs)),
            ])),
            _ => ReplacementOutcome::NoReplacement,
        },
        ReplacementKind::SameVariable => match same_variable_matches(p, a, v, instances)?.first() {
            Some(w) => ReplacementOutcome::Definition(SExpr::sym(w.clone())),
            None => ReplacementOutcome::NoReplacement,
        },
        ReplacementKind::Recursion => {
            if instances.is_empty() {
                ReplacementOutcome::NoReplacement
            } else {
                recursion_definition(p, a, instances)
            }
        }
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Unchecked,
    Checking,
    Terminates,
}

/// Does some non-recursive instance reach a base case with probability one?
/// Atoms are base cases; branching forms need one base branch; abstraction
/// applications need a terminating callee and base operands. Re-entering an
/// abstraction already being checked fails.
pub fn terminates(p: &Program, root: &str, non_recursive: &[SExpr]) -> bool {
    let mut statuses: HashMap<&str, Status> =
        p.abstractions.iter().map(|a| (a.name.as_str(), Status::Unchecked)).collect();
    statuses.insert(root, Status::Checking);

    fn base_case<'p>(p: &'p Program, e: &SExpr, statuses: &mut HashMap<&'p str, Status>) -> bool {
        let items = match e.as_list() {
            Some(items) if !items.is_empty() => items,
            _ => return true,
        };
        match items[0].as_sym() {
            Some("if") => items.iter().skip(2).any(|b| base_case(p, b, statuses)),
            Some("uniform-choice") => items.iter().skip(1).any(|b| base_case(p, b, statuses)),
            Some(name) if p.abstraction(name).is_some() => {
                terminating_abstraction(p, name, statuses)
                    && items.iter().skip(1).all(|o| base_case(p, o, statuses))
            }
            _ => items.iter().skip(1).all(|o| base_case(p, o, statuses)),
        }
    }

    fn terminating_abstraction<'p>(
        p: &'p Program,
        name: &str,
        statuses: &mut HashMap<&'p str, Status>,
    ) -> bool {
        match statuses.get(name).copied() {
            Some(Status::Terminates) => true,
            Some(Status::Checking) => false,
            Some(Status::Unchecked) => {
                let a = p.abstraction(name).unwrap();
                statuses.insert(&a.name, Status::Checking);
                if base_case(p, &a.body, statuses) {
                    statuses.insert(&a.name, Status::Terminates);
                    true
                } else {
                    false
                }
            }
            None => false,
        }
    }

    non_recursive.iter().any(|e| base_case(p, e, &mut statuses))
}

/// New version of `a` with `v` removed from the parameters and assigned
/// inside the body instead: `((λ (v) <old body>) <definition>)`.
pub fn remove_abstraction_variable(
    kind: ReplacementKind,
    p: &Program,
    a: &Abstraction,
    v: &str,
) -> Result<Option<Abstraction>, DeargError> {
    let instances = find_variable_instances(p, a, v)?;
    match replacement(kind, p, a, v, &instances)? {
        ReplacementOutcome::NoReplacement => Ok(None),
        ReplacementOutcome::Definition(def) => Ok(Some(rebind_variable(a, v, def))),
    }
}

fn rebind_variable(a: &Abstraction, v: &str, definition: SExpr) -> Abstraction {
    let vars = a.vars.iter().filter(|x| *x != v).cloned().collect();
    let body = SExpr::list(vec![
        SExpr::list(vec![
            SExpr::sym(LAMBDA),
            SExpr::list(vec![SExpr::sym(v)]),
            a.body.clone(),
        ]),
        definition,
    ]);
    Abstraction::new(a.name.clone(), vars, body)
}

/// Drop the argument at `v`'s original position from every application of
/// `a` anywhere in the program, including applications nested inside other
/// applications' arguments and inside the embedded definition.
pub fn remove_application_argument(
    p: &Program,
    a: &Abstraction,
    v: &str,
) -> Result<Program, DeargError> {
    let pos = variable_position(a, v)?;
    let arity = a.vars.len();

    fn strip(
        e: &SExpr,
        name: &str,
        pos: usize,
        arity: usize,
    ) -> Result<SExpr, DeargError> {
        match e {
            SExpr::List(items) => {
                let mut kept: Vec<&SExpr> = items.iter().collect();
                if e.is_call_of(name) {
                    if items.len() - 1 != arity {
                        return Err(DeargError::SiteArity {
                            name: name.to_string(),
                            site: e.to_string(),
                            expected: arity,
                            got: items.len() - 1,
                        });
                    }
                    kept.remove(1 + pos);
                }
                Ok(SExpr::List(
                    kept.into_iter()
                        .map(|i| strip(i, name, pos, arity))
                        .collect::<Result<_, _>>()?,
                ))
            }
            _ => Ok(e.clone()),
        }
    }

    let abstractions = p
        .abstractions
        .iter()
        .map(|b| {
            Ok(Abstraction::new(b.name.clone(), b.vars.clone(), strip(&b.body, &a.name, pos, arity)?))
        })
        .collect::<Result<_, DeargError>>()?;
    Ok(Program::new(abstractions, strip(&p.body, &a.name, pos, arity)?))
}

/// The full pipeline: find instances, compute the replacement, rebind the
/// variable inside the abstraction, and strip the argument from every call
/// site. `None` when the replacement declines.
pub fn deargument(
    kind: ReplacementKind,
    p: &Program,
    a: &Abstraction,
    v: &str,
) -> Result<Option<Program>, DeargError> {
    match remove_abstraction_variable(kind, p, a, v)? {
        None => Ok(None),
        Some(new_abs) => {
            let updated = replace_abstraction(p, new_abs)?;
            Ok(Some(remove_application_argument(&updated, a, v)?))
        }
    }
}

fn dearg_with_definition(
    p: &Program,
    a: &Abstraction,
    v: &str,
    definition: SExpr,
) -> Result<Program, DeargError> {
    let updated = replace_abstraction(p, rebind_variable(a, v, definition))?;
    remove_application_argument(&updated, a, v)
}

/// Every applicable deargumentation of the program: one candidate per
/// (abstraction, parameter, kind), except `SameVariable`, which yields one
/// candidate per matching sibling in declaration order.
pub fn all_deargument_candidates(
    p: &Program,
    kinds: &[ReplacementKind],
) -> Result<Vec<Program>, DeargError> {
    let mut out = Vec::new();
    for a in &p.abstractions {
        for v in &a.vars {
            for kind in kinds {
                if *kind == ReplacementKind::SameVariable {
                    let instances = find_variable_instances(p, a, v)?;
                    for w in same_variable_matches(p, a, v, &instances)? {
                        out.push(dearg_with_definition(p, a, v, SExpr::sym(w))?);
                    }
                } else if let Some(candidate) = deargument(*kind, p, a, v)? {
                    out.push(candidate);
                }
            }
        }
    }
    Ok(out)
}
