//! Program representation: abstractions, programs, scored programs, program
//! size and prior, desugaring, Gaussian-parameter substitution, and the
//! forward sampler that turns a program into random trees.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::sexpr::{
    self, function_index, is_variable_symbol, sexpr_size, transform_sexpr, SExpr, LAMBDA,
};
use crate::treedom::{expression_to_tree, Tree, TreeError};

/// The fixed project PRNG: ChaCha with 8 rounds, seeded explicitly wherever
/// randomness appears. Same seed, same stream, on every platform.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A named function: `F<n>` with ordered parameters and an s-expression body.
#[derive(Clone, Debug, PartialEq)]
pub struct Abstraction {
    pub name: String,
    pub vars: Vec<String>,
    pub body: SExpr,
}

impl Abstraction {
    pub fn new(name: impl Into<String>, vars: Vec<String>, body: SExpr) -> Abstraction {
        Abstraction { name: name.into(), vars, body }
    }
}

/// A generative model: a list of abstractions plus a zero-argument λ body.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub abstractions: Vec<Abstraction>,
    pub body: SExpr,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("duplicate abstraction name {0}")]
    DuplicateAbstraction(String),
    #[error("duplicate parameter {var} in abstraction {name}")]
    DuplicateParameter { name: String, var: String },
    #[error("program body must be a zero-argument λ form, found `{0}`")]
    BadBody(String),
    #[error("no abstraction named {0}")]
    UnknownAbstraction(String),
    #[error("application of {name} has {got} arguments, expected {expected}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error("unbound variable {var} in {context}")]
    UnboundVariable { var: String, context: String },
    #[error("gaussian call with arity other than 2: `{0}`")]
    GaussianArity(String),
    #[error("uniform-choice with zero alternatives")]
    EmptyChoice,
    #[error("not a program form: `{0}`")]
    NotAProgram(String),
}

impl Program {
    pub fn new(abstractions: Vec<Abstraction>, body: SExpr) -> Program {
        Program { abstractions, body }
    }

    pub fn abstraction(&self, name: &str) -> Option<&Abstraction> {
        self.abstractions.iter().find(|a| a.name == name)
    }

    /// Bodies that transformations operate on: every abstraction body plus
    /// the program body, in that order.
    pub fn bodies(&self) -> impl Iterator<Item = &SExpr> {
        self.abstractions.iter().map(|a| &a.body).chain(std::iter::once(&self.body))
    }

    fn map_bodies(&self, f: impl Fn(&SExpr) -> SExpr) -> Program {
        Program {
            abstractions: self
                .abstractions
                .iter()
                .map(|a| Abstraction::new(a.name.clone(), a.vars.clone(), f(&a.body)))
                .collect(),
            body: f(&self.body),
        }
    }

    /// Check the structural invariants: unique names, distinct parameters,
    /// a zero-argument λ body, matching arity at every application, and no
    /// unbound variables.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, a) in self.abstractions.iter().enumerate() {
            if self.abstractions[..i].iter().any(|b| b.name == a.name) {
                return Err(ModelError::DuplicateAbstraction(a.name.clone()));
            }
            for (j, v) in a.vars.iter().enumerate() {
                if a.vars[..j].contains(v) {
                    return Err(ModelError::DuplicateParameter {
                        name: a.name.clone(),
                        var: v.clone(),
                    });
                }
            }
        }
        if !is_thunk(&self.body) {
            return Err(ModelError::BadBody(self.body.to_string()));
        }
        for a in &self.abstractions {
            self.check_expr(&a.body, &mut a.vars.clone(), &a.name)?;
        }
        self.check_expr(&self.body, &mut Vec::new(), "the program body")?;
        Ok(())
    }

    fn check_expr(&self, e: &SExpr, bound: &mut Vec<String>, context: &str) -> Result<(), ModelError> {
        match e {
            SExpr::Sym(s) => {
                if is_variable_symbol(e) && !bound.iter().any(|b| b == s) {
                    return Err(ModelError::UnboundVariable {
                        var: s.clone(),
                        context: context.to_string(),
                    });
                }
                Ok(())
            }
            SExpr::Num(_) => Ok(()),
            SExpr::List(items) => {
                if let Some(head) = e.head() {
                    if head == LAMBDA && items.len() == 3 {
                        let binders: Vec<String> = items[1]
                            .as_list()
                            .map(|bs| bs.iter().filter_map(|b| b.as_sym().map(String::from)).collect())
                            .unwrap_or_default();
                        let depth = bound.len();
                        bound.extend(binders);
                        self.check_expr(&items[2], bound, context)?;
                        bound.truncate(depth);
                        return Ok(());
                    }
                    if function_index(head).is_some() {
                        if let Some(a) = self.abstraction(head) {
                            if items.len() - 1 != a.vars.len() {
                                return Err(ModelError::ArityMismatch {
                                    name: head.to_string(),
                                    expected: a.vars.len(),
                                    got: items.len() - 1,
                                });
                            }
                        } else {
                            return Err(ModelError::UnknownAbstraction(head.to_string()));
                        }
                    }
                }
                for item in items {
                    self.check_expr(item, bound, context)?;
                }
                Ok(())
            }
        }
    }
}

fn is_thunk(e: &SExpr) -> bool {
    match e.as_list() {
        Some(items) => {
            items.len() == 3
                && items[0].as_sym() == Some(LAMBDA)
                && items[1].as_list().map_or(false, |b| b.is_empty())
        }
        None => false,
    }
}

/// A generator whose fresh names cannot collide with any symbol already in
/// the program, including abstraction names and parameters.
pub fn generator_for_program(p: &Program) -> sexpr::SymbolGenerator {
    let mut gen = sexpr::SymbolGenerator::for_exprs(p.bodies());
    for a in &p.abstractions {
        gen.observe(&SExpr::sym(a.name.clone()));
        for v in &a.vars {
            gen.observe(&SExpr::sym(v.clone()));
        }
    }
    gen
}

/// Number of atoms across the abstraction bodies and the program body.
pub fn program_size(p: &Program) -> usize {
    p.bodies().map(sexpr_size).sum()
}

/// Unnormalized log prior: −alpha × size. Only differences are meaningful.
pub fn log_prior(p: &Program, alpha: f64) -> f64 {
    -(alpha * program_size(p) as f64)
}

/// A program plus cached scores, carried through search so likelihoods of
/// semantics-preserving transforms can be reused.
#[derive(Clone, Debug)]
pub struct ScoredProgram {
    pub program: Program,
    pub posterior: f64,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub semantics_preserved: bool,
}

impl ScoredProgram {
    pub fn new(program: Program, log_prior: f64, log_likelihood: f64, semantics_preserved: bool) -> Self {
        ScoredProgram {
            program,
            posterior: log_prior + log_likelihood,
            log_likelihood,
            log_prior,
            semantics_preserved,
        }
    }

    /// Wrap a transformed program, inheriting the parent's scores until it
    /// is rescored.
    pub fn from_transform(parent: &ScoredProgram, program: Program, semantics_preserved: bool) -> Self {
        ScoredProgram {
            program,
            posterior: parent.posterior,
            log_likelihood: parent.log_likelihood,
            log_prior: parent.log_prior,
            semantics_preserved,
        }
    }

    pub fn size(&self) -> usize {
        program_size(&self.program)
    }
}

/// Rewrite every `(uniform-choice e1 ... en)` into
/// `((uniform-draw (list (λ () e1) ... (λ () en))))`, iterating until no
/// sugared form remains (emitted thunks are re-scanned).
pub fn desugar(p: &Program) -> Result<Program, ModelError> {
    for body in p.bodies() {
        for sub in sexpr::all_subexprs(body) {
            if sub.is_call_of("uniform-choice") && sub.as_list().unwrap().len() == 1 {
                return Err(ModelError::EmptyChoice);
            }
        }
    }
    let step = |e: &SExpr| {
        transform_sexpr(
            &|s| s.is_call_of("uniform-choice"),
            &|s| {
                let alts = &s.as_list().unwrap()[1..];
                let thunks = alts
                    .iter()
                    .map(|a| SExpr::list(vec![SExpr::sym(LAMBDA), SExpr::list(vec![]), a.clone()]))
                    .collect::<Vec<_>>();
                let mut list_form = vec![SExpr::sym("list")];
                list_form.extend(thunks);
                SExpr::list(vec![SExpr::list(vec![
                    SExpr::sym("uniform-draw"),
                    SExpr::list(list_form),
                ])])
            },
            e,
        )
    };
    let has_sugar =
        |e: &SExpr| sexpr::all_subexprs(e).iter().any(|s| s.is_call_of("uniform-choice"));
    let mut out = p.clone();
    while out.bodies().any(has_sugar) {
        out = out.map_bodies(step);
    }
    Ok(out)
}

/// Rewrite every `(gaussian m s)` into the inert marker
/// `(gaussian-parameters m s)` so scoring sees the parameters instead of a
/// sampled value.
pub fn replace_gaussian(p: &Program) -> Result<Program, ModelError> {
    for body in p.bodies() {
        for sub in sexpr::all_subexprs(body) {
            if sub.is_call_of("gaussian") && sub.as_list().unwrap().len() != 3 {
                return Err(ModelError::GaussianArity(sub.to_string()));
            }
        }
    }
    Ok(p.map_bodies(|e| {
        transform_sexpr(
            &|s| s.is_call_of("gaussian"),
            &|s| {
                let mut items = s.as_list().unwrap().to_vec();
                items[0] = SExpr::sym("gaussian-parameters");
                SExpr::List(items)
            },
            e,
        )
    }))
}

/// Replace the abstraction with the same name as `a`.
pub fn replace_abstraction(p: &Program, a: Abstraction) -> Result<Program, ModelError> {
    let mut out = p.clone();
    match out.abstractions.iter_mut().find(|b| b.name == a.name) {
        Some(slot) => {
            *slot = a;
            Ok(out)
        }
        None => Err(ModelError::UnknownAbstraction(a.name)),
    }
}

// ---------------------------------------------------------------------------
// Program text formats
// ---------------------------------------------------------------------------

/// Constructor form: `(program ((abstraction F1 (V1 ...) body) ...) body)`.
pub fn print_constructor(p: &Program) -> String {
    let abstractions = p
        .abstractions
        .iter()
        .map(|a| {
            SExpr::list(vec![
                SExpr::sym("abstraction"),
                SExpr::sym(a.name.clone()),
                SExpr::list(a.vars.iter().map(|v| SExpr::sym(v.clone())).collect()),
                a.body.clone(),
            ])
        })
        .collect();
    SExpr::list(vec![SExpr::sym("program"), SExpr::list(abstractions), p.body.clone()]).to_string()
}

/// Sugared form: `(begin (define (F1 V1 ...) body) ... body)`, or the bare
/// body when there are no abstractions.
pub fn print_sugared(p: &Program) -> String {
    if p.abstractions.is_empty() {
        return p.body.to_string();
    }
    let mut items = vec![SExpr::sym("begin")];
    for a in &p.abstractions {
        let mut header = vec![SExpr::sym(a.name.clone())];
        header.extend(a.vars.iter().map(|v| SExpr::sym(v.clone())));
        items.push(SExpr::list(vec![
            SExpr::sym("define"),
            SExpr::list(header),
            a.body.clone(),
        ]));
    }
    items.push(p.body.clone());
    SExpr::list(items).to_string()
}

fn abstraction_from_parts(name: &SExpr, vars: &[SExpr], body: SExpr) -> Result<Abstraction, ModelError> {
    let name = name
        .as_sym()
        .ok_or_else(|| ModelError::NotAProgram(name.to_string()))?
        .to_string();
    let vars = vars
        .iter()
        .map(|v| v.as_sym().map(String::from).ok_or_else(|| ModelError::NotAProgram(v.to_string())))
        .collect::<Result<_, _>>()?;
    Ok(Abstraction { name, vars, body })
}

fn parse_define(items: &[SExpr]) -> Result<Abstraction, ModelError> {
    // (define (name vars...) body) or (define name (λ (vars...) body))
    if items.len() != 3 {
        return Err(ModelError::NotAProgram(SExpr::list(items.to_vec()).to_string()));
    }
    if let Some(header) = items[1].as_list() {
        if header.is_empty() {
            return Err(ModelError::NotAProgram(items[1].to_string()));
        }
        return abstraction_from_parts(&header[0], &header[1..], items[2].clone());
    }
    if let Some(lam) = items[2].as_list() {
        if lam.len() == 3 && lam[0].as_sym() == Some(LAMBDA) {
            let vars = lam[1].as_list().ok_or_else(|| ModelError::NotAProgram(lam[1].to_string()))?;
            return abstraction_from_parts(&items[1], vars, lam[2].clone());
        }
    }
    Err(ModelError::NotAProgram(SExpr::list(items.to_vec()).to_string()))
}

/// Read a program from any accepted syntax: the `(program ...)` constructor
/// form, the sugared `(begin (define ...) ... body)` form, or a bare body.
pub fn program_from_sexpr(e: &SExpr) -> Result<Program, ModelError> {
    match e.head() {
        Some("program") => {
            let items = e.as_list().unwrap();
            if items.len() != 3 {
                return Err(ModelError::NotAProgram(e.to_string()));
            }
            let abs_list = items[1].as_list().ok_or_else(|| ModelError::NotAProgram(e.to_string()))?;
            let abstractions = abs_list
                .iter()
                .map(|a| {
                    let parts = a.as_list().ok_or_else(|| ModelError::NotAProgram(a.to_string()))?;
                    if parts.len() != 4 || parts[0].as_sym() != Some("abstraction") {
                        return Err(ModelError::NotAProgram(a.to_string()));
                    }
                    let vars = parts[2].as_list().ok_or_else(|| ModelError::NotAProgram(a.to_string()))?;
                    abstraction_from_parts(&parts[1], vars, parts[3].clone())
                })
                .collect::<Result<_, _>>()?;
            Ok(Program::new(abstractions, items[2].clone()))
        }
        Some("begin") => {
            let items = e.as_list().unwrap();
            if items.len() < 2 {
                return Err(ModelError::NotAProgram(e.to_string()));
            }
            let abstractions = items[1..items.len() - 1]
                .iter()
                .map(|d| match d.head() {
                    Some("define") => parse_define(d.as_list().unwrap()),
                    _ => Err(ModelError::NotAProgram(d.to_string())),
                })
                .collect::<Result<_, _>>()?;
            Ok(Program::new(abstractions, items[items.len() - 1].clone()))
        }
        _ => Ok(Program::new(Vec::new(), e.clone())),
    }
}

pub fn parse_program(text: &str) -> Result<Program, ModelError> {
    let e = sexpr::parse(text).map_err(|e| ModelError::NotAProgram(e.to_string()))?;
    program_from_sexpr(&e)
}

// ---------------------------------------------------------------------------
// Forward sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SampleLimits {
    /// Cap on constructed nodes; exceeding it is a nontermination error.
    pub max_nodes: usize,
    pub max_steps: u64,
}

impl Default for SampleLimits {
    fn default() -> Self {
        SampleLimits { max_nodes: 10_000, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("{name} applied to {got} arguments, expected {expected}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("cannot evaluate `{0}`")]
    BadForm(String),
    #[error("evaluation did not terminate within the {0} budget")]
    Nontermination(&'static str),
    #[error("flip probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("sampled value is not a tree: {0}")]
    NotATree(String),
}

// Recursion guard for the substitution evaluator; keeps worst-case stack use
// well under the default thread stack.
const MAX_EVAL_DEPTH: usize = 1_000;

struct Sampler<'a, R: rand::Rng> {
    prog: &'a Program,
    rng: &'a mut R,
    limits: SampleLimits,
    nodes: usize,
    steps: u64,
    depth: usize,
}

/// Capture-aware substitution: λ forms that rebind a substituted name shadow it.
fn substitute(e: &SExpr, bindings: &[(String, SExpr)]) -> SExpr {
    match e {
        SExpr::Sym(s) => bindings
            .iter()
            .find(|(name, _)| name == s)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| e.clone()),
        SExpr::Num(_) => e.clone(),
        SExpr::List(items) => {
            if items.len() == 3 && items[0].as_sym() == Some(LAMBDA) {
                if let Some(binders) = items[1].as_list() {
                    let shadowed: Vec<&str> = binders.iter().filter_map(SExpr::as_sym).collect();
                    let kept: Vec<(String, SExpr)> = bindings
                        .iter()
                        .filter(|(name, _)| !shadowed.contains(&name.as_str()))
                        .cloned()
                        .collect();
                    return SExpr::list(vec![
                        items[0].clone(),
                        items[1].clone(),
                        substitute(&items[2], &kept),
                    ]);
                }
            }
            SExpr::List(items.iter().map(|i| substitute(i, bindings)).collect())
        }
    }
}

impl<'a, R: rand::Rng> Sampler<'a, R> {
    /// Already-evaluated expressions pass through untouched, so substituted
    /// values are never re-evaluated (or re-counted).
    fn is_value(&self, e: &SExpr) -> bool {
        match e {
            SExpr::Num(_) => true,
            SExpr::Sym(_) => !is_variable_symbol(e),
            SExpr::List(items) => {
                if items.is_empty() {
                    return true;
                }
                match items[0].as_sym() {
                    Some(LAMBDA) => true,
                    Some(h)
                        if matches!(
                            h,
                            "if" | "flip" | "gaussian" | "uniform-choice" | "uniform-draw"
                        ) || self.prog.abstraction(h).is_some() =>
                    {
                        false
                    }
                    Some(_) => items[1..].iter().all(|i| self.is_value(i)),
                    None => false,
                }
            }
        }
    }

    fn eval(&mut self, e: &SExpr) -> Result<SExpr, EvalError> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            return Err(EvalError::Nontermination("step"));
        }
        self.depth += 1;
        if self.depth > MAX_EVAL_DEPTH {
            return Err(EvalError::Nontermination("recursion depth"));
        }
        let result = self.eval_inner(e);
        self.depth -= 1;
        result
    }

    fn eval_inner(&mut self, e: &SExpr) -> Result<SExpr, EvalError> {
        if self.is_value(e) {
            return Ok(e.clone());
        }
        let items = match e {
            SExpr::Sym(s) => return Err(EvalError::Unbound(s.clone())),
            SExpr::Num(_) => return Ok(e.clone()),
            SExpr::List(items) => items,
        };
        match items[0].as_sym() {
            Some("if") => {
                if items.len() != 4 {
                    return Err(EvalError::BadForm(e.to_string()));
                }
                let cond = self.eval(&items[1])?;
                match cond.as_sym() {
                    Some("true") => self.eval(&items[2]),
                    Some("false") => self.eval(&items[3]),
                    _ => Err(EvalError::BadForm(e.to_string())),
                }
            }
            Some("flip") => {
                let p = match items.len() {
                    1 => 0.5,
                    2 => self
                        .eval(&items[1])?
                        .as_num()
                        .ok_or_else(|| EvalError::BadForm(e.to_string()))?
                        .value(),
                    _ => return Err(EvalError::BadForm(e.to_string())),
                };
                if !(0.0..=1.0).contains(&p) {
                    return Err(EvalError::BadProbability(p));
                }
                let heads = self.rng.gen::<f64>() < p;
                Ok(SExpr::sym(if heads { "true" } else { "false" }))
            }
            Some("gaussian") => {
                if items.len() != 3 {
                    return Err(EvalError::BadForm(e.to_string()));
                }
                let mean = self.num_arg(&items[1], e)?;
                let sd = self.num_arg(&items[2], e)?;
                if sd == 0.0 {
                    return Ok(SExpr::real(mean));
                }
                let normal =
                    Normal::new(mean, sd.abs()).map_err(|_| EvalError::BadForm(e.to_string()))?;
                Ok(SExpr::real(normal.sample(self.rng)))
            }
            Some("uniform-choice") => {
                let n = items.len() - 1;
                if n == 0 {
                    return Err(EvalError::BadForm(e.to_string()));
                }
                let i = self.rng.gen_range(0..n);
                self.eval(&items[1 + i])
            }
            Some("uniform-draw") => {
                if items.len() != 2 {
                    return Err(EvalError::BadForm(e.to_string()));
                }
                let lst = self.eval(&items[1])?;
                let elems = match lst.as_list() {
                    Some(l) if l.first().and_then(SExpr::as_sym) == Some("list") && l.len() > 1 => {
                        &l[1..]
                    }
                    _ => return Err(EvalError::BadForm(e.to_string())),
                };
                let i = self.rng.gen_range(0..elems.len());
                Ok(elems[i].clone())
            }
            Some(name) if self.prog.abstraction(name).is_some() => {
                let abs = self.prog.abstraction(name).unwrap().clone();
                let args = self.eval_args(&items[1..])?;
                if args.len() != abs.vars.len() {
                    return Err(EvalError::Arity {
                        name: name.to_string(),
                        expected: abs.vars.len(),
                        got: args.len(),
                    });
                }
                let bindings: Vec<(String, SExpr)> =
                    abs.vars.iter().cloned().zip(args).collect();
                self.eval(&substitute(&abs.body, &bindings))
            }
            Some(_) => {
                // Constructor-style form: evaluate the elements and rebuild.
                if items[0].as_sym() == Some("node") {
                    self.nodes += 1;
                    if self.nodes > self.limits.max_nodes {
                        return Err(EvalError::Nontermination("node"));
                    }
                }
                let mut out = Vec::with_capacity(items.len());
                out.push(items[0].clone());
                out.extend(self.eval_args(&items[1..])?);
                Ok(SExpr::List(out))
            }
            None => {
                // Computed operator: ((λ (v...) body) args...) and thunk calls.
                let op = self.eval(&items[0])?;
                let lam = op.as_list().filter(|l| {
                    l.len() == 3 && l[0].as_sym() == Some(LAMBDA) && l[1].as_list().is_some()
                });
                let Some(lam) = lam else {
                    return Err(EvalError::BadForm(e.to_string()));
                };
                let params: Vec<String> = lam[1]
                    .as_list()
                    .unwrap()
                    .iter()
                    .filter_map(|s| s.as_sym().map(String::from))
                    .collect();
                let args = self.eval_args(&items[1..])?;
                if args.len() != params.len() {
                    return Err(EvalError::Arity {
                        name: "λ".to_string(),
                        expected: params.len(),
                        got: args.len(),
                    });
                }
                let bindings: Vec<(String, SExpr)> = params.into_iter().zip(args).collect();
                self.eval(&substitute(&lam[2], &bindings))
            }
        }
    }

    fn eval_args(&mut self, args: &[SExpr]) -> Result<Vec<SExpr>, EvalError> {
        args.iter().map(|a| self.eval(a)).collect()
    }

    fn num_arg(&mut self, e: &SExpr, context: &SExpr) -> Result<f64, EvalError> {
        self.eval(e)?
            .as_num()
            .map(|n| n.value())
            .ok_or_else(|| EvalError::BadForm(context.to_string()))
    }
}

/// Evaluate the program once, returning the raw value expression.
pub fn sample_value_with_limits(
    p: &Program,
    rng: &mut Rng,
    limits: SampleLimits,
) -> Result<SExpr, EvalError> {
    if !is_thunk(&p.body) {
        return Err(EvalError::BadForm(p.body.to_string()));
    }
    let inner = p.body.as_list().unwrap()[2].clone();
    let mut sampler = Sampler { prog: p, rng, limits, nodes: 0, steps: 0, depth: 0 };
    sampler.eval(&inner)
}

pub fn sample_value(p: &Program, rng: &mut Rng) -> Result<SExpr, EvalError> {
    sample_value_with_limits(p, rng, SampleLimits::default())
}

/// Evaluate the program once, producing a tree.
pub fn sample(p: &Program, rng: &mut Rng) -> Result<Tree, EvalError> {
    sample_with_limits(p, rng, SampleLimits::default())
}

pub fn sample_with_limits(p: &Program, rng: &mut Rng, limits: SampleLimits) -> Result<Tree, EvalError> {
    let value = sample_value_with_limits(p, rng, limits)?;
    expression_to_tree(&value).map_err(|e| match e {
        TreeError::NotLiteral(s) | TreeError::Malformed { found: s, .. } => EvalError::NotATree(s),
        other => EvalError::NotATree(other.to_string()),
    })
}

/// Draw `n` samples with per-index derived seeds, so results do not depend
/// on scheduling. Runs in parallel when the `parallel` feature is enabled.
pub fn sample_many(p: &Program, n: usize, seed: u64) -> Result<Vec<Tree>, EvalError> {
    let one = |i: usize| {
        let mut rng = rng_from_seed(seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        sample(p, &mut rng)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;
    use crate::treedom::{incorporate_data, IncorporationMode, Tree};

    fn prog(text: &str) -> Program {
        parse_program(text).unwrap()
    }

    #[test]
    fn size_counts_bodies_only() {
        let p = prog("(λ () (+ V1 V2))");
        assert_eq!(program_size(&p), 4);
    }

    #[test]
    fn size_matches_independent_atom_count() {
        // Oracle: count whitespace-separated tokens, ignoring parentheses.
        fn count_atoms_text(s: &str) -> usize {
            s.replace(['(', ')'], " ").split_whitespace().count()
        }
        let listing = "(program \
            ((abstraction F1 (V1 V2) (data (color (gaussian V1 25)) (size V2)))) \
            (uniform-choice \
             (node (F1 70 1) (node (F1 37 0.3) (node (F1 213 0.3)) (node (F1 207 0.3)) (node (F1 211 0.3)))) \
             (node (F1 43 1) (node (F1 47 0.1) (node (F1 33 0.3) (node (F1 220 0.3)) (node (F1 224 0.3)) (node (F1 207 0.3)))))))";
        let p = prog(listing);
        let body_text = "(data (color (gaussian V1 25)) (size V2))";
        let main_text = listing.split_once("(uniform-choice").unwrap().1;
        let oracle = count_atoms_text(body_text) + count_atoms_text(main_text) + 1;
        assert_eq!(program_size(&p), oracle);
        assert_eq!(program_size(&p), 52);
    }

    #[test]
    fn incorporated_size_matches_oracle() {
        let p = incorporate_data(&crate::fixtures::fig2_trees(), IncorporationMode::GaussianColors)
            .unwrap();
        let text = print_sugared(&p);
        let oracle = text.replace(['(', ')'], " ").split_whitespace().count();
        assert_eq!(program_size(&p), oracle);
    }

    #[test]
    fn prior_is_negative_alpha_times_size() {
        let p = prog("(λ () (a b c d e f g h i))");
        assert_eq!(program_size(&p), 10);
        let ten = Program::new(vec![], parse("(a b c d e f g h i j)").unwrap());
        assert_eq!(log_prior(&ten, 1.0), -10.0);
        assert_eq!(log_prior(&ten, 3.0), -30.0);
        let empty = Program::new(vec![], parse("()").unwrap());
        assert_eq!(log_prior(&empty, 7.0), 0.0);
    }

    #[test]
    fn desugar_rewrites_uniform_choice() {
        let p = prog("(λ () (uniform-choice a b))");
        let d = desugar(&p).unwrap();
        assert_eq!(
            d.body.to_string(),
            "(λ () ((uniform-draw (list (λ () a) (λ () b)))))"
        );
    }

    #[test]
    fn desugar_without_sugar_is_identity() {
        let p = prog("(λ () (node (data (color 1) (size 2))))");
        assert_eq!(desugar(&p).unwrap(), p);
    }

    #[test]
    fn desugar_reaches_nested_choices() {
        let p = prog("(λ () (uniform-choice (uniform-choice a b) c))");
        let d = desugar(&p).unwrap();
        let text = d.body.to_string();
        assert!(!text.contains("uniform-choice"));
        assert_eq!(text.matches("uniform-draw").count(), 2);
    }

    #[test]
    fn desugar_rejects_empty_choice() {
        let p = prog("(λ () (uniform-choice))");
        assert_eq!(desugar(&p).unwrap_err(), ModelError::EmptyChoice);
    }

    #[test]
    fn replace_gaussian_marks_parameters() {
        let p = prog("(λ () (color (gaussian 70 25)))");
        let r = replace_gaussian(&p).unwrap();
        assert_eq!(r.body.to_string(), "(λ () (color (gaussian-parameters 70 25)))");

        let no_gauss = prog("(λ () (color 3))");
        assert_eq!(replace_gaussian(&no_gauss).unwrap(), no_gauss);

        let in_abs = prog("(begin (define (F1 V1) (gaussian V1 25)) (λ () (F1 3)))");
        let r = replace_gaussian(&in_abs).unwrap();
        assert_eq!(r.abstractions[0].body.to_string(), "(gaussian-parameters V1 25)");
    }

    #[test]
    fn replace_gaussian_rejects_bad_arity() {
        let p = prog("(λ () (gaussian 43))");
        assert!(matches!(replace_gaussian(&p), Err(ModelError::GaussianArity(_))));
    }

    #[test]
    fn desugar_and_replace_gaussian_commute() {
        let p = prog("(λ () (uniform-choice (gaussian 1 2) (node (data (color (gaussian 3 4)) (size 1)))))");
        let a = replace_gaussian(&desugar(&p).unwrap()).unwrap();
        let b = desugar(&replace_gaussian(&p).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(program_size(&desugar(&p).unwrap()) >= program_size(&p));
    }

    #[test]
    fn replace_abstraction_changes_only_target() {
        let p = prog("(begin (define (F1 V1) (node V1)) (define (F2) (F1 (F2))) (λ () (F1 a)))");
        let swapped = replace_abstraction(
            &p,
            Abstraction::new("F2", vec![], parse("(F1 b)").unwrap()),
        )
        .unwrap();
        assert_eq!(swapped.abstractions[0], p.abstractions[0]);
        assert_eq!(swapped.abstractions[1].body.to_string(), "(F1 b)");
        assert_eq!(swapped.body, p.body);

        let same = replace_abstraction(&p, p.abstractions[0].clone()).unwrap();
        assert_eq!(same, p);

        let missing = replace_abstraction(&p, Abstraction::new("F9", vec![], parse("x").unwrap()));
        assert!(missing.is_err());
    }

    #[test]
    fn validate_catches_structural_errors() {
        assert!(prog("(λ () (node (data (color 1) (size 1))))").validate().is_ok());
        assert!(prog("(begin (define (F1 V1) (node V1)) (λ () (F1 a)))").validate().is_ok());

        // arity mismatch
        assert!(prog("(begin (define (F1 V1) (node V1)) (λ () (F1 a b)))").validate().is_err());
        // unbound variable
        assert!(prog("(begin (define (F1) (node V9)) (λ () (F1)))").validate().is_err());
        // inner λ binders count as bound
        assert!(prog("(begin (define (F1) ((λ (V2) (node V2)) a)) (λ () (F1)))")
            .validate()
            .is_ok());
        // body must be a thunk
        assert!(prog("(node a)").validate().is_err());
        // unknown abstraction
        assert!(prog("(λ () (F4))").validate().is_err());
    }

    #[test]
    fn program_forms_roundtrip() {
        let text = "(begin (define (F1 V1) (node (data (color (gaussian V1 25)) (size 0.3)))) (λ () (uniform-choice (F1 1) (F1 2))))";
        let p = prog(text);
        assert_eq!(print_sugared(&p), text);
        let back = prog(&print_constructor(&p));
        assert_eq!(back, p);

        // λ-style define
        let q = prog("(begin (define F1 (λ (V1) (node V1))) (λ () (F1 a)))");
        assert_eq!(q.abstractions[0].vars, vec!["V1"]);

        // bare body
        let bare = prog("(λ () (node (data (color 1) (size 1))))");
        assert!(bare.abstractions.is_empty());
        assert_eq!(print_sugared(&bare), "(λ () (node (data (color 1) (size 1))))");
    }

    #[test]
    fn sampling_a_point_program_returns_the_datum() {
        let leaf = Tree::leaf(1.0, 2.0);
        let p = incorporate_data(std::slice::from_ref(&leaf), IncorporationMode::Deterministic)
            .unwrap();
        for seed in 0..5 {
            let mut rng = rng_from_seed(seed);
            assert_eq!(sample(&p, &mut rng).unwrap(), leaf);
        }
    }

    #[test]
    fn flip_one_always_takes_the_consequent() {
        let p = prog("(λ () (if (flip 1) (node (data (color 0) (size 1))) (node (data (color 9) (size 9)))))");
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            assert_eq!(sample(&p, &mut rng).unwrap(), Tree::leaf(0.0, 1.0));
        }
    }

    #[test]
    fn recursive_chain_length_is_geometric() {
        // (F1) builds a chain; recursion continues with probability 1/2, so
        // the expected node count is 2.
        let p = prog(
            "(begin (define (F1) ((λ (V1) V1) \
             (if (flip 1/2) (node (data (color 0) (size 1)) (F1)) (node (data (color 0) (size 1)))))) \
             (λ () (F1)))",
        );
        let n = 10_000;
        let mut total = 0usize;
        for seed in 0..n {
            let mut rng = rng_from_seed(seed);
            total += sample(&p, &mut rng).unwrap().node_count();
        }
        let mean = total as f64 / n as f64;
        // geometric with success probability 1/2: mean 2, variance 2
        let se = (2.0f64 / n as f64).sqrt();
        assert!(
            (mean - 2.0).abs() < 3.0 * se,
            "sample mean {mean} outside 3 standard errors of 2"
        );
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = prog(
            "(λ () (uniform-choice (node (data (color (gaussian 10 25)) (size 1))) \
             (node (data (color (gaussian 90 25)) (size 2)))))",
        );
        let mut a = rng_from_seed(42);
        let mut b = rng_from_seed(42);
        for _ in 0..50 {
            assert_eq!(sample(&p, &mut a).unwrap(), sample(&p, &mut b).unwrap());
        }
    }

    #[test]
    fn runaway_recursion_hits_the_budget() {
        let p = prog("(begin (define (F1) (node (data (color 0) (size 1)) (F1))) (λ () (F1)))");
        let mut rng = rng_from_seed(0);
        let err = sample_with_limits(&p, &mut rng, SampleLimits { max_nodes: 100, max_steps: 1_000_000 });
        assert!(matches!(err, Err(EvalError::Nontermination(_))));
    }

    #[test]
    fn sampler_handles_desugared_programs() {
        let sugared = prog("(λ () (uniform-choice (node (data (color 1) (size 1))) (node (data (color 2) (size 1)))))");
        let desugared = desugar(&sugared).unwrap();
        let mut counts = [0usize; 2];
        for seed in 0..2000 {
            let mut rng = rng_from_seed(seed);
            let t = sample(&desugared, &mut rng).unwrap();
            counts[if t.color == 1.0 { 0 } else { 1 }] += 1;
        }
        assert!(counts[0] > 800 && counts[1] > 800, "both branches reachable: {counts:?}");
    }
}
