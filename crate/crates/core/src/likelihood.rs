//! Exact, target-directed likelihood: enumerate every discrete choice trace
//! that can yield each observed tree's structure, score continuous
//! attributes with Gaussian densities, and combine the distinct parses by
//! selective model averaging.
//!
//! The enumerator is an explicit-continuation machine with a backtracking
//! worklist, so deep stochastic recursions cost heap instead of stack.

use std::collections::BTreeMap;
use std::rc::Rc;

use thiserror::Error;

use crate::model::{desugar, log_prior, replace_gaussian, ModelError, Program};
use crate::sexpr::{is_variable_symbol, Num, SExpr, LAMBDA};
use crate::treedom::Tree;

/// Bounds on a single enumeration.
#[derive(Clone, Copy, Debug)]
pub struct EnumerationLimits {
    /// Cap on constructed nodes per trace. `None` means "the target's node
    /// count" and is only valid when enumerating against a target.
    pub max_nodes: Option<usize>,
    /// Cap on random choices per trace.
    pub max_choices: usize,
    /// Cap on completed traces per enumeration.
    pub max_traces: usize,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits { max_nodes: None, max_choices: 10_000, max_traces: 100_000 }
    }
}

/// One way of generating a tree: the ordered discrete choices and their
/// total log probability (the topology score).
#[derive(Clone, Debug, PartialEq)]
pub struct ParseTrace {
    /// `(choice site, outcome index)` pairs in encounter order.
    pub choices: Vec<(usize, usize)>,
    pub log_prob: f64,
}

/// An attribute slot in a generated tree: either an exact literal or the
/// parameters of the Gaussian it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Literal(Num),
    Gaussian { mean: f64, sd: f64 },
}

/// A generated tree with attribute slots instead of sampled values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterizedTree {
    pub color: Slot,
    pub size: Slot,
    pub children: Vec<ParameterizedTree>,
}

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("enumeration produced more than {0} traces; raise max_traces")]
    TooManyTraces(usize),
    #[error("enumeration exceeded the step budget")]
    StepBudget,
    #[error("enumeration without a target requires max_nodes")]
    MissingNodeBudget,
    #[error("cannot enumerate a continuous choice: `{0}`")]
    ContinuousChoice(String),
    #[error("flip probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Values and environments
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum Val {
    Num(Num),
    Sym(String),
    Bool(bool),
    GaussParams(f64, f64),
    Unit,
    /// Constructor-style form: head symbol plus evaluated elements.
    Form(String, Vec<Rc<Val>>),
    Closure(Rc<Vec<String>>, Rc<SExpr>, Env),
}

#[derive(Clone, Debug)]
struct Env(Option<Rc<EnvNode>>);

#[derive(Debug)]
struct EnvNode {
    name: String,
    val: Rc<Val>,
    parent: Env,
}

impl Env {
    fn empty() -> Env {
        Env(None)
    }

    fn bind(&self, name: String, val: Rc<Val>) -> Env {
        Env(Some(Rc::new(EnvNode { name, val, parent: self.clone() })))
    }

    fn lookup(&self, name: &str) -> Option<Rc<Val>> {
        let mut cur = &self.0;
        while let Some(node) = cur {
            if node.name == name {
                return Some(node.val.clone());
            }
            cur = &node.parent.0;
        }
        None
    }
}

// Environments can grow as deep as the recursion they were built under;
// unlink iteratively so dropping one never recurses.
impl Drop for EnvNode {
    fn drop(&mut self) {
        let mut parent = std::mem::replace(&mut self.parent, Env(None));
        while let Some(rc) = parent.0.take() {
            match Rc::try_unwrap(rc) {
                Ok(mut node) => parent = std::mem::replace(&mut node.parent, Env(None)),
                Err(_) => break,
            }
        }
    }
}

fn val_to_sexpr(v: &Val) -> SExpr {
    match v {
        Val::Num(n) => SExpr::Num(*n),
        Val::Sym(s) => SExpr::sym(s.clone()),
        Val::Bool(b) => SExpr::sym(if *b { "true" } else { "false" }),
        Val::GaussParams(m, s) => SExpr::list(vec![
            SExpr::sym("gaussian-parameters"),
            SExpr::real(*m),
            SExpr::real(*s),
        ]),
        Val::Unit => SExpr::list(vec![]),
        Val::Form(head, elems) => {
            let mut items = vec![SExpr::sym(head.clone())];
            items.extend(elems.iter().map(|e| val_to_sexpr(e)));
            SExpr::list(items)
        }
        Val::Closure(params, body, _) => SExpr::list(vec![
            SExpr::sym(LAMBDA),
            SExpr::list(params.iter().map(|p| SExpr::sym(p.clone())).collect()),
            (**body).clone(),
        ]),
    }
}

/// Does this value fit the shape of the target subtree at its position?
fn shape_matches(v: &Val, t: &Tree) -> bool {
    match v {
        Val::Form(head, elems) if head == "node" => {
            !elems.is_empty()
                && elems.len() - 1 == t.children.len()
                && elems[1..].iter().zip(&t.children).all(|(c, tc)| shape_matches(c, tc))
        }
        _ => false,
    }
}

fn admissible(v: &Val, cons: Option<&Tree>) -> bool {
    match cons {
        None => true,
        Some(t) => shape_matches(v, t),
    }
}

fn slot_from(v: &Val) -> Option<Slot> {
    match v {
        Val::Num(n) => Some(Slot::Literal(*n)),
        Val::GaussParams(m, s) => Some(Slot::Gaussian { mean: *m, sd: *s }),
        _ => None,
    }
}

fn attribute_slot(v: &Val, tag: &str) -> Option<Slot> {
    match v {
        Val::Form(head, elems) if head == tag && elems.len() == 1 => slot_from(&elems[0]),
        _ => None,
    }
}

/// Convert a completed value into a parameterized tree. `None` when some
/// slot is not a number or Gaussian marker; such a parse cannot explain any
/// observation and is dropped, exactly like a −∞ data score.
fn to_parameterized(v: &Val) -> Option<ParameterizedTree> {
    match v {
        Val::Form(head, elems) if head == "node" && !elems.is_empty() => {
            let (color, size) = match &*elems[0] {
                Val::Form(dhead, dparts) if dhead == "data" && dparts.len() == 2 => (
                    attribute_slot(&dparts[0], "color")?,
                    attribute_slot(&dparts[1], "size")?,
                ),
                _ => return None,
            };
            let children =
                elems[1..].iter().map(|c| to_parameterized(c)).collect::<Option<Vec<_>>>()?;
            Some(ParameterizedTree { color, size, children })
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// The enumerator machine
// ---------------------------------------------------------------------------

// Work bound across one enumeration, scaled with the trace budget: a
// legitimate enumeration does bounded work per completed trace, while a
// combinatorial blowup burns steps without completing and dies quickly.
fn step_budget(limits: &EnumerationLimits) -> u64 {
    4_000_000 + 128 * limits.max_traces as u64 + 400 * limits.max_choices as u64
}

type Cons<'p> = Option<&'p Tree>;

/// An expression either borrowed from the prepared program or owned by a
/// closure value.
#[derive(Clone, Debug)]
enum ERef<'p> {
    P(&'p SExpr),
    C(Rc<SExpr>),
}

impl<'p> ERef<'p> {
    fn get(&self) -> &SExpr {
        match self {
            ERef::P(e) => e,
            ERef::C(rc) => rc,
        }
    }

    /// The `idx`-th element of a list expression.
    fn element(&self, idx: usize) -> ERef<'p> {
        match self {
            ERef::P(e) => ERef::P(&e.as_list().expect("list expression")[idx]),
            ERef::C(rc) => ERef::C(Rc::new(rc.as_list().expect("list expression")[idx].clone())),
        }
    }
}

type Kont<'p> = Option<Rc<Frame<'p>>>;

#[derive(Debug)]
struct Frame<'p> {
    op: FrameOp<'p>,
    next: Kont<'p>,
}

// Continuation chains grow with recursion depth; unlink iteratively.
impl<'p> Drop for Frame<'p> {
    fn drop(&mut self) {
        let mut next = self.next.take();
        while let Some(rc) = next {
            match Rc::try_unwrap(rc) {
                Ok(mut f) => next = f.next.take(),
                Err(_) => break,
            }
        }
    }
}

/// What to do once the sequence in a [`FrameOp::Seq`] is fully evaluated.
#[derive(Clone, Debug)]
enum Done<'p> {
    /// Build a constructor form from the accumulated values.
    Form { head: Rc<str> },
    /// Apply a program abstraction to the accumulated arguments.
    CallAbs { vars: &'p [String], body: &'p SExpr, cons: Cons<'p> },
    /// Apply a closure to the accumulated arguments.
    CallClosure { params: Rc<Vec<String>>, body: Rc<SExpr>, cenv: Env, cons: Cons<'p> },
    /// Build a `gaussian-parameters` marker; both values must be numbers.
    GaussParams,
}

#[derive(Debug)]
enum FrameOp<'p> {
    /// Waiting on an `if` condition.
    IfBranch { then_e: ERef<'p>, else_e: ERef<'p>, env: Env, cons: Cons<'p> },
    /// Left-to-right evaluation of the elements `first..list.len()` of a
    /// list expression, with optional per-element target constraints.
    Seq {
        list: ERef<'p>,
        idx: usize,
        env: Env,
        child_cons: Option<Rc<Vec<Cons<'p>>>>,
        first: usize,
        acc: Vec<Rc<Val>>,
        done: Done<'p>,
    },
    /// Waiting on the list argument of `uniform-draw`.
    DrawnList { cons: Cons<'p> },
    /// Waiting on a computed operator; then evaluate the call's arguments.
    Operator { call: ERef<'p>, env: Env, cons: Cons<'p> },
}

#[derive(Debug)]
enum Task<'p> {
    Eval { e: ERef<'p>, env: Env, cons: Cons<'p>, k: Kont<'p> },
    Feed { v: Rc<Val>, k: Kont<'p> },
}

/// A deferred alternative of a choice point, with the path state to restore.
struct Pending<'p> {
    task: Task<'p>,
    trace_len: usize,
    nodes: usize,
    guaranteed: usize,
    outcome: usize,
    log_p: f64,
}

struct Machine<'p> {
    prog: &'p Program,
    max_steps: u64,
    /// Per-abstraction lower bounds on nodes constructed by one call.
    bounds: ConstructionBounds,
    node_budget: usize,
    max_choices: usize,
    max_traces: usize,
    trace: Vec<(usize, f64)>,
    nodes: usize,
    /// Nodes guaranteed by entered-but-unfinished constructing calls. Lets
    /// the machine cut a recursion spine as soon as no completion can fit
    /// the node budget, long before the choice budget runs out.
    guaranteed: usize,
    steps: u64,
    results: Vec<(ParseTrace, Rc<Val>)>,
    aborted: Option<LikelihoodError>,
}

/// Static lower bounds on node construction, used to cut recursion spines
/// as soon as no completion can fit the node budget.
///
/// An abstraction is *recursive* when it can reach itself through the call
/// graph. `min_new_nodes[i]` bounds the nodes constructed by one call to
/// abstraction `i`, counting callees but treating every call to a recursive
/// abstraction as free: those calls push their own guarantee when entered,
/// so the bounds of nested entries never overlap.
struct ConstructionBounds {
    recursive: Vec<bool>,
    min_new_nodes: Vec<usize>,
}

fn construction_bounds(p: &Program) -> ConstructionBounds {
    let n = p.abstractions.len();
    let index_of = |name: &str| p.abstractions.iter().position(|a| a.name == name);

    // direct call edges, then per-node reachability of itself
    let mut calls: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, a) in p.abstractions.iter().enumerate() {
        for sub in crate::sexpr::all_subexprs(&a.body) {
            if let Some(head) = sub.head() {
                if let Some(j) = index_of(head) {
                    if !calls[i].contains(&j) {
                        calls[i].push(j);
                    }
                }
            }
        }
    }
    let mut recursive = vec![false; n];
    for start in 0..n {
        let mut seen = vec![false; n];
        let mut stack = calls[start].clone();
        while let Some(j) = stack.pop() {
            if j == start {
                recursive[start] = true;
                break;
            }
            if !seen[j] {
                seen[j] = true;
                stack.extend(calls[j].iter().copied());
            }
        }
    }

    fn expr_cost(
        e: &SExpr,
        p: &Program,
        recursive: &[bool],
        memo: &mut [Option<usize>],
    ) -> usize {
        let Some(items) = e.as_list() else { return 0 };
        if items.is_empty() {
            return 0;
        }
        let elems =
            |from: usize, memo: &mut [Option<usize>]| -> usize {
                items[from..].iter().map(|i| expr_cost(i, p, recursive, memo)).sum()
            };
        match items[0].as_sym() {
            Some("node") => 1usize.saturating_add(elems(1, memo)),
            Some(LAMBDA) if items.len() == 3 => 0,
            Some("if") if items.len() == 4 => {
                expr_cost(&items[1], p, recursive, memo).saturating_add(
                    expr_cost(&items[2], p, recursive, memo)
                        .min(expr_cost(&items[3], p, recursive, memo)),
                )
            }
            Some("uniform-choice") => items[1..]
                .iter()
                .map(|i| expr_cost(i, p, recursive, memo))
                .min()
                .unwrap_or(0),
            Some(name) => {
                let callee = p
                    .abstractions
                    .iter()
                    .position(|a| a.name == name)
                    .map(|j| abstraction_cost(j, p, recursive, memo))
                    .unwrap_or(0);
                callee.saturating_add(elems(1, memo))
            }
            None => {
                let args = elems(1, memo);
                let op = &items[0];
                if let Some(lam) = op.as_list() {
                    if lam.len() == 3 && lam[0].as_sym() == Some(LAMBDA) {
                        return args.saturating_add(expr_cost(&lam[2], p, recursive, memo));
                    }
                    if lam.len() == 2 && lam[0].as_sym() == Some("uniform-draw") {
                        if let Some(list_form) = lam[1].as_list() {
                            if list_form.len() > 1 && list_form[0].as_sym() == Some("list") {
                                let thunk_min = list_form[1..]
                                    .iter()
                                    .map(|thunk| match thunk.as_list() {
                                        Some(t)
                                            if t.len() == 3
                                                && t[0].as_sym() == Some(LAMBDA) =>
                                        {
                                            expr_cost(&t[2], p, recursive, memo)
                                        }
                                        _ => 0,
                                    })
                                    .min()
                                    .unwrap_or(0);
                                return args.saturating_add(thunk_min);
                            }
                        }
                    }
                }
                args.saturating_add(expr_cost(op, p, recursive, memo))
            }
        }
    }

    fn abstraction_cost(
        j: usize,
        p: &Program,
        recursive: &[bool],
        memo: &mut [Option<usize>],
    ) -> usize {
        if recursive[j] {
            return 0; // accounted for at its own entry
        }
        if let Some(cost) = memo[j] {
            return cost;
        }
        // non-recursive abstractions form a DAG, so this terminates
        let cost = expr_cost(&p.abstractions[j].body, p, recursive, memo);
        memo[j] = Some(cost);
        cost
    }

    let mut memo = vec![None; n];
    let min_new_nodes = (0..n)
        .map(|i| expr_cost(&p.abstractions[i].body, p, &recursive, &mut memo))
        .collect();
    ConstructionBounds { recursive, min_new_nodes }
}

fn frame<'p>(op: FrameOp<'p>, next: Kont<'p>) -> Kont<'p> {
    Some(Rc::new(Frame { op, next }))
}

impl<'p> Machine<'p> {
    fn complete(&mut self, v: Rc<Val>) {
        if self.results.len() >= self.max_traces {
            self.aborted = Some(LikelihoodError::TooManyTraces(self.max_traces));
            return;
        }
        let log_prob: f64 = self.trace.iter().map(|(_, lp)| lp).sum();
        let choices = self.trace.iter().enumerate().map(|(site, (o, _))| (site, *o)).collect();
        self.results.push((ParseTrace { choices, log_prob }, v));
    }

    /// Queue the alternatives of one choice point, first-outcome on top.
    fn offer(&mut self, pending: &mut Vec<Pending<'p>>, mut alts: Vec<(usize, f64, Task<'p>)>) {
        if self.trace.len() >= self.max_choices {
            return; // per-trace choice budget exhausted: prune all branches
        }
        let trace_len = self.trace.len();
        let nodes = self.nodes;
        let guaranteed = self.guaranteed;
        alts.reverse();
        for (outcome, log_p, task) in alts {
            pending.push(Pending { task, trace_len, nodes, guaranteed, outcome, log_p });
        }
    }

    fn run(&mut self, root: Task<'p>) {
        let mut pending: Vec<Pending<'p>> = Vec::new();
        let mut task = Some(root);
        loop {
            if self.aborted.is_some() {
                return;
            }
            match task.take() {
                Some(t) => task = self.step(t, &mut pending),
                None => match pending.pop() {
                    Some(p) => {
                        self.trace.truncate(p.trace_len);
                        self.nodes = p.nodes;
                        self.guaranteed = p.guaranteed;
                        self.trace.push((p.outcome, p.log_p));
                        task = Some(p.task);
                    }
                    None => return,
                },
            }
        }
    }

    fn step(&mut self, task: Task<'p>, pending: &mut Vec<Pending<'p>>) -> Option<Task<'p>> {
        self.steps += 1;
        if self.steps > self.max_steps {
            self.aborted = Some(LikelihoodError::StepBudget);
            return None;
        }
        match task {
            Task::Feed { v, k } => self.feed(v, k, pending),
            Task::Eval { e, env, cons, k } => self.eval(e, env, cons, k, pending),
        }
    }

    fn feed(
        &mut self,
        v: Rc<Val>,
        k: Kont<'p>,
        pending: &mut Vec<Pending<'p>>,
    ) -> Option<Task<'p>> {
        let Some(fr) = k else {
            self.complete(v);
            return None;
        };
        match &fr.op {
            FrameOp::IfBranch { then_e, else_e, env, cons } => match &*v {
                Val::Bool(true) => Some(Task::Eval {
                    e: then_e.clone(),
                    env: env.clone(),
                    cons: *cons,
                    k: fr.next.clone(),
                }),
                Val::Bool(false) => Some(Task::Eval {
                    e: else_e.clone(),
                    env: env.clone(),
                    cons: *cons,
                    k: fr.next.clone(),
                }),
                _ => None,
            },
            FrameOp::Seq { list, idx, env, child_cons, first, acc, done } => {
                let mut acc = acc.clone();
                acc.push(v);
                let len = list.get().as_list().expect("list expression").len();
                let next_idx = idx + 1;
                if next_idx < len {
                    let cons = child_cons
                        .as_ref()
                        .map(|cs| cs[next_idx - first])
                        .unwrap_or(None);
                    Some(Task::Eval {
                        e: list.element(next_idx),
                        env: env.clone(),
                        cons,
                        k: frame(
                            FrameOp::Seq {
                                list: list.clone(),
                                idx: next_idx,
                                env: env.clone(),
                                child_cons: child_cons.clone(),
                                first: *first,
                                acc,
                                done: done.clone(),
                            },
                            fr.next.clone(),
                        ),
                    })
                } else {
                    self.finish_seq(acc, done.clone(), fr.next.clone())
                }
            }
            FrameOp::DrawnList { cons } => {
                let Val::Form(head, elems) = &*v else { return None };
                if head != "list" || elems.is_empty() {
                    return None;
                }
                let log_p = -(elems.len() as f64).ln();
                let alts: Vec<(usize, f64, Task<'p>)> = elems
                    .iter()
                    .enumerate()
                    .filter(|(_, elem)| admissible(elem, *cons))
                    .map(|(i, elem)| {
                        (i, log_p, Task::Feed { v: elem.clone(), k: fr.next.clone() })
                    })
                    .collect();
                self.offer(pending, alts);
                None
            }
            FrameOp::Operator { call, env, cons } => {
                let Val::Closure(params, body, cenv) = &*v else { return None };
                let argc = call.get().as_list().expect("call form").len() - 1;
                if params.len() != argc {
                    return None;
                }
                if argc == 0 {
                    return Some(Task::Eval {
                        e: ERef::C(body.clone()),
                        env: cenv.clone(),
                        cons: *cons,
                        k: fr.next.clone(),
                    });
                }
                Some(Task::Eval {
                    e: call.element(1),
                    env: env.clone(),
                    cons: None,
                    k: frame(
                        FrameOp::Seq {
                            list: call.clone(),
                            idx: 1,
                            env: env.clone(),
                            child_cons: None,
                            first: 1,
                            acc: Vec::new(),
                            done: Done::CallClosure {
                                params: params.clone(),
                                body: body.clone(),
                                cenv: cenv.clone(),
                                cons: *cons,
                            },
                        },
                        fr.next.clone(),
                    ),
                })
            }
        }
    }

    fn finish_seq(&mut self, acc: Vec<Rc<Val>>, done: Done<'p>, k: Kont<'p>) -> Option<Task<'p>> {
        match done {
            Done::Form { head } => {
                let v = Rc::new(Val::Form(head.to_string(), acc));
                Some(Task::Feed { v, k })
            }
            Done::CallAbs { vars, body, cons } => {
                let mut env = Env::empty();
                for (var, arg) in vars.iter().zip(acc) {
                    env = env.bind(var.clone(), arg);
                }
                Some(Task::Eval { e: ERef::P(body), env, cons, k })
            }
            Done::CallClosure { params, body, cenv, cons } => {
                let mut env = cenv;
                for (var, arg) in params.iter().zip(acc) {
                    env = env.bind(var.clone(), arg);
                }
                Some(Task::Eval { e: ERef::C(body), env, cons, k })
            }
            Done::GaussParams => {
                let (Val::Num(mean), Val::Num(sd)) = (&*acc[0], &*acc[1]) else {
                    return None;
                };
                Some(Task::Feed { v: Rc::new(Val::GaussParams(mean.value(), sd.value())), k })
            }
        }
    }

    fn eval(
        &mut self,
        e: ERef<'p>,
        env: Env,
        cons: Cons<'p>,
        k: Kont<'p>,
        pending: &mut Vec<Pending<'p>>,
    ) -> Option<Task<'p>> {
        match e.get() {
            SExpr::Num(n) => {
                if cons.is_some() {
                    return None;
                }
                Some(Task::Feed { v: Rc::new(Val::Num(*n)), k })
            }
            SExpr::Sym(s) => {
                if let Some(v) = env.lookup(s) {
                    if admissible(&v, cons) {
                        return Some(Task::Feed { v, k });
                    }
                    return None;
                }
                if is_variable_symbol(e.get()) {
                    return None; // unbound variable: no value on this branch
                }
                if cons.is_some() {
                    return None;
                }
                let v = match s.as_str() {
                    "true" => Val::Bool(true),
                    "false" => Val::Bool(false),
                    _ => Val::Sym(s.clone()),
                };
                Some(Task::Feed { v: Rc::new(v), k })
            }
            SExpr::List(items) if items.is_empty() => {
                if cons.is_some() {
                    return None;
                }
                Some(Task::Feed { v: Rc::new(Val::Unit), k })
            }
            SExpr::List(items) => self.eval_form(&e, items.len(), env, cons, k, pending),
        }
    }

    fn eval_form(
        &mut self,
        e: &ERef<'p>,
        len: usize,
        env: Env,
        cons: Cons<'p>,
        k: Kont<'p>,
        pending: &mut Vec<Pending<'p>>,
    ) -> Option<Task<'p>> {
        let items = e.get().as_list().expect("list expression");
        let head = items[0].as_sym();
        match head {
            Some(LAMBDA) if len == 3 => {
                if cons.is_some() {
                    return None;
                }
                let params: Vec<String> = items[1]
                    .as_list()
                    .map(|ps| ps.iter().filter_map(|p| p.as_sym().map(String::from)).collect())
                    .unwrap_or_default();
                let body = Rc::new(items[2].clone());
                Some(Task::Feed {
                    v: Rc::new(Val::Closure(Rc::new(params), body, env)),
                    k,
                })
            }
            Some("if") if len == 4 => Some(Task::Eval {
                e: e.element(1),
                env: env.clone(),
                cons: None,
                k: frame(
                    FrameOp::IfBranch {
                        then_e: e.element(2),
                        else_e: e.element(3),
                        env,
                        cons,
                    },
                    k,
                ),
            }),
            Some("flip") => {
                if cons.is_some() {
                    return None; // a boolean can never satisfy a tree position
                }
                let p = match len {
                    1 => Some(0.5),
                    2 => match &items[1] {
                        SExpr::Num(n) => Some(n.value()),
                        SExpr::Sym(s) => env.lookup(s).and_then(|v| match &*v {
                            Val::Num(n) => Some(n.value()),
                            _ => None,
                        }),
                        _ => None,
                    },
                    _ => None,
                };
                let Some(p) = p else { return None };
                if !(0.0..=1.0).contains(&p) {
                    self.aborted = Some(LikelihoodError::BadProbability(p));
                    return None;
                }
                let mut alts = Vec::new();
                if p > 0.0 {
                    alts.push((0, p.ln(), Task::Feed { v: Rc::new(Val::Bool(true)), k: k.clone() }));
                }
                if p < 1.0 {
                    alts.push((1, (1.0 - p).ln(), Task::Feed { v: Rc::new(Val::Bool(false)), k }));
                }
                self.offer(pending, alts);
                None
            }
            Some("uniform-choice") => {
                let n = len - 1;
                if n == 0 {
                    return None;
                }
                let log_p = -(n as f64).ln();
                let alts: Vec<(usize, f64, Task<'p>)> = (0..n)
                    .map(|i| {
                        (
                            i,
                            log_p,
                            Task::Eval {
                                e: e.element(1 + i),
                                env: env.clone(),
                                cons,
                                k: k.clone(),
                            },
                        )
                    })
                    .collect();
                self.offer(pending, alts);
                None
            }
            Some("uniform-draw") if len == 2 => Some(Task::Eval {
                e: e.element(1),
                env,
                cons: None,
                k: frame(FrameOp::DrawnList { cons }, k),
            }),
            Some("gaussian-parameters") if len == 3 => {
                if cons.is_some() {
                    return None;
                }
                self.start_seq(e, env, None, 1, Done::GaussParams, k)
            }
            Some("gaussian") => {
                self.aborted = Some(LikelihoodError::ContinuousChoice(e.get().to_string()));
                None
            }
            Some(name) if self.prog.abstraction(name).is_some() => {
                let idx = self.prog.abstractions.iter().position(|a| a.name == name).unwrap();
                let a = &self.prog.abstractions[idx];
                if len - 1 != a.vars.len() {
                    return None;
                }
                let guarantee = self.bounds.min_new_nodes[idx];
                if self.bounds.recursive[idx] {
                    self.guaranteed += guarantee;
                    if self.nodes + self.guaranteed > self.node_budget {
                        return None; // no completion can fit the node budget
                    }
                } else if self.nodes + self.guaranteed + guarantee > self.node_budget {
                    return None;
                }
                if a.vars.is_empty() {
                    return Some(Task::Eval { e: ERef::P(&a.body), env: Env::empty(), cons, k });
                }
                self.start_seq(
                    e,
                    env,
                    None,
                    1,
                    Done::CallAbs { vars: &a.vars, body: &a.body, cons },
                    k,
                )
            }
            Some("node") => {
                if let Some(t) = cons {
                    if len < 2 || len - 2 != t.children.len() {
                        return None; // missing data slot or child arity mismatch
                    }
                }
                self.nodes += 1;
                self.guaranteed = self.guaranteed.saturating_sub(1);
                if self.nodes + self.guaranteed > self.node_budget {
                    return None; // restored from the worklist snapshot on backtrack
                }
                if len == 1 {
                    return Some(Task::Feed {
                        v: Rc::new(Val::Form("node".to_string(), Vec::new())),
                        k,
                    });
                }
                let child_cons: Vec<Cons<'p>> = match cons {
                    Some(t) => {
                        let mut cs: Vec<Cons<'p>> = vec![None]; // the data position
                        cs.extend(t.children.iter().map(Some));
                        cs
                    }
                    None => vec![None; len - 1],
                };
                self.start_seq(
                    e,
                    env,
                    Some(Rc::new(child_cons)),
                    1,
                    Done::Form { head: "node".into() },
                    k,
                )
            }
            Some(name) => {
                // data, color, size, list, and inert constructor forms
                if cons.is_some() {
                    return None;
                }
                if len == 1 {
                    return Some(Task::Feed {
                        v: Rc::new(Val::Form(name.to_string(), Vec::new())),
                        k,
                    });
                }
                self.start_seq(e, env, None, 1, Done::Form { head: name.into() }, k)
            }
            None => Some(Task::Eval {
                e: e.element(0),
                env: env.clone(),
                cons: None,
                k: frame(FrameOp::Operator { call: e.clone(), env, cons }, k),
            }),
        }
    }

    fn start_seq(
        &mut self,
        list: &ERef<'p>,
        env: Env,
        child_cons: Option<Rc<Vec<Cons<'p>>>>,
        first: usize,
        done: Done<'p>,
        k: Kont<'p>,
    ) -> Option<Task<'p>> {
        let cons = child_cons.as_ref().map(|cs| cs[0]).unwrap_or(None);
        Some(Task::Eval {
            e: list.element(first),
            env: env.clone(),
            cons,
            k: frame(
                FrameOp::Seq {
                    list: list.clone(),
                    idx: first,
                    env,
                    child_cons,
                    first,
                    acc: Vec::new(),
                    done,
                },
                k,
            ),
        })
    }
}

fn run_enumeration<T>(
    p: &Program,
    target: Option<&Tree>,
    limits: EnumerationLimits,
    convert: impl Fn(&Val) -> Option<T>,
) -> Result<Vec<(ParseTrace, T)>, LikelihoodError> {
    let prepared = replace_gaussian(&desugar(p)?)?;
    let node_budget = match (target, limits.max_nodes) {
        (_, Some(n)) => n,
        (Some(t), None) => t.node_count(),
        (None, None) => return Err(LikelihoodError::MissingNodeBudget),
    };
    let inner = match prepared.body.as_list() {
        Some(items)
            if items.len() == 3
                && items[0].as_sym() == Some(LAMBDA)
                && items[1].as_list().map_or(false, |b| b.is_empty()) =>
        {
            &items[2]
        }
        _ => return Err(ModelError::BadBody(prepared.body.to_string()).into()),
    };
    let bounds = construction_bounds(&prepared);
    let mut machine = Machine {
        prog: &prepared,
        max_steps: step_budget(&limits),
        bounds,
        node_budget,
        max_choices: limits.max_choices,
        max_traces: limits.max_traces,
        trace: Vec::new(),
        nodes: 0,
        guaranteed: 0,
        steps: 0,
        results: Vec::new(),
        aborted: None,
    };
    machine.run(Task::Eval { e: ERef::P(inner), env: Env::empty(), cons: target, k: None });
    match machine.aborted {
        Some(err) => Err(err),
        None => Ok(machine
            .results
            .into_iter()
            .filter_map(|(trace, v)| convert(&v).map(|c| (trace, c)))
            .collect()),
    }
}

/// All discrete-choice traces under which the program generates the target
/// tree's shape, in lexicographic choice order, paired with the generated
/// attribute slots.
pub fn enumerate_parses(
    p: &Program,
    target: &Tree,
    limits: EnumerationLimits,
) -> Result<Vec<(ParseTrace, ParameterizedTree)>, LikelihoodError> {
    run_enumeration(p, Some(target), limits, to_parameterized)
}

/// Enumerate the program's full output distribution (no target), up to the
/// node budget in `limits`. Returns each trace with its output value.
pub fn enumerate_outputs(
    p: &Program,
    limits: EnumerationLimits,
) -> Result<Vec<(ParseTrace, SExpr)>, LikelihoodError> {
    run_enumeration(p, None, limits, |v| Some(val_to_sexpr(v)))
}

/// Aggregate output probability by printed value: the exact distribution a
/// desk-scale program defines over its outputs.
pub fn output_distribution(
    p: &Program,
    limits: EnumerationLimits,
) -> Result<BTreeMap<String, f64>, LikelihoodError> {
    let mut dist = BTreeMap::new();
    for (trace, value) in enumerate_outputs(p, limits)? {
        *dist.entry(value.to_string()).or_insert(0.0) += trace.log_prob.exp();
    }
    Ok(dist)
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn score_slot(observed: f64, slot: &Slot) -> f64 {
    match slot {
        Slot::Literal(n) => {
            if n.value() == observed {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        Slot::Gaussian { mean, sd } => {
            if *sd == 0.0 {
                // degenerate Gaussian: a point mass
                if observed == *mean {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                ln_normal_pdf(observed, *mean, *sd)
            }
        }
    }
}

/// Log probability (density) of the observed attributes given a parse's
/// slots. Shapes must match; the enumerator guarantees it.
pub fn data_score(target: &Tree, pt: &ParameterizedTree) -> f64 {
    assert_eq!(
        target.children.len(),
        pt.children.len(),
        "data_score called with mismatched shapes"
    );
    let mut score = score_slot(target.color, &pt.color) + score_slot(target.size, &pt.size);
    for (t, c) in target.children.iter().zip(&pt.children) {
        score += data_score(t, c);
    }
    score
}

/// Stable log(Σ exp(xᵢ)). −∞ terms are absorbed unless every term is −∞.
/// Panics on an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "log_sum_exp of an empty sequence");
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact log probability of one observation: the sum over all parses of
/// topology score plus data score.
pub fn single_log_likelihood(
    p: &Program,
    target: &Tree,
    limits: EnumerationLimits,
) -> Result<f64, LikelihoodError> {
    let parses = enumerate_parses(p, target, limits)?;
    let scores: Vec<f64> = parses
        .iter()
        .map(|(trace, pt)| trace.log_prob + data_score(target, pt))
        .filter(|s| *s != f64::NEG_INFINITY)
        .collect();
    if scores.is_empty() {
        Ok(f64::NEG_INFINITY)
    } else {
        Ok(log_sum_exp(&scores))
    }
}

/// Log likelihood of an i.i.d. dataset: the sum over observations.
/// Independent observations are scored in parallel when the `parallel`
/// feature is enabled; the reduction order is fixed either way.
pub fn log_likelihood(
    p: &Program,
    targets: &[Tree],
    limits: EnumerationLimits,
) -> Result<f64, LikelihoodError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let scores: Vec<f64> = targets
            .par_iter()
            .map(|t| single_log_likelihood(p, t, limits))
            .collect::<Result<_, _>>()?;
        Ok(scores.iter().sum())
    }
    #[cfg(not(feature = "parallel"))]
    {
        log_likelihood_seq(p, targets, limits)
    }
}

/// Sequential reference path for [`log_likelihood`]; always available so the
/// two can be compared.
pub fn log_likelihood_seq(
    p: &Program,
    targets: &[Tree],
    limits: EnumerationLimits,
) -> Result<f64, LikelihoodError> {
    let mut total = 0.0;
    for t in targets {
        total += single_log_likelihood(p, t, limits)?;
    }
    Ok(total)
}

/// The unnormalized posterior decomposition `(log_prior, log_likelihood,
/// posterior)`.
pub fn posterior(
    p: &Program,
    targets: &[Tree],
    alpha: f64,
    limits: EnumerationLimits,
) -> Result<(f64, f64, f64), LikelihoodError> {
    let lp = log_prior(p, alpha);
    let ll = log_likelihood(p, targets, limits)?;
    Ok((lp, ll, lp + ll))
}
