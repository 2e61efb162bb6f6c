//! Semantic checks and explicit state-space construction for parsed models.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use super::parser::{BinOp, ConstType, Expr, ExprKind, Program};
use super::{Diagnostic, DiagnosticCode, Pos};
use crate::mdp::{ActionId, Choice, ExplicitMdp, MdpParts, StateId};

/// Reachable-state cap for desk-scale use.
pub const MAX_STATES: usize = 1_000_000;

const MAX_ERRORS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
}

impl Value {
    fn type_name(self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Real(_) => "double",
            Value::Bool(_) => "bool",
        }
    }

    fn as_f64(self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(i as f64),
            Value::Real(r) => Some(r),
            Value::Bool(_) => None,
        }
    }
}

struct Env<'a> {
    consts: HashMap<&'a str, Value>,
    formulas: HashMap<&'a str, &'a Expr>,
    vars: HashMap<&'a str, usize>,
}

fn type_error(pos: Pos, msg: String) -> Diagnostic {
    Diagnostic::error(DiagnosticCode::Type, pos, msg)
}

impl Env<'_> {
    fn eval(&self, e: &Expr, state: &[i64]) -> Result<Value, Diagnostic> {
        self.eval_depth(e, state, 0)
    }

    fn eval_depth(&self, e: &Expr, state: &[i64], depth: usize) -> Result<Value, Diagnostic> {
        Ok(match &e.kind {
            ExprKind::Int(i) => Value::Int(*i),
            ExprKind::Real(r) => Value::Real(*r),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Ident(name) => {
                if let Some(&i) = self.vars.get(name.as_str()) {
                    Value::Int(state[i])
                } else if let Some(v) = self.consts.get(name.as_str()) {
                    *v
                } else if let Some(f) = self.formulas.get(name.as_str()) {
                    if depth > 64 {
                        return Err(Diagnostic::error(
                            DiagnosticCode::UndefinedIdentifier,
                            e.pos,
                            format!("formula `{name}` is defined cyclically"),
                        ));
                    }
                    self.eval_depth(f, state, depth + 1)?
                } else {
                    return Err(Diagnostic::error(
                        DiagnosticCode::UndefinedIdentifier,
                        e.pos,
                        format!("undefined identifier `{name}`"),
                    ));
                }
            }
            ExprKind::Neg(inner) => match self.eval_depth(inner, state, depth)? {
                Value::Int(i) => Value::Int(-i),
                Value::Real(r) => Value::Real(-r),
                Value::Bool(_) => return Err(type_error(e.pos, "cannot negate a bool".into())),
            },
            ExprKind::Not(inner) => match self.eval_depth(inner, state, depth)? {
                Value::Bool(b) => Value::Bool(!b),
                v => return Err(type_error(e.pos, format!("`!` applied to {}", v.type_name()))),
            },
            ExprKind::Bin(op, a, b) => {
                let a = self.eval_depth(a, state, depth)?;
                // short-circuit keeps guards like `x>0 & y/x>1` well defined
                match (op, a) {
                    (BinOp::And, Value::Bool(false)) => return Ok(Value::Bool(false)),
                    (BinOp::Or, Value::Bool(true)) => return Ok(Value::Bool(true)),
                    _ => {}
                }
                let b = self.eval_depth(b, state, depth)?;
                apply(*op, a, b).map_err(|msg| type_error(e.pos, msg))?
            }
        })
    }
}

fn apply(op: BinOp, a: Value, b: Value) -> Result<Value, String> {
    use Value::*;
    let mismatch = || format!("operator {op:?} cannot combine {} and {}", a.type_name(), b.type_name());
    match op {
        BinOp::And | BinOp::Or => match (a, b) {
            (Bool(x), Bool(y)) => Ok(Bool(if op == BinOp::And { x && y } else { x || y })),
            _ => Err(mismatch()),
        },
        BinOp::Eq | BinOp::Neq => {
            let eq = match (a, b) {
                (Bool(x), Bool(y)) => x == y,
                (Int(x), Int(y)) => x == y,
                _ => match (a.as_f64(), b.as_f64()) {
                    (Some(x), Some(y)) => x == y,
                    _ => return Err(mismatch()),
                },
            };
            Ok(Bool(if op == BinOp::Eq { eq } else { !eq }))
        }
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (a, b) {
                (Int(x), Int(y)) => x.partial_cmp(&y),
                _ => match (a.as_f64(), b.as_f64()) {
                    (Some(x), Some(y)) => x.partial_cmp(&y),
                    _ => return Err(mismatch()),
                },
            }
            .ok_or_else(|| "comparison with NaN".to_string())?;
            use std::cmp::Ordering::*;
            Ok(Bool(match op {
                BinOp::Lt => ord == Less,
                BinOp::Le => ord != Greater,
                BinOp::Gt => ord == Greater,
                _ => ord != Less,
            }))
        }
        BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Min | BinOp::Max => match (a, b) {
            (Int(x), Int(y)) => {
                let r = match op {
                    BinOp::Add => x.checked_add(y),
                    BinOp::Sub => x.checked_sub(y),
                    BinOp::Mul => x.checked_mul(y),
                    BinOp::Min => Some(x.min(y)),
                    _ => Some(x.max(y)),
                };
                r.map(Int).ok_or_else(|| "integer overflow".to_string())
            }
            _ => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => Ok(Real(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Min => x.min(y),
                    _ => x.max(y),
                })),
                _ => Err(mismatch()),
            },
        },
        BinOp::Div => match (a.as_f64(), b.as_f64()) {
            (Some(_), Some(0.0)) => Err("division by zero".to_string()),
            (Some(x), Some(y)) => Ok(Real(x / y)),
            _ => Err(mismatch()),
        },
    }
}

fn idents(e: &Expr, out: &mut Vec<(String, Pos)>) {
    match &e.kind {
        ExprKind::Ident(n) => out.push((n.clone(), e.pos)),
        ExprKind::Neg(a) | ExprKind::Not(a) => idents(a, out),
        ExprKind::Bin(_, a, b) => {
            idents(a, out);
            idents(b, out);
        }
        _ => {}
    }
}

/// Check identifiers, then enumerate the reachable state space.
pub(crate) fn build(prog: &Program) -> Result<(ExplicitMdp, Vec<Diagnostic>), Vec<Diagnostic>> {
    let mut errors = Vec::new();
    let mut env = Env {
        consts: HashMap::new(),
        formulas: HashMap::new(),
        vars: HashMap::new(),
    };
    let mut declared: HashSet<String> = HashSet::new();
    let mut redeclared = |name: &str, pos: Pos, errors: &mut Vec<Diagnostic>| {
        if !declared.insert(name.to_string()) {
            errors.push(Diagnostic::error(
                DiagnosticCode::Syntax,
                pos,
                format!("`{name}` is declared more than once"),
            ));
        }
    };

    // constants fold in declaration order
    for c in &prog.consts {
        redeclared(&c.name, c.pos, &mut errors);
        match env.eval(&c.value, &[]) {
            Ok(v) => {
                let v = match (c.ty, v) {
                    (ConstType::Int, Value::Int(_)) | (ConstType::Double, Value::Real(_)) => v,
                    (ConstType::Double, Value::Int(i)) => Value::Real(i as f64),
                    (ty, v) => {
                        errors.push(type_error(
                            c.pos,
                            format!("constant `{}` declared {ty:?} but has type {}", c.name, v.type_name()),
                        ));
                        continue;
                    }
                };
                env.consts.insert(&c.name, v);
            }
            Err(mut d) => {
                if d.code == DiagnosticCode::UndefinedIdentifier && !d.message.contains("cyclic") {
                    d.code = DiagnosticCode::NotConstant;
                    d.message = format!("constant `{}` is not constant-foldable: {}", c.name, d.message);
                }
                errors.push(d);
            }
        }
    }
    for f in &prog.formulas {
        redeclared(&f.name, f.pos, &mut errors);
        env.formulas.insert(&f.name, &f.expr);
    }
    for (i, v) in prog.vars.iter().enumerate() {
        redeclared(&v.name, v.pos, &mut errors);
        env.vars.insert(&v.name, i);
    }

    // every identifier anywhere must resolve
    let mut uses = Vec::new();
    for f in &prog.formulas {
        idents(&f.expr, &mut uses);
    }
    for l in &prog.labels {
        idents(&l.expr, &mut uses);
    }
    for c in &prog.commands {
        idents(&c.guard, &mut uses);
        for b in &c.branches {
            if let Some(p) = &b.prob {
                idents(p, &mut uses);
            }
            for u in &b.updates {
                idents(&u.value, &mut uses);
                uses.push((u.var.clone(), u.pos));
                if !env.vars.contains_key(u.var.as_str()) {
                    errors.push(Diagnostic::error(
                        DiagnosticCode::UndefinedIdentifier,
                        u.pos,
                        format!("update of undeclared variable `{}`", u.var),
                    ));
                }
            }
        }
    }
    for (name, pos) in uses {
        let known = env.vars.contains_key(name.as_str())
            || env.consts.contains_key(name.as_str())
            || env.formulas.contains_key(name.as_str())
            || prog.consts.iter().any(|c| c.name == name);
        if !known {
            errors.push(Diagnostic::error(
                DiagnosticCode::UndefinedIdentifier,
                pos,
                format!("undefined identifier `{name}`"),
            ));
        }
    }
    if !errors.is_empty() {
        return Err(dedupe(errors));
    }

    // variable ranges and initial valuation are constant expressions
    let mut ranges = Vec::new();
    let mut init = Vec::new();
    for v in &prog.vars {
        let mut constant_int = |e: &Expr, what: &str| -> Option<i64> {
            let mut ids = Vec::new();
            idents(e, &mut ids);
            if let Some((name, pos)) = ids.iter().find(|(n, _)| !env.consts.contains_key(n.as_str())) {
                errors.push(Diagnostic::error(
                    DiagnosticCode::NotConstant,
                    *pos,
                    format!("{what} of `{}` refers to non-constant `{name}`", v.name),
                ));
                return None;
            }
            match env.eval(e, &[]) {
                Ok(Value::Int(i)) => Some(i),
                Ok(other) => {
                    errors.push(type_error(
                        e.pos,
                        format!("{what} of `{}` must be int, found {}", v.name, other.type_name()),
                    ));
                    None
                }
                Err(d) => {
                    errors.push(d);
                    None
                }
            }
        };
        let lo = constant_int(&v.lo, "lower bound");
        let hi = constant_int(&v.hi, "upper bound");
        let start = match &v.init {
            Some(e) => constant_int(e, "initial value"),
            None => lo,
        };
        if let (Some(lo), Some(hi), Some(start)) = (lo, hi, start) {
            if lo > hi {
                errors.push(Diagnostic::error(
                    DiagnosticCode::OutOfRange,
                    v.pos,
                    format!("empty range [{lo}..{hi}] for `{}`", v.name),
                ));
            } else if !(lo..=hi).contains(&start) {
                errors.push(Diagnostic::error(
                    DiagnosticCode::OutOfRange,
                    v.pos,
                    format!("initial value {start} of `{}` is outside [{lo}..{hi}]", v.name),
                ));
            }
            ranges.push((lo, hi));
            init.push(start);
        }
    }
    if prog.commands.is_empty() {
        errors.push(Diagnostic::error(
            DiagnosticCode::Syntax,
            Pos { line: 1, col: 1 },
            "model declares no commands",
        ));
    }
    if !errors.is_empty() {
        return Err(dedupe(errors));
    }

    let mut actions: Vec<String> = Vec::new();
    let mut command_action = Vec::new();
    for c in &prog.commands {
        let idx = match actions.iter().position(|a| *a == c.label) {
            Some(i) => i,
            None => {
                actions.push(c.label.clone());
                actions.len() - 1
            }
        };
        command_action.push(ActionId(idx));
    }

    let describe = |state: &[i64]| -> String {
        prog.vars
            .iter()
            .zip(state)
            .map(|(v, x)| format!("{}={x}", v.name))
            .collect::<Vec<_>>()
            .join(",")
    };

    // breadth-first exploration; rows hold discovery indices for now
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut order: Vec<Vec<i64>> = Vec::new();
    let mut rows: Vec<Vec<(ActionId, BTreeMap<usize, f64>)>> = Vec::new();
    let mut queue = VecDeque::new();
    index.insert(init.clone(), 0);
    order.push(init.clone());
    queue.push_back(0usize);
    while let Some(cur) = queue.pop_front() {
        if errors.len() >= MAX_ERRORS {
            break;
        }
        let state = order[cur].clone();
        let mut enabled: Vec<(ActionId, BTreeMap<usize, f64>)> = Vec::new();
        let mut enabled_by: HashMap<ActionId, Pos> = HashMap::new();
        for (ci, c) in prog.commands.iter().enumerate() {
            match env.eval(&c.guard, &state) {
                Ok(Value::Bool(true)) => {}
                Ok(Value::Bool(false)) => continue,
                Ok(v) => {
                    errors.push(type_error(c.guard.pos, format!("guard has type {}", v.type_name())));
                    continue;
                }
                Err(d) => {
                    errors.push(d);
                    continue;
                }
            }
            let action = command_action[ci];
            if let Some(first) = enabled_by.insert(action, c.pos) {
                errors.push(Diagnostic::error(
                    DiagnosticCode::DuplicateAction,
                    c.pos,
                    format!(
                        "action [{}] is enabled twice in state ({}); first command at {}:{}",
                        c.label,
                        describe(&state),
                        first.line,
                        first.col
                    ),
                ));
                continue;
            }
            let mut dist: BTreeMap<usize, f64> = BTreeMap::new();
            let mut total = 0.0;
            let mut ok = true;
            for b in &c.branches {
                let p = match &b.prob {
                    None => 1.0,
                    Some(e) => match env.eval(e, &state) {
                        Ok(v) => match v.as_f64() {
                            Some(p) if p.is_finite() => p,
                            _ => {
                                errors.push(Diagnostic::error(
                                    DiagnosticCode::NotConstant,
                                    e.pos,
                                    format!("probability does not fold to a number in state ({})", describe(&state)),
                                ));
                                ok = false;
                                continue;
                            }
                        },
                        Err(d) => {
                            errors.push(d);
                            ok = false;
                            continue;
                        }
                    },
                };
                if !(0.0..=1.0).contains(&p) {
                    errors.push(Diagnostic::error(
                        DiagnosticCode::Stochasticity,
                        b.pos,
                        format!(
                            "probability {} outside [0, 1] in state ({})",
                            fmt_prob(p),
                            describe(&state)
                        ),
                    ));
                    ok = false;
                    continue;
                }
                total += p;
                let mut next = state.clone();
                for u in &b.updates {
                    let i = env.vars[u.var.as_str()];
                    match env.eval(&u.value, &state) {
                        Ok(Value::Int(x)) => {
                            let (lo, hi) = ranges[i];
                            if !(lo..=hi).contains(&x) {
                                errors.push(Diagnostic::error(
                                    DiagnosticCode::OutOfRange,
                                    u.pos,
                                    format!(
                                        "out-of-range update {}'={x} outside [{lo}..{hi}] in state ({})",
                                        u.var,
                                        describe(&state)
                                    ),
                                ));
                                ok = false;
                            }
                            next[i] = x;
                        }
                        Ok(v) => {
                            errors.push(type_error(
                                u.value.pos,
                                format!("update of int `{}` has type {}", u.var, v.type_name()),
                            ));
                            ok = false;
                        }
                        Err(d) => {
                            errors.push(d);
                            ok = false;
                        }
                    }
                }
                if !ok || p == 0.0 {
                    continue;
                }
                let target = match index.get(&next) {
                    Some(&t) => t,
                    None => {
                        if order.len() >= MAX_STATES {
                            return Err(vec![Diagnostic::error(
                                DiagnosticCode::ScaleLimit,
                                c.pos,
                                format!("more than {MAX_STATES} reachable states"),
                            )]);
                        }
                        let t = order.len();
                        index.insert(next.clone(), t);
                        order.push(next);
                        queue.push_back(t);
                        t
                    }
                };
                *dist.entry(target).or_insert(0.0) += p;
            }
            if ok && (total - 1.0).abs() > 1e-9 {
                errors.push(Diagnostic::error(
                    DiagnosticCode::Stochasticity,
                    c.pos,
                    format!(
                        "probabilities sum to {} in state ({})",
                        fmt_prob(total),
                        describe(&state)
                    ),
                ));
            }
            enabled.push((action, dist));
        }
        if rows.len() <= cur {
            rows.resize_with(cur + 1, Vec::new);
        }
        rows[cur] = enabled;
    }
    if !errors.is_empty() {
        return Err(dedupe(errors));
    }
    rows.resize_with(order.len(), Vec::new);

    // renumber lexicographically by valuation
    let mut perm: Vec<usize> = (0..order.len()).collect();
    perm.sort_by(|&a, &b| order[a].cmp(&order[b]));
    let mut new_id = vec![0usize; order.len()];
    for (new, &old) in perm.iter().enumerate() {
        new_id[old] = new;
    }
    let mut choices = Vec::with_capacity(order.len());
    for (new, &old) in perm.iter().enumerate() {
        let mut cs: Vec<Choice> = rows[old]
            .iter()
            .map(|(a, dist)| {
                let mut successors: Vec<(StateId, f64)> = dist.iter().map(|(&t, &p)| (StateId(new_id[t]), p)).collect();
                successors.sort_by_key(|&(t, _)| t);
                Choice { action: *a, successors }
            })
            .collect();
        if cs.is_empty() {
            cs.push(Choice {
                action: ActionId(0),
                successors: vec![(StateId(new), 1.0)],
            });
        }
        cs.sort_by_key(|c| c.action);
        choices.push(cs);
    }
    let valuations: Vec<Vec<i64>> = perm.iter().map(|&o| order[o].clone()).collect();

    let mut warnings = Vec::new();
    let mut labels = BTreeMap::new();
    for l in &prog.labels {
        let mut set = BTreeSet::new();
        for (i, val) in valuations.iter().enumerate() {
            match env.eval(&l.expr, val) {
                Ok(Value::Bool(true)) => {
                    set.insert(StateId(i));
                }
                Ok(Value::Bool(false)) => {}
                Ok(v) => {
                    errors.push(type_error(
                        l.pos,
                        format!("label \"{}\" has type {}", l.name, v.type_name()),
                    ));
                    break;
                }
                Err(d) => {
                    errors.push(d);
                    break;
                }
            }
        }
        if set.is_empty() {
            warnings.push(Diagnostic::warning(
                DiagnosticCode::EmptyLabel,
                l.pos,
                format!("empty label \"{}\"", l.name),
            ));
        }
        if labels.insert(l.name.clone(), set).is_some() {
            errors.push(Diagnostic::error(
                DiagnosticCode::Syntax,
                l.pos,
                format!("label \"{}\" is declared more than once", l.name),
            ));
        }
    }
    if !errors.is_empty() {
        return Err(dedupe(errors));
    }

    let names = valuations.iter().map(|v| describe(v)).collect();
    let initial = StateId(new_id[0]);
    let m = ExplicitMdp::from_parts(MdpParts {
        variables: prog.vars.iter().map(|v| v.name.clone()).collect(),
        valuations,
        names,
        actions,
        initial,
        choices,
        labels,
    });
    Ok((m, warnings))
}

/// Twelve decimals, trailing zeros removed (`0.9`, not `0.8999999999999999`).
pub(crate) fn fmt_prob(p: f64) -> String {
    let s = format!("{p:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn dedupe(errors: Vec<Diagnostic>) -> Vec<Diagnostic> {
    let mut seen = HashSet::new();
    errors
        .into_iter()
        .filter(|d| seen.insert((d.line, d.column, d.code)))
        .take(MAX_ERRORS)
        .collect()
}
