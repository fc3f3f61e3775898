use std::collections::HashMap;

use super::{Expr, Node, Var};

/// Source of numeric values for symbols.
pub trait Binding {
    fn value(&self, v: Var) -> Option<f64>;
}

impl Binding for HashMap<Var, f64> {
    fn value(&self, v: Var) -> Option<f64> {
        self.get(&v).copied()
    }
}

impl<F: Fn(Var) -> Option<f64>> Binding for F {
    fn value(&self, v: Var) -> Option<f64> {
        self(v)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("symbol {0:?} is not bound")]
    Unbound(Var),
    /// `subtree` is the offending node printed without symbol names.
    #[error("non-finite value {value} produced by {subtree}")]
    NonFinite { value: f64, subtree: String },
}

/// IEEE double evaluation of the tree.
pub fn evaluate(e: &Expr, binding: &dyn Binding) -> Result<f64, EvalError> {
    let mut memo = HashMap::new();
    eval_rec(e, binding, &mut memo)
}

fn eval_rec(e: &Expr, b: &dyn Binding, memo: &mut HashMap<*const Node, f64>) -> Result<f64, EvalError> {
    if let Some(v) = memo.get(&e.key()) {
        return Ok(*v);
    }
    let v = match e.node() {
        Node::Const(c) => *c,
        Node::Var(v) => b.value(*v).ok_or(EvalError::Unbound(*v))?,
        Node::Add(x, y) => eval_rec(x, b, memo)? + eval_rec(y, b, memo)?,
        Node::Mul(x, y) => eval_rec(x, b, memo)? * eval_rec(y, b, memo)?,
        Node::Div(x, y) => eval_rec(x, b, memo)? / eval_rec(y, b, memo)?,
        Node::Pow(x, y) => pow(eval_rec(x, b, memo)?, eval_rec(y, b, memo)?),
        Node::Neg(x) => -eval_rec(x, b, memo)?,
        Node::Call(f, x) => f.apply(eval_rec(x, b, memo)?),
        Node::Atan2(y, x) => eval_rec(y, b, memo)?.atan2(eval_rec(x, b, memo)?),
    };
    if !v.is_finite() {
        return Err(EvalError::NonFinite { value: v, subtree: e.debug_display().to_string() });
    }
    memo.insert(e.key(), v);
    Ok(v)
}

/// `powf` with exact integer powers so that `(-2)^2` stays real.
pub(crate) fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolKind, SymbolTable};

    #[test]
    fn reactor_first_residual_at_printed_state() {
        let mut t = SymbolTable::new();
        for s in ["x1", "x2", "x3"] {
            t.declare(s, SymbolKind::State).unwrap();
        }
        for p in ["k1", "c0"] {
            t.declare(p, SymbolKind::Parameter).unwrap();
        }
        let e = parse("k1*(c0-x1) - x3", &t).unwrap();
        let vals: HashMap<Var, f64> = [("x1", 0.5), ("x2", 350.0), ("x3", 0.4995), ("k1", 1.0), ("c0", 1.0)]
            .iter()
            .map(|(n, v)| (t.lookup(n).unwrap(), *v))
            .collect();
        let r = evaluate(&e, &vals).unwrap();
        assert!((r - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn pendulum_angle_output_recovers_angle() {
        let mut t = SymbolTable::new();
        let x1 = t.declare("x1", SymbolKind::State).unwrap();
        let x2 = t.declare("x2", SymbolKind::State).unwrap();
        let e = parse("atan(-x1/x2)", &t).unwrap();
        let (l, phi) = (6.25_f64, 0.3_f64);
        let b = move |v: Var| {
            if v == x1 {
                Some(l * phi.sin())
            } else if v == x2 {
                Some(-l * phi.cos())
            } else {
                None
            }
        };
        assert!((evaluate(&e, &b).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_constant_needs_no_binding() {
        let b: HashMap<Var, f64> = HashMap::new();
        assert_eq!(evaluate(&Expr::zero(), &b).unwrap(), 0.0);
    }

    #[test]
    fn reports_unbound_and_domain_errors() {
        let mut t = SymbolTable::new();
        let x = t.declare("x", SymbolKind::State).unwrap();
        let e = parse("log(x)", &t).unwrap();
        let empty: HashMap<Var, f64> = HashMap::new();
        assert_eq!(evaluate(&e, &empty), Err(EvalError::Unbound(x)));
        let neg: HashMap<Var, f64> = [(x, -1.0)].into_iter().collect();
        match evaluate(&e, &neg) {
            Err(EvalError::NonFinite { subtree, .. }) => assert!(subtree.contains("log")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
