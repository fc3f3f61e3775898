//! Symbolic expressions over state, parameter and derivative symbols.
//!
//! Trees are immutable and reference counted; subtrees are freely shared between
//! expressions (the stacked derivative arrays reuse most of their lower levels).
//! The arithmetic constructors apply a small set of sound local rewrites
//! (`0 + a`, `1 * a`, constant folding, ...) so that repeated differentiation
//! does not accumulate trivial nodes. No further normalization is attempted.

mod diff;
mod display;
mod eval;
mod parse;
mod symbol;
mod tape;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

pub use diff::{diff_partial, diff_total, diff_total_with, Differentiator};
pub use eval::{evaluate, Binding, EvalError};
pub use parse::{parse, ParseError};
pub use symbol::{Symbol, SymbolError, SymbolKind, SymbolTable, Var};
pub use tape::Tape;


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" => Func::Atan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Atan => x.atan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Neg(Expr),
    Call(Func, Expr),
    Atan2(Expr, Expr),
}

/// Shared handle to an immutable expression node.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Expr {
    fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn key(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn constant(value: f64) -> Self {
        assert!(value.is_finite(), "expression constants must be finite");
        Expr::from_node(Node::Const(value))
    }

    pub fn zero() -> Self {
        Expr::constant(0.0)
    }

    pub fn one() -> Self {
        Expr::constant(1.0)
    }

    pub fn var(v: Var) -> Self {
        Expr::from_node(Node::Var(v))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return fold(x + y).unwrap_or_else(|| raw(Node::Add(a, b))),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        raw(Node::Add(a, b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(a, Expr::neg(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return fold(x * y).unwrap_or_else(|| raw(Node::Mul(a, b))),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => return Expr::zero(),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return Expr::neg(b),
            (_, Some(y)) if y == -1.0 => return Expr::neg(a),
            _ => {}
        }
        // keep constants on the left so `2*(3*x)` folds
        if let (Some(x), Node::Mul(l, r)) = (a.as_const(), b.node()) {
            if let Some(y) = l.as_const() {
                if let Some(c) = fold(x * y) {
                    return Expr::mul(c, r.clone());
                }
            }
        }
        if a.as_const().is_none() && b.as_const().is_some() {
            return raw(Node::Mul(b, a));
        }
        raw(Node::Mul(a, b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        assert!(!b.is_zero(), "quotient with literal zero denominator");
        if a.is_zero() {
            return Expr::zero();
        }
        if b.is_one() {
            return a;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(c) = fold(x / y) {
                return c;
            }
        }
        raw(Node::Div(a, b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => {
                if let Some(c) = fold(x.powf(y)) {
                    return c;
                }
            }
            (_, Some(y)) if y == 0.0 => return Expr::one(),
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == 1.0 => return Expr::one(),
            (_, Some(y)) if y.fract() == 0.0 => {
                // (x^m)^n = x^(mn) for integers m, n
                if let Node::Pow(base, inner) = a.node() {
                    if let Some(m) = inner.as_const().filter(|m| m.fract() == 0.0) {
                        return Expr::pow(base.clone(), Expr::constant(m * y));
                    }
                }
            }
            _ => {}
        }
        raw(Node::Pow(a, b))
    }

    pub fn powi(a: Expr, n: i32) -> Expr {
        Expr::pow(a, Expr::constant(n as f64))
    }

    pub fn neg(a: Expr) -> Expr {
        if let Some(c) = a.as_const() {
            return Expr::constant(-c);
        }
        if let Node::Neg(inner) = a.node() {
            return inner.clone();
        }
        raw(Node::Neg(a))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(c) = a.as_const() {
            if let Some(v) = fold(f.apply(c)) {
                return v;
            }
        }
        raw(Node::Call(f, a))
    }

    pub fn atan2(y: Expr, x: Expr) -> Expr {
        if let (Some(a), Some(b)) = (y.as_const(), x.as_const()) {
            if let Some(v) = fold(a.atan2(b)) {
                return v;
            }
        }
        raw(Node::Atan2(y, x))
    }

    /// Distinct symbols occurring in the expression, sorted.
    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.key()) {
                continue;
            }
            match e.node() {
                Node::Const(_) => {}
                Node::Var(v) => {
                    out.insert(*v);
                }
                Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) | Node::Atan2(a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
                Node::Neg(a) | Node::Call(_, a) => stack.push(a.clone()),
            }
        }
        out
    }

    /// Highest derivative order of any symbol in the expression (0 if none).
    pub fn max_order(&self) -> u32 {
        self.free_vars().iter().map(|v| v.order).max().unwrap_or(0)
    }

    /// Replaces symbols according to `f`; symbols mapped to `None` are kept.
    pub fn substitute(&self, f: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        let mut memo = HashMap::new();
        rebuild(self, &mut memo, &|v| f(v).unwrap_or_else(|| Expr::var(v)))
    }

    /// Number of distinct nodes in the (shared) tree.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.key()) {
                continue;
            }
            match e.node() {
                Node::Const(_) | Node::Var(_) => {}
                Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) | Node::Atan2(a, b) => {
                    stack.push(a.clone());
                    stack.push(b.clone());
                }
                Node::Neg(a) | Node::Call(_, a) => stack.push(a.clone()),
            }
        }
        seen.len()
    }
}

fn raw(node: Node) -> Expr {
    Expr::from_node(node)
}

fn fold(v: f64) -> Option<Expr> {
    v.is_finite().then(|| Expr::constant(v))
}

/// Rebuilds the tree bottom-up through the simplifying constructors.
pub fn simplify(e: &Expr) -> Expr {
    let mut memo = HashMap::new();
    rebuild(e, &mut memo, &Expr::var)
}

fn rebuild(e: &Expr, memo: &mut HashMap<*const Node, Expr>, leaf: &dyn Fn(Var) -> Expr) -> Expr {
    if let Some(done) = memo.get(&e.key()) {
        return done.clone();
    }
    let out = match e.node() {
        Node::Const(c) => Expr::constant(*c),
        Node::Var(v) => leaf(*v),
        Node::Add(a, b) => Expr::add(rebuild(a, memo, leaf), rebuild(b, memo, leaf)),
        Node::Mul(a, b) => Expr::mul(rebuild(a, memo, leaf), rebuild(b, memo, leaf)),
        Node::Div(a, b) => Expr::div(rebuild(a, memo, leaf), rebuild(b, memo, leaf)),
        Node::Pow(a, b) => Expr::pow(rebuild(a, memo, leaf), rebuild(b, memo, leaf)),
        Node::Neg(a) => Expr::neg(rebuild(a, memo, leaf)),
        Node::Call(f, a) => Expr::call(*f, rebuild(a, memo, leaf)),
        Node::Atan2(y, x) => Expr::atan2(rebuild(y, memo, leaf), rebuild(x, memo, leaf)),
    };
    memo.insert(e.key(), out.clone());
    out
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> (SymbolTable, Var, Var) {
        let mut t = SymbolTable::new();
        let x = t.declare("x", SymbolKind::State).unwrap();
        let y = t.declare("y", SymbolKind::State).unwrap();
        (t, x, y)
    }

    #[test]
    fn zero_times_anything_plus_x() {
        let (t, x, _) = table();
        // 0*x3' + x1 -> x1, built without the simplifying constructors
        let raw_tree = raw(Node::Add(raw(Node::Mul(Expr::zero(), Expr::var(x.derivative()))), Expr::var(x)));
        let s = simplify(&raw_tree);
        assert_eq!(s, Expr::var(x));
        assert_eq!(s.to_string_with(&t), "x");
    }

    #[test]
    fn one_times_product() {
        let (t, x, y) = table();
        let inner = raw(Node::Mul(Expr::var(x), Expr::var(y)));
        let s = simplify(&raw(Node::Mul(Expr::one(), inner.clone())));
        assert_eq!(s, inner);
        assert_eq!(s.to_string_with(&t), "x*y");
    }

    #[test]
    fn folds_constant_sum() {
        let (t, x, _) = table();
        let e = raw(Node::Mul(raw(Node::Add(Expr::constant(2.0), Expr::constant(3.0))), Expr::var(x)));
        let s = simplify(&e);
        assert_eq!(s.to_string_with(&t), "5*x");
        assert_eq!(s, raw(Node::Mul(Expr::constant(5.0), Expr::var(x))));
    }

    #[test]
    fn nested_constants_fold_through_products() {
        let (_, x, _) = table();
        let e = Expr::constant(2.0) * (Expr::constant(3.0) * Expr::var(x));
        assert_eq!(e, raw(Node::Mul(Expr::constant(6.0), Expr::var(x))));
    }

    #[test]
    fn free_vars_and_order() {
        let (_, x, y) = table();
        let e = Expr::var(x.derivative().derivative()) * Expr::var(y) + Expr::var(x);
        assert_eq!(e.free_vars().len(), 3);
        assert_eq!(e.max_order(), 2);
    }
}
