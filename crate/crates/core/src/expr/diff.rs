use std::collections::HashMap;

use super::{Expr, Func, Node, SymbolKind, SymbolTable, Var};

/// Chain-rule differentiator parametrized by the derivative of each leaf symbol.
///
/// Results are memoized per shared node, so differentiating a DAG costs time
/// proportional to its number of distinct nodes.
pub struct Differentiator<L> {
    leaf: L,
    // the key expression is retained so its address cannot be reused while memoized
    memo: HashMap<usize, (Expr, Expr)>,
}

impl<L: Fn(Var) -> Expr> Differentiator<L> {
    pub fn new(leaf: L) -> Self {
        Self { leaf, memo: HashMap::new() }
    }

    pub fn diff(&mut self, e: &Expr) -> Expr {
        if let Some((_, d)) = self.memo.get(&(e.key() as usize)) {
            return d.clone();
        }
        let d = match e.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(v) => (self.leaf)(*v),
            Node::Add(a, b) => {
                let (da, db) = (self.diff(a), self.diff(b));
                da + db
            }
            Node::Mul(a, b) => {
                let (da, db) = (self.diff(a), self.diff(b));
                da * b.clone() + a.clone() * db
            }
            Node::Div(a, b) => {
                let (da, db) = (self.diff(a), self.diff(b));
                // (a/b)' = (a' - (a/b) b') / b keeps the power of b from
                // doubling with every further derivative
                if db.is_zero() {
                    if da.is_zero() {
                        Expr::zero()
                    } else {
                        Expr::div(da, b.clone())
                    }
                } else {
                    Expr::div(da - e.clone() * db, b.clone())
                }
            }
            Node::Pow(a, b) => {
                let da = self.diff(a);
                match b.as_const() {
                    Some(n) => {
                        if da.is_zero() {
                            Expr::zero()
                        } else {
                            Expr::constant(n) * Expr::pow(a.clone(), Expr::constant(n - 1.0)) * da
                        }
                    }
                    None => {
                        let db = self.diff(b);
                        // (a^b)' = a^b (b' ln a + b a'/a)
                        let t1 = if db.is_zero() { Expr::zero() } else { db * Expr::call(Func::Log, a.clone()) };
                        let t2 = if da.is_zero() { Expr::zero() } else { Expr::div(b.clone() * da, a.clone()) };
                        let inner = t1 + t2;
                        if inner.is_zero() {
                            Expr::zero()
                        } else {
                            e.clone() * inner
                        }
                    }
                }
            }
            Node::Neg(a) => -self.diff(a),
            Node::Call(f, a) => {
                let da = self.diff(a);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    outer_derivative(*f, a, e) * da
                }
            }
            Node::Atan2(y, x) => {
                let (dy, dx) = (self.diff(y), self.diff(x));
                if dy.is_zero() && dx.is_zero() {
                    Expr::zero()
                } else {
                    let num = x.clone() * dy - y.clone() * dx;
                    let den = Expr::powi(x.clone(), 2) + Expr::powi(y.clone(), 2);
                    Expr::div(num, den)
                }
            }
        };
        self.memo.insert(e.key() as usize, (e.clone(), d.clone()));
        d
    }
}

fn outer_derivative(f: Func, a: &Expr, whole: &Expr) -> Expr {
    match f {
        Func::Sin => Expr::call(Func::Cos, a.clone()),
        Func::Cos => -Expr::call(Func::Sin, a.clone()),
        Func::Tan => Expr::one() + Expr::powi(whole.clone(), 2),
        Func::Atan => Expr::div(Expr::one(), Expr::one() + Expr::powi(a.clone(), 2)),
        Func::Exp => whole.clone(),
        Func::Log => Expr::div(Expr::one(), a.clone()),
        Func::Sqrt => Expr::div(Expr::constant(0.5), whole.clone()),
    }
}

/// Exact partial derivative with respect to `s`; every other symbol
/// (including other derivative orders of the same base) is independent.
pub fn diff_partial(e: &Expr, s: Var) -> Expr {
    let leaf = move |v: Var| if v == s { Expr::one() } else { Expr::zero() };
    Differentiator::new(leaf).diff(e)
}

/// Total time derivative: every symbol of order k contributes through its
/// order k+1 symbol and a time symbol differentiates to one.
pub fn diff_total(e: &Expr, table: &SymbolTable) -> Expr {
    diff_total_with(e, table, &|_| false)
}

/// Like [`diff_total`], but symbols for which `constant` returns true have a
/// zero time derivative.
pub fn diff_total_with(e: &Expr, table: &SymbolTable, constant: &dyn Fn(Var) -> bool) -> Expr {
    let leaf = |v: Var| {
        if table.base_kind(v) == SymbolKind::Time && v.order == 0 {
            Expr::one()
        } else if constant(v) {
            Expr::zero()
        } else {
            Expr::var(v.derivative())
        }
    };
    Differentiator::new(leaf).diff(e)
}
