use daeident::expr::{diff_partial, diff_total, evaluate, simplify, Expr, Func, SymbolKind, SymbolTable, Var};
use proptest::prelude::*;

/// Expression shape drawn by proptest, turned into an [`Expr`] over `x, y`.
#[derive(Clone, Debug)]
enum T {
    X,
    Y,
    C(f64),
    Add(Box<T>, Box<T>),
    Sub(Box<T>, Box<T>),
    Mul(Box<T>, Box<T>),
    /// `a / (2 + sin b)` keeps the denominator away from zero.
    Div(Box<T>, Box<T>),
    Sq(Box<T>),
    Neg(Box<T>),
    F(Func, Box<T>),
}

fn tree(polynomial: bool) -> impl Strategy<Value = T> {
    let leaf = prop_oneof![Just(T::X), Just(T::Y), (-2.0..2.0f64).prop_map(T::C)];
    leaf.prop_recursive(4, 24, 2, move |inner| {
        let b = |t: T| Box::new(t);
        let mut options = vec![
            (inner.clone(), inner.clone()).prop_map(move |(a, c)| T::Add(b(a), b(c))).boxed(),
            (inner.clone(), inner.clone()).prop_map(move |(a, c)| T::Sub(b(a), b(c))).boxed(),
            (inner.clone(), inner.clone()).prop_map(move |(a, c)| T::Mul(b(a), b(c))).boxed(),
            inner.clone().prop_map(move |a| T::Sq(b(a))).boxed(),
            inner.clone().prop_map(move |a| T::Neg(b(a))).boxed(),
        ];
        if !polynomial {
            options.push((inner.clone(), inner.clone()).prop_map(move |(a, c)| T::Div(b(a), b(c))).boxed());
            let f = prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Atan)];
            options.push((f, inner.clone()).prop_map(move |(f, a)| T::F(f, b(a))).boxed());
        }
        proptest::strategy::Union::new(options)
    })
}

struct Vars {
    table: SymbolTable,
    x: Var,
    y: Var,
}

fn vars() -> Vars {
    let mut table = SymbolTable::new();
    let x = table.declare("x", SymbolKind::State).unwrap();
    let y = table.declare("y", SymbolKind::State).unwrap();
    Vars { table, x, y }
}

fn build(t: &T, v: &Vars) -> Expr {
    match t {
        T::X => Expr::var(v.x),
        T::Y => Expr::var(v.y),
        T::C(c) => Expr::constant(*c),
        T::Add(a, b) => build(a, v) + build(b, v),
        T::Sub(a, b) => build(a, v) - build(b, v),
        T::Mul(a, b) => build(a, v) * build(b, v),
        T::Div(a, b) => build(a, v) / (Expr::constant(2.0) + Expr::call(Func::Sin, build(b, v))),
        T::Sq(a) => Expr::powi(build(a, v), 2),
        T::Neg(a) => -build(a, v),
        T::F(f, a) => Expr::call(*f, build(a, v)),
    }
}

fn eval_at(e: &Expr, vals: &[(Var, f64)]) -> f64 {
    let lookup = |q: Var| vals.iter().find(|(w, _)| *w == q).map(|(_, x)| *x);
    evaluate(e, &lookup).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn partial_derivative_matches_central_difference(t in tree(false), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let v = vars();
        let e = build(&t, &v);
        let d = diff_partial(&e, v.x);
        let h = 1e-6 * x.abs().max(1.0);
        let f = |s: f64| eval_at(&e, &[(v.x, s), (v.y, y)]);
        let fd = (f(x + h) - f(x - h)) / (2.0 * h);
        let exact = eval_at(&d, &[(v.x, x), (v.y, y)]);
        let scale = 1.0f64.max(exact.abs()).max(f(x).abs());
        prop_assert!((fd - exact).abs() <= 1e-6 * scale, "{fd} vs {exact}");
    }

    #[test]
    fn simplify_preserves_value(t in tree(false), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let v = vars();
        let e = build(&t, &v);
        let s = simplify(&e);
        let at = [(v.x, x), (v.y, y)];
        let (a, b) = (eval_at(&e, &at), eval_at(&s, &at));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn total_and_partial_derivatives_commute(t in tree(true), p in proptest::array::uniform4(-1.0..1.0f64)) {
        let v = vars();
        let e = build(&t, &v);
        let (xd, yd) = (v.x.derivative(), v.y.derivative());
        let at = [(v.x, p[0]), (v.y, p[1]), (xd, p[2]), (yd, p[3])];
        let a = eval_at(&diff_total(&diff_partial(&e, v.x), &v.table), &at);
        let b = eval_at(&diff_partial(&diff_total(&e, &v.table), v.x), &at);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        // the cross term: d/dx' of the total derivative is de/dx
        let c = eval_at(&diff_partial(&diff_total(&e, &v.table), xd), &at);
        let d = eval_at(&diff_partial(&e, v.x), &at);
        prop_assert!((c - d).abs() <= 1e-10 * c.abs().max(1.0), "{c} vs {d}");
    }
}

#[test]
fn simplify_on_a_thousand_pairs() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let v = vars();
    for _ in 0..1000 {
        let t = tree(false).new_tree(&mut runner).unwrap().current();
        let x = (-1.0..1.0f64).new_tree(&mut runner).unwrap().current();
        let y = (-1.0..1.0f64).new_tree(&mut runner).unwrap().current();
        let e = build(&t, &v);
        let at = [(v.x, x), (v.y, y)];
        let (a, b) = (eval_at(&e, &at), eval_at(&simplify(&e), &at));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}
