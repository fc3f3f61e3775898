use daeident::model::{DaeModel, ModelFile};
use daeident::ranktest::{is_one_full, numerical_rank, Analyzer, RankOptions, StopReason, Verdict};
use daeident::scenarios;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `u * v` with inner dimension `r`, giving rank at most `r`.
fn low_rank(rows: usize, cols: usize, r: usize, seed: &[f64]) -> DMatrix<f64> {
    let mut it = seed.iter().cycle().copied();
    let u = DMatrix::from_fn(rows, r, |_, _| it.next().unwrap());
    let v = DMatrix::from_fn(r, cols, |_, _| it.next().unwrap());
    u * v
}

fn block_matrix() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (3..8usize, 1..4usize, 1..4usize, 0..4usize, 0..4usize, 0..3usize, proptest::collection::vec(-1.0..1.0f64, 97))
        .prop_map(|(rows, m1, m2, r1, r2, shared, seed)| {
            let (r1, r2) = (r1.min(m1), r2.min(m2));
            let a = low_rank(rows, m1, r1, &seed);
            let mut b = low_rank(rows, m2, r2, &seed[13..]);
            // mix columns of the left block into the right one to create intersecting ranges
            for k in 0..shared.min(m2) {
                let col = a.column(k % m1).into_owned();
                let mut bk = b.column_mut(k);
                bk += col;
            }
            let mut m = DMatrix::zeros(rows, m1 + m2);
            m.columns_mut(0, m1).copy_from(&a);
            m.columns_mut(m1, m2).copy_from(&b);
            (m, m1)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Full column rank of the left block with trivially intersecting ranges
    /// is the same as the rank arithmetic `rank M = m1 + rank M2`.
    #[test]
    fn one_full_statements_agree((m, m1) in block_matrix()) {
        let tol = 1e-9;
        let left = m.columns(0, m1).into_owned();
        let right = m.columns(m1, m.ncols() - m1).into_owned();
        let (r, rl, rr) = (numerical_rank(&m, tol).unwrap(), numerical_rank(&left, tol).unwrap(), numerical_rank(&right, tol).unwrap());
        let statement2 = rl == m1 && r == rl + rr;
        let of = is_one_full(&m, m1, tol).unwrap();
        prop_assert_eq!(of.one_full, statement2);
        prop_assert_eq!((of.rank, of.rank_right), (r, rr));
    }
}

fn reactor() -> DaeModel {
    scenarios::load("reactor").unwrap().model_for("x2").unwrap()
}

fn reactor_points(stride: usize) -> Vec<daeident::ranktest::EvalPoint> {
    let s = scenarios::load("reactor").unwrap();
    let tr = s.trajectory(5, Some((0.0, 4.0)), None).unwrap();
    s.points(&tr, &s.theta_values("Tc").unwrap(), stride).unwrap()
}

/// The reactor with every residual row multiplied by `c`.
fn scaled(m: &DaeModel, c: f64) -> DaeModel {
    let mut file: ModelFile = m.to_file();
    let table = m.symbols();
    let rows = m.implicit_residuals().iter().map(|e| format!("({c:e})*({})", e.to_string_with(table))).collect();
    file.f1 = None;
    file.f2 = None;
    file.implicit = Some(rows);
    DaeModel::from_file(&file).unwrap()
}

#[test]
fn rank_grows_with_order_and_loop_stops_on_a_plateau() {
    let m = reactor();
    let aug = m.augment(&["Tc"]).unwrap();
    for an in [Analyzer::observability(&m), Analyzer::identifiability(&aug)] {
        for pt in reactor_points(800) {
            let opts = RankOptions::default();
            let mut prev = 0;
            for k in 0..=4 {
                let r = an.test_at(&pt, k, k, &opts).unwrap();
                assert!(r.rank_full >= prev, "rank dropped at order {k}");
                assert!(r.rank_right <= r.rank_full && r.rank_full <= r.rank_right + an.left_dim());
                assert_eq!(r.verdict == Verdict::Satisfied, r.rank_full == r.required);
                prev = r.rank_full;
            }
            let r = an.check(&pt, &opts).unwrap();
            if r.stop == StopReason::Stabilized {
                let before = an.test_at(&pt, r.mu - 1, r.nu - 1, &opts).unwrap();
                assert_eq!(before.rank_full, r.rank_full);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scaling_residual_rows_keeps_the_verdict(c in 0.1..10.0f64) {
        let m = reactor();
        let s = scaled(&m, c);
        let (a, b) = (m.augment(&["Tc"]).unwrap(), s.augment(&["Tc"]).unwrap());
        let (ia, ib) = (Analyzer::identifiability(&a), Analyzer::identifiability(&b));
        let (oa, ob) = (Analyzer::observability(&m), Analyzer::observability(&s));
        for pt in reactor_points(400) {
            let opts = RankOptions::default();
            let (x, y) = (ia.check(&pt, &opts).unwrap(), ib.check(&pt, &opts).unwrap());
            prop_assert_eq!(x.verdict, y.verdict);
            prop_assert_eq!(x.rank_full, y.rank_full);
            let obs_pt = daeident::ranktest::EvalPoint { theta: vec![], ..pt.clone() };
            let (x, y) = (oa.check(&obs_pt, &opts).unwrap(), ob.check(&obs_pt, &opts).unwrap());
            prop_assert_eq!(x.verdict, y.verdict);
            prop_assert_eq!(x.rank_full, y.rank_full);
        }
    }
}
