use daeident::linear::{self, concise_identifiability_matrix, LinearDae};
use daeident::ranktest::{Analyzer, EvalPoint};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Semi-explicit index-1 system with `n1` differential and `n2` algebraic states.
fn index1() -> impl Strategy<Value = (LinearDae, Vec<f64>)> {
    (1..=3usize, 1..=2usize)
        .prop_flat_map(|(n1, n2)| {
            let n = n1 + n2;
            (Just((n1, n2)), proptest::collection::vec(-1.0..1.0f64, n * n), proptest::collection::vec(-1.0..1.0f64, n1), 1..=n)
        })
        .prop_filter_map("singular algebraic block", |((n1, n2), a, x1, q)| {
            let n = n1 + n2;
            let mut a = DMatrix::from_row_slice(n, n, &a);
            for i in n1..n {
                a[(i, i)] += 3.0;
            }
            let e = DMatrix::from_fn(n, n, |i, j| if i == j && i < n1 { 1.0 } else { 0.0 });
            let c = DMatrix::from_fn(q, n, |i, j| if i == j { 1.0 } else { 0.0 });
            let d = LinearDae::new(e, a, c, Some((n1, n2))).ok()?;
            d.reduction().ok()?;
            Some((d, x1))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn concise_matrix_equals_generic_stack((d, x1) in index1(), pick in any::<u64>(), mu in 0..3usize) {
        // a nonempty subset of the entries becomes theta
        let entries = d.free_entries();
        let chosen: Vec<String> = entries
            .iter()
            .enumerate()
            .filter(|(k, _)| pick >> (k % 64) & 1 == 1)
            .map(|(_, &(i, j))| linear::entry_name(d.n(), i, j))
            .collect();
        let names = if chosen.is_empty() { vec![linear::entry_name(d.n(), entries[0].0, entries[0].1)] } else { chosen };
        let d = d.with_theta(&names).unwrap();
        let model = d.to_dae_model().unwrap();
        let aug = model.augment(&d.theta_names()).unwrap();
        let pt = EvalPoint { theta: d.theta_values(), ..d.point(&x1, mu + 1).unwrap() };
        let g = Analyzer::identifiability(&aug).matrix(&pt, mu, mu).unwrap();
        let c = concise_identifiability_matrix(&d, &pt, mu).unwrap();
        let (n, p) = (d.n(), d.p());
        // the generic stack carries the theta' = 0 rows, which are zero
        let dropped: Vec<usize> = (0..(mu + 1) * (n + p)).filter(|r| r % (n + p) >= n).collect();
        for &r in &dropped {
            prop_assert!(g.row(r).iter().all(|v| *v == 0.0));
        }
        let keep: Vec<usize> = (0..g.nrows()).filter(|r| !dropped.contains(r)).collect();
        let g = g.select_rows(&keep);
        prop_assert_eq!(g.shape(), c.shape());
        prop_assert!((g - c).amax() <= 1e-12);
    }
}
