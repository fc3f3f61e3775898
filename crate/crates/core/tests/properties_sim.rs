use daeident::scenarios;
use daeident::sim::consistency_residual;

#[test]
fn stored_states_satisfy_the_constraints_over_the_full_span() {
    for name in ["reactor", "pendulum", "linear4"] {
        let s = scenarios::load(name).unwrap();
        let tr = s.trajectory(1, None, None).unwrap();
        assert!(tr.max_residual() <= 1e-10, "{name}: {}", tr.max_residual());
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let m = s.model().unwrap();
        if m.is_semi_explicit() {
            for x in tr.states.iter().step_by(97) {
                assert!(consistency_residual(&m, x, None).unwrap() <= 1e-10, "{name}");
            }
        }
    }
}

