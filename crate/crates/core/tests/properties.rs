use kbinn::bench::{Scenario, StudyConfig};
use kbinn::model::{simulate_model, DoublePendulum, DoublePendulumParams};
use proptest::prelude::*;

fn drift(p: &DoublePendulumParams, x0: &[f64; 4], dt: f64) -> f64 {
    let traj = simulate_model(&DoublePendulum::undamped(), &p.theta(), x0, 3.0, dt).unwrap();
    (p.energy(traj.last()) - p.energy(x0)).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_drift_shrinks_eightfold_when_dt_halves(
        l1 in 0.3..1.0f64,
        l2 in 0.3..1.0f64,
        ratio in 0.2..0.8f64,
        a1 in -0.8..0.8f64,
        a2 in -0.8..0.8f64,
    ) {
        let p = DoublePendulumParams::new(l1, l2, ratio);
        let x0 = [a1, 0.0, a2, 0.0];
        let coarse = drift(&p, &x0, 0.01);
        let fine = drift(&p, &x0, 0.005);
        // both below round-off means there is nothing left to shrink
        prop_assume!(coarse > 1e-11);
        prop_assert!(coarse >= 8.0 * fine, "coarse {coarse:e} fine {fine:e}");
    }

    #[test]
    fn adding_runs_keeps_earlier_scenarios(seed in 0u64..1000, index in 0usize..20) {
        let cfg = StudyConfig { seed, runs: 3, ..StudyConfig::default() };
        let more = StudyConfig { runs: 30, ..cfg.clone() };
        prop_assert_eq!(Scenario::draw(&cfg, index), Scenario::draw(&more, index));
    }

    #[test]
    fn scenarios_lie_in_the_study_box(seed in 0u64..1000, index in 0usize..50) {
        let cfg = StudyConfig { seed, ..StudyConfig::default() };
        let s = Scenario::draw(&cfg, index);
        for v in s.theta {
            prop_assert!(v > 0.0 && v < cfg.param_high);
        }
        prop_assert!(s.x0[0].abs() <= cfg.angle_range && s.x0[2].abs() <= cfg.angle_range);
        prop_assert_eq!((s.x0[1], s.x0[3]), (0.0, 0.0));
    }
}
