mod common;

use common::{linear_oracle, LinearCase};
use kbinn::ekbf::{Kbinn, KbinnLossConfig};
use kbinn::linalg::Mat;
use kbinn::model::{MeasurementSeries, NoiseSpec, ScalarLinear, SeriesMeta};
use kbinn::train::{identify, NetConfigs, ThetaInit, TrainConfig, TrainMode};

#[test]
fn trained_nets_follow_the_kalman_bucy_filter() {
    let case = LinearCase::default();
    let o = linear_oracle(&case, 4000);
    assert!(o.psi_rms <= 0.1 * o.psi_range, "{o:?}");
    assert!((o.psi_end - o.steady_state).abs() <= 0.05 * o.steady_state, "{o:?}");
    assert!(o.xi_rms <= 0.1 * o.xi_range, "{o:?}");
}

fn decay_series(theta: f64) -> MeasurementSeries {
    let times: Vec<f64> = (1..=100).map(|k| k as f64 * 0.02).collect();
    let samples = times.iter().map(|&t| vec![(theta * t).exp()]).collect();
    MeasurementSeries::new(times, samples, SeriesMeta::default()).unwrap()
}

#[test]
fn pinn_identifies_exponential_decay() {
    let series = decay_series(-1.0);
    let loss = KbinnLossConfig::new(vec![1.0], NoiseSpec::isotropic(1, 1e-2, 1, 0.1, 0));
    let cfg = TrainConfig {
        mode: TrainMode::Pinn,
        learning_rate: 5e-3,
        epochs: 3000,
        theta_init: ThetaInit::Given(vec![0.0]),
        ..TrainConfig::default()
    };
    let nets = NetConfigs { mean_hidden: vec![16, 16], cov_hidden: vec![4] };
    let (rep, ..) = identify(&series, &ScalarLinear::new(1.0), &loss, &cfg, &nets).unwrap();
    assert!((rep.theta_hat[0] + 1.0).abs() < 0.02, "{:?}", rep.theta_hat);
    let h = &rep.history;
    let down = h.windows(2).filter(|w| w[1].total <= w[0].total).count();
    assert!(down as f64 >= 0.95 * (h.len() - 1) as f64, "{down} of {}", h.len() - 1);
}

#[test]
fn frozen_steady_state_has_zero_covariance_residual() {
    let case = LinearCase::default();
    let p = case.steady_state();
    assert!(case.riccati_rhs(p).abs() < 1e-12);
    let model = ScalarLinear::new(case.c);
    let loss = case.loss_config();
    let k = Kbinn::new(&model, &loss).unwrap();
    let mats = kbinn::ekbf::linearize(&model, &[0.3], 1.0, &[case.a], &loss.noise).unwrap();
    let terms =
        k.point_terms(1.0, &[0.3], &[0.0], &Mat::identity(1).scale(p), &Mat::zeros(1, 1), &[case.a], &[0.3]).unwrap();
    assert!(terms.l2.abs() < 1e-12, "{}", terms.l2);
    assert!(kbinn::ekbf::riccati_rhs(&Mat::identity(1).scale(p), &mats).unwrap()[(0, 0)].abs() < 1e-12);
}
