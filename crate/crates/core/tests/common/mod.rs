#![allow(dead_code)]

use kbinn::ekbf::KbinnLossConfig;
use kbinn::linalg::Mat;
use kbinn::model::{measure, sample_times, simulate, simulate_model, MeasurementSeries, NoiseSpec, ScalarLinear};
use kbinn::nets::{CovNet, MeanNet};
use kbinn::train::{identify, LrMultipliers, NetConfigs, ThetaInit, TrainConfig, TrainReport};

/// Scalar system `ẋ = a·x + w`, `y = c·x + v` with everything known.
#[derive(Clone, Copy, Debug)]
pub struct LinearCase {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub x0: f64,
    pub p0: f64,
    pub duration: f64,
    pub frequency_hz: f64,
    pub seed: u64,
}

impl Default for LinearCase {
    fn default() -> Self {
        LinearCase { a: -1.0, c: 1.0, q: 1.0, r: 0.5, x0: 1.0, p0: 1.0, duration: 5.0, frequency_hz: 100.0, seed: 7 }
    }
}

impl LinearCase {
    /// Positive root of `2aP − c²P²/r + q = 0`.
    pub fn steady_state(&self) -> f64 {
        let (a, c2, q, r) = (self.a, self.c * self.c, self.q, self.r);
        r / c2 * (a + (a * a + c2 * q / r).sqrt())
    }

    pub fn riccati_rhs(&self, p: f64) -> f64 {
        2.0 * self.a * p - self.c * self.c * p * p / self.r + self.q
    }

    pub fn series(&self) -> MeasurementSeries {
        let model = ScalarLinear::new(self.c);
        let dt = 1.0 / self.frequency_hz / 10.0;
        let traj = simulate_model(&model, &[self.a], &[self.x0], self.duration, dt).unwrap();
        let noise = NoiseSpec::isotropic(1, 0.0, 1, self.r, self.seed);
        measure(&traj, &model, &noise, &sample_times(self.frequency_hz, self.duration, false)).unwrap()
    }

    pub fn loss_config(&self) -> KbinnLossConfig {
        let noise = NoiseSpec::isotropic(1, self.q, 1, self.r, 0);
        let mut cfg = KbinnLossConfig::new(vec![self.x0], noise);
        cfg.p0 = Mat::identity(1).scale(self.p0);
        cfg
    }

    /// Reference Riccati solution on `times` by RK4 at `dt`.
    pub fn riccati_reference(&self, times: &[f64], dt: f64) -> Vec<f64> {
        let traj = simulate(|_, p| vec![self.riccati_rhs(p[0])], &[self.p0], self.duration, dt).unwrap();
        times.iter().map(|&t| traj.states[traj.step_index(t).unwrap()][0]).collect()
    }

    /// Reference Kalman-Bucy mean driven by the sampled measurements held
    /// constant between samples (the first sample is held back to `t = 0`).
    pub fn mean_reference(&self, series: &MeasurementSeries, dt: f64) -> Vec<f64> {
        let hold = |t: f64| {
            let k = series.times.partition_point(|&s| s < t - 1e-12);
            series.samples[k.min(series.len() - 1)][0]
        };
        let traj = simulate(
            |t, x| {
                let (xi, p) = (x[0], x[1]);
                let gain = p * self.c / self.r;
                vec![self.a * xi + gain * (hold(t) - self.c * xi), self.riccati_rhs(p)]
            },
            &[self.x0, self.p0],
            self.duration,
            dt,
        )
        .unwrap();
        series.times.iter().map(|&t| traj.states[traj.step_index(t).unwrap()][0]).collect()
    }

    /// Trains KBINN with `θ = a` held fixed.
    pub fn train(&self, epochs: usize) -> (TrainReport, MeanNet, CovNet, MeasurementSeries) {
        self.train_with(epochs, [1.0, 1.0, 1.0], 3e-3)
    }

    pub fn train_with(
        &self,
        epochs: usize,
        alpha: [f64; 3],
        lr: f64,
    ) -> (TrainReport, MeanNet, CovNet, MeasurementSeries) {
        let series = self.series();
        let mut loss = self.loss_config();
        loss.alpha = alpha;
        let cfg = TrainConfig {
            learning_rate: lr,
            epochs,
            theta_init: ThetaInit::Given(vec![self.a]),
            lr_multipliers: LrMultipliers { mean: 1.0, cov: 1.0, theta: 0.0 },
            seed: self.seed,
            ..TrainConfig::default()
        };
        let nets = NetConfigs { mean_hidden: vec![16, 16], cov_hidden: vec![16, 16] };
        let (rep, mean, cov) = identify(&series, &ScalarLinear::new(self.c), &loss, &cfg, &nets).unwrap();
        (rep, mean, cov, series)
    }
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn range(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Covariance-net and mean-net agreement with the reference filter.
#[derive(Clone, Copy, Debug)]
pub struct LinearOracle {
    pub psi_rms: f64,
    pub psi_range: f64,
    pub psi_end: f64,
    pub steady_state: f64,
    pub xi_rms: f64,
    pub xi_range: f64,
}

pub fn linear_oracle(case: &LinearCase, epochs: usize) -> LinearOracle {
    let (_, mean, cov, series) = case.train(epochs);
    let psi_ref = case.riccati_reference(&series.times, 1e-4);
    let psi: Vec<f64> = series.times.iter().map(|&t| cov.forward(t).unwrap().0[(0, 0)]).collect();
    let xi_ref = case.mean_reference(&series, 1e-4);
    let xi: Vec<f64> = series.times.iter().map(|&t| mean.forward(t).unwrap().0[0]).collect();
    LinearOracle {
        psi_rms: rms(&psi, &psi_ref),
        psi_range: range(&psi_ref),
        psi_end: *psi.last().unwrap(),
        steady_state: case.steady_state(),
        xi_rms: rms(&xi, &xi_ref),
        xi_range: range(&xi_ref),
    }
}
