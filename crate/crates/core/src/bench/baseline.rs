//! Output-error shooting baseline: integrate the model from the known initial
//! state and fit `θ` by Levenberg-Marquardt on the output residuals.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{aligned_dt, simulate_model, MeasurementSeries, StateSpaceModel};
use crate::train::ParamTransform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub max_iterations: usize,
    /// Initial Levenberg-Marquardt damping.
    pub lambda: f64,
    /// Forward-difference step in the unconstrained parameter space.
    pub fd_step: f64,
    /// Stop when the relative cost decrease of an accepted step drops below this.
    pub tol: f64,
    /// Upper bound on the integrator step.
    pub max_dt: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { max_iterations: 100, lambda: 1e-2, fd_step: 1e-6, tol: 1e-10, max_dt: 1e-4 }
    }
}

/// Outcome of one identification, shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentResult {
    pub method: String,
    pub theta_hat: Vec<f64>,
    pub theta_init: Vec<f64>,
    /// `|θ̂ − θ_true|` when the truth is known.
    pub abs_err: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    pub wall_time_s: f64,
}

impl IdentResult {
    pub fn with_truth(mut self, truth: Option<&[f64]>) -> Self {
        self.abs_err = truth.map(|t| self.theta_hat.iter().zip(t).map(|(a, b)| (a - b).abs()).collect());
        self
    }
}

/// Stacked output residuals `y(tᵢ; θ) − ȳᵢ`, or `None` when the trial
/// trajectory blows up.
fn residuals<M: StateSpaceModel>(
    model: &M,
    series: &MeasurementSeries,
    x0: &[f64],
    theta: &[f64],
    dt: f64,
) -> Option<Vec<f64>> {
    let traj = simulate_model(model, theta, x0, series.t_max(), dt).ok()?;
    let mut r = Vec::with_capacity(series.len() * series.output_dim());
    for (t, y_bar) in series.times.iter().zip(&series.samples) {
        let k = traj.step_index(*t)?;
        let y = model.clean_output(&traj.states[k], *t);
        r.extend(y.iter().zip(y_bar).map(|(a, b)| a - b));
    }
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `Σᵢ ‖y(tᵢ; θ) − ȳᵢ‖²` over `θ`, with `y` from RK4 integration of
/// `model` starting at `x0`.
///
/// The Jacobian comes from forward differences. Trials that diverge or do
/// not reduce the cost are rejected and the damping is increased, which
/// moves the step towards scaled gradient descent. When the iteration cap
/// is hit the best point so far is returned with `converged = false`.
pub fn baseline_identify<M: StateSpaceModel>(
    series: &MeasurementSeries,
    model: &M,
    x0: &[f64],
    init_theta: &[f64],
    config: &BaselineConfig,
) -> Result<IdentResult> {
    let start = Instant::now();
    if series.len() < 2 {
        return Err(Error::Config("baseline needs at least two samples".into()));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::Config(format!("x0 has length {}, state dimension is {}", x0.len(), model.state_dim())));
    }
    let transform = ParamTransform::new(model.params());
    let dt = aligned_dt(series.inferred_frequency(), config.max_dt);
    let mut z = transform.inverse(init_theta)?;
    let mut r = residuals(model, series, x0, &transform.forward(&z), dt)
        .ok_or_else(|| Error::Numerical("model diverges at the initial parameters".into()))?;
    let mut c = cost(&r);
    let mut lambda = config.lambda;
    let d = z.len();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        // Forward-difference Jacobian in the unconstrained space.
        let mut jac: Vec<Vec<f64>> = Vec::with_capacity(d);
        for j in 0..d {
            let h = config.fd_step * z[j].abs().max(1.0);
            let mut zp = z.clone();
            zp[j] += h;
            let col = match residuals(model, series, x0, &transform.forward(&zp), dt) {
                Some(rp) => rp.iter().zip(&r).map(|(a, b)| (a - b) / h).collect(),
                None => vec![0.0; r.len()],
            };
            jac.push(col);
        }
        let jtj = Mat::from_fn(d, d, |a, b| jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum::<f64>());
        let jtr: Vec<f64> = jac.iter().map(|col| col.iter().zip(&r).map(|(x, y)| x * y).sum()).collect();

        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..d {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Ok(inv) = a.inverse() else {
                lambda *= 10.0;
                continue;
            };
            let step = inv.matvec(&jtr);
            let z_trial: Vec<f64> = z.iter().zip(&step).map(|(zi, s)| zi - s).collect();
            match residuals(model, series, x0, &transform.forward(&z_trial), dt) {
                Some(r_trial) if cost(&r_trial) < c => {
                    let c_trial = cost(&r_trial);
                    let rel = (c - c_trial) / c.max(f64::MIN_POSITIVE);
                    z = z_trial;
                    r = r_trial;
                    c = c_trial;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < config.tol {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left at any damping: a local minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(IdentResult {
        method: "baseline".into(),
        theta_hat: transform.forward(&z),
        theta_init: init_theta.to_vec(),
        abs_err: None,
        converged,
        iterations,
        final_loss: c,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{measure, sample_times, simulate_model, DoublePendulum, NoiseSpec, ScalarLinear};

    #[test]
    fn recovers_scalar_decay_rate() {
        let truth = -1.0;
        let times: Vec<f64> = (1..=100).map(|k| k as f64 * 0.02).collect();
        let samples = times.iter().map(|t: &f64| vec![(truth * t).exp()]).collect();
        let series = MeasurementSeries::new(times, samples, Default::default()).unwrap();
        let res =
            baseline_identify(&series, &ScalarLinear::new(1.0), &[1.0], &[0.0], &BaselineConfig::default()).unwrap();
        assert!((res.theta_hat[0] - truth).abs() < 1e-3, "{:?}", res.theta_hat);
    }

    #[test]
    fn stays_at_the_truth_on_clean_pendulum_data() {
        let model = DoublePendulum::undamped();
        let theta = [0.6, 0.9, 0.57];
        let x0 = [0.5, 0.0, -0.3, 0.0];
        let traj = simulate_model(&model, &theta, &x0, 1.0, 1e-3).unwrap();
        let series =
            measure(&traj, &model, &NoiseSpec::isotropic(4, 0.0, 4, 0.0, 0), &sample_times(100.0, 1.0, false)).unwrap();
        let cfg = BaselineConfig { max_dt: 1e-3, ..BaselineConfig::default() };
        let res = baseline_identify(&series, &model, &x0, &theta, &cfg).unwrap();
        for (a, b) in res.theta_hat.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let series = MeasurementSeries::new(vec![0.1, 0.2], vec![vec![1.0], vec![1.0]], Default::default()).unwrap();
        let model = ScalarLinear::new(1.0);
        assert!(baseline_identify(&series, &model, &[1.0, 2.0], &[0.0], &BaselineConfig::default()).is_err());
    }
}
