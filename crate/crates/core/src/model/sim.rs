use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MeasurementSeries, NoiseSpec, SeriesMeta, StateSpaceModel};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// States at every integrator step, starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index of the step at time `t`, if `t` lies on the integrator grid.
    pub fn step_index(&self, t: f64) -> Option<usize> {
        let k = t / self.dt;
        let r = k.round();
        if (k - r).abs() > 1e-6 || r < 0.0 || r as usize >= self.len() {
            None
        } else {
            Some(r as usize)
        }
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Classical fixed-step RK4 of `ẋ = rhs(t, x)` over `[0, duration]`.
pub fn simulate<F>(rhs: F, x0: &[f64], duration: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) || !(duration >= dt) {
        return Err(Error::Config(format!("need dt > 0 and duration >= dt (dt = {dt}, duration = {duration})")));
    }
    let steps = (duration / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(0.0);
    states.push(x.clone());
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k1));
        let k3 = rhs(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k2));
        let k4 = rhs(t + dt, &axpy(&x, dt, &k3));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        times.push((k + 1) as f64 * dt);
        states.push(x.clone());
    }
    Ok(Trajectory { dt, times, states })
}

/// Noise-free simulation of a model at parameters `theta`.
pub fn simulate_model<M: StateSpaceModel>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    duration: f64,
    dt: f64,
) -> Result<Trajectory> {
    simulate(|t, x| model.rhs(x, t, theta), x0, duration, dt)
}

/// Largest step `≤ max_dt` that divides the sampling period `1/frequency`.
pub fn aligned_dt(frequency_hz: f64, max_dt: f64) -> f64 {
    let period = 1.0 / frequency_hz;
    let k = (period / max_dt - 1e-9).ceil().max(1.0);
    period / k
}

/// Sample instants `k/f` for `k = 1..=round(duration·f)`, i.e. on `(0, duration]`,
/// optionally preceded by `t = 0`.
pub fn sample_times(frequency_hz: f64, duration: f64, include_zero: bool) -> Vec<f64> {
    let n = (duration * frequency_hz).round() as usize;
    let start = if include_zero { 0 } else { 1 };
    (start..=n).map(|k| k as f64 / frequency_hz).collect()
}

/// Symmetric square root of a PSD matrix (`L·Lᵀ = R`).
fn psd_sqrt(r: &Mat<f64>) -> Mat<f64> {
    let n = r.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, r.as_slice());
    let eig = m.symmetric_eigen();
    let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let l = &eig.eigenvectors * d;
    Mat::from_fn(n, n, |i, j| l[(i, j)])
}

/// Samples `g(x(tᵢ), u, 0, tᵢ) + vᵢ` with `vᵢ ~ N(0, R)`, seeded from `noise.seed`.
///
/// Sample instants must fall on the trajectory's step grid.
pub fn measure<M: StateSpaceModel>(
    trajectory: &Trajectory,
    model: &M,
    noise: &NoiseSpec,
    times: &[f64],
) -> Result<MeasurementSeries> {
    noise.validate(false)?;
    let q = model.output_dim();
    if noise.r.rows() != q {
        return Err(Error::Config(format!("R is {}×{}, output dimension is {q}", noise.r.rows(), noise.r.cols())));
    }
    let l = psd_sqrt(&noise.r);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        let k = trajectory.step_index(t).ok_or_else(|| {
            Error::Config(format!(
                "sample instant {t} is not on the simulation grid (dt = {}); refusing to interpolate",
                trajectory.dt
            ))
        })?;
        let mut y = model.clean_output(&trajectory.states[k], t);
        let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = l.matvec(&z);
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi += vi;
        }
        samples.push(y);
    }
    let frequency_hz = if times.len() >= 2 { 1.0 / (times[1] - times[0]) } else { 0.0 };
    let meta =
        SeriesMeta { frequency_hz, r_diag: Some((0..q).map(|i| noise.r[(i, i)]).collect()), ..Default::default() };
    MeasurementSeries::new(times.to_vec(), samples, meta)
}
