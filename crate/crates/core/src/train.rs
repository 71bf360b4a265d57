//! Joint optimization of the mean network, the covariance network and `θ̂`.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ekbf::{loss_pinn, loss_pinn_and_gradient, Kbinn, KbinnLossConfig, LossBreakdown, LossGradient};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{MeasurementSeries, ParamDomain, ParamMeta, StateSpaceModel};
use crate::nets::{tri_len, CovNet, MeanNet, MlpConfig};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Which loss drives identification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Kbinn,
    /// Single network, squared ODE and data residuals; meant for noise-free data.
    Pinn,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaInit {
    /// Midpoint of each parameter's declared bounds.
    #[default]
    Midpoint,
    /// Uniform within the declared bounds, seeded.
    Uniform,
    Given(Vec<f64>),
}

/// Learning-rate multipliers per variable group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrMultipliers {
    pub mean: f64,
    pub cov: f64,
    pub theta: f64,
}

impl Default for LrMultipliers {
    fn default() -> Self {
        LrMultipliers { mean: 1.0, cov: 1.0, theta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Factor applied to the learning rate after `plateau_patience` epochs
    /// without a new best loss; 1 disables decay.
    pub lr_decay: f64,
    pub plateau_patience: usize,
    /// Lower bound for the decayed learning rate.
    pub min_learning_rate: f64,
    /// Maximum global gradient norm.
    pub grad_clip: Option<f64>,
    pub lr_multipliers: LrMultipliers,
    /// Epochs at the start during which `θ̂` is held fixed while the
    /// networks fit the data.
    pub theta_warmup: usize,
    /// Leave the dynamics residual `L1` out of the loss during the warm-up,
    /// so the mean network fits the measurements without being pulled
    /// towards dynamics with the initial `θ̂`.
    pub warmup_without_dynamics: bool,
    pub seed: u64,
    /// Retrain from fresh weights (and doubled learning rate) when a run has
    /// not settled.
    pub restarts: usize,
    /// Number of points appended by constant-slope extrapolation of the
    /// measurements; 0 disables it.
    pub extrapolate_tail: usize,
    /// Collocation points drawn per epoch; `None` uses every point.
    pub batch_size: Option<usize>,
    /// With minibatches, the loss on the whole series is evaluated every
    /// this many epochs and at the last one. The best snapshot and the
    /// plateau decay use these evaluations instead of the noisy batch loss.
    pub full_eval_every: usize,
    pub theta_init: ThetaInit,
    /// A run counts as converged when `θ̂` moves by less than this
    /// (relative) over the last tenth of the epochs.
    pub converge_rtol: f64,
    pub ic_once: bool,
    pub squared_residuals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            mode: TrainMode::Kbinn,
            learning_rate: 1e-3,
            epochs: 20_000,
            lr_decay: 1.0,
            plateau_patience: 500,
            min_learning_rate: 1e-6,
            grad_clip: None,
            lr_multipliers: LrMultipliers::default(),
            theta_warmup: 0,
            warmup_without_dynamics: false,
            seed: 0,
            restarts: 0,
            extrapolate_tail: 0,
            batch_size: None,
            full_eval_every: 100,
            theta_init: ThetaInit::Midpoint,
            converge_rtol: 1e-2,
            ic_once: false,
            squared_residuals: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        let m = self.lr_multipliers;
        if [m.mean, m.cov, m.theta].iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("learning-rate multipliers must be finite and non-negative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.full_eval_every == 0 {
            return Err(Error::Config("full_eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Hidden-layer sizes of both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfigs {
    pub mean_hidden: Vec<usize>,
    pub cov_hidden: Vec<usize>,
}

impl Default for NetConfigs {
    fn default() -> Self {
        NetConfigs { mean_hidden: MlpConfig::default_hidden(), cov_hidden: MlpConfig::default_hidden() }
    }
}

/// Maps constrained parameters to unconstrained optimizer variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTransform {
    pub kinds: Vec<ParamDomain>,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ParamTransform {
    pub fn new(meta: &[ParamMeta]) -> Self {
        ParamTransform { kinds: meta.iter().map(|m| m.domain).collect() }
    }

    /// Raw → constrained.
    pub fn forward(&self, raw: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(raw)
            .map(|(k, &z)| match k {
                ParamDomain::Real => z,
                ParamDomain::Positive => z.exp(),
                ParamDomain::UnitInterval => logistic(z),
            })
            .collect()
    }

    /// Constrained → raw.
    pub fn inverse(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.kinds
            .iter()
            .zip(theta)
            .map(|(k, &x)| match k {
                ParamDomain::Real => Ok(x),
                ParamDomain::Positive if x > 0.0 => Ok(x.ln()),
                ParamDomain::UnitInterval if x > 0.0 && x < 1.0 => Ok((x / (1.0 - x)).ln()),
                _ => Err(Error::Config(format!("parameter value {x} is outside its {k:?} domain"))),
            })
            .collect()
    }

    /// `dθ/draw`, elementwise.
    pub fn derivative(&self, raw: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(raw)
            .map(|(k, &z)| match k {
                ParamDomain::Real => 1.0,
                ParamDomain::Positive => z.exp(),
                ParamDomain::UnitInterval => {
                    let s = logistic(z);
                    s * (1.0 - s)
                }
            })
            .collect()
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
    }
}

/// Appends `horizon` points continuing each channel's last slope at the
/// final sampling period. The new rows are flagged synthetic.
pub fn extrapolate_tail(series: &MeasurementSeries, horizon: usize) -> Result<MeasurementSeries> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Config("extrapolation needs at least two samples".into()));
    }
    let mut out = series.clone();
    let dt = series.times[n - 1] - series.times[n - 2];
    let slope: Vec<f64> = series.samples[n - 1].iter().zip(&series.samples[n - 2]).map(|(a, b)| (a - b) / dt).collect();
    for k in 1..=horizon {
        let h = k as f64 * dt;
        out.times.push(series.times[n - 1] + h);
        out.samples.push(series.samples[n - 1].iter().zip(&slope).map(|(y, s)| y + s * h).collect());
        out.synthetic.push(true);
    }
    out.validate()?;
    Ok(out)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub theta_hat: Vec<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub theta_hat: Vec<f64>,
    pub theta_init: Vec<f64>,
    /// Records of the attempt that produced `theta_hat`.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub wall_time_s: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

/// Trains both networks and `θ̂` on `series`; see [`identify_with_log`].
pub fn identify<M: StateSpaceModel>(
    series: &MeasurementSeries,
    model: &M,
    loss_config: &KbinnLossConfig,
    train_config: &TrainConfig,
    nets: &NetConfigs,
) -> Result<(TrainReport, MeanNet, CovNet)> {
    identify_with_log(series, model, loss_config, train_config, nets, &mut |_| {})
}

/// Trains and calls `log` after every epoch. Returns the lowest-loss
/// snapshot. With restarts enabled, unsettled runs are retried with fresh
/// weights and a doubled learning rate; the best attempt is kept.
pub fn identify_with_log<M: StateSpaceModel>(
    series: &MeasurementSeries,
    model: &M,
    loss_config: &KbinnLossConfig,
    train_config: &TrainConfig,
    nets: &NetConfigs,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<(TrainReport, MeanNet, CovNet)> {
    train_config.validate()?;
    if series.is_empty() {
        return Err(Error::Config("measurement series is empty".into()));
    }
    let mut loss_config = loss_config.clone();
    loss_config.ic_once = train_config.ic_once;
    loss_config.squared_residuals = train_config.squared_residuals;
    if train_config.mode == TrainMode::Kbinn {
        loss_config.validate(model)?;
    }
    let data = if train_config.extrapolate_tail > 0 {
        extrapolate_tail(series, train_config.extrapolate_tail)?
    } else {
        series.clone()
    };

    let start = Instant::now();
    let mut best: Option<(TrainReport, MeanNet, CovNet)> = None;
    let mut lr = train_config.learning_rate;
    for attempt in 0..=train_config.restarts {
        let seed =
            if attempt == 0 { train_config.seed } else { derive_seed(train_config.seed, "restart", attempt as u64) };
        let (mut report, mean, cov) = train_once(&data, model, &loss_config, train_config, nets, seed, lr, log)?;
        report.restarts_used = attempt;
        let better = best.as_ref().is_none_or(|(b, _, _)| {
            (report.converged && !b.converged) || (report.converged == b.converged && report.best_loss < b.best_loss)
        });
        let done = report.converged;
        if better {
            best = Some((report, mean, cov));
        }
        if done {
            break;
        }
        lr *= 2.0;
    }
    let (mut report, mean, cov) = best.expect("at least one attempt runs");
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((report, mean, cov))
}

fn initial_theta(meta: &[ParamMeta], init: &ThetaInit, seed: u64) -> Result<Vec<f64>> {
    match init {
        ThetaInit::Midpoint => Ok(meta.iter().map(ParamMeta::midpoint).collect()),
        ThetaInit::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "theta-init", 0));
            Ok(meta
                .iter()
                .map(|m| {
                    let (lo, hi) = (m.lower, m.upper);
                    // keep strictly inside open domains
                    let pad = 1e-3 * (hi - lo);
                    rng.gen_range(lo + pad..hi - pad)
                })
                .collect())
        }
        ThetaInit::Given(v) => {
            if v.len() != meta.len() {
                return Err(Error::Config(format!("initial θ has {} entries, model has {}", v.len(), meta.len())));
            }
            Ok(v.clone())
        }
    }
}

/// Sets the output biases of `cov` to the triangular factor of `p0`, so
/// `ψ` starts near `P̂₀` and the diagonal of `U` starts away from zero.
/// A diagonal entry of `U` that has to pass through zero pins `ψ`
/// to a singular matrix on the way, which training rarely escapes.
fn start_at_covariance(cov: &mut CovNet, p0: &Mat<f64>) {
    let n = p0.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, p0.as_slice());
    let u = match m.clone().cholesky() {
        Some(c) => c.l().transpose(),
        None => nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { m[(i, i)].max(0.0).sqrt() } else { 0.0 }),
    };
    let len = cov.net.params.len();
    let bias = &mut cov.net.params[len - tri_len(n)..];
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            bias[idx] = u[(i, j)];
            idx += 1;
        }
    }
}

fn global_norm(g: &LossGradient) -> f64 {
    g.mean.iter().chain(&g.cov).chain(&g.theta).map(|x| x * x).sum::<f64>().sqrt()
}

fn scale_grad(g: &mut LossGradient, s: f64) {
    g.mean.iter_mut().chain(g.cov.iter_mut()).chain(g.theta.iter_mut()).for_each(|x| *x *= s);
}

/// Picks the epoch's collocation subset, or `None` for the whole series.
fn batch_for_epoch(data: &MeasurementSeries, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Option<MeasurementSeries> {
    let b = batch?;
    if b >= data.len() {
        return None;
    }
    let mut idx = sample(rng, data.len(), b).into_vec();
    idx.sort_unstable();
    let mut s = data.clone();
    s.times = idx.iter().map(|&i| data.times[i]).collect();
    s.samples = idx.iter().map(|&i| data.samples[i].clone()).collect();
    s.synthetic = idx.iter().map(|&i| data.synthetic[i]).collect();
    Some(s)
}

#[allow(clippy::too_many_arguments)]
fn train_once<M: StateSpaceModel>(
    data: &MeasurementSeries,
    model: &M,
    loss_config: &KbinnLossConfig,
    cfg: &TrainConfig,
    nets: &NetConfigs,
    seed: u64,
    lr0: f64,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<(TrainReport, MeanNet, CovNet)> {
    let n = model.state_dim();
    let span = (0.0, data.t_max());
    let mut mean = MeanNet::new(n, nets.mean_hidden.clone(), span, derive_seed(seed, "mean-net", 0))?;
    let mut cov = CovNet::new(n, nets.cov_hidden.clone(), span, derive_seed(seed, "cov-net", 0))?;
    if cfg.mode == TrainMode::Kbinn {
        start_at_covariance(&mut cov, &loss_config.p0);
    }
    let transform = ParamTransform::new(model.params());
    let theta_init = initial_theta(model.params(), &cfg.theta_init, seed)?;
    let mut raw = transform.inverse(&theta_init)?;
    let full_kbinn = Kbinn { model, config: loss_config };
    let mut warm_config = loss_config.clone();
    warm_config.alpha[0] = 0.0;
    let warm_kbinn = Kbinn { model, config: &warm_config };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "batches", 0));

    let mut adam_mean = AdamState::new(mean.net.params.len());
    let mut adam_cov = AdamState::new(cov.net.params.len());
    let mut adam_theta = AdamState::new(raw.len());
    let mut lr = lr0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_state = (mean.clone(), cov.clone(), transform.forward(&raw));
    let mut since_best = 0;
    let mut bad_streak = 0;

    for epoch in 0..cfg.epochs {
        let warming = cfg.warmup_without_dynamics && epoch < cfg.theta_warmup;
        if cfg.warmup_without_dynamics && epoch == cfg.theta_warmup {
            // the objective changes here; earlier losses are not comparable
            best_loss = f64::INFINITY;
            since_best = 0;
        }
        let kbinn = if warming { &warm_kbinn } else { &full_kbinn };
        let theta = transform.forward(&raw);
        let batch = batch_for_epoch(data, cfg.batch_size, &mut rng);
        let used = batch.as_ref().unwrap_or(data);
        let weight = data.len() as f64 / used.len() as f64;
        let evaluated = match cfg.mode {
            TrainMode::Kbinn => kbinn.loss_and_gradient(&mean, &cov, &theta, used),
            TrainMode::Pinn => loss_pinn_and_gradient(&mean, &theta, used, model).map(|(j, g)| {
                let b = LossBreakdown { total: j, l1_sum: j, l2_sum: 0.0, l3_sum: 0.0, per_point: None };
                (b, g)
            }),
        };
        let (breakdown, mut grad) = match evaluated {
            Ok((b, g)) if b.total.is_finite() && global_norm(&g).is_finite() => (b, g),
            Ok(_) | Err(Error::Numerical(_)) | Err(Error::NonFiniteActivation { .. }) | Err(Error::Singular(_)) => {
                bad_streak += 1;
                if bad_streak >= 10 {
                    return Err(Error::TrainingDiverged { epochs: bad_streak });
                }
                // Step back to the best weights with a smaller step.
                mean = best_state.0.clone();
                cov = best_state.1.clone();
                raw = transform.inverse(&best_state.2)?;
                lr = (lr * 0.5).max(cfg.min_learning_rate);
                continue;
            }
            Err(e) => return Err(e),
        };
        bad_streak = 0;
        scale_grad(&mut grad, weight);
        let total = breakdown.total * weight;

        let record = EpochRecord {
            epoch,
            l1: breakdown.l1_sum * weight,
            l2: breakdown.l2_sum * weight,
            l3: breakdown.l3_sum * weight,
            total,
            theta_hat: theta.clone(),
            lr,
        };
        log(&record);
        history.push(record);

        let tracked = if batch.is_none() {
            Some(total)
        } else if epoch % cfg.full_eval_every == 0 || epoch + 1 == cfg.epochs {
            let full = match cfg.mode {
                TrainMode::Kbinn => kbinn.loss_total(&mean, &cov, &theta, data).map(|b| b.total),
                TrainMode::Pinn => loss_pinn(&mean, &theta, data, model),
            };
            full.ok().filter(|v| v.is_finite())
        } else {
            None
        };
        if let Some(total) = tracked.filter(|&v| v < best_loss) {
            best_loss = total;
            best_epoch = epoch;
            best_state = (mean.clone(), cov.clone(), theta.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.lr_decay < 1.0 && since_best >= cfg.plateau_patience {
                lr = (lr * cfg.lr_decay).max(cfg.min_learning_rate);
                since_best = 0;
            }
        }

        if let Some(c) = cfg.grad_clip {
            let norm = global_norm(&grad);
            if norm > c {
                scale_grad(&mut grad, c / norm);
            }
        }
        let dtheta = transform.derivative(&raw);
        let g_raw: Vec<f64> = grad.theta.iter().zip(&dtheta).map(|(g, d)| g * d).collect();
        let m = cfg.lr_multipliers;
        adam_step(&mut mean.net.params, &grad.mean, &mut adam_mean, lr * m.mean);
        if cfg.mode == TrainMode::Kbinn {
            adam_step(&mut cov.net.params, &grad.cov, &mut adam_cov, lr * m.cov);
        }
        if epoch >= cfg.theta_warmup {
            adam_step(&mut raw, &g_raw, &mut adam_theta, lr * m.theta);
        }
    }

    let converged = settled(&history, cfg.converge_rtol);
    let (mean, cov, theta_hat) = best_state;
    let report = TrainReport {
        theta_hat,
        theta_init,
        history,
        best_epoch,
        best_loss,
        wall_time_s: 0.0,
        converged,
        restarts_used: 0,
    };
    Ok((report, mean, cov))
}

/// Whether `θ̂` moved by less than `rtol` (relative) over the last tenth of
/// the run.
fn settled(history: &[EpochRecord], rtol: f64) -> bool {
    let Some(last) = history.last() else {
        return false;
    };
    if !last.total.is_finite() {
        return false;
    }
    let window = (history.len() / 10).max(1);
    let first = &history[history.len() - window.min(history.len())];
    first.theta_hat.iter().zip(&last.theta_hat).all(|(a, b)| (a - b).abs() <= rtol * b.abs().max(1e-3))
}
