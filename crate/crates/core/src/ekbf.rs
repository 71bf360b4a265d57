//! Loss functions built from the extended Kalman-Bucy filter.
//!
//! The mean network must satisfy the filter's mean ODE, the covariance network
//! its Riccati ODE, and the pair must explain the measurements through a
//! Gaussian likelihood:
//!
//! ```text
//! L1ᵢ = ‖ξ(0) − x̂₀‖₂ + ‖ξ̇(tᵢ) − f(ξ, u, 0, tᵢ, θ̂) − K·(ȳᵢ − g(ξ, u, 0, tᵢ))‖₂
//! L2ᵢ = ‖ψ(0) − P̂₀‖_F + ‖ψ̇(tᵢ) − (Âψ + ψÂᵀ − ψĈᵀR̂⁻¹Ĉψ + Q̂)‖_F
//! L3ᵢ = −Σⱼ log N(ȳᵢⱼ; μⱼ, σ²ⱼ)
//! J   = Σᵢ α₁L1ᵢ + α₂L2ᵢ + α₃L3ᵢ
//! ```
//!
//! with `K = ψĈᵀR̂⁻¹`. Everything is generic over [`Real`] so the same code
//! gives loss values on floats and gradients on a [`Tape`].

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jacobian_dual, norm2, sum_sq, Dual, GradientStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{MeasurementKind, MeasurementSeries, NoiseSpec, StateSpaceModel};
use crate::nets::{assemble_psd, psd_with_derivative, tri_len, CovNet, MeanNet};

/// Linearized filter matrices at the current mean estimate.
#[derive(Clone, Debug)]
pub struct FilterMatrices<S> {
    /// ∂f/∂x
    pub a_hat: Mat<S>,
    /// ∂g/∂x
    pub c_hat: Mat<S>,
    /// ∂f/∂w
    pub g_hat: Mat<S>,
    /// ∂g/∂v
    pub v_hat: Mat<S>,
    /// Ĝ·Q·Ĝᵀ
    pub q_hat: Mat<S>,
    /// V̂·R·V̂ᵀ
    pub r_hat: Mat<S>,
}

/// Weights, initial conditions and noise covariances of the KBINN loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbinnLossConfig {
    pub alpha: [f64; 3],
    /// Initial mean `x̂₀`.
    pub x0: Vec<f64>,
    /// Initial covariance `P̂₀`.
    pub p0: Mat<f64>,
    pub noise: NoiseSpec,
    /// Count the initial-condition terms once instead of in every `Lᵢ`.
    pub ic_once: bool,
    /// Use squared norms for the residual terms.
    pub squared_residuals: bool,
}

impl KbinnLossConfig {
    /// Unit weights and `P̂₀ = R` (or `r̄·I` when `R` is not `n × n`).
    pub fn new(x0: Vec<f64>, noise: NoiseSpec) -> Self {
        let n = x0.len();
        let p0 = if noise.r.rows() == n {
            noise.r.clone()
        } else {
            let mean_r = (0..noise.r.rows()).map(|i| noise.r[(i, i)]).sum::<f64>() / noise.r.rows().max(1) as f64;
            Mat::identity(n).scale(mean_r)
        };
        KbinnLossConfig { alpha: [1.0; 3], x0, p0, noise, ic_once: false, squared_residuals: false }
    }

    pub fn validate<M: StateSpaceModel>(&self, model: &M) -> Result<()> {
        let n = model.state_dim();
        if self.alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config(format!("loss weights must be positive, got {:?}", self.alpha)));
        }
        if self.x0.len() != n {
            return Err(Error::Config(format!("x0 has length {}, state dimension is {n}", self.x0.len())));
        }
        if self.p0.rows() != n || self.p0.cols() != n {
            return Err(Error::Config(format!("P0 must be {n}×{n}")));
        }
        let min_eig = self.p0.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-12 || self.p0.max_abs_diff(&self.p0.transpose()) > 1e-12 {
            return Err(Error::Config("P0 must be symmetric positive semidefinite".into()));
        }
        if self.noise.q.rows() != model.process_noise_dim() {
            return Err(Error::Config(format!("Q must be {0}×{0}", model.process_noise_dim())));
        }
        if self.noise.r.rows() != model.measurement_noise_dim() {
            return Err(Error::Config(format!("R must be {0}×{0}", model.measurement_noise_dim())));
        }
        self.noise.validate(true)
    }
}

/// Summed loss terms and optionally their per-point values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1_sum: f64,
    pub l2_sum: f64,
    pub l3_sum: f64,
    /// `N × 3` rows of `(L1ᵢ, L2ᵢ, L3ᵢ)`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_point: Option<Vec<[f64; 3]>>,
}

impl LossBreakdown {
    /// Sums per-point rows in index order.
    pub fn from_points(alpha: [f64; 3], rows: Vec<[f64; 3]>) -> Self {
        let (mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0);
        for r in &rows {
            l1 += r[0];
            l2 += r[1];
            l3 += r[2];
        }
        LossBreakdown {
            total: alpha[0] * l1 + alpha[1] * l2 + alpha[2] * l3,
            l1_sum: l1,
            l2_sum: l2,
            l3_sum: l3,
            per_point: Some(rows),
        }
    }
}

/// Gradient of a loss with respect to both networks and `θ̂`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossGradient {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub theta: Vec<f64>,
}

fn lift<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::cst(x)).collect()
}

/// `Â, Ĉ, Ĝ, V̂` by forward-mode differentiation at `(mean, u(t), 0, t, θ̂)`,
/// plus `Q̂ = ĜQĜᵀ` and `R̂ = V̂RV̂ᵀ`.
pub fn linearize<S: Real, M: StateSpaceModel>(
    model: &M,
    mean: &[S],
    t: f64,
    theta: &[S],
    noise: &NoiseSpec,
) -> Result<FilterMatrices<S>> {
    if mean.iter().any(|x| !x.value().is_finite()) {
        return Err(Error::Numerical(format!("mean estimate is not finite at t = {t}")));
    }
    let u: Vec<S> = lift(&model.input(t));
    let w0 = vec![S::zero(); model.process_noise_dim()];
    let v0 = vec![S::zero(); model.measurement_noise_dim()];
    let ts = S::cst(t);
    let konst = |v: &[S]| -> Vec<Dual<S>> { v.iter().map(|&x| Dual::constant(x)).collect() };
    let (ud, thd, xd, wd, vd) = (konst(&u), konst(theta), konst(mean), konst(&w0), konst(&v0));
    let td = Dual::constant(ts);

    let a_hat = jacobian_dual(|x: &[Dual<S>]| model.dynamics(x, &ud, &wd, td, &thd), mean);
    let (g_hat, v_hat) = if model.additive_noise() {
        let (g, v) = noise_jacobians(model, &value_of(mean), t, &value_of(theta));
        (Mat::lift(&g), Mat::lift(&v))
    } else {
        (
            jacobian_dual(|w: &[Dual<S>]| model.dynamics(&xd, &ud, w, td, &thd), &w0),
            jacobian_dual(|v: &[Dual<S>]| model.output(&xd, &ud, v, td), &v0),
        )
    };
    let c_hat = match model.measurement() {
        MeasurementKind::LinearAdditive(c) => Mat::lift(&c),
        MeasurementKind::Nonlinear => jacobian_dual(|x: &[Dual<S>]| model.output(x, &ud, &vd, td), mean),
    };
    let q = Mat::lift(&noise.q);
    let r = Mat::lift(&noise.r);
    let q_hat = &(&g_hat * &q) * &g_hat.transpose();
    let r_hat = &(&v_hat * &r) * &v_hat.transpose();
    Ok(FilterMatrices { a_hat, c_hat, g_hat, v_hat, q_hat, r_hat })
}

fn value_of<S: Real>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.value()).collect()
}

fn noise_jacobians<M: StateSpaceModel>(model: &M, x: &[f64], t: f64, theta: &[f64]) -> (Mat<f64>, Mat<f64>) {
    let u: Vec<Dual<f64>> = model.input(t).into_iter().map(Dual::constant).collect();
    let xd: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let thd: Vec<Dual<f64>> = theta.iter().map(|&v| Dual::constant(v)).collect();
    let td = Dual::constant(t);
    let w0 = vec![0.0; model.process_noise_dim()];
    let v0 = vec![0.0; model.measurement_noise_dim()];
    (
        jacobian_dual(|w: &[Dual<f64>]| model.dynamics(&xd, &u, w, td, &thd), &w0),
        jacobian_dual(|v: &[Dual<f64>]| model.output(&xd, &u, v, td), &v0),
    )
}

/// `K = P·Ĉᵀ·R̂⁻¹`.
pub fn kalman_gain<S: Real>(p: &Mat<S>, mats: &FilterMatrices<S>) -> Result<Mat<S>> {
    let r_inv = mats.r_hat.inverse()?;
    Ok(&(p * &mats.c_hat.transpose()) * &r_inv)
}

/// Right-hand side of the Riccati equation,
/// `ÂP + PÂᵀ − PĈᵀR̂⁻¹ĈP + Q̂`.
pub fn riccati_rhs<S: Real>(p: &Mat<S>, mats: &FilterMatrices<S>) -> Result<Mat<S>> {
    let gain = kalman_gain(p, mats)?;
    Ok(riccati_rhs_with_gain(p, &gain, mats))
}

fn riccati_rhs_with_gain<S: Real>(p: &Mat<S>, gain: &Mat<S>, mats: &FilterMatrices<S>) -> Mat<S> {
    let ap = &mats.a_hat * p;
    let pat = ap.transpose();
    let kcp = &(gain * &mats.c_hat) * p;
    &(&(&ap + &pat) - &kcp) + &mats.q_hat
}

/// Right-hand side of the filter mean equation, `f(ξ,u,0,t,θ̂) + K·(ȳ − g(ξ,u,0,t))`.
pub fn mean_rhs<S: Real, M: StateSpaceModel>(
    model: &M,
    mean: &[S],
    t: f64,
    theta: &[S],
    gain: &Mat<S>,
    y_bar: &[f64],
) -> Vec<S> {
    let u: Vec<S> = lift(&model.input(t));
    let w0 = vec![S::zero(); model.process_noise_dim()];
    let v0 = vec![S::zero(); model.measurement_noise_dim()];
    let f = model.dynamics(mean, &u, &w0, S::cst(t), theta);
    let y_hat = model.output(mean, &u, &v0, S::cst(t));
    let innovation: Vec<S> = y_bar.iter().zip(&y_hat).map(|(&y, &yh)| -yh + y).collect();
    let correction = gain.matvec(&innovation);
    f.into_iter().zip(correction).map(|(a, b)| a + b).collect()
}

/// Closed-form mean and variance of `g(x, u, v)` for `x ~ N(ξ, ψ)`,
/// `v ~ N(0, R)`; only linear-additive outputs are supported.
pub fn propagate_moments<S: Real, M: StateSpaceModel>(
    mean: &[S],
    cov: &Mat<S>,
    model: &M,
    r_hat: &Mat<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    let c = match model.measurement() {
        MeasurementKind::LinearAdditive(c) => Mat::<S>::lift(&c),
        MeasurementKind::Nonlinear => return Err(Error::UnsupportedMeasurement),
    };
    let mu = c.matvec(mean);
    let ccov = &(&c * cov) * &c.transpose();
    let sigma2 = (0..c.rows()).map(|j| ccov[(j, j)] + r_hat[(j, j)]).collect();
    Ok((mu, sigma2))
}

/// Gaussian negative log-likelihood summed over output channels.
pub fn loss_l3<S: Real>(mu: &[S], sigma2: &[S], y_bar: &[f64]) -> Result<S> {
    let mut acc = S::zero();
    for ((&m, &s2), &y) in mu.iter().zip(sigma2).zip(y_bar) {
        if !(s2.value() > 0.0) {
            return Err(Error::Numerical(format!("predictive variance {} is not positive", s2.value())));
        }
        let r = -m + y;
        acc = acc + (s2 * (2.0 * PI)).ln() * 0.5 + r * r / (s2 * 2.0);
    }
    Ok(acc)
}

fn residual_norm<S: Real>(v: &[S], squared: bool) -> S {
    if squared {
        sum_sq(v)
    } else {
        norm2(v)
    }
}

/// Dynamic parts of `(L1ᵢ, L2ᵢ, L3ᵢ)` at one collocation point (no
/// initial-condition terms).
#[derive(Clone, Copy, Debug)]
pub struct PointTerms<S> {
    pub l1: S,
    pub l2: S,
    pub l3: S,
}

/// The KBINN loss for one model and configuration.
#[derive(Clone, Copy, Debug)]
pub struct Kbinn<'a, M> {
    pub model: &'a M,
    pub config: &'a KbinnLossConfig,
}

impl<'a, M: StateSpaceModel> Kbinn<'a, M> {
    pub fn new(model: &'a M, config: &'a KbinnLossConfig) -> Result<Self> {
        config.validate(model)?;
        Ok(Kbinn { model, config })
    }

    /// Residual terms at `t` from the networks' values and time derivatives.
    #[allow(clippy::too_many_arguments)]
    pub fn point_terms<S: Real>(
        &self,
        t: f64,
        xi: &[S],
        xi_dot: &[S],
        psi: &Mat<S>,
        psi_dot: &Mat<S>,
        theta: &[S],
        y_bar: &[f64],
    ) -> Result<PointTerms<S>> {
        let sq = self.config.squared_residuals;
        let mats = linearize(self.model, xi, t, theta, &self.config.noise)?;
        let gain = kalman_gain(psi, &mats)?;
        let xi_rhs = mean_rhs(self.model, xi, t, theta, &gain, y_bar);
        let r1: Vec<S> = xi_dot.iter().zip(&xi_rhs).map(|(&a, &b)| a - b).collect();
        let psi_rhs = riccati_rhs_with_gain(psi, &gain, &mats);
        let r2 = psi_dot - &psi_rhs;
        let (mu, sigma2) = propagate_moments(xi, psi, self.model, &mats.r_hat)?;
        Ok(PointTerms {
            l1: residual_norm(&r1, sq),
            l2: residual_norm(r2.as_slice(), sq),
            l3: loss_l3(&mu, &sigma2, y_bar)?,
        })
    }

    /// `(‖ξ(0) − x̂₀‖, ‖ψ(0) − P̂₀‖_F)`.
    pub fn ic_terms<S: Real>(&self, xi0: &[S], psi0: &Mat<S>) -> (S, S) {
        let sq = self.config.squared_residuals;
        let d1: Vec<S> = xi0.iter().zip(&self.config.x0).map(|(&a, &b)| a - b).collect();
        let d2 = psi0 - &Mat::lift(&self.config.p0);
        (residual_norm(&d1, sq), residual_norm(d2.as_slice(), sq))
    }

    /// How many times the initial-condition terms are counted.
    fn ic_weight(&self, n_points: usize) -> f64 {
        if self.config.ic_once {
            1.0
        } else {
            n_points as f64
        }
    }

    /// `L1ᵢ` at one instant, initial-condition term included.
    pub fn loss_l1(&self, mean_net: &MeanNet, cov_net: &CovNet, theta: &[f64], t: f64, y_bar: &[f64]) -> Result<f64> {
        let (xi0, _) = mean_net.forward(0.0)?;
        let (psi0, _) = cov_net.forward(0.0)?;
        let (ic1, _) = self.ic_terms(&xi0, &psi0);
        let (xi, xi_dot) = mean_net.forward(t)?;
        let (psi, psi_dot) = cov_net.forward(t)?;
        Ok(ic1 + self.point_terms(t, &xi, &xi_dot, &psi, &psi_dot, theta, y_bar)?.l1)
    }

    /// `L2ᵢ` at one instant given filter matrices evaluated there.
    pub fn loss_l2(&self, cov_net: &CovNet, mats: &FilterMatrices<f64>, t: f64) -> Result<f64> {
        let (psi0, _) = cov_net.forward(0.0)?;
        let (psi, psi_dot) = cov_net.forward(t)?;
        let d0 = &psi0 - &self.config.p0;
        let r = &psi_dot - &riccati_rhs(&psi, mats)?;
        let sq = self.config.squared_residuals;
        Ok(residual_norm(d0.as_slice(), sq) + residual_norm(r.as_slice(), sq))
    }

    fn check_series(&self, series: &MeasurementSeries) -> Result<()> {
        if series.is_empty() {
            return Err(Error::Config("measurement series is empty".into()));
        }
        if series.output_dim() != self.model.output_dim() {
            return Err(Error::Config(format!(
                "series has {} output channels, model has {}",
                series.output_dim(),
                self.model.output_dim()
            )));
        }
        Ok(())
    }

    /// Total loss with per-point breakdown, evaluated on floats.
    pub fn loss_total(
        &self,
        mean_net: &MeanNet,
        cov_net: &CovNet,
        theta: &[f64],
        series: &MeasurementSeries,
    ) -> Result<LossBreakdown> {
        self.check_series(series)?;
        let n = self.model.state_dim();
        let times = with_origin(&series.times);
        let mt = mean_net.net.forward_batch(&times)?;
        let ct = cov_net.net.forward_batch(&times)?;
        let (psi0, _) = psd_with_derivative(&row(&ct.value, 0), &row(&ct.tangent, 0), n)?;
        let (ic1, ic2) = self.ic_terms(&row(&mt.value, 0), &psi0);
        let rows = (0..series.len())
            .into_par_iter()
            .map(|i| {
                let (psi, psi_dot) = psd_with_derivative(&row(&ct.value, i + 1), &row(&ct.tangent, i + 1), n)?;
                let p = self.point_terms(
                    series.times[i],
                    &row(&mt.value, i + 1),
                    &row(&mt.tangent, i + 1),
                    &psi,
                    &psi_dot,
                    theta,
                    &series.samples[i],
                )?;
                Ok([p.l1, p.l2, p.l3])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.assemble_breakdown(rows, ic1, ic2))
    }

    fn assemble_breakdown(&self, mut rows: Vec<[f64; 3]>, ic1: f64, ic2: f64) -> LossBreakdown {
        if self.config.ic_once {
            rows[0][0] += ic1;
            rows[0][1] += ic2;
        } else {
            for r in &mut rows {
                r[0] += ic1;
                r[1] += ic2;
            }
        }
        LossBreakdown::from_points(self.config.alpha, rows)
    }

    /// Total loss and its gradient with respect to both weight vectors and
    /// `θ̂`. Points are evaluated in parallel, each on a private tape; all
    /// reductions run in index order, so results do not depend on the
    /// thread count.
    pub fn loss_and_gradient(
        &self,
        mean_net: &MeanNet,
        cov_net: &CovNet,
        theta: &[f64],
        series: &MeasurementSeries,
    ) -> Result<(LossBreakdown, LossGradient)> {
        self.check_series(series)?;
        let n = self.model.state_dim();
        let m = tri_len(n);
        let d = theta.len();
        let alpha = self.config.alpha;
        let times = with_origin(&series.times);
        let mt = mean_net.net.forward_batch(&times)?;
        let ct = cov_net.net.forward_batch(&times)?;
        let npts = series.len();

        let points: Vec<PointGrad> = (0..npts)
            .into_par_iter()
            .map_init(
                || (Tape::with_capacity(4096), GradientStore::default()),
                |(tape, store), i| {
                    tape.clear();
                    self.point_gradient(
                        tape,
                        store,
                        series.times[i],
                        (&row(&mt.value, i + 1), &row(&mt.tangent, i + 1)),
                        (&row(&ct.value, i + 1), &row(&ct.tangent, i + 1)),
                        theta,
                        &series.samples[i],
                    )
                },
            )
            .collect::<Result<Vec<_>>>()?;

        // Initial-condition terms, weighted by how often they are counted.
        let w_ic = self.ic_weight(npts);
        let tape = Tape::new();
        let xi0: Vec<Var> = row(&mt.value, 0).iter().map(|&v| tape.var(v)).collect();
        let raw0: Vec<Var> = row(&ct.value, 0).iter().map(|&v| tape.var(v)).collect();
        let psi0 = assemble_psd(&raw0, n)?;
        let (ic1, ic2) = self.ic_terms(&xi0, &psi0);
        let ic_obj = ic1 * (alpha[0] * w_ic) + ic2 * (alpha[1] * w_ic);

        let mut gv_mean = Array2::zeros((npts + 1, n));
        let gt_mean = {
            let mut g = Array2::zeros((npts + 1, n));
            for (i, p) in points.iter().enumerate() {
                for k in 0..n {
                    gv_mean[(i + 1, k)] = p.g_mean_value[k];
                    g[(i + 1, k)] = p.g_mean_tangent[k];
                }
            }
            g
        };
        let mut gv_cov = Array2::zeros((npts + 1, m));
        let mut gt_cov = Array2::zeros((npts + 1, m));
        for (i, p) in points.iter().enumerate() {
            for k in 0..m {
                gv_cov[(i + 1, k)] = p.g_cov_value[k];
                gt_cov[(i + 1, k)] = p.g_cov_tangent[k];
            }
        }
        if let Some(id) = ic_obj.id() {
            let g = tape.backward(id)?;
            for k in 0..n {
                gv_mean[(0, k)] = g.wrt(xi0[k]);
            }
            for k in 0..m {
                gv_cov[(0, k)] = g.wrt(raw0[k]);
            }
        }

        let mut grad = LossGradient {
            mean: vec![0.0; mean_net.net.params.len()],
            cov: vec![0.0; cov_net.net.params.len()],
            theta: vec![0.0; d],
        };
        mean_net.net.backward_batch(&mt, &gv_mean, &gt_mean, &mut grad.mean);
        cov_net.net.backward_batch(&ct, &gv_cov, &gt_cov, &mut grad.cov);
        for p in &points {
            for k in 0..d {
                grad.theta[k] += p.g_theta[k];
            }
        }
        let rows = points.iter().map(|p| p.terms).collect();
        Ok((self.assemble_breakdown(rows, ic1.value(), ic2.value()), grad))
    }

    #[allow(clippy::too_many_arguments)]
    fn point_gradient(
        &self,
        tape: &Tape,
        store: &mut GradientStore,
        t: f64,
        mean: (&[f64], &[f64]),
        cov: (&[f64], &[f64]),
        theta: &[f64],
        y_bar: &[f64],
    ) -> Result<PointGrad> {
        let n = self.model.state_dim();
        let alpha = self.config.alpha;
        // Leaves carry the networks' time derivatives as tangents.
        let xi: Vec<Var> = mean.0.iter().zip(mean.1).map(|(&v, &dv)| tape.var_with_tangent(v, dv)).collect();
        let raw: Vec<Var> = cov.0.iter().zip(cov.1).map(|(&v, &dv)| tape.var_with_tangent(v, dv)).collect();
        let th: Vec<Var> = theta.iter().map(|&v| tape.var(v)).collect();
        let xi_dot: Vec<Var> = xi.iter().map(|x| x.tangent_var()).collect();
        let psi = assemble_psd(&raw, n)?;
        let psi_dot = psi.map(Var::tangent_var);
        let terms = self.point_terms(t, &xi, &xi_dot, &psi, &psi_dot, &th, y_bar)?;
        let obj = terms.l1 * alpha[0] + terms.l2 * alpha[1] + terms.l3 * alpha[2];
        let values = [terms.l1.value(), terms.l2.value(), terms.l3.value()];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss terms {values:?} at t = {t}")));
        }
        match obj.id() {
            Some(id) => tape.backward_into(id, store)?,
            None => *store = GradientStore::default(),
        }
        Ok(PointGrad {
            terms: values,
            g_mean_value: xi.iter().map(|&v| store.wrt(v)).collect(),
            g_mean_tangent: xi.iter().map(|&v| store.wrt_tangent(v)).collect(),
            g_cov_value: raw.iter().map(|&v| store.wrt(v)).collect(),
            g_cov_tangent: raw.iter().map(|&v| store.wrt_tangent(v)).collect(),
            g_theta: th.iter().map(|&v| store.wrt(v)).collect(),
        })
    }
}

struct PointGrad {
    terms: [f64; 3],
    g_mean_value: Vec<f64>,
    g_mean_tangent: Vec<f64>,
    g_cov_value: Vec<f64>,
    g_cov_tangent: Vec<f64>,
    g_theta: Vec<f64>,
}

fn with_origin(times: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(times.len() + 1);
    t.push(0.0);
    t.extend_from_slice(times);
    t
}

fn row(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

/// Plain PINN loss for noise-free data,
/// `Σᵢ ‖π̇(tᵢ) − f(π, u, 0, tᵢ, θ̂)‖² + ‖g(π, u, 0, tᵢ) − ȳᵢ‖²`.
pub fn loss_pinn<M: StateSpaceModel>(
    mean_net: &MeanNet,
    theta: &[f64],
    series: &MeasurementSeries,
    model: &M,
) -> Result<f64> {
    let tr = mean_net.net.forward_batch(&series.times)?;
    let mut total = 0.0;
    for i in 0..series.len() {
        total +=
            pinn_point(model, series.times[i], &row(&tr.value, i), &row(&tr.tangent, i), theta, &series.samples[i]);
    }
    Ok(total)
}

fn pinn_point<S: Real, M: StateSpaceModel>(model: &M, t: f64, x: &[S], x_dot: &[S], theta: &[S], y_bar: &[f64]) -> S {
    let u: Vec<S> = lift(&model.input(t));
    let w0 = vec![S::zero(); model.process_noise_dim()];
    let v0 = vec![S::zero(); model.measurement_noise_dim()];
    let f = model.dynamics(x, &u, &w0, S::cst(t), theta);
    let y = model.output(x, &u, &v0, S::cst(t));
    let r1: Vec<S> = x_dot.iter().zip(&f).map(|(&a, &b)| a - b).collect();
    let r2: Vec<S> = y.iter().zip(y_bar).map(|(&a, &b)| a - b).collect();
    sum_sq(&r1) + sum_sq(&r2)
}

/// PINN loss and its gradient with respect to the network weights and `θ̂`.
pub fn loss_pinn_and_gradient<M: StateSpaceModel>(
    mean_net: &MeanNet,
    theta: &[f64],
    series: &MeasurementSeries,
    model: &M,
) -> Result<(f64, LossGradient)> {
    let n = model.state_dim();
    let tr = mean_net.net.forward_batch(&series.times)?;
    let per_point: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = (0..series.len())
        .into_par_iter()
        .map_init(Tape::new, |tape, i| {
            tape.clear();
            let x: Vec<Var> = (0..n).map(|k| tape.var_with_tangent(tr.value[(i, k)], tr.tangent[(i, k)])).collect();
            let th: Vec<Var> = theta.iter().map(|&v| tape.var(v)).collect();
            let x_dot: Vec<Var> = x.iter().map(|v| v.tangent_var()).collect();
            let obj = pinn_point(model, series.times[i], &x, &x_dot, &th, &series.samples[i]);
            let g = match obj.id() {
                Some(id) => tape.backward(id)?,
                None => GradientStore::default(),
            };
            Ok((
                obj.value(),
                x.iter().map(|&v| g.wrt(v)).collect(),
                x.iter().map(|&v| g.wrt_tangent(v)).collect(),
                th.iter().map(|&v| g.wrt(v)).collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gv = Array2::zeros((series.len(), n));
    let mut gt = Array2::zeros((series.len(), n));
    let mut grad =
        LossGradient { mean: vec![0.0; mean_net.net.params.len()], cov: Vec::new(), theta: vec![0.0; theta.len()] };
    let mut total = 0.0;
    for (i, (v, a, b, c)) in per_point.into_iter().enumerate() {
        total += v;
        for k in 0..n {
            gv[(i, k)] = a[k];
            gt[(i, k)] = b[k];
        }
        for (g, ck) in grad.theta.iter_mut().zip(c) {
            *g += ck;
        }
    }
    mean_net.net.backward_batch(&tr, &gv, &gt, &mut grad.mean);
    Ok((total, grad))
}
