//! Fully connected networks of time: the state-mean network `ξ(t)` and the
//! covariance network `ψ(t)`.
//!
//! Every evaluation returns the output together with its exact time
//! derivative. Training uses the batched path ([`Mlp::forward_batch`] /
//! [`Mlp::backward_batch`]), which propagates (value, tangent) pairs through
//! the layers and back. [`Mlp::eval_real`] evaluates one point over any
//! [`Real`] scalar and serves as the reference route.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, DualScalar, Real};
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpConfig {
    pub fn new(hidden_layers: Vec<usize>, output_dim: usize) -> Self {
        MlpConfig {
            input_dim: 1,
            hidden_layers,
            output_dim,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Linear,
        }
    }

    /// Three hidden layers of 32 neurons.
    pub fn default_hidden() -> Vec<usize> {
        vec![32, 32, 32]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 1 {
            return Err(Error::Config(format!("networks take one time input, got input_dim = {}", self.input_dim)));
        }
        if self.output_dim == 0 || self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("network layer sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`) and zero biases.
pub fn init_weights(config: &MlpConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.param_count());
    for (fan_in, fan_out) in config.layer_shapes() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
        out.extend(std::iter::repeat_n(0.0, fan_out));
    }
    out
}

/// Multilayer perceptron `t ↦ ℝᵐ` with tanh hidden layers and a linear output.
///
/// The input is mapped affinely from `[t_min, t_max]` to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub time_scale: (f64, f64),
    /// Per layer: weights (fan_out × fan_in, row-major), then biases.
    pub params: Vec<f64>,
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    /// Input activations of each layer (B × fan_in) and their time tangents.
    inputs: Vec<Array2<f64>>,
    input_tangents: Vec<Array2<f64>>,
    /// Tangents of hidden pre-activations.
    pre_tangents: Vec<Array2<f64>>,
    /// Network outputs (B × m) and their time derivatives.
    pub value: Array2<f64>,
    pub tangent: Array2<f64>,
}

impl Mlp {
    pub fn new(config: MlpConfig, time_scale: (f64, f64), seed: u64) -> Result<Self> {
        config.validate()?;
        if !(time_scale.1 > time_scale.0) {
            return Err(Error::Config(format!("time scale needs t_max > t_min, got {time_scale:?}")));
        }
        let params = init_weights(&config, seed);
        Ok(Mlp { config, time_scale, params })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// `ds/dt` of the input normalization.
    pub fn time_slope(&self) -> f64 {
        2.0 / (self.time_scale.1 - self.time_scale.0)
    }

    fn normalize(&self, t: f64) -> f64 {
        (t - self.time_scale.0) * self.time_slope() - 1.0
    }

    fn layer<'a>(
        &self,
        params: &'a [f64],
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let w =
            ArrayView2::from_shape((fan_out, fan_in), &params[offset..offset + fan_in * fan_out]).expect("layer shape");
        let b = ArrayView1::from(&params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Outputs and exact time derivatives at every instant in `times`.
    pub fn forward_batch(&self, times: &[f64]) -> Result<BatchTrace> {
        let b = times.len();
        let slope = self.time_slope();
        let shapes = self.config.layer_shapes();
        let last = shapes.len() - 1;
        let mut a = Array2::from_shape_fn((b, 1), |(i, _)| self.normalize(times[i]));
        let mut da = Array2::from_elem((b, 1), slope);
        let mut inputs = Vec::with_capacity(shapes.len());
        let mut input_tangents = Vec::with_capacity(shapes.len());
        let mut pre_tangents = Vec::with_capacity(last);
        let mut offset = 0;
        for (k, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let (w, bias) = self.layer(&self.params, offset, fan_in, fan_out);
            offset += fan_in * fan_out + fan_out;
            let mut z = a.dot(&w.t());
            z += &bias;
            let dz = da.dot(&w.t());
            inputs.push(a);
            input_tangents.push(da);
            if k == last {
                if z.iter().any(|v| !v.is_finite()) || dz.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteActivation { layer: k });
                }
                return Ok(BatchTrace { inputs, input_tangents, pre_tangents, value: z, tangent: dz });
            }
            z.mapv_inplace(f64::tanh);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: k });
            }
            let mut next_da = dz.clone();
            ndarray::Zip::from(&mut next_da).and(&z).for_each(|d, &act| *d *= 1.0 - act * act);
            pre_tangents.push(dz);
            a = z;
            da = next_da;
        }
        unreachable!("network has an output layer")
    }

    /// Accumulates into `grad` the gradient of a scalar loss whose adjoints
    /// with respect to the outputs and their time derivatives are `g_value`
    /// and `g_tangent` (both B × m).
    pub fn backward_batch(&self, trace: &BatchTrace, g_value: &Array2<f64>, g_tangent: &Array2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let shapes = self.config.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(fan_in, fan_out) in &shapes {
            offsets.push(offset);
            offset += fan_in * fan_out + fan_out;
        }
        let mut gz = g_value.clone();
        let mut gdz = g_tangent.clone();
        for k in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[k];
            let off = offsets[k];
            let a = &trace.inputs[k];
            let da = &trace.input_tangents[k];
            let gw = gz.t().dot(a) + gdz.t().dot(da);
            for (g, v) in grad[off..off + fan_in * fan_out].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb: Array1<f64> = gz.sum_axis(Axis(0));
            for (g, v) in grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if k == 0 {
                break;
            }
            let (w, _) = self.layer(&self.params, off, fan_in, fan_out);
            let ga = gz.dot(&w);
            let gda = gdz.dot(&w);
            // a = tanh(z), a' = (1 - a²)·z'
            let dz_prev = &trace.pre_tangents[k - 1];
            let mut new_gz = ga;
            let mut new_gdz = gda;
            ndarray::Zip::from(&mut new_gz).and(&mut new_gdz).and(a).and(dz_prev).for_each(|g, gd, &act, &dz| {
                let d1 = 1.0 - act * act;
                *g = *g * d1 - 2.0 * act * d1 * dz * *gd;
                *gd *= d1;
            });
            gz = new_gz;
            gdz = new_gdz;
        }
    }

    /// One-point evaluation over any scalar type. With `t` carrying a unit
    /// tangent (dual or tape variable) the outputs carry `d/dt`.
    pub fn eval_real<S: Real>(&self, params: &[S], t: S) -> Vec<S> {
        let slope = self.time_slope();
        let mut a = vec![(t - self.time_scale.0) * slope - 1.0];
        let shapes = self.config.layer_shapes();
        let last = shapes.len() - 1;
        let mut off = 0;
        for (k, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = &params[off..off + fan_in * fan_out];
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let z: Vec<S> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(&a).fold(b[o], |acc, (&wi, &ai)| acc + wi * ai)
                })
                .collect();
            a = if k == last { z } else { z.into_iter().map(Real::tanh).collect() };
        }
        a
    }

    /// Output and its time derivative at a single instant.
    pub fn forward(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let tr = self.forward_batch(&[t])?;
        Ok((tr.value.row(0).to_vec(), tr.tangent.row(0).to_vec()))
    }

    /// Whether `t` lies outside the normalization range (extrapolation).
    pub fn extrapolates(&self, t: f64) -> bool {
        t < self.time_scale.0 || t > self.time_scale.1
    }

    pub fn save(&self, path: &Path, kind: NetKind) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            config: self.config.clone(),
            time_scale: [self.time_scale.0, self.time_scale.1],
            weights: self.params.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Numerical(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, NetKind)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        ck.config.validate()?;
        if ck.weights.len() != ck.config.param_count() {
            return Err(Error::Config(format!(
                "checkpoint has {} weights, layer sizes need {}",
                ck.weights.len(),
                ck.config.param_count()
            )));
        }
        Ok((Mlp { config: ck.config, time_scale: (ck.time_scale[0], ck.time_scale[1]), params: ck.weights }, ck.kind))
    }
}

const CHECKPOINT_FORMAT: &str = "kbinn-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Mean,
    Covariance,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    kind: NetKind,
    config: MlpConfig,
    time_scale: [f64; 2],
    weights: Vec<f64>,
}

/// Number of free entries of an upper-triangular `n × n` factor.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// `P = Uᵀ·U`, where `U` is upper triangular and filled row-major from `raw`.
/// The result is symmetric (bitwise) and positive semidefinite.
pub fn assemble_psd<S: Real>(raw: &[S], n: usize) -> Result<Mat<S>> {
    if raw.len() != tri_len(n) {
        return Err(Error::Config(format!(
            "covariance output has {} entries, n = {n} needs {}",
            raw.len(),
            tri_len(n)
        )));
    }
    let mut u = Mat::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            u[(i, j)] = raw[idx];
            idx += 1;
        }
    }
    let mut p = Mat::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let mut acc = S::zero();
            for i in 0..=j {
                acc = acc + u[(i, j)] * u[(i, k)];
            }
            p[(j, k)] = acc;
            p[(k, j)] = acc;
        }
    }
    Ok(p)
}

/// Network for the state mean `ξ(t) ∈ ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanNet {
    pub net: Mlp,
}

impl MeanNet {
    pub fn new(n: usize, hidden: Vec<usize>, time_scale: (f64, f64), seed: u64) -> Result<Self> {
        Ok(MeanNet { net: Mlp::new(MlpConfig::new(hidden, n), time_scale, seed)? })
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `(ξ(t), ξ̇(t))`.
    pub fn forward(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.net.forward(t)
    }
}

/// Network for the state covariance `ψ(t) = Uᵀ(t)·U(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovNet {
    pub net: Mlp,
    n: usize,
}

impl CovNet {
    pub fn new(n: usize, hidden: Vec<usize>, time_scale: (f64, f64), seed: u64) -> Result<Self> {
        Ok(CovNet { net: Mlp::new(MlpConfig::new(hidden, tri_len(n)), time_scale, seed)?, n })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        let m = net.output_dim();
        let n = (((8 * m + 1) as f64).sqrt() as usize - 1) / 2;
        if tri_len(n) != m {
            return Err(Error::Config(format!("{m} outputs is not a triangular number")));
        }
        Ok(CovNet { net, n })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// `(ψ(t), ψ̇(t))`.
    pub fn forward(&self, t: f64) -> Result<(Mat<f64>, Mat<f64>)> {
        let (raw, draw) = self.net.forward(t)?;
        psd_with_derivative(&raw, &draw, self.n)
    }
}

/// `ψ` and `ψ̇ = U̇ᵀU + UᵀU̇` from raw outputs and their time derivatives.
pub fn psd_with_derivative(raw: &[f64], draw: &[f64], n: usize) -> Result<(Mat<f64>, Mat<f64>)> {
    let duals: Vec<DualScalar> = raw.iter().zip(draw).map(|(&v, &d)| Dual::new(v, d)).collect();
    let p = assemble_psd(&duals, n)?;
    Ok((p.map(|d| d.re), p.map(|d| d.eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;

    fn small_net(seed: u64) -> Mlp {
        Mlp::new(MlpConfig::new(vec![5, 4], 3), (0.0, 3.0), seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = small_net(1);
        net.params.iter_mut().for_each(|w| *w = 0.0);
        let (v, d) = net.forward(1.2).unwrap();
        assert!(v.iter().chain(&d).all(|&x| x == 0.0));
    }

    #[test]
    fn single_neuron_hand_chain_rule() {
        // 1 -> 1 -> 1, all weights 1, biases 0, evaluated at the centre of
        // the time range so the normalized input is 0.
        let mut net = Mlp::new(MlpConfig::new(vec![1], 1), (0.0, 4.0), 0).unwrap();
        net.params = vec![1.0, 0.0, 1.0, 0.0];
        let (v, d) = net.forward(2.0).unwrap();
        assert_eq!(v, vec![0.0]);
        assert_eq!(d, vec![0.5]);
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = MlpConfig::new(vec![32, 32, 32], 4);
        assert_eq!(init_weights(&cfg, 9), init_weights(&cfg, 9));
        assert_ne!(init_weights(&cfg, 9), init_weights(&cfg, 10));
        assert_eq!(init_weights(&cfg, 9).len(), cfg.param_count());
    }

    #[test]
    fn init_is_centred() {
        let cfg = MlpConfig::new(vec![100, 100], 1);
        let w = init_weights(&cfg, 3);
        let mut count = 0.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut off = 0;
        for (i, o) in cfg.layer_shapes() {
            for &x in &w[off..off + i * o] {
                count += 1.0;
                sum += x;
                sum_sq += x * x;
            }
            off += i * o + o;
        }
        assert!(count >= 1e4);
        let mean = sum / count;
        let se = (sum_sq / count - mean * mean).sqrt() / count.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn biases_start_at_zero() {
        let cfg = MlpConfig::new(vec![3], 2);
        let w = init_weights(&cfg, 1);
        assert_eq!(&w[3..6], &[0.0; 3]);
        assert_eq!(&w[12..14], &[0.0; 2]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(MlpConfig::new(vec![], 2).validate().is_err());
        assert!(MlpConfig::new(vec![4, 0], 2).validate().is_err());
        assert!(MlpConfig::new(vec![4], 0).validate().is_err());
        assert!(Mlp::new(MlpConfig::new(vec![4], 1), (1.0, 1.0), 0).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let net = small_net(4);
        let h = 1e-5;
        for &t in &[0.0, 0.37, 1.5, 2.9] {
            let (_, d) = net.forward(t).unwrap();
            let (vp, _) = net.forward(t + h).unwrap();
            let (vm, _) = net.forward(t - h).unwrap();
            for j in 0..3 {
                let fd = (vp[j] - vm[j]) / (2.0 * h);
                assert!(((d[j] - fd) / d[j].abs().max(1e-3)).abs() < 1e-6, "{} vs {}", d[j], fd);
            }
        }
    }

    #[test]
    fn batch_matches_pointwise_reference() {
        let net = small_net(5);
        let times = [0.1, 0.9, 2.2];
        let tr = net.forward_batch(&times).unwrap();
        let consts: Vec<DualScalar> = net.params.iter().map(|&w| DualScalar::cst(w)).collect();
        for (i, &t) in times.iter().enumerate() {
            let out = net.eval_real(&consts, DualScalar::variable(t));
            for j in 0..3 {
                assert!((out[j].re - tr.value[(i, j)]).abs() < 1e-14);
                assert!((out[j].eps - tr.tangent[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn batched_backward_matches_tape() {
        // Loss = Σ_i Σ_j (c_ij·value_ij + e_ij·tangent_ij)
        let net = small_net(6);
        let times = [0.2, 1.1, 2.7];
        let cv = |i: usize, j: usize| 0.3 * i as f64 - 0.2 * j as f64 + 0.1;
        let ct = |i: usize, j: usize| 0.5 - 0.1 * (i * j) as f64;
        let tr = net.forward_batch(&times).unwrap();
        let gv = Array2::from_shape_fn((3, 3), |(i, j)| cv(i, j));
        let gt = Array2::from_shape_fn((3, 3), |(i, j)| ct(i, j));
        let mut grad = vec![0.0; net.params.len()];
        net.backward_batch(&tr, &gv, &gt, &mut grad);

        let tape = Tape::new();
        let w: Vec<_> = net.params.iter().map(|&p| tape.var(p)).collect();
        let mut loss = crate::autodiff::Var::cst(0.0);
        for (i, &t) in times.iter().enumerate() {
            let out = net.eval_real(&w, tape.var_with_tangent(t, 1.0));
            for j in 0..3 {
                loss = loss + out[j] * cv(i, j) + out[j].tangent_var() * ct(i, j);
            }
        }
        let g = tape.backward(loss.id().unwrap()).unwrap();
        for (k, &wk) in w.iter().enumerate() {
            assert!((g.wrt(wk) - grad[k]).abs() < 1e-12, "weight {k}: {} vs {}", g.wrt(wk), grad[k]);
        }
    }

    #[test]
    fn tangent_is_linear_in_output_weights() {
        let mut net = small_net(7);
        let (_, d1) = net.forward(1.3).unwrap();
        let shapes = net.config.layer_shapes();
        let (fi, fo) = *shapes.last().unwrap();
        let off = net.params.len() - (fi * fo + fo);
        for w in &mut net.params[off..off + fi * fo] {
            *w *= 2.5;
        }
        let (_, d2) = net.forward(1.3).unwrap();
        for j in 0..3 {
            assert!((d2[j] - 2.5 * d1[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn assemble_examples() {
        assert_eq!(assemble_psd(&[1.0, 0.0, 1.0], 2).unwrap(), Mat::identity(2));
        assert_eq!(assemble_psd(&[1.0, 1.0, 1.0], 2).unwrap(), Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]));
        assert_eq!(assemble_psd(&[0.0; 3], 2).unwrap(), Mat::zeros(2, 2));
        assert!(matches!(assemble_psd(&[1.0; 4], 2), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = Mlp::new(MlpConfig::new(vec![7, 3], 10), (0.0, 2.999), 11).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        net.save(f.path(), NetKind::Covariance).unwrap();
        let (back, kind) = Mlp::load(f.path()).unwrap();
        assert_eq!(kind, NetKind::Covariance);
        assert_eq!(back.config, net.config);
        assert_eq!(back.time_scale, net.time_scale);
        let same = back.params.iter().zip(&net.params).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
        assert_eq!(CovNet::from_mlp(back).unwrap().state_dim(), 4);
    }

    proptest! {
        #[test]
        fn covariance_output_is_psd(seed in 0u64..10_000, t in -0.5..3.5f64) {
            let net = CovNet::new(4, vec![8, 8], (0.0, 3.0), seed).unwrap();
            let (p, _) = net.forward(t).unwrap();
            prop_assert_eq!(&p, &p.transpose());
            let min = p.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
        }
    }
}
