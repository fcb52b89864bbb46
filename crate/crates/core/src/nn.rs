//! Small feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! weight matrix (row-major) followed by the `out` biases. Hidden layers use
//! the architecture's activation; the last layer is linear (logits).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(pre > 0.0)),
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl MlpArchitecture {
    /// `layer_sizes = [d_in, h₁, …, d_out]` with at least one hidden layer.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::InvalidConfig("an MLP needs at least one hidden layer".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be >= 1".into()));
        }
        let arch = Self { layer_sizes, activation };
        arch.checked_n_params()
            .ok_or_else(|| Error::InvalidConfig("parameter count overflows".into()))?;
        Ok(arch)
    }

    /// The desk-scale default `[d_in, 32, 16, K]`.
    pub fn default_for(d_in: usize, n_classes: usize) -> Result<Self> {
        Self::new(vec![d_in, 32, 16, n_classes], Activation::Relu)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn d_out(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn checked_n_params(&self) -> Option<usize> {
        self.layer_sizes.windows(2).try_fold(0usize, |acc, w| {
            w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
        })
    }

    /// `Σ (in·out + out)` over layers.
    pub fn n_params(&self) -> usize {
        self.checked_n_params().expect("validated at construction")
    }

    /// Offset of layer `l`'s weights; its biases follow at `+ in·out`.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Header used by the snapshot format, e.g. `relu 4,32,16,3`.
    pub fn header(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        format!("{} {}", self.activation.name(), sizes.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: MlpArchitecture,
    flat: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: MlpArchitecture, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.n_params(),
                flat.len()
            )));
        }
        Ok(Self { arch, flat })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let flat = vec![0.0; arch.n_params()];
        Self { arch, flat }
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    /// Weight matrix of layer `l` as a mutable row-major slice.
    pub fn layer_weights_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.arch.layer_offset(l);
        let n = self.arch.layer_sizes[l] * self.arch.layer_sizes[l + 1];
        &mut self.flat[off..off + n]
    }
}

/// Kaiming-style uniform weights in `±√(6 / fan_in)`, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ModelParams {
    let mut rng = seed::rng(seed);
    let mut flat = Vec::with_capacity(arch.n_params());
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        flat.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
        flat.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ModelParams { arch: arch.clone(), flat }
}

/// Activations recorded by a forward pass: `post[0]` is the input, `pre[l]`
/// and `post[l + 1]` are layer `l`'s pre- and post-activation.
pub(crate) struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.post.last().expect("non-empty trace")
    }
}

pub(crate) fn forward_trace(arch: &MlpArchitecture, params: &[f64], x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(arch.n_layers());
    let mut post = Vec::with_capacity(arch.n_layers() + 1);
    post.push(x.to_vec());
    let mut off = 0;
    for l in 0..arch.n_layers() {
        let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
        let w = &params[off..off + n_in * n_out];
        let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let input = &post[l];
        let z: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let last = l + 1 == arch.n_layers();
        let a = if last { z.clone() } else { z.iter().map(|&v| arch.activation.apply(v)).collect() };
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

/// Backpropagates `grad_out` (w.r.t. the linear output) through a recorded
/// pass, adding parameter gradients into `grad_params` and returning the
/// gradient w.r.t. the input.
pub(crate) fn backward(
    arch: &MlpArchitecture,
    params: &[f64],
    trace: &Trace,
    grad_out: &[f64],
    grad_params: &mut [f64],
) -> Vec<f64> {
    let mut delta = grad_out.to_vec();
    for l in (0..arch.n_layers()).rev() {
        let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
        let off = arch.layer_offset(l);
        if l + 1 != arch.n_layers() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= arch.activation.derivative(z);
            }
        }
        let input = &trace.post[l];
        let w = &params[off..off + n_in * n_out];
        let mut grad_in = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let gw = &mut grad_params[off + o * n_in..off + (o + 1) * n_in];
            for ((g, &a), (gi, &wv)) in gw.iter_mut().zip(input).zip(grad_in.iter_mut().zip(&w[o * n_in..])) {
                *g += d * a;
                *gi += d * wv;
            }
            grad_params[off + n_in * n_out + o] += d;
        }
        delta = grad_in;
    }
    delta
}

fn check_input(p: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != p.arch.d_in() {
        return Err(Error::Shape(format!("input has {} features, model expects {}", x.len(), p.arch.d_in())));
    }
    Ok(())
}

pub fn forward(p: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(p, x)?;
    Ok(forward_trace(&p.arch, &p.flat, x).post.pop().expect("non-empty"))
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_dataset(p: &ModelParams, data: &Dataset) -> Result<()> {
    if data.n_features() != p.arch.d_in() || data.n_classes() > p.arch.d_out() {
        return Err(Error::Shape(format!(
            "dataset ({} features, {} classes) does not fit model {}",
            data.n_features(),
            data.n_classes(),
            p.arch.header()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over `indices` and its exact gradient.
pub fn loss_and_grad(p: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_dataset(p, data)?;
    if indices.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = vec![0.0; p.flat.len()];
    let mut loss = 0.0;
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        let trace = forward_trace(&p.arch, &p.flat, data.sample(i));
        let logits = trace.output();
        let y = data.label(i);
        loss += log_sum_exp(logits) - logits[y];
        let mut g = softmax(logits);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
        backward(&p.arch, &p.flat, &trace, &g, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Mean cross-entropy of the model over a whole dataset.
pub fn dataset_loss(p: &ModelParams, data: &Dataset) -> Result<f64> {
    check_dataset(p, data)?;
    let total: f64 = (0..data.len())
        .map(|i| {
            let z = forward_trace(&p.arch, &p.flat, data.sample(i));
            let z = z.output();
            log_sum_exp(z) - z[data.label(i)]
        })
        .sum();
    Ok(total / data.len() as f64)
}

pub fn accuracy(p: &ModelParams, data: &Dataset) -> Result<f64> {
    check_dataset(p, data)?;
    let hits = (0..data.len())
        .filter(|&i| {
            let z = forward(p, data.sample(i)).expect("checked shape");
            let best = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            best == data.label(i)
        })
        .count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs < 1 {
            return Err(Error::InvalidConfig("local_epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::InvalidConfig("adam needs beta in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn with_defaults(n: usize) -> Self {
        Self::new(n, 0.9, 0.999, 1e-8)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Mini-batch training from `p`; returns the new parameters and `new − old`.
///
/// Samples are reshuffled every epoch from `cfg.seed`. Optimizer state starts
/// fresh on every call.
pub fn train_local(p: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    check_dataset(p, data)?;
    let mut params = p.clone();
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = match cfg.optimizer {
        Optimizer::Adam { beta1, beta2, eps } => Some(Adam::new(params.flat.len(), beta1, beta2, eps)),
        Optimizer::Sgd => None,
    };
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = loss_and_grad(&params, data, batch)?;
            match adam.as_mut() {
                Some(opt) => opt.step(&mut params.flat, &grad, cfg.learning_rate),
                None => {
                    for (w, g) in params.flat.iter_mut().zip(&grad) {
                        *w -= cfg.learning_rate * g;
                    }
                }
            }
        }
    }
    let delta = params.flat.iter().zip(&p.flat).map(|(a, b)| a - b).collect();
    Ok((params, delta))
}

/// `∂ softmax(f(x)) / ∂x` as a `K × d_in` matrix, one backward pass per output.
pub fn jacobian(p: &ModelParams, x: &[f64]) -> Result<Matrix> {
    check_input(p, x)?;
    let trace = forward_trace(&p.arch, &p.flat, x);
    let s = softmax(trace.output());
    let k = s.len();
    let mut scratch = vec![0.0; p.flat.len()];
    let mut jac = Matrix::zeros(k, x.len());
    for out in 0..k {
        // ∂s_out/∂z_m = s_out (δ_{out,m} − s_m)
        let g: Vec<f64> = (0..k)
            .map(|m| s[out] * (f64::from(u8::from(m == out)) - s[m]))
            .collect();
        let gx = backward(&p.arch, &p.flat, &trace, &g, &mut scratch);
        jac.row_mut(out).copy_from_slice(&gx);
    }
    Ok(jac)
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

const SNAPSHOT_MAGIC: &str = "topoleak-mlp v1";
const MAX_HEADER_BYTES: usize = 4096;

/// Snapshot bytes: `topoleak-mlp v1 <activation> <sizes>\n` followed by the
/// flat parameters as little-endian `f64`.
pub fn encode_snapshot(p: &ModelParams) -> Vec<u8> {
    let mut out = format!("{SNAPSHOT_MAGIC} {}\n", p.arch.header()).into_bytes();
    out.reserve(p.flat.len() * 8);
    for v in &p.flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<ModelParams> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER_BYTES)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(1, "snapshot header not terminated"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::parse(1, "header is not UTF-8"))?;
    let rest = header
        .strip_prefix(SNAPSHOT_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::parse(1, "bad snapshot magic"))?;
    let (act, sizes) = rest.split_once(' ').ok_or_else(|| Error::parse(1, "missing layer sizes"))?;
    let activation = Activation::from_name(act).ok_or_else(|| Error::parse(1, format!("unknown activation {act:?}")))?;
    let sizes = sizes
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| Error::parse(1, format!("bad layer size {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let arch = MlpArchitecture::new(sizes, activation).map_err(|e| Error::parse(1, e.to_string()))?;
    let body = &bytes[nl + 1..];
    if body.len() % 8 != 0 || body.len() / 8 != arch.n_params() {
        return Err(Error::parse(2, format!("expected {} parameters, body holds {} bytes", arch.n_params(), body.len())));
    }
    let flat = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ModelParams::new(arch, flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    fn arch(sizes: &[usize], act: Activation) -> MlpArchitecture {
        MlpArchitecture::new(sizes.to_vec(), act).unwrap()
    }

    #[test]
    fn param_count_and_init() {
        let a = arch(&[2, 3, 2], Activation::Relu);
        assert_eq!(a.n_params(), 17);
        let p = init_params(&a, 5);
        assert_eq!(p, init_params(&a, 5));
        assert_ne!(p, init_params(&a, 6));
        // biases: flat[6..9] and flat[15..17]
        assert!(p.flat()[6..9].iter().all(|&b| b == 0.0));
        assert!(p.flat()[15..17].iter().all(|&b| b == 0.0));
        let bound = (6.0f64 / 2.0).sqrt();
        assert!(p.flat()[..6].iter().all(|w| w.abs() < bound));
        assert!(MlpArchitecture::new(vec![2, 2], Activation::Relu).is_err());
        assert!(MlpArchitecture::new(vec![2, 0, 2], Activation::Relu).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let p = ModelParams::zeros(arch(&[3, 4, 5], Activation::Tanh));
        let z = forward(&p, &[1.0, -2.0, 0.5]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(softmax(&z).iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(matches!(forward(&p, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn hand_computed_two_two_two_network() {
        // W1 = [[1, -1], [0.5, 2]], b1 = [0, -1], W2 = [[1, 1], [-1, 0.5]], b2 = [0.25, 0]
        // x = [2, 1]: z1 = [1, 2], relu -> [1, 2], z2 = [1 + 2 + 0.25, -1 + 1] = [3.25, 0]
        let a = arch(&[2, 2, 2], Activation::Relu);
        let flat = vec![1.0, -1.0, 0.5, 2.0, 0.0, -1.0, 1.0, 1.0, -1.0, 0.5, 0.25, 0.0];
        let p = ModelParams::new(a, flat).unwrap();
        assert_eq!(forward(&p, &[2.0, 1.0]).unwrap(), vec![3.25, 0.0]);
        // x = [-1, 0]: z1 = [-1, -1.5] -> relu zeros, output = b2
        assert_eq!(forward(&p, &[-1.0, 0.0]).unwrap(), vec![0.25, 0.0]);
    }

    #[test]
    fn identity_like_single_hidden_layer() {
        // With relu and positive inputs, W1 = I and W2 = I pass the input through.
        let a = arch(&[2, 2, 2], Activation::Relu);
        let flat = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = ModelParams::new(a, flat).unwrap();
        assert_eq!(forward(&p, &[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn softmax_sums_to_one_on_extreme_logits() {
        for z in [vec![1000.0, -1000.0, 0.0], vec![-745.0, -745.0], vec![1e-300, 3.0, 7.5]] {
            let s: f64 = softmax(&z).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_loss_is_ln_k() {
        let d = gen_blobs(3, 2, 10, 1.0, 0).unwrap();
        let p = ModelParams::zeros(arch(&[2, 4, 3], Activation::Relu));
        let idx: Vec<usize> = (0..d.len()).collect();
        let (loss, _) = loss_and_grad(&p, &d, &idx).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(loss_and_grad(&p, &d, &[]).is_err());
    }

    #[test]
    fn confident_correct_predictions_have_near_zero_loss() {
        // Output bias pushes class 0's logit far above the others.
        let d = Dataset::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], vec![0, 0]).unwrap();
        let mut p = ModelParams::zeros(arch(&[2, 2, 2], Activation::Relu));
        let n = p.flat().len();
        p.flat_mut()[n - 2] = 50.0;
        let (loss, _) = loss_and_grad(&p, &d, &[0, 1]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn lr_zero_is_a_no_op() {
        let d = gen_blobs(2, 3, 10, 1.0, 0).unwrap();
        let p = init_params(&arch(&[3, 8, 2], Activation::Relu), 1);
        let cfg = TrainConfig { local_epochs: 2, learning_rate: 0.0, batch_size: 4, optimizer: Optimizer::Sgd, seed: 3 };
        let (q, delta) = train_local(&p, &d, &cfg).unwrap();
        assert_eq!(q, p);
        assert!(delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_batch_sgd_epoch_is_one_gradient_step() {
        let d = gen_blobs(3, 3, 10, 1.0, 0).unwrap();
        let p = init_params(&arch(&[3, 6, 3], Activation::Tanh), 2);
        let lr = 0.1;
        let cfg = TrainConfig { local_epochs: 1, learning_rate: lr, batch_size: d.len(), optimizer: Optimizer::Sgd, seed: 3 };
        let (q, delta) = train_local(&p, &d, &cfg).unwrap();
        let idx: Vec<usize> = (0..d.len()).collect();
        let (_, g) = loss_and_grad(&p, &d, &idx).unwrap();
        for ((qv, pv), gv) in q.flat().iter().zip(p.flat()).zip(&g) {
            // Same batch in shuffled order: only summation order differs.
            assert!((qv - (pv - lr * gv)).abs() < 1e-14);
        }
        for ((dv, qv), pv) in delta.iter().zip(q.flat()).zip(p.flat()) {
            assert_eq!(*dv, qv - pv);
        }
    }

    #[test]
    fn train_local_is_deterministic_and_validates() {
        let d = gen_blobs(2, 3, 20, 1.0, 0).unwrap();
        let p = init_params(&arch(&[3, 8, 2], Activation::Relu), 1);
        let cfg = TrainConfig { local_epochs: 2, learning_rate: 0.01, batch_size: 8, optimizer: Optimizer::adam(), seed: 3 };
        assert_eq!(train_local(&p, &d, &cfg).unwrap(), train_local(&p, &d, &cfg).unwrap());
        let bad = TrainConfig { local_epochs: 0, ..cfg.clone() };
        assert!(matches!(train_local(&p, &d, &bad), Err(Error::InvalidConfig(_))));
        let wrong = gen_blobs(2, 4, 10, 1.0, 0).unwrap();
        assert!(matches!(train_local(&p, &wrong, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let d = gen_blobs(2, 2, 20, 0.01, 0).unwrap();
        let p = init_params(&MlpArchitecture::default_for(2, 2).unwrap(), 0);
        let cfg = TrainConfig { local_epochs: 20, learning_rate: 0.01, batch_size: 8, optimizer: Optimizer::adam(), seed: 1 };
        let (q, _) = train_local(&p, &d, &cfg).unwrap();
        assert_eq!(accuracy(&q, &d).unwrap(), 1.0);
    }

    #[test]
    fn zero_net_jacobian_vanishes() {
        let p = ModelParams::zeros(arch(&[3, 4, 2], Activation::Tanh));
        let j = jacobian(&p, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!((j.rows(), j.cols()), (2, 3));
        assert!(j.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_norm_invariant_under_input_permutation() {
        let a = arch(&[3, 5, 4], Activation::Tanh);
        let p = init_params(&a, 11);
        let x = [0.4, -1.2, 0.9];
        let perm = [2, 0, 1];
        // Permute input features and the matching first-layer weight columns.
        let mut q = p.clone();
        {
            let w = q.layer_weights_mut(0);
            let orig = p.flat()[..15].to_vec();
            for o in 0..5 {
                for (new_col, &old_col) in perm.iter().enumerate() {
                    w[o * 3 + new_col] = orig[o * 3 + old_col];
                }
            }
        }
        let xp: Vec<f64> = perm.iter().map(|&c| x[c]).collect();
        let n1 = frobenius(&jacobian(&p, &x).unwrap());
        let n2 = frobenius(&jacobian(&q, &xp).unwrap());
        assert!((n1 - n2).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip_and_rejects_garbage() {
        let p = init_params(&arch(&[4, 3, 2], Activation::Relu), 9);
        let bytes = encode_snapshot(&p);
        assert_eq!(decode_snapshot(&bytes).unwrap(), p);
        assert!(decode_snapshot(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_snapshot(b"topoleak-mlp v1 relu 2,2\n").is_err());
        assert!(decode_snapshot(b"garbage").is_err());
        assert!(decode_snapshot(b"topoleak-mlp v1 relu 99999999999,99999999999,2\n").is_err());
    }
}
