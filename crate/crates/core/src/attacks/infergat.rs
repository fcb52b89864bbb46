//! INFERGAT: a single-layer multi-head graph-attention encoder over node
//! feature rows, with a symmetric MLP pair decoder, trained to reconstruct
//! the feature matrix itself. The reconstruction is read as a soft adjacency.
//!
//! Per head `h`, with `g_i = W x_i`:
//!
//! ```text
//! e_ij = LeakyReLU(a_src·g_i + a_dst·g_j)
//! α_ij = softmax_j(e_ij)            over the attention neighbourhood of i
//! z_i  = ELU(Σ_j α_ij g_j)
//! ```
//!
//! Heads are concatenated, `B_ij = σ(dec([z_i ‖ z_j]))`, `A′ = (B + Bᵀ)/2`,
//! and the loss is the mean squared error between `A′` and `X` off the
//! diagonal.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::edgepre::sigmoid;
use super::SoftAdjacency;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::FeatureMatrix;
use crate::nn::{self, Activation, Adam, MlpArchitecture, ModelParams};
use crate::seed::{self, stream};

const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_KNN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttentionGraph {
    /// Every node attends to every node, itself included. The attention
    /// ranking over partners is then the same for every node, so embeddings
    /// tend to collapse.
    Complete,
    /// Each node attends to itself and its `k` highest-feature partners.
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferGatConfig {
    /// Per-head embedding width.
    pub embed_dim: usize,
    pub heads: usize,
    pub decoder_hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub attention: AttentionGraph,
    pub seed: u64,
}

impl Default for InferGatConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            heads: 2,
            decoder_hidden: vec![128],
            epochs: 500,
            learning_rate: 5e-3,
            attention: AttentionGraph::Knn { k: DEFAULT_KNN },
            seed: 0,
        }
    }
}

impl InferGatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads < 1 || self.embed_dim < 1 {
            return Err(Error::InvalidConfig("infergat needs heads >= 1 and embed_dim >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("infergat epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("infergat learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.decoder_hidden.contains(&0) {
            return Err(Error::InvalidConfig("infergat decoder sizes must be positive".into()));
        }
        if let AttentionGraph::Knn { k: 0 } = self.attention {
            return Err(Error::InvalidConfig("k-NN attention needs k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferGatModel {
    pub cfg: InferGatConfig,
    pub n_nodes: usize,
    decoder_arch: MlpArchitecture,
    params: Vec<f64>,
    /// Training loss before each epoch's update, plus the final loss.
    pub loss_history: Vec<f64>,
}

struct HeadCache {
    g: Vec<Vec<f64>>,
    /// Attention rows over the neighbourhood lists.
    alpha: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

fn elu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        v.exp()
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Attention neighbourhood of each node; always contains the node itself.
fn neighbourhoods(x: &Matrix, graph: AttentionGraph) -> Vec<Vec<usize>> {
    let n = x.rows();
    match graph {
        AttentionGraph::Complete => (0..n).map(|_| (0..n).collect()).collect(),
        AttentionGraph::Knn { k } => (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| x[(i, b)].total_cmp(&x[(i, a)]).then(a.cmp(&b)));
                let mut nb = vec![i];
                nb.extend(others.into_iter().take(k));
                nb.sort_unstable();
                nb
            })
            .collect(),
    }
}

impl InferGatModel {
    fn head_len(&self) -> usize {
        self.cfg.embed_dim * self.n_nodes + 2 * self.cfg.embed_dim
    }

    fn decoder_offset(&self) -> usize {
        self.cfg.heads * self.head_len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Fresh model with seeded initial parameters.
    pub fn init(n_nodes: usize, cfg: &InferGatConfig) -> Result<Self> {
        cfg.validate()?;
        if n_nodes < 2 {
            return Err(Error::InvalidSize(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let mut sizes = vec![2 * cfg.heads * cfg.embed_dim];
        sizes.extend_from_slice(&cfg.decoder_hidden);
        sizes.push(1);
        let decoder_arch = MlpArchitecture::new(sizes, Activation::Relu)?;
        let mut rng = seed::rng_for(cfg.seed, &[stream::INFERGAT]);
        let e = cfg.embed_dim;
        let w_bound = (6.0 / (n_nodes + e) as f64).sqrt();
        let a_bound = (6.0 / (e + 1) as f64).sqrt();
        let mut params = Vec::new();
        for _ in 0..cfg.heads {
            params.extend((0..e * n_nodes).map(|_| rng.random_range(-w_bound..w_bound)));
            params.extend((0..2 * e).map(|_| rng.random_range(-a_bound..a_bound)));
        }
        let decoder = nn::init_params(&decoder_arch, rng.random());
        params.extend_from_slice(decoder.flat());
        Ok(Self { cfg: cfg.clone(), n_nodes, decoder_arch, params, loss_history: Vec::new() })
    }

    pub fn train(x: &FeatureMatrix, cfg: &InferGatConfig) -> Result<Self> {
        let mut model = Self::init(x.n_nodes(), cfg)?;
        let mut opt = Adam::with_defaults(model.params.len());
        let mut history = Vec::with_capacity(cfg.epochs + 1);
        for _ in 0..cfg.epochs {
            let (loss, grad) = model.loss_and_grad(x)?;
            history.push(loss);
            opt.step(&mut model.params, &grad, cfg.learning_rate);
        }
        history.push(model.loss(x)?);
        model.loss_history = history;
        Ok(model)
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_nodes() != self.n_nodes {
            return Err(Error::Shape(format!("model built for {} nodes, features have {}", self.n_nodes, x.n_nodes())));
        }
        Ok(())
    }

    fn encode(&self, x: &Matrix, nbrs: &[Vec<usize>]) -> (Vec<HeadCache>, Vec<Vec<f64>>) {
        let (n, e) = (self.n_nodes, self.cfg.embed_dim);
        let mut caches = Vec::with_capacity(self.cfg.heads);
        let mut z = vec![Vec::with_capacity(self.cfg.heads * e); n];
        for h in 0..self.cfg.heads {
            let base = h * self.head_len();
            let w = &self.params[base..base + e * n];
            let a_src = &self.params[base + e * n..base + e * n + e];
            let a_dst = &self.params[base + e * n + e..base + e * n + 2 * e];
            let g: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..e).map(|r| w[r * n..(r + 1) * n].iter().zip(x.row(i)).map(|(a, b)| a * b).sum()).collect())
                .collect();
            let s: Vec<f64> = g.iter().map(|gi| crate::matrix::dot(a_src, gi)).collect();
            let t: Vec<f64> = g.iter().map(|gj| crate::matrix::dot(a_dst, gj)).collect();
            let mut alpha = Vec::with_capacity(n);
            let mut pre = Vec::with_capacity(n);
            let mut u = Vec::with_capacity(n);
            for i in 0..n {
                let p: Vec<f64> = nbrs[i].iter().map(|&j| s[i] + t[j]).collect();
                let scores: Vec<f64> = p.iter().map(|&v| leaky(v)).collect();
                let a = nn::softmax(&scores);
                let mut ui = vec![0.0; e];
                for (&j, &aij) in nbrs[i].iter().zip(&a) {
                    for (o, gj) in ui.iter_mut().zip(&g[j]) {
                        *o += aij * gj;
                    }
                }
                z[i].extend(ui.iter().map(|&v| elu(v)));
                alpha.push(a);
                pre.push(p);
                u.push(ui);
            }
            caches.push(HeadCache { g, alpha, pre, u });
        }
        (caches, z)
    }

    fn decoder(&self) -> &[f64] {
        &self.params[self.decoder_offset()..]
    }

    /// Raw ordered-pair scores `B_ij` (diagonal zero).
    fn pair_scores(&self, z: &[Vec<f64>]) -> Matrix {
        let n = self.n_nodes;
        let mut b = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let input: Vec<f64> = z[i].iter().chain(&z[j]).copied().collect();
                    let out = nn::forward_trace(&self.decoder_arch, self.decoder(), &input);
                    b[(i, j)] = sigmoid(out.output()[0]);
                }
            }
        }
        b
    }

    fn mse(a: &Matrix, x: &Matrix) -> f64 {
        let n = a.rows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += (a[(i, j)] - x[(i, j)]).powi(2);
                }
            }
        }
        total / (n * (n - 1)) as f64
    }

    /// Off-diagonal MSE between the symmetrized reconstruction and `X`.
    pub fn loss(&self, x: &FeatureMatrix) -> Result<f64> {
        self.check(x)?;
        let nbrs = neighbourhoods(x.values(), self.cfg.attention);
        let (_, z) = self.encode(x.values(), &nbrs);
        let b = self.pair_scores(&z);
        let a = Matrix::from_fn(self.n_nodes, self.n_nodes, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
        Ok(Self::mse(&a, x.values()))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: &FeatureMatrix) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let (n, e) = (self.n_nodes, self.cfg.embed_dim);
        let xv = x.values();
        let nbrs = neighbourhoods(xv, self.cfg.attention);
        let (caches, z) = self.encode(xv, &nbrs);

        // Decoder forward, keeping traces for the backward pass.
        let mut traces = Vec::with_capacity(n * (n - 1));
        let mut b = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let input: Vec<f64> = z[i].iter().chain(&z[j]).copied().collect();
                    let tr = nn::forward_trace(&self.decoder_arch, self.decoder(), &input);
                    b[(i, j)] = sigmoid(tr.output()[0]);
                    traces.push(((i, j), tr));
                }
            }
        }
        let a = Matrix::from_fn(n, n, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
        let loss = Self::mse(&a, xv);

        let scale = 2.0 / (n * (n - 1)) as f64;
        let d_a = |i: usize, j: usize| scale * (a[(i, j)] - xv[(i, j)]);
        let mut grad = vec![0.0; self.params.len()];
        let dec_off = self.decoder_offset();
        let width = self.cfg.heads * e;
        let mut dz = vec![vec![0.0; width]; n];
        for ((i, j), tr) in &traces {
            let (i, j) = (*i, *j);
            let d_b = 0.5 * (d_a(i, j) + d_a(j, i));
            let bij = b[(i, j)];
            let d_logit = d_b * bij * (1.0 - bij);
            let d_in = nn::backward(&self.decoder_arch, self.decoder(), tr, &[d_logit], &mut grad[dec_off..]);
            for (o, v) in dz[i].iter_mut().zip(&d_in[..width]) {
                *o += v;
            }
            for (o, v) in dz[j].iter_mut().zip(&d_in[width..]) {
                *o += v;
            }
        }

        for (h, c) in caches.iter().enumerate() {
            let base = h * self.head_len();
            let a_src = &self.params[base + e * n..base + e * n + e];
            let a_dst = &self.params[base + e * n + e..base + e * n + 2 * e];
            let mut dg = vec![vec![0.0; e]; n];
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            for i in 0..n {
                let du: Vec<f64> = (0..e).map(|r| dz[i][h * e + r] * elu_grad(c.u[i][r])).collect();
                let d_alpha: Vec<f64> = nbrs[i].iter().map(|&j| crate::matrix::dot(&du, &c.g[j])).collect();
                for (&j, &aij) in nbrs[i].iter().zip(&c.alpha[i]) {
                    for (o, v) in dg[j].iter_mut().zip(&du) {
                        *o += aij * v;
                    }
                }
                let weighted: f64 = c.alpha[i].iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                for (k, &j) in nbrs[i].iter().enumerate() {
                    let d_e = c.alpha[i][k] * (d_alpha[k] - weighted);
                    let d_pre = d_e * leaky_grad(c.pre[i][k]);
                    ds[i] += d_pre;
                    dt[j] += d_pre;
                }
            }
            let (g_w, rest) = grad[base..base + self.head_len()].split_at_mut(e * n);
            let (g_src, g_dst) = rest.split_at_mut(e);
            for i in 0..n {
                for r in 0..e {
                    g_src[r] += ds[i] * c.g[i][r];
                    g_dst[r] += dt[i] * c.g[i][r];
                    dg[i][r] += ds[i] * a_src[r] + dt[i] * a_dst[r];
                }
            }
            for i in 0..n {
                for r in 0..e {
                    let d = dg[i][r];
                    if d != 0.0 {
                        for (gw, xv) in g_w[r * n..(r + 1) * n].iter_mut().zip(xv.row(i)) {
                            *gw += d * xv;
                        }
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    /// Concatenated per-head embeddings `z_i`.
    pub fn embed(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let nbrs = neighbourhoods(x.values(), self.cfg.attention);
        Ok(self.encode(x.values(), &nbrs).1)
    }

    pub fn infer(&self, x: &FeatureMatrix) -> Result<SoftAdjacency> {
        let z = self.embed(x)?;
        SoftAdjacency::from_scores(&self.pair_scores(&z))
    }

    pub fn decoder_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.decoder_arch.clone(), self.decoder().to_vec())
    }
}
