//! EDGEPRE: an MLP decoder scoring node-pair features, trained with binary
//! cross-entropy on the partially known edge labels.

use serde::{Deserialize, Serialize};

use super::{build_node_features, build_pair_features, check_both_classes, LabeledPair, SoftAdjacency};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::FeatureMatrix;
use crate::nn::{self, Activation, Adam, MlpArchitecture, ModelParams};
use crate::seed::{self, stream};

/// Coordinate order of the two node rows inside a pair input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLayout {
    /// Coordinates in node-index order.
    Index,
    /// The pair's own coordinates first, the rest sorted by joint strength.
    #[default]
    Anchored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgePreConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub use_interactions: bool,
    pub layout: PairLayout,
    pub seed: u64,
}

impl Default for EdgePreConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 32], epochs: 300, learning_rate: 1e-2, use_interactions: true, layout: PairLayout::Anchored, seed: 0 }
    }
}

impl EdgePreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("edgepre epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("edgepre learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("edgepre hidden sizes must be nonempty and positive".into()));
        }
        Ok(())
    }

    fn architecture(&self, n_nodes: usize) -> Result<MlpArchitecture> {
        let d_in = n_nodes * if self.use_interactions { 4 } else { 2 };
        let mut sizes = vec![d_in];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        MlpArchitecture::new(sizes, Activation::Relu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgePreModel {
    pub decoder: ModelParams,
    pub use_interactions: bool,
    pub layout: PairLayout,
    pub n_nodes: usize,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Pair input for the ordered pair `(i, j)`. The anchored layout reorders
/// the coordinates of both rows identically: `i` and `j` first, then the
/// remaining nodes by descending `x_i[k] + x_j[k]`.
fn pair_input(x: &[Vec<f64>], i: usize, j: usize, use_interactions: bool, layout: PairLayout) -> Result<Vec<f64>> {
    let (xi, xj) = (&x[i], &x[j]);
    if layout == PairLayout::Index {
        return build_pair_features(xi, xj, use_interactions);
    }
    let mut rest: Vec<usize> = (0..xi.len()).filter(|&k| k != i && k != j).collect();
    rest.sort_by(|&a, &b| (xi[b] + xj[b]).total_cmp(&(xi[a] + xj[a])).then(a.cmp(&b)));
    let order: Vec<usize> = [i, j].into_iter().chain(rest).collect();
    let pi: Vec<f64> = order.iter().map(|&k| xi[k]).collect();
    let pj: Vec<f64> = order.iter().map(|&k| xj[k]).collect();
    build_pair_features(&pi, &pj, use_interactions)
}

/// Training examples: both orderings of every labeled pair.
fn training_set(
    x: &[Vec<f64>],
    pairs: &[LabeledPair],
    use_interactions: bool,
    layout: PairLayout,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        let y = f64::from(u8::from(p.edge));
        out.push((pair_input(x, p.i, p.j, use_interactions, layout)?, y));
        out.push((pair_input(x, p.j, p.i, use_interactions, layout)?, y));
    }
    Ok(out)
}

/// Mean BCE over the examples and its gradient w.r.t. the decoder parameters.
fn bce_and_grad(decoder: &ModelParams, examples: &[(Vec<f64>, f64)]) -> (f64, Vec<f64>) {
    let arch = decoder.arch();
    let mut grad = vec![0.0; decoder.flat().len()];
    let scale = 1.0 / examples.len() as f64;
    let mut loss = 0.0;
    for (h, y) in examples {
        let trace = nn::forward_trace(arch, decoder.flat(), h);
        let z = trace.output()[0];
        loss += softplus(z) - y * z;
        nn::backward(arch, decoder.flat(), &trace, &[(sigmoid(z) - y) * scale], &mut grad);
    }
    (loss * scale, grad)
}

impl EdgePreModel {
    pub fn train(x: &FeatureMatrix, pairs: &[LabeledPair], cfg: &EdgePreConfig) -> Result<Self> {
        cfg.validate()?;
        check_both_classes(pairs)?;
        let n = x.n_nodes();
        if let Some(p) = pairs.iter().find(|p| p.i >= n || p.j >= n) {
            return Err(Error::Index { index: p.i.max(p.j), n_nodes: n });
        }
        let nodes = build_node_features(x);
        let examples = training_set(&nodes, pairs, cfg.use_interactions, cfg.layout)?;
        let arch = cfg.architecture(n)?;
        let mut decoder = nn::init_params(&arch, seed::derive(cfg.seed, &[stream::EDGEPRE]));
        let mut opt = Adam::with_defaults(decoder.flat().len());
        for _ in 0..cfg.epochs {
            let (_, grad) = bce_and_grad(&decoder, &examples);
            opt.step(decoder.flat_mut(), &grad, cfg.learning_rate);
        }
        Ok(Self { decoder, use_interactions: cfg.use_interactions, layout: cfg.layout, n_nodes: n })
    }

    /// Mean BCE of the decoder on the labeled pairs (both orderings).
    pub fn loss(&self, x: &FeatureMatrix, pairs: &[LabeledPair]) -> Result<f64> {
        let examples = training_set(&build_node_features(x), pairs, self.use_interactions, self.layout)?;
        Ok(bce_and_grad(&self.decoder, &examples).0)
    }

    /// `σ(f_dec(h_ij))` for the ordered pair `(i, j)`.
    pub fn score(&self, x: &FeatureMatrix, i: usize, j: usize) -> Result<f64> {
        let n = x.n_nodes();
        if i >= n || j >= n {
            return Err(Error::Index { index: i.max(j), n_nodes: n });
        }
        let h = pair_input(&build_node_features(x), i, j, self.use_interactions, self.layout)?;
        Ok(sigmoid(nn::forward(&self.decoder, &h)?[0]))
    }

    /// Scores every ordered pair, then symmetrizes.
    pub fn infer(&self, x: &FeatureMatrix) -> Result<SoftAdjacency> {
        let n = x.n_nodes();
        if n != self.n_nodes {
            return Err(Error::Shape(format!("decoder trained on {} nodes, features have {n}", self.n_nodes)));
        }
        let nodes = build_node_features(x);
        let mut raw = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let h = pair_input(&nodes, i, j, self.use_interactions, self.layout)?;
                    raw[(i, j)] = sigmoid(nn::forward(&self.decoder, &h)?[0]);
                }
            }
        }
        SoftAdjacency::from_scores(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix, Vec<LabeledPair>) {
        // Nodes 0-1 and 2-3 linked; rows carry the linkage directly.
        let v = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.1, 0.1],
            vec![0.9, 1.0, 0.1, 0.1],
            vec![0.1, 0.1, 1.0, 0.9],
            vec![0.1, 0.1, 0.9, 1.0],
        ])
        .unwrap();
        let pairs = vec![
            LabeledPair { i: 0, j: 1, edge: true },
            LabeledPair { i: 0, j: 2, edge: false },
            LabeledPair { i: 2, j: 3, edge: true },
            LabeledPair { i: 1, j: 3, edge: false },
        ];
        (FeatureMatrix::new(v, vec![]).unwrap(), pairs)
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn fits_separable_labels() {
        let (x, pairs) = toy();
        let m = EdgePreModel::train(&x, &pairs, &EdgePreConfig::default()).unwrap();
        assert!(m.loss(&x, &pairs).unwrap() < 0.01);
        let a = m.infer(&x).unwrap();
        for p in &pairs {
            assert_eq!(a.get(p.i, p.j) >= 0.5, p.edge);
        }
        assert!(a.values().is_symmetric(1e-12));
        assert_eq!(m, EdgePreModel::train(&x, &pairs, &EdgePreConfig::default()).unwrap());
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let (x, mut pairs) = toy();
        pairs.retain(|p| p.edge);
        assert!(matches!(
            EdgePreModel::train(&x, &pairs, &EdgePreConfig::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn zero_output_layer_scores_one_half() {
        let (x, pairs) = toy();
        let cfg = EdgePreConfig { epochs: 1, ..EdgePreConfig::default() };
        let mut m = EdgePreModel::train(&x, &pairs, &cfg).unwrap();
        let last = m.decoder.arch().n_layers() - 1;
        m.decoder.layer_weights_mut(last).iter_mut().for_each(|w| *w = 0.0);
        let off = m.decoder.flat().len() - 1;
        m.decoder.flat_mut()[off] = 0.0;
        assert_eq!(m.score(&x, 0, 3).unwrap(), 0.5);
    }
}
