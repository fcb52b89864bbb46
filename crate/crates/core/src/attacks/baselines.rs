//! Reference attacks: L2-regularized logistic regression on pair features,
//! 2-means clustering of feature values, and a plain threshold.

use rand::Rng as _;

use super::{all_pairs, build_node_features, build_pair_features, check_both_classes, LabeledPair, SoftAdjacency};
use super::edgepre::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::metrics::FeatureMatrix;
use crate::seed::{self, stream};
use crate::topology::AdjacencyMatrix;

pub const LOGISTIC_ITERATIONS: usize = 2000;
pub const KMEANS_RESTARTS: usize = 50;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub use_interactions: bool,
}

impl LogisticModel {
    /// Full-batch gradient descent on mean BCE plus `l2/2 · (‖w‖² + b²)`,
    /// with step `1/L` for the objective's gradient Lipschitz bound `L`.
    pub fn train(x: &FeatureMatrix, pairs: &[LabeledPair], l2: f64, use_interactions: bool) -> Result<Self> {
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 must be a finite nonnegative number, got {l2}")));
        }
        check_both_classes(pairs)?;
        let nodes = build_node_features(x);
        let mut examples = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            let y = f64::from(u8::from(p.edge));
            examples.push((build_pair_features(&nodes[p.i], &nodes[p.j], use_interactions)?, y));
            examples.push((build_pair_features(&nodes[p.j], &nodes[p.i], use_interactions)?, y));
        }
        let d = examples[0].0.len();
        let max_sq = examples.iter().map(|(h, _)| matrix::dot(h, h)).fold(0.0, f64::max);
        let step = 1.0 / (0.25 * (max_sq + 1.0) + l2);
        let m = examples.len() as f64;
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..LOGISTIC_ITERATIONS {
            let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
            let mut gb = l2 * b;
            for (h, y) in &examples {
                let r = (sigmoid(matrix::dot(&w, h) + b) - y) / m;
                for (g, v) in gw.iter_mut().zip(h) {
                    *g += r * v;
                }
                gb += r;
            }
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= step * g;
            }
            b -= step * gb;
        }
        Ok(Self { weights: w, bias: b, use_interactions })
    }

    pub fn score(&self, x: &FeatureMatrix, i: usize, j: usize) -> Result<f64> {
        let h = build_pair_features(x.values().row(i), x.values().row(j), self.use_interactions)?;
        if h.len() != self.weights.len() {
            return Err(Error::Shape(format!("model expects {} features, pair has {}", self.weights.len(), h.len())));
        }
        Ok(sigmoid(matrix::dot(&self.weights, &h) + self.bias))
    }

    pub fn infer(&self, x: &FeatureMatrix) -> Result<SoftAdjacency> {
        let n = x.n_nodes();
        let mut raw = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    raw[(i, j)] = self.score(x, i, j)?;
                }
            }
        }
        SoftAdjacency::from_scores(&raw)
    }
}

pub fn baseline_logistic(x: &FeatureMatrix, pairs: &[LabeledPair], l2: f64) -> Result<SoftAdjacency> {
    LogisticModel::train(x, pairs, l2, true)?.infer(x)
}

/// Lloyd's algorithm for two centroids on scalars. Returns the centroids
/// (low, high) and the inertia.
fn two_means(values: &[f64], init: (f64, f64)) -> ((f64, f64), f64) {
    let (mut c0, mut c1) = if init.0 <= init.1 { init } else { (init.1, init.0) };
    for _ in 0..KMEANS_MAX_ITERS {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if (v - c0).abs() <= (v - c1).abs() {
                s0 += v;
                n0 += 1;
            } else {
                s1 += v;
                n1 += 1;
            }
        }
        let next0 = if n0 > 0 { s0 / n0 as f64 } else { c0 };
        let next1 = if n1 > 0 { s1 / n1 as f64 } else { c1 };
        if next0 == c0 && next1 == c1 {
            break;
        }
        c0 = next0;
        c1 = next1;
    }
    let inertia = values.iter().map(|&v| ((v - c0).powi(2)).min((v - c1).powi(2))).sum();
    ((c0.min(c1), c0.max(c1)), inertia)
}

/// 2-means over the off-diagonal upper-triangle values; the cluster with the
/// higher centroid is read as "edge".
pub fn baseline_kmeans(x: &FeatureMatrix, seed: u64) -> Result<AdjacencyMatrix> {
    let n = x.n_nodes();
    let pairs = all_pairs(n);
    let values: Vec<f64> = pairs.iter().map(|&(i, j)| x.get(i, j)).collect();
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::ConstantMetric);
    }
    let mut rng = seed::rng_for(seed, &[stream::KMEANS]);
    let mut best: Option<((f64, f64), f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let a = rng.random_range(0..distinct.len());
        let mut b = rng.random_range(0..distinct.len() - 1);
        if b >= a {
            b += 1;
        }
        let fit = two_means(&values, (distinct[a], distinct[b]));
        if best.is_none_or(|(_, inertia)| fit.1 < inertia) {
            best = Some(fit);
        }
    }
    let ((lo, hi), _) = best.expect("at least one restart");
    Ok(AdjacencyMatrix::from_predicate(n, |i, j| {
        let v = x.get(i, j);
        (v - hi).abs() < (v - lo).abs()
    }))
}

/// Edge iff the feature value exceeds `tau`.
pub fn baseline_threshold(x: &FeatureMatrix, tau: f64) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("threshold must lie in [0, 1], got {tau}")));
    }
    Ok(AdjacencyMatrix::from_predicate(x.n_nodes(), |i, j| x.get(i, j) > tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::new(Matrix::from_rows(&rows).unwrap(), vec![]).unwrap()
    }

    #[test]
    fn threshold_extremes() {
        let x = features(vec![vec![1.0, 0.0, 0.3], vec![0.0, 1.0, 1.0], vec![0.3, 1.0, 1.0]]);
        assert_eq!(baseline_threshold(&x, 0.0).unwrap().n_edges(), 2);
        assert_eq!(baseline_threshold(&x, 1.0).unwrap().n_edges(), 0);
        assert_eq!(baseline_threshold(&x, 0.5).unwrap().n_edges(), 1);
        assert!(baseline_threshold(&x, 1.5).is_err());
    }

    #[test]
    fn kmeans_splits_at_the_gap() {
        let x = features(vec![
            vec![1.0, 0.9, 0.1, 0.1],
            vec![0.9, 1.0, 0.1, 0.1],
            vec![0.1, 0.1, 1.0, 0.9],
            vec![0.1, 0.1, 0.9, 1.0],
        ]);
        let a = baseline_kmeans(&x, 3).unwrap();
        assert!(a.get(0, 1) && a.get(2, 3));
        assert_eq!(a.n_edges(), 2);
        let flat = features(vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
        assert!(matches!(baseline_kmeans(&flat, 0), Err(Error::ConstantMetric)));
    }

    #[test]
    fn logistic_separates_and_shrinks() {
        let x = features(vec![
            vec![1.0, 0.9, 0.1, 0.1],
            vec![0.9, 1.0, 0.1, 0.1],
            vec![0.1, 0.1, 1.0, 0.9],
            vec![0.1, 0.1, 0.9, 1.0],
        ]);
        let pairs = vec![
            LabeledPair { i: 0, j: 1, edge: true },
            LabeledPair { i: 2, j: 3, edge: true },
            LabeledPair { i: 0, j: 2, edge: false },
            LabeledPair { i: 1, j: 3, edge: false },
        ];
        let s = baseline_logistic(&x, &pairs, 0.0).unwrap();
        for p in &pairs {
            assert_eq!(s.get(p.i, p.j) >= 0.5, p.edge);
        }
        let flat = baseline_logistic(&x, &pairs, 1e12).unwrap();
        assert!(flat.values().as_slice().iter().enumerate().all(|(k, &v)| k % 5 == 0 || (v - 0.5).abs() < 1e-9));
    }
}
