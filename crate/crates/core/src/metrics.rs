//! Pairwise attack metrics computed from node models (and, where the
//! attacker holds them, node datasets), and their conversion into feature
//! matrices where larger means "more likely connected".

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{RoundTrace, SimulationLog};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::nn::{self, ModelParams};
use crate::seed::{self, stream};

pub const DEFAULT_SENSITIVITY_SUBSAMPLE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RelativeLoss,
    RelativeEntropy,
    RelativeSensitivity,
    CosineSimilarity,
    EuclideanSimilarity,
    CurvatureDivergence,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::RelativeLoss,
        MetricKind::RelativeEntropy,
        MetricKind::RelativeSensitivity,
        MetricKind::CosineSimilarity,
        MetricKind::EuclideanSimilarity,
        MetricKind::CurvatureDivergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::RelativeLoss => "relative_loss",
            MetricKind::RelativeEntropy => "relative_entropy",
            MetricKind::RelativeSensitivity => "relative_sensitivity",
            MetricKind::CosineSimilarity => "cosine_similarity",
            MetricKind::EuclideanSimilarity => "euclidean_similarity",
            MetricKind::CurvatureDivergence => "curvature_divergence",
        }
    }

    /// Needs the nodes' local datasets, not just their models.
    pub fn needs_data(self) -> bool {
        matches!(self, MetricKind::RelativeLoss | MetricKind::RelativeEntropy | MetricKind::RelativeSensitivity)
    }

    /// Larger raw values mean the pair looks more alike.
    pub fn is_similarity(self) -> bool {
        matches!(self, MetricKind::CosineSimilarity | MetricKind::EuclideanSimilarity)
    }

    /// Model `i` on data `j` need not equal model `j` on data `i`.
    pub fn is_asymmetric(self) -> bool {
        self.needs_data()
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "relative_loss" | "loss" => MetricKind::RelativeLoss,
            "relative_entropy" | "entropy" => MetricKind::RelativeEntropy,
            "relative_sensitivity" | "sensitivity" => MetricKind::RelativeSensitivity,
            "cosine_similarity" | "cosine" => MetricKind::CosineSimilarity,
            "euclidean_similarity" | "euclidean" => MetricKind::EuclideanSimilarity,
            "curvature_divergence" | "curvature" => MetricKind::CurvatureDivergence,
            other => return Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    pub kind: MetricKind,
    pub values: Matrix,
    /// Last round whose snapshots contributed.
    pub round: usize,
    pub diagonal_defined: bool,
}

fn fill(n: usize, f: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| f(i, j)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

fn check_data(models: &[ModelParams], datasets: &[Dataset]) -> Result<()> {
    if datasets.len() != models.len() {
        return Err(Error::KnowledgeViolation(format!(
            "{} datasets available for {} models; relative metrics need every node's data",
            datasets.len(),
            models.len()
        )));
    }
    if let Some(j) = datasets.iter().position(Dataset::is_empty) {
        return Err(Error::KnowledgeViolation(format!("dataset of node {j} is empty")));
    }
    Ok(())
}

fn check_models(models: &[ModelParams]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::InvalidSize(format!("need at least 2 models, got {}", models.len())));
    }
    let arch = models[0].arch();
    if models.iter().any(|m| m.arch() != arch) {
        return Err(Error::Shape("models do not share an architecture".into()));
    }
    Ok(())
}

/// `values[i][j]` = mean cross-entropy of model `i` on dataset `j`.
pub fn relative_loss(models: &[ModelParams], datasets: &[Dataset]) -> Result<MetricMatrix> {
    check_models(models)?;
    check_data(models, datasets)?;
    let values = fill(models.len(), |i, j| nn::dataset_loss(&models[i], &datasets[j]))?;
    Ok(MetricMatrix { kind: MetricKind::RelativeLoss, values, round: 0, diagonal_defined: true })
}

/// `values[i][j] = −(1/|D_j|) Σ_x Σ_k y_k(x) log f_{i,k}(x)` with one-hot `y`.
pub fn relative_entropy(models: &[ModelParams], datasets: &[Dataset]) -> Result<MetricMatrix> {
    check_models(models)?;
    check_data(models, datasets)?;
    let values = fill(models.len(), |i, j| {
        let d = &datasets[j];
        let k = models[i].arch().d_out();
        let mut total = 0.0;
        for s in 0..d.len() {
            let z = nn::forward(&models[i], d.sample(s))?;
            let lse = nn::log_sum_exp(&z);
            for (c, &zc) in z.iter().enumerate().take(k) {
                let y = f64::from(u8::from(c == d.label(s)));
                total -= y * (zc - lse);
            }
        }
        Ok(total / d.len() as f64)
    })?;
    Ok(MetricMatrix { kind: MetricKind::RelativeEntropy, values, round: 0, diagonal_defined: true })
}

/// Indices of the samples of dataset `j` used for Jacobian evaluation.
pub fn sensitivity_sample(len: usize, subsample: usize, seed: u64, j: usize) -> Vec<usize> {
    if subsample >= len {
        return (0..len).collect();
    }
    let mut rng = seed::rng_for(seed, &[stream::SENSITIVITY, j as u64]);
    let mut idx = index::sample(&mut rng, len, subsample).into_vec();
    idx.sort_unstable();
    idx
}

/// Mean Frobenius norm of the softmax Jacobian of model `i` over a seeded
/// subsample of dataset `j`.
pub fn relative_sensitivity(
    models: &[ModelParams],
    datasets: &[Dataset],
    subsample: usize,
    seed: u64,
) -> Result<MetricMatrix> {
    check_models(models)?;
    check_data(models, datasets)?;
    if subsample < 1 {
        return Err(Error::InvalidConfig("sensitivity subsample must be >= 1".into()));
    }
    let samples: Vec<Vec<usize>> =
        datasets.iter().enumerate().map(|(j, d)| sensitivity_sample(d.len(), subsample, seed, j)).collect();
    let values = fill(models.len(), |i, j| {
        let mut total = 0.0;
        for &s in &samples[j] {
            total += nn::frobenius(&nn::jacobian(&models[i], datasets[j].sample(s))?);
        }
        Ok(total / samples[j].len() as f64)
    })?;
    Ok(MetricMatrix { kind: MetricKind::RelativeSensitivity, values, round: 0, diagonal_defined: true })
}

pub fn cosine_matrix(models: &[ModelParams]) -> Result<MetricMatrix> {
    check_models(models)?;
    let norms: Vec<f64> = models.iter().map(|m| matrix::norm(m.flat())).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateModel(format!("model {i} has zero norm")));
    }
    let values = fill(models.len(), |i, j| Ok(matrix::dot(models[i].flat(), models[j].flat()) / (norms[i] * norms[j])))?;
    Ok(MetricMatrix { kind: MetricKind::CosineSimilarity, values, round: 0, diagonal_defined: true })
}

pub fn euclidean_matrix(models: &[ModelParams]) -> Result<MetricMatrix> {
    check_models(models)?;
    let values = fill(models.len(), |i, j| Ok(1.0 / (1.0 + matrix::dist(models[i].flat(), models[j].flat()))))?;
    Ok(MetricMatrix { kind: MetricKind::EuclideanSimilarity, values, round: 0, diagonal_defined: true })
}

/// `‖Δa − Δb‖ / (½(‖Δa‖ + ‖Δb‖))`, taken as 0 when both updates vanish.
pub fn curvature_divergence(da: &[f64], db: &[f64]) -> f64 {
    let denom = 0.5 * (matrix::norm(da) + matrix::norm(db));
    if denom == 0.0 {
        0.0
    } else {
        matrix::dist(da, db) / denom
    }
}

pub fn curvature_divergence_matrix(models_t: &[ModelParams], models_prev: &[ModelParams]) -> Result<MetricMatrix> {
    check_models(models_t)?;
    if models_prev.len() != models_t.len() || models_prev.iter().any(|m| m.arch() != models_t[0].arch()) {
        return Err(Error::Shape("consecutive snapshots do not line up".into()));
    }
    let updates: Vec<Vec<f64>> = models_t
        .iter()
        .zip(models_prev)
        .map(|(a, b)| a.flat().iter().zip(b.flat()).map(|(x, y)| x - y).collect())
        .collect();
    let values = fill(models_t.len(), |i, j| Ok(curvature_divergence(&updates[i], &updates[j])))?;
    Ok(MetricMatrix { kind: MetricKind::CurvatureDivergence, values, round: 0, diagonal_defined: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPhase {
    /// `M_t`, after local training and before aggregation.
    Pre,
    /// `M̃_t`, after aggregation.
    #[default]
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub phase: SnapshotPhase,
    /// Average the metric over this many final rounds.
    pub last_k: usize,
    pub sensitivity_subsample: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { phase: SnapshotPhase::Post, last_k: 1, sensitivity_subsample: DEFAULT_SENSITIVITY_SUBSAMPLE, seed: 0 }
    }
}

fn snapshot<'a>(initial: &'a [ModelParams], rounds: &'a [RoundTrace], phase: SnapshotPhase, round: usize) -> &'a [ModelParams] {
    if round == 0 {
        return initial;
    }
    let r = &rounds[round - 1];
    match phase {
        SnapshotPhase::Pre => &r.params_pre_agg,
        SnapshotPhase::Post => &r.params_post_agg,
    }
}

pub fn compute_from_log(
    log: &SimulationLog,
    kind: MetricKind,
    datasets: Option<&[Dataset]>,
    opts: &MetricOptions,
) -> Result<MetricMatrix> {
    compute(&log.initial, &log.rounds, kind, datasets, opts)
}

/// Computes one metric from a model history (initial models plus per-round
/// snapshots). `datasets` are the attacker's copies of each node's local
/// data; data-based metrics fail without them.
pub fn compute(
    initial: &[ModelParams],
    rounds: &[RoundTrace],
    kind: MetricKind,
    datasets: Option<&[Dataset]>,
    opts: &MetricOptions,
) -> Result<MetricMatrix> {
    let t_max = rounds.len();
    if t_max == 0 {
        return Err(Error::InvalidTrace("log has no rounds".into()));
    }
    if opts.last_k < 1 || opts.last_k > t_max {
        return Err(Error::InvalidConfig(format!("last_k must lie in 1..={t_max}, got {}", opts.last_k)));
    }
    let data = match (kind.needs_data(), datasets) {
        (true, None) => {
            return Err(Error::KnowledgeViolation(format!("{kind} needs node datasets")));
        }
        (_, d) => d.unwrap_or(&[]),
    };
    let mut acc: Option<Matrix> = None;
    for round in (t_max + 1 - opts.last_k)..=t_max {
        let models = snapshot(initial, rounds, opts.phase, round);
        let m = match kind {
            MetricKind::RelativeLoss => relative_loss(models, data)?,
            MetricKind::RelativeEntropy => relative_entropy(models, data)?,
            MetricKind::RelativeSensitivity => {
                relative_sensitivity(models, data, opts.sensitivity_subsample, opts.seed)?
            }
            MetricKind::CosineSimilarity => cosine_matrix(models)?,
            MetricKind::EuclideanSimilarity => euclidean_matrix(models)?,
            MetricKind::CurvatureDivergence => {
                curvature_divergence_matrix(models, snapshot(initial, rounds, opts.phase, round - 1))?
            }
        };
        acc = Some(match acc {
            None => m.values,
            Some(a) => a.add(&m.values)?,
        });
    }
    let sum = acc.expect("at least one round");
    let k = opts.last_k as f64;
    let values = Matrix::from_fn(sum.rows(), sum.cols(), |i, j| sum[(i, j)] / k);
    Ok(MetricMatrix { kind, values, round: t_max, diagonal_defined: true })
}

/// Oriented, normalized `N × N` matrix in `[0, 1]` with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Matrix,
    sources: Vec<MetricKind>,
    round: usize,
    /// Off-diagonal range of the oriented metric before rescaling.
    bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMetadata {
    pub sources: Vec<MetricKind>,
    pub round: usize,
    pub n_nodes: usize,
    pub oriented_min: f64,
    pub oriented_max: f64,
}

impl FeatureMatrix {
    /// Wraps an already-oriented matrix. Entries must lie in `[0, 1]`; the
    /// diagonal is overwritten with 1.
    pub fn new(mut values: Matrix, sources: Vec<MetricKind>) -> Result<Self> {
        if !values.is_square() || values.rows() < 2 {
            return Err(Error::Shape(format!("feature matrix must be square with N >= 2, got {}x{}", values.rows(), values.cols())));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("feature value {v} outside [0, 1]")));
        }
        for i in 0..values.rows() {
            values[(i, i)] = 1.0;
        }
        Ok(Self { values, sources, round: 0, bounds: (0.0, 1.0) })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn sources(&self) -> &[MetricKind] {
        &self.sources
    }

    pub fn metadata(&self) -> FeatureMetadata {
        FeatureMetadata {
            sources: self.sources.clone(),
            round: self.round,
            n_nodes: self.n_nodes(),
            oriented_min: self.bounds.0,
            oriented_max: self.bounds.1,
        }
    }

    pub fn to_csv(&self) -> String {
        self.values.to_csv()
    }

    /// Reads a matrix CSV plus optional sidecar metadata.
    pub fn from_csv(text: &str, meta: Option<&FeatureMetadata>) -> Result<Self> {
        let mut f = Self::new(Matrix::from_csv(text)?, meta.map(|m| m.sources.clone()).unwrap_or_default())?;
        if let Some(m) = meta {
            if m.n_nodes != f.n_nodes() {
                return Err(Error::Shape(format!("metadata says {} nodes, matrix has {}", m.n_nodes, f.n_nodes())));
            }
            f.round = m.round;
            f.bounds = (m.oriented_min, m.oriented_max);
        }
        Ok(f)
    }
}

/// Negates dissimilarities, symmetrizes by averaging, min-max scales the
/// off-diagonal to `[0, 1]` and sets the diagonal to 1.
pub fn orient_and_normalize(m: &MetricMatrix) -> Result<FeatureMatrix> {
    let v = &m.values;
    let n = v.rows();
    if !v.is_square() || n < 2 {
        return Err(Error::Shape(format!("metric matrix must be square with N >= 2, got {}x{}", v.rows(), v.cols())));
    }
    if v.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateModel(format!("{} matrix has non-finite entries", m.kind)));
    }
    let sign = if m.kind.is_similarity() { 1.0 } else { -1.0 };
    let oriented = Matrix::from_fn(n, n, |i, j| sign * 0.5 * (v[(i, j)] + v[(j, i)]));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(oriented[(i, j)]);
                hi = hi.max(oriented[(i, j)]);
            }
        }
    }
    if hi - lo <= 0.0 {
        return Err(Error::ConstantMetric);
    }
    let values = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (oriented[(i, j)] - lo) / (hi - lo) });
    Ok(FeatureMatrix { values, sources: vec![m.kind], round: m.round, bounds: (lo, hi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpArchitecture};

    fn vecs(rows: &[&[f64]]) -> Vec<ModelParams> {
        let d = rows[0].len();
        // Zero padding into a [1, d, 1] net leaves dot products and distances unchanged.
        let arch = MlpArchitecture::new(vec![1, d, 1], Activation::Relu).unwrap();
        rows.iter()
            .map(|r| {
                let mut flat = r.to_vec();
                flat.resize(arch.n_params(), 0.0);
                ModelParams::new(arch.clone(), flat).unwrap()
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        let m = cosine_matrix(&vecs(&[&[1.0, 2.0], &[2.0, 4.0], &[-2.0, 1.0]])).unwrap();
        assert!((m.values[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(m.values[(0, 2)].abs() < 1e-15);
        assert!((m.values[(2, 2)] - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_matrix(&vecs(&[&[0.0, 0.0], &[1.0, 0.0]])), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn euclidean_examples() {
        let m = euclidean_matrix(&vecs(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(m.values[(0, 1)], 1.0 / 6.0);
        assert_eq!(m.values[(1, 1)], 1.0);
    }

    #[test]
    fn curvature_examples() {
        assert_eq!(curvature_divergence(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(curvature_divergence(&[1.0, 2.0], &[-1.0, -2.0]), 2.0);
        assert_eq!(curvature_divergence(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn orientation_of_loss_puts_smallest_pair_at_one() {
        let values = Matrix::from_rows(&[
            vec![0.1, 0.5, 2.0],
            vec![0.7, 0.2, 1.0],
            vec![2.0, 1.0, 0.3],
        ])
        .unwrap();
        let f = orient_and_normalize(&MetricMatrix { kind: MetricKind::RelativeLoss, values, round: 1, diagonal_defined: true }).unwrap();
        assert_eq!(f.get(0, 1), 1.0);
        assert_eq!(f.get(1, 0), 1.0);
        assert_eq!(f.get(0, 2), 0.0);
        assert_eq!(f.get(2, 2), 1.0);
        assert!(f.values().is_symmetric(0.0));
        let meta = f.metadata();
        assert_eq!((meta.oriented_min, meta.oriented_max), (-2.0, -0.6));
    }

    #[test]
    fn constant_metric_is_rejected() {
        let values = Matrix::filled(3, 3, 0.4);
        let m = MetricMatrix { kind: MetricKind::CosineSimilarity, values, round: 1, diagonal_defined: true };
        assert!(matches!(orient_and_normalize(&m), Err(Error::ConstantMetric)));
    }

    #[test]
    fn missing_data_is_a_knowledge_violation() {
        let models = vecs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(relative_loss(&models, &[]), Err(Error::KnowledgeViolation(_))));
    }

    #[test]
    fn feature_csv_round_trip() {
        let values = Matrix::from_rows(&[vec![1.0, 0.25], vec![0.25, 1.0]]).unwrap();
        let f = FeatureMatrix::new(values, vec![MetricKind::CosineSimilarity]).unwrap();
        let meta = f.metadata();
        assert_eq!(FeatureMatrix::from_csv(&f.to_csv(), Some(&meta)).unwrap(), f);
        assert!(FeatureMatrix::new(Matrix::filled(2, 2, 1.5), vec![]).is_err());
    }

    #[test]
    fn sensitivity_sample_is_sorted_and_seeded() {
        let a = sensitivity_sample(100, 10, 3, 2);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sensitivity_sample(100, 10, 3, 2));
        assert_eq!(sensitivity_sample(5, 10, 3, 2), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MetricKind::ALL {
            assert_eq!(k.name().parse::<MetricKind>().unwrap(), k);
        }
        assert!("nope".parse::<MetricKind>().is_err());
    }
}
