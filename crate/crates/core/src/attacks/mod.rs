//! Topology inference attacks: a supervised pair decoder (EDGEPRE), an
//! unsupervised graph-attention autoencoder (INFERGAT), simple baselines,
//! and the scenario dispatcher that picks features by attacker knowledge.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::FeatureMatrix;
use crate::seed::{self, stream};
use crate::topology::AdjacencyMatrix;

pub mod baselines;
pub mod edgepre;
pub mod infergat;
pub mod scenario;

pub use edgepre::{EdgePreConfig, EdgePreModel};
pub use infergat::{InferGatConfig, InferGatModel};
pub use scenario::{run_scenario, AttackConfig, AttackerView, ScenarioOutcome};

pub const DEFAULT_LABELED_FRACTION: f64 = 0.3;
pub const BINARIZE_THRESHOLD: f64 = 0.5;
const LABEL_SAMPLE_ATTEMPTS: usize = 1000;

/// Attacker knowledge classes, from white-box (1) to partial-model (5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "SC1")]
    Sc1,
    #[serde(rename = "SC2")]
    Sc2,
    #[serde(rename = "SC3")]
    Sc3,
    #[serde(rename = "SC4")]
    Sc4,
    #[serde(rename = "SC5")]
    Sc5,
}

impl Scenario {
    pub const SUPPORTED: [Scenario; 4] = [Scenario::Sc1, Scenario::Sc2, Scenario::Sc3, Scenario::Sc4];

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scenario::Sc1),
            2 => Ok(Scenario::Sc2),
            3 => Ok(Scenario::Sc3),
            4 => Ok(Scenario::Sc4),
            5 => Ok(Scenario::Sc5),
            _ => Err(Error::InvalidConfig(format!("scenario must be 1..=5, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::Sc1 => 1,
            Scenario::Sc2 => 2,
            Scenario::Sc3 => 3,
            Scenario::Sc4 => 4,
            Scenario::Sc5 => 5,
        }
    }

    pub fn knows_data(self) -> bool {
        matches!(self, Scenario::Sc1 | Scenario::Sc3)
    }

    pub fn knows_edges(self) -> bool {
        matches!(self, Scenario::Sc1 | Scenario::Sc2)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SC{}", self.number())
    }
}

/// An observed node pair, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub i: usize,
    pub j: usize,
    pub edge: bool,
}

/// All unordered pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioKnowledge {
    pub scenario: Scenario,
    pub n_nodes: usize,
    /// `M′`: nodes whose models the attacker holds.
    pub known_models: Vec<usize>,
    /// `D′`: nodes whose local datasets the attacker holds.
    pub known_datasets: Vec<usize>,
    /// `E′`: labeled node pairs.
    pub known_pairs: Vec<LabeledPair>,
}

impl ScenarioKnowledge {
    /// Builds the knowledge an attacker in `scenario` holds. For SC1/SC2 a
    /// fraction `labeled_frac` of all pairs is drawn with their true labels,
    /// redrawn until both classes appear.
    pub fn sample(
        scenario: Scenario,
        truth: &AdjacencyMatrix,
        labeled_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = truth.n_nodes();
        let everyone: Vec<usize> = (0..n).collect();
        let known_models = if scenario == Scenario::Sc5 { (0..(n / 2).max(1)).collect() } else { everyone.clone() };
        let known_datasets = if scenario.knows_data() { everyone } else { Vec::new() };
        let known_pairs = if scenario.knows_edges() { sample_labeled_pairs(truth, labeled_frac, seed)? } else { Vec::new() };
        let k = Self { scenario, n_nodes: n, known_models, known_datasets, known_pairs };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        let bad = |msg: String| Err(Error::KnowledgeViolation(format!("{}: {msg}", self.scenario)));
        for &v in self.known_models.iter().chain(&self.known_datasets) {
            if v >= n {
                return Err(Error::Index { index: v, n_nodes: n });
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.known_pairs {
            if p.i >= p.j || p.j >= n {
                return bad(format!("pair ({}, {}) is not an ordered in-range pair", p.i, p.j));
            }
            if !seen.insert((p.i, p.j)) {
                return bad(format!("pair ({}, {}) listed twice", p.i, p.j));
            }
        }
        let all_models = distinct(&self.known_models) == n;
        let n_data = distinct(&self.known_datasets);
        let n_pairs = self.known_pairs.len();
        let total_pairs = n * (n - 1) / 2;
        match self.scenario {
            Scenario::Sc1 | Scenario::Sc3 if !all_models || n_data != n => {
                bad("requires every node's model and dataset".into())
            }
            Scenario::Sc2 | Scenario::Sc4 if !all_models || n_data != 0 => {
                bad("requires every model and no datasets".into())
            }
            Scenario::Sc1 | Scenario::Sc2 if n_pairs == 0 || n_pairs >= total_pairs => {
                bad("known pairs must be a nonempty proper subset of all pairs".into())
            }
            Scenario::Sc3 | Scenario::Sc4 if n_pairs != 0 => bad("no edge labels may be known".into()),
            Scenario::Sc5 => {
                let m = distinct(&self.known_models);
                if m == 0 || m == n || n_data != 0 || n_pairs != 0 {
                    bad("requires a proper nonempty subset of models and nothing else".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn distinct(v: &[usize]) -> usize {
    v.iter().collect::<BTreeSet<_>>().len()
}

/// Samples `round(ρ · N(N−1)/2)` pairs (at least 1, at most all but one)
/// with their true labels; redraws until both classes are present.
pub fn sample_labeled_pairs(truth: &AdjacencyMatrix, frac: f64, seed: u64) -> Result<Vec<LabeledPair>> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidConfig(format!("labeled fraction must lie in (0, 1), got {frac}")));
    }
    let pairs = all_pairs(truth.n_nodes());
    let total = pairs.len();
    if total < 2 {
        return Err(Error::DegenerateLabels("need at least two node pairs".into()));
    }
    let m = ((frac * total as f64).round() as usize).clamp(1, total - 1);
    let mut rng = seed::rng_for(seed, &[stream::LABELS]);
    for _ in 0..LABEL_SAMPLE_ATTEMPTS {
        let mut chosen: Vec<LabeledPair> = index::sample(&mut rng, total, m)
            .into_iter()
            .map(|k| {
                let (i, j) = pairs[k];
                LabeledPair { i, j, edge: truth.get(i, j) }
            })
            .collect();
        if chosen.iter().any(|p| p.edge) && chosen.iter().any(|p| !p.edge) {
            chosen.sort_unstable();
            return Ok(chosen);
        }
    }
    Err(Error::DegenerateLabels(format!("no sample of {m} pairs contained both edges and non-edges")))
}

pub(crate) fn check_both_classes(pairs: &[LabeledPair]) -> Result<()> {
    let pos = pairs.iter().filter(|p| p.edge).count();
    if pos == 0 || pos == pairs.len() {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positive pairs out of {}; training needs both classes",
            pairs.len()
        )));
    }
    Ok(())
}

/// CSV with header `i,j,edge`, one labeled pair per line.
pub fn labeled_pairs_to_csv(pairs: &[LabeledPair]) -> String {
    let mut out = String::from("i,j,edge\n");
    for p in pairs {
        out.push_str(&format!("{},{},{}\n", p.i, p.j, u8::from(p.edge)));
    }
    out
}

/// Reads `i,j,edge` rows (`edge` is 0 or 1) with `i < j` and no repeats.
pub fn labeled_pairs_from_csv(text: &str) -> Result<Vec<LabeledPair>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header_ok = rdr.headers().map(|h| h.iter().eq(["i", "j", "edge"])).unwrap_or(false);
    if !header_ok {
        return Err(Error::parse(1, "expected header i,j,edge"));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let num = |k: usize| rec[k].parse::<usize>().map_err(|_| Error::parse(line, format!("bad integer {:?}", &rec[k])));
        let (i, j) = (num(0)?, num(1)?);
        let edge = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("edge must be 0 or 1, got {other:?}"))),
        };
        if i >= j {
            return Err(Error::parse(line, format!("pair ({i}, {j}) must have i < j")));
        }
        if !seen.insert((i, j)) {
            return Err(Error::parse(line, format!("pair ({i}, {j}) repeated")));
        }
        out.push(LabeledPair { i, j, edge });
    }
    Ok(out)
}

/// Node features are the rows of the feature matrix (`d = N`).
pub fn build_node_features(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    x.values().to_rows()
}

/// `[x_i ‖ x_j]`, extended with `x_i ⊙ x_j` and `|x_i − x_j|` when
/// `use_interactions` is set.
pub fn build_pair_features(xi: &[f64], xj: &[f64], use_interactions: bool) -> Result<Vec<f64>> {
    if xi.len() != xj.len() {
        return Err(Error::Shape(format!("node features of length {} and {}", xi.len(), xj.len())));
    }
    let mut h = Vec::with_capacity(xi.len() * if use_interactions { 4 } else { 2 });
    h.extend_from_slice(xi);
    h.extend_from_slice(xj);
    if use_interactions {
        h.extend(xi.iter().zip(xj).map(|(a, b)| a * b));
        h.extend(xi.iter().zip(xj).map(|(a, b)| (a - b).abs()));
    }
    Ok(h)
}

/// Symmetric edge scores in `[0, 1]`; the diagonal is zero and ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAdjacency {
    values: Matrix,
}

impl SoftAdjacency {
    /// Symmetrizes `raw` by averaging with its transpose and zeroes the diagonal.
    pub fn from_scores(raw: &Matrix) -> Result<Self> {
        if !raw.is_square() {
            return Err(Error::Shape("score matrix must be square".into()));
        }
        if let Some(v) = raw.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("score {v} outside [0, 1]")));
        }
        let n = raw.rows();
        let values = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.5 * (raw[(i, j)] + raw[(j, i)]) });
        Ok(Self { values })
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

    /// Edge wherever the score reaches `tau`.
    pub fn binarize(&self, tau: f64) -> AdjacencyMatrix {
        AdjacencyMatrix::from_predicate(self.n_nodes(), |i, j| self.get(i, j) >= tau)
    }

    pub fn to_csv(&self) -> String {
        self.values.to_csv()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::from_scores(&Matrix::from_csv(text)?)
    }
}
