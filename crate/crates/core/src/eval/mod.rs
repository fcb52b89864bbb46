//! Scoring predicted adjacencies, and the experiment pipeline and sweeps
//! built on top of it.

use serde::{Deserialize, Serialize};

use crate::attacks::{all_pairs, LabeledPair, Scenario, SoftAdjacency, BINARIZE_THRESHOLD};
use crate::error::{Error, Result};
use crate::topology::AdjacencyMatrix;

pub mod pipeline;
pub mod sweep;

pub use pipeline::{run_pipeline, PipelineConfig, PipelineRun};
pub use sweep::{ResultRow, SweepCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    AllPairs,
    /// All pairs except those whose labels the attacker trained on.
    HeldOut,
}

impl EvalPolicy {
    /// Held-out for scenarios with known edge labels, all pairs otherwise.
    pub fn default_for(s: Scenario) -> Self {
        if s.knows_edges() {
            EvalPolicy::HeldOut
        } else {
            EvalPolicy::AllPairs
        }
    }
}

/// Unordered pairs (`i < j`) scored under `policy`.
pub fn eval_pairs(n: usize, policy: EvalPolicy, known: &[LabeledPair]) -> Vec<(usize, usize)> {
    let pairs = all_pairs(n);
    match policy {
        EvalPolicy::AllPairs => pairs,
        EvalPolicy::HeldOut => {
            let seen: std::collections::HashSet<(usize, usize)> = known.iter().map(|p| (p.i, p.j)).collect();
            pairs.into_iter().filter(|p| !seen.contains(p)).collect()
        }
    }
}

fn check_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidEvalSet("no pairs to evaluate".into()));
    }
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= n || j >= n) {
        return Err(Error::InvalidEvalSet(format!("pair ({i}, {j}) is a self-pair or out of range")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> F1 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    // Harmonic mean of precision and recall, as one division of counts.
    let f1 = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
    F1 { f1, precision, recall }
}

/// F1 with edges as the positive class; every ratio with a zero
/// denominator is taken as 0.
pub fn f1_score(pred: &AdjacencyMatrix, truth: &AdjacencyMatrix, pairs: &[(usize, usize)]) -> Result<F1> {
    if pred.n_nodes() != truth.n_nodes() {
        return Err(Error::Shape(format!("prediction has {} nodes, truth {}", pred.n_nodes(), truth.n_nodes())));
    }
    check_pairs(truth.n_nodes(), pairs)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for &(i, j) in pairs {
        match (pred.get(i, j), truth.get(i, j)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Exact rank AUC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!("{n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let mid = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[k..=end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Highest F1 over thresholds at the distinct score values (edge iff
/// score ≥ τ). Ties in F1 keep the larger threshold.
pub fn best_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let total_pos = labels.iter().filter(|&&l| l).count();
    let (mut tp, mut fp) = (0, 0);
    let mut best = (0.0, 1.0);
    let mut k = 0;
    while k < order.len() {
        let tau = scores[order[k]];
        while k < order.len() && scores[order[k]] == tau {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let f = f1_from_counts(tp, fp, total_pos - tp).f1;
        if f > best.0 {
            best = (f, tau);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1_05: f64,
    pub best_f1: f64,
    pub best_tau: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_eval_pairs: usize,
    pub eval_pair_policy: EvalPolicy,
    /// Evaluation pairs held one class only; `auc` is then reported as 0.5.
    pub degenerate_labels: bool,
}

/// Scores `soft` (thresholded at 0.5 for F1) against `truth` over the pairs
/// selected by `policy`.
pub fn evaluate(
    soft: &SoftAdjacency,
    truth: &AdjacencyMatrix,
    policy: EvalPolicy,
    known: &[LabeledPair],
) -> Result<EvalResult> {
    let pred = soft.binarize(BINARIZE_THRESHOLD);
    let pairs = eval_pairs(truth.n_nodes(), policy, known);
    let scores: Vec<f64> = pairs.iter().map(|&(i, j)| soft.get(i, j)).collect();
    evaluate_scores(&pred, &scores, truth, &pairs, policy)
}

/// Scores a hard prediction; its 0/1 entries double as ranking scores.
pub fn evaluate_binary(
    pred: &AdjacencyMatrix,
    truth: &AdjacencyMatrix,
    policy: EvalPolicy,
    known: &[LabeledPair],
) -> Result<EvalResult> {
    let pairs = eval_pairs(truth.n_nodes(), policy, known);
    let scores: Vec<f64> = pairs.iter().map(|&(i, j)| f64::from(u8::from(pred.get(i, j)))).collect();
    evaluate_scores(pred, &scores, truth, &pairs, policy)
}

fn evaluate_scores(
    pred: &AdjacencyMatrix,
    scores: &[f64],
    truth: &AdjacencyMatrix,
    pairs: &[(usize, usize)],
    policy: EvalPolicy,
) -> Result<EvalResult> {
    let f = f1_score(pred, truth, pairs)?;
    let labels: Vec<bool> = pairs.iter().map(|&(i, j)| truth.get(i, j)).collect();
    let (auc, degenerate_labels) = match auc_roc(scores, &labels) {
        Ok(a) => (a, false),
        Err(Error::DegenerateLabels(_)) => (0.5, true),
        Err(e) => return Err(e),
    };
    let (best_f1, best_tau) = best_f1(scores, &labels);
    Ok(EvalResult {
        f1_05: f.f1,
        best_f1,
        best_tau,
        auc,
        precision: f.precision,
        recall: f.recall,
        n_eval_pairs: pairs.len(),
        eval_pair_policy: policy,
        degenerate_labels,
    })
}
