//! Dispatches an attack by scenario: the attacker's knowledge decides the
//! metric (data-based for SC1/SC3, model-only for SC2/SC4) and the algorithm
//! (EDGEPRE when edge labels are known, INFERGAT otherwise).

use serde::{Deserialize, Serialize};

use super::{EdgePreConfig, EdgePreModel, InferGatConfig, InferGatModel, LabeledPair, Scenario, ScenarioKnowledge, SoftAdjacency, BINARIZE_THRESHOLD};
use crate::data::Dataset;
use crate::engine::{RoundTrace, SimulationLog};
use crate::error::{Error, Result};
use crate::metrics::{self, FeatureMatrix, MetricKind, MetricOptions};
use crate::nn::ModelParams;
use crate::topology::AdjacencyMatrix;

/// Everything an attacker may use: shared models, the datasets and edge
/// labels its scenario grants, and nothing else. Ground truth stays behind.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerView {
    knowledge: ScenarioKnowledge,
    initial: Vec<ModelParams>,
    rounds: Vec<RoundTrace>,
    datasets: Option<Vec<Dataset>>,
}

impl AttackerView {
    pub fn new(log: &SimulationLog, datasets: Option<&[Dataset]>, knowledge: ScenarioKnowledge) -> Result<Self> {
        if knowledge.scenario == Scenario::Sc5 {
            return Err(Error::Unsupported("scenario 5 (partial model access) has no attack strategy".into()));
        }
        knowledge.validate()?;
        if knowledge.n_nodes != log.n_nodes() {
            return Err(Error::KnowledgeViolation(format!(
                "knowledge covers {} nodes, log has {}",
                knowledge.n_nodes,
                log.n_nodes()
            )));
        }
        let datasets = match (knowledge.scenario.knows_data(), datasets) {
            (true, Some(d)) => Some(d.to_vec()),
            (true, None) => {
                return Err(Error::KnowledgeViolation(format!("{} needs every node's dataset", knowledge.scenario)));
            }
            (false, Some(_)) => {
                return Err(Error::KnowledgeViolation(format!("{} grants no dataset access", knowledge.scenario)));
            }
            (false, None) => None,
        };
        Ok(Self { knowledge, initial: log.initial.clone(), rounds: log.rounds.clone(), datasets })
    }

    pub fn knowledge(&self) -> &ScenarioKnowledge {
        &self.knowledge
    }

    pub fn n_nodes(&self) -> usize {
        self.initial.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Replaces the scenario's default metric.
    pub metric: Option<MetricKind>,
    pub metrics: MetricOptions,
    pub edgepre: EdgePreConfig,
    pub infergat: InferGatConfig,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.edgepre.validate()?;
        self.infergat.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub metric: MetricKind,
    pub features: FeatureMatrix,
    pub soft: SoftAdjacency,
    pub predicted: AdjacencyMatrix,
    pub known_pairs: Vec<LabeledPair>,
}

pub fn default_metric(scenario: Scenario) -> MetricKind {
    if scenario.knows_data() {
        MetricKind::RelativeLoss
    } else {
        MetricKind::CosineSimilarity
    }
}

/// Computes the oriented feature matrix the scenario's attack consumes.
pub fn scenario_features(view: &AttackerView, cfg: &AttackConfig) -> Result<(MetricKind, FeatureMatrix)> {
    let scenario = view.knowledge.scenario;
    let kind = cfg.metric.unwrap_or_else(|| default_metric(scenario));
    if kind.needs_data() && !scenario.knows_data() {
        return Err(Error::KnowledgeViolation(format!("{kind} needs datasets, which {scenario} does not grant")));
    }
    let m = metrics::compute(&view.initial, &view.rounds, kind, view.datasets.as_deref(), &cfg.metrics)?;
    Ok((kind, metrics::orient_and_normalize(&m)?))
}

pub fn run_scenario(view: &AttackerView, cfg: &AttackConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let scenario = view.knowledge.scenario;
    let (metric, features) = scenario_features(view, cfg)?;
    let known_pairs = view.knowledge.known_pairs.clone();
    let soft = match scenario {
        Scenario::Sc1 | Scenario::Sc2 => EdgePreModel::train(&features, &known_pairs, &cfg.edgepre)?.infer(&features)?,
        Scenario::Sc3 | Scenario::Sc4 => InferGatModel::train(&features, &cfg.infergat)?.infer(&features)?,
        Scenario::Sc5 => return Err(Error::Unsupported("scenario 5 has no attack strategy".into())),
    };
    let predicted = soft.binarize(BINARIZE_THRESHOLD);
    Ok(ScenarioOutcome { scenario, metric, features, soft, predicted, known_pairs })
}
