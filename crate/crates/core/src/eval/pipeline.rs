//! One experiment end to end: data, simulation, metrics, attack, scoring.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{evaluate, evaluate_binary, EvalPolicy, EvalResult};
use crate::attacks::baselines::{self, LogisticModel};
use crate::attacks::scenario::scenario_features;
use crate::attacks::{run_scenario, AttackConfig, AttackerView, Scenario, ScenarioKnowledge, ScenarioOutcome, DEFAULT_LABELED_FRACTION};
use crate::data::{self, Dataset, NodeData, PartitionPlan};
use crate::engine::{run_simulation, DpConfig, FederationConfig, SimulationLog};
use crate::error::{Error, Result};
use crate::nn::{Activation, MlpArchitecture, Optimizer, TrainConfig};
use crate::seed::{self, stream};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Partition {
    #[default]
    Iid,
    Dirichlet { alpha: f64 },
}

impl Partition {
    pub fn alpha(self) -> Option<f64> {
        match self {
            Partition::Iid => None,
            Partition::Dirichlet { alpha } => Some(alpha),
        }
    }
}

/// Synthetic Gaussian-blob data split across nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_classes: usize,
    pub n_features: usize,
    pub samples_per_node: usize,
    pub spread: f64,
    pub partition: Partition,
    /// Sample pool read from a dataset CSV instead of generated blobs. Its
    /// class and feature counts must match the fields above.
    pub dataset: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_classes: 4, n_features: 64, samples_per_node: 10, spread: 4.0, partition: Partition::Iid, dataset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 32], activation: Activation::Relu }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { local_epochs: 3, learning_rate: 0.01, batch_size: 4, optimizer: Optimizer::Sgd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSettings {
    pub clip_norm: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Held-out pairs when edge labels are known, all pairs otherwise.
    #[default]
    Auto,
    AllPairs,
    HeldOut,
}

impl PolicyChoice {
    pub fn resolve(self, s: Scenario) -> EvalPolicy {
        match self {
            PolicyChoice::Auto => EvalPolicy::default_for(s),
            PolicyChoice::AllPairs => EvalPolicy::AllPairs,
            PolicyChoice::HeldOut => EvalPolicy::HeldOut,
        }
    }
}

/// Everything an experiment needs besides the topology, scenarios and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    /// Defaults to the number of nodes.
    pub rounds: Option<usize>,
    pub shared_init: bool,
    pub dp: Option<DpSettings>,
    pub attack: AttackConfig,
    pub labeled_fraction: f64,
    pub eval_policy: PolicyChoice,
    /// Also score the logistic (SC1/SC2) or k-means (SC3/SC4) baseline.
    pub baselines: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            rounds: None,
            shared_init: false,
            dp: None,
            attack: AttackConfig::default(),
            labeled_fraction: DEFAULT_LABELED_FRACTION,
            eval_policy: PolicyChoice::Auto,
            baselines: false,
        }
    }
}

pub const LOGISTIC_L2: f64 = 1e-3;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_classes < 2 || d.n_features < 1 || d.samples_per_node < d.n_classes {
            return Err(Error::InvalidConfig(format!(
                "data needs >= 2 classes, >= 1 feature and >= n_classes samples per node (got {}, {}, {})",
                d.n_classes, d.n_features, d.samples_per_node
            )));
        }
        if !(d.spread > 0.0 && d.spread.is_finite()) {
            return Err(Error::InvalidConfig(format!("spread must be positive, got {}", d.spread)));
        }
        if let Partition::Dirichlet { alpha } = d.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidConfig(format!("dirichlet alpha must be positive, got {alpha}")));
            }
        }
        if self.model.hidden.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one hidden layer".into()));
        }
        self.train_config(0).validate()?;
        if self.rounds == Some(0) {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("labeled_fraction must lie in (0, 1), got {}", self.labeled_fraction)));
        }
        self.attack.validate()
    }

    pub fn architecture(&self) -> Result<MlpArchitecture> {
        let mut sizes = vec![self.data.n_features];
        sizes.extend_from_slice(&self.model.hidden);
        sizes.push(self.data.n_classes);
        MlpArchitecture::new(sizes, self.model.activation)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            local_epochs: self.train.local_epochs,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            seed,
        }
    }
}

/// Reads the configured dataset file, checking it against the declared
/// class and feature counts.
pub fn load_dataset(cfg: &DataConfig) -> Result<Option<Dataset>> {
    let Some(path) = &cfg.dataset else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let d = data::load_csv(&text)?;
    if d.n_features() != cfg.n_features || d.n_classes() != cfg.n_classes {
        return Err(Error::InvalidConfig(format!(
            "{} has {} features and {} classes, config declares {} and {}",
            path.display(),
            d.n_features(),
            d.n_classes(),
            cfg.n_features,
            cfg.n_classes
        )));
    }
    Ok(Some(d))
}

/// Builds the sample pool (generated blobs, or the configured dataset file),
/// partitions it across `n` nodes, and splits each node's share 80/20 into
/// train and holdout.
pub fn generate_node_data(cfg: &DataConfig, n: usize, seed: u64) -> Result<(PartitionPlan, Vec<NodeData>)> {
    let pool = match load_dataset(cfg)? {
        Some(d) => d,
        None => {
            let per_class = (n * cfg.samples_per_node).div_ceil(cfg.n_classes);
            data::gen_blobs(cfg.n_classes, cfg.n_features, per_class, cfg.spread, seed::derive(seed, &[stream::DATA]))?
        }
    };
    let part_seed = seed::derive(seed, &[stream::PARTITION]);
    let plan = match cfg.partition {
        Partition::Iid => data::partition_iid(&pool, n, part_seed)?,
        Partition::Dirichlet { alpha } => data::partition_dirichlet(&pool, n, alpha, part_seed)?,
    };
    let nodes = plan
        .node_datasets(&pool)?
        .into_iter()
        .enumerate()
        .map(|(i, d)| NodeData::split(d, seed::derive(seed, &[stream::SPLIT, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok((plan, nodes))
}

pub fn simulate(topology: &Topology, cfg: &PipelineConfig, seed: u64) -> Result<(SimulationLog, Vec<NodeData>)> {
    cfg.validate()?;
    let (_, nodes) = generate_node_data(&cfg.data, topology.n_nodes(), seed)?;
    let mut fed = FederationConfig::new(topology.clone(), cfg.architecture()?, cfg.train_config(0));
    if let Some(r) = cfg.rounds {
        fed.rounds = r;
    }
    fed.shared_init = cfg.shared_init;
    fed.dp = cfg.dp.map(|d| DpConfig {
        clip_norm: d.clip_norm,
        noise_sigma: d.noise_sigma,
        seed: seed::derive(seed, &[stream::DP]),
    });
    let train: Vec<Dataset> = nodes.iter().map(|n| n.train.clone()).collect();
    let log = run_simulation(&fed, &train, seed)?;
    Ok((log, nodes))
}

/// Attack configuration with every seed derived from the experiment seed.
pub fn seeded_attack(cfg: &AttackConfig, seed: u64, scenario: Scenario) -> AttackConfig {
    let s = u64::from(scenario.number());
    let mut a = cfg.clone();
    a.metrics.seed = seed::derive(seed, &[stream::SENSITIVITY, s]);
    a.edgepre.seed = seed::derive(seed, &[stream::EDGEPRE, s]);
    a.infergat.seed = seed::derive(seed, &[stream::INFERGAT, s]);
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub result: Result<(ScenarioOutcome, EvalResult), String>,
    /// Baseline name and score, when requested and the attack ran.
    pub baseline: Option<(&'static str, EvalResult)>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub log: SimulationLog,
    pub nodes: Vec<NodeData>,
    pub scenarios: Vec<ScenarioRun>,
}

/// Runs one scenario against a finished simulation. The attacker sees only
/// its [`AttackerView`]; ground truth is used afterwards for scoring.
/// `datasets` holds each node's full local dataset; it is handed over only
/// to scenarios that grant data access.
pub fn attack_and_score(
    log: &SimulationLog,
    datasets: &[Dataset],
    cfg: &PipelineConfig,
    scenario: Scenario,
    seed: u64,
) -> Result<(ScenarioOutcome, EvalResult, Option<(&'static str, EvalResult)>)> {
    if scenario == Scenario::Sc5 {
        return Err(Error::Unsupported("scenario 5 (partial model access) has no attack strategy".into()));
    }
    let label_seed = seed::derive(seed, &[stream::LABELS, u64::from(scenario.number())]);
    let knowledge = ScenarioKnowledge::sample(scenario, &log.truth, cfg.labeled_fraction, label_seed)?;
    let data = scenario.knows_data().then_some(datasets);
    let view = AttackerView::new(log, data, knowledge)?;
    let attack = seeded_attack(&cfg.attack, seed, scenario);
    let outcome = run_scenario(&view, &attack)?;
    let policy = cfg.eval_policy.resolve(scenario);
    let eval = evaluate(&outcome.soft, &log.truth, policy, &outcome.known_pairs)?;
    let baseline = if cfg.baselines {
        let (_, features) = scenario_features(&view, &attack)?;
        Some(if scenario.knows_edges() {
            let soft = LogisticModel::train(&features, &outcome.known_pairs, LOGISTIC_L2, true)?.infer(&features)?;
            ("logistic", evaluate(&soft, &log.truth, policy, &outcome.known_pairs)?)
        } else {
            let pred = baselines::baseline_kmeans(&features, seed::derive(seed, &[stream::KMEANS]))?;
            ("kmeans", evaluate_binary(&pred, &log.truth, policy, &outcome.known_pairs)?)
        })
    } else {
        None
    };
    Ok((outcome, eval, baseline))
}

/// Simulates once, then attacks with each scenario. Per-scenario failures
/// are recorded, not raised.
pub fn run_pipeline(topology: &Topology, cfg: &PipelineConfig, scenarios: &[Scenario], seed: u64) -> Result<PipelineRun> {
    let (log, nodes) = simulate(topology, cfg, seed)?;
    let full: Vec<Dataset> = nodes.iter().map(|n| n.full.clone()).collect();
    let scenarios = scenarios
        .iter()
        .map(|&s| match attack_and_score(&log, &full, cfg, s, seed) {
            Ok((outcome, eval, baseline)) => ScenarioRun { scenario: s, result: Ok((outcome, eval)), baseline },
            Err(e) => ScenarioRun { scenario: s, result: Err(status_of(&e)), baseline: None },
        })
        .collect();
    Ok(PipelineRun { log, nodes, scenarios })
}

/// Short machine-readable status for a failed cell.
pub fn status_of(e: &Error) -> String {
    let s = match e {
        Error::InvalidSize(_) => "invalid_size",
        Error::InvalidProbability(_) => "invalid_probability",
        Error::GenerationFailed(_) => "generation_failed",
        Error::Parse { .. } => "parse_error",
        Error::Index { .. } => "index_error",
        Error::DisconnectedGraph => "disconnected_graph",
        Error::InvalidConfig(_) => "invalid_config",
        Error::PartitionFailed(_) => "partition_failed",
        Error::Shape(_) => "shape_error",
        Error::InvalidTrace(_) => "invalid_trace",
        Error::KnowledgeViolation(_) => "knowledge_violation",
        Error::DegenerateModel(_) => "degenerate_model",
        Error::ConstantMetric => "constant_metric",
        Error::DegenerateLabels(_) => "degenerate_labels",
        Error::Unsupported(_) => "unsupported",
        Error::InvalidEvalSet(_) => "invalid_eval_set",
        Error::Io { .. } => "io_error",
    };
    s.to_string()
}
