//! TOML configuration files for single runs and sweeps.
//!
//! Both documents reject unknown keys and are validated as a whole before
//! any work starts. Relative paths inside a file resolve against the file's
//! own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, Scenario, DEFAULT_LABELED_FRACTION};
use crate::error::{Error, Result};
use crate::eval::pipeline::{self, DataConfig, DpSettings, ModelConfig, PipelineConfig, PolicyChoice, TrainSettings};
use crate::eval::sweep::{self, SweepCell, TopologySpec};
use crate::topology::Topology;

/// Environment variable that overrides the root seed of a config file. A
/// command-line `--seed` flag overrides both.
pub const SEED_ENV: &str = "TOPOLEAK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Star,
    Er,
    File,
}

/// `p` is required for `er` and `path` for `file`; neither is allowed
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub n_nodes: usize,
    pub p: Option<f64>,
    pub path: Option<PathBuf>,
}

impl TopologySection {
    pub fn spec(&self) -> Result<TopologySpec> {
        let spec = match (self.kind, self.p, &self.path) {
            (TopologyKind::Ring, None, None) => TopologySpec::Ring,
            (TopologyKind::Star, None, None) => TopologySpec::Star,
            (TopologyKind::Er, Some(p), None) => TopologySpec::ErdosRenyi { p },
            (TopologyKind::File, None, Some(path)) => TopologySpec::File { path: path.clone() },
            (kind, ..) => {
                return Err(Error::InvalidConfig(format!(
                    "topology kind {kind:?} takes {}",
                    match kind {
                        TopologyKind::Er => "`p` and no `path`",
                        TopologyKind::File => "`path` and no `p`",
                        _ => "neither `p` nor `path`",
                    }
                )))
            }
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    /// Defaults to the number of nodes.
    pub rounds: Option<usize>,
    pub shared_init: bool,
    pub dp: Option<DpSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub policy: PolicyChoice,
    pub labeled_fraction: f64,
    pub baselines: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { policy: PolicyChoice::Auto, labeled_fraction: DEFAULT_LABELED_FRACTION, baselines: false }
    }
}

/// One experiment: a topology, data, training, and the attack settings used
/// by `attack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub topology: TopologySection,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    /// Star over 10 nodes with every other setting at its default.
    pub fn example() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out/star10"),
            topology: TopologySection { kind: TopologyKind::Star, n_nodes: 10, p: None, path: None },
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            federation: FederationSection::default(),
            attack: AttackConfig::default(),
            eval: EvalSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, e))
    }

    /// Reads, resolves paths against the file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = resolve(base, &cfg.output_dir);
        if let Some(p) = &mut cfg.topology.path {
            *p = resolve(base, p);
        }
        if let Some(d) = &mut cfg.data.dataset {
            *d = resolve(base, d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            data: self.data.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            rounds: self.federation.rounds,
            shared_init: self.federation.shared_init,
            dp: self.federation.dp,
            attack: self.attack.clone(),
            labeled_fraction: self.eval.labeled_fraction,
            eval_policy: self.eval.policy,
            baselines: self.eval.baselines,
        }
    }

    /// Checks every section, including that referenced files exist and parse.
    pub fn validate(&self) -> Result<()> {
        let p = self.pipeline();
        p.validate()?;
        if let Some(dp) = p.dp {
            validate_dp(dp)?;
        }
        pipeline::load_dataset(&self.data)?;
        self.build_topology()?;
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology> {
        let t = self.topology.spec()?.build(self.topology.n_nodes, self.seed)?;
        if t.n_nodes() != self.topology.n_nodes {
            return Err(Error::InvalidConfig(format!(
                "topology file has {} nodes, config says {}",
                t.n_nodes(),
                self.topology.n_nodes
            )));
        }
        Ok(t)
    }
}

fn validate_dp(dp: DpSettings) -> Result<()> {
    if !(dp.clip_norm > 0.0 && dp.clip_norm.is_finite()) || !(dp.noise_sigma >= 0.0 && dp.noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "dp needs clip_norm > 0 and noise_sigma >= 0, got {} and {}",
            dp.clip_norm, dp.noise_sigma
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Experiment {
    /// Erdős–Rényi graphs over edge probabilities `ps` at `n_nodes`.
    Density { n_nodes: usize, ps: Vec<f64> },
    /// Erdős–Rényi graphs with edge probability `p` over sizes `ns`.
    Size { ns: Vec<usize>, p: f64 },
    /// A fixed list of topologies at `n_nodes`.
    Grid { n_nodes: usize, topologies: Vec<TopologySpec> },
    /// The base pipeline plus one variant per defence, on each topology.
    Mitigation { n_nodes: usize, topologies: Vec<TopologySpec> },
}

/// A batch of experiments written to one results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Cell seeds are `seed, seed + 1, ..., seed + n_seeds - 1`.
    #[serde(default)]
    pub seed: u64,
    pub n_seeds: usize,
    pub output: PathBuf,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u8>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub experiment: Experiment,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn default_scenarios() -> Vec<u8> {
    vec![1, 2, 3, 4]
}

fn default_workers() -> usize {
    1
}

impl SweepConfig {
    /// Density sweep over ER(0.3..0.7) at 10 nodes, five seeds.
    pub fn example() -> Self {
        Self {
            seed: 0,
            n_seeds: 5,
            output: PathBuf::from("out/density.csv"),
            scenarios: default_scenarios(),
            workers: default_workers(),
            experiment: Experiment::Density { n_nodes: 10, ps: vec![0.3, 0.5, 0.7] },
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(text, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output = resolve(base, &cfg.output);
        if let Some(d) = &mut cfg.pipeline.data.dataset {
            *d = resolve(base, d);
        }
        match &mut cfg.experiment {
            Experiment::Grid { topologies, .. } | Experiment::Mitigation { topologies, .. } => {
                for t in topologies {
                    if let TopologySpec::File { path } = t {
                        *path = resolve(base, path);
                    }
                }
            }
            Experiment::Density { .. } | Experiment::Size { .. } => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>> {
        self.scenarios.iter().map(|&n| Scenario::from_number(n)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::InvalidConfig("n_seeds must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::InvalidConfig("scenarios must not be empty".into()));
        }
        for s in self.scenario_list()? {
            if s == Scenario::Sc5 {
                return Err(Error::Unsupported("scenario 5 (partial model access) has no attack strategy".into()));
            }
        }
        self.pipeline.validate()?;
        if let Some(dp) = self.pipeline.dp {
            validate_dp(dp)?;
        }
        pipeline::load_dataset(&self.pipeline.data)?;
        let bad_p = |p: f64| !(p > 0.0 && p <= 1.0);
        let bad_n = |n: usize| n < 3;
        match &self.experiment {
            Experiment::Density { n_nodes, ps } => {
                if ps.is_empty() || ps.iter().any(|&p| bad_p(p)) || bad_n(*n_nodes) {
                    return Err(Error::InvalidConfig("density sweep needs n_nodes >= 3 and ps in (0, 1]".into()));
                }
            }
            Experiment::Size { ns, p } => {
                if ns.is_empty() || ns.iter().any(|&n| bad_n(n)) || bad_p(*p) {
                    return Err(Error::InvalidConfig("size sweep needs every n >= 3 and p in (0, 1]".into()));
                }
            }
            Experiment::Grid { n_nodes, topologies } | Experiment::Mitigation { n_nodes, topologies } => {
                if topologies.is_empty() || bad_n(*n_nodes) {
                    return Err(Error::InvalidConfig("grid sweeps need n_nodes >= 3 and at least one topology".into()));
                }
                for t in topologies {
                    match t {
                        TopologySpec::ErdosRenyi { p } if bad_p(*p) => return Err(Error::InvalidProbability(*p)),
                        TopologySpec::File { .. } => {
                            let topo = t.build(*n_nodes, 0)?;
                            if topo.n_nodes() != *n_nodes {
                                return Err(Error::InvalidConfig(format!(
                                    "topology file has {} nodes, sweep uses {n_nodes}",
                                    topo.n_nodes()
                                )));
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let seeds = self.seeds();
        let base = &self.pipeline;
        match &self.experiment {
            Experiment::Density { n_nodes, ps } => sweep::density_cells(base, *n_nodes, ps, &seeds),
            Experiment::Size { ns, p } => sweep::size_cells(base, ns, *p, &seeds),
            Experiment::Grid { n_nodes, topologies } => sweep::grid_cells(base, topologies, *n_nodes, &seeds),
            Experiment::Mitigation { n_nodes, topologies } => sweep::mitigation_cells(base, topologies, *n_nodes, &seeds),
        }
    }
}

/// `flag` beats `env` beats `config`. An unparsable `env` is a config error.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}

/// Which schema a config document follows, judged by its top-level tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    Run,
    Sweep,
}

pub fn detect_kind(text: &str) -> Result<ConfigKind> {
    let table: toml::Table = text.parse().map_err(|e| toml_error(text, e))?;
    Ok(if table.contains_key("experiment") { ConfigKind::Sweep } else { ConfigKind::Run })
}

/// Serializes a config as TOML; parsing the output gives the value back.
pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::parse(line, e.message().to_string())
}
