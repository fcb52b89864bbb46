//! The decentralized training protocol: local training followed by
//! neighbour aggregation through `P`, with optional clipped Gaussian noise on
//! the shared updates.
//!
//! Round convention (`M̃₀ = M₀`):
//!
//! ```text
//! for t in 1..=T:
//!     M_t = M̃_{t-1} + δ_t      // local training, noise applied to δ_t
//!     M̃_t = P · M_t            // aggregation
//! ```
//!
//! which unrolls to `M̃_T = P^T M₀ + Σ_t P^{T-t+1} δ_t`
//! (see [`closed_form_final`]).

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::nn::{self, MlpArchitecture, ModelParams, TrainConfig};
use crate::seed::{self, stream};
use crate::topology::{self, AdjacencyMatrix, AggregationMatrix, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DpConfig {
    fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::InvalidConfig(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub topology: Topology,
    pub arch: MlpArchitecture,
    pub rounds: usize,
    /// The per-node seed inside is replaced by a stream derived from the
    /// simulation seed, node, and round.
    pub train: TrainConfig,
    pub dp: Option<DpConfig>,
    /// Start every node from the same initial parameters.
    pub shared_init: bool,
}

impl FederationConfig {
    /// Rounds default to the number of nodes.
    pub fn new(topology: Topology, arch: MlpArchitecture, train: TrainConfig) -> Self {
        let rounds = topology.n_nodes();
        Self { topology, arch, rounds, train, dp: None, shared_init: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        self.train.validate()?;
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

/// Serializable record of the configuration a log was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSnapshot {
    pub n_nodes: usize,
    pub rounds: usize,
    pub architecture: MlpArchitecture,
    pub train: TrainConfig,
    pub dp: Option<DpConfig>,
    pub shared_init: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// `M_t`: parameters after local training, before aggregation.
    pub params_pre_agg: Vec<ModelParams>,
    /// `M̃_t`: parameters after aggregation.
    pub params_post_agg: Vec<ModelParams>,
    /// `δ_t` as applied, i.e. after any clipping and noise.
    pub deltas: Vec<Vec<f64>>,
    pub delta_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub config: ConfigSnapshot,
    pub initial: Vec<ModelParams>,
    pub rounds: Vec<RoundTrace>,
    pub truth: AdjacencyMatrix,
}

impl SimulationLog {
    pub fn n_nodes(&self) -> usize {
        self.initial.len()
    }

    pub fn final_round(&self) -> &RoundTrace {
        self.rounds.last().expect("a log holds at least one round")
    }
}

/// `θ̃_i = Σ_j P[i][j] θ_j`.
pub fn aggregate(p: &AggregationMatrix, models: &[ModelParams]) -> Vec<ModelParams> {
    let pm = p.matrix();
    (0..models.len())
        .map(|i| {
            let mut out = ModelParams::zeros(models[i].arch().clone());
            for (j, m) in models.iter().enumerate() {
                let w = pm[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.flat_mut().iter_mut().zip(m.flat()) {
                    *o += w * v;
                }
            }
            out
        })
        .collect()
}

/// Clips `delta` to L2 norm `clip_norm`, then adds `N(0, (σ·C)²)` per coordinate.
pub fn apply_dp(delta: &[f64], clip_norm: f64, noise_sigma: f64, rng: &mut seed::Rng) -> Result<Vec<f64>> {
    DpConfig { clip_norm, noise_sigma, seed: 0 }.validate()?;
    let norm = matrix::norm(delta);
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let std = noise_sigma * clip_norm;
    Ok(delta
        .iter()
        .map(|&d| {
            let noise = if std > 0.0 { std * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            d * scale + noise
        })
        .collect())
}

pub fn run_simulation(cfg: &FederationConfig, train_sets: &[Dataset], seed: u64) -> Result<SimulationLog> {
    cfg.validate()?;
    let n = cfg.topology.n_nodes();
    if train_sets.len() != n {
        return Err(Error::InvalidConfig(format!("{} datasets for {n} nodes", train_sets.len())));
    }
    if let Some(i) = train_sets.iter().position(Dataset::is_empty) {
        return Err(Error::InvalidConfig(format!("node {i} has no training data")));
    }
    let truth = cfg.topology.adjacency();
    let p = topology::aggregation_matrix(&truth)?;

    let initial: Vec<ModelParams> = (0..n)
        .map(|i| {
            let node = if cfg.shared_init { 0 } else { i as u64 };
            nn::init_params(&cfg.arch, seed::derive(seed, &[stream::INIT, node]))
        })
        .collect();

    let mut current = initial.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let trained: Vec<(ModelParams, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| local_step(cfg, &current[i], &train_sets[i], seed, i, t))
            .collect::<Result<_>>()?;
        let (pre, deltas): (Vec<ModelParams>, Vec<Vec<f64>>) = trained.into_iter().unzip();
        let delta_norms = deltas.iter().map(|d| matrix::norm(d)).collect();
        let post = aggregate(&p, &pre);
        current = post.clone();
        rounds.push(RoundTrace { round: t, params_pre_agg: pre, params_post_agg: post, deltas, delta_norms });
    }

    Ok(SimulationLog {
        config: ConfigSnapshot {
            n_nodes: n,
            rounds: cfg.rounds,
            architecture: cfg.arch.clone(),
            train: cfg.train.clone(),
            dp: cfg.dp,
            shared_init: cfg.shared_init,
            seed,
        },
        initial,
        rounds,
        truth,
    })
}

fn local_step(
    cfg: &FederationConfig,
    start: &ModelParams,
    data: &Dataset,
    root: u64,
    node: usize,
    round: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    let train = TrainConfig {
        seed: seed::derive(root, &[stream::TRAIN, node as u64, round as u64]),
        ..cfg.train.clone()
    };
    let (_, mut delta) = nn::train_local(start, data, &train)?;
    if let Some(dp) = &cfg.dp {
        let mut rng = seed::rng_for(dp.seed, &[stream::DP, node as u64, round as u64]);
        delta = apply_dp(&delta, dp.clip_norm, dp.noise_sigma, &mut rng)?;
    }
    let mut next = start.clone();
    for (w, d) in next.flat_mut().iter_mut().zip(&delta) {
        *w += d;
    }
    Ok((next, delta))
}

/// Stacks per-node parameter vectors into an `N × D` matrix.
pub fn params_matrix(models: &[ModelParams]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = models.iter().map(|m| m.flat().to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// `M̃_T = P^T M₀ + Σ_{t=1..T} P^{T-t+1} δ_t`, evaluated with explicit
/// matrix powers.
pub fn closed_form_final(p: &AggregationMatrix, m0: &Matrix, deltas: &[Matrix]) -> Result<Matrix> {
    let n = p.n_nodes();
    if m0.rows() != n {
        return Err(Error::InvalidTrace(format!("M0 has {} rows for {n} nodes", m0.rows())));
    }
    if deltas.is_empty() {
        return Err(Error::InvalidTrace("no rounds recorded".into()));
    }
    if let Some(bad) = deltas.iter().position(|d| d.rows() != n || d.cols() != m0.cols()) {
        return Err(Error::InvalidTrace(format!("delta for round {} has the wrong shape", bad + 1)));
    }
    let t_max = deltas.len();
    // powers[k] = P^k
    let mut powers = vec![Matrix::identity(n)];
    for k in 1..=t_max {
        powers.push(powers[k - 1].matmul(p.matrix())?);
    }
    let mut out = powers[t_max].matmul(m0)?;
    for (t, delta) in deltas.iter().enumerate() {
        let round = t + 1;
        out = out.add(&powers[t_max - round + 1].matmul(delta)?)?;
    }
    Ok(out)
}

/// Largest pairwise L2 distance between node parameter vectors.
pub fn consensus_gap(params: &[&[f64]]) -> f64 {
    let mut gap: f64 = 0.0;
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            gap = gap.max(matrix::dist(params[i], params[j]));
        }
    }
    gap
}

pub fn consensus_gap_models(models: &[ModelParams]) -> f64 {
    let views: Vec<&[f64]> = models.iter().map(ModelParams::flat).collect();
    consensus_gap(&views)
}

const LOG_FORMAT: &str = "topoleak-log v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    n_nodes: usize,
    architecture: String,
    rounds: Vec<ManifestRound>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRound {
    round: usize,
    dir: String,
    delta_norms: Vec<f64>,
}

fn node_file(i: usize) -> String {
    format!("node_{i:03}.bin")
}

fn round_dir(t: usize) -> String {
    format!("round_{t:04}")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl SimulationLog {
    /// Writes the log as a directory: `manifest.json`, `config.json`,
    /// `topology.edgelist`, `init/`, and one `round_NNNN/{pre,post,delta}/`
    /// directory of node snapshots per round.
    pub fn save(&self, dir: &Path) -> Result<()> {
        mkdir(dir)?;
        let manifest = Manifest {
            format: LOG_FORMAT.into(),
            n_nodes: self.n_nodes(),
            architecture: self.config.architecture.header(),
            rounds: self
                .rounds
                .iter()
                .map(|r| ManifestRound { round: r.round, dir: round_dir(r.round), delta_norms: r.delta_norms.clone() })
                .collect(),
        };
        write(&dir.join("manifest.json"), to_json(&manifest).as_bytes())?;
        write(&dir.join("config.json"), to_json(&self.config).as_bytes())?;
        write(&dir.join("topology.edgelist"), self.truth.to_topology()?.to_edge_list().as_bytes())?;

        let init = dir.join("init");
        mkdir(&init)?;
        for (i, m) in self.initial.iter().enumerate() {
            write(&init.join(node_file(i)), &nn::encode_snapshot(m))?;
        }
        for r in &self.rounds {
            let base = dir.join(round_dir(r.round));
            for (sub, models) in [("pre", &r.params_pre_agg), ("post", &r.params_post_agg)] {
                let d = base.join(sub);
                mkdir(&d)?;
                for (i, m) in models.iter().enumerate() {
                    write(&d.join(node_file(i)), &nn::encode_snapshot(m))?;
                }
            }
            let d = base.join("delta");
            mkdir(&d)?;
            for (i, delta) in r.deltas.iter().enumerate() {
                let m = ModelParams::new(self.config.architecture.clone(), delta.clone())?;
                write(&d.join(node_file(i)), &nn::encode_snapshot(&m))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = parse_json(&dir.join("manifest.json"))?;
        if manifest.format != LOG_FORMAT {
            return Err(Error::InvalidTrace(format!("unknown log format {:?}", manifest.format)));
        }
        let config: ConfigSnapshot = parse_json(&dir.join("config.json"))?;
        let edge_path = dir.join("topology.edgelist");
        let text = String::from_utf8(read(&edge_path)?)
            .map_err(|_| Error::parse(1, "topology.edgelist is not UTF-8"))?;
        let truth = topology::load_topology(&text)?.adjacency();
        let n = manifest.n_nodes;
        if truth.n_nodes() != n || config.n_nodes != n {
            return Err(Error::InvalidTrace("node counts disagree across log files".into()));
        }
        if manifest.rounds.len() != config.rounds {
            return Err(Error::InvalidTrace(format!(
                "manifest lists {} rounds, config says {}",
                manifest.rounds.len(),
                config.rounds
            )));
        }
        let load_models = |sub: &Path| -> Result<Vec<ModelParams>> {
            (0..n)
                .map(|i| {
                    let m = nn::decode_snapshot(&read(&sub.join(node_file(i)))?)?;
                    if m.arch() != &config.architecture {
                        return Err(Error::InvalidTrace(format!("node {i} snapshot has a different architecture")));
                    }
                    Ok(m)
                })
                .collect()
        };
        let initial = load_models(&dir.join("init"))?;
        let mut rounds = Vec::with_capacity(manifest.rounds.len());
        for (k, mr) in manifest.rounds.iter().enumerate() {
            if mr.round != k + 1 || mr.dir != round_dir(mr.round) || mr.delta_norms.len() != n {
                return Err(Error::InvalidTrace(format!("malformed manifest entry {}", k + 1)));
            }
            let base = dir.join(&mr.dir);
            let deltas = load_models(&base.join("delta"))?.into_iter().map(ModelParams::into_flat).collect();
            rounds.push(RoundTrace {
                round: mr.round,
                params_pre_agg: load_models(&base.join("pre"))?,
                params_post_agg: load_models(&base.join("post"))?,
                deltas,
                delta_norms: mr.delta_norms.clone(),
            });
        }
        Ok(Self { config, initial, rounds, truth })
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(e.line(), format!("{}: {e}", path.display())))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{Activation, Optimizer};
    use crate::topology::{gen_ring, gen_star};

    fn scalar_arch() -> MlpArchitecture {
        MlpArchitecture::new(vec![1, 1, 1], Activation::Relu).unwrap()
    }

    #[test]
    fn dp_identity_and_clip() {
        let mut rng = seed::rng(0);
        let d = vec![0.3, -0.4];
        assert_eq!(apply_dp(&d, 1.0, 0.0, &mut rng).unwrap(), d);
        let big = vec![3.0, 4.0];
        let out = apply_dp(&big, 2.5, 0.0, &mut rng).unwrap();
        assert!((matrix::norm(&out) - 2.5).abs() < 1e-15);
        assert!(apply_dp(&d, 0.0, 0.1, &mut rng).is_err());
        assert!(apply_dp(&d, 1.0, -0.1, &mut rng).is_err());
    }

    #[test]
    fn consensus_gap_examples() {
        assert_eq!(consensus_gap(&[&[1.0, 2.0], &[1.0, 2.0]]), 0.0);
        assert_eq!(consensus_gap(&[&[0.0], &[1.0]]), 1.0);
        assert_eq!(consensus_gap(&[&[0.0, 0.0], &[3.0, 4.0], &[1.0, 1.0]]), 5.0);
    }

    #[test]
    fn two_nodes_average_geometrically() {
        // Params of a [1,1,1] net: w1, b1, w2, b2. With lr = 0 each round
        // replaces both nodes by their mean.
        let topo = gen_star(2).unwrap();
        let a = ModelParams::new(scalar_arch(), vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let b = ModelParams::new(scalar_arch(), vec![3.0, 0.0, -2.0, 0.0]).unwrap();
        let p = topology::aggregation_matrix(&topo.adjacency()).unwrap();
        let out = aggregate(&p, &[a, b]);
        assert_eq!(out[0].flat(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn aggregation_preserves_mean_for_doubly_stochastic_p() {
        let topo = gen_ring(6).unwrap();
        let p = topology::aggregation_matrix(&topo.adjacency()).unwrap();
        let arch = MlpArchitecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let models: Vec<_> = (0..6).map(|i| nn::init_params(&arch, i)).collect();
        let mean = |ms: &[ModelParams]| -> Vec<f64> {
            let mut acc = vec![0.0; ms[0].flat().len()];
            for m in ms {
                for (a, v) in acc.iter_mut().zip(m.flat()) {
                    *a += v / ms.len() as f64;
                }
            }
            acc
        };
        let before = mean(&models);
        let after = mean(&aggregate(&p, &models));
        assert!(before.iter().zip(&after).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn simulation_smoke_and_persistence() {
        let topo = gen_star(4).unwrap();
        let data = gen_blobs(2, 3, 20, 1.0, 0).unwrap();
        let plan = crate::data::partition_iid(&data, 4, 1).unwrap();
        let sets = plan.node_datasets(&data).unwrap();
        let arch = MlpArchitecture::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let train = TrainConfig { local_epochs: 1, learning_rate: 0.05, batch_size: 5, optimizer: Optimizer::Sgd, seed: 0 };
        let mut cfg = FederationConfig::new(topo, arch, train);
        cfg.dp = Some(DpConfig { clip_norm: 1.0, noise_sigma: 0.1, seed: 4 });
        let log = run_simulation(&cfg, &sets, 11).unwrap();
        assert_eq!(log.rounds.len(), 4);
        assert_eq!(log, run_simulation(&cfg, &sets, 11).unwrap());

        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        assert_eq!(SimulationLog::load(dir.path()).unwrap(), log);
    }

    #[test]
    fn simulation_rejects_bad_inputs() {
        let topo = gen_star(3).unwrap();
        let arch = MlpArchitecture::new(vec![3, 4, 2], Activation::Relu).unwrap();
        let train = TrainConfig { local_epochs: 1, learning_rate: 0.05, batch_size: 5, optimizer: Optimizer::Sgd, seed: 0 };
        let mut cfg = FederationConfig::new(topo, arch, train);
        let data = gen_blobs(2, 3, 10, 1.0, 0).unwrap();
        assert!(matches!(run_simulation(&cfg, &[data.clone()], 0), Err(Error::InvalidConfig(_))));
        cfg.rounds = 0;
        assert!(matches!(run_simulation(&cfg, &[data.clone(), data.clone(), data], 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn closed_form_rejects_mismatched_traces() {
        let p = topology::aggregation_matrix(&gen_star(3).unwrap().adjacency()).unwrap();
        let m0 = Matrix::zeros(3, 2);
        assert!(matches!(closed_form_final(&p, &m0, &[]), Err(Error::InvalidTrace(_))));
        assert!(matches!(closed_form_final(&p, &m0, &[Matrix::zeros(3, 3)]), Err(Error::InvalidTrace(_))));
        assert!(matches!(closed_form_final(&p, &Matrix::zeros(2, 2), &[Matrix::zeros(2, 2)]), Err(Error::InvalidTrace(_))));
    }

    #[test]
    fn closed_form_zero_deltas_is_matrix_power() {
        let p = topology::aggregation_matrix(&gen_star(3).unwrap().adjacency()).unwrap();
        let m0 = Matrix::from_rows(&[vec![1.0], vec![0.0], vec![0.0]]).unwrap();
        let out = closed_form_final(&p, &m0, &[Matrix::zeros(3, 1), Matrix::zeros(3, 1)]).unwrap();
        let p2 = p.matrix().matmul(p.matrix()).unwrap().matmul(&m0).unwrap();
        assert!(out.max_abs_diff(&p2) < 1e-15);
    }
}
