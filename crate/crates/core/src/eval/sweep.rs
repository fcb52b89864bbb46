//! Grids of experiments (density, size, mitigation) run on a bounded worker
//! pool, with rows written in cell order so output does not depend on
//! scheduling.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{run_pipeline, status_of, DpSettings, Partition, PipelineConfig};
use crate::attacks::Scenario;
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::topology::{self, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologySpec {
    Ring,
    Star,
    #[serde(rename = "er")]
    ErdosRenyi { p: f64 },
    File { path: PathBuf },
}

impl TopologySpec {
    pub fn label(&self) -> &'static str {
        match self {
            TopologySpec::Ring => "ring",
            TopologySpec::Star => "star",
            TopologySpec::ErdosRenyi { .. } => "er",
            TopologySpec::File { .. } => "file",
        }
    }

    /// Random graphs draw from a stream of the cell seed, so cells that
    /// differ only in training settings share their topology.
    pub fn build(&self, n: usize, seed: u64) -> Result<Topology> {
        match self {
            TopologySpec::Ring => topology::gen_ring(n),
            TopologySpec::Star => topology::gen_star(n),
            TopologySpec::ErdosRenyi { p } => topology::gen_erdos_renyi(n, *p, seed::derive(seed, &[stream::TOPOLOGY])),
            TopologySpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                topology::load_topology(&text)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub experiment_id: String,
    pub topology: TopologySpec,
    pub n_nodes: usize,
    pub config: PipelineConfig,
    pub seed: u64,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub scenario: String,
    pub topology_kind: String,
    pub n_nodes: usize,
    pub n_edges: Option<usize>,
    pub density: Option<f64>,
    pub alpha: Option<f64>,
    pub local_epochs: usize,
    pub dp_clip: Option<f64>,
    pub dp_sigma: Option<f64>,
    pub seed: u64,
    pub f1_05: Option<f64>,
    pub best_f1: Option<f64>,
    pub best_tau: Option<f64>,
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub status: String,
    pub wall_ms: u64,
}

impl ResultRow {
    /// The row scores a baseline rather than the scenario's own attack.
    pub fn is_baseline(&self) -> bool {
        self.scenario.contains('/')
    }
}

fn row_template(cell: &SweepCell, scenario: String, topo: Option<&Topology>) -> ResultRow {
    let stats = topo.map(topology::stats);
    ResultRow {
        experiment_id: cell.experiment_id.clone(),
        scenario,
        topology_kind: cell.topology.label().to_string(),
        n_nodes: cell.n_nodes,
        n_edges: stats.as_ref().map(|s| s.n_edges),
        density: stats.as_ref().map(|s| s.density),
        alpha: cell.config.data.partition.alpha(),
        local_epochs: cell.config.train.local_epochs,
        dp_clip: cell.config.dp.map(|d| d.clip_norm),
        dp_sigma: cell.config.dp.map(|d| d.noise_sigma),
        seed: cell.seed,
        f1_05: None,
        best_f1: None,
        best_tau: None,
        auc: None,
        precision: None,
        recall: None,
        status: String::new(),
        wall_ms: 0,
    }
}

fn fill_scores(row: &mut ResultRow, e: &super::EvalResult) {
    row.f1_05 = Some(e.f1_05);
    row.best_f1 = Some(e.best_f1);
    row.best_tau = Some(e.best_tau);
    row.auc = Some(e.auc);
    row.precision = Some(e.precision);
    row.recall = Some(e.recall);
    row.status = if e.degenerate_labels { "degenerate_labels".into() } else { "ok".into() };
}

/// Runs one cell: one simulation, then every scenario. Never fails; errors
/// become status values.
pub fn run_cell(cell: &SweepCell, scenarios: &[Scenario], record_timing: bool) -> Vec<ResultRow> {
    let start = Instant::now();
    let topo = match cell.topology.build(cell.n_nodes, cell.seed) {
        Ok(t) => t,
        Err(e) => {
            return scenarios
                .iter()
                .map(|s| ResultRow { status: status_of(&e), ..row_template(cell, s.to_string(), None) })
                .collect();
        }
    };
    let mut rows = Vec::new();
    match run_pipeline(&topo, &cell.config, scenarios, cell.seed) {
        Err(e) => {
            for s in scenarios {
                rows.push(ResultRow { status: status_of(&e), ..row_template(cell, s.to_string(), Some(&topo)) });
            }
        }
        Ok(run) => {
            for sr in &run.scenarios {
                let mut row = row_template(cell, sr.scenario.to_string(), Some(&topo));
                match &sr.result {
                    Ok((_, eval)) => fill_scores(&mut row, eval),
                    Err(status) => row.status = status.clone(),
                }
                rows.push(row);
                if let Some((name, eval)) = &sr.baseline {
                    let mut b = row_template(cell, format!("{}/{name}", sr.scenario), Some(&topo));
                    fill_scores(&mut b, eval);
                    rows.push(b);
                }
            }
        }
    }
    if record_timing {
        let ms = start.elapsed().as_millis() as u64;
        rows.iter_mut().for_each(|r| r.wall_ms = ms);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub workers: usize,
    /// Fill `wall_ms`; off by default so reruns are byte-identical.
    pub record_timing: bool,
    /// Keep rows already in the output file and skip their cells.
    pub resume: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { workers: 1, record_timing: false, resume: false }
    }
}

fn cell_key(experiment_id: &str, seed: u64) -> (String, u64) {
    (experiment_id.to_string(), seed)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(line, format!("{}: {other:?}", path.display())),
    }
}

/// Runs every cell and returns all rows in cell order. With `out`, rows are
/// also written there, one chunk of `workers` cells at a time.
pub fn run_sweep(cells: &[SweepCell], scenarios: &[Scenario], opts: SweepOptions, out: Option<&Path>) -> Result<Vec<ResultRow>> {
    if opts.workers < 1 {
        return Err(Error::InvalidConfig("workers must be >= 1".into()));
    }
    let mut ids = HashSet::new();
    for c in cells {
        c.config.validate()?;
        if !ids.insert(cell_key(&c.experiment_id, c.seed)) {
            return Err(Error::InvalidConfig(format!("duplicate cell {} seed {}", c.experiment_id, c.seed)));
        }
    }
    let mut rows = Vec::new();
    let mut done = HashSet::new();
    let mut writer = None;
    if let Some(path) = out {
        let existing = opts.resume && path.exists();
        if existing {
            rows = read_results(path)?;
            done = rows.iter().map(|r| cell_key(&r.experiment_id, r.seed)).collect();
        }
        let file = if existing {
            OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| Error::io(path, e))?;
        writer = Some((csv::WriterBuilder::new().has_headers(!existing).from_writer(file), path));
    }
    let pending: Vec<&SweepCell> = cells.iter().filter(|c| !done.contains(&cell_key(&c.experiment_id, c.seed))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    for chunk in pending.chunks(opts.workers) {
        let results: Vec<Vec<ResultRow>> =
            pool.install(|| chunk.par_iter().map(|c| run_cell(c, scenarios, opts.record_timing)).collect());
        for row in results.into_iter().flatten() {
            if let Some((w, path)) = writer.as_mut() {
                w.serialize(&row).map_err(|e| csv_error(path, e))?;
            }
            rows.push(row);
        }
        if let Some((w, path)) = writer.as_mut() {
            w.flush().map_err(|e| Error::io(*path, e))?;
        }
    }
    Ok(rows)
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidTrace(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidTrace(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn with_seeds(id: String, topology: TopologySpec, n: usize, cfg: &PipelineConfig, seeds: &[u64]) -> Vec<SweepCell> {
    seeds
        .iter()
        .map(|&seed| SweepCell { experiment_id: id.clone(), topology: topology.clone(), n_nodes: n, config: cfg.clone(), seed })
        .collect()
}

/// Erdős–Rényi graphs over a grid of edge probabilities at fixed size.
pub fn density_cells(base: &PipelineConfig, n: usize, ps: &[f64], seeds: &[u64]) -> Vec<SweepCell> {
    ps.iter()
        .flat_map(|&p| with_seeds(format!("density-p{p:.2}"), TopologySpec::ErdosRenyi { p }, n, base, seeds))
        .collect()
}

/// Erdős–Rényi graphs over a grid of sizes at fixed edge probability; rounds
/// follow the node count unless the base config fixes them.
pub fn size_cells(base: &PipelineConfig, ns: &[usize], p: f64, seeds: &[u64]) -> Vec<SweepCell> {
    ns.iter()
        .flat_map(|&n| with_seeds(format!("size-n{n}"), TopologySpec::ErdosRenyi { p }, n, base, seeds))
        .collect()
}

/// Short tag naming a topology inside experiment ids.
fn topology_tag(t: &TopologySpec) -> String {
    match t {
        TopologySpec::ErdosRenyi { p } => format!("er{p:.2}"),
        TopologySpec::File { path } => path.display().to_string(),
        other => other.label().to_string(),
    }
}

/// A fixed list of topologies at one size.
pub fn grid_cells(base: &PipelineConfig, topologies: &[TopologySpec], n: usize, seeds: &[u64]) -> Vec<SweepCell> {
    topologies
        .iter()
        .flat_map(|t| with_seeds(format!("grid-{}", topology_tag(t)), t.clone(), n, base, seeds))
        .collect()
}

pub const MITIGATION_EPOCHS: usize = 10;
pub const MITIGATION_ALPHA: f64 = 0.1;
pub const MITIGATION_DP: DpSettings = DpSettings { clip_norm: 1.0, noise_sigma: 0.5 };

/// The base configuration and one variant per defence, each changing a
/// single setting, on every topology. Cells with the same topology and seed
/// share the graph and the data. Ids read `mitigation-<variant>-<topology>`.
pub fn mitigation_cells(base: &PipelineConfig, topologies: &[TopologySpec], n: usize, seeds: &[u64]) -> Vec<SweepCell> {
    let mut epochs = base.clone();
    epochs.train.local_epochs = MITIGATION_EPOCHS;
    let mut dirichlet = base.clone();
    dirichlet.data.partition = Partition::Dirichlet { alpha: MITIGATION_ALPHA };
    let mut dp = base.clone();
    dp.dp = Some(MITIGATION_DP);
    let variants = [("base", base), ("epochs", &epochs), ("dirichlet", &dirichlet), ("dp", &dp)];
    variants
        .into_iter()
        .flat_map(|(variant, cfg)| {
            topologies.iter().flat_map(move |t| {
                with_seeds(format!("mitigation-{variant}-{}", topology_tag(t)), t.clone(), n, cfg, seeds)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub scenario: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub f1_mean: Option<f64>,
    pub f1_std: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

/// Per-(experiment, scenario) statistics over seeds, followed by one
/// `ALL` row per scenario pooling every experiment.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.experiment_id.clone(), r.scenario.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
        groups.entry(("ALL".into(), r.scenario.clone())).or_default().push(r);
    }
    let mut scenarios: Vec<String> = rows.iter().map(|r| r.scenario.clone()).collect();
    scenarios.sort();
    scenarios.dedup();
    order.extend(scenarios.into_iter().map(|s| ("ALL".to_string(), s)));
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let ok: Vec<&&ResultRow> = g.iter().filter(|r| r.f1_05.is_some()).collect();
            let f1: Vec<f64> = ok.iter().filter_map(|r| r.f1_05).collect();
            let auc: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
            let f = mean_std(&f1);
            let a = mean_std(&auc);
            SummaryRow {
                experiment_id: key.0,
                scenario: key.1,
                n_ok: ok.len(),
                n_failed: g.len() - ok.len(),
                f1_mean: f.map(|x| x.0),
                f1_std: f.map(|x| x.1),
                auc_mean: a.map(|x| x.0),
                auc_std: a.map(|x| x.1),
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidTrace(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidTrace(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
