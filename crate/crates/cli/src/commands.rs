use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use topoleak::attacks::{labeled_pairs_from_csv, labeled_pairs_to_csv, Scenario, SoftAdjacency};
use topoleak::config::{self, ConfigKind, RunConfig, SweepConfig, SEED_ENV};
use topoleak::data::{self, Dataset};
use topoleak::engine::SimulationLog;
use topoleak::eval::pipeline::{self, seeded_attack};
use topoleak::eval::sweep::{self, SweepOptions};
use topoleak::eval::{self, EvalPolicy};
use topoleak::topology::{self, Topology};
use topoleak::{Error, Result};

use crate::{GenKind, PolicyArg, SchemaArg};

/// Saved next to the simulation log so `attack` can reuse its settings.
const RUN_CONFIG_FILE: &str = "run.json";
const DATA_DIR: &str = "data";

fn seed_from_env() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes to JSON");
    s.push('\n');
    s
}

fn dataset_file(i: usize) -> String {
    format!("node_{i:03}.csv")
}

pub fn gen_topology(kind: GenKind, n: usize, p: Option<f64>, seed: Option<u64>, out: &Path) -> Result<()> {
    let seed = config::resolve_seed(seed, seed_from_env().as_deref(), 0)?;
    let topo = match (kind, p) {
        (GenKind::Ring, None) => topology::gen_ring(n)?,
        (GenKind::Star, None) => topology::gen_star(n)?,
        (GenKind::Er, Some(p)) => topology::gen_erdos_renyi(n, p, seed)?,
        (GenKind::Er, None) => return Err(Error::InvalidConfig("--kind er needs --p".into())),
        (_, Some(_)) => return Err(Error::InvalidConfig("--p applies to --kind er only".into())),
    };
    let stats = topology::stats(&topo);
    let doc = pretty(&json!({ "kind": format!("{kind:?}").to_lowercase(), "seed": seed, "stats": stats }));
    write(out, topo.to_edge_list())?;
    write(&stats_path(out), &doc)?;
    print!("{doc}");
    Ok(())
}

fn stats_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    out.with_file_name(name)
}

pub fn simulate(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.seed = config::resolve_seed(seed, seed_from_env().as_deref(), cfg.seed)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let topo = cfg.build_topology()?;
    let (log, nodes) = pipeline::simulate(&topo, &cfg.pipeline(), cfg.seed)?;

    let dir = &cfg.output_dir;
    log.save(dir)?;
    for (i, node) in nodes.iter().enumerate() {
        write(&dir.join(DATA_DIR).join(dataset_file(i)), node.full.to_csv())?;
    }
    write(&dir.join(RUN_CONFIG_FILE), pretty(&cfg))?;
    print!("{}", read_text(&dir.join("manifest.json"))?);
    Ok(())
}

fn load_datasets(log_dir: &Path, n: usize) -> Result<Vec<Dataset>> {
    (0..n)
        .map(|i| data::load_csv(&read_text(&log_dir.join(DATA_DIR).join(dataset_file(i)))?))
        .collect()
}

pub fn attack(
    log_dir: &Path,
    scenario: u8,
    config_path: Option<&Path>,
    labeled_frac: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let scenario = Scenario::from_number(scenario)?;
    if scenario == Scenario::Sc5 {
        return Err(Error::Unsupported("scenario 5 (partial model access) has no attack strategy".into()));
    }
    let cfg = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => {
            let p = log_dir.join(RUN_CONFIG_FILE);
            let cfg: RunConfig = serde_json::from_str(&read_text(&p)?)
                .map_err(|e| Error::parse(e.line(), format!("{}: {e}", p.display())))?;
            cfg
        }
    };
    let mut pcfg = cfg.pipeline();
    if let Some(f) = labeled_frac {
        pcfg.labeled_fraction = f;
    }
    pcfg.validate()?;
    let seed = config::resolve_seed(seed, seed_from_env().as_deref(), cfg.seed)?;
    let log = SimulationLog::load(log_dir)?;
    let datasets = if scenario.knows_data() { load_datasets(log_dir, log.n_nodes())? } else { Vec::new() };

    let (outcome, result, baseline) = pipeline::attack_and_score(&log, &datasets, &pcfg, scenario, seed)?;
    let dir = out.unwrap_or_else(|| log_dir.join(format!("attack_sc{}", scenario.number())));
    let policy = pcfg.eval_policy.resolve(scenario);
    write(&dir.join("soft_adjacency.csv"), outcome.soft.to_csv())?;
    write(&dir.join("features.csv"), outcome.features.to_csv())?;
    write(&dir.join("features.json"), pretty(&outcome.features.metadata()))?;
    write(&dir.join("known_pairs.csv"), labeled_pairs_to_csv(&outcome.known_pairs))?;
    write(&dir.join("eval.json"), pretty(&result))?;
    let sidecar = json!({
        "scenario": scenario,
        "metric": outcome.metric,
        "seed": seed,
        "log": log_dir,
        "labeled_fraction": pcfg.labeled_fraction,
        "eval_policy": policy,
        "features": outcome.features.metadata(),
        "attack": seeded_attack(&pcfg.attack, seed, scenario),
        "baseline": baseline.as_ref().map(|(name, e)| json!({ "name": name, "eval": e })),
    });
    write(&dir.join("attack.json"), pretty(&sidecar))?;
    print!("{}", pretty(&result));
    Ok(())
}

pub fn evaluate(
    pred: &Path,
    truth: &Path,
    known: Option<&Path>,
    policy: Option<PolicyArg>,
    out: Option<&Path>,
) -> Result<()> {
    let soft = SoftAdjacency::from_csv(&read_text(pred)?)?;
    let truth: Topology = topology::load_topology(&read_text(truth)?)?;
    let known = match known {
        Some(p) => labeled_pairs_from_csv(&read_text(p)?)?,
        None => Vec::new(),
    };
    if soft.n_nodes() != truth.n_nodes() {
        return Err(Error::Shape(format!("prediction has {} nodes, truth {}", soft.n_nodes(), truth.n_nodes())));
    }
    let policy = match policy {
        Some(PolicyArg::AllPairs) => EvalPolicy::AllPairs,
        Some(PolicyArg::HeldOut) => EvalPolicy::HeldOut,
        None if known.is_empty() => EvalPolicy::AllPairs,
        None => EvalPolicy::HeldOut,
    };
    let result = eval::evaluate(&soft, &truth.adjacency(), policy, &known)?;
    let doc = pretty(&result);
    if let Some(o) = out {
        write(o, &doc)?;
    }
    print!("{doc}");
    Ok(())
}

pub fn sweep(
    config_path: &Path,
    workers: Option<usize>,
    resume: bool,
    timing: bool,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = SweepConfig::load(config_path)?;
    cfg.seed = config::resolve_seed(seed, seed_from_env().as_deref(), cfg.seed)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(o) = out {
        cfg.output = o;
    }
    cfg.validate()?;
    let scenarios = cfg.scenario_list()?;
    let cells = cfg.cells();
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let opts = SweepOptions { workers: cfg.workers, record_timing: timing, resume };
    let rows = sweep::run_sweep(&cells, &scenarios, opts, Some(&cfg.output))?;
    let summary = sweep::summarize(&rows);
    write(&summary_path(&cfg.output), sweep::summary_to_csv(&summary)?)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} cells, {} rows ({failed} not ok) -> {}", cells.len(), rows.len(), cfg.output.display());
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}_summary.csv"))
}

pub fn validate(config_path: Option<&Path>, defaults: Option<SchemaArg>) -> Result<()> {
    if let Some(kind) = defaults {
        let text = match kind {
            SchemaArg::Run => config::to_toml(&RunConfig::example())?,
            SchemaArg::Sweep => config::to_toml(&SweepConfig::example())?,
        };
        print!("{text}");
        return Ok(());
    }
    let path = config_path.expect("clap requires --config without --defaults");
    match config::detect_kind(&read_text(path)?)? {
        ConfigKind::Run => {
            let cfg = RunConfig::load(path)?;
            println!("ok: run config, {} nodes, output {}", cfg.topology.n_nodes, cfg.output_dir.display());
        }
        ConfigKind::Sweep => {
            let cfg = SweepConfig::load(path)?;
            println!("ok: sweep config, {} cells, output {}", cfg.cells().len(), cfg.output.display());
        }
    }
    Ok(())
}
