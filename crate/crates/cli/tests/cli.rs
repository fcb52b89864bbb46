use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_topoleak"));
    c.env_remove("TOPOLEAK_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every file under `dir`, relative path and bytes, sorted by path.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

const STAR10: &str = "seed = 4\noutput_dir = \"star10\"\n\n[topology]\nkind = \"star\"\nn_nodes = 10\n";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn gen_topology_examples() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let o = run(&["gen-topology", "--kind", "star", "--n", "10", "--out", "star.edgelist"], d);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(d.join("star.edgelist")).unwrap();
    assert!(text.starts_with("10 9\n"));
    assert_eq!(text.lines().count(), 10);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("star.edgelist.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["stats"]["n_edges"], 9);
    assert_eq!(stdout(&o), fs::read_to_string(d.join("star.edgelist.stats.json")).unwrap());

    for name in ["a.edgelist", "b.edgelist"] {
        let o = run(&["gen-topology", "--kind", "er", "--n", "20", "--p", "0.5", "--seed", "7", "--out", name], d);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(d.join("a.edgelist")).unwrap(), fs::read(d.join("b.edgelist")).unwrap());

    let o = run(&["gen-topology", "--kind", "ring", "--n", "2", "--out", "ring.edgelist"], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("ring.edgelist").exists());
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&run(&["gen-topology", "--kind", "er", "--n", "5", "--out", "x"], d)), 2);
}

#[test]
fn gen_topology_seed_precedence() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let er = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let mut c = bin();
        c.current_dir(d).args(["gen-topology", "--kind", "er", "--n", "12", "--p", "0.4", "--out", name]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(s) = env {
            c.env("TOPOLEAK_SEED", s);
        }
        assert_eq!(code(&c.output().unwrap()), 0);
        fs::read(d.join(name)).unwrap()
    };
    let flag3 = er("f3", Some("3"), None);
    assert_eq!(er("e3", None, Some("3")), flag3);
    assert_eq!(er("f3e9", Some("3"), Some("9")), flag3);
    assert_ne!(er("e9", None, Some("9")), flag3);
    let mut c = bin();
    c.current_dir(d).env("TOPOLEAK_SEED", "abc").args(["gen-topology", "--kind", "ring", "--n", "5", "--out", "r"]);
    assert_eq!(code(&c.output().unwrap()), 2);
}

#[test]
fn simulate_writes_rounds_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "star10.toml", STAR10);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(manifest["rounds"].as_array().unwrap().len(), 10);
    let rounds = fs::read_dir(d.join("star10")).unwrap().filter(|e| {
        let e = e.as_ref().unwrap();
        e.path().is_dir() && e.file_name().to_string_lossy().starts_with("round_")
    });
    assert_eq!(rounds.count(), 10);
    assert_eq!(fs::read_dir(d.join("star10/data")).unwrap().count(), 10);

    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "again"], d);
    assert_eq!(code(&o), 0);
    let a = tree(&d.join("star10"));
    let b = tree(&d.join("again"));
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        t.into_iter().filter(|(p, _)| p != Path::new("run.json")).collect()
    };
    assert_eq!(strip(a), strip(b));
}

#[test]
fn simulate_seed_env_and_flag() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "c.toml", STAR10);
    let c = cfg.to_str().unwrap();
    let snap = |out: &str| fs::read(d.join(out).join("round_0010/post/node_003.bin")).unwrap();
    assert_eq!(code(&run(&["simulate", "--config", c, "--out", "cfg4"], d)), 0);
    assert_eq!(code(&run(&["simulate", "--config", c, "--out", "flag9", "--seed", "9"], d)), 0);
    let o = bin().current_dir(d).env("TOPOLEAK_SEED", "9").args(["simulate", "--config", c, "--out", "env9"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let o = bin()
        .current_dir(d)
        .env("TOPOLEAK_SEED", "9")
        .args(["simulate", "--config", c, "--out", "flag4", "--seed", "4"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(snap("flag9"), snap("env9"));
    assert_eq!(snap("flag4"), snap("cfg4"));
    assert_ne!(snap("cfg4"), snap("env9"));
}

#[test]
fn simulate_config_errors_leave_no_output() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let missing = write_config(d, "m.toml", &format!("{STAR10}\n[data]\ndataset = \"nope.csv\"\n"));
    let o = run(&["simulate", "--config", missing.to_str().unwrap()], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("star10").exists());
    let unknown = write_config(d, "u.toml", &format!("{STAR10}\n[train]\nepochs = 3\n"));
    assert_eq!(code(&run(&["simulate", "--config", unknown.to_str().unwrap()], d)), 2);
    assert_eq!(code(&run(&["simulate", "--config", "absent.toml"], d)), 2);
    assert!(!d.join("star10").exists());
}

#[test]
fn simulate_reads_a_dataset_file() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut csv = String::from("f0,f1,label\n");
    for k in 0..60 {
        let c = k % 3;
        csv.push_str(&format!("{}.0,{}.5,{c}\n", c * 2, k % 5));
    }
    fs::write(d.join("pool.csv"), csv).unwrap();
    let text = "output_dir = \"ds\"\n[topology]\nkind = \"ring\"\nn_nodes = 6\n\
                [data]\ndataset = \"pool.csv\"\nn_classes = 3\nn_features = 2\nsamples_per_node = 10\n";
    let cfg = write_config(d, "ds.toml", text);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let node0 = fs::read_to_string(d.join("ds/data/node_000.csv")).unwrap();
    assert!(node0.starts_with("f0,f1,label\n"));
    let wrong = write_config(d, "w.toml", &text.replace("n_features = 2", "n_features = 3"));
    assert_eq!(code(&run(&["simulate", "--config", wrong.to_str().unwrap()], d)), 2);
}

#[test]
fn attack_examples() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "star10.toml", STAR10);
    assert_eq!(code(&run(&["simulate", "--config", cfg.to_str().unwrap()], d)), 0);

    let o = run(&["attack", "--scenario", "4", "--log", "star10"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let soft = fs::read_to_string(d.join("star10/attack_sc4/soft_adjacency.csv")).unwrap();
    assert_eq!(soft.lines().count(), 10);
    assert!(soft.lines().all(|l| l.split(',').count() == 10));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("star10/attack_sc4/attack.json")).unwrap()).unwrap();
    assert_eq!(side["scenario"], "SC4");
    assert_eq!(side["metric"], "cosine_similarity");

    let o = run(&["attack", "--scenario", "5", "--log", "star10"], d);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported"));
    assert!(!d.join("star10/attack_sc5").exists());
    assert_eq!(code(&run(&["attack", "--scenario", "7", "--log", "star10"], d)), 2);
    assert_eq!(code(&run(&["attack", "--scenario", "1", "--log", "nowhere"], d)), 2);

    let o = run(&["attack", "--scenario", "1", "--log", "star10", "--labeled-frac", "0.3", "--out", "sc1"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // 45 pairs, round(0.3 · 45) = 14 of them labeled, the rest held out.
    assert_eq!(eval["n_eval_pairs"], 31);
    assert_eq!(eval["eval_pair_policy"], "held_out");
    let known = fs::read_to_string(d.join("sc1/known_pairs.csv")).unwrap();
    assert_eq!(known.lines().count(), 15);

    // Rescoring the saved prediction gives the same result.
    let o = run(
        &[
            "evaluate",
            "--pred",
            "sc1/soft_adjacency.csv",
            "--truth",
            "star10/topology.edgelist",
            "--known",
            "sc1/known_pairs.csv",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), fs::read_to_string(d.join("sc1/eval.json")).unwrap());
}

#[test]
fn attack_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "star10.toml", STAR10);
    assert_eq!(code(&run(&["simulate", "--config", cfg.to_str().unwrap()], d)), 0);
    for out in ["a", "b"] {
        assert_eq!(code(&run(&["attack", "--scenario", "2", "--log", "star10", "--out", out], d)), 0);
    }
    assert_eq!(tree(&d.join("a")), tree(&d.join("b")));
}

#[test]
fn evaluate_rejects_mismatched_inputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("soft.csv"), "0,0.9,0.1\n0.9,0,0.8\n0.1,0.8,0\n").unwrap();
    fs::write(d.join("truth.edgelist"), "3 2\n0 1\n1 2\n").unwrap();
    fs::write(d.join("big.edgelist"), "4 3\n0 1\n1 2\n2 3\n").unwrap();
    let o = run(&["evaluate", "--pred", "soft.csv", "--truth", "truth.edgelist"], d);
    assert_eq!(code(&o), 0);
    let e: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(e["f1_05"], 1.0);
    assert_eq!(e["eval_pair_policy"], "all_pairs");
    assert_eq!(code(&run(&["evaluate", "--pred", "soft.csv", "--truth", "big.edgelist"], d)), 3);
    fs::write(d.join("bad.csv"), "0,x\n").unwrap();
    assert_eq!(code(&run(&["evaluate", "--pred", "bad.csv", "--truth", "truth.edgelist"], d)), 2);
}

const SWEEP: &str = r#"
n_seeds = 2
output = "res/results.csv"

[experiment]
kind = "density"
n_nodes = 6
ps = [0.4, 0.7]

[pipeline.attack.edgepre]
epochs = 50

[pipeline.attack.infergat]
epochs = 50
"#;

#[test]
fn sweep_writes_ok_rows_independent_of_workers() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "sweep.toml", SWEEP);
    let c = cfg.to_str().unwrap();
    let o = run(&["sweep", "--config", c], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.join("res/results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment_id,scenario,topology_kind,n_nodes,n_edges,density,alpha,local_epochs,dp_clip,dp_sigma,seed,\
         f1_05,best_f1,best_tau,auc,precision,recall,status,wall_ms"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 2 * 4);
    assert!(rows.iter().all(|r| r.contains(",ok,")), "{text}");
    assert!(d.join("res/results_summary.csv").exists());

    let o = run(&["sweep", "--config", c, "--workers", "3", "--out", "res/w3.csv"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(d.join("res/w3.csv")).unwrap(), text.as_bytes());
}

#[test]
fn sweep_resume_skips_completed_cells() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "sweep.toml", SWEEP);
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["sweep", "--config", c], d)), 0);
    let full = fs::read_to_string(d.join("res/results.csv")).unwrap();

    // Keep the header and the first cell (four scenario rows), as if the
    // run had been interrupted, and poison a kept value so reuse is visible.
    let mut kept: Vec<String> = full.lines().take(5).map(String::from).collect();
    kept[1] = kept[1].replace(",ok,", ",ok_kept,");
    fs::write(d.join("res/results.csv"), kept.join("\n") + "\n").unwrap();
    let o = run(&["sweep", "--config", c, "--resume"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = fs::read_to_string(d.join("res/results.csv")).unwrap();
    assert!(resumed.contains(",ok_kept,"));
    assert_eq!(resumed.replace(",ok_kept,", ",ok,"), full);
}

#[test]
fn sweep_config_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let bad = write_config(d, "bad.toml", &SWEEP.replace("n_seeds = 2", "n_seeds = \"two\""));
    let o = run(&["sweep", "--config", bad.to_str().unwrap()], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("res").exists());
    let sc5 = write_config(d, "sc5.toml", &format!("scenarios = [5]\n{SWEEP}"));
    assert_eq!(code(&run(&["sweep", "--config", sc5.to_str().unwrap()], d)), 4);
    let good = write_config(d, "good.toml", SWEEP);
    assert_eq!(code(&run(&["sweep", "--config", good.to_str().unwrap(), "--workers", "0"], d)), 2);
    assert!(!d.join("res").exists());
}

#[test]
fn validate_command() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for kind in ["run", "sweep"] {
        let o = run(&["validate", "--defaults", kind], d);
        assert_eq!(code(&o), 0);
        let p = write_config(d, &format!("{kind}.toml"), &stdout(&o));
        let o = run(&["validate", "--config", p.to_str().unwrap()], d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with(&format!("ok: {kind} config")));
    }
    let p = write_config(d, "typo.toml", &STAR10.replace("n_nodes", "nodes"));
    let o = run(&["validate", "--config", p.to_str().unwrap()], d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    assert_eq!(code(&run(&["validate"], d)), 2);
}
