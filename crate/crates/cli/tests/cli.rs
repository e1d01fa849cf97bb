use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bench_hedge::models::StylizedMmmParams;
use bench_hedge::pricing::zcb_price;
use serde_json::Value;

const STYLIZED: &str = r#"
[model]
variant = "stylized"
alpha0 = 0.05
beta = 0.05
r = 0.0
z0 = 1.0
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bench-hedge"));
    c.env_remove("OUTPUT_DIR");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(task: &str, config: &Path, extra: &[&str]) -> Output {
    bin().arg(task).arg("--config").arg(config).args(extra).output().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or("")).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn tree_fixture(name: &str) -> String {
    format!("{}/../core/fixtures/trees/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn zcb_rows_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zcb.toml", &format!("{STYLIZED}\n[task.price-zcb]\nmaturities = [2.0, 10.0]\n"));
    let out_dir = dir.path().join("out");
    let out = run("price-zcb", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("zcb.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,T,p_hat,f_t"));
    let p = StylizedMmmParams { alpha0: 0.05, beta: 0.05, r: 0.0, z0: 1.0 };
    for (line, maturity) in lines.zip([2.0, 10.0]) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let q = zcb_price(0.0, 1.0, &p, maturity).unwrap();
        assert_eq!(cells, vec![0.0, maturity, q.p_hat, q.f_t]);
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["task"], "price-zcb");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let plot = fs::read_to_string(out_dir.join("plot.csv")).unwrap();
    assert!(plot.starts_with("series,x,y,y_stderr\np_hat,"));
}

fn outputs_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{STYLIZED}\n[grid]\nt0 = 0.0\nt_end = 2.0\nn_steps = 8\n\n[mc]\nn_paths = 2000\nmaster_seed = 11\n\n\
         [task.hedge]\ntarget = \"asset\"\nbond_maturity = 4.0\nconvergence_steps = [4, 8]\n\n\
         [output]\nformats = [\"csv\", \"json\", \"jsonl\"]\n"
    );
    let cfg = write_config(dir.path(), "hedge.toml", &body);
    let mut results = Vec::new();
    for (k, threads) in ["1", "4", "4"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = run("hedge", &cfg, &["--threads", threads, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        results.push(outputs_except_manifest(&out_dir));
    }
    assert!(results[0].iter().any(|(n, _)| n == "hedge.csv"));
    assert_eq!(results[0], results[1]);
    assert_eq!(results[1], results[2]);
    let plot = String::from_utf8(results[0].iter().find(|(n, _)| n == "plot.csv").unwrap().1.clone()).unwrap();
    for series in ["value,", "cost,", "risk,", "rms_error,"] {
        assert!(plot.lines().any(|l| l.starts_with(series)), "missing series {series}");
    }
}

#[test]
fn misspelled_key_fails_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{STYLIZED}\n[task.price-zcb]\nmaturites = [1.0]\n").replace("beta", "betta");
    let cfg = write_config(dir.path(), "bad.toml", &body);
    let out = run("price-zcb", &cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("betta"));

    let body = format!("{STYLIZED}\n[task.price-zcb]\nmaturites = [1.0]\n");
    let cfg = write_config(dir.path(), "bad2.toml", &body);
    let out = run("price-zcb", &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("maturites"));
}

#[test]
fn command_must_match_config_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zcb.toml", &format!("{STYLIZED}\n[task.price-zcb]\nmaturities = [1.0]\n"));
    let out = run("price-put", &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_model_parameter_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{STYLIZED}\n[task.price-zcb]\nmaturities = [1.0]\n").replace("z0 = 1.0", "z0 = -1.0");
    let cfg = write_config(dir.path(), "neg.toml", &body);
    let out = run("price-zcb", &cfg, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "input");
}

#[test]
fn structure_condition_violation_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    // Drift without variance: the asset rises on every branch.
    let tree = r#"{"nodes": [
        {"id": "r", "time": 0, "parent": null, "prob": "1", "assets": ["1"]},
        {"id": "a", "time": 1, "parent": "r", "prob": "1/2", "assets": ["2"]},
        {"id": "b", "time": 1, "parent": "r", "prob": "1/2", "assets": ["2"]}
    ]}"#;
    fs::write(dir.path().join("sure.json"), tree).unwrap();
    let cfg = write_config(
        dir.path(),
        "tree.toml",
        "[task.tree-lab]\ntree = \"sure.json\"\noperations = [\"structure\"]\n",
    );
    let out = run("tree-lab", &cfg, &["--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "numerical");
    assert!(e["error"]["message"].as_str().unwrap().contains("structure condition"));
}

#[test]
fn tree_lab_reports_exact_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tree.toml",
        &format!("[task.tree-lab]\ntree = \"{}\"\n", tree_fixture("trinomial.json")),
    );
    let out_dir = dir.path().join("o");
    let out = run("tree-lab", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("tree_lab.json")).unwrap()).unwrap();
    assert_eq!(doc["decomposition"]["value"]["r"], "9/100");
    assert_eq!(doc["decomposition"]["xi"]["r"][0], "3/4");
    assert_eq!(doc["decomposition"]["xi"]["u"][0], "25/12");
    assert_eq!(doc["optimality"]["pass"], true);
    assert!(doc.get("incomplete_info").is_none());
}

#[test]
fn tree_lab_claim_override_and_float_mode() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "[task.tree-lab]\ntree = \"{}\"\narithmetic = \"float\"\noperations = [\"decompose\"]\n\
         claim = {{ uu = 0, um = 0, ud = 0, mu = 0, mm = 0, md = 0, du = 0, dm = 0, dd = 0 }}\n",
        tree_fixture("trinomial.json")
    );
    let cfg = write_config(dir.path(), "tree.toml", &body);
    let out_dir = dir.path().join("o");
    let out = run("tree-lab", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("tree_lab.json")).unwrap()).unwrap();
    assert_eq!(doc["arithmetic"], "float");
    assert_eq!(doc["decomposition"]["value"]["r"], 0.0);
}

#[test]
fn incomplete_information_on_coarsened_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "[task.tree-lab]\ntree = \"{}\"\ninformation = \"coarse\"\n",
        tree_fixture("coarsened_binomial.json")
    );
    let cfg = write_config(dir.path(), "tree.toml", &body);
    let out_dir = dir.path().join("o");
    let out = run("tree-lab", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("tree_lab.json")).unwrap()).unwrap();
    let r = &doc["incomplete_info"];
    assert_eq!(r["pass"], true);
    assert_eq!(r["residual_nonzero"], true);
    assert_eq!(r["identity_residual"], 0.0);
}

#[test]
fn output_dir_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{STYLIZED}\n[task.price-put]\nstrikes = [1.0]\nmaturity = 10.0\n\n[output]\ndirectory = \"{}\"\n",
        dir.path().join("from_config").display()
    );
    let cfg = write_config(dir.path(), "put.toml", &body);
    assert!(run("price-put", &cfg, &[]).status.success());
    assert!(dir.path().join("from_config/put.csv").exists());

    let env_dir = dir.path().join("from_env");
    let out = bin().env("OUTPUT_DIR", &env_dir).args(["price-put", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("put.csv").exists());

    let flag_dir = dir.path().join("from_flag");
    let out = bin()
        .env("OUTPUT_DIR", &env_dir)
        .args(["price-put", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.join("put.csv").exists());
}

#[test]
fn verify_emits_report_array() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{STYLIZED}\n[grid]\nt0 = 0.0\nt_end = 2.0\nn_steps = 8\n\n[mc]\nn_paths = 4000\nmaster_seed = 5\n\n\
         [task.verify]\nchecks = [\"supermartingale\", \"strict_local_martingale\", \"numeraire_identity\"]\nbond_maturity = 4.0\n"
    );
    let cfg = write_config(dir.path(), "verify.toml", &body);
    let out_dir = dir.path().join("o");
    let out = run("verify", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("verify.json")).unwrap()).unwrap();
    let reports = doc.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        for key in ["test", "statistic", "threshold", "verdict"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
    assert_eq!(reports[2]["test"], "numeraire_identity");
    assert_eq!(reports[2]["verdict"], "pass");
}

#[test]
fn random_scaling_model_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[model]
variant = "random_scaling"
bessel_dim = 4.0
z0 = 1.0
gamma0 = 0.05
rho = 0.0
r = 0.02
scaling = { level = 0.05, slope = -1.0, vol = 0.1, vol_power = 0.5 }

[grid]
t0 = 0.0
t_end = 1.0
n_steps = 20

[mc]
n_paths = 200
master_seed = 3

[task.simulate]
channels = ["Z", "s_hat_1"]
write_paths = 2
"#;
    let cfg = write_config(dir.path(), "sim.toml", body);
    let out_dir = dir.path().join("o");
    let out = run("simulate", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let paths = fs::read_to_string(out_dir.join("paths.csv")).unwrap();
    assert_eq!(paths.lines().next(), Some("path,node,t,Z,s_hat_1"));
    assert_eq!(paths.lines().count(), 1 + 2 * 21);

    let bad = body.replace("\"s_hat_1\"", "\"s_hat_9\"");
    let cfg = write_config(dir.path(), "bad.toml", &bad);
    let out = run("simulate", &cfg, &["--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shipped_configs_parse() {
    let dir = format!("{}/configs", env!("CARGO_MANIFEST_DIR"));
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        let text = fs::read_to_string(&p).unwrap();
        let v: toml::Value = toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(v["task"].as_table().unwrap().len(), 1, "{}", p.display());
        n += 1;
    }
    assert!(n >= 8);
}
