use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tipwarn_cli::config::ScenarioConfig;
use tipwarn_cli::output::{header_value, parse_series, series_table};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tipwarn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tipwarn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TIPWARN_OUT")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], out: &Path) {
    let o = tipwarn(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn small(name: &str) -> Value {
    serde_json::json!({
        "name": name,
        "model": {"kind": "saddle_linear", "p0": 1.0, "eps": 0.0075},
        "grid": {"x_start": -2.5, "x_end": 2.0, "n": 89},
        "time": {"t0": 0.0, "t_end": 2.0, "m": 200},
        "d": 0.2,
        "mc": {"n_paths": 2000, "dt_mc": 0.002, "seed": 7, "sample_times": [1.0, 2.0]}
    })
}

/// Data lines (non-comment) of a CSV file.
fn table(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn column(rows: &[String], name: &str) -> Vec<f64> {
    let idx = rows[0].split(',').position(|c| c == name).unwrap();
    rows[1..]
        .iter()
        .map(|r| r.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn straight_drift_density_matches_analytic_column() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("fig1.json");
    run_ok(&["run", "--config", cfg.to_str().unwrap()], out.path());
    let rows = table(&out.path().join("fig1_densities.csv"));
    let x = column(&rows, "x");
    let p = column(&rows, "p@3.0");
    let exact = column(&rows, "analytic@3.0");
    let dx = x[1] - x[0];
    let l1: f64 = p.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() * dx;
    assert!(l1 < 1e-2, "L1 = {l1}");
}

#[test]
fn linear_drift_escape_is_about_eighty_percent() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("fig3.json");
    run_ok(&["run", "--config", cfg.to_str().unwrap()], out.path());
    let text = std::fs::read_to_string(out.path().join("fig3_series.csv")).unwrap();
    let s = parse_series(&text).unwrap();
    let c = s.last().cumulative_escape;
    assert!((0.75..=0.85).contains(&c), "cumulative escape {c}");
    assert!(s.last().kramers_cumulative.unwrap() >= c);
}

#[test]
fn series_csv_round_trips() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(out.path(), "rt.json", &small("rt"));
    run_ok(&["run", "--config", cfg.to_str().unwrap()], out.path());
    let text = std::fs::read_to_string(out.path().join("rt_series.csv")).unwrap();
    let s = parse_series(&text).unwrap();
    assert_eq!(s.rows.len(), 201);
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(series_table(&s), body);
    assert!(!text.contains('\r'));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "det.json", &small("det"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["mc", "--config", cfg.to_str().unwrap()], out);
    }
    for f in ["det_series.csv", "det_mc.csv", "det_compare.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // A different seed changes the ensemble.
    let c = dir.path().join("c");
    run_ok(&["mc", "--config", cfg.to_str().unwrap(), "--seed", "8"], &c);
    assert_ne!(
        std::fs::read(a.join("det_mc.csv")).unwrap(),
        std::fs::read(c.join("det_mc.csv")).unwrap()
    );
}

#[test]
fn config_hash_is_stable_under_reserialization() {
    let dir = tempfile::tempdir().unwrap();
    let v = small("hash");
    let pretty = write_config(dir.path(), "pretty.json", &v);
    let compact = dir.path().join("compact.json");
    // Reverse key order and drop whitespace; add explicit defaults.
    let mut obj: Vec<(String, Value)> = v.as_object().unwrap().clone().into_iter().collect();
    obj.reverse();
    let mut text = String::from("{");
    for (k, val) in &obj {
        text.push_str(&format!("{}:{},", serde_json::to_string(k).unwrap(), val));
    }
    text.push_str("\"strict_admissibility\":false,\"initial\":{\"kind\":\"stationary\"}}");
    std::fs::write(&compact, text).unwrap();

    let mut hashes = BTreeSet::new();
    for (cfg, out) in [(&pretty, "p"), (&compact, "c")] {
        let out = dir.path().join(out);
        run_ok(&["run", "--config", cfg.to_str().unwrap()], &out);
        let text = std::fs::read_to_string(out.join("hash_series.csv")).unwrap();
        hashes.insert(header_value(&text, "config_hash").unwrap().to_owned());
        let echoed: ScenarioConfig =
            serde_json::from_str(header_value(&text, "config").unwrap()).unwrap();
        assert_eq!(echoed, ScenarioConfig::load(cfg).unwrap());
    }
    assert_eq!(hashes.len(), 1);
    let loaded = ScenarioConfig::load(&pretty).unwrap();
    assert!(hashes.contains(&loaded.hash()));
}

#[test]
fn single_row_series_has_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small("one");
    v["time"] = serde_json::json!({"t0": 0.0, "t_end": 0.0, "m": 0});
    let cfg = write_config(dir.path(), "one.json", &v);
    run_ok(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(table(&dir.path().join("one_series.csv")).len(), 2);
}

#[test]
fn strict_admissibility_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small("bad");
    // dx = 0.05, dx^2 / D = 0.0125 < dt = 0.02.
    v["time"] = serde_json::json!({"t0": 0.0, "t_end": 2.0, "m": 100});
    let cfg = write_config(dir.path(), "bad.json", &v);
    let path = cfg.to_str().unwrap();
    for sub in ["run", "check"] {
        let o = tipwarn(&[sub, "--config", path, "--strict"], dir.path());
        assert_eq!(o.status.code(), Some(4), "{sub}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    assert!(!dir.path().join("bad_series.csv").exists());
    // Without strict mode the run goes ahead with a warning.
    let o = tipwarn(&["check", "--config", path], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not admissible"));
}

#[test]
fn validation_and_io_failures_have_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small("v");
    v["noise"] = serde_json::json!(0.1);
    let cfg = write_config(dir.path(), "unknown.json", &v);
    let o = tipwarn(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let o = tipwarn(&["run", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), "ok.json", &small("ok"));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = tipwarn(&["run", "--config", cfg.to_str().unwrap()], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_records_point_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small("sw");
    v["strict_admissibility"] = serde_json::json!(true);
    v["sweep"] = serde_json::json!({"points": [
        {"eps": 0.01},
        {"d": 0.1, "dt": 0.04},
        {"eps": 0.02, "t_end": 1.0}
    ]});
    let cfg = write_config(dir.path(), "sw.json", &v);
    run_ok(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "2"], dir.path());
    let rows = table(&dir.path().join("sw_sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[1].ends_with(','));
    assert!(rows[2].contains("admissibility"), "{}", rows[2]);
    assert!(dir.path().join("sw_p00_series.csv").exists());
    assert!(!dir.path().join("sw_p01_series.csv").exists());
    let s = parse_series(&std::fs::read_to_string(dir.path().join("sw_p02_series.csv")).unwrap()).unwrap();
    assert_eq!(s.last().t, 1.0);
}

#[test]
fn monsoon_bifurcation_reports_the_fold() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("fig8.json");
    run_ok(&["bifurcation", "--config", cfg.to_str().unwrap()], out.path());
    let text = std::fs::read_to_string(out.path().join("fig8_bifurcation.csv")).unwrap();
    let a: f64 = header_value(&text, "fold_a_sys").unwrap().parse().unwrap();
    assert!(a > 0.47);
    // The full parameter set is echoed.
    assert!(header_value(&text, "config").unwrap().contains("\"latent_heat\""));
    let rows = table(&out.path().join("fig8_bifurcation.csv"));
    assert_eq!(rows[0], "q_a,t_a,a_sys,stable");
    assert_eq!(rows.len(), 901);
}

#[test]
fn manifest_covers_every_figure_and_criterion() {
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(scenarios().join("manifest.json")).unwrap()).unwrap();
    let mut figures = BTreeSet::new();
    let mut ids = BTreeSet::new();
    for entry in manifest["scenarios"].as_array().unwrap() {
        let cfg = ScenarioConfig::load(&scenarios().join(entry["config"].as_str().unwrap()))
            .unwrap_or_else(|e| panic!("{entry}: {e}"));
        assert_eq!(format!("{}.json", cfg.name), entry["config"].as_str().unwrap());
        assert!(["run", "mc", "bifurcation", "sweep", "baseline", "check"]
            .contains(&entry["command"].as_str().unwrap()));
        figures.extend(entry["figure"].as_u64());
        ids.extend(entry["acceptance"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()));
    }
    assert_eq!(figures, BTreeSet::from([1, 3, 4, 5, 6, 8, 9, 10]));
    assert_eq!(ids, (1..=12).collect());
}

#[test]
fn schema_lists_exactly_the_config_keys() {
    let schema: Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/scenario.schema.json"))
            .unwrap(),
    )
    .unwrap();
    let keys = |v: &Value| -> BTreeSet<String> { v.as_object().unwrap().keys().cloned().collect() };
    let mut v = small("s");
    v["bifurcation"] = serde_json::json!({"q_min": 0.01, "q_max": 0.04, "samples": 10});
    v["sweep"] = serde_json::json!({"points": [{}]});
    v["rate_threshold"] = serde_json::json!({"eps_lo": 1.0, "eps_hi": 2.0, "tol": 0.1});
    let cfg: ScenarioConfig = serde_json::from_value(v).unwrap();
    let full = serde_json::to_value(&cfg).unwrap();
    assert_eq!(keys(&schema["properties"]), keys(&full));
    let kinds: BTreeSet<String> = schema["properties"]["model"]["oneOf"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["properties"]["kind"]["const"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(
        kinds,
        ["monsoon", "ou", "saddle_linear", "saddle_nonlinear", "straight"]
            .map(String::from)
            .into()
    );
    let params = serde_json::to_value(tipwarn::monsoon::MonsoonParams::default()).unwrap();
    assert_eq!(keys(&schema["$defs"]["monsoon_params"]["properties"]), keys(&params));
}
