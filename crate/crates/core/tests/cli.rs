use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlcal::cli::{self, ExperimentConfig, EXIT_INVALID, EXIT_MISMATCH, EXIT_OK};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nlcal(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlcal"))
        .args(args)
        .env(cli::OUT_DIR_ENV, out)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
name = "small"
seed = 5

[lagrangian]
family = "fractional-quadratic"
s = 0.5

[domain]
lo = [0.0]
hi = [1.0]
cells = [40]

[field]
kind = "affine"
slope = [1.0]
offset = 0.0
t_min = -1.0
t_max = 1.0
t0 = 0.0

[candidate]
kind = "leaf"

[competitors]
recipe = "bumps"
count = 4
amplitude = 0.2

[[certifier]]
kind = "calibration"

[[certifier]]
kind = "minimality"
"#;

#[test]
fn shipped_configs_parse_and_validate() {
    let mut n = 0;
    for e in fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn run_writes_reports_and_exits_ok() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = nlcal(&["run", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("small-00-calibration.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["certificate"]["verdict"], "pass");
    assert_eq!(report["seed"], 5);
    assert!(out.join("small-01-minimality.json").exists());
    assert!(out.join("small.candidate.csv").exists());
}

#[test]
fn refinement_doubles_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = nlcal(&["run", "--config", cfg.to_str().unwrap(), "--refine", "1"], &out);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("small-00-calibration.json")).unwrap()).unwrap();
    assert_eq!(report["cells"][0], 80);
}

#[test]
fn malformed_config_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &SMALL.replace("cells = [40]", "cells = [40]\nbogus = 1"));
    let o = nlcal(&["run", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(EXIT_INVALID));
    let unknown = write(dir.path(), "family.toml", &SMALL.replace("fractional-quadratic", "no-such-family"));
    assert_eq!(nlcal(&["run", "--config", unknown.to_str().unwrap()], dir.path()).status.code(), Some(EXIT_INVALID));
    let missing = dir.path().join("absent.toml");
    assert_eq!(nlcal(&["run", "--config", missing.to_str().unwrap()], dir.path()).status.code(), Some(EXIT_INVALID));
}

#[test]
fn randomness_without_seed_is_rejected() {
    let text = SMALL.replace("seed = 5\n", "");
    let err = ExperimentConfig::from_toml(&text).and_then(|c| c.validate()).unwrap_err();
    assert_eq!(err.code(), EXIT_INVALID);
}

#[test]
fn expectation_mismatch_exits_one() {
    let text = fs::read_to_string(configs().join("viscosity-corner.toml")).unwrap();
    assert!(text.contains("expect = \"fail\""));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "corner.toml", &text.replacen("expect = \"fail\"", "expect = \"pass\"", 1));
    let o = nlcal(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(EXIT_MISMATCH));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MISMATCH"));
}

#[test]
fn report_lists_failures_first() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "corner.toml", &fs::read_to_string(configs().join("viscosity-corner.toml")).unwrap());
    let out = dir.path().join("out");
    assert_eq!(nlcal(&["run", "--config", cfg.to_str().unwrap()], &out).status.code(), Some(EXIT_OK));
    let mut jsons: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    jsons.sort();
    jsons.reverse();
    let mut args = vec!["report"];
    args.extend(jsons.iter().map(String::as_str));
    let o = nlcal(&args, &out);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("report"));
    assert!(lines[1].contains("fail"), "{table}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("report,property,verdict,margin,trend\n"));
}

#[test]
fn report_without_inputs_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nlcal(&["report"], dir.path()).status.code(), Some(EXIT_INVALID));
    let junk = write(dir.path(), "junk.json", "not json");
    assert_eq!(nlcal(&["report", junk.to_str().unwrap()], dir.path()).status.code(), Some(EXIT_INVALID));
}

#[test]
fn energy_and_el_apply_print_machine_readable_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = nlcal(&["energy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["value"].as_f64().unwrap().is_finite());

    let at = |refine: &str| -> Vec<f64> {
        let o = nlcal(&["el-apply", "--config", cfg.to_str().unwrap(), "--at", "0.25,-0.5,0.5", "--refine", refine], dir.path());
        assert_eq!(o.status.code(), Some(EXIT_OK));
        let text = String::from_utf8(o.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "node,x0,x1,value");
        assert_eq!(lines.len(), 4);
        lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
    };
    // affine leaves solve the equation; the residual is O(h²) quadrature error
    let (coarse, fine) = (at("0"), at("1"));
    for (c, f) in coarse.iter().zip(&fine) {
        assert!(c.abs() < 1e-5, "{c}");
        assert!(f.abs() < c.abs() / 3.0 || f.abs() < 1e-12, "{c} -> {f}");
    }
}

#[test]
fn layer_solve_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "layer"

[lagrangian]
family = "fractional-quadratic"
s = 0.5
reaction = { type = "sine-layer" }

[domain]
lo = [-4.0]
hi = [4.0]
cells = [64]

[candidate]
kind = "arctan"

[layer]
damping = 0.02
max_iter = 20000
states = [-1.0, 1.0]
initial = "odd"
"#;
    let cfg = write(dir.path(), "layer.toml", text);
    let o = nlcal(&["layer-solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("layer.layer.csv")).unwrap();
    let values: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]), "profile not monotone");
    let n = values.len();
    for i in 0..n {
        assert!((values[i] + values[n - 1 - i]).abs() < 1e-8, "profile not odd");
    }
}

#[test]
fn thread_flag_is_accepted_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = nlcal(&["energy", "--config", cfg.to_str().unwrap(), "--threads", "2"], dir.path());
    assert_eq!(o.status.code(), Some(EXIT_OK));
}
