use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cim_core::config::RunConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cim-forge"));
    c.env_remove("CIM_FORGE_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Row of a CSV whose first field equals `key`, split into fields.
fn csv_row(text: &str, key: &str) -> Vec<String> {
    text.lines()
        .find(|l| l.split(',').next() == Some(key))
        .unwrap_or_else(|| panic!("no row {key}"))
        .split(',')
        .map(String::from)
        .collect()
}

#[test]
fn committed_default_config_matches_code() {
    let text = std::fs::read_to_string(repo_root().join("default-config.json")).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    assert_eq!(text, RunConfig::default().to_json());
}

#[test]
fn help_for_every_subcommand() {
    for sub in [
        "dac-transfer",
        "adc-transfer",
        "refgen",
        "mac",
        "matmul",
        "montecarlo",
        "sweep",
        "energy",
        "gen-workload",
        "show-config",
    ] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn dac_transfer_rows() {
    let csv = stdout(&["dac-transfer"]);
    assert_eq!(csv.lines().next().unwrap(), "code,v_norm,volts");
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(csv_row(&csv, "8")[1], "0.5");
    assert_eq!(csv_row(&csv, "8")[2], "0.45");
    assert_eq!(csv_row(&csv, "0")[2], "0.9");
}

#[test]
fn dac_transfer_montecarlo_std() {
    let csv = stdout(&["dac-transfer", "--vdd", "0.6", "--montecarlo", "10000"]);
    assert!(csv.starts_with("code,v_norm,volts,mc_mean_volts,mc_std_volts\n"));
    let std: f64 = csv_row(&csv, "8")[4].parse().unwrap();
    assert!((std - 1.8e-3).abs() < 0.05 * 1.8e-3, "{std}");
}

#[test]
fn adc_transfer_staircase() {
    let csv = stdout(&["adc-transfer"]);
    assert_eq!(csv.lines().count(), 242);
    for (p, code) in [("0", "0"), ("64", "8"), ("200", "15")] {
        assert_eq!(csv_row(&csv, p)[3], code, "pmac {p}");
    }
}

#[test]
fn refgen_levels() {
    let csv = stdout(&["refgen", "--rho", "0"]);
    assert_eq!(csv.lines().count(), 17);
    assert_eq!(csv_row(&csv, "8")[1], "0.75");
    assert_eq!(csv_row(&csv, "0")[1], "1");
    assert_eq!(csv_row(&csv, "15")[1], "0.53125");
}

#[test]
fn energy_anchor() {
    let text = stdout(&["energy", "--vdd", "0.6"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["report"]["tops_per_watt"], 50.07);
    assert_eq!(v["adc_energy"]["coarse_fine_comparators"], 8);
    // Keys come out sorted.
    let keys: Vec<&String> = v["report"].as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let adc = text.find("\"adc_energy\"").unwrap();
    assert!(adc < text.find("\"report\"").unwrap());
}

#[test]
fn mac_and_matmul_exact_when_ideal() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tile.csv"),
        "1,-1,2,-2,127,-128,0,5\n3,3,3,3,3,3,3,3\n0,1,0,1,0,1,0,1\n-1,-1,-1,-1,-1,-1,-1,-1\n",
    )
    .unwrap();
    // 4 rows: q = ceil(log2(61)) = 6 bits.
    let ideal = [
        "--no-noise",
        "--ref-mode",
        "ideal",
        "--scheme",
        "full-flash",
        "--cutoff",
        "0",
        "--adc-bits",
        "6",
        "--rows",
        "4",
    ];
    let mut args = vec!["mac", "--inputs", "15,4,2,1", "--weights", "tile.csv"];
    args.extend(ideal);
    let out = run_in(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["outputs"], v["exact"]);
    assert_eq!(v["exact"][4], 15 * 127 + 4 * 3 - 1);
    assert_eq!(v["samples"].as_array().unwrap().len(), 64);

    std::fs::write(dir.path().join("x.csv"), "1,2,3,4,5\n15,0,15,0,15\n").unwrap();
    std::fs::write(dir.path().join("w.csv"), "1,2\n-3,4\n5,-6\n7,8\n-128,127\n").unwrap();
    let out = run_in(
        dir.path(),
        &[
            "matmul",
            "--x",
            "x.csv",
            "--w",
            "w.csv",
            "--no-noise",
            "--ref-mode",
            "ideal",
            "--scheme",
            "full-flash",
            "--cutoff",
            "0",
            "--adc-bits",
            "8",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "n0,n1\n-602,659\n-1830,1845\n");
}

#[test]
fn sweep_default_grid_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let wl = repo_root().join("workloads/synthetic-mlp");
    let out = run_in(
        dir.path(),
        &[
            "sweep",
            "--workload",
            wl.to_str().unwrap(),
            "--out",
            "s.csv",
            "--histogram",
            "h.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("rows,adc_bits,cutoff,hw_errors,seed,"));
    let hist = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(hist.starts_with("rows,adc_bits,cutoff,hw_errors,seed,layer,pmac,count\n"));
}

#[test]
fn output_dir_from_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"output_dir": "results"}"#).unwrap();
    let out = run_in(dir.path(), &["--config", "c.json", "refgen"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(dir.path().join("results/refgen.csv").exists());
}

#[test]
fn seed_sources() {
    let with_flag = stdout(&["montecarlo", "--trials", "100", "--code", "3", "--seed", "5"]);
    let env = bin()
        .args(["montecarlo", "--trials", "100", "--code", "3"])
        .env("CIM_FORGE_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), with_flag);
    let other = stdout(&["montecarlo", "--trials", "100", "--code", "3", "--seed", "6"]);
    assert_ne!(other, with_flag);
    let bad = bin().args(["refgen"]).env("CIM_FORGE_SEED", "abc").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes_and_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), r#"{"vdd": 0.9, "turbo": 1}"#).unwrap();
    let cases: [(&[&str], i32); 7] = [
        (&["--config", "bad.json", "refgen", "--out", "o1.csv"], 2),
        (&["--vdd", "2.0", "refgen", "--out", "o2.csv"], 2),
        (&["--rows", "8", "adc-transfer", "--out", "o3.csv"], 2),
        (&["refgen", "--bogus", "--out", "o4.csv"], 2),
        (&["--config", "missing.json", "refgen", "--out", "o5.csv"], 3),
        (&["matmul", "--x", "nope.csv", "--w", "nope.csv", "--out", "o6.csv"], 3),
        (&["sweep", "--workload", "nowhere", "--out", "o7.csv"], 3),
    ];
    for (args, code) in cases {
        let out = run_in(p, args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
    let left: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("bad.json")]);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = run_in(
            dir.path(),
            &["montecarlo", "--trials", "500", "--seed", "3", "--out", name],
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
}
