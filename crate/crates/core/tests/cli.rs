use std::path::Path;
use std::process::{Command, Output};

use floquet_smoothing::classical::period;
use floquet_smoothing::potentials::PotentialModel;

const QUARTIC: &str = r#"
seed = 3
epsilon = 0.01

[potential]
kind = "pure_power"
l = 2

[perturbation]
family = "a0_trig"
a0_power = 1.5
modes = [{ wave = [1], trig = "cos" }]

[frequency]
omega = [1.6180339887498949]

[basis]
size = 40

[evolve]
t_end = 20.0
output_dt = 1.0
steps_per_unit = 16

[measure]
samples = 10000

[smoothing]
energy_nodes = 32
psi_points = 512
phi_points = 8
e_max = 10000.0
fit_e_min = 50.0
"#;

fn floquet(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_floquet"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn csv_rows(text: &str) -> (String, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let meta = lines.next().unwrap().to_string();
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (meta, rows)
}

fn error_code(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    v["code"].as_str().unwrap().to_string()
}

#[test]
fn period_csv_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = floquet(dir.path(), QUARTIC, &["period"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (meta, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert!(meta.starts_with("# floquet-smoothing 0.1.0 schema=1 command=period config_sha256="));
    assert!(meta.contains("seed=3"));
    let q = PotentialModel::pure_power(2.0).unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let e: f64 = r[0].parse().unwrap();
        let t: f64 = r[1].parse().unwrap();
        assert_eq!(t, period(&q, e).unwrap());
    }
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("m.csv");
    let o = out_path.to_str().unwrap();
    let a = floquet(dir.path(), QUARTIC, &["measure", "--out", o]);
    assert!(a.status.success());
    let first = std::fs::read(&out_path).unwrap();
    let b = floquet(dir.path(), QUARTIC, &["measure", "--out", o]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(first, std::fs::read(&out_path).unwrap());
    let c = floquet(dir.path(), QUARTIC, &["measure", "--out", o, "--seed", "4"]);
    assert!(c.status.success());
    let other = std::fs::read(&out_path).unwrap();
    assert_ne!(first, other);
    assert!(String::from_utf8(other).unwrap().lines().next().unwrap().contains("seed=4"));
    let summary: serde_json::Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(summary["seed"], 4);
}

#[test]
fn config_hash_tracks_content() {
    let dir = tempfile::tempdir().unwrap();
    let meta = |cfg: &str| {
        let out = floquet(dir.path(), cfg, &["period"]);
        String::from_utf8(out.stdout).unwrap().lines().next().unwrap().to_string()
    };
    let a = meta(QUARTIC);
    // formatting alone does not change the hash
    assert_eq!(a, meta(&QUARTIC.replace("epsilon = 0.01", "epsilon   =   0.010")));
    assert_ne!(a, meta(&QUARTIC.replace("epsilon = 0.01", "epsilon = 0.02")));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = floquet(dir.path(), &QUARTIC.replace("[basis]\nsize", "[basis]\nsise"), &["period"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "E_CONFIG");
    assert!(out.stdout.is_empty());
}

#[test]
fn gate_refuses_without_force() {
    let dir = tempfile::tempdir().unwrap();
    // beta1 + [beta2] = 3.5 >= 2l - 1
    let bad = QUARTIC.replace("a0_power = 1.5", "a0_power = 3.5");
    let out = floquet(dir.path(), &bad, &["average"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_code(&out), "E_GATE");

    let forced = floquet(dir.path(), &bad, &["average", "--force"]);
    assert!(forced.status.success());
    let text = String::from_utf8(forced.stdout).unwrap();
    assert!(text.lines().next().unwrap().ends_with("conforming=false"));
    let summary: serde_json::Value = serde_json::from_slice(&forced.stderr).unwrap();
    assert_eq!(summary["gate"]["conforming"], false);

    let declared = format!("expect_reducible = false\n{bad}");
    let out = floquet(dir.path(), &declared, &["average"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().lines().next().unwrap().ends_with("conforming=false"));

    let good = floquet(dir.path(), QUARTIC, &["average"]);
    assert!(String::from_utf8(good.stdout).unwrap().lines().next().unwrap().ends_with("conforming=true"));
}

#[test]
fn evolve_flags_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let ok = floquet(dir.path(), QUARTIC, &["evolve"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&ok.stderr).unwrap();
    assert_eq!(summary["truncation_warning"], false);
    assert!(summary["norm_drift"].as_f64().unwrap() < 1e-10);
    let (_, rows) = csv_rows(&String::from_utf8(ok.stdout).unwrap());
    assert!(rows.last().unwrap()[0].parse::<f64>().unwrap() >= 20.0);

    // the top state of a 20-level basis sits in the monitored tail
    let top = QUARTIC.replace("steps_per_unit = 16", "steps_per_unit = 16\ninitial_modes = [19]");
    let out = floquet(dir.path(), &top, &["evolve"]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["truncation_warning"], true);
    let (_, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert!(rows.iter().all(|r| r[5] == "true"));
}

#[test]
fn quasienergy_without_forcing_has_no_shift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = QUARTIC.replace("epsilon = 0.01", "epsilon = 0.0");
    let out = floquet(dir.path(), &cfg, &["quasienergy"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 20);
    for r in rows {
        let lam: f64 = r[1].parse().unwrap();
        let q: f64 = r[2].parse().unwrap();
        assert!((q - lam).abs() < 1e-9 * lam, "{r:?}");
        assert_eq!(r[5], "false");
    }
}

#[test]
fn smooth_ledger_grades_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let out = floquet(dir.path(), QUARTIC, &["smooth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let orders: Vec<f64> = rows.iter().filter(|r| r[1] == "remainder").map(|r| r[4].parse().unwrap()).collect();
    assert!(orders.len() >= 2);
    assert!(orders.windows(2).all(|w| w[1] < w[0]), "{orders:?}");
}

#[test]
fn smoothing_rejects_two_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = QUARTIC
        .replace("omega = [1.6180339887498949]", "omega = [1.6180339887498949, 1.4142135623730951]")
        .replace("wave = [1]", "wave = [1, 0]");
    let out = floquet(dir.path(), &cfg, &["smooth"]);
    assert_eq!(error_code(&out), "E_CONTRACT");
    let ev = floquet(dir.path(), &cfg, &["evolve"]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
}
