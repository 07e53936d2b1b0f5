use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sipm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sipm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn phs_writes_spectrum_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sipm(
        &[
            "phs",
            "--preset",
            "psau_drs4",
            "--shots",
            "3000",
            "--seed",
            "5",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("o");
    let csv = fs::read_to_string(dir.join("spectrum_gate_70ns.csv")).unwrap();
    assert!(csv.starts_with("bin_center,count\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("spectrum_gate_70ns.json")).unwrap())
            .unwrap();
    assert!(summary["gamma_bar"].as_f64().unwrap() > 0.0);
    let m = manifest(&dir);
    assert_eq!(m["command"], "phs");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 2);
}

#[test]
fn same_seed_same_bytes_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let base = [
        "fastpath",
        "--preset",
        "psau_drs4",
        "--shots",
        "2000",
        "--seed",
        "9",
    ];
    let a = sipm(
        &[&base[..], &["--out", "a", "--threads", "1"]].concat(),
        tmp.path(),
    );
    let b = sipm(
        &[&base[..], &["--out", "b", "--threads", "4"]].concat(),
        tmp.path(),
    );
    assert!(a.status.success() && b.status.success());
    let ca = fs::read(tmp.path().join("a/nrf_curve.csv")).unwrap();
    let cb = fs::read(tmp.path().join("b/nrf_curve.csv")).unwrap();
    assert_eq!(ca, cb);
    let c = sipm(
        &[&base[..5], &["--seed", "10", "--out", "c"]].concat(),
        tmp.path(),
    );
    assert!(c.status.success());
    assert_ne!(ca, fs::read(tmp.path().join("c/nrf_curve.csv")).unwrap());
}

#[test]
fn bad_config_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "[detector1]\neta = 1.5\n").unwrap();
    let out = sipm(
        &["nrf", "--preset", "psau_drs4", "--config", "c.toml"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detector1.eta"));

    let out = sipm(&["phs", "--preset", "no_such_chain"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = sipm(&["phs", "--config", "missing.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dark_spectrum_is_degenerate_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.toml"),
        "[state]\nkind = \"coherent\"\nmean_photons = 0.0\nmodes = 1\n[detector1]\ndark_rate = 0.0\n",
    )
    .unwrap();
    let out = sipm(
        &[
            "phs",
            "--preset",
            "psau_drs4",
            "--config",
            "c.toml",
            "--shots",
            "500",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    // outputs are still written
    assert!(tmp.path().join("o/spectrum_gate_70ns.json").exists());
}

#[test]
fn fit_round_trip_and_failure_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("mean_k,R,sigma_R\n");
    for k in 1..=10 {
        let k = k as f64;
        // classical curve with eps = 0.04 and no dark counts: R = 1 + 2 eps / (1 + eps)
        csv += &format!("{k},{},0.01\n", 1.0 + 0.08 / 1.04);
    }
    fs::write(tmp.path().join("curve.csv"), csv).unwrap();
    fs::write(tmp.path().join("fit.toml"), "free = [\"eps1\"]\n").unwrap();
    let out = sipm(
        &[
            "fit",
            "--curve",
            "curve.csv",
            "--config",
            "fit.toml",
            "--out",
            "f",
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("f/fit_report.json")).unwrap())
            .unwrap();
    assert!((rep["params"]["eps1"].as_f64().unwrap() - 0.04).abs() < 1e-4);

    fs::write(
        tmp.path().join("short.csv"),
        "mean_k,R,sigma_R\n1,1.0,0.01\n",
    )
    .unwrap();
    let out = sipm(&["fit", "--curve", "short.csv", "--out", "g"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn dump_waveforms_record_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sipm(
        &[
            "dump-waveforms",
            "--preset",
            "psau_dt5720",
            "--shots",
            "3",
            "--out",
            "d",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let bytes = fs::read(tmp.path().join("d/waveforms.bin")).unwrap();
    // u64 shot, u32 count, f64 period, then f32 samples; DT5720 records 128 samples
    let record = 8 + 4 + 8 + 4 * 128;
    assert_eq!(bytes.len(), 3 * record);
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let period = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    assert_eq!((count, period), (128, 4.0));
    assert_eq!(
        u64::from_le_bytes(bytes[record..record + 8].try_into().unwrap()),
        1
    );
}

#[test]
fn schema_and_presets_print() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sipm(&["schema"], tmp.path());
    let schema: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(schema["properties"]["detector1"].is_object());
    let out = sipm(&["presets"], tmp.path());
    let names = String::from_utf8(out.stdout).unwrap();
    for p in ["psau_dt5720", "psau_drs4", "slow_drs4"] {
        assert!(names.lines().any(|l| l == p));
    }
    let out = sipm(&["presets", "slow_drs4"], tmp.path());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("slow_shaper"));
}
