use std::path::Path;
use std::process::{Command, Output};

use nvflow::experiments::{Dataset, Manifest};
use nvflow::qfi::{bloch_vector, qfi_bloch};
use nvflow::tomography::{read_count_records, single_qubit_reconstruction, PhotonCounts};

fn nvflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvflow")).args(args).arg("--out").arg(out).output().expect("spawn nvflow")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SHORT_GRID: &str = "[grid]\nt_start = 0.0\nt_end = 100.0\ndt = 2.0\n";

#[test]
fn simulate_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvflow(&["simulate"], dir.path());
    ok(&o);
    let csv = read(dir.path(), "simulate.csv");
    assert!(csv.starts_with("t_ns,qfi\n"), "{}", &csv[..40]);
    let ds = Dataset::from_csv(&csv).unwrap();
    assert_eq!(ds.len(), 301);
    let m = Manifest::from_json(&read(dir.path(), "simulate.manifest.json")).unwrap();
    assert_eq!(m.command, "simulate");
    let printed = String::from_utf8_lossy(&o.stdout);
    assert!(printed.contains("simulate.csv") && printed.contains("simulate.manifest.json"));
}

#[test]
fn values_carry_nine_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    ok(&nvflow(&["simulate"], dir.path()));
    let csv = read(dir.path(), "simulate.csv");
    let row = csv.lines().nth(5).unwrap();
    for field in row.split(',') {
        let mantissa = field.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.replace('.', "").len(), 9, "{field}");
    }
}

#[test]
fn invalid_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[system]\nphi2 = 0.5\nphi1 = 7.0\n").unwrap();
    let o = nvflow(&["flows", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("phi1"), "{err}");
    assert!(!dir.path().join("out").join("flows.csv").exists());
}

#[test]
fn malformed_toml_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\ndt = 2.0\nt_end = = 5\n").unwrap();
    let o = nvflow(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unknown_figure_lists_ids() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvflow(&["reproduce", "5z"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for id in ["3a", "3k", "4a", "4c"] {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn noisy_flows_replay_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, SHORT_GRID).unwrap();
    let first = dir.path().join("first");
    ok(&nvflow(&["flows", "--noise", "--seed", "11", "--config", cfg.to_str().unwrap()], &first));
    let manifest = first.join("flows.manifest.json");
    let second = dir.path().join("second");
    ok(&nvflow(&["flows", "--config", manifest.to_str().unwrap()], &second));
    assert_eq!(read(&first, "flows.csv"), read(&second, "flows.csv"));

    let third = dir.path().join("third");
    ok(&nvflow(&["flows", "--noise", "--seed", "12", "--config", cfg.to_str().unwrap()], &third));
    assert_ne!(read(&first, "flows.csv"), read(&third, "flows.csv"));
}

#[test]
fn reproduce_replays_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&nvflow(&["reproduce", "3e", "--noise", "--seed", "3"], &first));
    let manifest = first.join("fig3e.manifest.json");
    let second = dir.path().join("second");
    ok(&nvflow(&["reproduce", "--config", manifest.to_str().unwrap()], &second));
    assert_eq!(read(&first, "fig3e.csv"), read(&second, "fig3e.csv"));
}

#[test]
fn manifest_from_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&nvflow(&["simulate"], dir.path()));
    let manifest = dir.path().join("simulate.manifest.json");
    let o = nvflow(&["measure", "--config", manifest.to_str().unwrap()], &dir.path().join("x"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulate"));
}

#[test]
fn tomo_counts_reconstruct_the_reported_qfi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, format!("[system]\nphi1 = 1.5707963267948966\n{SHORT_GRID}")).unwrap();
    ok(&nvflow(&["tomo", "--seed", "5", "--config", cfg.to_str().unwrap()], dir.path()));
    let records = read_count_records(&read(dir.path(), "tomo_counts.csv")).unwrap();
    let ds = Dataset::from_csv(&read(dir.path(), "tomo.csv")).unwrap();
    let qfi = ds.column("qfi").unwrap();
    assert_eq!(records.len(), 5 * ds.len());
    for (k, chunk) in records.chunks(5).enumerate() {
        assert!(chunk.iter().all(|r| r.t_ns == chunk[0].t_ns && r.seed == 5));
        let counts = PhotonCounts::from_records(chunk).unwrap();
        let rho = single_qubit_reconstruction(&counts).unwrap();
        let q = qfi_bloch(&bloch_vector(&rho).unwrap());
        assert!((q - qfi[k]).abs() < 1e-7, "t = {}: {q} vs {}", chunk[0].t_ns, qfi[k]);
    }
}

#[test]
fn sweep_with_short_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, "[sweep]\nparameter = \"phi2\"\nvalues = [0.0, 0.5, 1.0]\nhorizon_ns = 300.0\n").unwrap();
    ok(&nvflow(&["sweep", "--config", cfg.to_str().unwrap()], dir.path()));
    let csv = read(dir.path(), "sweep.csv");
    assert!(csv.starts_with("phi2,measure_long_time\n"), "{csv}");
    let m = Dataset::from_csv(&csv).unwrap();
    let m = m.column("measure_long_time").unwrap();
    assert_eq!(m.len(), 3);
    assert!(m.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn sweep_rejects_noise() {
    let dir = tempfile::tempdir().unwrap();
    let o = nvflow(&["sweep", "--noise"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn noisy_reproduce_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&nvflow(&["reproduce", "3c", "--noise", "--seed", "7"], &a));
    ok(&nvflow(&["reproduce", "3c", "--noise", "--seed", "7"], &b));
    assert_eq!(std::fs::read(a.join("fig3c.csv")).unwrap(), std::fs::read(b.join("fig3c.csv")).unwrap());
    assert_eq!(read(&a, "fig3c.manifest.json"), read(&b, "fig3c.manifest.json"));
    let leftovers: Vec<_> = std::fs::read_dir(&a).unwrap().filter_map(|e| e.ok()).collect();
    assert_eq!(leftovers.len(), 2, "temporary files left behind");
}
