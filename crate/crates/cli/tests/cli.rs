use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ionchain::chain_model::{RadialModel, Species, TrapConfig};
use ionchain::constants::{mhz, BA138_MASS_U};
use ionchain::reorder_mc::ReorderCurve;
use ionchain::thermometry::ShelvingDataset;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ionchain"))
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn chain_config(chain: &[&str], axial: f64, extra: &str) -> String {
    let names: Vec<String> = chain.iter().map(|s| format!("\"{s}\"")).collect();
    format!(
        r#"{{
  "chain": [{}],
  "trap": {{"reference": "Ba138", "axial_MHz": {axial}, "radial_MHz": [1.1, 1.2]}}{extra}
}}"#,
        names.join(", ")
    )
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn report_value(csv: &str, key: &str) -> f64 {
    rows(csv)
        .iter()
        .find(|r| r[0] == key)
        .unwrap_or_else(|| panic!("no `{key}` in report"))[1]
        .parse()
        .unwrap()
}

#[test]
fn three_ion_equilibrium_matches_oracle() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Ba138"; 3], 0.3, ""));
    let out = stdout(&run(&cfg, &["equilibrium"]));
    assert!(out.starts_with("index,species,z_um\n"));
    let ba = Species::new("Ba138", BA138_MASS_U).unwrap();
    let trap = TrapConfig::new(ba, mhz(0.3), [mhz(1.1), mhz(1.2)], RadialModel::PseudopotentialScaling).unwrap();
    let ell_um = trap.length_scale() * 1e6;
    let z: Vec<f64> = rows(&out).iter().map(|r| r[2].parse().unwrap()).collect();
    let expected = [-1.077_217_345_015_942, 0.0, 1.077_217_345_015_942];
    for (z, e) in z.iter().zip(expected) {
        assert!((z / ell_um - e).abs() < 1e-9, "{z}");
    }
}

#[test]
fn single_ion_sits_at_the_centre() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Yb174"], 0.3, ""));
    assert_eq!(stdout(&run(&cfg, &["equilibrium"])), "index,species,z_um\n0,Yb174,0\n");
}

#[test]
fn unknown_species_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Ba138", "Ca40"], 0.3, ""));
    let o = run(&cfg, &["equilibrium"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Ca40"), "{}", stderr(&o));
}

#[test]
fn custom_species_resolve() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"species": {"Ca40": 39.962591}, "chain": ["Ca40", "Ca40"],
        "trap": {"reference": "Ca40", "axial_MHz": 1.0, "radial_MHz": [3.0, 3.0]}}"#;
    let cfg = write(&dir, "c.json", text);
    assert_eq!(rows(&stdout(&run(&cfg, &["equilibrium"]))).len(), 2);
}

#[test]
fn parse_errors_report_field_and_line() {
    let dir = TempDir::new().unwrap();
    let text = "{\n  \"chain\": [\"Ba138\"],\n  \"trap\": {\"reference\": \"Ba138\", \"axial_MHz\": \"fast\", \"radial_MHz\": [1, 1]}\n}";
    let cfg = write(&dir, "c.json", text);
    let o = run(&cfg, &["equilibrium"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("trap.axial_MHz") && msg.contains("line 3"), "{msg}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = bin().arg("equilibrium").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mixed_chain_has_nine_modes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Ba138", "Ba138", "Yb174"], 0.33, ""));
    let out = stdout(&run(&cfg, &["modes"]));
    let header = out.lines().next().unwrap();
    assert_eq!(
        header,
        "direction,mode,frequency_MHz,label,b_0,b_1,b_2,participation_0,participation_1,participation_2"
    );
    let rows = rows(&out);
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r[0] == "axial").count(), 3);
    // The two lowest radial modes are carried by the Yb ion.
    let mut radial: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] != "axial").collect();
    radial.sort_by(|a, b| a[2].parse::<f64>().unwrap().total_cmp(&b[2].parse().unwrap()));
    for (k, r) in radial.iter().enumerate() {
        let yb: f64 = r[9].parse().unwrap();
        assert_eq!(yb > 0.5, k < 2, "{r:?}");
    }
}

#[test]
fn lowest_axial_mode_is_com_at_trap_frequency() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Ba138"; 4], 0.3, ""));
    let out = stdout(&run(&cfg, &["modes"]));
    let first = &rows(&out)[0];
    assert_eq!(first[0], "axial");
    assert_eq!(first[3], "COM-like");
    assert!((first[2].parse::<f64>().unwrap() - 0.3).abs() < 1e-9);
}

#[test]
fn zigzag_instability_exits_with_physics_code() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"chain": ["Ba138", "Ba138", "Ba138", "Ba138", "Ba138", "Ba138"],
        "trap": {"reference": "Ba138", "axial_MHz": 1.0, "radial_MHz": [1.2, 1.3]}}"#;
    let cfg = write(&dir, "c.json", text);
    let o = run(&cfg, &["modes"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("unstable"));
}

fn rabi_config(noise: bool) -> String {
    chain_config(
        &["Ba138"],
        0.5,
        &format!(
            r#",
  "seed": 3,
  "rabi": {{"omega0_kHz": 20.0, "etas": [0.0146, 0.0146], "nbar": [64.5, 64.5], "contrast": 0.9, "offset": 0.03,
            "times_us": {{"start": 0, "stop": 250, "points": 40}}, "sigma": 0.05, "noise": {noise},
            "equal_eta": true, "mode_frequency_MHz": 1.1, "cooling_linewidth_MHz": 15.1}}"#
        ),
    )
}

#[test]
fn rabi_simulate_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &rabi_config(false));
    let data = dir.path().join("flop.csv");
    stdout(&run(&cfg, &["rabi", "simulate", "--out", data.to_str().unwrap()]));
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("time_us,p_shelved,sigma\n"));
    assert_eq!(
        ShelvingDataset::read_csv(text.as_bytes()).unwrap().to_csv_string(),
        text
    );

    let report = stdout(&run(&cfg, &["rabi", "fit", "--data", data.to_str().unwrap()]));
    assert!((report_value(&report, "omega0_kHz") / 20.0 - 1.0).abs() < 1e-6);
    assert!((report_value(&report, "sum_nbar") / 129.0 - 1.0).abs() < 1e-5);
    assert!((report_value(&report, "contrast") - 0.9).abs() < 1e-6);
    assert!((report_value(&report, "offset") - 0.03).abs() < 1e-6);
    let t = report_value(&report, "temperature_mK");
    assert!((3.3..=3.5).contains(&t), "{t}");
    let limit = report_value(&report, "doppler_limit_mK");
    assert!((0.36..=0.365).contains(&limit), "{limit}");
    assert!((report_value(&report, "temperature_over_doppler") - t / limit).abs() < 1e-9);
}

#[test]
fn malformed_row_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &rabi_config(false));
    let mut text = String::from("time_us,p_shelved,sigma\n");
    for i in 0..12 {
        if i == 4 {
            text.push_str("25,oops,0.05\n");
        } else {
            text.push_str(&format!("{},0.5,0.05\n", i * 10));
        }
    }
    let data = write(&dir, "bad.csv", &text);
    let o = run(&cfg, &["rabi", "fit", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    // Rows are counted as file lines, header included.
    assert!(stderr(&o).contains("row 6"), "{}", stderr(&o));
}

#[test]
fn noisy_simulation_depends_on_seed_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &rabi_config(true));
    let a = stdout(&run(&cfg, &["rabi", "simulate"]));
    let b = stdout(&run(&cfg, &["rabi", "simulate"]));
    let c = stdout(&run(&cfg, &["rabi", "simulate", "--seed", "4"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn probe_config(grid: &str) -> String {
    chain_config(
        &["Ba138", "Ba138", "Yb174"],
        0.33,
        &format!(
            r#",
  "seed": 9,
  "probe": {{"ion_index": 0, "omega0_kHz": 20, "duration_us": 100, "wavelength_nm": 1762,
             "projection": {{"radial_x": 0.7, "radial_y": 0.7}}, "nbar": {{"radial_x": 20, "radial_y": 20}},
             "detuning_MHz": {grid}, "samples": 300}}"#
        ),
    )
}

#[test]
fn spectrum_is_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &probe_config(r#"{"start": -1.2, "stop": 1.2, "points": 97}"#),
    );
    let a = stdout(&run(&cfg, &["spectrum"]));
    let b = stdout(&run(&cfg, &["spectrum"]));
    assert_eq!(a, b);
    assert!(a.starts_with("detuning_MHz,p_shelved,sigma\n"));
    assert_eq!(ShelvingDataset::read_csv(a.as_bytes()).unwrap().to_csv_string(), a);
}

#[test]
fn off_resonant_grid_gives_flat_baseline() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &probe_config(r#"{"start": 0.3, "stop": 0.5, "points": 21}"#),
    );
    let out = stdout(&run(&cfg, &["spectrum"]));
    for r in rows(&out) {
        assert!(r[1].parse::<f64>().unwrap() < 0.01, "{r:?}");
    }
}

fn mc_config(trials: usize) -> String {
    chain_config(
        &["Ba138", "Ba138", "Ba138", "Yb174"],
        0.3,
        &format!(
            r#",
  "seed": 11,
  "mc": {{"temperatures_K": [0.0, 1.0], "trials": {trials}, "duration_periods": 5}}"#
        ),
    )
}

#[test]
fn reorder_curve_writes_csv_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &mc_config(50));
    let out = dir.path().join("curve.csv");
    stdout(&run(&cfg, &["reorder", "curve", "--out", out.to_str().unwrap()]));
    let text = std::fs::read_to_string(&out).unwrap();
    let curve = ReorderCurve::read_csv(text.as_bytes()).unwrap();
    assert_eq!(curve.to_csv_string(), text);
    assert_eq!(curve.p_stable[0], 1.0);
    assert_eq!(curve.trials, vec![50, 50]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("curve.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["trials"], 50);
}

#[test]
fn reorder_flags_override_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &mc_config(50));
    let a = stdout(&run(
        &cfg,
        &["reorder", "curve", "--trials", "60", "--duration-periods", "3"],
    ));
    assert!(rows(&a).iter().all(|r| r[4] == "60"));
    let o = run(&cfg, &["reorder", "curve", "--trials", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reorder_seed_changes_samples() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &mc_config(50));
    let a = stdout(&run(&cfg, &["reorder", "curve"]));
    let b = stdout(&run(&cfg, &["reorder", "curve"]));
    let c = stdout(&run(&cfg, &["reorder", "curve", "--seed", "12"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn heating_fit_from_precomputed_curve() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &mc_config(50));
    // Logistic stability curve on a 0..3 K grid.
    let mut curve = String::from("temperature_K,p_stable,ci_low,ci_high,trials,ejected\n");
    for i in 0..=30 {
        let t = 0.1 * i as f64;
        let p = 1.0 / (1.0 + ((t - 1.0) / 0.2f64).exp());
        curve.push_str(&format!(
            "{t},{p},{},{},200,0\n",
            (p - 0.05).max(0.0),
            (p + 0.05).min(1.0)
        ));
    }
    let curve_path = write(&dir, "curve.csv", &curve);
    let parsed = ReorderCurve::read_csv(curve.as_bytes()).unwrap();
    let times: Vec<f64> = (0..=30).map(|i| 0.1 * i as f64).collect();
    let data = ionchain::reorder_mc::synthesize_dark_time(&parsed, 0.3, 0.5, &times, 0, 0).unwrap();
    let data_path = write(&dir, "dark.csv", &data.to_csv_string());
    let report = stdout(&run(
        &cfg,
        &[
            "reorder",
            "fit",
            "--data",
            data_path.to_str().unwrap(),
            "--curve",
            curve_path.to_str().unwrap(),
        ],
    ));
    assert!((report_value(&report, "t0_mK") / 300.0 - 1.0).abs() < 1e-4, "{report}");
    assert!(
        (report_value(&report, "rate_K_per_s") / 0.5 - 1.0).abs() < 1e-4,
        "{report}"
    );
}

fn budget_config(body: &str) -> String {
    chain_config(&["Ba138"], 0.5, &format!(",\n  \"budget\": {body}"))
}

#[test]
fn rate_report_and_comparison() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &budget_config(
            r#"{"p_exc": 0.2, "branching": 0.75, "quantum_efficiency": 0.2, "solid_angle_fraction": 0.02,
                "gate_fraction": 0.8, "transmission": 0.3, "repetition_rate_Hz": 17000,
                "compare": {"solid_angle_fraction": 0.4}}"#,
        ),
    );
    let report = stdout(&run(&cfg, &["rate"]));
    assert!((report_value(&report, "success_probability") - 1.44e-4).abs() < 1e-15);
    assert!((report_value(&report, "ion_photon_rate_Hz") - 2.448).abs() < 1e-9);
    assert!((report_value(&report, "remote_factor") - 400.0).abs() < 1e-9);
}

#[test]
fn all_ones_budget_runs_at_repetition_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &budget_config(
            r#"{"p_exc": 1, "branching": 1, "quantum_efficiency": 1, "solid_angle_fraction": 1,
                "gate_fraction": 1, "transmission": 1, "repetition_rate_Hz": 17000}"#,
        ),
    );
    let report = stdout(&run(&cfg, &["rate"]));
    assert_eq!(report_value(&report, "ion_photon_rate_Hz"), 17000.0);
    assert_eq!(report_value(&report, "remote_rate_Hz"), 17000.0);
}

#[test]
fn out_of_range_factor_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &budget_config(
            r#"{"p_exc": 1.5, "branching": 1, "quantum_efficiency": 1, "solid_angle_fraction": 1,
                "gate_fraction": 1, "transmission": 1, "repetition_rate_Hz": 17000}"#,
        ),
    );
    let o = run(&cfg, &["rate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p_exc"));
}

#[test]
fn missing_block_is_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", &chain_config(&["Ba138"], 0.5, ""));
    let o = run(&cfg, &["rate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budget"));
}
