use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use msnt_cli::config::{parse_config, ConfigError, Friction, Profile, RunConfig};
use msnt_cli::runner::{run, sweep, RunFailure, RunOptions, SweepParam};

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_run").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn preset_in(name: &str, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::preset(name).unwrap();
    cfg.output.directory = dir.to_path_buf();
    cfg
}

/// Numeric rows of a CSV file, skipping `#` comments and the column header.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let data = lines.map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap_or(f64::NAN)).collect()).collect();
    (header, data)
}

fn column(header: &[String], data: &[Vec<f64>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    data.iter().map(|r| r[j]).collect()
}

fn msnt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_msnt")).args(args).output().unwrap()
}

#[test]
fn minimal_config_takes_documented_defaults() {
    let cfg = parse_config("[mixture]\nmolar_masses = [1.0, 3.0]\n").unwrap();
    let mut expected = RunConfig::defaults();
    expected.mixture.molar_masses = vec![1.0, 3.0];
    assert_eq!(cfg, expected);
    assert_eq!(parse_config("").unwrap(), RunConfig::defaults());
    assert_eq!(cfg.steps(), 100);
}

#[test]
fn preset_fields_are_overridden_individually() {
    let cfg = parse_config("[initial]\nscenario = \"two-species-mixing\"\n[grid]\ncells = 10\n").unwrap();
    let preset = RunConfig::preset("two-species-mixing").unwrap();
    assert_eq!(cfg.grid.cells, 10);
    assert_eq!(cfg.grid.length, preset.grid.length);
    assert_eq!(cfg.mixture, preset.mixture);
    assert_eq!(cfg.initial, preset.initial);
}

#[test]
fn friction_forms() {
    let pairs = parse_config(
        "[initial]\nscenario = \"closed-box-relaxation\"\n[mixture]\nfriction = { b12 = 3.0, b_2_3 = 0.5 }\n",
    )
    .unwrap()
    .mixture_params()
    .unwrap();
    assert_eq!(pairs.friction[(0, 1)], 3.0);
    assert_eq!(pairs.friction[(2, 1)], 0.5);
    assert_eq!(pairs.friction[(0, 2)], 1.0);
    let matrix = parse_config("[mixture]\nfriction = [[0.0, 2.0], [2.0, 0.0]]\n").unwrap();
    assert_eq!(matrix.mixture.friction, Friction::Matrix(vec![vec![0.0, 2.0], vec![2.0, 0.0]]));
    let err = parse_config("[mixture]\nfriction = [[0.0, 2.0, 1.0], [2.0, 0.0, 1.0]]\n").unwrap_err();
    assert!(err.to_string().contains("2x2"), "{err}");
}

#[test]
fn negative_friction_cites_a3() {
    let err = parse_config("[mixture]\nfriction = { b12 = -1.0 }\n").unwrap_err();
    assert!(matches!(err, ConfigError::Validation(_)));
    assert!(err.to_string().contains("A3"), "{err}");
    let err = parse_config("[mixture]\nfriction = -1.0\n").unwrap_err();
    assert!(err.to_string().contains("A3"), "{err}");
}

#[test]
fn vanishing_temperature_cites_a2() {
    let text = "[initial]\ntemperature = { kind = \"step\", left = 0.0, right = 1.0, at = 0.5 }\n";
    let err = parse_config(text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("A2") && msg.contains("inf theta^0 > 0"), "{msg}");

    let text = "[initial]\ndensity = [{ kind = \"constant\", value = 0.0 }, { kind = \"constant\", value = 0.0 }]\n";
    let msg = parse_config(text).unwrap_err().to_string();
    assert!(msg.contains("A2") && msg.contains("rho_*"), "{msg}");
}

#[test]
fn conductivity_violation_cites_a4() {
    let msg = parse_config("[mixture]\nkappa2 = 0.0\n").unwrap_err().to_string();
    assert!(msg.contains("A4"), "{msg}");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = parse_config("[grid]\ncells = 4\n\n[stepper]\ntua = 0.1\n").unwrap_err();
    match err {
        ConfigError::Parse { line, message } => {
            assert_eq!(line, Some(5));
            assert!(message.contains("tua"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let err = parse_config("[grid]\ncells = \"four\"\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: Some(2), .. }), "{err:?}");
    let err = parse_config("[unknown]\nx = 1\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: Some(1), .. }), "{err:?}");
    let err = parse_config("[initial]\nscenario = \"nope\"\n").unwrap_err();
    assert!(err.to_string().contains("unknown scenario"));
}

#[test]
fn profile_and_species_count_checks() {
    let err = parse_config("[mixture]\nmolar_masses = [1.0, 2.0, 3.0]\n").unwrap_err();
    assert!(err.to_string().contains("3 species"), "{err}");
    let err = parse_config(
        "[initial]\ntemperature = { kind = \"gaussian\", base = 1.0, amplitude = 1.0, center = 0.5, width = 0.0 }\n",
    )
    .unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
    let err = parse_config("[initial]\ntemperature = { kind = \"ramp\", value = 1.0 }\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }));
}

#[test]
fn uniform_rest_keeps_entropy_constant() {
    let dir = scratch("uniform_rest");
    let out = msnt(&["--print-defaults", "--scenario", "uniform-rest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout)
        .unwrap()
        .replace("directory = \"msnt-out\"", &format!("directory = {:?}", dir.join("out")));
    fs::write(dir.join("cfg.toml"), text).unwrap();
    let out = msnt(&["run", dir.join("cfg.toml").to_str().unwrap(), "--strict"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let (header, data) = rows(&dir.join("out/diagnostics.csv"));
    assert_eq!(data.len(), 101);
    let h = column(&header, &data, "H");
    assert!(h.iter().all(|v| (v - h[0]).abs() <= 1e-12), "H not constant");
    assert!(!dir.join("out/error.json").exists());
    let (snap_header, snap) = rows(&dir.join("out/snapshot.csv"));
    assert_eq!(snap_header, ["x", "rho_1", "rho_2", "theta"]);
    assert_eq!(snap.len(), 20);
}

#[test]
fn csv_layout_and_config_header() {
    let dir = scratch("layout");
    let mut cfg = preset_in("closed-box-relaxation", &dir);
    cfg.stepper.t_final = 0.5;
    cfg.output.every = 4;
    run(&cfg, &RunOptions::default()).unwrap();
    let text = fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
    let comments: String = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| l.strip_prefix(' ').unwrap_or(l))
        .skip(1)
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(parse_config(&comments).unwrap(), cfg, "header must embed the resolved config");
    let (header, data) = rows(&dir.join("diagnostics.csv"));
    assert_eq!(
        header,
        [
            "time",
            "H",
            "energy",
            "mass_1",
            "mass_2",
            "mass_3",
            "fourier_dissipation",
            "friction_dissipation",
            "max_grad_p",
            "sup_rho_theta2",
            "entropy_margin"
        ]
    );
    let times = column(&header, &data, "time");
    assert_eq!(times, [0.0, 0.2, 0.4, 0.5].map(|t: f64| (t / 0.05).round() * 0.05));
    let line = text.lines().last().unwrap();
    for field in line.split(',') {
        let mantissa = field.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.len(), 18, "17 significant digits in {field}");
    }
}

#[test]
fn robin_cooling_follows_lumped_recursion() {
    let dir = scratch("robin");
    let cfg = preset_in("robin-cooling", &dir);
    run(&cfg, &RunOptions { strict: true, seed: None }).unwrap();
    let (header, data) = rows(&dir.join("diagnostics.csv"));
    let energy = column(&header, &data, "energy");
    let (cw, rho, lambda, tau, theta0) = (1.0, 2.0, 1.0, 0.05, 1.0);
    let gamma = 2.0 * lambda / (cw * rho * cfg.grid.length);
    let mut theta: f64 = 2.0;
    assert_eq!(energy.len(), 101);
    for (k, e) in energy.iter().enumerate() {
        if k > 0 {
            theta = (theta + gamma * tau * theta0) / (1.0 + gamma * tau);
        }
        let got = e / (cw * rho * cfg.grid.length);
        assert!((got - theta).abs() <= 1e-10, "step {k}: {got} vs {theta}");
    }
}

#[test]
fn mixing_run_keeps_entropy_margin() {
    let dir = scratch("mixing_short");
    let mut cfg = preset_in("two-species-mixing", &dir);
    cfg.stepper.t_final = 0.05;
    let summary = run(&cfg, &RunOptions { strict: true, seed: None }).unwrap();
    let tol = cfg.stepper.newton_tol;
    assert!(summary.records.iter().all(|r| r.entropy_margin >= -10.0 * tol));
    let (header, data) = rows(&dir.join("diagnostics.csv"));
    assert!(column(&header, &data, "entropy_margin").iter().all(|m| *m >= -10.0 * tol));
    assert!(column(&header, &data, "fourier_dissipation").iter().all(|d| *d >= 0.0));
    assert!(column(&header, &data, "friction_dissipation").iter().all(|d| *d >= 0.0));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = scratch("det_a");
    let b = scratch("det_b");
    let mut cfg = preset_in("closed-box-relaxation", &a);
    cfg.stepper.t_final = 0.5;
    let opts = RunOptions { strict: false, seed: Some(7) };
    run(&cfg, &opts).unwrap();
    cfg.output.directory = b.clone();
    run(&cfg, &opts).unwrap();
    for file in ["diagnostics.csv", "snapshot.csv"] {
        let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        let strip =
            |v: &[u8]| String::from_utf8_lossy(v).replace(a.to_str().unwrap(), "").replace(b.to_str().unwrap(), "");
        assert_eq!(strip(&x), strip(&y), "{file}");
    }
}

#[test]
fn seeds_perturb_initial_data_reproducibly() {
    let cfg = RunConfig::preset("closed-box-relaxation").unwrap();
    let base = cfg.initial_states(None).unwrap();
    let s1 = cfg.initial_states(Some(1)).unwrap();
    let s1b = cfg.initial_states(Some(1)).unwrap();
    let s2 = cfg.initial_states(Some(2)).unwrap();
    assert_eq!(s1, s1b);
    assert_ne!(s1, s2);
    let amp = cfg.initial.perturbation;
    for (p, q) in base.iter().zip(&s1) {
        assert!((q.theta / p.theta - 1.0).abs() <= amp);
        for (a, b) in p.rho.iter().zip(&q.rho) {
            assert!((b / a - 1.0).abs() <= amp);
        }
    }
}

#[test]
fn step_failure_exits_2_with_json_report() {
    let dir = scratch("step_failed");
    let text = format!(
        "[initial]\nscenario = \"two-species-mixing\"\n[stepper]\ntau = 0.5\nt_final = 1.0\nnewton_max = 1\nmax_halvings = 0\n[output]\ndirectory = {:?}\n",
        dir.join("out")
    );
    fs::write(dir.join("cfg.toml"), text).unwrap();
    let out = msnt(&["run", dir.join("cfg.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/error.json")).unwrap()).unwrap();
    assert_eq!(report["error"], "step_failed");
    assert_eq!(report["exit_code"], 2);
    assert_eq!(report["step"], 1);
    let stderr: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(stderr, report);
    let (_, data) = rows(&dir.join("out/diagnostics.csv"));
    assert_eq!(data.len(), 1, "only the initial row was accepted");
}

#[test]
fn strict_invariant_failure_exits_3() {
    let dir = scratch("strict");
    let text = format!(
        "[initial]\nscenario = \"closed-box-relaxation\"\n[stepper]\nnewton_tol = 1e-3\nt_final = 0.5\n[output]\ndirectory = {:?}\n",
        dir.join("out")
    );
    fs::write(dir.join("cfg.toml"), text).unwrap();
    let path = dir.join("cfg.toml");
    let relaxed = msnt(&["run", path.to_str().unwrap()]);
    assert_eq!(relaxed.status.code(), Some(0), "{}", String::from_utf8_lossy(&relaxed.stderr));
    let strict = msnt(&["run", path.to_str().unwrap(), "--strict"]);
    assert_eq!(strict.status.code(), Some(3), "{}", String::from_utf8_lossy(&strict.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/error.json")).unwrap()).unwrap();
    assert_eq!(report["error"], "invariant");
    assert_eq!(report["exit_code"], 3);
}

#[test]
fn config_errors_exit_1() {
    let dir = scratch("config_error");
    fs::write(dir.join("cfg.toml"), "[mixture]\nfriction = { b12 = -1.0 }\n").unwrap();
    let out = msnt(&["run", dir.join("cfg.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "config");
    assert!(report["message"].as_str().unwrap().contains("A3"));
    let out = msnt(&["run", dir.join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_value_sweep_matches_run() {
    let dir = scratch("sweep_single");
    let mut cfg = preset_in("closed-box-relaxation", &dir.join("run"));
    cfg.stepper.t_final = 0.5;
    run(&cfg, &RunOptions::default()).unwrap();
    cfg.output.directory = dir.join("sweep");
    let rows = sweep(&cfg, SweepParam::Tau, &["0.05".to_string()], &RunOptions::default()).unwrap();
    assert!(rows[0].outcome.is_ok());
    for file in ["diagnostics.csv", "snapshot.csv"] {
        let a = fs::read_to_string(dir.join("run").join(file)).unwrap();
        let b = fs::read_to_string(dir.join("sweep/tau=0.05").join(file)).unwrap();
        let body = |s: &str| s.lines().filter(|l| !l.contains("directory")).collect::<Vec<_>>().join("\n");
        assert_eq!(body(&a), body(&b), "{file}");
    }
}

#[test]
fn tau_sweep_converges_towards_finest() {
    let dir = scratch("sweep_tau");
    let mut cfg = preset_in("two-species-mixing", &dir);
    cfg.stepper.t_final = 0.1;
    let values = ["1e-2", "5e-3", "2.5e-3"].map(String::from);
    let rows = sweep(&cfg, SweepParam::Tau, &values, &RunOptions::default()).unwrap();
    let rel: Vec<f64> = rows.iter().map(|r| r.relative_entropy_vs_reference).collect();
    assert!(rel[0] > rel[1] && rel[1] > rel[2] && rel[2] == 0.0, "{rel:?}");
    let (header, data) = self::rows(&dir.join("summary.csv"));
    assert_eq!(header, ["value", "final_H", "final_rel_entropy_vs_finest", "wall_time", "status"]);
    assert_eq!(data.len(), 3);
    assert_eq!(column(&header, &data, "final_rel_entropy_vs_finest"), rel);
}

#[test]
fn lambda_sweep_separates_energy_behaviour() {
    let dir = scratch("sweep_lambda");
    let mut cfg = preset_in("closed-box-relaxation", &dir);
    cfg.stepper.t_final = 0.5;
    let rows = sweep(&cfg, SweepParam::Lambda, &["0".into(), "1".into()], &RunOptions::default()).unwrap();
    let drift = |i: usize| {
        let r = &rows[i].outcome.as_ref().unwrap().records;
        (r.last().unwrap().energy - r[0].energy).abs() / r[0].energy
    };
    assert!(drift(0) <= 1e-12, "lambda = 0 drift {}", drift(0));
    assert!(drift(1) > 1e-4, "lambda = 1 drift {}", drift(1));
}

#[test]
fn grid_sweep_restricts_finest_run() {
    let dir = scratch("sweep_cells");
    let mut cfg = preset_in("closed-box-relaxation", &dir);
    cfg.stepper.t_final = 0.2;
    let rows =
        sweep(&cfg, SweepParam::Cells, &["10".into(), "20".into(), "30".into(), "40".into()], &RunOptions::default())
            .unwrap();
    let rel: Vec<f64> = rows.iter().map(|r| r.relative_entropy_vs_reference).collect();
    assert!(rel[0] > 0.0 && rel[1] > 0.0 && rel[3] == 0.0, "{rel:?}");
    assert!(rel[2].is_nan(), "30 cells do not nest in 40");
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = scratch("sweep_fail");
    let mut cfg = preset_in("two-species-mixing", &dir);
    cfg.stepper.t_final = 0.5;
    cfg.stepper.newton_max = 1;
    cfg.stepper.max_halvings = 0;
    let rows = sweep(&cfg, SweepParam::Tau, &["0.5".into(), "1e-6".into()], &RunOptions::default()).unwrap();
    assert!(matches!(rows[0].outcome, Err(RunFailure::Step { .. })));
    assert!(dir.join("tau=0.5/error.json").exists());
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.contains("exit_2"));

    let dir = scratch("sweep_fail_cli");
    let text = format!(
        "[initial]\nscenario = \"two-species-mixing\"\n[stepper]\nt_final = 0.5\nnewton_max = 1\nmax_halvings = 0\n[output]\ndirectory = {:?}\n",
        dir.join("out")
    );
    fs::write(dir.join("cfg.toml"), text).unwrap();
    let out = msnt(&["sweep", dir.join("cfg.toml").to_str().unwrap(), "--param", "tau", "--values", "0.5,0.25"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.join("out/summary.csv").exists());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = scratch("threads");
    let text = format!(
        "[initial]\nscenario = \"closed-box-relaxation\"\n[stepper]\nt_final = 0.2\n[output]\ndirectory = {:?}\n",
        dir.join("out")
    );
    fs::write(dir.join("cfg.toml"), text).unwrap();
    let cfg = dir.join("cfg.toml");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_msnt"))
            .env("MSNT_THREADS", threads)
            .args(["sweep", cfg.to_str().unwrap(), "--param", "N", "--values", "10,20,40"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let diag = fs::read_to_string(dir.join("out/N=20/diagnostics.csv")).unwrap();
        outputs.push(diag);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_sweep_parameter_is_rejected() {
    assert!("kappa".parse::<SweepParam>().is_err());
    assert_eq!("N".parse::<SweepParam>().unwrap(), SweepParam::Cells);
    let out = msnt(&["sweep", "x.toml", "--param", "kappa", "--values", "1"]);
    assert!(!out.status.success());
}

#[test]
fn step_profile_samples() {
    let p = Profile::Step { left: 0.8, right: 0.2, at: 0.5, width: 0.05 };
    assert!((p.sample(0.0) - 0.8).abs() < 1e-8);
    assert!((p.sample(1.0) - 0.2).abs() < 1e-8);
}
