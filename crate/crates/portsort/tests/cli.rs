//! End-to-end checks of the command-line surface: exit codes, file formats,
//! and the machine-readable error records.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_portsort")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn write_tiny_panel(dir: &Path) -> std::path::PathBuf {
    // The six-observation instance: breakpoint 0.3, cell means 1.5 and 4.5.
    let path = dir.join("tiny.csv");
    std::fs::write(
        &path,
        "date,id,ret,mom\n\
         1,a,1.0,0.1\n\
         1,b,2.0,0.2\n\
         1,c,3.0,0.3\n\
         1,d,4.0,0.6\n\
         1,e,5.0,0.7\n\
         1,f,6.0,0.9\n",
    )
    .unwrap();
    path
}

fn write_two_period_panel(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("panel.csv");
    let mut s = String::from("date,id,ret,mom,cap\n");
    let mut state = 88u64;
    let mut unit = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for t in 1..=8 {
        for i in 0..50 {
            let z = unit();
            let r = z * z + 0.3 * (unit() - 0.5);
            s.push_str(&format!("{t},s{i},{r:.8},{z:.8},{:.6}\n", 0.5 + unit()));
        }
    }
    std::fs::write(&path, s).unwrap();
    path
}

#[test]
fn estimate_tiny_instance_contains_cell_means() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tiny_panel(dir.path());
    let out = dir.path().join("est.jsonl");
    let output = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--j",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"estimate\":1.5"));
    assert!(text.contains("\"estimate\":4.5"));
    let meta: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(meta["record"], "run_meta");
    assert_eq!(meta["j_sequence"][0], 2);
}

#[test]
fn estimate_csv_format_is_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tiny_panel(dir.path());
    let out = dir.path().join("est.csv");
    let output = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--j",
        "2",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "z_0,estimate,missing_periods,n_min,n_mean,n_max"
    );
    let first = lines.next().unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    let est: f64 = fields[1].parse().unwrap();
    assert_eq!(est, 1.5);
}

#[test]
fn star_rule_estimate_reports_selected_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out = dir.path().join("est_star.jsonl");
    let output = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--j-rule",
        "star",
        "--zh",
        "0.95",
        "--zl",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let meta: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(meta["j_rule"], "star");
    let seq = meta["j_sequence"].as_array().unwrap();
    assert_eq!(seq.len(), 8);
    assert!(seq.iter().all(|j| j.as_u64().unwrap() >= 1));
}

#[test]
fn missing_column_exits_2_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tiny_panel(dir.path());
    let output = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "momentum",
        "--j",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).lines().last().unwrap())
            .unwrap();
    assert_eq!(err["record"], "error");
    assert_eq!(err["code"], 2);
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("column not found"));
}

#[test]
fn nonpositive_log_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("neg.csv");
    std::fs::write(
        &path,
        "date,id,ret,mom\n1,a,0.1,-1.0\n1,b,0.2,2.0\n1,c,0.1,3.0\n",
    )
    .unwrap();
    let output = run(&[
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--transform",
        "log:mom",
        "--j",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn conflicting_j_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_tiny_panel(dir.path());
    let output = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--j",
        "2",
        "--j-rule",
        "star",
        "--zh",
        "0.9",
        "--zl",
        "0.1",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn test_command_emits_round_tripping_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out = dir.path().join("test.jsonl");
    let output = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--j",
        "5",
        "--zh",
        "0.9",
        "--zl",
        "0.1",
        "--variance",
        "fm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let record_line = text
        .lines()
        .find(|l| l.contains("\"record\":\"test_result\""))
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(record_line).unwrap();
    assert_eq!(v["variance"], "fm");
    assert_eq!(v["t_used"], 8);
    assert_eq!(v["j_sequence"].as_array().unwrap().len(), 8);
    let estimate = v["estimate"].as_f64().unwrap();
    let se = v["se"].as_f64().unwrap();
    let t = v["t_stat"].as_f64().unwrap();
    assert!((t - estimate / se).abs() < 1e-12);
    // reserializing the parsed record reproduces the original line
    let reparsed: portsort::io::Record = serde_json::from_str(record_line).unwrap();
    assert_eq!(serde_json::to_string(&reparsed).unwrap(), record_line);
}

#[test]
fn quantile_levels_resolve_on_zscored_scale() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out = dir.path().join("testq.jsonl");
    let output = run(&[
        "test",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--transform",
        "zscore:mom",
        "--j",
        "4",
        "--zh-q",
        "0.975",
        "--zl-q",
        "0.025",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let zh = v["z_h"][0].as_f64().unwrap();
    assert!((zh - 1.959963984540054).abs() < 1e-9);
    let zl = v["z_l"][0].as_f64().unwrap();
    assert!((zl + 1.959963984540054).abs() < 1e-9);
}

#[test]
fn select_j_emits_both_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out = dir.path().join("select.jsonl");
    let output = run(&[
        "select-j",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--zh",
        "0.95",
        "--zl",
        "0.05",
        "--grid",
        "2,4,8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let tunings: Vec<serde_json::Value> = text
        .lines()
        .filter(|l| l.contains("\"record\":\"tuning\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(tunings.len(), 2);
    assert_eq!(tunings[0]["objective"], "inference");
    assert_eq!(tunings[1]["objective"], "point_estimation");
    let seq_points: Vec<serde_json::Value> = text
        .lines()
        .filter(|l| l.contains("\"record\":\"j_sequence_point\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(seq_points.len(), 8);
    for p in &seq_points {
        assert!(p["j_star"].as_u64().is_some());
        assert!(p["j_factor"].as_u64().is_some());
    }
}

#[test]
fn singular_design_in_all_periods_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("singular.csv");
    // control column constant within every cell of every period
    let mut s = String::from("date,id,ret,mom,ctl\n");
    for t in 1..=3 {
        for i in 0..10 {
            s.push_str(&format!("{t},s{i},{}.0,{}.5,1.0\n", i % 4, i));
        }
    }
    std::fs::write(&path, s).unwrap();
    let output = run(&[
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--control-cols",
        "ctl",
        "--j",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(4));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).lines().last().unwrap())
            .unwrap();
    assert_eq!(err["code"], 4);
    assert!(err["message"].as_str().unwrap().contains("singular"));
}

#[test]
fn estimate_with_controls_emits_beta_series() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out = dir.path().join("est_ctl.jsonl");
    let output = run(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "date",
        "--asset-col",
        "id",
        "--return-col",
        "ret",
        "--char-cols",
        "mom",
        "--control-cols",
        "cap",
        "--j",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let betas: Vec<serde_json::Value> = text
        .lines()
        .filter(|l| l.contains("\"record\":\"beta_period\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(betas.len(), 8);
    for b in &betas {
        assert_eq!(b["beta"].as_array().unwrap().len(), 1);
    }
}

#[test]
fn simulate_rejects_unknown_preset_and_needs_spec() {
    let output = run(&["simulate", "--preset", "cubic"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["simulate"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn simulate_config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.json");
    std::fs::write(
        &config_path,
        r#"{
            "dgp": {
                "mu": {"family": "constant", "level": 0.0},
                "d": 1,
                "noise": {"rule": "homoskedastic", "sigma": 1.0},
                "z_law": {"law": "uniform"},
                "n_schedule": {"schedule": "constant", "n": 120},
                "t_periods": 20,
                "seed": 5
            },
            "reps": 100,
            "j_rule": {"rule": "fixed", "j": 6},
            "z_h": [0.9],
            "z_l": [0.1],
            "variance": "fm",
            "mode": "coverage"
        }"#,
    )
    .unwrap();
    let out = dir.path().join("mc.jsonl");
    let output = run(&[
        "simulate",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let report_line = text
        .lines()
        .find(|l| l.contains("\"record\":\"mc_report\""))
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(report_line).unwrap();
    assert_eq!(v["replications"], 100);
    let coverage = v["coverage_95"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&coverage));
}

#[test]
fn figure1_preset_emits_six_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig1.jsonl");
    let output = run(&[
        "simulate",
        "--preset",
        "figure1",
        "--seed",
        "42",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let traces: Vec<serde_json::Value> = text
        .lines()
        .filter(|l| l.contains("\"record\":\"figure1_trace\""))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(traces.len(), 6);
    let mut combos: Vec<(u64, u64)> = traces
        .iter()
        .map(|t| (t["j"].as_u64().unwrap(), t["t_periods"].as_u64().unwrap()))
        .collect();
    combos.sort_unstable();
    assert_eq!(combos, vec![(4, 1), (4, 2), (4, 50), (10, 1), (10, 2), (10, 50)]);
}

#[test]
fn weighted_estimate_uses_weight_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_two_period_panel(dir.path());
    let out_eq = dir.path().join("eq.jsonl");
    let out_w = dir.path().join("w.jsonl");
    for (weight_args, out) in [
        (vec![], &out_eq),
        (vec!["--weight-col", "cap"], &out_w),
    ] {
        let mut args = vec![
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--time-col",
            "date",
            "--asset-col",
            "id",
            "--return-col",
            "ret",
            "--char-cols",
            "mom",
            "--j",
            "4",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend(weight_args);
        let output = Command::new(bin()).args(&args).output().unwrap();
        assert!(output.status.success(), "{output:?}");
    }
    let eq = std::fs::read_to_string(&out_eq).unwrap();
    let w = std::fs::read_to_string(&out_w).unwrap();
    assert_ne!(eq, w, "weighted output should differ from equal-weighted");
    assert!(w.contains("\"weighting\":\"by_weight_column\""));
}
