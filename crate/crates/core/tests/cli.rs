use std::path::Path;
use std::process::{Command, Output};

fn blockreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_line(o: &Output) -> serde_json::Value {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    serde_json::from_str(err.trim()).unwrap()
}

#[test]
fn train_with_defaults_writes_four_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout(&blockreg(d, &["synth", "--output", "c.csv"]));
    let line = stdout(&blockreg(d, &["train", "--input", "c.csv", "--output", "m.json"]));
    assert_eq!(line.lines().count(), 1);
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "br");
    assert_eq!(model["params"], 4);
    assert_eq!(model["theta"].as_array().unwrap().len(), 3);
    assert_eq!((model["m"].as_u64(), model["w"].as_u64()), (Some(24), Some(3)));
}

#[test]
fn sweep_default_grid_has_seven_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout(&blockreg(d, &["synth", "--output", "c.csv"]));
    stdout(&blockreg(d, &["sweep", "--input", "c.csv", "--output", "s.csv"]));
    let text = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[1].starts_with("24,"));
    assert!(lines[7].starts_with("168,"));
}

#[test]
fn forecast_csv_covers_every_station_and_hour() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = r#"{"n_bs": 5, "n_hours": 100, "seed": 3, "daily_profile_amplitude": 2.0,
        "day_intensity_std": 0.1, "noise_std": 0.1, "burst_probability": 0.0}"#;
    std::fs::write(d.join("synth.json"), synth).unwrap();
    stdout(&blockreg(d, &["synth", "--input", "synth.json", "--output", "c.csv"]));
    let split = ["--train-hours", "80", "--test-hours", "20"];
    stdout(&blockreg(
        d,
        &[&["train", "--input", "c.csv", "--output", "m.json"][..], &split].concat(),
    ));
    stdout(&blockreg(
        d,
        &[
            &[
                "forecast",
                "--input",
                "c.csv",
                "--model",
                "m.json",
                "--mode",
                "recursive",
                "--output",
                "f.csv",
            ][..],
            &split,
        ]
        .concat(),
    ));
    let text = std::fs::read_to_string(d.join("f.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bs_id,hour,actual,forecast,mode"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * 20);
    assert_eq!(rows[0][1], "80");
    assert!(rows.iter().all(|r| r[4] == "recursive"));
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn config_file_supplies_values_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    stdout(&blockreg(d, &["synth", "--output", "c.csv"]));
    std::fs::write(d.join("run.json"), r#"{"kind": "lr", "w": 24, "input": "c.csv"}"#).unwrap();
    stdout(&blockreg(
        d,
        &["train", "--config", "run.json", "--w", "12", "--output", "m.json"],
    ));
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "lr");
    assert_eq!(model["params"], 13);
}

#[test]
fn clean_drops_faulty_stations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = "bs_id,hour,volume\na,0,1\na,1,2\nb,0,NA\nb,1,3\nc,0,4\nc,1,-1\n";
    std::fs::write(d.join("raw.csv"), csv).unwrap();
    let line = stdout(&blockreg(d, &["clean", "--input", "raw.csv", "--output", "ok.csv"]));
    assert!(line.contains("kept 1") && line.contains("dropped 2"), "{line}");
    assert_eq!(
        std::fs::read_to_string(d.join("ok.csv")).unwrap(),
        "bs_id,hour,volume\na,0,1\na,1,2\n"
    );
}

#[test]
fn failures_report_json_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let bad_flag = blockreg(d, &["eval", "--kind", "arima"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert_eq!(error_line(&bad_flag)["error"], "config");

    std::fs::write(d.join("broken.csv"), "bs_id,hour,volume\na,0,zero\n").unwrap();
    let bad_data = blockreg(d, &["eval", "--input", "broken.csv"]);
    assert_eq!(bad_data.status.code(), Some(3));
    assert_eq!(error_line(&bad_data)["error"], "data");

    // a purely periodic station leaves the seasonal ARMA nothing to fit
    let mut csv = String::from("bs_id,hour,volume\n");
    for h in 0..60 {
        csv.push_str(&format!("a,{h},{}\n", 5 + h % 24));
    }
    std::fs::write(d.join("flat.csv"), csv).unwrap();
    let periodic = blockreg(
        d,
        &[
            "eval",
            "--input",
            "flat.csv",
            "--kind",
            "sa",
            "--train-hours",
            "50",
            "--test-hours",
            "10",
        ],
    );
    assert_eq!(periodic.status.code(), Some(3));
    assert_eq!(
        error_line(&periodic)["message"],
        "no station could be scored (1 excluded)"
    );

    // two training samples for four coefficients
    let underdetermined = blockreg(
        d,
        &[
            "eval",
            "--input",
            "flat.csv",
            "--train-hours",
            "29",
            "--test-hours",
            "10",
        ],
    );
    assert_eq!(underdetermined.status.code(), Some(4));
    assert_eq!(error_line(&underdetermined)["error"], "numerical");

    let missing_output = blockreg(d, &["synth"]);
    assert_eq!(missing_output.status.code(), Some(2));
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = stdout(&blockreg(dir.path(), &["eval", "--help"]));
    for flag in [
        "--input",
        "--output",
        "--model",
        "--kind",
        "--m ",
        "--w ",
        "--ar",
        "--ma",
        "--train-hours",
        "--test-hours",
        "--mode",
        "--seed",
        "--threads",
        "--config",
        "--grid",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    for default in [
        "[default: br]",
        "[default: 24]",
        "[default: 3 for br, 72 for lr]",
        "[default: 2]",
        "[default: 1]",
        "[default: 240]",
        "[default: 96]",
        "[default: one_step]",
    ] {
        assert!(help.contains(default), "missing {default}");
    }
}
