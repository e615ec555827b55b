use std::path::{Path, PathBuf};
use std::process::Command;

use flowbot_core::mocap::{synthesize_markers, write_marker_csv, MarkerFrame};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowbot"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_ok(args: &[&str]) -> serde_json::Value {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "flowbot {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn run_err(args: &[&str]) -> serde_json::Value {
    let out = bin().args(args).output().unwrap();
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {line}"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn sweep_table_has_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let summary = run_ok(&["sweep", "--scenario", scenario("sweep.json").to_str().unwrap(), "--out", out]);
    assert_eq!(summary["rows"], 24);
    assert_eq!(summary["failures"], 0);
    let (h, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 24);
    let (fluid, dir_c, p, k) = (col(&h, "fluid"), col(&h, "direction"), col(&h, "pressure_pa"), col(&h, "curvature_1_m"));
    let value = |r: &Vec<String>, c: usize| r[c].parse::<f64>().unwrap();
    for f in ["air", "water"] {
        let fwd: Vec<&Vec<String>> = rows.iter().filter(|r| r[fluid] == f && r[dir_c] == "forward").collect();
        let rev: Vec<&Vec<String>> = rows.iter().filter(|r| r[fluid] == f && r[dir_c] == "reverse").collect();
        assert_eq!(fwd.len(), 6);
        for (a, b) in fwd.iter().zip(&rev) {
            assert_eq!(a[p], b[p]);
            let (ka, kb) = (value(a, k), value(b, k));
            assert!((ka.abs() - kb.abs()).abs() <= 1e-9 * ka.abs(), "{ka} vs {kb}");
        }
        for w in fwd.windows(2) {
            assert!(value(w[1], k) > value(w[0], k));
        }
        for w in rev.windows(2) {
            assert!(value(w[1], k).abs() > value(w[0], k).abs());
        }
    }
    // Same chamber ΔP gives the same curvature in both fluids.
    let dp = col(&h, "delta_p_chambers_pa");
    for a in rows.iter().filter(|r| r[fluid] == "air") {
        let w = rows
            .iter()
            .find(|r| r[fluid] == "water" && r[dir_c] == a[dir_c] && r[p] == a[p])
            .unwrap();
        let (ka, kw) = (value(a, k), value(w, k));
        let (da, dw) = (value(a, dp), value(w, dp));
        assert!(((ka / da) - (kw / dw)).abs() <= 1e-9 * (ka / da).abs());
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        for (cmd, sc) in [
            ("sweep", "sweep.json"),
            ("enumerate", "gripper.json"),
            ("demo", "quadruped.json"),
            ("simulate", "network.json"),
        ] {
            run_ok(&[cmd, "--scenario", scenario(sc).to_str().unwrap(), "--out", out, "--seed", "7"]);
        }
    }
    for name in ["sweep.csv", "enumeration.csv", "demo.csv", "trace.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn noisy_sweeps_depend_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("noisy.json");
    std::fs::write(
        &sc,
        r#"{"schema":"flowbot/1","subject":{"kind":"actuator"},
            "sweep":{"fluids":["water"],"directions":"forward","repeats":2,"marker_noise_mm":0.01,"p_min_bar":1.25,"p_max_bar":1.5}}"#,
    )
    .unwrap();
    let sc = sc.to_str().unwrap();
    let read = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        run_ok(&["sweep", "--scenario", sc, "--out", out.to_str().unwrap(), "--seed", seed]);
        std::fs::read(out.join("sweep.csv")).unwrap()
    };
    assert_eq!(read("3", "a"), read("3", "b"));
    assert_ne!(read("3", "c"), read("4", "d"));
}

#[test]
fn enumeration_csv_lists_every_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let summary = run_ok(&["enumerate", "--scenario", scenario("gripper.json").to_str().unwrap(), "--out", out]);
    let (h, rows) = read_csv(&dir.path().join("enumeration.csv"));
    // 3 supply ports × 2 directions × 5² passive choices (blocked or four open vents).
    assert_eq!(rows.len(), 150);
    let pat = col(&h, "pattern");
    for want in ["(+,+)", "(-,-)", "(+,-)", "(-,+)"] {
        assert!(rows.iter().any(|r| r[pat] == want), "{want}");
    }
    assert!(summary["patterns"].as_array().unwrap().len() >= 5);
}

#[test]
fn gripper_demo_runs_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["demo", "--scenario", scenario("gripper.json").to_str().unwrap(), "--out", out]);
    let (h, rows) = read_csv(&dir.path().join("demo.csv"));
    let phase = col(&h, "phase");
    let mut seen: Vec<&str> = rows.iter().map(|r| r[phase].as_str()).collect();
    seen.dedup();
    assert_eq!(seen, ["a", "b", "c", "d", "e", "f", "g", "h", "i"]);
}

#[test]
fn swim_gait_alternates_with_the_schedule_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["demo", "--scenario", scenario("quadruped.json").to_str().unwrap(), "--out", out]);
    let (h, rows) = read_csv(&dir.path().join("demo.csv"));
    let (t, front, rear) = (col(&h, "t_s"), col(&h, "kappa:front.A"), col(&h, "kappa:rear.A"));
    let period = 2.0;
    let sign_at = |time: f64, c: usize| {
        let r = rows
            .iter()
            .find(|r| (r[t].parse::<f64>().unwrap() - time).abs() < 1e-9)
            .unwrap();
        r[c].parse::<f64>().unwrap().signum()
    };
    let mut prev: Option<f64> = None;
    for half in 0..4 {
        let time = (half as f64 + 1.0) * period / 2.0 - 0.01;
        let (f, r) = (sign_at(time, front), sign_at(time, rear));
        assert_eq!(f, -r, "pairs move in antiphase");
        if let Some(p) = prev {
            assert_eq!(f, -p, "sign alternates every half period");
        }
        prev = Some(f);
    }
}

#[test]
fn empty_schedule_gives_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("empty.json");
    std::fs::write(
        &sc,
        r#"{"schema":"flowbot/1","subject":{"kind":"gripper"},"demo":{"kind":"schedule","t_end":1.0}}"#,
    )
    .unwrap();
    run_ok(&["demo", "--scenario", sc.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let (_, rows) = read_csv(&dir.path().join("demo.csv"));
    assert_eq!(rows.len(), 1);
}

fn write_track(path: &Path, kappa_of_t: impl Fn(f64) -> f64, frames: usize, rate: f64) {
    let frames: Vec<MarkerFrame> = (0..frames)
        .map(|k| {
            let t = k as f64 / rate;
            let pts = synthesize_markers(kappa_of_t(t), 0.05, 4).unwrap();
            MarkerFrame {
                t,
                points: [pts[0], pts[1], pts[2], pts[3]],
            }
        })
        .collect();
    write_marker_csv(&frames, std::fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn mocap_recovers_a_synthetic_track() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("track.csv");
    let (k_inf, tau) = (30.0, 0.2);
    write_track(&input, |t| k_inf * (1.0 - (-t / tau).exp()), 960, 240.0);
    let summary = run_ok(&["mocap", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let (h, rows) = read_csv(&dir.path().join("mocap_frames.csv"));
    assert_eq!(rows.len(), 960);
    let (tc, raw) = (col(&h, "t_s"), col(&h, "kappa_raw_1_m"));
    for r in &rows {
        let t: f64 = r[tc].parse().unwrap();
        let k: f64 = r[raw].parse().unwrap();
        assert!((k - k_inf * (1.0 - (-t / tau).exp())).abs() < 1e-6, "t={t}");
    }
    let final_k = summary["response"]["final_curvature_1_m"].as_f64().unwrap();
    assert!((final_k - k_inf).abs() < 0.01 * k_inf, "{final_k}");
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("mocap_summary.json")).unwrap()).unwrap();
    assert_eq!(written["response"], summary["response"]);
}

#[test]
fn mocap_names_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("track.csv");
    write_track(&input, |_| 10.0, 10, 240.0);
    let text = std::fs::read_to_string(&input).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let last = lines[6];
    let cut = &last[..last.len() / 2];
    let truncated = format!("{}\n{}\n", lines[..6].join("\n"), cut);
    std::fs::write(&input, truncated).unwrap();
    let err = run_err(&["mocap", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 7"), "{err}");
}

#[test]
fn bad_scenarios_fail_with_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.json");
    std::fs::write(&sc, r#"{"schema":"flowbot/1","subject":{"kind":"gripper"},"extra":1}"#).unwrap();
    let err = run_err(&["solve", "--scenario", sc.to_str().unwrap()]);
    assert!(err["error"]["message"].as_str().unwrap().contains("extra"));
    let err = run_err(&["solve"]);
    assert!(err["error"]["message"].as_str().unwrap().contains("--scenario"));
    std::fs::write(
        &sc,
        r#"{"schema":"flowbot/1","subject":{"kind":"gripper","ports":{
            "left":{"role":"blocked"},"middle":{"role":"blocked"},"right":{"role":"blocked"}}}}"#,
    )
    .unwrap();
    let err = run_err(&["solve", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(err["error"]["kind"], "configuration");
    let err = run_err(&["sweep", "--scenario", scenario("gripper.json").to_str().unwrap()]);
    assert!(err["error"]["message"].as_str().unwrap().contains("actuator"));
}

#[test]
fn network_outputs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sc = scenario("network.json");
    let summary = run_ok(&["solve", "--scenario", sc.to_str().unwrap(), "--out", out]);
    assert!(summary["kcl_residual_m3_s"].as_f64().unwrap() < 1e-9);
    run_ok(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out]);
    for name in ["nodes.csv", "elements.csv", "trace.csv"] {
        let (h, rows) = read_csv(&dir.path().join(name));
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.len() == h.len()));
    }
    let (h, rows) = read_csv(&dir.path().join("trace.csv"));
    assert_eq!(rows.len(), 101);
    // Closing the valve at 0.25 s reduces its flow.
    let q = col(&h, "q:valve");
    let at = |i: usize| rows[i][q].parse::<f64>().unwrap();
    assert!(at(100) < at(49));
}
