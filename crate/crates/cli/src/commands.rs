//! Sub-command implementations. Each returns the files to write and a JSON
//! summary; nothing here touches the output directory.

use anyhow::{bail, Context, Result};
use flowbot_core::actuator::{fill_time_constant, response_curve, solve_rig, Direction, Drive};
use flowbot_core::assembly::{
    build_assembly_network, enumerate_configurations, gripper_presets, role_schedule, solve_assembly,
    swim_gait_schedule, AssemblySpec, PortRole, RoleSchedule, Sign,
};
use flowbot_core::circuit::{simulate_transient, solve_steady, Network, SteadyState};
use flowbot_core::mocap::{analyze_track, read_marker_csv, synthesize_markers, MarkerFrame, MARKERS_PER_FRAME};
use flowbot_core::teleop::neutral_roles;
use flowbot_core::fluids::Fluid;
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::scenario::{DemoConfig, Scenario, Subject, SweepConfig};

/// Files produced by a command, keyed by file name, plus a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
}

impl Output {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().context("flushing csv")
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn network_tables(net: &Network, state: &SteadyState) -> Result<Vec<(String, Vec<u8>)>> {
    let nodes: Vec<Vec<String>> = state
        .node_pressures
        .iter()
        .map(|(id, p)| vec![id.to_string(), num(*p)])
        .collect();
    let elements = net
        .elements
        .iter()
        .map(|e| {
            Ok(vec![
                e.id.to_string(),
                e.from.to_string(),
                e.to.to_string(),
                num(state.flow(e.id.as_str())?),
                num(state.pressure_drop(net, e.id.as_str())?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        ("nodes.csv".into(), csv_bytes(&strings(&["node", "pressure_pa"]), &nodes)?),
        (
            "elements.csv".into(),
            csv_bytes(
                &strings(&["element", "from", "to", "flow_m3_s", "pressure_drop_pa"]),
                &elements,
            )?,
        ),
    ])
}

pub fn solve(scenario: &Scenario) -> Result<Output> {
    let settings = scenario.solver.settings()?;
    match &scenario.subject {
        Subject::Network(_) => {
            let net = scenario.network()?;
            let state = solve_steady(&net, &settings)?;
            let audit = flowbot_core::circuit::power_audit(&state, &net)?;
            Ok(Output {
                files: network_tables(&net, &state)?,
                summary: json!({
                    "command": "solve",
                    "subject": "network",
                    "iterations": state.iterations,
                    "kcl_residual_m3_s": state.kcl_imbalance(&net),
                    "audit": audit,
                }),
            })
        }
        Subject::Actuator(a) => {
            let fluid = scenario.fluid(&a.fluid)?;
            let drive = a.drive.drive();
            let sol = solve_rig(&a.actuator, &fluid, drive, a.direction, &settings)?;
            let tau = fill_time_constant(&a.actuator, &fluid, sol.actuator.delta_p_chambers, sol.loop_flow)?;
            let header = strings(&[
                "fluid",
                "direction",
                "delta_p_chambers_pa",
                "curvature_1_m",
                "loop_flow_m3_s",
                "tau_fill_s",
            ]);
            let row = vec![
                fluid.name.clone(),
                direction_name(a.direction).into(),
                num(sol.actuator.delta_p_chambers),
                num(sol.actuator.curvature),
                num(sol.loop_flow),
                num(tau),
            ];
            Ok(Output {
                files: vec![("actuator.csv".into(), csv_bytes(&header, &[row])?)],
                summary: json!({
                    "command": "solve",
                    "subject": "actuator",
                    "curvature_1_m": sol.actuator.curvature,
                    "delta_p_chambers_pa": sol.actuator.delta_p_chambers,
                    "loop_flow_m3_s": sol.loop_flow,
                    "tau_fill_s": tau,
                }),
            })
        }
        Subject::Gripper(_) | Subject::Quadruped(_) => {
            let spec = scenario.assembly()?;
            let sol = solve_assembly(&spec, &settings)?;
            let rows: Vec<Vec<String>> = sol
                .limbs
                .iter()
                .map(|(n, s)| {
                    vec![
                        n.clone(),
                        num(s.delta_p_chambers),
                        num(s.curvature),
                        num(s.flow_through),
                    ]
                })
                .collect();
            let header = strings(&["limb", "delta_p_chambers_pa", "curvature_1_m", "tip_flow_m3_s"]);
            let limbs: IndexMap<&str, f64> = sol.limbs.iter().map(|(n, s)| (n.as_str(), s.curvature)).collect();
            Ok(Output {
                files: vec![("limbs.csv".into(), csv_bytes(&header, &rows)?)],
                summary: json!({
                    "command": "solve",
                    "subject": scenario.subject.kind(),
                    "curvature_1_m": limbs,
                    "audit": sol.audit,
                }),
            })
        }
        Subject::Mocap(_) => bail!("`solve` does not apply to a mocap scenario; use `mocap`"),
    }
}

pub fn simulate(scenario: &Scenario) -> Result<Output> {
    let settings = scenario.solver.settings()?;
    let sim = scenario
        .simulation
        .context("`simulate` needs a `simulation` block with t_end and dt")?;
    let transient = scenario.transient.settings();
    match &scenario.subject {
        Subject::Network(_) => {
            let net = scenario.network()?;
            let schedule = scenario.control_schedule()?;
            let trace = simulate_transient(&net, &schedule, sim.t_end, sim.dt, &settings, &transient)?;
            let mut header = vec!["t_s".to_string()];
            header.extend(net.nodes.iter().map(|n| format!("p:{}", n.id)));
            header.extend(net.elements.iter().map(|e| format!("q:{}", e.id)));
            let rows = trace
                .snapshots
                .iter()
                .map(|s| {
                    let mut r = vec![num(s.t)];
                    for n in &net.nodes {
                        r.push(num(s.state.pressure(n.id.as_str())?));
                    }
                    for e in &net.elements {
                        r.push(num(s.state.flow(e.id.as_str())?));
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            let worst = trace
                .snapshots
                .iter()
                .map(|s| s.audit.imbalance())
                .fold(0.0, f64::max);
            Ok(Output {
                files: vec![("trace.csv".into(), csv_bytes(&header, &rows)?)],
                summary: json!({
                    "command": "simulate",
                    "subject": "network",
                    "snapshots": trace.snapshots.len(),
                    "worst_power_imbalance": worst,
                }),
            })
        }
        Subject::Gripper(_) | Subject::Quadruped(_) => {
            let spec = scenario.assembly()?;
            let schedule = scenario.role_schedule()?;
            run_roles(scenario, &spec, &schedule, &[], sim.t_end, sim.dt, "simulate", "trace.csv")
        }
        other => bail!("`simulate` does not apply to a {} scenario", other.kind()),
    }
}

/// Transient run of an assembly under a role schedule; one CSV row per step.
#[allow(clippy::too_many_arguments)]
fn run_roles(
    scenario: &Scenario,
    spec: &AssemblySpec,
    schedule: &RoleSchedule,
    labels: &[String],
    t_end: f64,
    dt: f64,
    command: &str,
    file: &str,
) -> Result<Output> {
    let settings = scenario.solver.settings()?;
    let net = build_assembly_network(spec)?;
    let mut full: RoleSchedule = vec![(0.0, neutral_roles(spec)?)];
    full.extend(schedule.iter().cloned());
    let controls = role_schedule(&net, &full)?;
    let trace = simulate_transient(
        &net.network,
        &controls,
        t_end,
        dt,
        &settings,
        &scenario.transient.settings(),
    )?;
    let limbs: Vec<String> = net.limbs.iter().map(|l| l.name.clone()).collect();
    let mut header = vec!["t_s".to_string(), "phase".to_string()];
    header.extend(limbs.iter().map(|l| format!("kappa:{l}")));
    let slack = 1e-9 * dt;
    let mut rows = Vec::with_capacity(trace.snapshots.len());
    let mut pattern_changes = 0usize;
    let mut last_pattern: Option<String> = None;
    for s in &trace.snapshots {
        // Index of the last schedule entry in force at this time.
        let phase = schedule.iter().rposition(|(t, _)| *t <= s.t + slack);
        let label = match phase {
            Some(i) => labels.get(i).cloned().unwrap_or_else(|| i.to_string()),
            None => "neutral".into(),
        };
        let states = net.limb_states(&s.state)?;
        let mut r = vec![num(s.t), label];
        let mut pattern = String::new();
        for (_, st) in &states {
            r.push(num(st.curvature));
            pattern.push(Sign::of(st.curvature, flowbot_core::assembly::KAPPA_ZERO).symbol());
        }
        if last_pattern.as_deref() != Some(pattern.as_str()) {
            pattern_changes += 1;
            last_pattern = Some(pattern);
        }
        rows.push(r);
    }
    Ok(Output {
        files: vec![(file.to_string(), csv_bytes(&header, &rows)?)],
        summary: json!({
            "command": command,
            "subject": match spec { AssemblySpec::Quadruped(_) => "quadruped", _ => "gripper" },
            "snapshots": trace.snapshots.len(),
            "sign_pattern_changes": pattern_changes.saturating_sub(1),
        }),
    })
}

pub fn demo(scenario: &Scenario) -> Result<Output> {
    let spec = scenario.assembly()?;
    let demo = scenario.demo.clone().unwrap_or(match spec {
        AssemblySpec::Quadruped(_) => DemoConfig::SwimGait {
            period: 2.0,
            cycles: 2,
            dt: 0.01,
        },
        _ => DemoConfig::GripperPresets { hold: 1.0, dt: 0.01 },
    });
    match demo {
        DemoConfig::GripperPresets { hold, dt } => {
            let AssemblySpec::Gripper(_) = spec else {
                bail!("gripper presets need a gripper scenario");
            };
            if !(hold > 0.0) {
                bail!("preset hold time must be positive");
            }
            let presets = gripper_presets();
            let labels: Vec<String> = presets.iter().map(|p| p.label.clone()).collect();
            let schedule: RoleSchedule = presets
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let roles: IndexMap<String, PortRole> = [
                        ("P_left".to_string(), p.ports.left),
                        ("P_middle".to_string(), p.ports.middle),
                        ("P_right".to_string(), p.ports.right),
                    ]
                    .into_iter()
                    .collect();
                    (k as f64 * hold, roles)
                })
                .collect();
            run_roles(scenario, &spec, &schedule, &labels, presets.len() as f64 * hold, dt, "demo", "demo.csv")
        }
        DemoConfig::SwimGait { period, cycles, dt } => {
            let AssemblySpec::Quadruped(_) = spec else {
                bail!("the swim gait needs a quadruped scenario");
            };
            let schedule = swim_gait_schedule(period, cycles);
            let labels: Vec<String> = (0..schedule.len())
                .map(|k| if k % 2 == 0 { "stroke".to_string() } else { "recovery".to_string() })
                .collect();
            run_roles(scenario, &spec, &schedule, &labels, cycles as f64 * period, dt, "demo", "demo.csv")
        }
        DemoConfig::Schedule { t_end, dt } => {
            let schedule = scenario.role_schedule()?;
            let t_end = if schedule.is_empty() { 0.0 } else { t_end };
            run_roles(scenario, &spec, &schedule, &[], t_end, dt, "demo", "demo.csv")
        }
    }
}

pub fn enumerate(scenario: &Scenario) -> Result<Output> {
    let settings = scenario.solver.settings()?;
    let AssemblySpec::Gripper(g) = scenario.assembly()? else {
        bail!("`enumerate` needs a gripper scenario");
    };
    let cfg = scenario.enumeration.clone().unwrap_or_default();
    let e = enumerate_configurations(&g, &cfg.grid, &settings, cfg.kappa_zero)?;
    let header = strings(&[
        "index", "left", "middle", "right", "kappa_a_1_m", "kappa_b_1_m", "pattern", "error",
    ]);
    let rows: Vec<Vec<String>> = e
        .results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                i.to_string(),
                r.ports.left.to_string(),
                r.ports.middle.to_string(),
                r.ports.right.to_string(),
            ];
            match &r.outcome {
                Ok(o) => row.extend([num(o.curvature[0]), num(o.curvature[1]), o.pattern.to_string(), String::new()]),
                Err(msg) => row.extend([String::new(), String::new(), String::new(), msg.clone()]),
            }
            row
        })
        .collect();
    let patterns: Vec<Value> = e
        .patterns
        .iter()
        .map(|(p, i)| json!({"pattern": p.to_string(), "first_index": i, "ports": e.results[*i].ports.label()}))
        .collect();
    let failures = e.results.iter().filter(|r| r.outcome.is_err()).count();
    Ok(Output {
        files: vec![("enumeration.csv".into(), csv_bytes(&header, &rows)?)],
        summary: json!({
            "command": "enumerate",
            "configurations": e.results.len(),
            "failures": failures,
            "patterns": patterns,
        }),
    })
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Reverse => "reverse",
    }
}

/// Marker track of a curvature trace (1/m), with optional Gaussian noise in mm.
pub fn synthetic_track(
    curvature: &[f64],
    sample_rate: f64,
    arc_length: f64,
    noise_mm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MarkerFrame>> {
    let noise = Normal::new(0.0, noise_mm.max(0.0)).context("marker noise")?;
    curvature
        .iter()
        .enumerate()
        .map(|(k, &kappa)| {
            let pts = synthesize_markers(kappa, arc_length, MARKERS_PER_FRAME)?;
            let mut points = [(0.0, 0.0); MARKERS_PER_FRAME];
            for (dst, (x, y)) in points.iter_mut().zip(pts) {
                *dst = if noise_mm > 0.0 {
                    (x + noise.sample(rng), y + noise.sample(rng))
                } else {
                    (x, y)
                };
            }
            Ok(MarkerFrame {
                t: k as f64 / sample_rate,
                points,
            })
        })
        .collect()
}

struct SweepCell {
    fluid: String,
    direction: Direction,
    pressure: f64,
    repeat: usize,
    result: std::result::Result<[f64; 5], String>,
}

fn sweep_cell(
    scenario: &Scenario,
    cfg: &SweepConfig,
    fluid: &Fluid,
    direction: Direction,
    pressure: f64,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 5]> {
    let Subject::Actuator(a) = &scenario.subject else {
        unreachable!("checked by the caller")
    };
    let settings = scenario.solver.settings()?;
    let model = &a.actuator;
    let sol = solve_rig(model, fluid, Drive::Pressure { pressure }, direction, &settings)?;
    let kappa = sol.actuator.curvature;
    let tau = fill_time_constant(model, fluid, sol.actuator.delta_p_chambers, sol.loop_flow)?;
    let curve = response_curve(model, fluid, sol.loop_flow, kappa, cfg.sample_rate, cfg.duration)?;
    let frames = synthetic_track(&curve, cfg.sample_rate, model.arc_length, cfg.marker_noise_mm, rng)?;
    let track = analyze_track(&frames, flowbot_core::mocap::DEFAULT_SMOOTHING_WINDOW, &Default::default(), &Default::default())?;
    let response = track.response.map_err(anyhow::Error::msg)?;
    Ok([sol.actuator.delta_p_chambers, kappa, sol.loop_flow, tau, response.response_time])
}

pub fn sweep(scenario: &Scenario, seed: u64) -> Result<Output> {
    let Subject::Actuator(_) = &scenario.subject else {
        bail!("`sweep` needs an actuator scenario");
    };
    let cfg = scenario.sweep.clone().unwrap_or_default();
    let pressures = cfg.pressures()?;
    if cfg.repeats == 0 {
        bail!("sweep repeats must be at least 1");
    }
    let fluids = cfg
        .fluids
        .iter()
        .map(|f| scenario.fluid(f))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for fluid in &fluids {
        for &direction in &cfg.directions.list() {
            for &pressure in &pressures {
                for repeat in 0..cfg.repeats {
                    // One stream per cell, so cells do not depend on each other.
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(cells.len() as u64);
                    let result = sweep_cell(scenario, &cfg, fluid, direction, pressure, &mut rng)
                        .map_err(|e| format!("{e:#}"));
                    cells.push(SweepCell {
                        fluid: fluid.name.clone(),
                        direction,
                        pressure,
                        repeat,
                        result,
                    });
                }
            }
        }
    }
    let header = strings(&[
        "fluid",
        "direction",
        "pressure_pa",
        "repeat",
        "delta_p_chambers_pa",
        "curvature_1_m",
        "loop_flow_m3_s",
        "tau_fill_s",
        "response_time_s",
        "error",
    ]);
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut r = vec![
                c.fluid.clone(),
                direction_name(c.direction).into(),
                num(c.pressure),
                c.repeat.to_string(),
            ];
            match &c.result {
                Ok(v) => {
                    r.extend(v.iter().map(|x| num(*x)));
                    r.push(String::new());
                }
                Err(msg) => {
                    r.extend(std::iter::repeat_n(String::new(), 5));
                    r.push(msg.clone());
                }
            }
            r
        })
        .collect();
    let failures = cells.iter().filter(|c| c.result.is_err()).count();
    Ok(Output {
        files: vec![("sweep.csv".into(), csv_bytes(&header, &rows)?)],
        summary: json!({
            "command": "sweep",
            "rows": rows.len(),
            "failures": failures,
            "seed": seed,
        }),
    })
}

pub fn mocap(scenario: Option<&Scenario>, input: Option<&std::path::Path>) -> Result<Output> {
    let cfg = match scenario.map(|s| &s.subject) {
        Some(Subject::Mocap(m)) => Some(m.clone()),
        Some(other) => bail!("`mocap` needs a mocap scenario, got {}", other.kind()),
        None => None,
    };
    let path = input
        .map(|p| p.to_path_buf())
        .or_else(|| cfg.as_ref().map(|c| c.input.clone()))
        .context("`mocap` needs an input CSV (positional argument or scenario)")?;
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let frames = read_marker_csv(std::io::BufReader::new(file))?;
    let (window, fit, response) = match &cfg {
        Some(c) => (c.smoothing_window, c.fit, c.response),
        None => (flowbot_core::mocap::DEFAULT_SMOOTHING_WINDOW, Default::default(), Default::default()),
    };
    let track = analyze_track(&frames, window, &fit, &response)?;
    // Emitted in SI: curvature in 1/m.
    let rows: Vec<Vec<String>> = track
        .fits
        .iter()
        .zip(track.raw.samples.iter().zip(&track.smoothed.samples))
        .map(|(fit, (raw, sm))| {
            vec![
                num(raw.0),
                num(raw.1 * 1e3),
                num(sm.1 * 1e3),
                num(fit.rms_residual * 1e-3),
                fit.degenerate.to_string(),
            ]
        })
        .collect();
    let header = strings(&["t_s", "kappa_raw_1_m", "kappa_smoothed_1_m", "rms_residual_m", "degenerate"]);
    let response_json = match &track.response {
        Ok(r) => json!({
            "start_time_s": r.start_time,
            "response_time_s": r.response_time,
            "final_curvature_1_m": r.final_curvature * 1e3,
        }),
        Err(msg) => json!({ "error": msg }),
    };
    let summary = json!({
        "command": "mocap",
        "frames": frames.len(),
        "sample_rate_hz": track.raw.sample_rate,
        "smoothing_window": window,
        "response": response_json,
    });
    let summary_bytes = serde_json::to_vec_pretty(&summary)?;
    Ok(Output {
        files: vec![
            ("mocap_frames.csv".into(), csv_bytes(&header, &rows)?),
            ("mocap_summary.json".into(), summary_bytes),
        ],
        summary,
    })
}
