//! Scenario files: versioned JSON, pressures in bar, everything else SI.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowbot_core::actuator::{ActuatorModel, Direction, Drive};
use flowbot_core::assembly::{
    AssemblySpec, GripperAssembly, GripperPorts, PortRole, QuadrupedAssembly, VentSpec,
};
use flowbot_core::circuit::{
    ControlEvent, ControlSchedule, Element, ElementControl, Law, Network, Node, SolverSettings,
    TransientSettings,
};
use flowbot_core::fluids::Fluid;
use flowbot_core::mocap::{FitOptions, ResponseOptions, DEFAULT_SMOOTHING_WINDOW};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "flowbot/1";
pub const PA_PER_BAR: f64 = 1.0e5;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub transient: TransientConfig,
    /// Named fluids in addition to the built-in `water` and `air`.
    #[serde(default)]
    pub fluids: IndexMap<String, Fluid>,
    pub subject: Subject,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub demo: Option<DemoConfig>,
    #[serde(default)]
    pub enumeration: Option<EnumerationConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Subject {
    Network(NetworkConfig),
    Actuator(ActuatorConfig),
    Gripper(GripperConfig),
    Quadruped(QuadrupedConfig),
    Mocap(MocapConfig),
}

impl Subject {
    pub fn kind(&self) -> &'static str {
        match self {
            Subject::Network(_) => "network",
            Subject::Actuator(_) => "actuator",
            Subject::Gripper(_) => "gripper",
            Subject::Quadruped(_) => "quadruped",
            Subject::Mocap(_) => "mocap",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_kcl: Option<f64>,
    pub tol_energy: Option<f64>,
    pub max_iter: Option<usize>,
    pub epsilon_open: Option<f64>,
    pub q_smooth: Option<f64>,
    pub p_ambient_bar: Option<f64>,
}

impl SolverConfig {
    pub fn settings(&self) -> Result<SolverSettings> {
        let d = SolverSettings::default();
        let s = SolverSettings {
            tol_kcl: self.tol_kcl.unwrap_or(d.tol_kcl),
            tol_energy: self.tol_energy.unwrap_or(d.tol_energy),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            epsilon_open: self.epsilon_open.unwrap_or(d.epsilon_open),
            q_smooth: self.q_smooth.unwrap_or(d.q_smooth),
            p_ambient: self.p_ambient_bar.map_or(d.p_ambient, |b| b * PA_PER_BAR),
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientConfig {
    pub inertance: bool,
    pub initial_chamber_pressures_bar: IndexMap<String, f64>,
}

impl Default for TransientConfig {
    fn default() -> Self {
        TransientConfig {
            inertance: TransientSettings::default().inertance,
            initial_chamber_pressures_bar: IndexMap::new(),
        }
    }
}

impl TransientConfig {
    pub fn settings(&self) -> TransientSettings {
        TransientSettings {
            inertance: self.inertance,
            initial_chamber_pressures: self
                .initial_chamber_pressures_bar
                .iter()
                .map(|(k, v)| (k.as_str().into(), v * PA_PER_BAR))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub fluid: String,
    pub nodes: Vec<NodeConfig>,
    pub elements: Vec<ElementConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    /// Present for reservoirs, absent for interior nodes.
    #[serde(default)]
    pub reservoir_bar: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ElementConfig {
    pub id: String,
    pub from: String,
    pub to: String,
    pub law: LawConfig,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

/// Element laws as written in scenarios; mirrors the core laws with the
/// pressure setpoint in bar.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Channel {
        length: f64,
        hydraulic_diameter: f64,
    },
    DirectionalChannel {
        length: f64,
        hydraulic_diameter: f64,
        asymmetry: f64,
    },
    Resistor {
        resistance: f64,
    },
    Constriction {
        reference_area: f64,
        #[serde(default = "one")]
        opening: f64,
        #[serde(default = "default_cd")]
        discharge_coefficient: f64,
    },
    TeslaValve {
        base_resistance: f64,
        diodicity: f64,
    },
    FlowSource {
        q_set: f64,
    },
    PressureSource {
        p_set_bar: f64,
    },
    ComplianceChamber {
        rest_volume: f64,
        compliance: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_cd() -> f64 {
    0.62
}

impl LawConfig {
    pub fn law(self) -> Law {
        match self {
            LawConfig::Channel {
                length,
                hydraulic_diameter,
            } => Law::Channel {
                length,
                hydraulic_diameter,
            },
            LawConfig::DirectionalChannel {
                length,
                hydraulic_diameter,
                asymmetry,
            } => Law::DirectionalChannel {
                length,
                hydraulic_diameter,
                asymmetry,
            },
            LawConfig::Resistor { resistance } => Law::Resistor { resistance },
            LawConfig::Constriction {
                reference_area,
                opening,
                discharge_coefficient,
            } => Law::Constriction {
                reference_area,
                opening,
                discharge_coefficient,
            },
            LawConfig::TeslaValve {
                base_resistance,
                diodicity,
            } => Law::TeslaValve {
                base_resistance,
                diodicity,
            },
            LawConfig::FlowSource { q_set } => Law::FlowSource { q_set },
            LawConfig::PressureSource { p_set_bar } => Law::PressureSource {
                p_set: p_set_bar * PA_PER_BAR,
            },
            LawConfig::ComplianceChamber {
                rest_volume,
                compliance,
            } => Law::ComplianceChamber {
                rest_volume,
                compliance,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriveConfig {
    Pressure { pressure_bar: f64 },
    /// m³/s
    Flow { flow: f64 },
}

impl DriveConfig {
    pub fn drive(self) -> Drive {
        match self {
            DriveConfig::Pressure { pressure_bar } => Drive::Pressure {
                pressure: pressure_bar * PA_PER_BAR,
            },
            DriveConfig::Flow { flow } => Drive::Flow { flow },
        }
    }
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig::Pressure { pressure_bar: 2.0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorConfig {
    pub fluid: String,
    pub actuator: ActuatorModel,
    pub drive: DriveConfig,
    pub direction: Direction,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig {
            fluid: "water".into(),
            actuator: ActuatorModel::default(),
            drive: DriveConfig::default(),
            direction: Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperConfig {
    pub fluid: String,
    pub actuator_a: ActuatorModel,
    pub actuator_b: ActuatorModel,
    pub source: DriveConfig,
    pub vent: VentSpec,
    pub ports: GripperPorts,
}

impl Default for GripperConfig {
    fn default() -> Self {
        let g = GripperAssembly::default();
        GripperConfig {
            fluid: "water".into(),
            actuator_a: g.actuator_a,
            actuator_b: g.actuator_b,
            source: DriveConfig::default(),
            vent: g.vent,
            ports: g.ports,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrupedConfig {
    pub fluid: String,
    pub actuator: ActuatorModel,
    pub source: DriveConfig,
    pub vent: VentSpec,
    pub front: GripperPorts,
    pub rear: GripperPorts,
}

impl Default for QuadrupedConfig {
    fn default() -> Self {
        let g = GripperAssembly::default();
        QuadrupedConfig {
            fluid: "water".into(),
            actuator: ActuatorModel::default(),
            source: DriveConfig::default(),
            vent: g.vent,
            front: g.ports,
            rear: g.ports,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MocapConfig {
    /// Marker CSV, relative to the scenario file.
    pub input: PathBuf,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub response: ResponseOptions,
}

fn default_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// s
    pub t_end: f64,
    /// s
    pub dt: f64,
}

/// A timed change: element controls for networks, port roles for assemblies.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub time: f64,
    #[serde(default)]
    pub controls: Vec<ControlConfig>,
    #[serde(default)]
    pub roles: IndexMap<String, PortRole>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub element: String,
    #[serde(flatten)]
    pub set: ControlValue,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "set", content = "value", rename_all = "snake_case")]
pub enum ControlValue {
    Opening(f64),
    PressureBar(f64),
    Flow(f64),
    Enabled(bool),
}

impl ControlValue {
    fn control(self) -> ElementControl {
        match self {
            ControlValue::Opening(o) => ElementControl::Opening(o),
            ControlValue::PressureBar(p) => ElementControl::Setpoint(p * PA_PER_BAR),
            ControlValue::Flow(q) => ElementControl::Setpoint(q),
            ControlValue::Enabled(b) => ElementControl::Enabled(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Directions {
    Both,
    Forward,
    Reverse,
}

impl Directions {
    pub fn list(self) -> Vec<Direction> {
        match self {
            Directions::Both => vec![Direction::Forward, Direction::Reverse],
            Directions::Forward => vec![Direction::Forward],
            Directions::Reverse => vec![Direction::Reverse],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub p_min_bar: f64,
    pub p_max_bar: f64,
    pub step_bar: f64,
    pub directions: Directions,
    pub fluids: Vec<String>,
    pub repeats: usize,
    /// Frame rate of the synthetic track used for response times, Hz.
    pub sample_rate: f64,
    /// Length of each synthetic track, s.
    pub duration: f64,
    pub markers: usize,
    /// Gaussian marker noise, mm. Zero makes every repeat identical.
    pub marker_noise_mm: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            p_min_bar: 1.25,
            p_max_bar: 2.5,
            step_bar: 0.25,
            directions: Directions::Both,
            fluids: vec!["air".into(), "water".into()],
            repeats: 1,
            sample_rate: flowbot_core::mocap::DEFAULT_SAMPLE_RATE,
            duration: 4.0,
            markers: flowbot_core::mocap::MARKERS_PER_FRAME,
            marker_noise_mm: 0.0,
        }
    }
}

impl SweepConfig {
    /// Pressures from p_min to p_max inclusive, Pa.
    pub fn pressures(&self) -> Result<Vec<f64>> {
        if !(self.step_bar > 0.0) || !(self.p_min_bar < self.p_max_bar) || self.p_min_bar <= 0.0 {
            bail!(
                "sweep needs 0 < p_min < p_max and step > 0 (got {}..{} step {})",
                self.p_min_bar,
                self.p_max_bar,
                self.step_bar
            );
        }
        let n = ((self.p_max_bar - self.p_min_bar) / self.step_bar + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|k| (self.p_min_bar + k as f64 * self.step_bar) * PA_PER_BAR)
            .collect())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemoConfig {
    /// Steps through the reconstructed gripper states, holding each.
    GripperPresets {
        #[serde(default = "default_hold")]
        hold: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    SwimGait {
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_cycles")]
        cycles: usize,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    /// Runs the scenario's own role schedule.
    Schedule {
        t_end: f64,
        #[serde(default = "default_dt")]
        dt: f64,
    },
}

fn default_hold() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    0.01
}

fn default_period() -> f64 {
    2.0
}

fn default_cycles() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerationConfig {
    pub grid: Vec<f64>,
    /// 1/m
    pub kappa_zero: f64,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            kappa_zero: flowbot_core::assembly::KAPPA_ZERO,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Subject::Mocap(m) = &mut s.subject {
            if m.input.is_relative() {
                if let Some(dir) = path.parent() {
                    m.input = dir.join(&m.input);
                }
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.schema != SCHEMA {
            bail!("unsupported schema `{}`; expected `{SCHEMA}`", s.schema);
        }
        Ok(s)
    }

    pub fn fluid(&self, name: &str) -> Result<Fluid> {
        if let Some(f) = self.fluids.get(name) {
            f.validate()?;
            return Ok(f.clone());
        }
        match name {
            "water" => Ok(Fluid::water_20c()),
            "air" => Ok(Fluid::air_20c()),
            _ => bail!("unknown fluid `{name}`"),
        }
    }

    pub fn network(&self) -> Result<Network> {
        let Subject::Network(cfg) = &self.subject else {
            bail!("scenario subject is `{}`, not a network", self.subject.kind());
        };
        let mut net = Network::new(self.fluid(&cfg.fluid)?);
        for n in &cfg.nodes {
            net.add_node(match n.reservoir_bar {
                Some(p) => Node::reservoir(n.id.as_str(), p * PA_PER_BAR),
                None => Node::interior(n.id.as_str()),
            })?;
        }
        for e in &cfg.elements {
            let mut el = Element::new(e.id.as_str(), e.from.as_str(), e.to.as_str(), e.law.law());
            el.enabled = e.enabled;
            net.add_element(el)?;
        }
        net.validate()?;
        Ok(net)
    }

    /// Element-control schedule for network subjects.
    pub fn control_schedule(&self) -> Result<ControlSchedule> {
        let events = self
            .schedule
            .iter()
            .map(|e| {
                if !e.roles.is_empty() {
                    bail!("network schedules take `controls`, not `roles`");
                }
                Ok(ControlEvent {
                    time: e.time,
                    controls: e
                        .controls
                        .iter()
                        .map(|c| (c.element.as_str().into(), c.set.control()))
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ControlSchedule::new(events)?)
    }

    /// Role schedule for assembly subjects.
    pub fn role_schedule(&self) -> Result<Vec<(f64, IndexMap<String, PortRole>)>> {
        self.schedule
            .iter()
            .map(|e| {
                if !e.controls.is_empty() {
                    bail!("assembly schedules take `roles`, not `controls`");
                }
                Ok((e.time, e.roles.clone()))
            })
            .collect()
    }

    pub fn assembly(&self) -> Result<AssemblySpec> {
        Ok(match &self.subject {
            Subject::Gripper(g) => AssemblySpec::Gripper(GripperAssembly {
                fluid: self.fluid(&g.fluid)?,
                actuator_a: g.actuator_a.clone(),
                actuator_b: g.actuator_b.clone(),
                source: g.source.drive(),
                vent: g.vent,
                ports: g.ports,
            }),
            Subject::Quadruped(q) => {
                let pair = |ports: GripperPorts| -> Result<GripperAssembly> {
                    Ok(GripperAssembly {
                        fluid: self.fluid(&q.fluid)?,
                        actuator_a: q.actuator.clone(),
                        actuator_b: q.actuator.clone(),
                        source: q.source.drive(),
                        vent: q.vent,
                        ports,
                    })
                };
                AssemblySpec::Quadruped(QuadrupedAssembly {
                    front: pair(q.front)?,
                    rear: pair(q.rear)?,
                })
            }
            other => bail!("scenario subject is `{}`, not an assembly", other.kind()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_has_six_pressures() {
        let p = SweepConfig::default().pressures().unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], 1.25e5);
        assert_eq!(p[5], 2.5e5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"schema":"flowbot/1","subject":{"kind":"actuator"},"colour":"red"}"#;
        assert!(Scenario::parse(text).is_err());
        let text = r#"{"schema":"flowbot/1","subject":{"kind":"actuator","sides":3}}"#;
        assert!(Scenario::parse(text).is_err());
    }

    #[test]
    fn schema_is_checked() {
        let text = r#"{"schema":"flowbot/0","subject":{"kind":"actuator"}}"#;
        assert!(Scenario::parse(text).unwrap_err().to_string().contains("schema"));
    }

    #[test]
    fn bar_is_converted() {
        let text = r#"{"schema":"flowbot/1","subject":{"kind":"network","fluid":"water",
            "nodes":[{"id":"g","reservoir_bar":0},{"id":"a"}],
            "elements":[{"id":"s","from":"g","to":"a","law":{"kind":"pressure_source","p_set_bar":1.5}},
                        {"id":"r","from":"a","to":"g","law":{"kind":"resistor","resistance":1e9}}]}}"#;
        let net = Scenario::parse(text).unwrap().network().unwrap();
        assert_eq!(net.elements[0].law, Law::PressureSource { p_set: 1.5e5 });
    }
}
