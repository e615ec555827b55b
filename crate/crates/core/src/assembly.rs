//! Robots built from several actuators sharing a small set of control ports.
//!
//! Every port carries a switchable supply source and a vent constriction to
//! the reservoir, so one network serves every role assignment: a supplied
//! port has its source on and vent shut, a venting port the reverse, and a
//! blocked port both shut. In the gripper both actuators hang off the middle
//! port; supplying it drives them in parallel, while supplying an outer port
//! with the middle blocked puts them in series.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuator::{
    build_actuator_network, chamber_pressure_difference, quasi_static_curvature, ActuatorFragment,
    ActuatorModel, ActuatorState, Direction, Drive,
};
use crate::circuit::{
    power_audit, solve_steady, ControlEvent, ControlSchedule, Element, ElementControl, ElementId,
    Law, Network, PowerAudit, SolverSettings, SteadyState,
};
use crate::error::{Error, Result};
use crate::fluids::Fluid;

pub const GROUND: &str = "reservoir";
/// Curvatures below this magnitude count as neutral, 1/m.
pub const KAPPA_ZERO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum PortRole {
    Supply { direction: Direction },
    Vent { opening: f64 },
    Blocked,
}

impl PortRole {
    pub fn is_supply(&self) -> bool {
        matches!(self, PortRole::Supply { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PortRole::Vent { opening } if !(0.0..=1.0).contains(&opening) => Err(Error::Configuration(
                format!("vent opening must lie in [0, 1], got {opening}"),
            )),
            _ => Ok(()),
        }
    }

    /// Blocked < vents by opening < forward supply < reverse supply.
    fn order_key(&self) -> (u8, f64) {
        match *self {
            PortRole::Blocked => (0, 0.0),
            PortRole::Vent { opening } => (1, opening),
            PortRole::Supply {
                direction: Direction::Forward,
            } => (2, 0.0),
            PortRole::Supply {
                direction: Direction::Reverse,
            } => (3, 0.0),
        }
    }
}

impl std::fmt::Display for PortRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PortRole::Supply {
                direction: Direction::Forward,
            } => write!(f, "supply+"),
            PortRole::Supply {
                direction: Direction::Reverse,
            } => write!(f, "supply-"),
            PortRole::Vent { opening } => write!(f, "vent({opening})"),
            PortRole::Blocked => write!(f, "blocked"),
        }
    }
}

/// Vent constriction at every port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VentSpec {
    /// m²
    pub reference_area: f64,
    pub discharge_coefficient: f64,
}

impl Default for VentSpec {
    fn default() -> Self {
        VentSpec {
            reference_area: 3.0e-6,
            discharge_coefficient: 0.62,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperPorts {
    pub left: PortRole,
    pub middle: PortRole,
    pub right: PortRole,
}

impl GripperPorts {
    pub fn roles(&self) -> [PortRole; 3] {
        [self.left, self.middle, self.right]
    }

    pub fn from_roles(r: [PortRole; 3]) -> Self {
        GripperPorts {
            left: r[0],
            middle: r[1],
            right: r[2],
        }
    }

    /// Neutral state: supply off, every vent fully open.
    pub fn neutral() -> Self {
        let v = PortRole::Vent { opening: 1.0 };
        GripperPorts::from_roles([v; 3])
    }

    pub fn parallel(direction: Direction, left_vent: f64, right_vent: f64) -> Self {
        GripperPorts {
            left: PortRole::Vent { opening: left_vent },
            middle: PortRole::Supply { direction },
            right: PortRole::Vent {
                opening: right_vent,
            },
        }
    }

    /// Supply at the left port, middle blocked, venting at the right.
    pub fn series_from_left(direction: Direction, far_vent: f64) -> Self {
        GripperPorts {
            left: PortRole::Supply { direction },
            middle: PortRole::Blocked,
            right: PortRole::Vent { opening: far_vent },
        }
    }

    pub fn series_from_right(direction: Direction, far_vent: f64) -> Self {
        GripperPorts {
            left: PortRole::Vent { opening: far_vent },
            middle: PortRole::Blocked,
            right: PortRole::Supply { direction },
        }
    }

    pub fn supply_count(&self) -> usize {
        self.roles().iter().filter(|r| r.is_supply()).count()
    }

    pub fn label(&self) -> String {
        format!("{}|{}|{}", self.left, self.middle, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperAssembly {
    pub fluid: Fluid,
    pub actuator_a: ActuatorModel,
    pub actuator_b: ActuatorModel,
    /// Supply magnitude; the sign comes from the supplying port's direction.
    pub source: Drive,
    pub vent: VentSpec,
    pub ports: GripperPorts,
}

impl Default for GripperAssembly {
    fn default() -> Self {
        GripperAssembly {
            fluid: Fluid::water_20c(),
            actuator_a: ActuatorModel::default(),
            actuator_b: ActuatorModel::default(),
            source: Drive::Pressure { pressure: 2.0e5 },
            vent: VentSpec::default(),
            ports: GripperPorts::parallel(Direction::Forward, 1.0, 1.0),
        }
    }
}

/// Two grippers sharing one fluid and one source setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrupedAssembly {
    pub front: GripperAssembly,
    pub rear: GripperAssembly,
}

/// One actuator between two ports, each with a vent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleRig {
    pub fluid: Fluid,
    pub actuator: ActuatorModel,
    pub source: Drive,
    pub vent: VentSpec,
    pub left: PortRole,
    pub right: PortRole,
}

impl Default for SingleRig {
    fn default() -> Self {
        SingleRig {
            fluid: Fluid::water_20c(),
            actuator: ActuatorModel::default(),
            source: Drive::Pressure { pressure: 2.0e5 },
            vent: VentSpec::default(),
            left: PortRole::Supply {
                direction: Direction::Forward,
            },
            right: PortRole::Vent { opening: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssemblySpec {
    Single(SingleRig),
    Gripper(GripperAssembly),
    Quadruped(QuadrupedAssembly),
}

struct Layout<'a> {
    fluid: &'a Fluid,
    source: Drive,
    vent: VentSpec,
    /// Ports with their role, grouped by independent circuit.
    circuits: Vec<Vec<(String, PortRole)>>,
    /// (limb name, model, left port, right port)
    limbs: Vec<(String, &'a ActuatorModel, String, String)>,
}

fn gripper_layout<'a>(g: &'a GripperAssembly, prefix: &str, out: &mut Layout<'a>) {
    let p = |name: &str| format!("{prefix}{name}");
    out.circuits.push(vec![
        (p("P_left"), g.ports.left),
        (p("P_middle"), g.ports.middle),
        (p("P_right"), g.ports.right),
    ]);
    // A is mirrored so positive curvature means flow leaving the middle port.
    out.limbs.push((p("A"), &g.actuator_a, p("P_middle"), p("P_left")));
    out.limbs.push((p("B"), &g.actuator_b, p("P_middle"), p("P_right")));
}

impl AssemblySpec {
    fn layout(&self) -> Result<Layout<'_>> {
        Ok(match self {
            AssemblySpec::Single(s) => Layout {
                fluid: &s.fluid,
                source: s.source,
                vent: s.vent,
                circuits: vec![vec![("P_left".into(), s.left), ("P_right".into(), s.right)]],
                limbs: vec![("A".into(), &s.actuator, "P_left".into(), "P_right".into())],
            },
            AssemblySpec::Gripper(g) => {
                let mut l = Layout {
                    fluid: &g.fluid,
                    source: g.source,
                    vent: g.vent,
                    circuits: Vec::new(),
                    limbs: Vec::new(),
                };
                gripper_layout(g, "", &mut l);
                l
            }
            AssemblySpec::Quadruped(q) => {
                if q.front.fluid != q.rear.fluid || q.front.source != q.rear.source {
                    return Err(Error::Configuration(
                        "quadruped pairs must share the fluid and the source setting".into(),
                    ));
                }
                let mut l = Layout {
                    fluid: &q.front.fluid,
                    source: q.front.source,
                    vent: q.front.vent,
                    circuits: Vec::new(),
                    limbs: Vec::new(),
                };
                gripper_layout(&q.front, "front.", &mut l);
                gripper_layout(&q.rear, "rear.", &mut l);
                if q.front.vent != q.rear.vent {
                    return Err(Error::Configuration(
                        "quadruped pairs must use the same vent geometry".into(),
                    ));
                }
                l
            }
        })
    }

    /// Control port ids in declaration order.
    pub fn ports(&self) -> Result<Vec<String>> {
        Ok(self
            .layout()?
            .circuits
            .into_iter()
            .flatten()
            .map(|(p, _)| p)
            .collect())
    }

    /// Ports grouped by independent circuit.
    pub fn circuits(&self) -> Result<Vec<Vec<String>>> {
        Ok(self
            .layout()?
            .circuits
            .into_iter()
            .map(|c| c.into_iter().map(|(p, _)| p).collect())
            .collect())
    }

    pub fn limb_names(&self) -> Result<Vec<String>> {
        Ok(self.layout()?.limbs.into_iter().map(|l| l.0).collect())
    }

    /// Roles declared in the spec, keyed by port.
    pub fn roles(&self) -> Result<IndexMap<String, PortRole>> {
        Ok(self.layout()?.circuits.into_iter().flatten().collect())
    }

    pub fn fluid(&self) -> &Fluid {
        match self {
            AssemblySpec::Single(s) => &s.fluid,
            AssemblySpec::Gripper(g) => &g.fluid,
            AssemblySpec::Quadruped(q) => &q.front.fluid,
        }
    }

    pub fn source(&self) -> Drive {
        match self {
            AssemblySpec::Single(s) => s.source,
            AssemblySpec::Gripper(g) => g.source,
            AssemblySpec::Quadruped(q) => q.front.source,
        }
    }
}

/// Number of independent control inputs of an assembly.
pub fn control_fan_in(spec: &AssemblySpec) -> Result<usize> {
    Ok(spec.ports()?.len())
}

#[derive(Debug, Clone)]
pub struct Limb {
    pub name: String,
    pub model: ActuatorModel,
    pub fragment: ActuatorFragment,
}

/// Network with a source and a vent at every port, plus the limbs on it.
#[derive(Debug, Clone)]
pub struct AssemblyNetwork {
    pub network: Network,
    pub limbs: Vec<Limb>,
    pub circuits: Vec<Vec<String>>,
    source: Drive,
}

pub fn source_id(port: &str) -> String {
    format!("src_{port}")
}

pub fn vent_id(port: &str) -> String {
    format!("vent_{port}")
}

/// Builds the superset network with every source off and every vent open.
pub fn build_assembly_network(spec: &AssemblySpec) -> Result<AssemblyNetwork> {
    let layout = spec.layout()?;
    layout.fluid.validate()?;
    let mut network = Network::new(layout.fluid.clone());
    network.add_reservoir(GROUND, 0.0)?;
    for (port, _) in layout.circuits.iter().flatten() {
        network.add_interior(port.as_str())?;
        let law = match layout.source {
            Drive::Pressure { .. } => Law::PressureSource { p_set: 0.0 },
            Drive::Flow { .. } => Law::FlowSource { q_set: 0.0 },
        };
        let mut src = Element::new(source_id(port), GROUND, port.as_str(), law);
        src.enabled = false;
        network.add_element(src)?;
        network.add_element(Element::new(
            vent_id(port),
            port.as_str(),
            GROUND,
            Law::Constriction {
                reference_area: layout.vent.reference_area,
                opening: 1.0,
                discharge_coefficient: layout.vent.discharge_coefficient,
            },
        ))?;
    }
    let mut limbs = Vec::new();
    for (name, model, left, right) in &layout.limbs {
        let fragment = build_actuator_network(model, &mut network, name, left, right, GROUND)?;
        limbs.push(Limb {
            name: name.clone(),
            model: (*model).clone(),
            fragment,
        });
    }
    Ok(AssemblyNetwork {
        network,
        limbs,
        circuits: layout
            .circuits
            .into_iter()
            .map(|c| c.into_iter().map(|(p, _)| p).collect())
            .collect(),
        source: layout.source,
    })
}

impl AssemblyNetwork {
    /// At most one supply per independent circuit; every named port must exist.
    pub fn check_roles(&self, roles: &IndexMap<String, PortRole>) -> Result<()> {
        for (port, role) in roles {
            if !self.circuits.iter().flatten().any(|p| p == port) {
                return Err(Error::Lookup(format!("unknown port `{port}`")));
            }
            role.validate()?;
        }
        for circuit in &self.circuits {
            let supplies = circuit
                .iter()
                .filter(|p| roles.get(p.as_str()).is_some_and(PortRole::is_supply))
                .count();
            if supplies > 1 {
                return Err(Error::Configuration(format!(
                    "ports {} request {supplies} supplies; at most one is allowed",
                    circuit.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Element controls realising the given roles. Ports not listed are left as they are.
    pub fn role_controls(&self, roles: &IndexMap<String, PortRole>) -> Result<Vec<(ElementId, ElementControl)>> {
        self.check_roles(roles)?;
        let magnitude = match self.source {
            Drive::Pressure { pressure } => pressure,
            Drive::Flow { flow } => flow,
        };
        let mut controls = Vec::with_capacity(4 * roles.len());
        for (port, role) in roles {
            let src = ElementId::from(source_id(port));
            let vent = ElementId::from(vent_id(port));
            match *role {
                PortRole::Supply { direction } => {
                    controls.push((src.clone(), ElementControl::Setpoint(direction.sign() * magnitude)));
                    controls.push((src, ElementControl::Enabled(true)));
                    controls.push((vent, ElementControl::Enabled(false)));
                }
                PortRole::Vent { opening } => {
                    controls.push((src, ElementControl::Enabled(false)));
                    controls.push((vent.clone(), ElementControl::Opening(opening)));
                    controls.push((vent, ElementControl::Enabled(true)));
                }
                PortRole::Blocked => {
                    controls.push((src, ElementControl::Enabled(false)));
                    controls.push((vent, ElementControl::Enabled(false)));
                }
            }
        }
        Ok(controls)
    }

    pub fn apply_roles(&mut self, roles: &IndexMap<String, PortRole>) -> Result<()> {
        for (id, control) in self.role_controls(roles)? {
            self.network.apply_control(id.as_str(), control)?;
        }
        Ok(())
    }

    pub fn limb_states(&self, state: &SteadyState) -> Result<Vec<(String, ActuatorState)>> {
        self.limbs
            .iter()
            .map(|l| {
                let dp = chamber_pressure_difference(state, &l.fragment)?;
                Ok((
                    l.name.clone(),
                    ActuatorState {
                        delta_p_chambers: dp,
                        curvature: quasi_static_curvature(dp, &l.model),
                        flow_through: state.flow(l.fragment.tip.as_str())?,
                    },
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySolution {
    pub state: SteadyState,
    pub limbs: Vec<(String, ActuatorState)>,
    pub audit: PowerAudit,
}

impl AssemblySolution {
    pub fn curvature(&self, limb: &str) -> Result<f64> {
        self.limbs
            .iter()
            .find(|(n, _)| n == limb)
            .map(|(_, s)| s.curvature)
            .ok_or_else(|| Error::Lookup(format!("no limb `{limb}`")))
    }
}

/// Steady solve of an assembly with the roles declared in its spec. Each
/// independent circuit must have exactly one supply.
pub fn solve_assembly(spec: &AssemblySpec, settings: &SolverSettings) -> Result<AssemblySolution> {
    let mut net = build_assembly_network(spec)?;
    let roles = spec.roles()?;
    for circuit in &net.circuits {
        let supplies = circuit.iter().filter(|p| roles[p.as_str()].is_supply()).count();
        if supplies != 1 {
            return Err(Error::Configuration(format!(
                "ports {} need exactly one supply, found {supplies}",
                circuit.join(", ")
            )));
        }
    }
    net.apply_roles(&roles)?;
    let state = solve_steady(&net.network, settings)?;
    let limbs = net.limb_states(&state)?;
    let audit = power_audit(&state, &net.network)?;
    Ok(AssemblySolution { state, limbs, audit })
}

/// Gripper network with its declared roles applied.
pub fn build_gripper_network(assembly: &GripperAssembly) -> Result<AssemblyNetwork> {
    let n = assembly.ports.supply_count();
    if n != 1 {
        return Err(Error::Configuration(format!(
            "a gripper needs exactly one supply port, found {n}"
        )));
    }
    let spec = AssemblySpec::Gripper(assembly.clone());
    let mut net = build_assembly_network(&spec)?;
    net.apply_roles(&spec.roles()?)?;
    Ok(net)
}

pub fn build_quadruped_network(assembly: &QuadrupedAssembly) -> Result<AssemblyNetwork> {
    for (name, pair) in [("front", &assembly.front), ("rear", &assembly.rear)] {
        let n = pair.ports.supply_count();
        if n != 1 {
            return Err(Error::Configuration(format!(
                "{name} pair needs exactly one supply port, found {n}"
            )));
        }
    }
    let spec = AssemblySpec::Quadruped(assembly.clone());
    let mut net = build_assembly_network(&spec)?;
    net.apply_roles(&spec.roles()?)?;
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "+")]
    Plus,
}

impl Sign {
    pub fn of(kappa: f64, kappa_zero: f64) -> Self {
        if kappa.abs() < kappa_zero {
            Sign::Zero
        } else if kappa > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn negated(self) -> Self {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Zero => Sign::Zero,
            Sign::Plus => Sign::Minus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Minus => '-',
            Sign::Zero => '0',
            Sign::Plus => '+',
        }
    }
}

/// Curvature signs of fingers A and B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignPattern(pub [Sign; 2]);

impl SignPattern {
    pub fn from_curvatures(kappa: [f64; 2], kappa_zero: f64) -> Self {
        SignPattern([Sign::of(kappa[0], kappa_zero), Sign::of(kappa[1], kappa_zero)])
    }

    pub fn negated(self) -> Self {
        SignPattern([self.0[0].negated(), self.0[1].negated()])
    }
}

impl std::fmt::Display for SignPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.0[0].symbol(), self.0[1].symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationResult {
    pub ports: GripperPorts,
    pub outcome: std::result::Result<ConfigurationOutcome, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationOutcome {
    /// Curvature of fingers A and B, 1/m.
    pub curvature: [f64; 2],
    pub pattern: SignPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub results: Vec<ConfigurationResult>,
    /// Each distinct pattern with the index of its first realising configuration.
    pub patterns: Vec<(SignPattern, usize)>,
}

/// Every admissible role assignment of the gripper ports over an opening
/// grid: one supply in either direction, each other port blocked or venting
/// at a grid opening. Openings at or below the blocking cutoff count as
/// blocked and are not repeated.
pub fn configurations(opening_grid: &[f64], epsilon_open: f64) -> Result<Vec<GripperPorts>> {
    if opening_grid.is_empty() {
        return Err(Error::Configuration("opening grid is empty".into()));
    }
    if let Some(o) = opening_grid.iter().find(|o| !(0.0..=1.0).contains(*o)) {
        return Err(Error::Configuration(format!("grid opening {o} is outside [0, 1]")));
    }
    let mut openings: Vec<f64> = opening_grid.iter().copied().filter(|&o| o >= epsilon_open).collect();
    openings.sort_by(f64::total_cmp);
    openings.dedup();
    let mut passive = vec![PortRole::Blocked];
    passive.extend(openings.iter().map(|&opening| PortRole::Vent { opening }));
    let supplies = [
        PortRole::Supply {
            direction: Direction::Forward,
        },
        PortRole::Supply {
            direction: Direction::Reverse,
        },
    ];
    let mut all: Vec<PortRole> = passive.clone();
    all.extend(supplies);
    all.sort_by(|a, b| a.order_key().partial_cmp(&b.order_key()).expect("finite openings"));

    let mut out = Vec::new();
    for &l in &all {
        for &m in &all {
            for &r in &all {
                let roles = [l, m, r];
                if roles.iter().filter(|x| x.is_supply()).count() == 1 {
                    out.push(GripperPorts::from_roles(roles));
                }
            }
        }
    }
    Ok(out)
}

/// Solves every configuration (in parallel) and collects the reachable sign
/// patterns. Failed solves are recorded, not fatal.
pub fn enumerate_configurations(
    assembly: &GripperAssembly,
    opening_grid: &[f64],
    settings: &SolverSettings,
    kappa_zero: f64,
) -> Result<Enumeration> {
    let configs = configurations(opening_grid, settings.epsilon_open)?;
    let results: Vec<ConfigurationResult> = configs
        .par_iter()
        .map(|ports| {
            let spec = AssemblySpec::Gripper(GripperAssembly {
                ports: *ports,
                ..assembly.clone()
            });
            let outcome = solve_assembly(&spec, settings)
                .and_then(|s| Ok([s.curvature("A")?, s.curvature("B")?]))
                .map(|curvature| ConfigurationOutcome {
                    curvature,
                    pattern: SignPattern::from_curvatures(curvature, kappa_zero),
                })
                .map_err(|e| e.to_string());
            ConfigurationResult {
                ports: *ports,
                outcome,
            }
        })
        .collect();
    let mut patterns: Vec<(SignPattern, usize)> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if let Ok(o) = &r.outcome {
            if !patterns.iter().any(|(p, _)| *p == o.pattern) {
                patterns.push((o.pattern, i));
            }
        }
    }
    Ok(Enumeration { results, patterns })
}

/// A named gripper port setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub label: String,
    pub description: String,
    pub ports: GripperPorts,
}

/// Nine gripper states (a)–(i): seven parallel, two series.
///
/// Reconstructed: the port settings are chosen to show each qualitative
/// state, not read from measured settings.
pub fn gripper_presets() -> Vec<Preset> {
    use Direction::{Forward, Reverse};
    let vent = |o: f64| PortRole::Vent { opening: o };
    let supply = |d| PortRole::Supply { direction: d };
    let p = |label: &str, description: &str, roles: [PortRole; 3]| Preset {
        label: label.into(),
        description: description.into(),
        ports: GripperPorts::from_roles(roles),
    };
    vec![
        p("a", "parallel, both fingers bend outward", [vent(1.0), supply(Forward), vent(1.0)]),
        p("b", "parallel, both fingers bend inward", [vent(1.0), supply(Reverse), vent(1.0)]),
        p("c", "parallel, finger A only (outward)", [vent(1.0), supply(Forward), PortRole::Blocked]),
        p("d", "parallel, finger B only (outward)", [PortRole::Blocked, supply(Forward), vent(1.0)]),
        p("e", "parallel, finger A only (inward)", [vent(1.0), supply(Reverse), PortRole::Blocked]),
        p("f", "parallel, finger B only (inward)", [PortRole::Blocked, supply(Reverse), vent(1.0)]),
        p("g", "parallel, A throttled by a half-closed vent", [vent(0.25), supply(Forward), vent(1.0)]),
        p("h", "series from the left port", [supply(Forward), PortRole::Blocked, vent(1.0)]),
        p("i", "series from the right port", [vent(1.0), PortRole::Blocked, supply(Forward)]),
    ]
}

/// Role changes at given times.
pub type RoleSchedule = Vec<(f64, IndexMap<String, PortRole>)>;

/// Alternating quadruped gait: front pair forward while the rear pair runs
/// reverse, swapping every half period.
pub fn swim_gait_schedule(period: f64, cycles: usize) -> RoleSchedule {
    let phase = |front: Direction| -> IndexMap<String, PortRole> {
        let mut roles = IndexMap::new();
        for (pair, dir) in [("front", front), ("rear", front.flipped())] {
            roles.insert(format!("{pair}.P_left"), PortRole::Vent { opening: 1.0 });
            roles.insert(format!("{pair}.P_middle"), PortRole::Supply { direction: dir });
            roles.insert(format!("{pair}.P_right"), PortRole::Vent { opening: 1.0 });
        }
        roles
    };
    (0..2 * cycles)
        .map(|k| {
            let dir = if k % 2 == 0 { Direction::Forward } else { Direction::Reverse };
            (k as f64 * 0.5 * period, phase(dir))
        })
        .collect()
}

/// Converts role events into a control schedule for the assembly network.
pub fn role_schedule(net: &AssemblyNetwork, schedule: &RoleSchedule) -> Result<ControlSchedule> {
    let events = schedule
        .iter()
        .map(|(t, roles)| {
            Ok(ControlEvent {
                time: *t,
                controls: net.role_controls(roles)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ControlSchedule::new(events)
}
