//! Fluidic circuits: nodes joined by two-terminal elements with nonlinear
//! pressure-flow laws.
//!
//! Pressure plays the role of potential and volumetric flow the role of
//! current. Reservoir nodes are held at a fixed gauge pressure (ground);
//! interior node pressures and the flows through constrictions and pressure
//! sources are solved for with damped Newton iteration on the nodal
//! equations. See [`solve_steady`] and [`simulate_transient`].

mod audit;
pub mod laws;
mod solve;
mod transient;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluids::{Fluid, STANDARD_ATMOSPHERE};

pub use audit::{power_audit, PowerAudit};
pub use laws::element_pressure_drop;
pub use solve::{solve_steady, solve_steady_with_guess};
pub use transient::{
    simulate_transient, ControlEvent, ControlSchedule, ElementControl, TransientIntegrator,
    TransientSettings, TransientSnapshot, TransientTrace,
};

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }

        impl From<&String> for $name {
            fn from(s: &String) -> Self {
                $name(s.clone())
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(NodeId);
string_id!(ElementId);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeKind {
    Interior,
    /// Fixed gauge pressure in Pa.
    Reservoir { pressure: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn interior(id: impl Into<NodeId>) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Interior,
        }
    }

    pub fn reservoir(id: impl Into<NodeId>, pressure: f64) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Reservoir { pressure },
        }
    }

    pub fn is_reservoir(&self) -> bool {
        matches!(self.kind, NodeKind::Reservoir { .. })
    }
}

/// Pressure-flow law of a two-terminal element. Positive flow runs
/// `from → to`; the pressure drop is `p(from) − p(to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    /// Laminar circular channel, R = 128·μ·L/(π·d⁴).
    Channel { length: f64, hydraulic_diameter: f64 },
    /// Laminar channel whose resistance is scaled by (1 + asymmetry) for
    /// forward flow and (1 − asymmetry) for reverse flow.
    DirectionalChannel {
        length: f64,
        hydraulic_diameter: f64,
        asymmetry: f64,
    },
    /// Fixed linear resistance in Pa·s/m³, independent of the fluid.
    Resistor { resistance: f64 },
    /// Orifice, ΔP = ρ·Q·|Q| / (2·(C_d·A·opening)²).
    Constriction {
        reference_area: f64,
        opening: f64,
        discharge_coefficient: f64,
    },
    /// Fluidic diode: linear resistance `base_resistance` forward and
    /// `base_resistance · diodicity` in reverse.
    TeslaValve { base_resistance: f64, diodicity: f64 },
    /// Positive-displacement pump imposing `q_set` m³/s from → to.
    FlowSource { q_set: f64 },
    /// Regulator imposing p(to) − p(from) = `p_set` Pa.
    PressureSource { p_set: f64 },
    /// Elastic chamber holding V = rest_volume + compliance·(p(from) − p(to)).
    ComplianceChamber { rest_volume: f64, compliance: f64 },
}

impl Law {
    pub fn is_passive(&self) -> bool {
        matches!(
            self,
            Law::Channel { .. }
                | Law::DirectionalChannel { .. }
                | Law::Resistor { .. }
                | Law::Constriction { .. }
                | Law::TeslaValve { .. }
        )
    }

    pub fn is_source(&self) -> bool {
        matches!(self, Law::FlowSource { .. } | Law::PressureSource { .. })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        fn positive(name: &str, v: f64) -> std::result::Result<(), String> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive and finite, got {v}"))
            }
        }
        match *self {
            Law::Channel {
                length,
                hydraulic_diameter,
            } => {
                positive("length", length)?;
                positive("hydraulic_diameter", hydraulic_diameter)
            }
            Law::DirectionalChannel {
                length,
                hydraulic_diameter,
                asymmetry,
            } => {
                positive("length", length)?;
                positive("hydraulic_diameter", hydraulic_diameter)?;
                if asymmetry.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(format!("asymmetry must lie in (-1, 1), got {asymmetry}"))
                }
            }
            Law::Resistor { resistance } => positive("resistance", resistance),
            Law::Constriction {
                reference_area,
                opening,
                discharge_coefficient,
            } => {
                positive("reference_area", reference_area)?;
                positive("discharge_coefficient", discharge_coefficient)?;
                if (0.0..=1.0).contains(&opening) {
                    Ok(())
                } else {
                    Err(format!("opening must lie in [0, 1], got {opening}"))
                }
            }
            Law::TeslaValve {
                base_resistance,
                diodicity,
            } => {
                positive("base_resistance", base_resistance)?;
                if diodicity > 1.0 && diodicity.is_finite() {
                    Ok(())
                } else {
                    Err(format!("diodicity must exceed 1, got {diodicity}"))
                }
            }
            Law::FlowSource { q_set } if q_set.is_finite() => Ok(()),
            Law::PressureSource { p_set } if p_set.is_finite() => Ok(()),
            Law::FlowSource { .. } | Law::PressureSource { .. } => {
                Err("source setpoint must be finite".into())
            }
            Law::ComplianceChamber {
                rest_volume,
                compliance,
            } => {
                positive("rest_volume", rest_volume)?;
                positive("compliance", compliance)
            }
        }
    }
}

fn default_enabled() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    pub from: NodeId,
    pub to: NodeId,
    #[serde(flatten)]
    pub law: Law,
    /// Disabled elements are removed from every solve.
    #[serde(default = "default_enabled", skip_serializing_if = "is_true")]
    pub enabled: bool,
}

impl Element {
    pub fn new(
        id: impl Into<ElementId>,
        from: impl Into<NodeId>,
        to: impl Into<NodeId>,
        law: Law,
    ) -> Self {
        Element {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            law,
            enabled: true,
        }
    }

    /// True when the element takes part in a solve: enabled, and not a
    /// constriction closed below `epsilon_open`.
    pub fn is_active(&self, epsilon_open: f64) -> bool {
        if !self.enabled {
            return false;
        }
        match self.law {
            Law::Constriction { opening, .. } => opening >= epsilon_open,
            _ => true,
        }
    }
}

/// Solver tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Maximum nodal flow imbalance accepted at convergence, m³/s.
    pub tol_kcl: f64,
    /// Relative tolerance of the power balance check.
    pub tol_energy: f64,
    pub max_iter: usize,
    /// Constrictions opened less than this are treated as absent edges.
    pub epsilon_open: f64,
    /// Half-width of the cubic blend that regularises the orifice law at Q = 0, m³/s.
    pub q_smooth: f64,
    /// Absolute pressure corresponding to 0 Pa gauge.
    pub p_ambient: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_kcl: 1e-9,
            tol_energy: 1e-6,
            max_iter: 200,
            epsilon_open: 1e-6,
            q_smooth: 1e-9,
            p_ambient: STANDARD_ATMOSPHERE,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_kcl > 0.0
            && self.tol_energy > 0.0
            && self.max_iter > 0
            && self.epsilon_open >= 0.0
            && self.epsilon_open < 1.0
            && self.q_smooth > 0.0
            && self.p_ambient > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Configuration(format!(
                "invalid solver settings: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub fluid: Fluid,
    pub nodes: Vec<Node>,
    pub elements: Vec<Element>,
}

impl Network {
    pub fn new(fluid: Fluid) -> Self {
        Network {
            fluid,
            nodes: Vec::new(),
            elements: Vec::new(),
        }
    }

    pub fn add_node(&mut self, node: Node) -> Result<()> {
        if self.node_index(node.id.as_str()).is_some() {
            return Err(Error::InvalidNetwork(format!(
                "duplicate node id `{}`",
                node.id
            )));
        }
        if let NodeKind::Reservoir { pressure } = node.kind {
            if !pressure.is_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "reservoir `{}` pressure must be finite",
                    node.id
                )));
            }
        }
        self.nodes.push(node);
        Ok(())
    }

    pub fn add_interior(&mut self, id: impl Into<NodeId>) -> Result<()> {
        self.add_node(Node::interior(id))
    }

    pub fn add_reservoir(&mut self, id: impl Into<NodeId>, pressure: f64) -> Result<()> {
        self.add_node(Node::reservoir(id, pressure))
    }

    pub fn add_element(&mut self, element: Element) -> Result<()> {
        self.check_element(&element)?;
        if self.element_index(element.id.as_str()).is_some() {
            return Err(Error::InvalidNetwork(format!(
                "duplicate element id `{}`",
                element.id
            )));
        }
        self.elements.push(element);
        Ok(())
    }

    fn check_element(&self, element: &Element) -> Result<()> {
        let e = &element.id;
        if element.from == element.to {
            return Err(Error::InvalidNetwork(format!(
                "element `{e}` connects node `{}` to itself",
                element.from
            )));
        }
        for end in [&element.from, &element.to] {
            if self.node_index(end.as_str()).is_none() {
                return Err(Error::InvalidNetwork(format!(
                    "element `{e}` references unknown node `{end}`"
                )));
            }
        }
        element
            .law
            .validate()
            .map_err(|msg| Error::InvalidNetwork(format!("element `{e}`: {msg}")))
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id.as_str() == id)
    }

    pub fn element_index(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.id.as_str() == id)
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.element_index(id).map(|i| &self.elements[i])
    }

    pub fn element_mut(&mut self, id: &str) -> Option<&mut Element> {
        self.element_index(id).map(move |i| &mut self.elements[i])
    }

    /// Full structural validation: fluid, unique ids, endpoints and law parameters.
    pub fn validate(&self) -> Result<()> {
        self.fluid.validate()?;
        let mut seen = std::collections::HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(Error::InvalidNetwork(format!("duplicate node id `{}`", n.id)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.elements {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate element id `{}`",
                    e.id
                )));
            }
            self.check_element(e)?;
        }
        if !self.nodes.iter().any(Node::is_reservoir) {
            return Err(Error::InvalidNetwork("network has no reservoir node".into()));
        }
        Ok(())
    }

    /// Applies one control change to the named element.
    pub fn apply_control(&mut self, id: &str, control: ElementControl) -> Result<()> {
        let element = self
            .element_mut(id)
            .ok_or_else(|| Error::Lookup(format!("unknown element `{id}`")))?;
        match (control, &mut element.law) {
            (ElementControl::Enabled(on), _) => element.enabled = on,
            (ElementControl::Opening(o), Law::Constriction { opening, .. }) => {
                if !(0.0..=1.0).contains(&o) {
                    return Err(Error::Configuration(format!(
                        "opening for `{id}` must lie in [0, 1], got {o}"
                    )));
                }
                *opening = o;
            }
            (ElementControl::Setpoint(v), Law::PressureSource { p_set }) => *p_set = v,
            (ElementControl::Setpoint(v), Law::FlowSource { q_set }) => *q_set = v,
            (control, _) => {
                return Err(Error::Configuration(format!(
                    "control {control:?} does not apply to element `{id}`"
                )))
            }
        }
        Ok(())
    }
}

/// Solved node pressures and element flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// Gauge pressure per node, Pa, in network order.
    pub node_pressures: IndexMap<NodeId, f64>,
    /// Signed flow per element, m³/s, positive from → to. Inactive elements carry 0.
    pub element_flows: IndexMap<ElementId, f64>,
    /// Largest absolute flow imbalance at an interior node, m³/s.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SteadyState {
    pub fn pressure(&self, node: &str) -> Result<f64> {
        self.node_pressures
            .get(node)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no pressure for node `{node}`")))
    }

    pub fn flow(&self, element: &str) -> Result<f64> {
        self.element_flows
            .get(element)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no flow for element `{element}`")))
    }

    /// Pressure drop p(from) − p(to) across an element of `network`.
    pub fn pressure_drop(&self, network: &Network, element: &str) -> Result<f64> {
        let e = network
            .element(element)
            .ok_or_else(|| Error::Lookup(format!("unknown element `{element}`")))?;
        Ok(self.pressure(e.from.as_str())? - self.pressure(e.to.as_str())?)
    }

    /// Largest |Σ flows| over interior nodes of `network`.
    pub fn kcl_imbalance(&self, network: &Network) -> f64 {
        let mut net: IndexMap<&str, f64> = network
            .nodes
            .iter()
            .filter(|n| !n.is_reservoir())
            .map(|n| (n.id.as_str(), 0.0))
            .collect();
        for e in &network.elements {
            let q = self.element_flows.get(e.id.as_str()).copied().unwrap_or(0.0);
            if let Some(v) = net.get_mut(e.from.as_str()) {
                *v -= q;
            }
            if let Some(v) = net.get_mut(e.to.as_str()) {
                *v += q;
            }
        }
        net.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}
