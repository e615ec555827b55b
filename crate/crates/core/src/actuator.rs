//! The bidirectional actuator: two chains of bellows chambers joined at the
//! tip by a narrow channel.
//!
//! Flow entering one port runs down one chain, through the tip and back out
//! along the other chain. Most of the loop's viscous loss sits in the tip, so
//! the chambers upstream of it sit at high pressure and the ones downstream at
//! low pressure. The mean pressure difference between the two sides drives a
//! bend, `κ = c_kappa · ΔP`.

use serde::{Deserialize, Serialize};

use crate::circuit::laws::channel_resistance;
use crate::circuit::{
    solve_steady, Element, ElementId, Law, Network, NodeId, SolverSettings, SteadyState,
};
use crate::error::{Error, Result};
use crate::fluids::{Fluid, STANDARD_ATMOSPHERE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGeometry {
    /// m
    pub length: f64,
    /// m
    pub hydraulic_diameter: f64,
}

impl ChannelGeometry {
    pub fn resistance(&self, fluid: &Fluid) -> f64 {
        channel_resistance(self.length, self.hydraulic_diameter, fluid.dynamic_viscosity)
    }
}

/// Slow phenomenological flattening after the fill transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Creep {
    pub amplitude: f64,
    /// s
    pub tau_creep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorModel {
    pub segments_per_side: usize,
    pub segment_channel: ChannelGeometry,
    pub tip_constriction: ChannelGeometry,
    /// (1/m)/Pa
    pub c_kappa: f64,
    /// Tip resistance is scaled by (1 + ε) for left→right flow and (1 − ε) for right→left.
    pub asymmetry_epsilon: f64,
    /// Share of the loop pressure loss spent outside the chamber region.
    pub parasitic_fraction: f64,
    pub creep: Creep,
    /// m³/Pa per chamber
    pub chamber_compliance: f64,
    /// m³ per chamber; only matters for compressible fluids.
    pub chamber_rest_volume: f64,
    /// Length of the bending section, m. Used when drawing the actuator as an arc.
    pub arc_length: f64,
    /// Tip channel sealed: the two chains become dead ends.
    pub tip_sealed: bool,
}

impl Default for ActuatorModel {
    fn default() -> Self {
        ActuatorModel {
            segments_per_side: 3,
            segment_channel: ChannelGeometry {
                length: 5.0e-3,
                hydraulic_diameter: 5.0e-3,
            },
            tip_constriction: ChannelGeometry {
                length: 20.0e-3,
                hydraulic_diameter: 0.6e-3,
            },
            c_kappa: 2.0e-4,
            asymmetry_epsilon: 0.0,
            parasitic_fraction: 0.09,
            creep: Creep {
                amplitude: 0.05,
                tau_creep: 2.0,
            },
            chamber_compliance: 5.0e-12,
            chamber_rest_volume: 2.0e-6,
            arc_length: 0.05,
            tip_sealed: false,
        }
    }
}

impl ActuatorModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(format!("actuator: {msg}")));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.segments_per_side == 0 {
            return bad("segments_per_side must be at least 1".into());
        }
        for (name, g) in [
            ("segment_channel", &self.segment_channel),
            ("tip_constriction", &self.tip_constriction),
        ] {
            if !(positive(g.length) && positive(g.hydraulic_diameter)) {
                return bad(format!("{name} dimensions must be positive"));
            }
        }
        if self.tip_constriction.hydraulic_diameter >= self.segment_channel.hydraulic_diameter {
            return bad("tip diameter must be smaller than the segment channel diameter".into());
        }
        if !positive(self.c_kappa) {
            return bad(format!("c_kappa must be positive, got {}", self.c_kappa));
        }
        if !(self.asymmetry_epsilon.abs() < 0.5) {
            return bad(format!(
                "asymmetry_epsilon must lie in (-0.5, 0.5), got {}",
                self.asymmetry_epsilon
            ));
        }
        if !(0.0..1.0).contains(&self.parasitic_fraction) {
            return bad(format!(
                "parasitic_fraction must lie in [0, 1), got {}",
                self.parasitic_fraction
            ));
        }
        if !(self.creep.amplitude >= 0.0 && self.creep.amplitude.is_finite()) {
            return bad("creep amplitude must be non-negative".into());
        }
        if !positive(self.creep.tau_creep) {
            return bad("tau_creep must be positive".into());
        }
        if !positive(self.chamber_compliance) || !positive(self.chamber_rest_volume) {
            return bad("chamber compliance and rest volume must be positive".into());
        }
        if !positive(self.arc_length) {
            return bad("arc_length must be positive".into());
        }
        Ok(())
    }

    /// Length of each port's parasitic channel (segment diameter), m.
    ///
    /// Chosen so the two parasitic channels take fraction p of the total loss
    /// of the symmetric (ε = 0) loop; the ratio is the same for any fluid and flow.
    pub fn parasitic_length(&self) -> f64 {
        let p = self.parasitic_fraction;
        let seg = &self.segment_channel;
        let tip = &self.tip_constriction;
        let tip_as_segment = tip.length * (seg.hydraulic_diameter / tip.hydraulic_diameter).powi(4);
        p / (2.0 * (1.0 - p)) * (2.0 * self.segments_per_side as f64 * seg.length + tip_as_segment)
    }

    /// Total port-to-port resistance of the symmetric loop, Pa·s/m³.
    pub fn loop_resistance(&self, fluid: &Fluid) -> f64 {
        let seg = self.segment_channel.resistance(fluid);
        let par = seg * self.parasitic_length() / self.segment_channel.length;
        2.0 * par + 2.0 * self.segments_per_side as f64 * seg + self.tip_constriction.resistance(fluid)
    }
}

/// Node and element ids of one actuator inside a larger network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorFragment {
    pub name: String,
    pub left_port: NodeId,
    pub right_port: NodeId,
    /// Chamber nodes from the left port towards the tip.
    pub left_chambers: Vec<NodeId>,
    /// Chamber nodes from the right port towards the tip.
    pub right_chambers: Vec<NodeId>,
    pub tip: ElementId,
    pub chambers: Vec<ElementId>,
    pub segments: Vec<ElementId>,
    pub parasitic: Vec<ElementId>,
}

impl ActuatorFragment {
    /// Channels on the flow path: parasitic, segments and tip.
    pub fn channel_count(&self) -> usize {
        self.segments.len() + self.parasitic.len() + 1
    }
}

/// Adds an actuator between two existing nodes of `network`. Chambers are
/// referenced to `ground`, which must be a reservoir node.
///
/// Node and element ids are prefixed with `name.`.
pub fn build_actuator_network(
    model: &ActuatorModel,
    network: &mut Network,
    name: &str,
    left_port: &str,
    right_port: &str,
    ground: &str,
) -> Result<ActuatorFragment> {
    model.validate()?;
    for id in [left_port, right_port, ground] {
        if network.node(id).is_none() {
            return Err(Error::Lookup(format!("actuator `{name}`: no node `{id}`")));
        }
    }
    if !network.node(ground).is_some_and(|n| n.is_reservoir()) {
        return Err(Error::Configuration(format!(
            "actuator `{name}`: chamber ground `{ground}` must be a reservoir"
        )));
    }
    let n = model.segments_per_side;
    let seg = model.segment_channel;
    let channel = |g: ChannelGeometry| Law::Channel {
        length: g.length,
        hydraulic_diameter: g.hydraulic_diameter,
    };
    let chamber = Law::ComplianceChamber {
        rest_volume: model.chamber_rest_volume,
        compliance: model.chamber_compliance,
    };

    let mut fragment = ActuatorFragment {
        name: name.to_string(),
        left_port: left_port.into(),
        right_port: right_port.into(),
        left_chambers: Vec::with_capacity(n),
        right_chambers: Vec::with_capacity(n),
        tip: format!("{name}.tip").into(),
        chambers: Vec::with_capacity(2 * n),
        segments: Vec::with_capacity(2 * n),
        parasitic: Vec::new(),
    };

    for side in ['L', 'R'] {
        let port = if side == 'L' { left_port } else { right_port };
        let mut prev = port.to_string();
        if model.parasitic_fraction > 0.0 {
            let inner = format!("{name}.{side}0");
            network.add_interior(inner.as_str())?;
            let par = ChannelGeometry {
                length: model.parasitic_length(),
                hydraulic_diameter: seg.hydraulic_diameter,
            };
            let id = format!("{name}.par_{side}");
            let (from, to) = if side == 'L' {
                (port, inner.as_str())
            } else {
                (inner.as_str(), port)
            };
            network.add_element(Element::new(id.as_str(), from, to, channel(par)))?;
            fragment.parasitic.push(id.into());
            prev = inner;
        }
        for i in 1..=n {
            let node = format!("{name}.{side}{i}");
            network.add_interior(node.as_str())?;
            let id = format!("{name}.seg_{side}{i}");
            // Positive flow always runs left port → tip → right port.
            let (from, to) = if side == 'L' {
                (prev.as_str(), node.as_str())
            } else {
                (node.as_str(), prev.as_str())
            };
            network.add_element(Element::new(id.as_str(), from, to, channel(seg)))?;
            fragment.segments.push(id.into());
            let ch = format!("{name}.ch_{side}{i}");
            network.add_element(Element::new(ch.as_str(), node.as_str(), ground, chamber))?;
            fragment.chambers.push(ch.into());
            if side == 'L' {
                fragment.left_chambers.push(node.as_str().into());
            } else {
                fragment.right_chambers.push(node.as_str().into());
            }
            prev = node;
        }
    }

    let mut tip = Element::new(
        fragment.tip.clone(),
        format!("{name}.L{n}"),
        format!("{name}.R{n}"),
        Law::DirectionalChannel {
            length: model.tip_constriction.length,
            hydraulic_diameter: model.tip_constriction.hydraulic_diameter,
            asymmetry: model.asymmetry_epsilon,
        },
    );
    tip.enabled = !model.tip_sealed;
    network.add_element(tip)?;
    Ok(fragment)
}

/// Quasi-static state of one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Pa
    pub delta_p_chambers: f64,
    /// 1/m
    pub curvature: f64,
    /// Flow through the tip, m³/s, positive left → right.
    pub flow_through: f64,
}

/// Mean left-chamber pressure minus mean right-chamber pressure, Pa.
pub fn chamber_pressure_difference(solved: &SteadyState, fragment: &ActuatorFragment) -> Result<f64> {
    let mean = |nodes: &[NodeId]| -> Result<f64> {
        let mut sum = 0.0;
        for n in nodes {
            sum += solved.pressure(n.as_str())?;
        }
        Ok(sum / nodes.len() as f64)
    };
    Ok(mean(&fragment.left_chambers)? - mean(&fragment.right_chambers)?)
}

pub fn quasi_static_curvature(delta_p: f64, model: &ActuatorModel) -> f64 {
    model.c_kappa * delta_p
}

pub fn actuator_state(
    solved: &SteadyState,
    fragment: &ActuatorFragment,
    model: &ActuatorModel,
) -> Result<ActuatorState> {
    let dp = chamber_pressure_difference(solved, fragment)?;
    Ok(ActuatorState {
        delta_p_chambers: dp,
        curvature: quasi_static_curvature(dp, model),
        flow_through: solved.flow(fragment.tip.as_str())?,
    })
}

/// The same actuator with its tip sealed.
pub fn static_variant(model: &ActuatorModel) -> ActuatorModel {
    ActuatorModel {
        tip_sealed: true,
        ..model.clone()
    }
}

/// Volume that must enter one side's chambers to lift them by `delta_p`, m³.
///
/// For a gas the rest volume also has to be compressed to the new pressure
/// (isothermal, starting from atmosphere).
pub fn fill_volume(model: &ActuatorModel, fluid: &Fluid, delta_p: f64) -> f64 {
    let p = delta_p.abs();
    let per_chamber = model.chamber_compliance * p
        + if fluid.is_compressible() {
            model.chamber_rest_volume * p / (STANDARD_ATMOSPHERE + p)
        } else {
            0.0
        };
    model.segments_per_side as f64 * per_chamber
}

/// τ_fill = ΔV_target / Q, s.
pub fn fill_time_constant(
    model: &ActuatorModel,
    fluid: &Fluid,
    delta_p: f64,
    loop_flow: f64,
) -> Result<f64> {
    if !(loop_flow.abs() > 0.0 && loop_flow.is_finite()) {
        return Err(Error::Domain(format!(
            "fill time needs a non-zero loop flow, got {loop_flow}"
        )));
    }
    Ok(fill_volume(model, fluid, delta_p) / loop_flow.abs())
}

/// Curvature of a first-order fill with time constant `tau_fill` followed by creep.
pub fn response_at(model: &ActuatorModel, tau_fill: f64, final_curvature: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a = model.creep.amplitude;
    let fill = -(-t / tau_fill).exp_m1();
    let creep = -(-t / model.creep.tau_creep).exp_m1();
    final_curvature * fill * (1.0 + a * creep) / (1.0 + a)
}

/// Curvature samples at t = k / fps for k = 0..=round(duration·fps), 1/m.
pub fn response_curve(
    model: &ActuatorModel,
    fluid: &Fluid,
    loop_flow: f64,
    final_curvature: f64,
    fps: f64,
    duration: f64,
) -> Result<Vec<f64>> {
    if !(loop_flow > 0.0) {
        return Err(Error::Domain(format!(
            "response curve needs a positive loop flow, got {loop_flow}"
        )));
    }
    if !(fps > 0.0 && duration > 0.0 && fps.is_finite() && duration.is_finite()) {
        return Err(Error::Domain("fps and duration must be positive".into()));
    }
    let delta_p = final_curvature / model.c_kappa;
    let tau = fill_time_constant(model, fluid, delta_p, loop_flow)?;
    let frames = (duration * fps).round() as usize;
    Ok((0..=frames)
        .map(|k| response_at(model, tau, final_curvature, k as f64 / fps))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Supply at the left port.
    Forward,
    Reverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

/// How the single-actuator rig is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drive {
    /// Ideal regulator holding the supplied port at this gauge pressure, Pa.
    Pressure { pressure: f64 },
    /// Positive-displacement pump, m³/s.
    Flow { flow: f64 },
}

/// Single actuator between two ports, each tied to the reservoir through a
/// source: the supplied port is driven, the other held at 0 Pa.
#[derive(Debug, Clone)]
pub struct Rig {
    pub network: Network,
    pub fragment: ActuatorFragment,
}

pub const RIG_GROUND: &str = "reservoir";

pub fn build_rig(model: &ActuatorModel, fluid: &Fluid, drive: Drive, direction: Direction) -> Result<Rig> {
    let mut network = Network::new(fluid.clone());
    network.add_reservoir(RIG_GROUND, 0.0)?;
    network.add_interior("port_left")?;
    network.add_interior("port_right")?;
    let fragment = build_actuator_network(model, &mut network, "act", "port_left", "port_right", RIG_GROUND)?;
    let (supplied, other) = match direction {
        Direction::Forward => ("port_left", "port_right"),
        Direction::Reverse => ("port_right", "port_left"),
    };
    let law = match drive {
        Drive::Pressure { pressure } => Law::PressureSource { p_set: pressure },
        Drive::Flow { flow } => Law::FlowSource { q_set: flow },
    };
    network.add_element(Element::new("src_supply", RIG_GROUND, supplied, law))?;
    network.add_element(Element::new(
        "src_return",
        RIG_GROUND,
        other,
        Law::PressureSource { p_set: 0.0 },
    ))?;
    Ok(Rig { network, fragment })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSolution {
    pub state: SteadyState,
    pub actuator: ActuatorState,
    /// Flow delivered by the supply, m³/s (positive into the actuator).
    pub loop_flow: f64,
}

pub fn solve_rig(
    model: &ActuatorModel,
    fluid: &Fluid,
    drive: Drive,
    direction: Direction,
    settings: &SolverSettings,
) -> Result<RigSolution> {
    let rig = build_rig(model, fluid, drive, direction)?;
    let state = solve_steady(&rig.network, settings)?;
    let actuator = actuator_state(&state, &rig.fragment, model)?;
    let loop_flow = state.flow("src_supply")?;
    Ok(RigSolution {
        state,
        actuator,
        loop_flow,
    })
}

/// |κ₊ − κ₋| / mean(|κ₊|, |κ₋|) between the two supply directions.
pub fn direction_variance(
    model: &ActuatorModel,
    fluid: &Fluid,
    drive: Drive,
    settings: &SolverSettings,
) -> Result<f64> {
    let fwd = solve_rig(model, fluid, drive, Direction::Forward, settings)?.actuator.curvature.abs();
    let rev = solve_rig(model, fluid, drive, Direction::Reverse, settings)?.actuator.curvature.abs();
    let mean = 0.5 * (fwd + rev);
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok((fwd - rev).abs() / mean)
}

/// Bisects ε ∈ [0, 0.5) for a target direction variance.
pub fn calibrate_asymmetry(
    model: &ActuatorModel,
    fluid: &Fluid,
    drive: Drive,
    target: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    let variance = |eps: f64| {
        let m = ActuatorModel {
            asymmetry_epsilon: eps,
            ..model.clone()
        };
        direction_variance(&m, fluid, drive, settings)
    };
    let (mut lo, mut hi) = (0.0, 0.5 - 1e-9);
    if variance(hi)? < target {
        return Err(Error::Configuration(format!(
            "direction variance {target} is out of reach for |ε| < 0.5"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if variance(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Relative curvature loss of the recirculating actuator against its sealed
/// variant at the same supply pressure.
pub fn recirculation_deficit(
    model: &ActuatorModel,
    fluid: &Fluid,
    pressure: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    let drive = Drive::Pressure { pressure };
    let open = solve_rig(model, fluid, drive, Direction::Forward, settings)?;
    let sealed = solve_rig(&static_variant(model), fluid, drive, Direction::Forward, settings)?;
    let reference = sealed.actuator.curvature;
    if reference == 0.0 {
        return Err(Error::Domain("sealed actuator does not bend".into()));
    }
    Ok(1.0 - open.actuator.curvature / reference)
}

/// Fill time of the actuator rig at a supply pressure.
pub fn rig_fill_time(
    model: &ActuatorModel,
    fluid: &Fluid,
    pressure: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    let s = solve_rig(model, fluid, Drive::Pressure { pressure }, Direction::Forward, settings)?;
    fill_time_constant(model, fluid, s.actuator.delta_p_chambers, s.loop_flow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillCalibration {
    pub chamber_rest_volume: f64,
    /// τ_fill(liquid) / τ_fill(gas) at the calibrated rest volume.
    pub ratio: f64,
}

/// Bisects the chamber rest volume (in log space) so that the liquid/gas fill
/// time ratio at `pressure` hits `target_ratio`.
///
/// A larger rest volume slows the gas fill only, so the ratio falls
/// monotonically from Q_gas/Q_liquid at zero volume.
pub fn calibrate_rest_volume(
    model: &ActuatorModel,
    liquid: &Fluid,
    gas: &Fluid,
    pressure: f64,
    target_ratio: f64,
    settings: &SolverSettings,
) -> Result<FillCalibration> {
    let ratio = |v: f64| -> Result<f64> {
        let m = ActuatorModel {
            chamber_rest_volume: v,
            ..model.clone()
        };
        Ok(rig_fill_time(&m, liquid, pressure, settings)? / rig_fill_time(&m, gas, pressure, settings)?)
    };
    let (mut lo, mut hi): (f64, f64) = (1e-15, 1.0);
    if !(ratio(lo)? > target_ratio && ratio(hi)? < target_ratio) {
        return Err(Error::Configuration(format!(
            "fill-time ratio {target_ratio} is not bracketed by rest volumes in [1e-15, 1] m³"
        )));
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if ratio(mid)? > target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = (lo * hi).sqrt();
    Ok(FillCalibration {
        chamber_rest_volume: v,
        ratio: ratio(v)?,
    })
}
