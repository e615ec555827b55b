use serde::{Deserialize, Serialize};

use super::{Law, Network, SteadyState};
use crate::error::{Error, Result};

/// Power delivered by sources and absorbed by the rest of the network, W.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerAudit {
    /// Power injected by flow/pressure sources and by reservoirs held above 0 Pa.
    pub source_power: f64,
    /// Viscous and orifice losses.
    pub dissipated_power: f64,
    /// Rate of energy stored in chambers and fluid inertia (zero at steady state).
    pub storage_power: f64,
}

impl PowerAudit {
    /// |source − dissipated − storage| relative to the largest term.
    pub fn imbalance(&self) -> f64 {
        let gap = (self.source_power - self.dissipated_power - self.storage_power).abs();
        let scale = self
            .source_power
            .abs()
            .max(self.dissipated_power.abs())
            .max(self.storage_power.abs());
        if scale == 0.0 {
            0.0
        } else {
            gap / scale
        }
    }

    pub fn is_balanced(&self, tol: f64) -> bool {
        self.imbalance() <= tol
    }
}

/// Splits Σ ΔP·Q over a solved state into source power and dissipation.
///
/// By Tellegen's theorem the total of ΔP·Q over every element equals the
/// power drawn from reservoirs, so the two sides agree whenever the state
/// satisfies flow conservation.
pub fn power_audit(state: &SteadyState, network: &Network) -> Result<PowerAudit> {
    audit_with(state, network, |_, _, dp, q| dp * q)
}

/// Shared by steady and transient audits; `dissipation` returns the part of
/// an element's absorbed power that is lost rather than stored.
pub(crate) fn audit_with(
    state: &SteadyState,
    network: &Network,
    dissipation: impl Fn(usize, &Law, f64, f64) -> f64,
) -> Result<PowerAudit> {
    let mut audit = PowerAudit::default();
    let mut injection = vec![0.0; network.nodes.len()];
    for (index, e) in network.elements.iter().enumerate() {
        let q = state
            .element_flows
            .get(e.id.as_str())
            .copied()
            .ok_or_else(|| Error::Lookup(format!("state has no flow for `{}`", e.id)))?;
        let dp = state.pressure(e.from.as_str())? - state.pressure(e.to.as_str())?;
        let absorbed = dp * q;
        if e.law.is_source() {
            audit.source_power -= absorbed;
        } else if e.law.is_passive() {
            let lost = dissipation(index, &e.law, dp, q);
            audit.dissipated_power += lost;
            audit.storage_power += absorbed - lost;
        } else {
            audit.storage_power += absorbed;
        }
        if let Some(i) = network.node_index(e.from.as_str()) {
            injection[i] += q;
        }
        if let Some(i) = network.node_index(e.to.as_str()) {
            injection[i] -= q;
        }
    }
    for (node, inj) in network.nodes.iter().zip(injection) {
        if let super::NodeKind::Reservoir { pressure } = node.kind {
            audit.source_power += pressure * inj;
        }
    }
    Ok(audit)
}
