//! Backward-Euler integration of chamber volumes and channel inertia.
//!
//! Each step re-solves the algebraic network with every compliance chamber
//! replaced by its discretised mass balance and every inertive channel by
//! its discretised momentum balance, so every snapshot satisfies the
//! instantaneous network equations.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::audit::{audit_with, PowerAudit};
use super::laws::channel_resistance;
use super::solve::{solve_mode, Mode, StepHistory};
use super::{ElementId, Law, Network, SolverSettings, SteadyState};
use crate::error::{Error, Result};

/// A change applied to one element at a scheduled time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", content = "value", rename_all = "snake_case")]
pub enum ElementControl {
    /// Constriction opening in [0, 1].
    Opening(f64),
    /// Source setpoint (Pa for pressure sources, m³/s for flow sources).
    Setpoint(f64),
    Enabled(bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    /// s
    pub time: f64,
    pub controls: Vec<(ElementId, ElementControl)>,
}

/// Piecewise-constant control changes, sorted by time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSchedule {
    events: Vec<ControlEvent>,
}

impl ControlSchedule {
    pub fn new(mut events: Vec<ControlEvent>) -> Result<Self> {
        if let Some(bad) = events.iter().find(|e| !(e.time.is_finite() && e.time >= 0.0)) {
            return Err(Error::Configuration(format!(
                "control event time must be finite and non-negative, got {}",
                bad.time
            )));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(ControlSchedule { events })
    }

    pub fn empty() -> Self {
        ControlSchedule::default()
    }

    pub fn events(&self) -> &[ControlEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientSettings {
    /// Include channel inertance (ρ·L/A) in the momentum balance.
    pub inertance: bool,
    /// Initial p(from) − p(to) per compliance chamber, Pa; unlisted chambers start at 0.
    pub initial_chamber_pressures: IndexMap<ElementId, f64>,
}

impl Default for TransientSettings {
    fn default() -> Self {
        TransientSettings {
            inertance: true,
            initial_chamber_pressures: IndexMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientSnapshot {
    pub t: f64,
    pub step: u64,
    pub state: SteadyState,
    /// Stored volume per compliance chamber, m³.
    pub chamber_volumes: IndexMap<ElementId, f64>,
    pub audit: PowerAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub snapshots: Vec<TransientSnapshot>,
}

impl TransientTrace {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &TransientSnapshot {
        self.snapshots.last().expect("a trace always holds its initial snapshot")
    }
}

/// Steps a network forward in time with a fixed step; controls may be
/// changed between steps.
#[derive(Debug, Clone)]
pub struct TransientIntegrator {
    network: Network,
    solver: SolverSettings,
    inertance: bool,
    history: StepHistory,
    current: TransientSnapshot,
}

impl TransientIntegrator {
    /// Builds the integrator and its consistent initial snapshot at t = 0.
    pub fn new(
        network: Network,
        dt: f64,
        solver: SolverSettings,
        settings: &TransientSettings,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Configuration(format!("dt must be positive, got {dt}")));
        }
        let mut pinned = vec![0.0; network.elements.len()];
        for (id, p) in &settings.initial_chamber_pressures {
            let i = network
                .element_index(id.as_str())
                .filter(|&i| matches!(network.elements[i].law, Law::ComplianceChamber { .. }))
                .ok_or_else(|| Error::Lookup(format!("no compliance chamber `{id}`")))?;
            pinned[i] = *p;
        }
        let state = solve_mode(&network, &solver, Mode::Init(&pinned), None)?;
        let mut integrator = TransientIntegrator {
            history: StepHistory {
                dt,
                inertance: settings.inertance,
                prev_flow: vec![0.0; network.elements.len()],
                prev_mass: vec![0.0; network.elements.len()],
            },
            network,
            solver,
            inertance: settings.inertance,
            current: TransientSnapshot {
                t: 0.0,
                step: 0,
                state: state.clone(),
                chamber_volumes: IndexMap::new(),
                audit: PowerAudit::default(),
            },
        };
        integrator.current = integrator.snapshot_from(0, state)?;
        integrator.update_history()?;
        Ok(integrator)
    }

    pub fn dt(&self) -> f64 {
        self.history.dt
    }

    pub fn time(&self) -> f64 {
        self.current.t
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn snapshot(&self) -> &TransientSnapshot {
        &self.current
    }

    /// Changes element controls; they take effect from the next step.
    pub fn apply(&mut self, controls: &[(ElementId, ElementControl)]) -> Result<()> {
        let mut next = self.network.clone();
        for (id, control) in controls {
            next.apply_control(id.as_str(), *control)?;
        }
        self.network = next;
        Ok(())
    }

    pub fn step(&mut self) -> Result<&TransientSnapshot> {
        let step = self.current.step + 1;
        let t = step as f64 * self.history.dt;
        let state = solve_mode(
            &self.network,
            &self.solver,
            Mode::Step(&self.history),
            Some(&self.current.state),
        )
        .map_err(|e| Error::TransientStep {
            time: t,
            source: Box::new(e),
        })?;
        self.current = self.snapshot_from(step, state)?;
        self.update_history()?;
        Ok(&self.current)
    }

    fn snapshot_from(&self, step: u64, state: SteadyState) -> Result<TransientSnapshot> {
        let mut chamber_volumes = IndexMap::new();
        for e in &self.network.elements {
            if let Law::ComplianceChamber {
                rest_volume,
                compliance,
            } = e.law
            {
                let dp = state.pressure(e.from.as_str())? - state.pressure(e.to.as_str())?;
                chamber_volumes.insert(e.id.clone(), rest_volume + compliance * dp);
            }
        }
        let mu = self.network.fluid.dynamic_viscosity;
        let inertance = self.inertance && step > 0;
        let audit = audit_with(&state, &self.network, |_, law, dp, q| {
            if !inertance {
                return dp * q;
            }
            match *law {
                Law::Channel {
                    length,
                    hydraulic_diameter,
                } => channel_resistance(length, hydraulic_diameter, mu) * q * q,
                Law::DirectionalChannel {
                    length,
                    hydraulic_diameter,
                    asymmetry,
                } => {
                    let r = channel_resistance(length, hydraulic_diameter, mu);
                    let scale = if q >= 0.0 { 1.0 + asymmetry } else { 1.0 - asymmetry };
                    r * scale * q * q
                }
                _ => dp * q,
            }
        })?;
        Ok(TransientSnapshot {
            t: step as f64 * self.history.dt,
            step,
            state,
            chamber_volumes,
            audit,
        })
    }

    fn update_history(&mut self) -> Result<()> {
        let fluid = &self.network.fluid;
        for (i, e) in self.network.elements.iter().enumerate() {
            self.history.prev_flow[i] = self.current.state.flow(e.id.as_str())?;
            if let Law::ComplianceChamber {
                rest_volume,
                compliance,
            } = e.law
            {
                let pf = self.current.state.pressure(e.from.as_str())?;
                let pt = self.current.state.pressure(e.to.as_str())?;
                let rho = fluid.storage_density(self.solver.p_ambient + pf)?;
                self.history.prev_mass[i] = rho * (rest_volume + compliance * (pf - pt));
            }
        }
        Ok(())
    }
}

/// Runs `network` from t = 0 to `t_end` with step `dt`, applying scheduled
/// control events. An event at time t takes effect in the step that ends at
/// the first grid time ≥ t.
pub fn simulate_transient(
    network: &Network,
    schedule: &ControlSchedule,
    t_end: f64,
    dt: f64,
    solver: &SolverSettings,
    settings: &TransientSettings,
) -> Result<TransientTrace> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Configuration(format!(
            "t_end must be finite and non-negative, got {t_end}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Configuration(format!("dt must be positive, got {dt}")));
    }
    let slack = 1e-9 * dt;
    let events = schedule.events();
    let mut next_event = 0;
    let mut initial = network.clone();
    while next_event < events.len() && events[next_event].time <= slack {
        for (id, control) in &events[next_event].controls {
            initial.apply_control(id.as_str(), *control)?;
        }
        next_event += 1;
    }
    let mut integrator = TransientIntegrator::new(initial, dt, *solver, settings)?;
    let ratio = t_end / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round()
    } else {
        ratio.ceil()
    } as u64;
    let mut snapshots = Vec::with_capacity(steps as usize + 1);
    snapshots.push(integrator.snapshot().clone());
    for k in 0..steps {
        let t_next = (k + 1) as f64 * dt;
        while next_event < events.len() && events[next_event].time <= t_next + slack {
            integrator.apply(&events[next_event].controls)?;
            next_event += 1;
        }
        snapshots.push(integrator.step()?.clone());
    }
    Ok(TransientTrace { snapshots })
}
