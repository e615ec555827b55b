//! Live, steerable transient sessions.
//!
//! A [`Session`] owns one transient integration of an assembly, stepping at
//! a fixed tick rate. Control frames change port roles; an accepted frame
//! takes effect in the next tick. Every accepted change and every published
//! snapshot can be written to a JSON-lines log, and [`replay`] re-runs such a
//! log offline through [`simulate_transient`].

use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::assembly::{build_assembly_network, role_schedule, AssemblyNetwork, AssemblySpec, PortRole, RoleSchedule};
use crate::circuit::{simulate_transient, PowerAudit, SolverSettings, TransientIntegrator, TransientSettings};
use crate::error::{Error, Result};

pub const DEFAULT_TICK_RATE: f64 = 50.0;

/// Requested port roles. Ports not listed keep their current role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlFrame {
    pub seq: u64,
    /// Client clock, s. Informational only.
    #[serde(default)]
    pub timestamp: f64,
    pub roles: IndexMap<String, PortRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Ack {
    /// Accepted; in effect from tick `effective_tick`.
    Applied { seq: u64, effective_tick: u64 },
    /// Sequence number not above the last accepted one; ignored.
    Stale { seq: u64, last_seq: u64 },
    /// Rejected; previous controls retained.
    InvalidControls { seq: u64, reason: String },
}

impl Ack {
    pub fn seq(&self) -> u64 {
        match self {
            Ack::Applied { seq, .. } | Ack::Stale { seq, .. } | Ack::InvalidControls { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbSnapshot {
    pub name: String,
    /// 1/m
    pub curvature: f64,
    /// Pa
    pub delta_p: f64,
    /// Flow through the tip, m³/s.
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: String,
    pub tick: u64,
    /// s
    pub t: f64,
    /// Last accepted sequence number in effect at this tick.
    pub applied_seq: Option<u64>,
    pub roles: IndexMap<String, PortRole>,
    pub limbs: Vec<LimbSnapshot>,
    pub audit: PowerAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub id: String,
    pub spec: AssemblySpec,
    pub tick_rate: f64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub transient: TransientSettings,
}

/// One line of a replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    Session(SessionConfig),
    /// Full role set in force from `tick` on.
    Controls {
        tick: u64,
        seq: u64,
        roles: IndexMap<String, PortRole>,
    },
    Snapshot(Snapshot),
}

/// Supply off and every vent fully open.
pub fn neutral_roles(spec: &AssemblySpec) -> Result<IndexMap<String, PortRole>> {
    Ok(spec
        .ports()?
        .into_iter()
        .map(|p| (p, PortRole::Vent { opening: 1.0 }))
        .collect())
}

pub struct Session {
    config: SessionConfig,
    net: AssemblyNetwork,
    integrator: TransientIntegrator,
    roles: IndexMap<String, PortRole>,
    pending: Option<IndexMap<String, PortRole>>,
    applied_seq: Option<u64>,
    last_seq: Option<u64>,
    latest: Snapshot,
    log: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.config.id)
            .field("tick", &self.latest.tick)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self> {
        if !(config.tick_rate > 0.0 && config.tick_rate.is_finite()) {
            return Err(Error::Configuration(format!(
                "tick rate must be positive, got {}",
                config.tick_rate
            )));
        }
        config.solver.validate()?;
        let mut net = build_assembly_network(&config.spec)?;
        let roles = neutral_roles(&config.spec)?;
        net.apply_roles(&roles)?;
        let integrator = TransientIntegrator::new(
            net.network.clone(),
            1.0 / config.tick_rate,
            config.solver,
            &config.transient,
        )?;
        let mut session = Session {
            latest: Snapshot {
                session: config.id.clone(),
                tick: 0,
                t: 0.0,
                applied_seq: None,
                roles: roles.clone(),
                limbs: Vec::new(),
                audit: PowerAudit::default(),
            },
            config,
            net,
            integrator,
            roles,
            pending: None,
            applied_seq: None,
            last_seq: None,
            log: None,
        };
        session.latest = session.publish()?;
        Ok(session)
    }

    /// Starts logging; writes the session header and the initial snapshot.
    /// Must be called before the first tick so the log replays from t = 0.
    pub fn record_to(&mut self, mut sink: Box<dyn Write + Send>) -> Result<()> {
        if self.latest.tick != 0 {
            return Err(Error::Configuration(
                "recording must start before the first tick".into(),
            ));
        }
        write_entry(&mut sink, &LogEntry::Session(self.config.clone()))?;
        write_entry(&mut sink, &LogEntry::Snapshot(self.latest.clone()))?;
        self.log = Some(sink);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn ports(&self) -> Vec<String> {
        self.net.circuits.iter().flatten().cloned().collect()
    }

    pub fn dt(&self) -> f64 {
        self.integrator.dt()
    }

    pub fn roles(&self) -> &IndexMap<String, PortRole> {
        self.pending.as_ref().unwrap_or(&self.roles)
    }

    pub fn latest(&self) -> &Snapshot {
        &self.latest
    }

    /// Validates and queues a frame for the next tick.
    pub fn apply_controls(&mut self, frame: &ControlFrame) -> Ack {
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                return Ack::Stale {
                    seq: frame.seq,
                    last_seq: last,
                };
            }
        }
        let mut merged = self.roles().clone();
        for (port, role) in &frame.roles {
            if !merged.contains_key(port) {
                return Ack::InvalidControls {
                    seq: frame.seq,
                    reason: format!("unknown port `{port}`"),
                };
            }
            merged.insert(port.clone(), *role);
        }
        if let Err(e) = self.net.check_roles(&merged) {
            return Ack::InvalidControls {
                seq: frame.seq,
                reason: e.to_string(),
            };
        }
        self.last_seq = Some(frame.seq);
        self.pending = Some(merged);
        Ack::Applied {
            seq: frame.seq,
            effective_tick: self.latest.tick + 1,
        }
    }

    /// Advances one tick and returns the new snapshot.
    pub fn tick(&mut self) -> Result<Snapshot> {
        if let Some(roles) = self.pending.take() {
            let controls = self.net.role_controls(&roles)?;
            self.integrator.apply(&controls)?;
            self.roles = roles;
            self.applied_seq = self.last_seq;
            if let Some(sink) = self.log.as_mut() {
                write_entry(
                    sink,
                    &LogEntry::Controls {
                        tick: self.latest.tick + 1,
                        seq: self.applied_seq.unwrap_or(0),
                        roles: self.roles.clone(),
                    },
                )?;
            }
        }
        self.integrator.step()?;
        self.latest = self.publish()?;
        if let Some(sink) = self.log.as_mut() {
            write_entry(sink, &LogEntry::Snapshot(self.latest.clone()))?;
        }
        Ok(self.latest.clone())
    }

    fn publish(&self) -> Result<Snapshot> {
        let snap = self.integrator.snapshot();
        Ok(Snapshot {
            session: self.config.id.clone(),
            tick: snap.step,
            t: snap.t,
            applied_seq: self.applied_seq,
            roles: self.roles.clone(),
            limbs: limb_snapshots(&self.net, &snap.state)?,
            audit: snap.audit,
        })
    }
}

fn limb_snapshots(net: &AssemblyNetwork, state: &crate::circuit::SteadyState) -> Result<Vec<LimbSnapshot>> {
    Ok(net
        .limb_states(state)?
        .into_iter()
        .map(|(name, s)| LimbSnapshot {
            name,
            curvature: s.curvature,
            delta_p: s.delta_p_chambers,
            flow: s.flow_through,
        })
        .collect())
}

pub fn write_entry<W: Write + ?Sized>(sink: &mut W, entry: &LogEntry) -> Result<()> {
    let line = serde_json::to_string(entry).map_err(|e| Error::Io(e.to_string()))?;
    sink.write_all(line.as_bytes())?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub config: SessionConfig,
    /// (tick, roles) in order of effect.
    pub controls: Vec<(u64, IndexMap<String, PortRole>)>,
    pub snapshots: Vec<Snapshot>,
}

pub fn read_log<R: BufRead>(reader: R) -> Result<ReplayLog> {
    let mut config = None;
    let mut controls = Vec::new();
    let mut snapshots = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match entry {
            LogEntry::Session(c) if config.is_none() => config = Some(c),
            LogEntry::Session(_) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "second session header".into(),
                })
            }
            LogEntry::Controls { tick, roles, .. } => controls.push((tick, roles)),
            LogEntry::Snapshot(s) => snapshots.push(s),
        }
    }
    let config = config.ok_or_else(|| Error::Parse {
        line: 1,
        message: "log has no session header".into(),
    })?;
    Ok(ReplayLog {
        config,
        controls,
        snapshots,
    })
}

/// Re-runs a log offline. Returns one snapshot per tick from 0 to the last
/// logged tick.
pub fn replay(log: &ReplayLog) -> Result<Vec<Snapshot>> {
    let cfg = &log.config;
    let net = build_assembly_network(&cfg.spec)?;
    let dt = 1.0 / cfg.tick_rate;
    let mut schedule: RoleSchedule = vec![(0.0, neutral_roles(&cfg.spec)?)];
    schedule.extend(log.controls.iter().map(|(tick, roles)| (*tick as f64 * dt, roles.clone())));
    let controls = role_schedule(&net, &schedule)?;
    let last = log.snapshots.iter().map(|s| s.tick).max().unwrap_or(0);
    let trace = simulate_transient(&net.network, &controls, last as f64 * dt, dt, &cfg.solver, &cfg.transient)?;
    let mut roles = schedule[0].1.clone();
    let mut next = 0;
    trace
        .snapshots
        .iter()
        .map(|s| {
            while next < log.controls.len() && log.controls[next].0 <= s.step {
                roles = log.controls[next].1.clone();
                next += 1;
            }
            Ok(Snapshot {
                session: cfg.id.clone(),
                tick: s.step,
                t: s.t,
                applied_seq: None,
                roles: roles.clone(),
                limbs: limb_snapshots(&net, &s.state)?,
                audit: s.audit,
            })
        })
        .collect()
}

/// Largest curvature difference between logged and replayed snapshots at equal ticks.
pub fn replay_discrepancy(log: &ReplayLog) -> Result<f64> {
    let offline = replay(log)?;
    let mut worst: f64 = 0.0;
    for s in &log.snapshots {
        let o = offline
            .iter()
            .find(|o| o.tick == s.tick)
            .ok_or_else(|| Error::Lookup(format!("tick {} missing from replay", s.tick)))?;
        for (a, b) in s.limbs.iter().zip(&o.limbs) {
            worst = worst.max((a.curvature - b.curvature).abs());
        }
    }
    Ok(worst)
}
