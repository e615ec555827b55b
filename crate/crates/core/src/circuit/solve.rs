//! Damped Newton iteration on the nodal equations.
//!
//! Unknowns are interior node pressures plus one branch flow per active
//! constriction and pressure source. Linear-law elements (channels, tesla
//! valves, resistors) and, in transient steps, compliance chambers enter the
//! nodal balance through their flow-as-a-function-of-pressure form; the
//! orifice law is kept in its ΔP(Q) form, which stays smooth at Q = 0.

use std::collections::HashMap;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use super::laws::{compile, smoothed_quadratic, Compiled};
use super::{ElementId, Network, NodeKind, SolverSettings, SteadyState};
use crate::error::{Error, Result};

/// Backward-Euler history consumed by one transient step.
#[derive(Debug, Clone)]
pub(crate) struct StepHistory {
    pub dt: f64,
    pub inertance: bool,
    /// Previous flow per network element index.
    pub prev_flow: Vec<f64>,
    /// Previous ρ·V per network element index (chambers only).
    pub prev_mass: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Mode<'a> {
    Steady,
    Step(&'a StepHistory),
    /// Chambers pinned at the given pressure difference (per element index).
    Init(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed(f64),
    Unknown(usize),
}

#[derive(Debug, Clone, Copy)]
enum Branch {
    None,
    Quadratic(usize),
    Constraint(usize, f64),
}

#[derive(Debug, Clone)]
struct Active {
    index: usize,
    a: Slot,
    b: Slot,
    law: Compiled,
    branch: Branch,
}

struct System<'a> {
    network: &'a Network,
    settings: &'a SolverSettings,
    mode: Mode<'a>,
    node_slots: Vec<Slot>,
    active: Vec<Active>,
    n_pressure: usize,
    n: usize,
    p_ref: f64,
    q_ref: f64,
}

pub fn solve_steady(network: &Network, settings: &SolverSettings) -> Result<SteadyState> {
    solve_mode(network, settings, Mode::Steady, None)
}

/// Steady solve warm-started from a previous state (matched by node and element id).
pub fn solve_steady_with_guess(
    network: &Network,
    settings: &SolverSettings,
    guess: Option<&SteadyState>,
) -> Result<SteadyState> {
    solve_mode(network, settings, Mode::Steady, guess)
}

pub(crate) fn solve_mode(
    network: &Network,
    settings: &SolverSettings,
    mode: Mode<'_>,
    guess: Option<&SteadyState>,
) -> Result<SteadyState> {
    settings.validate()?;
    network.validate()?;
    let system = System::build(network, settings, mode)?;
    let x0 = system.initial_guess(guess);
    let (x, iterations) = system.newton(x0)?;
    system.state(&x, iterations)
}

impl<'a> System<'a> {
    fn build(network: &'a Network, settings: &'a SolverSettings, mode: Mode<'a>) -> Result<Self> {
        let mut node_slots = Vec::with_capacity(network.nodes.len());
        let mut n_pressure = 0;
        for node in &network.nodes {
            node_slots.push(match node.kind {
                NodeKind::Reservoir { pressure } => Slot::Fixed(pressure),
                NodeKind::Interior => {
                    n_pressure += 1;
                    Slot::Unknown(n_pressure - 1)
                }
            });
        }
        let index_of: HashMap<&str, usize> = network
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();

        let mut active = Vec::new();
        let mut n = n_pressure;
        for (index, element) in network.elements.iter().enumerate() {
            if !element.is_active(settings.epsilon_open) {
                continue;
            }
            let law = compile(element, &network.fluid, settings)?;
            let branch = match (law, mode) {
                (Compiled::Chamber { .. }, Mode::Steady) => continue,
                (Compiled::Chamber { .. }, Mode::Init(pinned)) => {
                    n += 1;
                    Branch::Constraint(n - 1, -pinned[index])
                }
                (Compiled::Quadratic { .. }, _) => {
                    n += 1;
                    Branch::Quadratic(n - 1)
                }
                (Compiled::PressureSource { p }, _) => {
                    n += 1;
                    Branch::Constraint(n - 1, p)
                }
                _ => Branch::None,
            };
            active.push(Active {
                index,
                a: node_slots[index_of[element.from.as_str()]],
                b: node_slots[index_of[element.to.as_str()]],
                law,
                branch,
            });
        }

        let mut system = System {
            network,
            settings,
            mode,
            node_slots,
            active,
            n_pressure,
            n,
            p_ref: 1.0,
            q_ref: 0.0,
        };
        system.check_grounded(&index_of)?;
        system.compute_scales();
        Ok(system)
    }

    /// Every node must reach a reservoir through conducting elements; flow
    /// sources do not conduct.
    fn check_grounded(&self, index_of: &HashMap<&str, usize>) -> Result<()> {
        let nodes = &self.network.nodes;
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for act in &self.active {
            if matches!(act.law, Compiled::FlowSource { .. }) {
                continue;
            }
            let e = &self.network.elements[act.index];
            let ra = find(&mut parent, index_of[e.from.as_str()]);
            let rb = find(&mut parent, index_of[e.to.as_str()]);
            parent[ra] = rb;
        }
        let mut grounded = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if node.is_reservoir() {
                let r = find(&mut parent, i);
                grounded[r] = true;
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            let r = find(&mut parent, i);
            if !grounded[r] {
                let fed = self.active.iter().any(|act| {
                    let e = &self.network.elements[act.index];
                    matches!(act.law, Compiled::FlowSource { .. })
                        && (e.from == node.id || e.to == node.id)
                });
                let what = if fed {
                    "flow source has no return path to a reservoir"
                } else {
                    "no path to a reservoir"
                };
                return Err(Error::OpenCircuit(format!("node `{}`: {what}", node.id)));
            }
        }
        Ok(())
    }

    fn compute_scales(&mut self) {
        let mut p_ref: f64 = 1.0;
        for slot in &self.node_slots {
            if let Slot::Fixed(p) = slot {
                p_ref = p_ref.max(p.abs());
            }
        }
        let mut r_max: f64 = 0.0;
        let mut k_max: f64 = 0.0;
        let mut q_src: f64 = 0.0;
        let mut c_max: f64 = 0.0;
        for act in &self.active {
            match act.law {
                Compiled::Linear { r, .. } => {
                    r_max = r_max.max(r.forward.max(r.reverse));
                }
                Compiled::Quadratic { k } => {
                    k_max = k_max.max(k);
                }
                Compiled::FlowSource { q } => q_src = q_src.max(q.abs()),
                Compiled::Chamber { compliance, .. } => c_max = c_max.max(compliance),
                Compiled::PressureSource { .. } => {}
            }
            if let Branch::Constraint(_, p) = act.branch {
                p_ref = p_ref.max(p.abs());
            }
        }
        p_ref = p_ref.max(q_src * r_max).max(k_max * q_src * q_src);
        // The smallest flow the pressure scale drives through any element,
        // so KCL errors stay visible next to branch errors.
        let mut q_ref = f64::INFINITY;
        if r_max > 0.0 {
            q_ref = q_ref.min(p_ref / r_max);
        }
        if k_max > 0.0 {
            q_ref = q_ref.min((p_ref / k_max).sqrt());
        }
        if let Mode::Step(h) = self.mode {
            if c_max > 0.0 {
                q_ref = q_ref.min(c_max * p_ref / h.dt);
            }
        }
        if q_src > 0.0 {
            q_ref = q_src;
        }
        let q_ref = if q_ref.is_finite() { q_ref } else { 0.0 };
        self.p_ref = p_ref;
        self.q_ref = if q_ref > 0.0 { q_ref } else { 1e-30 };
    }

    fn initial_guess(&self, guess: Option<&SteadyState>) -> Vec<f64> {
        let fixed: Vec<f64> = self
            .node_slots
            .iter()
            .filter_map(|s| match s {
                Slot::Fixed(p) => Some(*p),
                Slot::Unknown(_) => None,
            })
            .collect();
        let mean = if fixed.is_empty() {
            0.0
        } else {
            fixed.iter().sum::<f64>() / fixed.len() as f64
        };
        let mut x = vec![0.0; self.n];
        for (node, slot) in self.network.nodes.iter().zip(&self.node_slots) {
            if let Slot::Unknown(i) = *slot {
                x[i] = guess
                    .and_then(|g| g.node_pressures.get(node.id.as_str()).copied())
                    .unwrap_or(mean);
            }
        }
        for act in &self.active {
            let k = match act.branch {
                Branch::Quadratic(k) | Branch::Constraint(k, _) => k,
                Branch::None => continue,
            };
            let id = &self.network.elements[act.index].id;
            x[k] = guess
                .and_then(|g| g.element_flows.get(id.as_str()).copied())
                .unwrap_or(0.0);
        }
        x
    }

    fn pressure(&self, slot: Slot, x: &[f64]) -> f64 {
        match slot {
            Slot::Fixed(p) => p,
            Slot::Unknown(i) => x[i],
        }
    }

    /// Flow through a nodal (non-branch) element and its partial derivatives
    /// with respect to the pressures at its two ends.
    fn nodal_flow(&self, act: &Active, pa: f64, pb: f64) -> Result<(f64, f64, f64)> {
        match act.law {
            Compiled::Linear { r, inertance } => {
                let lag = match self.mode {
                    Mode::Step(h) if h.inertance && inertance > 0.0 => Some((inertance / h.dt, h.prev_flow[act.index])),
                    _ => None,
                };
                match lag {
                    Some((l, q0)) => {
                        let s = pa - pb + l * q0;
                        let g = 1.0 / (r.for_sign(s) + l);
                        Ok((s * g, g, -g))
                    }
                    None => {
                        let s = pa - pb;
                        let g = 1.0 / r.for_sign(s);
                        Ok((s * g, g, -g))
                    }
                }
            }
            Compiled::FlowSource { q } => Ok((q, 0.0, 0.0)),
            Compiled::Chamber {
                rest_volume,
                compliance,
            } => {
                let Mode::Step(h) = self.mode else {
                    unreachable!("chambers are nodal only in transient steps")
                };
                let fluid = &self.network.fluid;
                let abs = self.settings.p_ambient + pa;
                let rho = fluid.storage_density(abs)?;
                let m0 = h.prev_mass[act.index];
                let volume = rest_volume + compliance * (pa - pb);
                let q = (volume - m0 / rho) / h.dt;
                let dqa = (compliance + m0 / rho * fluid.log_density_slope(abs)) / h.dt;
                let dqb = -compliance / h.dt;
                Ok((q, dqa, dqb))
            }
            Compiled::Quadratic { .. } | Compiled::PressureSource { .. } => {
                unreachable!("branch elements carry their flow as an unknown")
            }
        }
    }

    fn evaluate(&self, x: &[f64], jac: Option<&mut DMatrix<f64>>) -> Result<Vec<f64>> {
        self.evaluate_with(x, jac, None)
    }

    /// With `secant`, each orifice branch k uses the linear law ΔP = secant[k]·Q.
    fn evaluate_with(
        &self,
        x: &[f64],
        mut jac: Option<&mut DMatrix<f64>>,
        secant: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut f = vec![0.0; self.n];
        if let Some(j) = jac.as_deref_mut() {
            j.fill(0.0);
        }
        for act in &self.active {
            let pa = self.pressure(act.a, x);
            let pb = self.pressure(act.b, x);
            let (q, dqa, dqb, k) = match act.branch {
                Branch::None => {
                    let (q, dqa, dqb) = self.nodal_flow(act, pa, pb)?;
                    (q, dqa, dqb, None)
                }
                Branch::Quadratic(k) => {
                    let Compiled::Quadratic { k: coeff } = act.law else { unreachable!() };
                    let (dp, slope) = match secant {
                        Some(r) => (r[k] * x[k], r[k]),
                        None => smoothed_quadratic(coeff, x[k], self.settings.q_smooth),
                    };
                    f[k] = pa - pb - dp;
                    if let Some(j) = jac.as_deref_mut() {
                        if let Slot::Unknown(i) = act.a {
                            j[(k, i)] += 1.0;
                        }
                        if let Slot::Unknown(i) = act.b {
                            j[(k, i)] -= 1.0;
                        }
                        j[(k, k)] -= slope;
                    }
                    (x[k], 0.0, 0.0, Some(k))
                }
                Branch::Constraint(k, p) => {
                    f[k] = pb - pa - p;
                    if let Some(j) = jac.as_deref_mut() {
                        if let Slot::Unknown(i) = act.a {
                            j[(k, i)] -= 1.0;
                        }
                        if let Slot::Unknown(i) = act.b {
                            j[(k, i)] += 1.0;
                        }
                    }
                    (x[k], 0.0, 0.0, Some(k))
                }
            };
            for (slot, sign) in [(act.a, 1.0), (act.b, -1.0)] {
                let Slot::Unknown(row) = slot else { continue };
                f[row] += sign * q;
                if let Some(j) = jac.as_deref_mut() {
                    match k {
                        Some(k) => j[(row, k)] += sign,
                        None => {
                            if let Slot::Unknown(c) = act.a {
                                j[(row, c)] += sign * dqa;
                            }
                            if let Slot::Unknown(c) = act.b {
                                j[(row, c)] += sign * dqb;
                            }
                        }
                    }
                }
            }
        }
        Ok(f)
    }

    fn merit(&self, f: &[f64]) -> f64 {
        let (kcl, branch) = f.split_at(self.n_pressure);
        kcl.iter().map(|v| (v / self.q_ref).powi(2)).sum::<f64>()
            + branch.iter().map(|v| (v / self.p_ref).powi(2)).sum::<f64>()
    }

    fn kcl_norm(&self, f: &[f64]) -> f64 {
        f[..self.n_pressure].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn converged_residual(&self, f: &[f64]) -> bool {
        let branch_ok = f[self.n_pressure..]
            .iter()
            .all(|v| v.abs() <= 1e-9 * self.p_ref);
        branch_ok && self.kcl_norm(f) <= self.settings.tol_kcl
    }

    fn scaled_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        dx.iter()
            .zip(x)
            .enumerate()
            .map(|(i, (d, v))| {
                let scale = if i < self.n_pressure { self.p_ref } else { self.q_ref };
                d.abs() / (v.abs() + scale)
            })
            .fold(0.0, f64::max)
    }

    fn newton(&self, mut x: Vec<f64>) -> Result<(Vec<f64>, usize)> {
        if self.n == 0 {
            return Ok((x, 0));
        }
        self.secant_warmup(&mut x);
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut f = self.evaluate(&x, Some(&mut jac))?;
        let mut merit = self.merit(&f);
        for iter in 1..=self.settings.max_iter {
            let dx = linear_solve(&jac, &f)?;
            let step = self.scaled_step(&x, &dx);
            if step <= 1e-10 && self.converged_residual(&f) {
                // Take the final full step unless it spoils the residual.
                let polished: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                if let Ok(fp) = self.evaluate(&polished, None) {
                    if self.converged_residual(&fp) && self.merit(&fp) <= merit {
                        return Ok((polished, iter));
                    }
                }
                return Ok((x, iter - 1));
            }

            let mut alpha = self.quadratic_step_limit(&x, &dx);
            let mut trial = x.clone();
            let mut accepted = None;
            for _ in 0..50 {
                for (t, (xi, di)) in trial.iter_mut().zip(x.iter().zip(&dx)) {
                    *t = xi + alpha * di;
                }
                if let Ok(ft) = self.evaluate(&trial, None) {
                    let mt = self.merit(&ft);
                    if (mt <= merit * (1.0 - 1e-4 * alpha) && mt < merit) || mt == 0.0 {
                        accepted = Some(alpha);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let alpha = match accepted {
                Some(a) => a,
                None if self.converged_residual(&f) => {
                    // Stalled at the rounding floor.
                    return Ok((x, iter - 1));
                }
                None => {
                    // No decrease along the Newton direction: take the
                    // limited step anyway and let the iteration continue.
                    let a = self.quadratic_step_limit(&x, &dx);
                    for (t, (xi, di)) in trial.iter_mut().zip(x.iter().zip(&dx)) {
                        *t = xi + a * di;
                    }
                    a
                }
            };
            x.copy_from_slice(&trial);
            f = match self.evaluate(&x, Some(&mut jac)) {
                Ok(f) => f,
                Err(_) => {
                    return Err(Error::Convergence {
                        iterations: iter,
                        residual: f64::INFINITY,
                    })
                }
            };
            merit = self.merit(&f);
            if alpha == 1.0 && step <= 1e-10 && self.converged_residual(&f) {
                return Ok((x, iter));
            }
        }
        Err(Error::Convergence {
            iterations: self.settings.max_iter,
            residual: self.kcl_norm(&f),
        })
    }

    /// Fixed-point pass that treats every orifice as a resistor k·|Q| and
    /// averages successive iterates. Pulls a cold start into the region where
    /// Newton converges; for a single orifice it reduces to Newton on Q².
    fn secant_warmup(&self, x: &mut [f64]) {
        let orifices: Vec<(usize, f64)> = self
            .active
            .iter()
            .filter_map(|act| match (act.branch, act.law) {
                (Branch::Quadratic(k), Compiled::Quadratic { k: coeff }) => Some((k, coeff)),
                _ => None,
            })
            .collect();
        if orifices.is_empty() {
            return;
        }
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut r = vec![0.0; self.n];
        let Ok(f0) = self.evaluate(x, None) else { return };
        let mut best = (self.merit(&f0), x.to_vec());
        for _ in 0..60 {
            for &(k, coeff) in &orifices {
                let nominal = (coeff * self.p_ref).sqrt();
                r[k] = (coeff * x[k].abs()).max(1e-3 * nominal);
                if x[k] == 0.0 {
                    r[k] = nominal;
                }
            }
            let Ok(f) = self.evaluate_with(x, Some(&mut jac), Some(&r)) else { break };
            let Ok(dx) = linear_solve(&jac, &f) else { break };
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += 0.5 * di;
            }
            let Ok(ft) = self.evaluate(x, None) else { break };
            let m = self.merit(&ft);
            if m < best.0 {
                best = (m, x.to_vec());
            }
            if self.scaled_step(x, &dx) < 1e-3 {
                break;
            }
        }
        x.copy_from_slice(&best.1);
    }

    /// Caps the step so no orifice flow moves by more than
    /// max(2|q|, √(P_ref/k)) in one iteration.
    fn quadratic_step_limit(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut alpha: f64 = 1.0;
        for act in &self.active {
            if let (Branch::Quadratic(k), Compiled::Quadratic { k: coeff }) = (act.branch, act.law) {
                let cap = (2.0 * x[k].abs()).max((self.p_ref / coeff).sqrt());
                if dx[k].abs() > cap {
                    alpha = alpha.min(cap / dx[k].abs());
                }
            }
        }
        alpha
    }

    fn state(&self, x: &[f64], iterations: usize) -> Result<SteadyState> {
        let node_pressures: IndexMap<_, _> = self
            .network
            .nodes
            .iter()
            .zip(&self.node_slots)
            .map(|(n, s)| (n.id.clone(), self.pressure(*s, x)))
            .collect();
        let mut flows: Vec<f64> = vec![0.0; self.network.elements.len()];
        for act in &self.active {
            flows[act.index] = match act.branch {
                Branch::Quadratic(k) | Branch::Constraint(k, _) => x[k],
                Branch::None => {
                    let pa = self.pressure(act.a, x);
                    let pb = self.pressure(act.b, x);
                    self.nodal_flow(act, pa, pb)?.0
                }
            };
        }
        let element_flows: IndexMap<ElementId, f64> = self
            .network
            .elements
            .iter()
            .zip(flows)
            .map(|(e, q)| (e.id.clone(), q))
            .collect();
        let f = self.evaluate(x, None)?;
        Ok(SteadyState {
            node_pressures,
            element_flows,
            residual_norm: self.kcl_norm(&f),
            iterations,
        })
    }
}

/// Solves J·dx = −f after row and column equilibration.
fn linear_solve(jac: &DMatrix<f64>, f: &[f64]) -> Result<Vec<f64>> {
    let n = f.len();
    let mut a = jac.clone();
    let mut rhs = DVector::from_iterator(n, f.iter().map(|v| -v));
    for i in 0..n {
        let m = a.row(i).amax();
        if m == 0.0 {
            return Err(Error::Singular(format!("equation {i} has no dependence on any unknown")));
        }
        a.row_mut(i).scale_mut(1.0 / m);
        rhs[i] /= m;
    }
    let mut col_scale = vec![1.0; n];
    for (j, s) in col_scale.iter_mut().enumerate() {
        let m = a.column(j).amax();
        if m == 0.0 {
            return Err(Error::Singular(format!("unknown {j} is unconstrained")));
        }
        *s = 1.0 / m;
        a.column_mut(j).scale_mut(*s);
    }
    let lu = a.lu();
    let u = lu.u();
    let pivots = u.diagonal();
    let max = pivots.amax();
    let min = pivots.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min > 1e-13 * max) {
        return Err(Error::Singular(
            "network equations are singular (conflicting ideal sources or an undetermined loop)".into(),
        ));
    }
    let y = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
    let dx: Vec<f64> = y.iter().zip(&col_scale).map(|(v, s)| v * s).collect();
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite Newton step".into()));
    }
    Ok(dx)
}
