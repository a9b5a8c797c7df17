//! Time integration of `p' = u(p, t)` with scheduled perturbations and
//! event detection.
//!
//! The default stepper is fixed-step RK4 (`dt = 1e-3`). Every step is audited
//! against the Lyapunov quantity of the closed loop: a step that raises it by
//! more than `lyapunov_tol` is redone as two half steps, recursively, up to
//! `max_halvings` times. Steps that still fail are accepted and counted in
//! [`LyapunovAudit::violations`]. The optional adaptive mode is a
//! Dormand–Prince 5(4) pair with the same guard.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::controller::{balance_into, max_agent_norm, norm, ClosedLoop, LeaderSpec};
use crate::graph::{squared_errors, FormationGraph, Realization};
use crate::potential::Potential;
use crate::{DomainError, Error};

const DOPRI_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DOPRI_A: [&[f64]; 7] = [
    &[],
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DOPRI_B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepControl {
    Fixed { dt: f64 },
    Adaptive { rtol: f64, atol: f64, initial_dt: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Fixed { dt: 1e-3 }
    }
}

impl StepControl {
    pub fn adaptive() -> Self {
        StepControl::Adaptive { rtol: 1e-8, atol: 1e-12, initial_dt: 1e-3 }
    }
}

/// An instantaneous displacement of one agent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationEvent {
    pub time: f64,
    pub agent: usize,
    pub displacement: Vec<f64>,
}

impl PerturbationEvent {
    pub fn new(time: f64, agent: usize, displacement: Vec<f64>) -> Self {
        Self { time, agent, displacement }
    }

    /// Displacement of length `magnitude` along `direction` (normalised here).
    pub fn along(time: f64, agent: usize, magnitude: f64, direction: &[f64]) -> Result<Self, Error> {
        let n = norm(direction);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidPerturbation("direction must be a nonzero finite vector"));
        }
        Ok(Self::new(time, agent, direction.iter().map(|x| magnitude * x / n).collect()))
    }

    pub fn magnitude(&self) -> f64 {
        norm(&self.displacement)
    }

    fn validate(&self, dimension: usize, agents: usize) -> Result<(), Error> {
        if self.agent >= agents {
            return Err(Error::AgentOutOfRange { agent: self.agent, agents });
        }
        if self.displacement.len() != dimension {
            return Err(Error::InvalidPerturbation("displacement dimension does not match"));
        }
        if !self.time.is_finite() || self.displacement.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPerturbation("time and displacement must be finite"));
        }
        Ok(())
    }
}

/// Moves one agent; every other agent is left untouched.
pub fn apply_perturbation(p: &Realization, event: &PerturbationEvent) -> Result<Realization, Error> {
    event.validate(p.dimension(), p.num_agents())?;
    let mut out = p.clone();
    for (x, dx) in out.agent_mut(event.agent).iter_mut().zip(&event.displacement) {
        *x += dx;
    }
    Ok(out)
}

/// Result of [`detect_equilibrium`]; `residual` is `max_i |sum_j g_ij z_ij|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquilibriumCheck {
    pub at_equilibrium: bool,
    pub residual: f64,
}

pub fn detect_equilibrium<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    eps_eq: f64,
) -> Result<EquilibriumCheck, Error> {
    graph.check_dims(p)?;
    let residual = balance_residual(graph, p.as_slice(), potential)?;
    Ok(EquilibriumCheck { at_equilibrium: residual < eps_eq, residual })
}

pub(crate) fn balance_residual<P: Potential + ?Sized>(
    graph: &FormationGraph,
    coords: &[f64],
    potential: &P,
) -> Result<f64, DomainError> {
    let mut grad = vec![0.0; coords.len()];
    balance_into(graph.edges(), graph.dimension(), coords, potential, &mut grad)?;
    Ok(max_agent_norm(&grad, graph.dimension()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegrationOptions {
    pub t_start: f64,
    pub t_end: f64,
    pub step: StepControl,
    pub perturbations: Vec<PerturbationEvent>,
    /// Residual threshold for `equilibrium_detected`.
    pub eps_eq: f64,
    /// Distance to the leader target for `target_reached`.
    pub target_tol: f64,
    pub lyapunov_tol: f64,
    pub max_halvings: u32,
    /// Keep every `record_every`-th step (events and the final state are
    /// always kept).
    pub record_every: usize,
    pub stop_at_equilibrium: bool,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 10.0,
            step: StepControl::default(),
            perturbations: Vec::new(),
            eps_eq: 1e-9,
            target_tol: 1e-3,
            lyapunov_tol: 1e-10,
            max_halvings: 24,
            record_every: 1,
            stop_at_equilibrium: false,
        }
    }
}

impl IntegrationOptions {
    pub fn until(t_end: f64) -> Self {
        Self { t_end, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EquilibriumDetected,
    PerturbationApplied,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub agent: Option<usize>,
    /// Balance residual for equilibria, target distance for the leader,
    /// displacement length for perturbations.
    pub value: f64,
}

/// Step-by-step record of the Lyapunov quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LyapunovAudit {
    pub checked_steps: usize,
    pub rejected_steps: usize,
    /// Steps accepted at the halving limit despite an increase above tolerance.
    pub violations: usize,
    pub max_increase: f64,
}

impl LyapunovAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Realization>,
    /// Squared-distance errors per sample, in edge order.
    pub errors: Vec<Vec<f64>>,
    /// `|grad V|` per sample.
    pub grad_norms: Vec<f64>,
    pub events: Vec<Event>,
    pub audit: LyapunovAudit,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &Realization {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial sample")
    }

    pub fn final_errors(&self) -> &[f64] {
        self.errors.last().map_or(&[], |e| e.as_slice())
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Integrates `system` from `p0` over `[t_start, t_end]`.
///
/// Stops early when `stop_at_equilibrium` is set and an equilibrium is
/// detected. A domain violation that survives `max_halvings` step halvings
/// returns [`Error::StepUnderflow`] carrying the last valid state.
pub fn integrate<P: Potential + ?Sized>(
    system: &ClosedLoop<'_, P>,
    p0: &Realization,
    opts: &IntegrationOptions,
) -> Result<Trajectory, Error> {
    let graph = system.graph();
    graph.check_dims(p0)?;
    if !(opts.t_end > opts.t_start) || !opts.t_end.is_finite() || !opts.t_start.is_finite() {
        return Err(Error::InvalidHorizon("t_end must exceed t_start"));
    }
    match opts.step {
        StepControl::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
            return Err(Error::InvalidHorizon("dt must be positive"))
        }
        StepControl::Adaptive { rtol, atol, initial_dt } if !(rtol > 0.0 && atol >= 0.0 && initial_dt > 0.0) => {
            return Err(Error::InvalidHorizon("adaptive tolerances must be positive"))
        }
        _ => {}
    }
    for ev in &opts.perturbations {
        ev.validate(graph.dimension(), graph.num_nodes())?;
        if !(ev.magnitude() > 0.0) {
            return Err(Error::InvalidPerturbation("displacement must be nonzero"));
        }
    }

    let mut run = Run::new(system, p0, opts)?;
    run.go()?;
    Ok(run.finish())
}

struct Run<'s, 'a, P: ?Sized> {
    system: &'s ClosedLoop<'a, P>,
    opts: &'s IntegrationOptions,
    stops: Vec<f64>,
    t: f64,
    y: Vec<f64>,
    h: f64,
    steps: usize,
    was_eq: bool,
    reached: bool,
    traj: Trajectory,
    scratch: Scratch,
}

struct Scratch {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'s, 'a, P: Potential + ?Sized> Run<'s, 'a, P> {
    fn new(system: &'s ClosedLoop<'a, P>, p0: &Realization, opts: &'s IntegrationOptions) -> Result<Self, Error> {
        let n = p0.as_slice().len();
        let mut stops: Vec<f64> =
            opts.perturbations.iter().map(|e| e.time).filter(|&t| t > opts.t_start && t < opts.t_end).collect();
        if let LeaderSpec::Windowed { start, end, profile } = system.leader() {
            stops.push(*start);
            stops.push(*end);
            stops.extend(profile.knots().iter().map(|k| k.0));
        }
        stops.retain(|&t| t > opts.t_start && t < opts.t_end);
        stops.push(opts.t_end);
        stops.sort_by(f64::total_cmp);
        stops.dedup();

        let h = match opts.step {
            StepControl::Fixed { dt } => dt,
            StepControl::Adaptive { initial_dt, .. } => initial_dt,
        };
        let mut run = Self {
            system,
            opts,
            stops,
            t: opts.t_start,
            y: p0.as_slice().to_vec(),
            h,
            steps: 0,
            was_eq: false,
            reached: false,
            traj: Trajectory {
                times: Vec::new(),
                states: Vec::new(),
                errors: Vec::new(),
                grad_norms: Vec::new(),
                events: Vec::new(),
                audit: LyapunovAudit::default(),
            },
            scratch: Scratch { k: core::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] },
        };
        // Perturbations scheduled exactly at the start act on the initial state.
        run.apply_due_perturbations(true)?;
        run.record()?;
        run.check_events()?;
        Ok(run)
    }

    fn graph(&self) -> &'a FormationGraph {
        self.system.graph()
    }

    fn go(&mut self) -> Result<(), Error> {
        let mut stop_idx = 0;
        while stop_idx < self.stops.len() {
            if self.opts.stop_at_equilibrium && self.was_eq {
                return Ok(());
            }
            let stop = self.stops[stop_idx];
            let remaining = stop - self.t;
            let scale = 1e-12 * stop.abs().max(1.0);
            if remaining <= scale {
                self.t = stop;
                stop_idx += 1;
                if self.apply_due_perturbations(false)? {
                    self.overwrite_last_sample()?;
                    self.check_events()?;
                }
                continue;
            }
            let h = self.h.min(remaining);
            let hit = h >= remaining - scale;
            let taken = match self.opts.step {
                StepControl::Fixed { .. } => {
                    let t0 = self.t;
                    let y0 = core::mem::take(&mut self.y);
                    match self.guarded_rk4(t0, &y0, h, 0) {
                        Ok(y1) => {
                            self.y = y1;
                            h
                        }
                        Err(e) => {
                            self.y = y0;
                            return Err(self.underflow(e));
                        }
                    }
                }
                StepControl::Adaptive { rtol, atol, .. } => self.dopri_step(h, rtol, atol)?,
            };
            self.t = if hit && taken == h { stop } else { self.t + taken };
            self.steps += 1;
            let at_stop = self.t == stop;
            if at_stop {
                stop_idx += 1;
                self.apply_due_perturbations(false)?;
            }
            if at_stop || self.steps.is_multiple_of(self.opts.record_every.max(1)) {
                self.record()?;
            }
            self.check_events()?;
        }
        Ok(())
    }

    fn underflow(&self, _e: DomainError) -> Error {
        let d = self.graph().dimension();
        Error::StepUnderflow {
            time: self.t,
            last_state: Realization::new(d, self.y.clone()).expect("state keeps its shape"),
        }
    }

    fn lyapunov(&self, y: &[f64]) -> Result<f64, DomainError> {
        self.system.lyapunov(y)
    }

    fn note_increase(&mut self, dl: f64) {
        self.traj.audit.checked_steps += 1;
        if dl > self.traj.audit.max_increase {
            self.traj.audit.max_increase = dl;
        }
    }

    fn guarded_rk4(&mut self, t: f64, y: &[f64], h: f64, depth: u32) -> Result<Vec<f64>, DomainError> {
        let attempt = self.rk4(t, y, h).and_then(|y1| {
            let applies = self.system.lyapunov_applies(t, t + h);
            let dl = if applies { self.lyapunov(&y1)? - self.lyapunov(y)? } else { f64::NEG_INFINITY };
            Ok((y1, applies, dl))
        });
        match attempt {
            Ok((y1, applies, dl)) => {
                if applies && dl > self.opts.lyapunov_tol {
                    if depth < self.opts.max_halvings {
                        self.traj.audit.rejected_steps += 1;
                        return self.halves(t, y, h, depth);
                    }
                    self.traj.audit.violations += 1;
                }
                if applies {
                    self.note_increase(dl);
                }
                Ok(y1)
            }
            Err(e) if depth < self.opts.max_halvings => {
                self.traj.audit.rejected_steps += 1;
                self.halves(t, y, h, depth).map_err(|_| e)
            }
            Err(e) => Err(e),
        }
    }

    fn halves(&mut self, t: f64, y: &[f64], h: f64, depth: u32) -> Result<Vec<f64>, DomainError> {
        let mid = self.guarded_rk4(t, y, 0.5 * h, depth + 1)?;
        self.guarded_rk4(t + 0.5 * h, &mid, 0.5 * h, depth + 1)
    }

    fn field(&mut self, slot: usize, t: f64, y_is_tmp: bool, y: &[f64]) -> Result<(), DomainError> {
        let Scratch { k, tmp } = &mut self.scratch;
        let src: &[f64] = if y_is_tmp { tmp } else { y };
        self.system.velocity_into(t, src, &mut k[slot])
    }

    fn stage(&mut self, y: &[f64], h: f64, coeffs: &[(usize, f64)]) {
        let Scratch { k, tmp } = &mut self.scratch;
        tmp.copy_from_slice(y);
        for &(slot, a) in coeffs {
            if a != 0.0 {
                for (t, kv) in tmp.iter_mut().zip(&k[slot]) {
                    *t += h * a * kv;
                }
            }
        }
    }

    fn rk4(&mut self, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>, DomainError> {
        self.field(0, t, false, y)?;
        self.stage(y, h, &[(0, 0.5)]);
        self.field(1, t + 0.5 * h, true, y)?;
        self.stage(y, h, &[(1, 0.5)]);
        self.field(2, t + 0.5 * h, true, y)?;
        self.stage(y, h, &[(2, 1.0)]);
        self.field(3, t + h, true, y)?;
        let k = &self.scratch.k;
        Ok(y.iter()
            .enumerate()
            .map(|(i, yi)| yi + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
            .collect())
    }

    fn dopri_trial(&mut self, y: &[f64], h: f64, rtol: f64, atol: f64) -> Result<(Vec<f64>, f64), DomainError> {
        let t = self.t;
        self.field(0, t, false, y)?;
        for s in 1..7 {
            let coeffs: Vec<(usize, f64)> = DOPRI_A[s].iter().copied().enumerate().collect();
            self.stage(y, h, &coeffs);
            self.field(s, t + DOPRI_C[s] * h, true, y)?;
        }
        let y1 = self.scratch.tmp.clone();
        let k = &self.scratch.k;
        let mut acc = 0.0;
        for i in 0..y.len() {
            let err: f64 =
                (0..7).map(|s| (DOPRI_A[6].get(s).copied().unwrap_or(0.0) - DOPRI_B4[s]) * k[s][i]).sum::<f64>() * h;
            let sc = atol + rtol * y[i].abs().max(y1[i].abs());
            acc += (err / sc) * (err / sc);
        }
        Ok((y1, (acc / y.len() as f64).sqrt()))
    }

    /// One accepted Dormand–Prince step of at most `h_max`; returns the size taken.
    fn dopri_step(&mut self, h_max: f64, rtol: f64, atol: f64) -> Result<f64, Error> {
        let y = self.y.clone();
        let mut h = h_max;
        let h_min = 1e-14 * self.t.abs().max(1.0);
        loop {
            if h < h_min {
                return Err(self.underflow(DomainError { edge: None, error: f64::NAN, desired: f64::NAN }));
            }
            let attempt = self.dopri_trial(&y, h, rtol, atol);
            match attempt {
                Ok((y1, err)) if err <= 1.0 => {
                    let applies = self.system.lyapunov_applies(self.t, self.t + h);
                    if applies {
                        let dl = match (self.lyapunov(&y1), self.lyapunov(&y)) {
                            (Ok(a), Ok(b)) => a - b,
                            _ => f64::INFINITY,
                        };
                        if dl > self.opts.lyapunov_tol {
                            self.traj.audit.rejected_steps += 1;
                            h *= 0.5;
                            continue;
                        }
                        self.note_increase(dl);
                    }
                    let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    self.y = y1;
                    self.h = h * grow;
                    return Ok(h);
                }
                Ok((_, err)) => {
                    self.traj.audit.rejected_steps += 1;
                    h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                }
                Err(_) => {
                    self.traj.audit.rejected_steps += 1;
                    h *= 0.5;
                }
            }
        }
    }

    /// Applies perturbations scheduled at the current time. Returns whether any fired.
    fn apply_due_perturbations(&mut self, at_start: bool) -> Result<bool, Error> {
        let d = self.graph().dimension();
        let tol = 1e-12 * self.t.abs().max(1.0);
        let mut fired = false;
        for ev in &self.opts.perturbations {
            let due = if at_start { ev.time <= self.t + tol } else { (ev.time - self.t).abs() <= tol };
            if !due || (at_start && ev.time < self.t - tol) {
                continue;
            }
            for c in 0..d {
                self.y[ev.agent * d + c] += ev.displacement[c];
            }
            self.traj.events.push(Event {
                time: self.t,
                kind: EventKind::PerturbationApplied,
                agent: Some(ev.agent),
                value: ev.magnitude(),
            });
            fired = true;
        }
        Ok(fired)
    }

    fn sample(&self) -> Result<(Vec<f64>, f64), Error> {
        let graph = self.graph();
        let d = graph.dimension();
        let errors = squared_errors(graph.edges(), d, &self.y);
        let mut grad = vec![0.0; self.y.len()];
        balance_into(graph.edges(), d, &self.y, self.system.potential(), &mut grad)?;
        Ok((errors, norm(&grad)))
    }

    fn record(&mut self) -> Result<(), Error> {
        if self.traj.times.last() == Some(&self.t) {
            return self.overwrite_last_sample();
        }
        let (errors, gn) = self.sample()?;
        let d = self.graph().dimension();
        self.traj.times.push(self.t);
        self.traj.states.push(Realization::new(d, self.y.clone()).expect("state keeps its shape"));
        self.traj.errors.push(errors);
        self.traj.grad_norms.push(gn);
        Ok(())
    }

    /// Replaces the sample at the current time, used after a state jump so
    /// that recorded times stay strictly increasing.
    fn overwrite_last_sample(&mut self) -> Result<(), Error> {
        if self.traj.times.last() != Some(&self.t) {
            return self.record();
        }
        let (errors, gn) = self.sample()?;
        let d = self.graph().dimension();
        *self.traj.states.last_mut().expect("nonempty") =
            Realization::new(d, self.y.clone()).expect("state keeps its shape");
        *self.traj.errors.last_mut().expect("nonempty") = errors;
        *self.traj.grad_norms.last_mut().expect("nonempty") = gn;
        Ok(())
    }

    fn check_events(&mut self) -> Result<(), Error> {
        let graph = self.graph();
        let residual = balance_residual(graph, &self.y, self.system.potential())?;
        let is_eq = residual < self.opts.eps_eq;
        if is_eq && !self.was_eq {
            self.traj.events.push(Event {
                time: self.t,
                kind: EventKind::EquilibriumDetected,
                agent: None,
                value: residual,
            });
            if self.traj.times.last() != Some(&self.t) {
                self.record()?;
            }
        }
        self.was_eq = is_eq;

        if let LeaderSpec::Target { target, .. } = self.system.leader() {
            let d = graph.dimension();
            let f = graph.flex_node();
            let dist = norm(&target.iter().zip(&self.y[f * d..(f + 1) * d]).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dist < self.opts.target_tol && !self.reached {
                self.traj.events.push(Event {
                    time: self.t,
                    kind: EventKind::TargetReached,
                    agent: Some(f),
                    value: dist,
                });
            }
            self.reached = dist < self.opts.target_tol;
        }
        Ok(())
    }

    fn finish(mut self) -> Trajectory {
        if self.traj.times.last() != Some(&self.t) {
            // The final state is always kept; a sampling failure here is
            // impossible because the state was just evaluated.
            let _ = self.record();
        }
        self.traj
    }
}
