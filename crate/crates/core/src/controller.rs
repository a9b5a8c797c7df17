//! Gradient control law `u = -grad V`, its per-agent local-frame form, and
//! the flex-agent leader augmentation.
//!
//! `V(p) = 1/2 * sum_e phi(e_e, dbar_e)`, normalised so that
//! `grad_{p_i} V = sum_{j in N_i} g_ij z_ij` and the control law is exactly
//! its negative gradient.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::graph::{Edge, FormationGraph, Realization, MAX_DIM};
use crate::potential::Potential;
use crate::{DomainError, Error};

pub(crate) fn energy<P: Potential + ?Sized>(
    edges: &[Edge],
    d: usize,
    coords: &[f64],
    potential: &P,
) -> Result<f64, DomainError> {
    let mut total = 0.0;
    for (k, e) in edges.iter().enumerate() {
        let err = sq_norm_diff(coords, e.i, e.j, d) - e.desired * e.desired;
        if !potential.in_domain(err, e.desired) {
            return Err(DomainError { edge: Some(k), error: err, desired: e.desired });
        }
        total += potential.phi(err, e.desired);
    }
    Ok(0.5 * total)
}

/// Writes `grad V` (per agent: `sum_j g_ij z_ij`) into `out`.
pub(crate) fn balance_into<P: Potential + ?Sized>(
    edges: &[Edge],
    d: usize,
    coords: &[f64],
    potential: &P,
    out: &mut [f64],
) -> Result<(), DomainError> {
    out.fill(0.0);
    for (k, e) in edges.iter().enumerate() {
        let mut z = [0.0; MAX_DIM];
        let mut n2 = 0.0;
        for (c, zc) in z.iter_mut().enumerate().take(d) {
            *zc = coords[e.i * d + c] - coords[e.j * d + c];
            n2 += *zc * *zc;
        }
        let err = n2 - e.desired * e.desired;
        if !potential.in_domain(err, e.desired) {
            return Err(DomainError { edge: Some(k), error: err, desired: e.desired });
        }
        let g = potential.g(err, e.desired);
        for (c, zc) in z.iter().enumerate().take(d) {
            out[e.i * d + c] += g * zc;
            out[e.j * d + c] -= g * zc;
        }
    }
    Ok(())
}

pub(crate) fn sq_norm_diff(coords: &[f64], i: usize, j: usize, d: usize) -> f64 {
    (0..d).map(|c| coords[i * d + c] - coords[j * d + c]).map(|x| x * x).sum()
}

/// Largest per-agent norm of a stacked `d`-vector field.
pub(crate) fn max_agent_norm(v: &[f64], d: usize) -> f64 {
    v.chunks(d).map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn potential_energy<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
) -> Result<f64, Error> {
    graph.check_dims(p)?;
    Ok(energy(graph.edges(), graph.dimension(), p.as_slice(), potential)?)
}

pub fn potential_gradient<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
) -> Result<Vec<f64>, Error> {
    graph.check_dims(p)?;
    let mut out = vec![0.0; p.as_slice().len()];
    balance_into(graph.edges(), graph.dimension(), p.as_slice(), potential, &mut out)?;
    Ok(out)
}

/// `u_i = -sum_{j in N_i} g_ij z_ij` for every agent.
pub fn gradient_control<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
) -> Result<Vec<f64>, Error> {
    let mut u = potential_gradient(graph, p, potential)?;
    u.iter_mut().for_each(|x| *x = -*x);
    Ok(u)
}

/// Neighbour positions as agent `agent` measures them in its own frame:
/// `p_j^i = Q (p_j - p_i)`, where `Q` maps global to local coordinates.
/// Returned in edge order together with the neighbour index.
pub fn neighbor_offsets(
    graph: &FormationGraph,
    p: &Realization,
    agent: usize,
    frame: &DMatrix<f64>,
) -> Vec<(usize, Vec<f64>)> {
    let d = graph.dimension();
    graph
        .incident(agent)
        .map(|(_, j)| {
            let rel: Vec<f64> = (0..d).map(|c| p.agent(j)[c] - p.agent(agent)[c]).collect();
            let local = (0..d).map(|r| (0..d).map(|c| frame[(r, c)] * rel[c]).sum()).collect();
            (j, local)
        })
        .collect()
}

/// Control of one agent from its own measurements: `u_i^i = sum_j g_ij p_j^i`.
/// Equal to `Q u_i` for the frame the offsets were measured in.
pub fn local_frame_control<O: AsRef<[f64]>>(offsets: &[O], g: &[f64]) -> Vec<f64> {
    let d = offsets.first().map_or(0, |o| o.as_ref().len());
    let mut u = vec![0.0; d];
    for (o, gk) in offsets.iter().zip(g) {
        for (uc, oc) in u.iter_mut().zip(o.as_ref()) {
            *uc += gk * oc;
        }
    }
    u
}

/// `g` values an agent computes from measured offsets alone.
pub fn local_gains<O: AsRef<[f64]>, P: Potential + ?Sized>(
    offsets: &[O],
    desired: &[f64],
    potential: &P,
) -> Result<Vec<f64>, DomainError> {
    offsets
        .iter()
        .zip(desired)
        .map(|(o, &dbar)| {
            let n2: f64 = o.as_ref().iter().map(|x| x * x).sum();
            potential.evaluate(n2 - dbar * dbar, dbar).map(|t| t.g)
        })
        .collect()
}

/// Piecewise-constant velocity table: the value at `t` is that of the last
/// knot with time `<= t`, zero before the first knot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseConstant {
    knots: Vec<(f64, Vec<f64>)>,
}

impl PiecewiseConstant {
    pub fn new(knots: Vec<(f64, Vec<f64>)>) -> Result<Self, Error> {
        if knots.is_empty() {
            return Err(Error::InvalidLeader("velocity table is empty"));
        }
        let d = knots[0].1.len();
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidLeader("velocity knot times must increase"));
            }
        }
        for (t, v) in &knots {
            if !t.is_finite() || v.len() != d || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidLeader("velocity samples must be finite and share a dimension"));
            }
        }
        Ok(Self { knots })
    }

    pub fn dimension(&self) -> usize {
        self.knots[0].1.len()
    }

    pub fn knots(&self) -> &[(f64, Vec<f64>)] {
        &self.knots
    }

    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        self.knots.iter().rev().find(|(tk, _)| *tk <= t).map(|(_, v)| v.as_slice())
    }

    /// Largest sample norm; the table is bounded by construction.
    pub fn bound(&self) -> f64 {
        self.knots.iter().map(|(_, v)| norm(v)).fold(0.0, f64::max)
    }
}

/// Extra input on the flex agent.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LeaderSpec {
    None,
    /// `v(t)` on `[start, end]`, zero elsewhere.
    Windowed {
        start: f64,
        end: f64,
        profile: PiecewiseConstant,
    },
    /// `v_f = gain * (target - p_flex)`.
    Target {
        gain: f64,
        target: Vec<f64>,
    },
}

impl LeaderSpec {
    pub fn validate(&self, dimension: usize) -> Result<(), Error> {
        match self {
            LeaderSpec::None => Ok(()),
            LeaderSpec::Windowed { start, end, profile } => {
                if !(start.is_finite() && end.is_finite() && end >= start) {
                    return Err(Error::InvalidLeader("window must be finite with end >= start"));
                }
                if profile.dimension() != dimension {
                    return Err(Error::InvalidLeader("velocity dimension does not match the graph"));
                }
                Ok(())
            }
            LeaderSpec::Target { gain, target } => {
                if !(*gain > 0.0 && gain.is_finite()) {
                    return Err(Error::InvalidLeader("target gain must be positive"));
                }
                if target.len() != dimension || target.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidLeader("target point has the wrong dimension"));
                }
                Ok(())
            }
        }
    }

    /// `v_f(t)` given the current flex position.
    pub fn input(&self, t: f64, flex: &[f64]) -> [f64; MAX_DIM] {
        let mut v = [0.0; MAX_DIM];
        match self {
            LeaderSpec::None => {}
            LeaderSpec::Windowed { start, end, profile } => {
                if t >= *start && t <= *end {
                    if let Some(s) = profile.value_at(t) {
                        v[..s.len()].copy_from_slice(s);
                    }
                }
            }
            LeaderSpec::Target { gain, target } => {
                for (c, (pt, pf)) in target.iter().zip(flex).enumerate() {
                    v[c] = gain * (pt - pf);
                }
            }
        }
        v
    }
}

/// `u = -grad V + delta_flex ⊗ v_f(t)`. With [`LeaderSpec::None`] this is
/// [`gradient_control`].
pub fn leader_control<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    t: f64,
    potential: &P,
    spec: &LeaderSpec,
) -> Result<Vec<f64>, Error> {
    spec.validate(graph.dimension())?;
    let system = ClosedLoop { graph, potential, leader: spec.clone() };
    graph.check_dims(p)?;
    let mut u = vec![0.0; p.as_slice().len()];
    system.velocity_into(t, p.as_slice(), &mut u)?;
    Ok(u)
}

/// The closed-loop vector field integrated by [`crate::integrator`].
#[derive(Clone, Debug)]
pub struct ClosedLoop<'a, P: ?Sized> {
    graph: &'a FormationGraph,
    potential: &'a P,
    leader: LeaderSpec,
}

impl<'a, P: Potential + ?Sized> ClosedLoop<'a, P> {
    pub fn gradient(graph: &'a FormationGraph, potential: &'a P) -> Self {
        Self { graph, potential, leader: LeaderSpec::None }
    }

    pub fn with_leader(graph: &'a FormationGraph, potential: &'a P, leader: LeaderSpec) -> Result<Self, Error> {
        leader.validate(graph.dimension())?;
        Ok(Self { graph, potential, leader })
    }

    pub fn graph(&self) -> &'a FormationGraph {
        self.graph
    }

    pub fn potential(&self) -> &'a P {
        self.potential
    }

    pub fn leader(&self) -> &LeaderSpec {
        &self.leader
    }

    pub fn velocity_into(&self, t: f64, coords: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        let d = self.graph.dimension();
        balance_into(self.graph.edges(), d, coords, self.potential, out)?;
        out.iter_mut().for_each(|x| *x = -*x);
        if !matches!(self.leader, LeaderSpec::None) {
            let f = self.graph.flex_node();
            let v = self.leader.input(t, &coords[f * d..(f + 1) * d]);
            for c in 0..d {
                out[f * d + c] += v[c];
            }
        }
        Ok(())
    }

    /// Whether the Lyapunov quantity must be nonincreasing over `[t0, t1]`.
    /// A windowed input breaks monotonicity while it is switched on.
    pub fn lyapunov_applies(&self, t0: f64, t1: f64) -> bool {
        match &self.leader {
            LeaderSpec::Windowed { start, end, .. } => t1 < *start || t0 > *end,
            _ => true,
        }
    }

    /// `V` in gradient and windowed mode; `sum_e phi + k_f |p_t - p_flex|^2`
    /// (that is, `2V + k_f |.|^2`) in target mode.
    pub fn lyapunov(&self, coords: &[f64]) -> Result<f64, DomainError> {
        let d = self.graph.dimension();
        let v = energy(self.graph.edges(), d, coords, self.potential)?;
        Ok(match &self.leader {
            LeaderSpec::Target { gain, target } => {
                let f = self.graph.flex_node();
                let off: f64 = target.iter().zip(&coords[f * d..(f + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum();
                2.0 * v + gain * off
            }
            _ => v,
        })
    }
}
