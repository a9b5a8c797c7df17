//! Distance-based formation control for single-integrator agents whose
//! interaction graph is a rigid graph plus one flex node.
//!
//! The crate covers the gradient control law and its leader-augmented
//! variant ([`controller`]), RK4 / Dormand–Prince integration with
//! perturbation events ([`integrator`]), Hessian assembly and instability
//! certificates for undesired equilibria ([`stability`]), and independent
//! constructions of those equilibria ([`oracle`]).
//!
//! `no_std`; requires `alloc`.

#![no_std]
// `!(x > y)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

use alloc::string::String;

pub mod angles;
pub mod controller;
pub mod graph;
pub mod integrator;
mod linalg;
pub mod oracle;
pub mod potential;
pub mod stability;

pub use controller::{ClosedLoop, LeaderSpec, PiecewiseConstant};
pub use graph::{Edge, EdgeState, Feasibility, FormationGraph, IncidenceMatrix, Realization, Topology};
pub use integrator::{IntegrationOptions, PerturbationEvent, StepControl, Trajectory};
pub use potential::{Potential, PotentialFamily};
pub use stability::{EquilibriumClass, StabilityReport, Subform, SubformKind, Tolerances};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("ambient dimension {0} not supported")]
    Dimension(usize),
    #[error("a formation graph needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("desired length of edge ({i},{j}) must be positive and finite, got {desired}")]
    NonPositiveLength { i: usize, j: usize, desired: f64 },
    #[error("duplicate edge ({0},{1})")]
    DuplicateEdge(usize, usize),
    #[error("flex edge ({0},{1}) must join the last two nodes and be present")]
    FlexEdge(usize, usize),
    #[error("flex node must have degree 1, has {0}")]
    FlexDegree(usize),
    #[error("realization has shape {found:?} (agents, dim), graph expects {expected:?}")]
    RealizationShape { expected: (usize, usize), found: (usize, usize) },
    #[error("{len} coordinates cannot be split into points of dimension {dimension}")]
    RaggedCoordinates { len: usize, dimension: usize },
}

/// A squared-distance error outside the potential's domain.
#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("squared-distance error {error} outside the potential domain (desired length {desired}, edge {edge:?})")]
pub struct DomainError {
    pub edge: Option<usize>,
    pub error: f64,
    pub desired: f64,
}

impl DomainError {
    pub fn on_edge(self, edge: usize) -> Self {
        Self { edge: Some(edge), ..self }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid leader input: {0}")]
    InvalidLeader(&'static str),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(&'static str),
    #[error("agent {agent} out of range for {agents} agents")]
    AgentOutOfRange { agent: usize, agents: usize },
    #[error("invalid integration horizon or step: {0}")]
    InvalidHorizon(&'static str),
    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64, last_state: Realization },
    #[error("symmetric eigen-decomposition failed to converge")]
    Eigen,
    #[error("frame is not orthogonal (deviation {0:e})")]
    NonOrthogonal(f64),
    #[error("configuration is not an undesired equilibrium")]
    NotUndesired,
    #[error("no negative-curvature direction found (least form {best:e}, threshold {threshold:e})")]
    NoNegativeDirection { best: f64, threshold: f64 },
    #[error("expected subform {expected:?}, configuration has {found:?}")]
    SubformMismatch { expected: Option<SubformKind>, found: Option<SubformKind> },
    #[error("edge lengths do not form a realizable tetrahedron")]
    NonRealizable,
    #[error("construction of {target} failed: {reason}")]
    Construction { target: &'static str, reason: String },
    #[error("no equilibrium reached before t = {0}")]
    NoEquilibrium(f64),
}
