//! Formation graphs: a rigid graph on nodes `0..N` plus one flex node `N`
//! attached to node `N - 1` by a single distance constraint.
//!
//! Node indices are zero-based throughout the crate. Edges are stored with
//! `i < j` in lexicographic order; that order fixes the column order of the
//! incidence matrix and the block order of every per-edge quantity.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::potential::Potential;
use crate::{DomainError, GraphError};

/// Largest ambient dimension handled by the numeric kernels.
pub const MAX_DIM: usize = 3;

/// One distance constraint between nodes `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub desired: f64,
}

/// The two rigid graphs for which undesired equilibria are certified unstable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Topology {
    /// Triangle on three nodes plus a flex node, in the plane.
    TriangleFlex,
    /// Complete graph on four nodes plus a flex node, in space.
    TetrahedronFlex,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormationGraph {
    dimension: usize,
    num_nodes: usize,
    edges: Vec<Edge>,
    flex: usize,
    topology: Topology,
}

impl FormationGraph {
    /// Validates and builds a graph. `edges` may come in any order with either
    /// endpoint first; they are normalised to `i < j` and sorted.
    pub fn new(
        dimension: usize,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        flex_edge: (usize, usize),
    ) -> Result<Self, GraphError> {
        if dimension != 2 && dimension != 3 {
            return Err(GraphError::Dimension(dimension));
        }
        if num_nodes < 3 {
            return Err(GraphError::TooFewNodes(num_nodes));
        }
        let mut list = Vec::new();
        for (a, b, desired) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::NodeOutOfRange { node: a.max(b), num_nodes });
            }
            if !(desired > 0.0 && desired.is_finite()) {
                return Err(GraphError::NonPositiveLength { i: a.min(b), j: a.max(b), desired });
            }
            list.push(Edge { i: a.min(b), j: a.max(b), desired });
        }
        list.sort_by_key(|x| (x.i, x.j));
        for w in list.windows(2) {
            if w[0].i == w[1].i && w[0].j == w[1].j {
                return Err(GraphError::DuplicateEdge(w[0].i, w[0].j));
            }
        }

        let flex_node = num_nodes - 1;
        let anchor = num_nodes - 2;
        let (fa, fb) = (flex_edge.0.min(flex_edge.1), flex_edge.0.max(flex_edge.1));
        if (fa, fb) != (anchor, flex_node) {
            return Err(GraphError::FlexEdge(flex_edge.0, flex_edge.1));
        }
        let flex = list
            .iter()
            .position(|e| e.i == anchor && e.j == flex_node)
            .ok_or(GraphError::FlexEdge(flex_edge.0, flex_edge.1))?;
        let flex_degree = list.iter().filter(|e| e.j == flex_node).count();
        if flex_degree != 1 {
            return Err(GraphError::FlexDegree(flex_degree));
        }

        let topology = detect_topology(dimension, num_nodes, &list);
        Ok(Self { dimension, num_nodes, edges: list, flex, topology })
    }

    /// Triangle `{0,1,2}` with flex node `3` attached to node `2`, in the plane.
    pub fn triangle_with_flex(d01: f64, d02: f64, d12: f64, d23: f64) -> Result<Self, GraphError> {
        Self::new(2, 4, [(0, 1, d01), (0, 2, d02), (1, 2, d12), (2, 3, d23)], (2, 3))
    }

    /// Tetrahedron `{0,1,2,3}` with flex node `4` attached to node `3`.
    /// `rigid` lists lengths for edges 01, 02, 03, 12, 13, 23.
    pub fn tetrahedron_with_flex(rigid: [f64; 6], flex: f64) -> Result<Self, GraphError> {
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let mut edges: Vec<(usize, usize, f64)> = pairs.iter().zip(rigid).map(|(&(i, j), d)| (i, j, d)).collect();
        edges.push((3, 4, flex));
        Self::new(3, 5, edges, (3, 4))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn flex_index(&self) -> usize {
        self.flex
    }

    pub fn flex_edge(&self) -> &Edge {
        &self.edges[self.flex]
    }

    pub fn flex_node(&self) -> usize {
        self.num_nodes - 1
    }

    /// The rigid-graph node carrying the flex edge.
    pub fn anchor_node(&self) -> usize {
        self.num_nodes - 2
    }

    /// Number of nodes in the rigid subgraph.
    pub fn num_rigid(&self) -> usize {
        self.num_nodes - 1
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        let (i, j) = (a.min(b), a.max(b));
        self.edges.iter().position(|e| e.i == i && e.j == j)
    }

    /// Edges incident to `node`, as `(edge index, other endpoint)`.
    pub fn incident(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().enumerate().filter_map(move |(k, e)| {
            if e.i == node {
                Some((k, e.j))
            } else if e.j == node {
                Some((k, e.i))
            } else {
                None
            }
        })
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix::from_edges(self.num_nodes, &self.edges)
    }

    pub fn check_dims(&self, p: &Realization) -> Result<(), GraphError> {
        if p.dimension() != self.dimension || p.num_agents() != self.num_nodes {
            return Err(GraphError::RealizationShape {
                expected: (self.num_nodes, self.dimension),
                found: (p.num_agents(), p.dimension()),
            });
        }
        Ok(())
    }

    /// `z_e = p_i - p_j` for every edge, stacked edge-major (`m * d` values).
    pub fn relative_positions(&self, p: &Realization) -> Result<Vec<f64>, GraphError> {
        self.check_dims(p)?;
        let d = self.dimension;
        let mut z = Vec::with_capacity(self.edges.len() * d);
        for e in &self.edges {
            let (pi, pj) = (p.agent(e.i), p.agent(e.j));
            z.extend(pi.iter().zip(pj).map(|(a, b)| a - b));
        }
        Ok(z)
    }

    /// Per-edge relative position, squared-distance error and potential derivatives.
    pub fn edge_states<P: Potential + ?Sized>(
        &self,
        p: &Realization,
        potential: &P,
    ) -> Result<Vec<EdgeState>, crate::Error> {
        self.check_dims(p)?;
        edge_states(&self.edges, self.dimension, p.as_slice(), potential).map_err(Into::into)
    }

    /// Squared-distance errors `e = |z|^2 - dbar^2`, in edge order.
    pub fn distance_errors(&self, p: &Realization) -> Result<Vec<f64>, GraphError> {
        self.check_dims(p)?;
        Ok(squared_errors(&self.edges, self.dimension, p.as_slice()))
    }

    /// Strict triangle inequalities over every 3-cycle present in the edge set.
    pub fn check_feasible(&self) -> Feasibility {
        let n = self.num_nodes;
        for a in 0..n {
            for b in a + 1..n {
                let Some(ab) = self.edge_between(a, b) else { continue };
                for c in b + 1..n {
                    let (Some(bc), Some(ac)) = (self.edge_between(b, c), self.edge_between(a, c)) else {
                        continue;
                    };
                    let (x, y, w) = (self.edges[ab].desired, self.edges[bc].desired, self.edges[ac].desired);
                    if !(x + y > w && y + w > x && w + x > y) {
                        return Feasibility::Infeasible { triangle: [a, b, c], lengths: [x, y, w] };
                    }
                }
            }
        }
        Feasibility::Feasible
    }

    pub fn mean_desired(&self) -> f64 {
        self.edges.iter().map(|e| e.desired).sum::<f64>() / self.edges.len() as f64
    }
}

fn detect_topology(dimension: usize, num_nodes: usize, edges: &[Edge]) -> Topology {
    let rigid: Vec<(usize, usize)> = edges.iter().filter(|e| e.j != num_nodes - 1).map(|e| (e.i, e.j)).collect();
    let complete = |k: usize| {
        let mut want = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                want.push((i, j));
            }
        }
        rigid == want
    };
    match (dimension, num_nodes) {
        (2, 4) if complete(3) => Topology::TriangleFlex,
        (3, 5) if complete(4) => Topology::TetrahedronFlex,
        _ => Topology::Other,
    }
}

/// Outcome of [`FormationGraph::check_feasible`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Feasibility {
    Feasible,
    /// Lengths are for edges `(a,b)`, `(b,c)`, `(a,c)`.
    Infeasible {
        triangle: [usize; 3],
        lengths: [f64; 3],
    },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }
}

/// Node-by-edge incidence matrix: `+1` at the lower-indexed endpoint, `-1` at
/// the other, so that `B^T p` reproduces `z_ij = p_i - p_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl IncidenceMatrix {
    pub(crate) fn from_edges(num_nodes: usize, edges: &[Edge]) -> Self {
        let mut entries = vec![0i8; num_nodes * edges.len()];
        for (k, e) in edges.iter().enumerate() {
            entries[e.i * edges.len() + k] = 1;
            entries[e.j * edges.len() + k] = -1;
        }
        Self { rows: num_nodes, cols: edges.len(), entries }
    }

    pub fn num_nodes(&self) -> usize {
        self.rows
    }

    pub fn num_edges(&self) -> usize {
        self.cols
    }

    pub fn get(&self, node: usize, edge: usize) -> i8 {
        self.entries[node * self.cols + edge]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| f64::from(self.get(r, c)))
    }

    /// `B ⊗ I_d`.
    pub fn lifted(&self, d: usize) -> DMatrix<f64> {
        let b = self.to_matrix();
        b.kronecker(&DMatrix::<f64>::identity(d, d))
    }
}

/// Stacked agent positions, agent-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Realization {
    dimension: usize,
    coords: Vec<f64>,
}

impl Realization {
    pub fn new(dimension: usize, coords: Vec<f64>) -> Result<Self, GraphError> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(GraphError::Dimension(dimension));
        }
        if !coords.len().is_multiple_of(dimension) {
            return Err(GraphError::RaggedCoordinates { len: coords.len(), dimension });
        }
        Ok(Self { dimension, coords })
    }

    pub fn from_points<R: AsRef<[f64]>>(
        dimension: usize,
        points: impl IntoIterator<Item = R>,
    ) -> Result<Self, GraphError> {
        let mut coords = Vec::new();
        for pt in points {
            let pt = pt.as_ref();
            if pt.len() != dimension {
                return Err(GraphError::RaggedCoordinates { len: pt.len(), dimension });
            }
            coords.extend_from_slice(pt);
        }
        Self::new(dimension, coords)
    }

    pub fn zeros(dimension: usize, agents: usize) -> Self {
        Self { dimension, coords: vec![0.0; dimension * agents] }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_agents(&self) -> usize {
        self.coords.len() / self.dimension
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn agent_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn translated(&self, c: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, x) in out.coords.iter_mut().enumerate() {
            *x += c[k % self.dimension];
        }
        out
    }

    /// Applies `x -> Q x` to every agent.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Self {
        let d = self.dimension;
        let mut out = self.clone();
        for a in 0..self.num_agents() {
            let src = self.agent(a);
            let dst = out.agent_mut(a);
            for (r, slot) in dst.iter_mut().enumerate() {
                *slot = (0..d).map(|c| q[(r, c)] * src[c]).sum();
            }
        }
        out
    }

    pub fn centroid(&self, agents: impl IntoIterator<Item = usize>) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        let mut count = 0usize;
        for a in agents {
            for (k, x) in self.agent(a).iter().enumerate() {
                c[k] += x;
            }
            count += 1;
        }
        if count > 0 {
            for x in c.iter_mut() {
                *x /= count as f64;
            }
        }
        c
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.agent(a).iter().zip(self.agent(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// Per-edge quantities at a configuration. Components of `z` beyond the
/// ambient dimension are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeState {
    pub z: [f64; MAX_DIM],
    pub error: f64,
    pub g: f64,
    pub rho: f64,
}

pub(crate) fn squared_errors(edges: &[Edge], d: usize, coords: &[f64]) -> Vec<f64> {
    edges
        .iter()
        .map(|e| {
            let n2: f64 = (0..d).map(|k| coords[e.i * d + k] - coords[e.j * d + k]).map(|x| x * x).sum();
            n2 - e.desired * e.desired
        })
        .collect()
}

pub(crate) fn edge_states<P: Potential + ?Sized>(
    edges: &[Edge],
    d: usize,
    coords: &[f64],
    potential: &P,
) -> Result<Vec<EdgeState>, DomainError> {
    edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut z = [0.0; MAX_DIM];
            for (c, zc) in z.iter_mut().enumerate().take(d) {
                *zc = coords[e.i * d + c] - coords[e.j * d + c];
            }
            let error = z.iter().map(|x| x * x).sum::<f64>() - e.desired * e.desired;
            let terms = potential.evaluate(error, e.desired).map_err(|err| err.on_edge(k))?;
            Ok(EdgeState { z, error, g: terms.g, rho: terms.rho })
        })
        .collect()
}
