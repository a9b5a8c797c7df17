//! Hessian of the shape potential, equilibrium classification and
//! instability certificates.
//!
//! With `V = 1/2 sum_e phi(e_e)` the Hessian is `H = B̄ M B̄^T`, where `M` is
//! block diagonal with edge blocks `2 rho z z^T + g I`. In a frame whose
//! last axis is normal to a flat rigid subformation, the last-axis block
//! `2 R^T R + E` of the axis-sorted Hessian carries every certificate: a
//! vector `v` with `v^T H_aa v < 0`, padded with zeros on the other axes,
//! shows that `H` is not positive semidefinite.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::graph::{EdgeState, FormationGraph, Realization, Topology};
use crate::integrator::balance_residual;
use crate::linalg::{frobenius, principal_frame, sym_eigen};
use crate::potential::Potential;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Balance residual `max_i |sum_j g_ij z_ij|` below which a point is an equilibrium.
    pub eps_eq: f64,
    /// `max |e|` below which an equilibrium is the desired shape.
    pub eps_shape: f64,
    /// Smallest singular value of the centred rigid positions below which
    /// they are collinear (plane) or coplanar (space).
    pub eps_geom: f64,
    /// Distance below which two agents coincide.
    pub eps_pos: f64,
    /// Eigenvalue threshold relative to `|H|_F`.
    pub eps_eig: f64,
    /// A witness form must be below `-witness * |H|_F`.
    pub witness: f64,
    /// Relative band (to `max |g|`) inside which a `g` value counts as zero.
    pub eps_sign: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_eq: 1e-9,
            eps_shape: 1e-6,
            eps_geom: 1e-7,
            eps_pos: 1e-7,
            eps_eig: 1e-8,
            witness: 1e-10,
            eps_sign: 1e-9,
        }
    }
}

/// The Hessian and its factors at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBundle {
    pub dimension: usize,
    pub states: Vec<EdgeState>,
    /// `(n d) x (n d)`, agent-major.
    pub hessian: DMatrix<f64>,
    /// `(m d) x (m d)` block diagonal.
    pub m: DMatrix<f64>,
    /// `B diag(g) B^T`.
    pub e: DMatrix<f64>,
    /// Per axis, `diag(sqrt(rho_e) z_e[axis]) B^T` (`m x n`).
    pub r: Vec<DMatrix<f64>>,
    incidence: DMatrix<f64>,
}

pub fn assemble_hessian<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
) -> Result<HessianBundle, Error> {
    let states = graph.edge_states(p, potential)?;
    let d = graph.dimension();
    let b = graph.incidence().to_matrix();
    let ne = states.len();
    let mut m = DMatrix::zeros(ne * d, ne * d);
    for (k, s) in states.iter().enumerate() {
        for r in 0..d {
            for c in 0..d {
                let diag = if r == c { s.g } else { 0.0 };
                m[(k * d + r, k * d + c)] = 2.0 * s.rho * s.z[r] * s.z[c] + diag;
            }
        }
    }
    let bbar = graph.incidence().lifted(d);
    let hessian = &bbar * &m * bbar.transpose();
    let g = DMatrix::from_diagonal(&DVector::from_iterator(ne, states.iter().map(|s| s.g)));
    let e = &b * g * b.transpose();
    let r = (0..d).map(|a| axis_factor(&states, &b, a)).collect();
    Ok(HessianBundle { dimension: d, states, hessian, m, e, r, incidence: b })
}

fn axis_factor(states: &[EdgeState], b: &DMatrix<f64>, axis: usize) -> DMatrix<f64> {
    let w = DVector::from_iterator(states.len(), states.iter().map(|s| s.rho.max(0.0).sqrt() * s.z[axis]));
    DMatrix::from_diagonal(&w) * b.transpose()
}

impl HessianBundle {
    pub fn num_agents(&self) -> usize {
        self.incidence.nrows()
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.hessian)
    }

    /// Largest absolute sum over agent blocks of any row or column, per axis.
    pub fn max_block_sum(&self) -> f64 {
        let d = self.dimension;
        let n = self.num_agents();
        let mut worst = 0.0f64;
        for row in 0..n * d {
            for c in 0..d {
                let s: f64 = (0..n).map(|a| self.hessian[(row, a * d + c)]).sum();
                let t: f64 = (0..n).map(|a| self.hessian[(a * d + c, row)]).sum();
                worst = worst.max(s.abs()).max(t.abs());
            }
        }
        worst
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.hessian - self.hessian.transpose()).amax()
    }
}

/// The Hessian re-expressed in a rotated frame, sorted axis-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateBlocks {
    /// Rows are the new axes in original coordinates.
    pub frame: DMatrix<f64>,
    /// `T H T^T`, coordinates ordered `(axis 0: agents 0..n), (axis 1: ...)`.
    pub sorted: DMatrix<f64>,
    /// Diagonal blocks `2 R_a^T R_a + E` from the rotated edge vectors.
    pub blocks: Vec<DMatrix<f64>>,
    /// The rotated `R_a` factors.
    pub r: Vec<DMatrix<f64>>,
}

impl CoordinateBlocks {
    pub fn last_block(&self) -> &DMatrix<f64> {
        self.blocks.last().expect("dimension is at least two")
    }
}

pub fn coordinate_blocks(bundle: &HessianBundle, frame: &DMatrix<f64>) -> Result<CoordinateBlocks, Error> {
    let d = bundle.dimension;
    if frame.nrows() != d || frame.ncols() != d {
        return Err(Error::NonOrthogonal(f64::INFINITY));
    }
    let dev = (frame * frame.transpose() - DMatrix::<f64>::identity(d, d)).amax();
    if !(dev < 1e-10) {
        return Err(Error::NonOrthogonal(dev));
    }
    let n = bundle.num_agents();
    let mut t = DMatrix::zeros(n * d, n * d);
    for a in 0..d {
        for i in 0..n {
            for c in 0..d {
                t[(a * n + i, i * d + c)] = frame[(a, c)];
            }
        }
    }
    let sorted = &t * &bundle.hessian * t.transpose();

    let rotated: Vec<EdgeState> = bundle
        .states
        .iter()
        .map(|s| {
            let mut z = [0.0; crate::graph::MAX_DIM];
            for (a, za) in z.iter_mut().enumerate().take(d) {
                *za = (0..d).map(|c| frame[(a, c)] * s.z[c]).sum();
            }
            EdgeState { z, ..*s }
        })
        .collect();
    let r: Vec<DMatrix<f64>> = (0..d).map(|a| axis_factor(&rotated, &bundle.incidence, a)).collect();
    let blocks = (0..d)
        .map(|a| {
            let w = DVector::from_iterator(rotated.len(), rotated.iter().map(|s| 2.0 * s.rho * s.z[a] * s.z[a] + s.g));
            &bundle.incidence * DMatrix::from_diagonal(&w) * bundle.incidence.transpose()
        })
        .collect();
    Ok(CoordinateBlocks { frame: frame.clone(), sorted, blocks, r })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsdCheck {
    pub spectrum: Vec<f64>,
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub psd: bool,
    /// Eigenvalues with `|lambda| <= threshold`.
    pub zero_count: usize,
    pub negative_count: usize,
}

/// `psd` is false iff the smallest eigenvalue is below `-threshold`.
pub fn psd_check(m: &DMatrix<f64>, threshold: f64) -> Result<PsdCheck, Error> {
    let (spectrum, _) = sym_eigen(m)?;
    let min_eigenvalue = spectrum.first().copied().unwrap_or(0.0);
    Ok(PsdCheck {
        min_eigenvalue,
        threshold,
        psd: min_eigenvalue >= -threshold,
        zero_count: spectrum.iter().filter(|l| l.abs() <= threshold).count(),
        negative_count: spectrum.iter().filter(|&&l| l < -threshold).count(),
        spectrum,
    })
}

/// Shapes a flat rigid subformation can take at an undesired equilibrium.
/// Three-agent kinds apply in the plane, four-agent kinds in space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubformKind {
    /// Three distinct collinear agents; `j` between `i` and `k`.
    Collinear3,
    /// `j`, `k` coincide; `i` elsewhere.
    PairCoincident3,
    AllCoincident3,
    /// Convex quadrilateral `i j k l`; `i k` and `j l` are the diagonals.
    ConvexQuadrilateral,
    /// `k` strictly inside triangle `i j l`.
    InteriorPoint,
    AllCoincident4,
    /// `i`, `j`, `k` coincide; `l` elsewhere.
    TripleCoincident,
    /// `i = j` and `k = l`.
    TwoPairs,
    /// Pair `i = j` collinear with `k`, `l`, at one end; `k` in the middle.
    PairAtEnd,
    /// Pair `i = j` between `k` and `l` on a line.
    PairInMiddle,
    /// Four distinct collinear agents in the order `i j k l`.
    Collinear4,
    Other,
}

impl SubformKind {
    pub const PLANAR: [SubformKind; 3] =
        [SubformKind::Collinear3, SubformKind::PairCoincident3, SubformKind::AllCoincident3];
    pub const SPATIAL: [SubformKind; 8] = [
        SubformKind::ConvexQuadrilateral,
        SubformKind::InteriorPoint,
        SubformKind::AllCoincident4,
        SubformKind::TripleCoincident,
        SubformKind::TwoPairs,
        SubformKind::PairAtEnd,
        SubformKind::PairInMiddle,
        SubformKind::Collinear4,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            SubformKind::Collinear3 => "collinear3",
            SubformKind::PairCoincident3 => "pair_coincident3",
            SubformKind::AllCoincident3 => "all_coincident3",
            SubformKind::ConvexQuadrilateral => "convex_quadrilateral",
            SubformKind::InteriorPoint => "interior_point",
            SubformKind::AllCoincident4 => "all_coincident4",
            SubformKind::TripleCoincident => "triple_coincident",
            SubformKind::TwoPairs => "two_pairs",
            SubformKind::PairAtEnd => "pair_at_end",
            SubformKind::PairInMiddle => "pair_in_middle",
            SubformKind::Collinear4 => "collinear4",
            SubformKind::Other => "other",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::PLANAR
            .iter()
            .chain(Self::SPATIAL.iter())
            .chain(core::iter::once(&SubformKind::Other))
            .copied()
            .find(|k| k.tag() == tag)
    }

    /// Coincidence-only shapes: balanced for every potential family.
    pub fn is_coincidence(&self) -> bool {
        matches!(
            self,
            SubformKind::PairCoincident3
                | SubformKind::AllCoincident3
                | SubformKind::AllCoincident4
                | SubformKind::TripleCoincident
                | SubformKind::TwoPairs
        )
    }
}

/// A subform together with the node playing each role `i, j, k(, l)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Subform {
    pub kind: SubformKind,
    pub roles: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum EquilibriumClass {
    Desired,
    /// Flex agent on top of its anchor.
    UndesiredQI1,
    /// Rigid agents collinear (plane) or coplanar (space).
    UndesiredQI2 {
        subform: Subform,
    },
    /// Undesired, but neither of the above.
    UndesiredOther,
    NotEquilibrium,
}

impl EquilibriumClass {
    pub fn is_undesired(&self) -> bool {
        matches!(
            self,
            EquilibriumClass::UndesiredQI1 | EquilibriumClass::UndesiredQI2 { .. } | EquilibriumClass::UndesiredOther
        )
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EquilibriumClass::Desired => "desired",
            EquilibriumClass::UndesiredQI1 => "undesired_q_i1",
            EquilibriumClass::UndesiredQI2 { .. } => "undesired_q_i2",
            EquilibriumClass::UndesiredOther => "undesired_other",
            EquilibriumClass::NotEquilibrium => "not_equilibrium",
        }
    }

    pub fn subform(&self) -> Option<&Subform> {
        match self {
            EquilibriumClass::UndesiredQI2 { subform } => Some(subform),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub class: EquilibriumClass,
    pub residual: f64,
    pub max_shape_error: f64,
    /// `|z_flex|`.
    pub flex_gap: f64,
    /// Smallest singular value of the centred rigid positions.
    pub flatness: f64,
    /// Quantities that fell close to a tolerance boundary.
    pub notes: Vec<String>,
}

/// Principal frame of the rigid agents: rows are axes, the last one is the
/// direction of least spread.
pub fn rigid_frame(graph: &FormationGraph, p: &Realization) -> Result<(DMatrix<f64>, Vec<f64>), Error> {
    graph.check_dims(p)?;
    let pts: Vec<&[f64]> = (0..graph.num_rigid()).map(|a| p.agent(a)).collect();
    principal_frame(&pts, graph.dimension())
}

pub fn classify<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    tol: &Tolerances,
) -> Result<Classification, Error> {
    graph.check_dims(p)?;
    let residual = balance_residual(graph, p.as_slice(), potential)?;
    let errors = graph.distance_errors(p)?;
    let max_shape_error = errors.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    let flex_gap = p.distance(graph.anchor_node(), graph.flex_node());
    let (frame, sv) = rigid_frame(graph, p)?;
    let flatness = sv.last().copied().unwrap_or(0.0);

    let mut notes = Vec::new();
    let near = |x: f64, eps: f64| x >= eps && x < 100.0 * eps;
    if near(residual, tol.eps_eq) {
        notes.push(format!("balance residual {residual:e} just above eps_eq"));
    }
    let class = if residual >= tol.eps_eq {
        EquilibriumClass::NotEquilibrium
    } else if max_shape_error < tol.eps_shape {
        EquilibriumClass::Desired
    } else if flex_gap < tol.eps_pos {
        EquilibriumClass::UndesiredQI1
    } else if flatness < tol.eps_geom {
        let subform = infer_subform(graph, p, &frame, tol);
        EquilibriumClass::UndesiredQI2 { subform }
    } else {
        EquilibriumClass::UndesiredOther
    };
    if class.is_undesired() {
        if near(flex_gap, tol.eps_pos) {
            notes.push(format!("flex gap {flex_gap:e} just above eps_pos"));
        }
        if near(flatness, tol.eps_geom) {
            notes.push(format!("rigid flatness {flatness:e} just above eps_geom"));
        }
    }
    Ok(Classification { class, residual, max_shape_error, flex_gap, flatness, notes })
}

fn clusters(p: &Realization, agents: usize, eps: f64) -> Vec<Vec<usize>> {
    let mut label: Vec<usize> = (0..agents).collect();
    for a in 0..agents {
        for b in a + 1..agents {
            if p.distance(a, b) < eps {
                let (la, lb) = (label[a], label[b]);
                for l in label.iter_mut() {
                    if *l == lb {
                        *l = la;
                    }
                }
            }
        }
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    for a in 0..agents {
        match out.iter_mut().find(|c| label[c[0]] == label[a]) {
            Some(c) => c.push(a),
            None => out.push(vec![a]),
        }
    }
    out.sort_by_key(|c| core::cmp::Reverse(c.len()));
    out
}

fn project(p: &Realization, agent: usize, frame: &DMatrix<f64>, axes: usize) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (a, o) in out.iter_mut().enumerate().take(axes) {
        *o = (0..p.dimension()).map(|c| frame[(a, c)] * p.agent(agent)[c]).sum();
    }
    out
}

/// Twice the signed area of `abc`.
fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance of the middle point of `abc` from the line through the other two.
fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2], eps: f64) -> bool {
    let longest = dist2(a, b).max(dist2(b, c)).max(dist2(a, c));
    longest == 0.0 || cross(a, b, c).abs() / longest < eps
}

fn infer_subform(graph: &FormationGraph, p: &Realization, frame: &DMatrix<f64>, tol: &Tolerances) -> Subform {
    let other = |n: usize| Subform { kind: SubformKind::Other, roles: (0..n).collect() };
    match graph.topology() {
        Topology::TriangleFlex => {
            let cl = clusters(p, 3, tol.eps_pos);
            match cl.len() {
                1 => Subform { kind: SubformKind::AllCoincident3, roles: vec![0, 1, 2] },
                2 => Subform { kind: SubformKind::PairCoincident3, roles: vec![cl[1][0], cl[0][0], cl[0][1]] },
                _ => {
                    let mut by_x: Vec<(f64, usize)> = (0..3).map(|a| (project(p, a, frame, 1)[0], a)).collect();
                    by_x.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let (lo, mid, hi) = (by_x[0].1, by_x[1].1, by_x[2].1);
                    Subform { kind: SubformKind::Collinear3, roles: vec![lo.min(hi), mid, lo.max(hi)] }
                }
            }
        }
        Topology::TetrahedronFlex => {
            let cl = clusters(p, 4, tol.eps_pos);
            let pt = |a: usize| project(p, a, frame, 2);
            let sizes: Vec<usize> = cl.iter().map(Vec::len).collect();
            match sizes.as_slice() {
                [4] => Subform { kind: SubformKind::AllCoincident4, roles: vec![0, 1, 2, 3] },
                [3, 1] => {
                    Subform { kind: SubformKind::TripleCoincident, roles: vec![cl[0][0], cl[0][1], cl[0][2], cl[1][0]] }
                }
                [2, 2] => {
                    let (a, b) = if cl[0][0] < cl[1][0] { (&cl[0], &cl[1]) } else { (&cl[1], &cl[0]) };
                    Subform { kind: SubformKind::TwoPairs, roles: vec![a[0], a[1], b[0], b[1]] }
                }
                [2, 1, 1] => {
                    let (pair, s1, s2) = (&cl[0], cl[1][0], cl[2][0]);
                    let pp = pt(pair[0]);
                    if !collinear(pp, pt(s1), pt(s2), tol.eps_geom) {
                        return other(4);
                    }
                    let (d1, d2, d12) = (dist2(pp, pt(s1)), dist2(pp, pt(s2)), dist2(pt(s1), pt(s2)));
                    if d12 >= d1.max(d2) {
                        let (k, l) = (s1.min(s2), s1.max(s2));
                        Subform { kind: SubformKind::PairInMiddle, roles: vec![pair[0], pair[1], k, l] }
                    } else {
                        let (k, l) = if d1 < d2 { (s1, s2) } else { (s2, s1) };
                        Subform { kind: SubformKind::PairAtEnd, roles: vec![pair[0], pair[1], k, l] }
                    }
                }
                [1, 1, 1, 1] => classify_distinct4(&[pt(0), pt(1), pt(2), pt(3)], tol).unwrap_or_else(|| other(4)),
                _ => other(4),
            }
        }
        Topology::Other => other(graph.num_rigid()),
    }
}

fn classify_distinct4(q: &[[f64; 2]; 4], tol: &Tolerances) -> Option<Subform> {
    let all_line = {
        let cx = q.iter().map(|v| v[0]).sum::<f64>() / 4.0;
        let cy = q.iter().map(|v| v[1]).sum::<f64>() / 4.0;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for v in q {
            sxx += (v[0] - cx) * (v[0] - cx);
            sxy += (v[0] - cx) * (v[1] - cy);
            syy += (v[1] - cy) * (v[1] - cy);
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let small = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
        small.max(0.0).sqrt() < tol.eps_geom
    };
    if all_line {
        // Already in the principal frame, so the first coordinate orders the line.
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| q[a][0].total_cmp(&q[b][0]));
        if order[0] > order[3] {
            order.reverse();
        }
        return Some(Subform { kind: SubformKind::Collinear4, roles: order });
    }
    for a in 0..4 {
        for b in a + 1..4 {
            for c in b + 1..4 {
                if collinear(q[a], q[b], q[c], tol.eps_geom) {
                    return None;
                }
            }
        }
    }
    for k in 0..4 {
        let o: Vec<usize> = (0..4).filter(|&x| x != k).collect();
        let s1 = cross(q[o[0]], q[o[1]], q[k]).signum();
        let s2 = cross(q[o[1]], q[o[2]], q[k]).signum();
        let s3 = cross(q[o[2]], q[o[0]], q[k]).signum();
        if s1 == s2 && s2 == s3 {
            return Some(Subform { kind: SubformKind::InteriorPoint, roles: vec![o[0], o[1], k, o[2]] });
        }
    }
    // Convex position: order by angle about the centroid.
    let cx = q.iter().map(|v| v[0]).sum::<f64>() / 4.0;
    let cy = q.iter().map(|v| v[1]).sum::<f64>() / 4.0;
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ta = (q[a][1] - cy).atan2(q[a][0] - cx);
        let tb = (q[b][1] - cy).atan2(q[b][0] - cx);
        ta.total_cmp(&tb)
    });
    let start = order.iter().position(|&x| x == 0).expect("agent 0 is present");
    order.rotate_left(start);
    Some(Subform { kind: SubformKind::ConvexQuadrilateral, roles: order })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "agent", rename_all = "snake_case")]
pub enum WitnessKind {
    /// All ones except the flex agent.
    FlexSum,
    /// Unit vector on one agent.
    AgentIndicator(usize),
    /// Eigenvector of the most negative eigenvalue of the last-axis block.
    Eigenvector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub kind: WitnessKind,
    /// Vector on the last-axis block (one entry per agent).
    pub vector: Vec<f64>,
    /// `v^T H_aa v`.
    pub form: f64,
    /// The same direction in agent-major coordinates of the original frame;
    /// its form under the full Hessian equals `form`.
    pub padded: Vec<f64>,
    /// Rows are the axes of the frame used.
    pub frame: Vec<Vec<f64>>,
    pub threshold: f64,
}

/// Finds a direction of negative curvature on the last-axis block of an
/// undesired equilibrium. Candidates are tried in a fixed order: the
/// flex-sum vector, agent indicators in index order, then the lowest
/// eigenvector. The first whose form is below `-witness * |H|_F` wins.
pub fn instability_witness<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    class: &EquilibriumClass,
    tol: &Tolerances,
) -> Result<Witness, Error> {
    if !class.is_undesired() {
        return Err(Error::NotUndesired);
    }
    let bundle = assemble_hessian(graph, p, potential)?;
    let (frame, _) = rigid_frame(graph, p)?;
    let blocks = coordinate_blocks(&bundle, &frame)?;
    witness_from_blocks(graph, &bundle, &blocks, tol)
}

fn witness_from_blocks(
    graph: &FormationGraph,
    bundle: &HessianBundle,
    blocks: &CoordinateBlocks,
    tol: &Tolerances,
) -> Result<Witness, Error> {
    let n = graph.num_nodes();
    let d = graph.dimension();
    let h = blocks.last_block();
    let threshold = tol.witness * bundle.norm();
    let form = |v: &DVector<f64>| (v.transpose() * h * v)[(0, 0)];

    let mut candidates: Vec<(WitnessKind, DVector<f64>)> = Vec::new();
    let mut flex_sum = DVector::from_element(n, 1.0);
    flex_sum[graph.flex_node()] = 0.0;
    candidates.push((WitnessKind::FlexSum, flex_sum));
    for a in 0..n {
        let mut v = DVector::zeros(n);
        v[a] = 1.0;
        candidates.push((WitnessKind::AgentIndicator(a), v));
    }
    let (_, vectors) = sym_eigen(h)?;
    candidates.push((WitnessKind::Eigenvector, vectors.column(0).into_owned()));

    let mut best = f64::INFINITY;
    for (kind, v) in candidates {
        let f = form(&v);
        best = best.min(f);
        if f < -threshold {
            let normal = blocks.frame.row(d - 1);
            let padded = (0..n * d).map(|idx| v[idx / d] * normal[idx % d]).collect();
            let frame = (0..d).map(|r| blocks.frame.row(r).iter().copied().collect()).collect();
            return Ok(Witness { kind, vector: v.iter().copied().collect(), form: f, padded, frame, threshold });
        }
    }
    Err(Error::NoNegativeDirection { best, threshold })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Negative,
    Positive,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Claim {
    pub statement: String,
    /// Alternative sums of `g` over node pairs; the claim holds if any
    /// alternative satisfies the relation (most claims have one).
    pub alternatives: Vec<Vec<(usize, usize)>>,
    pub relation: Relation,
    pub value: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignReport {
    pub subform: Subform,
    pub zero_band: f64,
    pub claims: Vec<Claim>,
}

impl SignReport {
    pub fn all_passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Claim> {
        self.claims.iter().filter(|c| !c.passed)
    }
}

struct ClaimBuilder<'g> {
    graph: &'g FormationGraph,
    g: Vec<f64>,
    band: f64,
    claims: Vec<Claim>,
}

impl ClaimBuilder<'_> {
    fn g(&self, a: usize, b: usize) -> f64 {
        self.graph.edge_between(a, b).map_or(0.0, |k| self.g[k])
    }

    fn check(&self, relation: Relation, value: f64) -> bool {
        match relation {
            Relation::Negative => value < -self.band,
            Relation::Positive => value > self.band,
            Relation::Zero => value.abs() <= self.band,
        }
    }

    fn single(&mut self, a: usize, b: usize, relation: Relation) {
        self.sum(&[(a, b)], relation);
    }

    fn sum(&mut self, pairs: &[(usize, usize)], relation: Relation) {
        self.any(&[pairs], relation);
    }

    /// Records the alternative closest to satisfying `relation`.
    fn any(&mut self, alternatives: &[&[(usize, usize)]], relation: Relation) {
        let alternatives: Vec<Vec<(usize, usize)>> =
            alternatives.iter().map(|pairs| pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()).collect();
        let sums = alternatives.iter().map(|pairs| pairs.iter().map(|&(a, b)| self.g(a, b)).sum::<f64>());
        let value = match relation {
            Relation::Negative => sums.fold(f64::INFINITY, f64::min),
            Relation::Positive => sums.fold(f64::NEG_INFINITY, f64::max),
            Relation::Zero => sums.min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(f64::NAN),
        };
        let statement = claim_statement(&alternatives, relation, 0);
        let passed = self.check(relation, value);
        self.claims.push(Claim { statement, alternatives, relation, value, passed });
    }

    /// Sum of `g` over the rigid edges at `a` among `others`.
    fn incident(&self, a: usize, others: &[usize]) -> (Vec<(usize, usize)>, f64) {
        let pairs: Vec<(usize, usize)> = others.iter().filter(|&&b| b != a).map(|&b| (a, b)).collect();
        let v = pairs.iter().map(|&(x, y)| self.g(x, y)).sum();
        (pairs, v)
    }
}

/// Renders e.g. `g[0,1] + g[0,2] < 0 or g[1,2] < 0`, node labels shifted by `base`.
pub fn claim_statement(alternatives: &[Vec<(usize, usize)>], relation: Relation, base: usize) -> String {
    let rel = match relation {
        Relation::Negative => "< 0",
        Relation::Positive => "> 0",
        Relation::Zero => "= 0",
    };
    let parts: Vec<String> = alternatives
        .iter()
        .map(|pairs| {
            let terms: Vec<String> = pairs.iter().map(|(a, b)| format!("g[{},{}]", a + base, b + base)).collect();
            format!("{} {rel}", terms.join(" + "))
        })
        .collect();
    parts.join(" or ")
}

/// Evaluates every sign claim attached to the subform of a flat undesired
/// equilibrium. `expected`, when given, must match the inferred subform.
pub fn verify_sign_properties<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    expected: Option<SubformKind>,
    tol: &Tolerances,
) -> Result<SignReport, Error> {
    let c = classify(graph, p, potential, tol)?;
    let Some(subform) = c.class.subform().cloned() else {
        return Err(Error::SubformMismatch { expected, found: None });
    };
    if expected.is_some_and(|e| e != subform.kind) || subform.kind == SubformKind::Other {
        return Err(Error::SubformMismatch { expected, found: Some(subform.kind) });
    }
    let states = graph.edge_states(p, potential)?;
    let g: Vec<f64> = states.iter().map(|s| s.g).collect();
    let band = tol.eps_sign * g.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let mut b = ClaimBuilder { graph, g, band, claims: Vec::new() };
    let r = &subform.roles;
    use Relation::*;
    match subform.kind {
        SubformKind::Collinear3 => {
            let (i, j, k) = (r[0], r[1], r[2]);
            b.single(i, j, Negative);
            b.single(j, k, Negative);
            b.single(i, k, Positive);
            b.sum(&[(i, j), (i, k)], Negative);
            b.sum(&[(j, k), (i, k)], Negative);
        }
        SubformKind::PairCoincident3 => {
            let (i, j, k) = (r[0], r[1], r[2]);
            b.single(j, k, Negative);
            b.single(i, j, Zero);
            b.single(i, k, Zero);
        }
        SubformKind::AllCoincident3 => {
            let (i, j, k) = (r[0], r[1], r[2]);
            b.single(i, j, Negative);
            b.single(j, k, Negative);
            b.single(i, k, Negative);
        }
        SubformKind::ConvexQuadrilateral => {
            let (i, j, k, l) = (r[0], r[1], r[2], r[3]);
            for (x, y) in [(i, j), (j, k), (k, l), (i, l)] {
                b.single(x, y, Negative);
            }
            b.single(i, k, Positive);
            b.single(j, l, Positive);
            for a in [i, j, k, l] {
                let (pairs, _) = b.incident(a, r);
                b.sum(&pairs, Negative);
            }
        }
        SubformKind::InteriorPoint => {
            let (i, j, k, l) = (r[0], r[1], r[2], r[3]);
            for (x, y) in [(i, k), (j, k), (k, l)] {
                b.single(x, y, Negative);
            }
            for (x, y) in [(i, j), (i, l), (j, l)] {
                b.single(x, y, Positive);
            }
        }
        SubformKind::AllCoincident4 => {
            for x in 0..4 {
                for y in x + 1..4 {
                    b.single(r[x], r[y], Negative);
                }
            }
        }
        SubformKind::TripleCoincident => {
            let (i, j, k, l) = (r[0], r[1], r[2], r[3]);
            for (x, y) in [(i, l), (j, l), (k, l)] {
                b.single(x, y, Zero);
            }
            for (x, y) in [(i, j), (j, k), (i, k)] {
                b.single(x, y, Negative);
            }
        }
        SubformKind::TwoPairs => {
            let (i, j, k, l) = (r[0], r[1], r[2], r[3]);
            b.sum(&[(i, k), (i, l)], Zero);
            b.sum(&[(j, k), (j, l)], Zero);
            b.sum(&[(i, k), (j, k)], Zero);
            b.sum(&[(i, l), (j, l)], Zero);
            b.single(i, j, Negative);
            b.single(k, l, Negative);
        }
        SubformKind::PairAtEnd => {
            let (i, j, l) = (r[0], r[1], r[3]);
            let (pl, _) = b.incident(l, r);
            b.sum(&pl, Negative);
            let (pi, _) = b.incident(i, r);
            let (pj, _) = b.incident(j, r);
            b.any(&[&pi, &pj], Negative);
        }
        SubformKind::PairInMiddle => {
            let (k, l) = (r[2], r[3]);
            let (pl, _) = b.incident(l, r);
            b.sum(&pl, Negative);
            let (pk, _) = b.incident(k, r);
            b.sum(&pk, Negative);
        }
        SubformKind::Collinear4 => {
            // The labelling along the line has two orientations; both must hold.
            let forward = [r[0], r[1], r[2], r[3]];
            let backward = [r[3], r[2], r[1], r[0]];
            for [i, j, k, l] in [forward, backward] {
                let (pl, _) = b.incident(l, r);
                b.sum(&pl, Negative);
                let gij = b.g(i, j);
                let pick = if gij < -band {
                    i
                } else if gij > band {
                    k
                } else {
                    j
                };
                let (pp, _) = b.incident(pick, r);
                b.sum(&pp, Negative);
            }
        }
        SubformKind::Other => unreachable!("rejected above"),
    }
    Ok(SignReport { subform, zero_band: band, claims: b.claims })
}

/// Everything the analysis produces for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    #[serde(skip)]
    pub bundle: HessianBundle,
    #[serde(skip)]
    pub blocks: CoordinateBlocks,
    pub classification: Classification,
    pub spectrum: Vec<f64>,
    /// Spectrum of the last-axis block in the rigid principal frame.
    pub block_spectrum: Vec<f64>,
    pub psd: PsdCheck,
    pub witness: Option<Witness>,
    /// Set when an undesired equilibrium admits no negative direction.
    pub witness_failure: Option<String>,
    pub signs: Option<SignReport>,
    /// Whether the graph is one of the two topologies the instability
    /// result covers.
    pub certified_topology: bool,
}

impl StabilityReport {
    pub fn class(&self) -> &EquilibriumClass {
        &self.classification.class
    }

    /// True unless an undesired equilibrium came without a witness.
    pub fn contract_holds(&self) -> bool {
        !self.classification.class.is_undesired() || self.witness.is_some()
    }
}

pub fn analyze<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    tol: &Tolerances,
) -> Result<StabilityReport, Error> {
    let bundle = assemble_hessian(graph, p, potential)?;
    let classification = classify(graph, p, potential, tol)?;
    let (frame, _) = rigid_frame(graph, p)?;
    let blocks = coordinate_blocks(&bundle, &frame)?;
    let threshold = (tol.eps_eig * bundle.norm()).max(f64::MIN_POSITIVE);
    let psd = psd_check(&bundle.hessian, threshold)?;
    let (block_spectrum, _) = sym_eigen(blocks.last_block())?;
    let (witness, witness_failure) = if classification.class.is_undesired() {
        match witness_from_blocks(graph, &bundle, &blocks, tol) {
            Ok(w) => (Some(w), None),
            Err(e) => (None, Some(format!("{e}"))),
        }
    } else {
        (None, None)
    };
    let signs = match classification.class.subform() {
        Some(s) if s.kind != SubformKind::Other => verify_sign_properties(graph, p, potential, Some(s.kind), tol).ok(),
        _ => None,
    };
    Ok(StabilityReport {
        spectrum: psd.spectrum.clone(),
        bundle,
        blocks,
        classification,
        block_spectrum,
        psd,
        witness,
        witness_failure,
        signs,
        certified_topology: graph.topology() != Topology::Other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialFamily;

    const Q: PotentialFamily = PotentialFamily::Quadratic;

    fn tri() -> FormationGraph {
        FormationGraph::triangle_with_flex(4.0, 4.0, 4.0, 4.0).unwrap()
    }

    fn desired_tri() -> Realization {
        let h = 2.0 * 3f64.sqrt();
        Realization::from_points(2, [[0.0, 0.0], [4.0, 0.0], [2.0, h], [2.0, h + 4.0]]).unwrap()
    }

    #[test]
    fn coincident_edge_block_is_g_identity() {
        let g = FormationGraph::new(2, 3, [(0, 1, 4.0), (1, 2, 4.0)], (1, 2)).unwrap();
        let p = Realization::from_points(2, [[1.0, 1.0], [1.0, 1.0], [1.0, 5.0]]).unwrap();
        let b = assemble_hessian(&g, &p, &Q).unwrap();
        assert_eq!(b.m[(0, 0)], -16.0);
        assert_eq!(b.m[(1, 1)], -16.0);
        assert_eq!(b.m[(0, 1)], 0.0);
    }

    #[test]
    fn two_agent_last_axis_block() {
        let g = FormationGraph::new(2, 3, [(0, 1, 4.0), (1, 2, 4.0)], (1, 2)).unwrap();
        let p = Realization::from_points(2, [[0.0, 0.0], [3.0, 1.0], [3.0, 5.0]]).unwrap();
        let b = assemble_hessian(&g, &p, &Q).unwrap();
        let blocks = coordinate_blocks(&b, &DMatrix::identity(2, 2)).unwrap();
        let h = blocks.last_block();
        let e01 = 10.0 - 16.0;
        let expect = e01 + 2.0 * 1.0;
        assert!((h[(0, 0)] - expect).abs() < 1e-12);
        assert!((h[(0, 1)] + expect).abs() < 1e-12);
    }

    #[test]
    fn desired_formation_is_psd_with_rigid_motion_kernel() {
        let b = assemble_hessian(&tri(), &desired_tri(), &Q).unwrap();
        let chk = psd_check(&b.hessian, 1e-8 * b.norm()).unwrap();
        assert!(chk.psd);
        assert_eq!(chk.zero_count, 4);
        assert!(b.max_block_sum() < 1e-12);
    }

    #[test]
    fn non_orthogonal_frame_rejected() {
        let b = assemble_hessian(&tri(), &desired_tri(), &Q).unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(coordinate_blocks(&b, &f), Err(Error::NonOrthogonal(_))));
    }

    #[test]
    fn identity_is_psd() {
        let c = psd_check(&DMatrix::identity(3, 3), 1e-12).unwrap();
        assert!(c.psd);
        assert_eq!(c.min_eigenvalue, 1.0);
    }

    #[test]
    fn classify_desired_and_flex_collapse() {
        let g = tri();
        let p = desired_tri();
        assert_eq!(classify(&g, &p, &Q, &Tolerances::default()).unwrap().class, EquilibriumClass::Desired);
        let mut q = p.clone();
        let anchor = q.agent(2).to_vec();
        q.agent_mut(3).copy_from_slice(&anchor);
        let c = classify(&g, &q, &Q, &Tolerances::default()).unwrap();
        assert_eq!(c.class, EquilibriumClass::UndesiredQI1);
        let w = instability_witness(&g, &q, &Q, &c.class, &Tolerances::default()).unwrap();
        assert_eq!(w.kind, WitnessKind::FlexSum);
        assert!((w.form + 16.0).abs() < 1e-12);
    }

    #[test]
    fn witness_refused_for_desired() {
        let g = tri();
        let p = desired_tri();
        let r = instability_witness(&g, &p, &Q, &EquilibriumClass::Desired, &Tolerances::default());
        assert_eq!(r, Err(Error::NotUndesired));
    }

    #[test]
    fn pair_coincident_construction() {
        let g = tri();
        let p = Realization::from_points(2, [[0.0, 4.0], [0.0, 0.0], [0.0, 0.0], [4.0, 0.0]]).unwrap();
        let tol = Tolerances::default();
        let c = classify(&g, &p, &Q, &tol).unwrap();
        let s = c.class.subform().unwrap();
        assert_eq!(s.kind, SubformKind::PairCoincident3);
        assert_eq!(s.roles, vec![0, 1, 2]);
        let rep = verify_sign_properties(&g, &p, &Q, Some(SubformKind::PairCoincident3), &tol).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        let w = instability_witness(&g, &p, &Q, &c.class, &tol).unwrap();
        assert!(w.form < 0.0);
    }

    #[test]
    fn subform_mismatch_reported() {
        let g = tri();
        let r = verify_sign_properties(&g, &desired_tri(), &Q, None, &Tolerances::default());
        assert!(matches!(r, Err(Error::SubformMismatch { found: None, .. })));
    }

    #[test]
    fn tags_round_trip() {
        for k in SubformKind::PLANAR.iter().chain(SubformKind::SPATIAL.iter()) {
            assert_eq!(SubformKind::from_tag(k.tag()), Some(*k));
        }
    }
}
