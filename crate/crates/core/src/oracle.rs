//! Independent constructions of undesired equilibria.
//!
//! Three routes, none of which relies on the classification code:
//! - coincidence constructions, balanced by symmetry for any potential;
//! - a line solver that puts clusters of agents on one axis and solves the
//!   one-dimensional balance equations for the gaps (Gauss–Newton with a
//!   minimum-norm step, so the translation gauge needs no pinning);
//! - a planar route for space formations: the rigid graph is flowed inside
//!   the plane from a fixed seed, polished, and lifted to `z = 0`.
//!
//! Every entry is re-checked against the full balance map before it is
//! returned.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::controller::ClosedLoop;
use crate::graph::{FormationGraph, Realization, Topology};
use crate::integrator::{balance_residual, integrate, IntegrationOptions};
use crate::linalg::min_norm_solve;
use crate::potential::Potential;
use crate::stability::{assemble_hessian, classify, EquilibriumClass, SubformKind, Tolerances};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RootfindCollinear,
    RootfindCoplanar,
    CoincidenceConstruct,
    FlowCapture,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub realization: Realization,
    pub class: EquilibriumClass,
    /// `max_i |sum_j g_ij z_ij|`.
    pub residual: f64,
    pub method: Method,
    /// Capture time for flow captures.
    pub time: Option<f64>,
}

impl CatalogEntry {
    pub fn subform(&self) -> Option<SubformKind> {
        self.class.subform().map(|s| s.kind)
    }
}

/// A realization of the desired shape: rigid agents by trilateration, the
/// flex agent along the last axis from its anchor.
pub fn desired_realization(graph: &FormationGraph) -> Result<Realization, Error> {
    let d = graph.dimension();
    let len = |a: usize, b: usize| {
        graph
            .edge_between(a, b)
            .map(|k| graph.edges()[k].desired)
            .ok_or_else(|| Error::Construction { target: "desired", reason: format!("edge ({a},{b}) missing") })
    };
    let fail = |why: &str| Error::Construction { target: "desired", reason: String::from(why) };
    let mut pts: Vec<[f64; 3]> = Vec::new();
    match graph.topology() {
        Topology::TriangleFlex | Topology::TetrahedronFlex => {
            let d01 = len(0, 1)?;
            pts.push([0.0; 3]);
            pts.push([d01, 0.0, 0.0]);
            let (d02, d12) = (len(0, 2)?, len(1, 2)?);
            let x = (d02 * d02 - d12 * d12 + d01 * d01) / (2.0 * d01);
            let y2 = d02 * d02 - x * x;
            if !(y2 > 0.0) {
                return Err(fail("triangle inequality fails"));
            }
            pts.push([x, y2.sqrt(), 0.0]);
            if graph.topology() == Topology::TetrahedronFlex {
                let (d03, d13, d23) = (len(0, 3)?, len(1, 3)?, len(2, 3)?);
                let x3 = (d03 * d03 - d13 * d13 + d01 * d01) / (2.0 * d01);
                let (px, py) = (pts[2][0], pts[2][1]);
                let y3 = (d03 * d03 - d23 * d23 + px * px + py * py - 2.0 * px * x3) / (2.0 * py);
                let z2 = d03 * d03 - x3 * x3 - y3 * y3;
                if !(z2 > 0.0) {
                    return Err(fail("distances do not span a tetrahedron"));
                }
                pts.push([x3, y3, z2.sqrt()]);
            }
        }
        Topology::Other => return Err(fail("only the triangle and tetrahedron graphs are constructed")),
    }
    let anchor = pts[graph.anchor_node()];
    let mut flex = anchor;
    flex[d - 1] += graph.flex_edge().desired;
    pts.push(flex);
    Realization::from_points(d, pts.iter().map(|p| &p[..d])).map_err(Into::into)
}

/// Places rigid agents on the first axis at `xs` and the flex agent at its
/// desired distance along the last axis, which leaves the flex edge at rest.
fn lift_line(graph: &FormationGraph, xs: &[f64]) -> Realization {
    let d = graph.dimension();
    let n = graph.num_nodes();
    let mut p = Realization::zeros(d, n);
    for (a, &x) in xs.iter().enumerate() {
        p.agent_mut(a)[0] = x;
    }
    let ax = xs[graph.anchor_node()];
    let f = p.agent_mut(graph.flex_node());
    f[0] = ax;
    f[d - 1] = graph.flex_edge().desired;
    p
}

/// One-dimensional balance of the rigid agents at positions `xs`.
fn line_balance<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    xs: &[f64],
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let nr = graph.num_rigid();
    let mut f = DVector::zeros(nr);
    let mut h = DMatrix::zeros(nr, nr);
    for e in graph.edges().iter().filter(|e| e.j < nr) {
        let z = xs[e.i] - xs[e.j];
        let err = z * z - e.desired * e.desired;
        let t = potential.evaluate(err, e.desired).ok()?;
        f[e.i] += t.g * z;
        f[e.j] -= t.g * z;
        let k = 2.0 * t.rho * z * z + t.g;
        h[(e.i, e.i)] += k;
        h[(e.j, e.j)] += k;
        h[(e.i, e.j)] -= k;
        h[(e.j, e.i)] -= k;
    }
    Some((f, h))
}

/// Solves the line balance with agents grouped in `clusters` (in line order,
/// agents of one cluster share a position) starting from `gaps`.
fn solve_on_line<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    clusters: &[&[usize]],
    gaps: &[f64],
) -> Option<Vec<f64>> {
    let nr = graph.num_rigid();
    let kc = clusters.len();
    let mut c = vec![0.0; kc];
    for m in 1..kc {
        c[m] = c[m - 1] + gaps[m - 1];
    }
    let place = |c: &[f64]| {
        let mut xs = vec![0.0; nr];
        for (m, cl) in clusters.iter().enumerate() {
            for &a in *cl {
                xs[a] = c[m];
            }
        }
        xs
    };
    let scale = graph.mean_desired();
    for _ in 0..100 {
        let xs = place(&c);
        let (f, h) = line_balance(graph, potential, &xs)?;
        if f.amax() == 0.0 {
            break;
        }
        let mut j = DMatrix::zeros(nr, kc);
        for (m, cl) in clusters.iter().enumerate() {
            for &b in *cl {
                for a in 0..nr {
                    j[(a, m)] += h[(a, b)];
                }
            }
        }
        let step = min_norm_solve(&j, &(-&f), 1e-12).ok()?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            if let Some((ft, _)) = line_balance(graph, potential, &place(&trial)) {
                if ft.norm() < f.norm() {
                    c = trial;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let xs = place(&c);
    let (f, _) = line_balance(graph, potential, &xs)?;
    let min_gap = (1..kc).map(|m| (c[m] - c[m - 1]).abs()).fold(f64::INFINITY, f64::min);
    let ordered = (1..kc).all(|m| c[m] > c[m - 1]);
    (f.amax() < 1e-10 * scale.max(1.0) && ordered && min_gap > 1e-4 * scale).then_some(xs)
}

fn seed_gaps(count: usize, scale: f64) -> Vec<Vec<f64>> {
    const FACTORS: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0];
    let mut out = vec![Vec::new()];
    for _ in 0..count {
        let mut next = Vec::new();
        for s in &out {
            for f in FACTORS {
                let mut v = s.clone();
                v.push(f * scale);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn entry<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    p: Realization,
    method: Method,
    time: Option<f64>,
) -> Result<CatalogEntry, Error> {
    let residual = balance_residual(graph, p.as_slice(), potential)?;
    let class = classify(graph, &p, potential, &Tolerances::default())?.class;
    Ok(CatalogEntry { realization: p, class, residual, method, time })
}

fn accept<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    p: Realization,
    method: Method,
    target: SubformKind,
) -> Option<CatalogEntry> {
    let e = entry(graph, potential, p, method, None).ok()?;
    (e.subform() == Some(target) && e.residual < 1e-10).then_some(e)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (k, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, x);
            out.push(tail);
        }
    }
    out
}

fn construction_error(target: SubformKind, reason: &str) -> Error {
    Error::Construction { target: target.tag(), reason: String::from(reason) }
}

/// Three distinct collinear rigid agents in the plane, `middle` (or the
/// first agent for which a solution exists) between the other two.
pub fn find_collinear_equilibrium<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    middle: Option<usize>,
) -> Result<CatalogEntry, Error> {
    let target = SubformKind::Collinear3;
    if graph.topology() != Topology::TriangleFlex {
        return Err(construction_error(target, "needs the triangle graph"));
    }
    let scale = graph.mean_desired();
    let middles: Vec<usize> = middle.map_or_else(|| vec![0, 1, 2], |m| vec![m]);
    for j in middles {
        let ends: Vec<usize> = (0..3).filter(|&a| a != j).collect();
        let clusters: [&[usize]; 3] = [&ends[..1], &[j], &ends[1..]];
        for gaps in seed_gaps(2, scale) {
            if let Some(xs) = solve_on_line(graph, potential, &clusters, &gaps) {
                if let Some(e) = accept(graph, potential, lift_line(graph, &xs), Method::RootfindCollinear, target) {
                    return Ok(e);
                }
            }
        }
    }
    Err(construction_error(target, "no seed converged to three distinct collinear agents"))
}

fn coincident<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
) -> Result<CatalogEntry, Error> {
    let nr = graph.num_rigid();
    let p = lift_line(graph, &vec![0.0; nr]);
    accept(graph, potential, p, Method::CoincidenceConstruct, target)
        .ok_or_else(|| construction_error(target, "coincident configuration is not balanced"))
}

/// One rigid agent at distance `r` from a cluster of the others, with every
/// edge from the lone agent to the cluster at its desired length.
fn lone_agent<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
) -> Result<CatalogEntry, Error> {
    let nr = graph.num_rigid();
    for lone in 0..nr {
        let lens: Vec<f64> = (0..nr)
            .filter(|&a| a != lone)
            .filter_map(|a| graph.edge_between(a, lone).map(|k| graph.edges()[k].desired))
            .collect();
        let r = lens[0];
        if lens.iter().all(|&x| (x - r).abs() <= 1e-12 * r) {
            let mut xs = vec![0.0; nr];
            xs[lone] = r;
            if let Some(e) = accept(graph, potential, lift_line(graph, &xs), Method::CoincidenceConstruct, target) {
                return Ok(e);
            }
        }
    }
    Err(construction_error(target, "no agent has equal desired distances to all others"))
}

fn line_search_subform<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
    layouts: Vec<Vec<Vec<usize>>>,
    method: Method,
) -> Result<CatalogEntry, Error> {
    let scale = graph.mean_desired();
    for layout in &layouts {
        let clusters: Vec<&[usize]> = layout.iter().map(Vec::as_slice).collect();
        for gaps in seed_gaps(clusters.len() - 1, scale) {
            if let Some(xs) = solve_on_line(graph, potential, &clusters, &gaps) {
                if let Some(e) = accept(graph, potential, lift_line(graph, &xs), method, target) {
                    return Ok(e);
                }
            }
        }
    }
    Err(construction_error(target, "no line layout balanced for these distances"))
}

/// Rigid seeds in the plane for the two non-degenerate coplanar shapes,
/// scaled by the mean desired distance.
fn planar_seeds(target: SubformKind, scale: f64) -> Vec<[[f64; 2]; 4]> {
    let mut out = Vec::new();
    match target {
        SubformKind::ConvexQuadrilateral => {
            let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
            let kite = [[0.0, 0.0], [1.2, 0.3], [1.0, 1.0], [0.2, 1.1]];
            for shape in [square, kite] {
                for perm in permutations(&[0, 1, 2, 3]) {
                    let mut s = [[0.0; 2]; 4];
                    for (slot, &a) in perm.iter().enumerate() {
                        s[a] = [shape[slot][0] * scale, shape[slot][1] * scale];
                    }
                    out.push(s);
                }
            }
        }
        SubformKind::InteriorPoint => {
            let h = 3f64.sqrt() / 2.0;
            let tri = [[0.0, 0.0], [1.0, 0.0], [0.5, h]];
            for centre in 0..4 {
                let mut s = [[0.0; 2]; 4];
                let mut t = 0;
                for (a, slot) in s.iter_mut().enumerate() {
                    if a == centre {
                        *slot = [0.5 * scale, h / 3.0 * scale];
                    } else {
                        *slot = [tri[t][0] * scale, tri[t][1] * scale];
                        t += 1;
                    }
                }
                out.push(s);
            }
        }
        _ => {}
    }
    out
}

/// Four coplanar rigid agents in space: the rigid graph is flowed in the
/// plane from fixed seeds, polished, and lifted to `z = 0`.
pub fn find_coplanar_equilibrium<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
) -> Result<CatalogEntry, Error> {
    if graph.topology() != Topology::TetrahedronFlex {
        return Err(construction_error(target, "needs the tetrahedron graph"));
    }
    match target {
        SubformKind::AllCoincident4 => coincident(graph, potential, target),
        SubformKind::TripleCoincident => lone_agent(graph, potential, target),
        SubformKind::TwoPairs => {
            let layouts = [[[0, 1], [2, 3]], [[0, 2], [1, 3]], [[0, 3], [1, 2]]]
                .iter()
                .map(|l| l.iter().map(|c| c.to_vec()).collect())
                .collect();
            line_search_subform(graph, potential, target, layouts, Method::CoincidenceConstruct)
        }
        SubformKind::PairAtEnd | SubformKind::PairInMiddle => {
            let mut layouts = Vec::new();
            for perm in permutations(&[0, 1, 2, 3]) {
                let (i, j, k, l) = (perm[0], perm[1], perm[2], perm[3]);
                if i > j {
                    continue;
                }
                if target == SubformKind::PairAtEnd {
                    layouts.push(vec![vec![i, j], vec![k], vec![l]]);
                } else if k < l {
                    layouts.push(vec![vec![k], vec![i, j], vec![l]]);
                }
            }
            line_search_subform(graph, potential, target, layouts, Method::RootfindCollinear)
        }
        SubformKind::Collinear4 => {
            let layouts = permutations(&[0, 1, 2, 3])
                .into_iter()
                .filter(|p| p[0] < p[3])
                .map(|p| p.into_iter().map(|a| vec![a]).collect())
                .collect();
            line_search_subform(graph, potential, target, layouts, Method::RootfindCollinear)
        }
        SubformKind::ConvexQuadrilateral | SubformKind::InteriorPoint => planar_flow(graph, potential, target),
        _ => Err(construction_error(target, "not a coplanar shape")),
    }
}

fn planar_flow<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
) -> Result<CatalogEntry, Error> {
    let plane = FormationGraph::new(
        2,
        graph.num_nodes(),
        graph.edges().iter().map(|e| (e.i, e.j, e.desired)),
        (graph.anchor_node(), graph.flex_node()),
    )?;
    let scale = graph.mean_desired();
    let flex_len = graph.flex_edge().desired;
    let system = ClosedLoop::gradient(&plane, potential);
    let mut opts = IntegrationOptions::until(200.0 / scale.powi(2).max(1e-12));
    opts.eps_eq = 1e-8 * scale.powi(3).max(1.0);
    opts.stop_at_equilibrium = true;
    opts.record_every = usize::MAX;
    for seed in planar_seeds(target, scale) {
        let anchor = seed[graph.anchor_node()];
        let mut pts: Vec<[f64; 2]> = seed.to_vec();
        pts.push([anchor[0] + flex_len, anchor[1]]);
        let p0 = Realization::from_points(2, pts.iter()).expect("planar seed");
        let Ok(tr) = integrate(&system, &p0, &opts) else { continue };
        let Ok((planar, _)) = newton_polish(&plane, tr.final_state(), potential, 1e-13, 60) else { continue };
        let lifted = lift_plane(graph, &planar);
        if let Some(e) = accept(graph, potential, lifted, Method::RootfindCoplanar, target) {
            return Ok(e);
        }
    }
    Err(construction_error(target, "no planar seed converged to the requested shape"))
}

/// Rigid agents to `z = 0`, flex agent straight above its anchor.
fn lift_plane(graph: &FormationGraph, planar: &Realization) -> Realization {
    let mut p = Realization::zeros(3, graph.num_nodes());
    for a in 0..graph.num_rigid() {
        p.agent_mut(a)[..2].copy_from_slice(planar.agent(a));
    }
    let anchor = planar.agent(graph.anchor_node()).to_vec();
    let f = p.agent_mut(graph.flex_node());
    f[..2].copy_from_slice(&anchor);
    f[2] = graph.flex_edge().desired;
    p
}

/// Newton iteration on the balance map `grad V = 0` using the analytic
/// Hessian and minimum-norm steps (the Hessian is singular along rigid
/// motions). Returns the polished point and its residual.
pub fn newton_polish<P: Potential + ?Sized>(
    graph: &FormationGraph,
    p: &Realization,
    potential: &P,
    target: f64,
    max_iter: usize,
) -> Result<(Realization, f64), Error> {
    graph.check_dims(p)?;
    let mut x = p.clone();
    let grad = |q: &Realization| -> Result<DVector<f64>, Error> {
        Ok(DVector::from_vec(crate::controller::potential_gradient(graph, q, potential)?))
    };
    let mut f = grad(&x)?;
    for _ in 0..max_iter {
        if f.amax() < target {
            break;
        }
        let h = assemble_hessian(graph, &x, potential)?.hessian;
        let step = min_norm_solve(&h, &(-&f), 1e-11)?;
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let mut trial = x.clone();
            for (c, s) in trial.as_mut_slice().iter_mut().zip(step.iter()) {
                *c += lambda * s;
            }
            if let Ok(ft) = grad(&trial) {
                if ft.norm() < f.norm() {
                    x = trial;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let residual = balance_residual(graph, x.as_slice(), potential)?;
    Ok((x, residual))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureMode {
    /// Stop the first time the balance residual drops below `trigger`.
    Threshold,
    /// Take the first local minimum of `|grad V|` below `trigger`; suited to
    /// flows that pass near a saddle and leave it again.
    FirstDip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CaptureOptions {
    pub mode: CaptureMode,
    pub trigger: f64,
    pub polish_target: f64,
    pub accept: f64,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self { mode: CaptureMode::Threshold, trigger: 1e-9, polish_target: 1e-13, accept: 1e-9 }
    }
}

/// Integrates until the flow settles (or dips) near an equilibrium, then
/// polishes and classifies the captured point.
pub fn capture_equilibrium_from_flow<P: Potential + ?Sized>(
    system: &ClosedLoop<'_, P>,
    p0: &Realization,
    opts: &IntegrationOptions,
    capture: &CaptureOptions,
) -> Result<CatalogEntry, Error> {
    let graph = system.graph();
    let potential = system.potential();
    let mut run = opts.clone();
    let (state, time) = match capture.mode {
        CaptureMode::Threshold => {
            run.eps_eq = capture.trigger;
            run.stop_at_equilibrium = true;
            let tr = integrate(system, p0, &run)?;
            let res = balance_residual(graph, tr.final_state().as_slice(), potential)?;
            if res >= capture.trigger {
                return Err(Error::NoEquilibrium(tr.final_time()));
            }
            (tr.final_state().clone(), tr.final_time())
        }
        CaptureMode::FirstDip => {
            run.record_every = 1;
            let tr = integrate(system, p0, &run)?;
            let g = &tr.grad_norms;
            let idx = (0..g.len())
                .find(|&k| {
                    g[k] < capture.trigger && (k == 0 || g[k] <= g[k - 1]) && (k + 1 == g.len() || g[k] <= g[k + 1])
                })
                .ok_or(Error::NoEquilibrium(tr.final_time()))?;
            (tr.states[idx].clone(), tr.times[idx])
        }
    };
    let (polished, residual) = newton_polish(graph, &state, potential, capture.polish_target, 60)?;
    if residual >= capture.accept {
        return Err(Error::NoEquilibrium(time));
    }
    entry(graph, potential, polished, Method::FlowCapture, Some(time))
}

/// The flex agent moved onto its anchor, rigid agents in the desired shape.
pub fn flex_collapse<P: Potential + ?Sized>(graph: &FormationGraph, potential: &P) -> Result<CatalogEntry, Error> {
    let flex = graph.flex_edge().desired;
    if !potential.in_domain(-flex * flex, flex) {
        return Err(outside_domain("flex_collapse", potential));
    }
    let mut p = desired_realization(graph)?;
    let anchor = p.agent(graph.anchor_node()).to_vec();
    p.agent_mut(graph.flex_node()).copy_from_slice(&anchor);
    let e = entry(graph, potential, p, Method::CoincidenceConstruct, None)?;
    if e.class != EquilibriumClass::UndesiredQI1 {
        return Err(Error::Construction { target: "flex_collapse", reason: format!("classified {}", e.class.tag()) });
    }
    Ok(e)
}

/// Constructs one entry for `target` on the triangle or tetrahedron graph.
pub fn construct<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    target: SubformKind,
) -> Result<CatalogEntry, Error> {
    let rigid = &graph.edges()[..graph.flex_index()];
    let has_pair = target.is_coincidence() || matches!(target, SubformKind::PairAtEnd | SubformKind::PairInMiddle);
    if has_pair && rigid.iter().any(|e| !potential.in_domain(-e.desired * e.desired, e.desired)) {
        return Err(outside_domain(target.tag(), potential));
    }
    match (graph.topology(), target) {
        (Topology::TriangleFlex, SubformKind::Collinear3) => find_collinear_equilibrium(graph, potential, None),
        (Topology::TriangleFlex, SubformKind::AllCoincident3) => coincident(graph, potential, target),
        (Topology::TriangleFlex, SubformKind::PairCoincident3) => lone_agent(graph, potential, target),
        (Topology::TetrahedronFlex, t) if SubformKind::SPATIAL.contains(&t) => {
            find_coplanar_equilibrium(graph, potential, t)
        }
        _ => Err(construction_error(target, "subform does not belong to this graph")),
    }
}

fn outside_domain<P: Potential + ?Sized>(target: &'static str, potential: &P) -> Error {
    Error::Construction {
        target,
        reason: format!("coincident agents lie outside the domain of the {} potential", potential.name()),
    }
}

/// Outcome of one catalog target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogResult {
    /// Subform tag, or `flex_collapse`.
    pub target: &'static str,
    pub entry: Option<CatalogEntry>,
    pub failure: Option<String>,
}

/// Every subform of the graph's family (or just `targets`), plus the flex
/// collapse.
pub fn build_catalog<P: Potential + ?Sized>(
    graph: &FormationGraph,
    potential: &P,
    targets: Option<&[SubformKind]>,
) -> Vec<CatalogResult> {
    let all: &[SubformKind] = match graph.topology() {
        Topology::TriangleFlex => &SubformKind::PLANAR,
        Topology::TetrahedronFlex => &SubformKind::SPATIAL,
        Topology::Other => &[],
    };
    let mut out: Vec<CatalogResult> = targets
        .unwrap_or(all)
        .iter()
        .map(|&t| match construct(graph, potential, t) {
            Ok(e) => CatalogResult { target: t.tag(), entry: Some(e), failure: None },
            Err(e) => CatalogResult { target: t.tag(), entry: None, failure: Some(format!("{e}")) },
        })
        .collect();
    let collapse = match flex_collapse(graph, potential) {
        Ok(e) => CatalogResult { target: "flex_collapse", entry: Some(e), failure: None },
        Err(e) => CatalogResult { target: "flex_collapse", entry: None, failure: Some(format!("{e}")) },
    };
    out.push(collapse);
    out
}
