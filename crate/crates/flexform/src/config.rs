//! JSON inputs: graphs, realizations and scenarios. Node indices in every
//! file are 1-based.

use std::fs;
use std::path::{Path, PathBuf};

use flexform_core::{
    FormationGraph, IntegrationOptions, LeaderSpec, PerturbationEvent, PiecewiseConstant, PotentialFamily, Realization,
    StepControl, Tolerances,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `{"dimension": d, "nodes": n, "edges": [[i, j, dbar], ...], "flex_edge": [i, j]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub dimension: usize,
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub flex_edge: (usize, usize),
}

fn zero_based(node: usize, what: &str) -> Result<usize, CliError> {
    node.checked_sub(1).ok_or_else(|| CliError::Config(format!("{what}: node indices start at 1")))
}

impl GraphSpec {
    pub fn build(&self) -> Result<FormationGraph, CliError> {
        let edges = self
            .edges
            .iter()
            .map(|&(i, j, d)| Ok((zero_based(i, "edge")?, zero_based(j, "edge")?, d)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let flex = (zero_based(self.flex_edge.0, "flex_edge")?, zero_based(self.flex_edge.1, "flex_edge")?);
        FormationGraph::new(self.dimension, self.nodes, edges, flex).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_graph(graph: &FormationGraph) -> Self {
        let f = graph.flex_edge();
        Self {
            dimension: graph.dimension(),
            nodes: graph.num_nodes(),
            edges: graph.edges().iter().map(|e| (e.i + 1, e.j + 1, e.desired)).collect(),
            flex_edge: (f.i + 1, f.j + 1),
        }
    }
}

/// A graph given inline or as a path relative to the referring file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GraphRef {
    Inline(GraphSpec),
    File(PathBuf),
}

/// Either `[[x, y], ...]` or `{"positions": [[x, y], ...]}`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PositionsFile {
    Bare(Vec<Vec<f64>>),
    Wrapped { positions: Vec<Vec<f64>> },
}

impl PositionsFile {
    pub fn points(&self) -> &[Vec<f64>] {
        match self {
            PositionsFile::Bare(p) | PositionsFile::Wrapped { positions: p } => p,
        }
    }
}

pub fn realization_from_points(points: &[Vec<f64>]) -> Result<Realization, CliError> {
    let d = points.first().map_or(0, Vec::len);
    Realization::from_points(d, points).map_err(|e| CliError::Config(e.to_string()))
}

pub fn points_of(p: &Realization) -> Vec<Vec<f64>> {
    (0..p.num_agents()).map(|a| p.agent(a).to_vec()).collect()
}

/// `{"kind": "rk4", "dt": 1e-3}` or `{"kind": "adaptive", "rtol": .., "atol": .., "initial_dt": ..}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepConfig {
    Rk4 {
        #[serde(default = "default_dt")]
        dt: f64,
    },
    Adaptive {
        #[serde(default = "default_rtol")]
        rtol: f64,
        #[serde(default = "default_atol")]
        atol: f64,
        #[serde(default = "default_dt")]
        initial_dt: f64,
    },
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig::Rk4 { dt: default_dt() }
    }
}

fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-12
}
fn default_dt() -> f64 {
    1e-3
}
fn default_magnitude() -> f64 {
    1e-2
}
fn default_potential() -> String {
    "quadratic".into()
}
fn default_record() -> usize {
    1
}

impl StepConfig {
    pub fn control(&self) -> StepControl {
        match *self {
            StepConfig::Rk4 { dt } => StepControl::Fixed { dt },
            StepConfig::Adaptive { rtol, atol, initial_dt } => StepControl::Adaptive { rtol, atol, initial_dt },
        }
    }
}

/// One displacement of one agent. Give `displacement` for an exact vector,
/// `direction` (scaled to `magnitude`) for a direction, or neither for a
/// seeded random direction of length `magnitude`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub time: f64,
    pub agent: usize,
    #[serde(default)]
    pub displacement: Option<Vec<f64>>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

impl PerturbationConfig {
    fn resolve(&self, dimension: usize, rng: &mut ChaCha8Rng) -> Result<PerturbationEvent, CliError> {
        let agent = zero_based(self.agent, "perturbation")?;
        let bad = |e: flexform_core::Error| CliError::Config(e.to_string());
        match (&self.displacement, &self.direction) {
            (Some(_), Some(_)) => {
                Err(CliError::Config("perturbation: give displacement or direction, not both".into()))
            }
            (Some(v), None) => Ok(PerturbationEvent::new(self.time, agent, v.clone())),
            (None, Some(dir)) => PerturbationEvent::along(self.time, agent, self.magnitude, dir).map_err(bad),
            (None, None) => {
                // Gaussian components give a uniform direction on the sphere.
                let dir: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
                PerturbationEvent::along(self.time, agent, self.magnitude, &dir).map_err(bad)
            }
        }
    }
}

/// `{"mode": "target", "k_f": 5, "p_t": [10, 10]}` or
/// `{"mode": "windowed", "t0": 0, "Tf": 1, "v": [[t, [vx, vy]], ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderConfig {
    #[default]
    None,
    Target {
        k_f: f64,
        p_t: Vec<f64>,
    },
    Windowed {
        t0: f64,
        #[serde(rename = "Tf")]
        tf: f64,
        v: Vec<(f64, Vec<f64>)>,
    },
}

impl LeaderConfig {
    pub fn spec(&self) -> Result<LeaderSpec, CliError> {
        Ok(match self {
            LeaderConfig::None => LeaderSpec::None,
            LeaderConfig::Target { k_f, p_t } => LeaderSpec::Target { gain: *k_f, target: p_t.clone() },
            LeaderConfig::Windowed { t0, tf, v } => LeaderSpec::Windowed {
                start: *t0,
                end: *tf,
                profile: PiecewiseConstant::new(v.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisFlags {
    /// Stability report at every detected equilibrium.
    pub hessian_at_equilibria: bool,
    /// Catalog the first near-equilibrium the flow passes (first dip of
    /// `|grad V|` below `capture_trigger`, then Newton polish).
    pub capture: bool,
    pub capture_trigger: Option<f64>,
    /// Build the equilibrium catalog for the scenario's graph.
    pub catalog: bool,
    /// Attach the sign-claim table to every undesired report.
    pub sign_checks: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub eps_eq: Option<f64>,
    pub eps_shape: Option<f64>,
    pub eps_geom: Option<f64>,
    pub eps_pos: Option<f64>,
    pub eps_eig: Option<f64>,
    pub witness: Option<f64>,
    pub eps_sign: Option<f64>,
}

impl ToleranceOverrides {
    pub fn apply(&self, mut t: Tolerances) -> Tolerances {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.eps_eq, self.eps_eq);
        set(&mut t.eps_shape, self.eps_shape);
        set(&mut t.eps_geom, self.eps_geom);
        set(&mut t.eps_pos, self.eps_pos);
        set(&mut t.eps_eig, self.eps_eig);
        set(&mut t.witness, self.witness);
        set(&mut t.eps_sign, self.eps_sign);
        t
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub graph: GraphRef,
    #[serde(default = "default_potential")]
    pub potential: String,
    pub initial: Vec<Vec<f64>>,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub perturbations: Vec<PerturbationConfig>,
    #[serde(default)]
    pub leader: LeaderConfig,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub analysis: AnalysisFlags,
}

/// A scenario with every reference resolved and every value validated.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub graph: FormationGraph,
    pub potential: PotentialFamily,
    pub initial: Realization,
    pub leader: LeaderSpec,
    pub options: IntegrationOptions,
    pub tolerances: Tolerances,
    pub analysis: AnalysisFlags,
    pub seed: u64,
}

pub fn parse_potential(tag: &str) -> Result<PotentialFamily, CliError> {
    PotentialFamily::from_tag(tag).ok_or_else(|| CliError::Config(format!("unknown potential '{tag}'")))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_graph(path: &Path) -> Result<FormationGraph, CliError> {
    read_json::<GraphSpec>(path)?.build()
}

pub fn load_realization(path: &Path) -> Result<Realization, CliError> {
    realization_from_points(read_json::<PositionsFile>(path)?.points())
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    /// Resolves graph paths against `base` and validates everything. `seed`
    /// overrides the file's seed.
    pub fn resolve(&self, base: &Path, fallback_name: &str, seed: Option<u64>) -> Result<Scenario, CliError> {
        let graph = match &self.graph {
            GraphRef::Inline(spec) => spec.build()?,
            GraphRef::File(p) => load_graph(&base.join(p))?,
        };
        let potential = parse_potential(&self.potential)?;
        let initial = realization_from_points(&self.initial)?;
        graph.check_dims(&initial).map_err(|e| CliError::Config(e.to_string()))?;
        let leader = self.leader.spec()?;
        leader.validate(graph.dimension()).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.t_end > self.t_start) {
            return Err(CliError::Config("t_end must exceed t_start".into()));
        }
        if self.record_every == 0 {
            return Err(CliError::Config("record_every must be at least 1".into()));
        }
        let seed = seed.or(self.seed).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbations =
            self.perturbations.iter().map(|p| p.resolve(graph.dimension(), &mut rng)).collect::<Result<Vec<_>, _>>()?;
        for p in &perturbations {
            if p.agent >= graph.num_nodes() || p.displacement.len() != graph.dimension() {
                return Err(CliError::Config(format!("perturbation of agent {} does not fit the graph", p.agent + 1)));
            }
        }
        let tolerances = self.tolerances.apply(Tolerances::default());
        let options = IntegrationOptions {
            t_start: self.t_start,
            t_end: self.t_end,
            step: self.step.control(),
            perturbations,
            eps_eq: tolerances.eps_eq,
            record_every: self.record_every,
            ..IntegrationOptions::default()
        };
        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| fallback_name.to_string()),
            graph,
            potential,
            initial,
            leader,
            options,
            tolerances,
            analysis: self.analysis,
            seed,
        })
    }
}

impl Scenario {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let file = ScenarioFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        file.resolve(base, stem, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ScenarioFile {
        serde_json::from_str(text).unwrap()
    }

    const GRAPH: &str = r#"{"dimension": 2, "nodes": 4,
        "edges": [[1,2,4],[1,3,4],[2,3,4],[3,4,4]], "flex_edge": [3,4]}"#;

    #[test]
    fn graph_indices_are_one_based() {
        let g: GraphSpec = serde_json::from_str(GRAPH).unwrap();
        let graph = g.build().unwrap();
        assert_eq!(graph.flex_node(), 3);
        assert_eq!(graph.anchor_node(), 2);
        assert_eq!(GraphSpec::from_graph(&graph), g);
        let zero = r#"{"dimension": 2, "nodes": 4, "edges": [[0,1,4]], "flex_edge": [3,4]}"#;
        let g: GraphSpec = serde_json::from_str(zero).unwrap();
        assert!(matches!(g.build(), Err(CliError::Config(_))));
    }

    #[test]
    fn scenario_defaults_and_leader() {
        let s = parse(&format!(
            r#"{{"graph": {GRAPH}, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 1,
               "leader": {{"mode": "target", "k_f": 5, "p_t": [10, 10]}}}}"#
        ));
        let sc = s.resolve(Path::new("."), "x", None).unwrap();
        assert_eq!(sc.potential, PotentialFamily::Quadratic);
        assert_eq!(sc.options.step, StepControl::Fixed { dt: 1e-3 });
        assert_eq!(sc.leader, LeaderSpec::Target { gain: 5.0, target: vec![10.0, 10.0] });
        assert_eq!(sc.name, "x");
    }

    #[test]
    fn windowed_leader_uses_tf_key() {
        let l: LeaderConfig =
            serde_json::from_str(r#"{"mode":"windowed","t0":0,"Tf":2,"v":[[0,[1,0]],[1,[0,1]]]}"#).unwrap();
        let LeaderSpec::Windowed { start, end, profile } = l.spec().unwrap() else { panic!() };
        assert_eq!((start, end), (0.0, 2.0));
        assert_eq!(profile.value_at(1.5), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn random_perturbation_is_seeded() {
        let s = parse(&format!(
            r#"{{"graph": {GRAPH}, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 1,
               "perturbations": [{{"time": 0.5, "agent": 4}}]}}"#
        ));
        let a = s.resolve(Path::new("."), "x", Some(7)).unwrap();
        let b = s.resolve(Path::new("."), "x", Some(7)).unwrap();
        let c = s.resolve(Path::new("."), "x", Some(8)).unwrap();
        let pa = &a.options.perturbations[0];
        assert_eq!(pa, &b.options.perturbations[0]);
        assert_ne!(pa, &c.options.perturbations[0]);
        assert_eq!(pa.agent, 3);
        assert!((pa.magnitude() - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let cases = [
            r#"{"graph": GRAPH, "initial": [[0,0],[4,0],[2,3]], "t_end": 1}"#,
            r#"{"graph": GRAPH, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 0}"#,
            r#"{"graph": GRAPH, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 1, "potential": "cubic"}"#,
            r#"{"graph": GRAPH, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 1,
                "leader": {"mode": "target", "k_f": -1, "p_t": [1, 1]}}"#,
            r#"{"graph": GRAPH, "initial": [[0,0],[4,0],[2,3],[2,7]], "t_end": 1,
                "perturbations": [{"time": 0.5, "agent": 9, "displacement": [0.1, 0]}]}"#,
        ];
        for c in cases {
            let s = parse(&c.replace("GRAPH", GRAPH));
            assert!(matches!(s.resolve(Path::new("."), "x", None), Err(CliError::Config(_))), "{c}");
        }
        assert!(
            serde_json::from_str::<ScenarioFile>(r#"{"graph": {}, "initial": [], "t_end": 1, "bogus": 1}"#).is_err()
        );
    }
}
