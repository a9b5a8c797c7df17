//! The four CLI verbs as library functions, so tests can drive them without
//! spawning the binary.

use std::fs;
use std::path::{Path, PathBuf};

use flexform_core::integrator::{integrate, EventKind, LyapunovAudit};
use flexform_core::oracle::{build_catalog, capture_equilibrium_from_flow, CaptureMode, CaptureOptions};
use flexform_core::potential::{linspace, validate_assumptions, Violation};
use flexform_core::stability::analyze;
use flexform_core::{
    ClosedLoop, FormationGraph, LeaderSpec, PotentialFamily, Realization, SubformKind, Tolerances, Trajectory,
};
use serde::Serialize;

use crate::config::{points_of, Scenario};
use crate::output::{event_docs, write_json, write_jsonl, write_trajectory, CatalogLine, ReportDoc, TableFormat};
use crate::CliError;

/// Tolerance overrides from the command line.
#[derive(Clone, Copy, Debug, Default)]
pub struct TolFlags {
    pub eps_eig: Option<f64>,
    pub eps_eq: Option<f64>,
}

impl TolFlags {
    pub fn apply(&self, mut t: Tolerances) -> Tolerances {
        if let Some(v) = self.eps_eig {
            t.eps_eig = v;
        }
        if let Some(v) = self.eps_eq {
            t.eps_eq = v;
        }
        t
    }
}

fn numeric(e: flexform_core::Error) -> CliError {
    CliError::Numeric(e.to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub potential: &'static str,
    pub samples: usize,
    pub final_time: f64,
    pub final_positions: Vec<Vec<f64>>,
    /// `e_i_j` in edge order.
    pub final_errors: Vec<(String, f64)>,
    pub max_abs_error: f64,
    pub final_gradnorm: f64,
    pub target_distance: Option<f64>,
    pub equilibria_detected: usize,
    pub perturbations_applied: usize,
    pub lyapunov: LyapunovAudit,
    pub lyapunov_passed: bool,
    pub artifacts: Vec<String>,
}

pub struct RunOutcome {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub summary: RunSummary,
    pub reports: Vec<ReportDoc>,
    pub capture: Option<CaptureDoc>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaptureDoc {
    pub time: Option<f64>,
    pub trigger: f64,
    pub report: Option<ReportDoc>,
    pub failure: Option<String>,
}

/// Integrates the scenario and writes its artifacts into `out`. A failed
/// Lyapunov audit still writes everything and then reports a numeric error.
pub fn run_scenario(
    scenario: Scenario,
    out: &Path,
    format: TableFormat,
    tol: TolFlags,
) -> Result<RunOutcome, CliError> {
    let mut scenario = scenario;
    scenario.tolerances = tol.apply(scenario.tolerances);
    scenario.options.eps_eq = scenario.tolerances.eps_eq;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let graph = &scenario.graph;
    let potential = &scenario.potential;
    let system = ClosedLoop::with_leader(graph, potential, scenario.leader.clone()).map_err(numeric)?;
    let trajectory = integrate(&system, &scenario.initial, &scenario.options).map_err(numeric)?;

    let mut artifacts = Vec::new();
    let name = scenario.name.clone();
    let traj_path = out.join(format!("{name}.trajectory.{}", format.extension()));
    write_trajectory(&traj_path, graph, &trajectory, format)?;
    artifacts.push(file_name(&traj_path));
    let events_path = out.join(format!("{name}.events.json"));
    write_json(&events_path, &event_docs(&trajectory.events))?;
    artifacts.push(file_name(&events_path));

    let flags = scenario.analysis;
    let mut reports = Vec::new();
    if flags.hessian_at_equilibria {
        for ev in trajectory.events_of(EventKind::EquilibriumDetected) {
            let state = state_at(&trajectory, ev.time);
            let report = analyze(graph, state, potential, &scenario.tolerances).map_err(numeric)?;
            reports.push(ReportDoc::new(&report, points_of(state), flags.sign_checks));
        }
        let path = out.join(format!("{name}.reports.json"));
        write_json(&path, &reports)?;
        artifacts.push(file_name(&path));
    }

    let capture = if flags.capture {
        let doc = capture_doc(&scenario, flags.capture_trigger.unwrap_or(1.0), flags.sign_checks);
        let path = out.join(format!("{name}.capture.json"));
        write_json(&path, &doc)?;
        artifacts.push(file_name(&path));
        Some(doc)
    } else {
        None
    };

    if flags.catalog {
        let (lines, summary) = catalog_lines(graph, potential, None, &scenario.tolerances)?;
        let path = out.join(format!("{name}.catalog.jsonl"));
        write_jsonl(&path, &lines)?;
        artifacts.push(file_name(&path));
        let path = out.join(format!("{name}.catalog_summary.json"));
        write_json(&path, &summary)?;
        artifacts.push(file_name(&path));
    }

    let errors = trajectory.final_errors();
    let final_state = trajectory.final_state();
    let target_distance = match &scenario.leader {
        LeaderSpec::Target { target, .. } => {
            let f = final_state.agent(graph.flex_node());
            Some(f.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        }
        _ => None,
    };
    let summary_path = out.join(format!("{name}.summary.json"));
    artifacts.push(file_name(&summary_path));
    let summary = RunSummary {
        name: name.clone(),
        seed: scenario.seed,
        potential: potential.tag(),
        samples: trajectory.len(),
        final_time: trajectory.final_time(),
        final_positions: points_of(final_state),
        final_errors: graph
            .edges()
            .iter()
            .zip(errors)
            .map(|(e, v)| (format!("e_{}_{}", e.i + 1, e.j + 1), *v))
            .collect(),
        max_abs_error: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
        final_gradnorm: trajectory.grad_norms.last().copied().unwrap_or(f64::NAN),
        target_distance,
        equilibria_detected: trajectory.events_of(EventKind::EquilibriumDetected).count(),
        perturbations_applied: trajectory.events_of(EventKind::PerturbationApplied).count(),
        lyapunov: trajectory.audit,
        lyapunov_passed: trajectory.audit.passed(),
        artifacts,
    };
    write_json(&summary_path, &summary)?;
    if !summary.lyapunov_passed {
        return Err(CliError::Numeric(format!(
            "Lyapunov check failed on {} step(s), largest increase {:e}",
            summary.lyapunov.violations, summary.lyapunov.max_increase
        )));
    }
    Ok(RunOutcome { scenario, trajectory, summary, reports, capture })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// The recorded sample at `time` (events are always recorded).
fn state_at(traj: &Trajectory, time: f64) -> &Realization {
    let k = traj.times.iter().rposition(|&t| t <= time).unwrap_or(0);
    &traj.states[k]
}

fn capture_doc(scenario: &Scenario, trigger: f64, with_signs: bool) -> CaptureDoc {
    let graph = &scenario.graph;
    let potential = &scenario.potential;
    let mut opts = scenario.options.clone();
    // Stop at the first perturbation: the capture concerns the unperturbed flow.
    if let Some(t) = opts.perturbations.iter().map(|p| p.time).min_by(f64::total_cmp) {
        opts.t_end = opts.t_end.min(t);
    }
    opts.perturbations.clear();
    let capture = CaptureOptions { mode: CaptureMode::FirstDip, trigger, ..CaptureOptions::default() };
    let result = ClosedLoop::with_leader(graph, potential, scenario.leader.clone())
        .and_then(|sys| capture_equilibrium_from_flow(&sys, &scenario.initial, &opts, &capture))
        .and_then(|entry| {
            let report = analyze(graph, &entry.realization, potential, &scenario.tolerances)?;
            Ok((entry.time, ReportDoc::new(&report, points_of(&entry.realization), with_signs)))
        });
    match result {
        Ok((time, report)) => CaptureDoc { time, trigger, report: Some(report), failure: None },
        Err(e) => CaptureDoc { time: None, trigger, report: None, failure: Some(e.to_string()) },
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogSummary {
    pub potential: &'static str,
    pub targets: usize,
    pub constructed: usize,
    pub undesired: usize,
    pub witnesses_found: usize,
    /// Fraction of constructed undesired entries with a negative direction.
    pub witness_rate: f64,
    pub signs_checked: usize,
    pub signs_passed: usize,
    pub failures: Vec<(String, String)>,
}

impl CatalogSummary {
    pub fn contract_holds(&self) -> bool {
        self.witnesses_found == self.undesired
    }
}

pub fn catalog_lines(
    graph: &FormationGraph,
    potential: &PotentialFamily,
    subforms: Option<&[SubformKind]>,
    tol: &Tolerances,
) -> Result<(Vec<CatalogLine>, CatalogSummary), CliError> {
    let results = build_catalog(graph, potential, subforms);
    let mut lines = Vec::new();
    let mut summary = CatalogSummary {
        potential: potential.tag(),
        targets: results.len(),
        constructed: 0,
        undesired: 0,
        witnesses_found: 0,
        witness_rate: 1.0,
        signs_checked: 0,
        signs_passed: 0,
        failures: Vec::new(),
    };
    for r in &results {
        match &r.entry {
            Some(entry) => {
                let report = analyze(graph, &entry.realization, potential, tol).map_err(numeric)?;
                summary.constructed += 1;
                if report.class().is_undesired() {
                    summary.undesired += 1;
                    summary.witnesses_found += usize::from(report.witness.is_some());
                }
                if let Some(s) = &report.signs {
                    summary.signs_checked += 1;
                    summary.signs_passed += usize::from(s.all_passed());
                }
                lines.push(CatalogLine::built(r.target, entry, &report));
            }
            None => {
                summary.failures.push((r.target.to_string(), r.failure.clone().unwrap_or_default()));
                lines.push(CatalogLine::failed(r));
            }
        }
    }
    if summary.undesired > 0 {
        summary.witness_rate = summary.witnesses_found as f64 / summary.undesired as f64;
    }
    Ok((lines, summary))
}

pub fn parse_subforms(list: &str) -> Result<Vec<SubformKind>, CliError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| SubformKind::from_tag(s.trim()).ok_or_else(|| CliError::Config(format!("unknown subform '{s}'"))))
        .collect()
}

/// Writes `catalog.jsonl` and `catalog_summary.json` into `out`.
pub fn run_catalog(
    graph: &FormationGraph,
    potential: &PotentialFamily,
    subforms: Option<&[SubformKind]>,
    tol: &Tolerances,
    out: &Path,
) -> Result<CatalogSummary, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let (lines, summary) = catalog_lines(graph, potential, subforms, tol)?;
    write_jsonl(&out.join("catalog.jsonl"), &lines)?;
    write_json(&out.join("catalog_summary.json"), &summary)?;
    if !summary.contract_holds() {
        return Err(CliError::Contract(format!(
            "{} of {} undesired entries have no negative direction",
            summary.undesired - summary.witnesses_found,
            summary.undesired
        )));
    }
    Ok(summary)
}

/// Stability report for one configuration; a contract error if it is an
/// undesired equilibrium without a witness.
pub fn run_analyze(
    graph: &FormationGraph,
    p: &Realization,
    potential: &PotentialFamily,
    tol: &Tolerances,
) -> Result<ReportDoc, CliError> {
    graph.check_dims(p).map_err(|e| CliError::Config(e.to_string()))?;
    let report = analyze(graph, p, potential, tol).map_err(numeric)?;
    Ok(ReportDoc::new(&report, points_of(p), true))
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialCheck {
    pub potential: &'static str,
    pub dbar: f64,
    pub samples: usize,
    pub range: (f64, f64),
    pub violations: Vec<Violation>,
    pub passed: bool,
}

/// Samples `(-dbar^2, 4 dbar^2]`, stopping short of the lower end where the
/// rational family is undefined.
pub fn run_validate_potential(
    potential: &PotentialFamily,
    dbar: f64,
    samples: usize,
) -> Result<PotentialCheck, CliError> {
    if !(dbar > 0.0 && dbar.is_finite()) || samples < 2 {
        return Err(CliError::Config("dbar must be positive and samples at least 2".into()));
    }
    let lo = -dbar * dbar * (1.0 - 1e-6);
    let hi = 4.0 * dbar * dbar;
    let violations = validate_assumptions(potential, dbar, &linspace(lo, hi, samples));
    Ok(PotentialCheck {
        potential: potential.tag(),
        dbar,
        samples,
        range: (lo, hi),
        passed: violations.is_empty(),
        violations,
    })
}

pub fn default_out(name: &str) -> PathBuf {
    PathBuf::from("out").join(name)
}
