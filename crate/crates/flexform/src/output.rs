//! Artifacts: trajectory tables, event sidecars, stability reports and
//! catalog lines. Node labels in every artifact are 1-based.

use std::fs;
use std::io::Write;
use std::path::Path;

use flexform_core::integrator::Event;
use flexform_core::oracle::{CatalogEntry, CatalogResult};
use flexform_core::stability::{claim_statement, Relation, WitnessKind};
use flexform_core::{FormationGraph, StabilityReport, Trajectory};
use serde::Serialize;

use crate::config::points_of;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

/// `t, x1, y1(, z1), ..., e_1_2, ..., gradnorm`.
pub fn trajectory_columns(graph: &FormationGraph) -> Vec<String> {
    let axes = ["x", "y", "z"];
    let mut cols = vec!["t".to_string()];
    for a in 1..=graph.num_nodes() {
        for ax in &axes[..graph.dimension()] {
            cols.push(format!("{ax}{a}"));
        }
    }
    cols.extend(graph.edges().iter().map(|e| format!("e_{}_{}", e.i + 1, e.j + 1)));
    cols.push("gradnorm".into());
    cols
}

pub fn trajectory_rows(traj: &Trajectory) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..traj.len()).map(move |k| {
        let mut row = Vec::with_capacity(1 + traj.states[k].as_slice().len() + traj.errors[k].len() + 1);
        row.push(traj.times[k]);
        row.extend_from_slice(traj.states[k].as_slice());
        row.extend_from_slice(&traj.errors[k]);
        row.push(traj.grad_norms[k]);
        row
    })
}

pub fn write_trajectory(
    path: &Path,
    graph: &FormationGraph,
    traj: &Trajectory,
    format: TableFormat,
) -> Result<(), CliError> {
    let columns = trajectory_columns(graph);
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
            w.write_record(&columns).map_err(|e| CliError::io(path, e))?;
            for row in trajectory_rows(traj) {
                w.serialize(row).map_err(|e| CliError::io(path, e))?;
            }
            w.flush().map_err(|e| CliError::io(path, e))
        }
        TableFormat::Json => {
            #[derive(Serialize)]
            struct Table {
                columns: Vec<String>,
                rows: Vec<Vec<f64>>,
            }
            write_json(path, &Table { columns, rows: trajectory_rows(traj).collect() })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventDoc {
    pub time: f64,
    pub kind: flexform_core::integrator::EventKind,
    pub agent: Option<usize>,
    pub value: f64,
}

pub fn event_docs(events: &[Event]) -> Vec<EventDoc> {
    events
        .iter()
        .map(|e| EventDoc { time: e.time, kind: e.kind, agent: e.agent.map(|a| a + 1), value: e.value })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessDoc {
    pub kind: &'static str,
    pub agent: Option<usize>,
    pub vector: Vec<f64>,
    pub form: f64,
    pub threshold: f64,
    /// The witness in agent-major coordinates of the input frame.
    pub padded: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimDoc {
    pub statement: String,
    pub relation: Relation,
    pub value: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDoc {
    pub class: &'static str,
    pub subform: Option<&'static str>,
    pub roles: Option<Vec<usize>>,
    pub residual: f64,
    pub max_shape_error: f64,
    pub flex_gap: f64,
    pub flatness: f64,
    pub notes: Vec<String>,
    pub positions: Vec<Vec<f64>>,
    pub spectrum: Vec<f64>,
    pub block_spectrum: Vec<f64>,
    pub min_eigenvalue: f64,
    pub eig_threshold: f64,
    pub psd: bool,
    pub zero_eigenvalues: usize,
    pub negative_eigenvalues: usize,
    pub witness: Option<WitnessDoc>,
    pub witness_failure: Option<String>,
    pub sign_claims: Option<Vec<ClaimDoc>>,
    pub signs_passed: Option<bool>,
    pub certified_topology: bool,
    pub contract_holds: bool,
}

impl ReportDoc {
    pub fn new(report: &StabilityReport, positions: Vec<Vec<f64>>, with_signs: bool) -> Self {
        let c = &report.classification;
        let sub = c.class.subform();
        let witness = report.witness.as_ref().map(|w| {
            let (kind, agent) = match w.kind {
                WitnessKind::FlexSum => ("flex_sum", None),
                WitnessKind::AgentIndicator(a) => ("agent_indicator", Some(a + 1)),
                WitnessKind::Eigenvector => ("eigenvector", None),
            };
            WitnessDoc {
                kind,
                agent,
                vector: w.vector.clone(),
                form: w.form,
                threshold: w.threshold,
                padded: w.padded.clone(),
                frame: w.frame.clone(),
            }
        });
        let signs = report.signs.as_ref().filter(|_| with_signs);
        let sign_claims = signs.map(|s| {
            s.claims
                .iter()
                .map(|cl| ClaimDoc {
                    statement: claim_statement(&cl.alternatives, cl.relation, 1),
                    relation: cl.relation,
                    value: cl.value,
                    passed: cl.passed,
                })
                .collect()
        });
        Self {
            class: c.class.tag(),
            subform: sub.map(|s| s.kind.tag()),
            roles: sub.map(|s| s.roles.iter().map(|r| r + 1).collect()),
            residual: c.residual,
            max_shape_error: c.max_shape_error,
            flex_gap: c.flex_gap,
            flatness: c.flatness,
            notes: c.notes.clone(),
            positions,
            spectrum: report.spectrum.clone(),
            block_spectrum: report.block_spectrum.clone(),
            min_eigenvalue: report.psd.min_eigenvalue,
            eig_threshold: report.psd.threshold,
            psd: report.psd.psd,
            zero_eigenvalues: report.psd.zero_count,
            negative_eigenvalues: report.psd.negative_count,
            witness,
            witness_failure: report.witness_failure.clone(),
            signs_passed: signs.map(|s| s.all_passed()),
            sign_claims,
            certified_topology: report.certified_topology,
            contract_holds: report.contract_holds(),
        }
    }
}

/// One catalog line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogLine {
    pub target: &'static str,
    pub constructed: bool,
    pub failure: Option<String>,
    pub method: Option<flexform_core::oracle::Method>,
    pub time: Option<f64>,
    #[serde(flatten)]
    pub report: Option<ReportDoc>,
}

impl CatalogLine {
    pub fn failed(result: &CatalogResult) -> Self {
        Self {
            target: result.target,
            constructed: false,
            failure: result.failure.clone(),
            method: None,
            time: None,
            report: None,
        }
    }

    pub fn built(target: &'static str, entry: &CatalogEntry, report: &StabilityReport) -> Self {
        Self {
            target,
            constructed: true,
            failure: None,
            method: Some(entry.method),
            time: entry.time,
            report: Some(ReportDoc::new(report, points_of(&entry.realization), true)),
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, lines: &[T]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    for line in lines {
        let text = serde_json::to_string(line).map_err(|e| CliError::io(path, e))?;
        writeln!(f, "{text}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_layout() {
        let g = FormationGraph::triangle_with_flex(4.0, 4.0, 4.0, 4.0).unwrap();
        let cols = trajectory_columns(&g);
        assert_eq!(
            cols,
            ["t", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4", "e_1_2", "e_1_3", "e_2_3", "e_3_4", "gradnorm"]
        );
        let g3 = FormationGraph::tetrahedron_with_flex([4.0; 6], 4.0).unwrap();
        assert_eq!(trajectory_columns(&g3).len(), 1 + 15 + 7 + 1);
    }
}
