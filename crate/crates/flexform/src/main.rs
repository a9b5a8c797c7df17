use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexform::commands::{
    default_out, parse_subforms, run_analyze, run_catalog, run_scenario, run_validate_potential, TolFlags,
};
use flexform::config::{load_graph, load_realization, parse_potential, Scenario};
use flexform::output::{write_json, TableFormat};
use flexform::CliError;
use flexform_core::Tolerances;

#[derive(Parser)]
#[command(name = "flexform", version, about = "Formation control with a flex node: simulate, analyze, catalog")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random perturbations (overrides the scenario's).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Zero-eigenvalue threshold relative to the Hessian's Frobenius norm.
    #[arg(long, global = true)]
    tol_eig: Option<f64>,
    /// Balance residual below which a configuration is an equilibrium.
    #[arg(long, global = true)]
    tol_eq: Option<f64>,
    /// Trajectory table format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: TableFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write its trajectory, events and reports.
    Run { scenario: PathBuf },
    /// Classify a configuration and certify instability if undesired.
    Analyze {
        realization: PathBuf,
        graph: PathBuf,
        #[arg(long, default_value = "quadratic")]
        potential: String,
    },
    /// Construct undesired equilibria for a graph and check each one.
    Catalog {
        graph: PathBuf,
        #[arg(long, default_value = "quadratic")]
        potential: String,
        /// Comma-separated subform tags (default: all for the graph).
        #[arg(long)]
        subforms: Option<String>,
    },
    /// Spot-check a potential family's sign, monotonicity and curvature conditions.
    ValidatePotential {
        #[arg(long, default_value = "quadratic")]
        potential: String,
        #[arg(long, default_value_t = 4.0)]
        dbar: f64,
        #[arg(long, default_value_t = 2001)]
        samples: usize,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let flags = TolFlags { eps_eig: cli.tol_eig, eps_eq: cli.tol_eq };
    match cli.command {
        Command::Run { scenario } => {
            let sc = Scenario::load(&scenario, cli.seed)?;
            let out = cli.out.unwrap_or_else(|| default_out(&sc.name));
            let outcome = run_scenario(sc, &out, cli.format, flags)?;
            print_json(&outcome.summary)
        }
        Command::Analyze { realization, graph, potential } => {
            let g = load_graph(&graph)?;
            let p = load_realization(&realization)?;
            let fam = parse_potential(&potential)?;
            let doc = run_analyze(&g, &p, &fam, &flags.apply(Tolerances::default()))?;
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                    write_json(&dir.join("report.json"), &doc)?;
                }
                None => print_json(&doc)?,
            }
            if !doc.contract_holds {
                return Err(CliError::Contract(format!("{} configuration without a negative direction", doc.class)));
            }
            Ok(())
        }
        Command::Catalog { graph, potential, subforms } => {
            let g = load_graph(&graph)?;
            let fam = parse_potential(&potential)?;
            let subforms = subforms.as_deref().map(parse_subforms).transpose()?;
            let out = cli.out.unwrap_or_else(|| default_out("catalog"));
            let summary = run_catalog(&g, &fam, subforms.as_deref(), &flags.apply(Tolerances::default()), &out)?;
            print_json(&summary)
        }
        Command::ValidatePotential { potential, dbar, samples } => {
            let fam = parse_potential(&potential)?;
            let check = run_validate_potential(&fam, dbar, samples)?;
            print_json(&check)?;
            if !check.passed {
                return Err(CliError::Contract(format!("{} violation(s)", check.violations.len())));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
