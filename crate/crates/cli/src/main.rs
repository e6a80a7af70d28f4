//! `netdr`: causal effect estimation on component-structured networks, and
//! simulation studies of the estimators.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure (some estimator or its variance could not be computed).

mod config;
mod error;
mod input;
mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use netdr::analysis::{analyze, OutcomeModel};
use netdr::estimators::EstimatorKind;
use netdr::simulate::{run_scenarios, study_truth, Scheme, ScenarioEntry, Study};

use crate::config::{load_analysis, load_study, to_json};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "netdr", version, about = "Doubly robust causal effects under network interference")]
struct Cli {
    /// Worker threads for simulation replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects on an observed network.
    Analyze(AnalyzeArgs),
    /// Run a replicated simulation study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// The edge list has a header line.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    drop_isolates: bool,
    /// Confidence level of the Wald intervals.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    alpha_prime: Option<f64>,
    /// Comma-separated allocation grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated subset of ipw, reg, drbc, ipwls.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    multilevel: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Balanced,
    Unbalanced,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON study config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Scenario preset; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    scenario: Option<Vec<String>>,
    /// Number of replicates.
    #[arg(long = "S", alias = "replicates")]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of components.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write the replicate-averaged truth table.
    #[arg(long)]
    dump_truth: bool,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn diagnostic(estimator: EstimatorKind, err: &netdr::Error) {
    let line = serde_json::json!({
        "estimator": estimator.label(),
        "cause": err.cause_tag(),
        "message": err.to_string(),
    });
    eprintln!("{line}");
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut cfg = load_analysis(args.config.as_deref())?;
    if args.edges.is_some() {
        cfg.edges = args.edges;
    }
    if args.nodes.is_some() {
        cfg.nodes = args.nodes;
    }
    cfg.header |= args.header;
    cfg.drop_isolates |= args.drop_isolates;
    if let Some(level) = args.level {
        cfg.confidence = level;
    }
    if let Some(ap) = args.alpha_prime {
        cfg.alpha_prime = ap;
    }
    if let Some(alphas) = args.alphas {
        cfg.alphas = alphas;
    }
    if let Some(list) = args.estimators {
        cfg.estimators = list.iter().map(|s| s.parse()).collect::<Result<_, netdr::Error>>()?;
    }
    if args.multilevel {
        cfg.outcome_model = OutcomeModel::Multilevel;
    }
    cfg.validate()?;
    let (edges, nodes) = (cfg.edges.clone().expect("validated"), cfg.nodes.clone().expect("validated"));
    let ds = input::load_dataset(&edges, &nodes, cfg.header, cfg.drop_isolates)?;
    let result = analyze(&ds.graph, &ds.data, &cfg.spec())?;

    ensure_dir(&args.out)?;
    std::fs::write(args.out.join("config.json"), to_json(&cfg))?;
    if let Some(ids) = &ds.ids {
        let mut w = csv::Writer::from_path(args.out.join("node_ids.csv"))?;
        w.write_record(["node", "id"])?;
        for (k, id) in ids.iter().enumerate() {
            w.write_record([k.to_string(), id.clone()])?;
        }
        w.flush()?;
    }
    let rows = report::estimate_rows(&result);
    report::write_estimates(&args.out.join("estimates.csv"), &rows)?;
    let table = report::estimates_table(&rows, &cfg.estimators);
    std::fs::write(args.out.join("estimates.txt"), &table)?;
    print!("{table}");

    let mut failed = Vec::new();
    for (kind, res) in &result.estimators {
        match res {
            Err(e) => {
                diagnostic(*kind, e);
                failed.push(kind.label());
            }
            Ok(rep) => {
                for w in &rep.diagnostics.warnings {
                    eprintln!("{}", serde_json::json!({ "estimator": kind.label(), "warning": w }));
                }
                if let Some(e) = &rep.variance_error {
                    diagnostic(*kind, e);
                    failed.push(kind.label());
                }
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("estimation incomplete for {}", failed.join(", "))))
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut study: Study = load_study(args.config.as_deref())?;
    if let Some(s) = args.scheme {
        study.dgp.scheme = match s {
            SchemeArg::Balanced => Scheme::Balanced,
            SchemeArg::Unbalanced => Scheme::Unbalanced,
        };
    }
    if let Some(names) = args.scenario {
        study.scenarios = names.into_iter().map(ScenarioEntry::Preset).collect();
    }
    if let Some(r) = args.replicates {
        study.replicates = r;
    }
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    if let Some(m) = args.m {
        study.dgp.m = m;
    }
    if let Some(level) = args.level {
        study.confidence = level;
    }
    study.resolve()?;

    let result = run_scenarios(&study)?;
    ensure_dir(&args.out)?;
    std::fs::write(args.out.join("study.json"), to_json(&study))?;
    report::write_summary(&args.out.join("summary.csv"), &result.rows)?;
    let table = report::summary_table(&result.rows);
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");

    if args.dump_truth {
        let mut alphas: Vec<f64> = Vec::new();
        for e in &study.estimands {
            for a in std::iter::once(e.alpha()).chain(e.alpha_prime()) {
                if !alphas.contains(&a) {
                    alphas.push(a);
                }
            }
        }
        alphas.sort_by(f64::total_cmp);
        let truth_study = Study { estimands: report::truth_grid(&alphas), ..study.clone() };
        let truth = study_truth(&truth_study)?;
        report::write_truth(&args.out.join("truth.csv"), &truth, &alphas)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("configuration error: {e}");
            std::process::exit(2);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(s) => cmd_simulate(s),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
