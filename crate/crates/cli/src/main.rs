//! `crashscen`: accident report to scenario tree to findings, one stage per
//! subcommand.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 parse, 5 extraction, 6 backend,
//! 7 placement, 8 generation, 9 mutation/assembly, 10 oracle.

mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crashscen_core::assembly::write_tree;
use crashscen_core::map_graph::{parse_opendrive, RoadNetwork};
use crashscen_core::oracle::write_triggers_csv;
use crashscen_core::params::ParameterTable;
use crashscen_core::pipeline::{analyze, generate_seed_with, grow, GrowOptions};
use crashscen_core::report_extraction::{extract_facts, Codebook, ExtractionBackend, FixtureBackend, HttpBackend, ReportFacts};
use crashscen_core::scenario_gen::{write_atomic, RuleBasedFiller, ScenarioDocument};
use crashscen_core::schema_model::{builtin_schema, load_schema, SchemaGraph};

use config::{BackendConfig, BackendKind, PipelineConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "crashscen", version, about = "Crash reports to OpenSCENARIO derivation trees and trace findings")]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for grow and analyze.
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Transcript directory for the fixture backend.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an OpenDRIVE map and write its graph dump as JSON.
    BuildMap {
        map: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Extract structured facts from a crash report.
    Extract {
        report: PathBuf,
        /// Report id; defaults to the file stem.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a seed scenario from facts.
    Seed {
        facts: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Schema catalog JSON; the built-in catalog by default.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Mutate a seed and write its derivation tree.
    Grow {
        scenario: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Leaf retention fraction in (0, 1]; no pruning when absent.
        #[arg(long)]
        retention: Option<f64>,
        /// Add a default obstacle block to seeds without one.
        #[arg(long)]
        insert_obstacle: bool,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the oracle over simulation traces of a written tree.
    Analyze {
        tree: PathBuf,
        traces: PathBuf,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Findings report (JSON).
        #[arg(short, long)]
        output: PathBuf,
        /// Ranked trigger table (CSV).
        #[arg(long)]
        triggers: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

fn load_map(path: &Path) -> Result<RoadNetwork, CliError> {
    Ok(parse_opendrive(&read(path)?)?)
}

fn pick_map(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.map.clone())
        .ok_or_else(|| CliError::Usage("a map is required (--map or \"map\" in the config)".into()))
}

fn load_params(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<ParameterTable, CliError> {
    match flag.or_else(|| cfg.params.clone()) {
        Some(p) => ParameterTable::load(&read(&p)?).map_err(|e| CliError::Parse(format!("{}: {e}", p.display()))),
        None => Ok(ParameterTable::builtin().clone()),
    }
}

fn load_schema_file(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<SchemaGraph, CliError> {
    match flag.or_else(|| cfg.schema.clone()) {
        Some(p) => load_schema(&read(&p)?).map_err(|e| CliError::Parse(format!("{}: {e}", p.display()))),
        None => Ok(builtin_schema().clone()),
    }
}

fn backend(args: BackendArgs, cfg: &BackendConfig, default: BackendKind) -> Result<Box<dyn ExtractionBackend>, CliError> {
    let transcripts = args.transcripts.or_else(|| cfg.transcripts.clone());
    let kind = args
        .backend
        .or(cfg.kind)
        .unwrap_or(if transcripts.is_some() { BackendKind::Fixture } else { default });
    Ok(match kind {
        BackendKind::Rule => Box::new(RuleBasedFiller),
        BackendKind::Http => Box::new(HttpBackend::from_env()?),
        BackendKind::Fixture => {
            let dir = transcripts.ok_or_else(|| CliError::Usage("the fixture backend needs --transcripts".into()))?;
            Box::new(FixtureBackend::load(&dir)?)
        }
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(j) = cli.jobs.or(cfg.jobs) {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }

    match cli.command {
        Command::BuildMap { map, output } => {
            let net = load_map(&map)?;
            log::info!("{}: {} segments, {} edges", map.display(), net.segments.len(), net.edges.len());
            write_out(output.as_deref(), &to_json(&net.to_graph_dump()))
        }
        Command::Extract {
            report,
            id,
            backend: b,
            output,
        } => {
            let text = read(&report)?;
            let id = id.unwrap_or_else(|| report.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string());
            let be = backend(b, &cfg.extraction, BackendKind::Http)?;
            let facts = extract_facts(&id, &text, be.as_ref())?;
            write_out(output.as_deref(), &to_json(&facts))
        }
        Command::Seed {
            facts,
            map,
            seed,
            params,
            schema,
            backend: b,
            output,
        } => {
            let facts: ReportFacts =
                serde_json::from_str(&read(&facts)?).map_err(|e| CliError::Parse(format!("{}: {e}", facts.display())))?;
            facts.validate(Codebook::builtin())?;
            let net = load_map(&pick_map(map, &cfg)?)?;
            let params = load_params(params, &cfg)?;
            let schema = load_schema_file(schema, &cfg)?;
            let be = backend(b, &cfg.content, BackendKind::Rule)?;
            let doc = generate_seed_with(&net, &facts, seed.or(cfg.seed).unwrap_or(0), be.as_ref(), &params, &schema)?;
            Ok(doc.serialize(&output)?)
        }
        Command::Grow {
            scenario,
            map,
            seed,
            retention,
            insert_obstacle,
            params,
            output,
        } => {
            let doc = ScenarioDocument::read(&scenario)?;
            let net = load_map(&pick_map(map, &cfg)?)?;
            let params = load_params(params, &cfg)?;
            let opts = GrowOptions {
                seed: seed.or(cfg.seed).unwrap_or(0),
                insert_obstacle: insert_obstacle || cfg.insert_obstacle.unwrap_or(false),
                retention: retention.or(cfg.retention),
            };
            let tree = grow(&doc, &net, &params, &opts)?;
            let manifest = write_tree(&tree, &output)?;
            log::info!(
                "{}: {} nodes ({} retained)",
                output.display(),
                manifest.nodes.len(),
                manifest.nodes.iter().filter(|n| !n.pruned).count()
            );
            Ok(())
        }
        Command::Analyze {
            tree,
            traces,
            map,
            params,
            output,
            triggers,
        } => {
            let net = load_map(&pick_map(map, &cfg)?)?;
            let params = load_params(params, &cfg)?;
            let report = analyze(&tree, &traces, &net, &params, &cfg.oracle)?;
            write_atomic(&output, to_json(&report).as_bytes())?;
            if let Some(t) = triggers {
                write_triggers_csv(&t, &report.triggers)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
