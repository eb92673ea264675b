use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sesmap_core::pipeline::{
    self, list_outputs, synth_paths, Analysis, PipelineConfig, PipelineError, RunManifest, StageReport,
};

/// Estimate latent socioeconomic status of users and brands from a follow graph.
#[derive(Debug, Parser)]
#[command(name = "sesmap", version)]
struct Cli {
    /// JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    inputs: InputFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputFlags {
    #[arg(long, global = true)]
    brands: Option<PathBuf>,
    #[arg(long, global = true)]
    edges: Option<PathBuf>,
    #[arg(long, global = true)]
    users: Option<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    #[arg(long, global = true)]
    brand_attributes: Option<PathBuf>,
    #[arg(long, global = true)]
    user_groups: Option<PathBuf>,
    #[arg(long, global = true)]
    delimiter: Option<char>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and check the input tables.
    Ingest,
    /// Apply the user filters, brand pruning and subset selection.
    Filter,
    /// Fit correspondence analysis on the selected subset.
    Fit {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Project all surviving brands and users.
    Project,
    /// Orient dimension 1 and write standardized scores.
    Score,
    /// Run the validation analyses on the scores.
    Validate {
        #[arg(long = "analysis")]
        analyses: Vec<Analysis>,
    },
    /// Write a synthetic dataset with known latent status.
    Synth {
        #[arg(long)]
        n_users: Option<usize>,
        #[arg(long)]
        n_brands: Option<usize>,
    },
    /// Run every stage in order.
    Pipeline {
        /// Generate a synthetic dataset under `<out>/synthetic` and use it as input.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        k: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Filter => "filter",
            Command::Fit { .. } => "fit",
            Command::Project => "project",
            Command::Score => "score",
            Command::Validate { .. } => "validate",
            Command::Synth { .. } => "synth",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json_file(p)?,
        None if matches!(cli.command, Command::Pipeline { synthetic: true, .. }) => {
            PipelineConfig::synthetic_benchmark()
        }
        None => PipelineConfig::default(),
    };
    let f = &cli.inputs;
    let i = &mut cfg.inputs;
    for (dst, src) in [
        (&mut i.brands, &f.brands),
        (&mut i.edges, &f.edges),
        (&mut i.users, &f.users),
        (&mut i.lexicon, &f.lexicon),
        (&mut i.truth, &f.truth),
        (&mut i.brand_attributes, &f.brand_attributes),
        (&mut i.user_groups, &f.user_groups),
    ] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    if let Some(d) = f.delimiter {
        cfg.delimiter = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir.clone_from(o);
    }
    match &cli.command {
        Command::Fit { k: Some(k) } | Command::Pipeline { k: Some(k), .. } => cfg.k_dims = *k,
        Command::Validate { analyses } if !analyses.is_empty() => cfg.analyses.clone_from(analyses),
        Command::Synth { n_users, n_brands } => {
            if let Some(n) = n_users {
                cfg.synth.n_users = *n;
            }
            if let Some(n) = n_brands {
                cfg.synth.n_brands = *n;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

type StageFn = fn(&PipelineConfig) -> Result<StageReport, PipelineError>;

const STAGES: [(&str, StageFn); 6] = [
    ("ingest", pipeline::run_ingest),
    ("filter", pipeline::run_filter),
    ("fit", pipeline::run_fit),
    ("project", pipeline::run_project),
    ("score", pipeline::run_score),
    ("validate", pipeline::run_validate),
];

/// Runs the command, returning the name of the failing stage with any error.
fn run(cli: &Cli, cfg: &mut PipelineConfig) -> Result<Vec<StageReport>, (String, PipelineError)> {
    let command = cli.command.name();
    let at = |stage: &str| {
        let stage = stage.to_string();
        move |e: PipelineError| (stage, e)
    };
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|source| PipelineError::Io {
            path: dir.display().to_string(),
            source,
        })
        .map_err(at(command))?;
    match &cli.command {
        Command::Synth { .. } => Ok(vec![pipeline::run_synth(cfg, &dir).map_err(at("synth"))?.1]),
        Command::Pipeline { synthetic, .. } => {
            let mut reports = Vec::new();
            if *synthetic {
                let (paths, rep) = pipeline::run_synth(cfg, &dir.join("synthetic")).map_err(at("synth"))?;
                reports.push(rep);
                let keep = cfg.inputs.clone();
                cfg.inputs = paths;
                cfg.inputs.brand_attributes = keep.brand_attributes;
                cfg.inputs.user_groups = keep.user_groups;
            }
            cfg.validate().map_err(at(command))?;
            for (name, stage) in STAGES {
                if *synthetic && name == "score" && cfg.anchor.is_none() {
                    cfg.anchor = Some(pipeline::synthetic_anchor(cfg).map_err(at(name))?);
                }
                reports.push(stage(cfg).map_err(at(name))?);
            }
            Ok(reports)
        }
        _ => {
            cfg.validate().map_err(at(command))?;
            let (_, stage) = STAGES
                .iter()
                .find(|(name, _)| *name == command)
                .expect("every single-stage command is listed");
            Ok(vec![stage(cfg).map_err(at(command))?])
        }
    }
}

fn error_json(stage: &str, e: &PipelineError) -> serde_json::Value {
    json!({ "error": { "stage": stage, "kind": e.kind(), "message": e.to_string() } })
}

fn write_manifest(command: &str, cfg: &PipelineConfig, stages: Vec<StageReport>, error: Option<serde_json::Value>) {
    let mut m = RunManifest::new(command, cfg);
    m.stages = stages;
    m.outputs = list_outputs(&cfg.output_dir);
    m.error = error;
    if let Err(e) = m.write(&cfg.output_dir) {
        log::warn!("could not write run manifest: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    let mut cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_json(command, &e));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    if command == "synth" {
        // the synthetic inputs are the outputs here
        cfg.inputs = synth_paths(&cfg.output_dir, cfg.synth.titles.is_some());
    }
    match run(&cli, &mut cfg) {
        Ok(stages) => {
            let summary = json!({
                "command": command,
                "output_dir": cfg.output_dir,
                "stages": stages.iter().map(|s| json!({"stage": s.stage, "seconds": s.seconds})).collect::<Vec<_>>(),
            });
            write_manifest(command, &cfg, stages, None);
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err((stage, e)) => {
            let err = error_json(&stage, &e);
            if Path::new(&cfg.output_dir).is_dir() {
                write_manifest(command, &cfg, Vec::new(), Some(err.clone()));
            }
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}
