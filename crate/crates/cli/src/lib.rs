//! The `pace` command line: seeded, file-based pipeline stages.

pub mod args;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use serde::{Deserialize, Serialize};

pub use args::{Cli, Command};

/// Record of one run, written as `manifest.<subcommand>.json` beside its
/// outputs. `argv` re-runs the stage exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub argv: Vec<String>,
    pub duration_secs: f64,
}

pub fn manifest_path(dir: &Path, subcommand: &str) -> PathBuf {
    dir.join(format!("manifest.{subcommand}.json"))
}

fn stem_dir(stem: &Path) -> PathBuf {
    stem.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Signals(_) => "signals",
            Command::Learn(_) => "learn",
            Command::Embed(_) => "embed",
            Command::Eval(_) => "eval",
            Command::ExportAtoms(_) => "export-atoms",
            Command::Pipeline(_) => "pipeline",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Learn(a) => Some(a.seed),
            Command::Eval(a) => Some(a.seed),
            Command::Pipeline(a) => Some(a.seed),
            _ => None,
        }
    }

    fn manifest_dir(&self) -> PathBuf {
        match self {
            Command::Synth(a) => a.out.clone(),
            Command::Ingest(a) => a.out.clone(),
            Command::Signals(a) => stem_dir(&a.out),
            Command::Learn(a) => a.out.clone(),
            Command::Embed(a) => stem_dir(&a.out),
            Command::Eval(a) => a.out.clone(),
            Command::ExportAtoms(a) => stem_dir(&a.out),
            Command::Pipeline(a) => a.out.clone(),
        }
    }

    fn config(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Command::Synth(a) => {
                let resolved = stages::synth_config(&a.synth, a.seed).ok();
                Ok(serde_json::json!({ "args": a, "resolved": resolved }))
            }
            Command::Ingest(a) => serde_json::to_value(a),
            Command::Signals(a) => serde_json::to_value(a),
            Command::Learn(a) => Ok(serde_json::json!({
                "args": a,
                "resolved": stages::learn_config(&a.options, a.seed),
            })),
            Command::Embed(a) => serde_json::to_value(a),
            Command::Eval(a) => Ok(serde_json::json!({
                "args": a,
                "resolved": stages::eval_config(&a.options, a.seed),
            })),
            Command::ExportAtoms(a) => serde_json::to_value(a),
            Command::Pipeline(a) => serde_json::to_value(a),
        }
    }

    /// Runs the stage and writes its manifest.
    pub fn execute(&self, argv: Vec<String>, threads: Option<usize>) -> Result<RunManifest> {
        let start = Instant::now();
        let outputs = match self {
            Command::Synth(a) => stages::run_synth(a),
            Command::Ingest(a) => stages::run_ingest(a),
            Command::Signals(a) => stages::run_signals(a),
            Command::Learn(a) => stages::run_learn(a),
            Command::Embed(a) => stages::run_embed(a),
            Command::Eval(a) => stages::run_eval(a),
            Command::ExportAtoms(a) => stages::run_export_atoms(a),
            Command::Pipeline(a) => stages::run_pipeline(a),
        }?;
        let manifest = RunManifest {
            subcommand: self.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed(),
            threads,
            config: self.config()?,
            outputs,
            argv,
            duration_secs: start.elapsed().as_secs_f64(),
        };
        let path = manifest_path(&self.manifest_dir(), self.name());
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("cannot start thread pool")
            .and_then(|pool| pool.install(|| cli.command.execute(argv, Some(n)))),
        None => cli.command.execute(argv, None),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
