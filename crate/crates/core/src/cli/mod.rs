//! Command-line front end: `dephasimeter <command> --spec run.json`.
//!
//! A run config holds `{command, parameters, output, seed, workers}`. Results are
//! written into the `output` directory together with `manifest.json`, which
//! echoes the fully resolved config.

mod commands;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use commands::NoiseConfig;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "DEPHASIMETER_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Kappa,
    Evolve,
    Qfi,
    Sweep,
    Table1,
    RatioMc,
    Wigner,
}

impl CommandName {
    fn from_args(c: &CliCommand) -> (CommandName, &RunArgs) {
        match c {
            CliCommand::Kappa(a) => (CommandName::Kappa, a),
            CliCommand::Evolve(a) => (CommandName::Evolve, a),
            CliCommand::Qfi(a) => (CommandName::Qfi, a),
            CliCommand::Sweep(a) => (CommandName::Sweep, a),
            CliCommand::Table1(a) => (CommandName::Table1, a),
            CliCommand::RatioMc(a) => (CommandName::RatioMc, a),
            CliCommand::Wigner(a) => (CommandName::Wigner, a),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A run configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandName,
    #[serde(default)]
    pub parameters: Value,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

/// Failure of a run, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Run(#[from] crate::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dephasimeter",
    version,
    about = "Quadratic-encoding Ramsey metrology under collective dephasing"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Decay coefficient kappa(t) of a noise spectrum.
    Kappa(RunArgs),
    /// Noise-averaged state after one encoding period.
    Evolve(RunArgs),
    /// Exact quantum Fisher information of a protocol.
    Qfi(RunArgs),
    /// Optimized precision over a grid of N.
    Sweep(RunArgs),
    /// Asymptotic constants next to the reference table.
    Table1(RunArgs),
    /// Monte Carlo bias of moment and ratio estimators.
    RatioMc(RunArgs),
    /// Wigner function of a Gaussian squeezed state.
    Wigner(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Override a scalar in `parameters`, e.g. `--set n=16` or `--set noise.gamma=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Sets `parameters.<path> = value`; the value is parsed as JSON when possible.
pub fn apply_override(params: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    if value.is_object() || value.is_array() {
        return Err(CliError::Config(format!(
            "override `{key}` must be a scalar"
        )));
    }
    if params.is_null() {
        *params = Value::Object(Default::default());
    }
    let mut cur = params;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("override path `{key}` crosses a non-object"))
        })?;
        if i + 1 == parts.len() {
            if matches!(obj.get(*part), Some(v) if v.is_object() || v.is_array()) {
                return Err(CliError::Config(format!(
                    "override `{key}` would replace a non-scalar"
                )));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses config text, reporting the failing field path.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))
}

fn effective_workers(config_workers: usize) -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Config(format!("{WORKERS_ENV}={v} is not a non-negative integer"))
        }),
        Err(_) => Ok(config_workers),
    }
}

/// One output file.
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Executes a resolved config and writes its artifacts atomically.
/// Returns the written paths, manifest last.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let workers = effective_workers(config.workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let (resolved, artifacts) = pool.install(|| commands::execute(config))?;
    let names: Vec<&str> = artifacts.iter().map(|a| a.name.as_str()).collect();
    let manifest = serde_json::json!({
        "tool": "dephasimeter",
        "version": env!("CARGO_PKG_VERSION"),
        "config": {
            "command": config.command,
            "parameters": resolved,
            "output": config.output,
            "seed": config.seed,
            "workers": config.workers,
        },
        "effective_workers": pool.current_num_threads(),
        "outputs": names,
    });
    let mut all = artifacts;
    all.push(Artifact {
        name: "manifest.json".into(),
        contents: pretty(&manifest),
    });
    write_atomic(&config.output, &all)
}

pub(crate) fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Writes every artifact to a temporary name, then renames them all.
fn write_atomic(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, CliError> {
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let mut staged = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let tmp = dir.join(format!(".{}.tmp", a.name));
        if let Err(e) = fs::write(&tmp, &a.contents) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(io(e, &tmp));
        }
        staged.push((tmp, dir.join(&a.name)));
    }
    for (tmp, dst) in &staged {
        fs::rename(tmp, dst).map_err(|e| io(e, dst))?;
    }
    Ok(staged.into_iter().map(|(_, d)| d).collect())
}

fn resolve(args: &RunArgs, command: CommandName) -> Result<RunConfig, CliError> {
    let mut cfg = load_config(&args.spec)?;
    if cfg.command != command {
        return Err(CliError::Config(format!(
            "config is for `{}` but `{}` was invoked",
            serde_json::to_value(cfg.command)
                .unwrap()
                .as_str()
                .unwrap_or_default(),
            serde_json::to_value(command)
                .unwrap()
                .as_str()
                .unwrap_or_default()
        )));
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    for s in &args.set {
        apply_override(&mut cfg.parameters, s)?;
    }
    Ok(cfg)
}

/// Full CLI entry point; returns the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (command, args) = CommandName::from_args(&cli.command);
    match resolve(args, command).and_then(|cfg| run(&cfg)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
