//! Config-driven runner behind the `jumpom` binary.
//!
//! A run reads one TOML document holding a model block, a numerics block and
//! exactly one experiment block, executes the experiment and writes its
//! artifacts plus `manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod config;
mod experiments;

pub use config::{ExperimentConfig, Model};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{module}: {message}")]
    Validation { module: &'static str, message: String },
    #[error("{module}: {message}")]
    Numerical { module: &'static str, message: String },
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(module: &'static str, message: impl Into<String>) -> Self {
        CliError::Validation {
            module,
            message: message.into(),
        }
    }

    pub fn numerical(module: &'static str, message: impl Into<String>) -> Self {
        CliError::Numerical {
            module,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation { .. } => 2,
            CliError::Numerical { .. } | CliError::Io { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Validate,
    Simulate,
    SolveFpe,
    FlowCompare,
    OmEval,
    TubeRatio,
    Map,
    DomEval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::SolveFpe => "solve-fpe",
            Command::FlowCompare => "flow-compare",
            Command::OmEval => "om-eval",
            Command::TubeRatio => "tube-ratio",
            Command::Map => "map",
            Command::DomEval => "dom-eval",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "jumpom", version, about = "Onsager–Machlup experiments for jump-diffusions")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment config (TOML), or a `manifest.json` from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    /// The config document verbatim, so the run can be repeated from here.
    pub config_toml: String,
    /// Directory relative file references were resolved against.
    pub config_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Scalar results, for comparisons across runs.
    pub summary: BTreeMap<String, f64>,
    pub outputs: Vec<OutputFile>,
}

/// Scalar results of one experiment, keyed by name.
pub type Summary = BTreeMap<String, f64>;

pub(crate) struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub out: &'a Path,
    pub files: Vec<String>,
}

impl RunContext<'_> {
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::numerical("cli", format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Loaded {
    text: String,
    dir: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{} is not a manifest: {e}", path.display())))?;
        return Ok(Loaded {
            text: m.config_toml,
            dir: m.config_dir,
            seed: Some(m.seed),
            threads: Some(m.threads),
        });
    }
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let dir = fs::canonicalize(&dir).unwrap_or(dir);
    Ok(Loaded {
        text,
        dir,
        seed: None,
        threads: None,
    })
}

/// Runs one command and returns the process exit code. Errors are printed
/// to standard error; the manifest is written whenever the output directory
/// could be created.
pub fn run(args: &Args) -> i32 {
    let started = Instant::now();
    let loaded = match load(&args.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cfg = match ExperimentConfig::parse(&loaded.text, &loaded.dir) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let seed = args.seed.or(loaded.seed).unwrap_or(cfg.seed);
    let threads = args.threads.or(loaded.threads).or(cfg.threads).unwrap_or(0);
    let out = args.out.clone().unwrap_or_else(|| {
        if cfg.out.is_absolute() {
            cfg.out.clone()
        } else {
            loaded.dir.join(&cfg.out)
        }
    });
    if let Err(e) = fs::create_dir_all(&out) {
        let e = CliError::io(&out, e);
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let e = CliError::Config(format!("thread pool with {threads} threads: {e}"));
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut ctx = RunContext {
        cfg: &cfg,
        seed,
        out: &out,
        files: Vec::new(),
    };
    let result = pool.install(|| experiments::dispatch(args.command, &mut ctx));
    let (exit_code, error, summary) = match result {
        Ok(s) => (0, None, s),
        Err((e, s)) => {
            eprintln!("error: {e}");
            (e.exit_code(), Some(e.to_string()), s)
        }
    };
    let mut outputs = Vec::new();
    for f in &ctx.files {
        let bytes = fs::read(out.join(f)).unwrap_or_default();
        outputs.push(OutputFile {
            file: f.clone(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        command: args.command.name().to_string(),
        config_sha256: sha256_hex(loaded.text.as_bytes()),
        config_toml: loaded.text,
        config_dir: loaded.dir,
        seed,
        threads: pool.current_num_threads(),
        versions: BTreeMap::from([
            ("jumpom".to_string(), jumpom::VERSION.to_string()),
            ("jumpom-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]),
        wall_time_s: started.elapsed().as_secs_f64(),
        exit_code,
        error,
        summary,
        outputs,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(&path, text) {
        let e = CliError::io(&path, e);
        eprintln!("error: {e}");
        return e.exit_code();
    }
    exit_code
}
