//! Batch front-end: each subcommand reads one JSON config, writes CSV and
//! JSON artifacts plus a `manifest.json` with content hashes.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Config,
    Numerical,
    Divergence,
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Divergence => 4,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind, "message": self.message, "exit_code": self.exit_code() } })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<fourier_closure::Error> for CliError {
    fn from(e: fourier_closure::Error) -> Self {
        use fourier_closure::Error as E;
        let kind = match e {
            E::InvalidParameter(_) | E::ShapeMismatch(_) => ErrorKind::Config,
            E::Divergence { .. } => ErrorKind::Divergence,
            _ => ErrorKind::Numerical,
        };
        Self { kind, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Dispersion,
    CollisionCheck,
    ZeroModes,
    Diffusion,
    Hydro,
    Kinetic,
    Langevin,
    Oracle,
    Compare,
}

#[derive(Debug, Parser)]
#[command(name = "fclosure", version, about = "Stationary heat conduction in pinned anharmonic lattices")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Files and summary produced by one subcommand.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
}

impl Output {
    pub fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body.into_bytes()));
    }
}

/// A subcommand failure after some files were already produced.
pub struct Partial {
    pub error: CliError,
    pub output: Output,
}

impl From<CliError> for Partial {
    fn from(error: CliError) -> Self {
        Self { error, output: Output::default() }
    }
}

impl From<fourier_closure::Error> for Partial {
    fn from(e: fourier_closure::Error) -> Self {
        CliError::from(e).into()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Artifact {
    file: String,
    sha256: String,
}

fn write_artifacts(dir: &Path, output: &Output) -> Result<Vec<Artifact>, CliError> {
    let mut listed = Vec::new();
    for (name, body) in &output.files {
        fs::write(dir.join(name), body).map_err(|e| CliError::config(format!("writing {name}: {e}")))?;
        listed.push(Artifact { file: name.clone(), sha256: sha256_hex(body) });
    }
    Ok(listed)
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    let report = |e: &CliError| eprintln!("{}", e.to_json());
    let mut config = match &cli.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => match RunConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => {
                    report(&e);
                    return e.exit_code();
                }
            },
            Err(e) => {
                let e = CliError::config(format!("reading {}: {e}", path.display()));
                report(&e);
                return e.exit_code();
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            let e = CliError::config("--threads must be at least 1");
            report(&e);
            return e.exit_code();
        }
        // Ignored if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = config.validate().and_then(|_| {
        fs::create_dir_all(&cli.out).map_err(|e| CliError::config(format!("creating {}: {e}", cli.out.display())))
    }) {
        report(&e);
        return e.exit_code();
    }

    let result = commands::dispatch(cli.command, &config);
    let (output, error) = match result {
        Ok(o) => (o, None),
        Err(p) => (p.output, Some(p.error)),
    };
    let mut output = output;
    let mut summary = output.summary.take();
    if let Some(e) = &error {
        summary = json!({ "partial": summary, "error": e.to_json()["error"].clone() });
    }
    output.file("summary.json", serde_json::to_string_pretty(&summary).unwrap() + "\n");
    let artifacts = match write_artifacts(&cli.out, &output) {
        Ok(a) => a,
        Err(e) => {
            report(&e);
            return e.exit_code();
        }
    };
    let manifest = json!({
        "command": cli.command,
        "status": if error.is_some() { "failed" } else { "ok" },
        "partial_artifacts": error.is_some(),
        "config": config,
        "seeds": { "seed": config.seed, "replicas": config.replicas },
        "threads": rayon::current_num_threads(),
        "versions": {
            "fourier-cli": env!("CARGO_PKG_VERSION"),
            "fourier-closure": fourier_closure::VERSION,
        },
        "wall_time_s": started.elapsed().as_secs_f64(),
        "artifacts": artifacts,
    });
    let text = serde_json::to_string_pretty(&manifest).unwrap() + "\n";
    if let Err(e) = fs::write(cli.out.join("manifest.json"), text) {
        let e = CliError::config(format!("writing manifest: {e}"));
        report(&e);
        return e.exit_code();
    }
    match error {
        Some(e) => {
            report(&e);
            e.exit_code()
        }
        None => 0,
    }
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            if e.use_stderr() {
                let err = CliError::config(e.to_string());
                eprintln!("{}", err.to_json());
                err.exit_code()
            } else {
                let _ = e.print();
                0
            }
        }
    }
}
