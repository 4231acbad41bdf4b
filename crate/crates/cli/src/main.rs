use std::io::Write;
use std::process::ExitCode;
use std::time::SystemTime;

use clap::Parser;

mod args;
mod commands;
mod error;
mod manifest;
mod report;

use args::{Cli, Command, ReplayArgs};
use commands::RunOutput;
use error::CliError;
use manifest::{record_output, sha256_hex, timestamp, RunManifest};

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `f` on a pool of `jobs` workers.
#[cfg(feature = "parallel")]
fn with_workers<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    Ok(f())
}

fn execute(command: &Command) -> Result<RunOutput, CliError> {
    match command {
        Command::Test(a) => commands::run_test(a),
        Command::Simulate(a) => commands::run_simulate(a),
        Command::Realdata(a) => commands::run_realdata(a),
        Command::Replay(_) => Err(CliError::Usage("a manifest cannot record a replay".into())),
    }
}

/// Runs a command, prints its stdout document and writes the manifest.
fn run_recorded(command: &Command, argv: Vec<String>, jobs: usize) -> Result<RunManifest, CliError> {
    let started = SystemTime::now();
    let output = with_workers(jobs, || execute(command))??;
    if let Some(text) = &output.stdout {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    }
    let outputs = output
        .files
        .iter()
        .map(|(role, path)| record_output(role, path))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        argv,
        invocation: command.clone(),
        seed: command.seed(),
        jobs,
        parallel: cfg!(feature = "parallel"),
        started_at: timestamp(started),
        finished_at: timestamp(SystemTime::now()),
        outputs,
        stdout_sha256: output.stdout.as_deref().map(|s| sha256_hex(s.as_bytes())),
    };
    if let Some(path) = command.manifest_path() {
        manifest.write(&path)?;
    }
    Ok(manifest)
}

fn replay(args: &ReplayArgs, jobs: Option<usize>) -> Result<(), CliError> {
    let recorded = RunManifest::read(&args.manifest)?;
    let mut command = recorded.invocation.clone();
    let scratch;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        command.redirect(dir);
    } else if args.verify {
        scratch = tempfile::tempdir().map_err(|e| CliError::Io(format!("temporary directory: {e}")))?;
        command.redirect(scratch.path());
    }
    let argv = std::env::args().collect();
    let replayed = run_recorded(&command, argv, jobs.unwrap_or(recorded.jobs))?;
    if !args.verify {
        return Ok(());
    }
    let mut differing = Vec::new();
    for (old, new) in recorded.outputs.iter().zip(&replayed.outputs) {
        if old.sha256 != new.sha256 {
            differing.push(old.path.display().to_string());
        }
    }
    if recorded.outputs.len() != replayed.outputs.len() {
        differing.push("output list".to_string());
    }
    if recorded.stdout_sha256 != replayed.stdout_sha256 {
        differing.push("stdout".to_string());
    }
    if differing.is_empty() {
        eprintln!("replay matches {} recorded output(s)", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Mismatch(differing))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.map(|j| j as usize);
    let result = match &cli.command {
        Command::Replay(args) => replay(args, jobs),
        command => run_recorded(command, std::env::args().collect(), jobs.unwrap_or_else(default_jobs)).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drma: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
