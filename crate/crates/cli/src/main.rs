mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;

use args::Cli;
use error::{CliError, Result};
use manifest::Run;

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let code = match run(argv) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn default_out(name: &str) -> PathBuf {
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    PathBuf::from("runs").join(format!("{name}-{millis}-{}", std::process::id()))
}

fn run(argv: Vec<OsString>) -> Result<()> {
    let argv = match config::config_path(&argv) {
        Some(path) => {
            let table = config::load(&path)?;
            config::merge(argv, &table, &path)?
        }
        None => argv,
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not failures
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                return Ok(());
            }
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let dir = match commands::out_dir(&cli.command) {
        Some(dir) => dir.to_path_buf(),
        None => {
            let dir = default_out(&cli.command.path().join("-"));
            eprintln!("writing to {}", dir.display());
            dir
        }
    };
    let mut run = Run::create(&dir)?;
    commands::execute(&cli.command, cli.seed, &mut run)?;
    let snapshot = serde_json::to_value(&cli)?;
    run.finish(cli.command.path().join(" "), snapshot, cli.seed)?;
    Ok(())
}
