//! `latnas` command-line driver.

mod args;
mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::args::{Cli, Command, ReplayArgs};
use crate::commands::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::{input_artifact, RunManifest, MANIFEST_FILE};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Replay(r) => replay(r),
        _ => execute(&cli.command, argv),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

/// Runs a command and writes its manifest when it produced a run directory.
fn execute(command: &Command, args: Vec<String>) -> CliResult<()> {
    let started = Instant::now();
    let mut ctx = Context::default();
    let res = match command {
        Command::Count(a) => commands::count(a, &mut ctx),
        Command::Train(a) => commands::train(a, &mut ctx),
        Command::Search(a) => commands::search(a, &mut ctx),
        Command::Correlate(a) => commands::correlate(a, &mut ctx),
        Command::Bench(a) => commands::bench(a, &mut ctx),
        Command::Replay(_) => unreachable!("replay is dispatched separately"),
    };
    if let Some(run) = &ctx.run {
        let cwd = std::env::current_dir()?;
        let manifest = RunManifest {
            command: command.name().to_string(),
            args,
            cwd: cwd.display().to_string(),
            config_source: ctx.config_source.clone(),
            config: ctx.config.clone(),
            seeds: ctx.seeds.clone(),
            inputs: ctx.inputs.clone(),
            outputs: run.artifacts()?,
            exit_code: res.as_ref().err().map_or(0, |e| e.code),
            wall_clock_ms: started.elapsed().as_millis() as u64,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        manifest.write(&run.root)?;
    }
    res
}

/// The recorded arguments with the run directory replaced by `out`.
fn redirect(args: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut result = Vec::with_capacity(args.len() + 2);
    let mut replaced = false;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(a.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out]);
    }
    result
}

fn replay(r: &ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::read(&r.manifest)?;
    for input in &recorded.inputs {
        let now = input_artifact(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::config(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let out: PathBuf = std::path::absolute(&r.out)?;
    let args = redirect(&recorded.args, &out);
    let cli = Cli::try_parse_from(std::iter::once("latnas".to_string()).chain(args.iter().cloned()))
        .map_err(|e| CliError::config(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::config("a replay manifest cannot be replayed"));
    }
    std::env::set_current_dir(&recorded.cwd)?;
    let res = execute(&cli.command, args);
    let code = res.as_ref().err().map_or(0, |e| e.code);
    let fresh = RunManifest::read(&out.join(MANIFEST_FILE))?;
    let mut identical = code == recorded.exit_code && fresh.outputs.len() == recorded.outputs.len();
    for old in &recorded.outputs {
        let new = fresh.outputs.iter().find(|a| a.path == old.path);
        let same = new.is_some_and(|a| a.sha256 == old.sha256);
        identical &= same;
        println!("{} {}", if same { "identical" } else { "differs  " }, old.path);
    }
    if code != recorded.exit_code {
        println!("exit code {code}, recorded {}", recorded.exit_code);
    }
    if identical {
        println!("replay identical");
        Ok(())
    } else {
        Err(CliError::failure("replay outputs differ from the manifest"))
    }
}
