//! Entry points behind the `teleop-rig` binary.

pub mod analyze;
pub mod bridge;
pub mod replay;
pub mod run;
pub mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use teleop_core::rig::Rig;

/// Exit status for "data violations found".
pub const EXIT_VIOLATIONS: u8 = 1;
/// Exit status for usage or runtime errors.
pub const EXIT_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "teleop-rig", version, about = "Simulated bimanual teleoperation rig")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bring up the simulated rig and record episodes.
    Run(run::RunArgs),
    /// Republish a recorded episode on the replay topics.
    Replay(replay::ReplayArgs),
    /// Check recorded episodes; exit 0 iff all are clean.
    Validate(validate::ValidateArgs),
    /// Locate inter-arm interaction points and aggregate them by group.
    Analyze(analyze::AnalyzeArgs),
}

pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(a) => run::run(a),
        Command::Replay(a) => replay::replay(a),
        Command::Validate(a) => validate::validate(a),
        Command::Analyze(a) => analyze::analyze(a),
    }
}

/// Load the rig file, or the built-in desk rig when none is given.
pub fn load_rig(path: Option<&Path>) -> anyhow::Result<Rig> {
    match path {
        Some(p) => Rig::load(p).with_context(|| format!("loading rig {}", p.display())),
        None => Ok(Rig::desk_default()),
    }
}

/// Episode directories named by `paths`: each is an episode or a tree containing episodes.
pub fn collect_episode_dirs(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if is_episode_dir(p) {
            out.push(p.clone());
        } else if p.is_dir() {
            walk(p, &mut out).with_context(|| format!("scanning {}", p.display()))?;
        } else {
            anyhow::bail!("{} is neither an episode nor a directory", p.display());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn is_episode_dir(p: &Path) -> bool {
    p.join("manifest.json").is_file() || p.join("records.tbr").is_file()
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        let hidden = p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if hidden || !p.is_dir() {
            continue;
        }
        if is_episode_dir(&p) {
            out.push(p);
        } else {
            walk(&p, out)?;
        }
    }
    Ok(())
}
