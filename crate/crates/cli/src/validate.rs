use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use teleop_core::kinematics::ArmModel;
use teleop_core::recorder::{read_episode, validate_episode};

use crate::{collect_episode_dirs, load_rig, EXIT_VIOLATIONS};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Episode directories or trees containing them.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Rig description the episodes were recorded with.
    #[arg(long)]
    pub rig: Option<PathBuf>,
}

/// Outcome for one episode directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeCheck {
    pub path: PathBuf,
    /// Failure classes with details; empty when clean.
    pub problems: Vec<(String, String)>,
}

impl EpisodeCheck {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

pub fn check_episode(dir: &Path, models: &[ArmModel; 2]) -> EpisodeCheck {
    let problems = match read_episode(dir) {
        Err(e) => vec![(e.class().to_owned(), format!("{}: {e}", e.class()))],
        Ok(ep) => validate_episode(&ep, models)
            .violations
            .iter()
            .map(|v| (v.class().to_owned(), v.to_string()))
            .collect(),
    };
    EpisodeCheck {
        path: dir.to_path_buf(),
        problems,
    }
}

pub fn validate(args: ValidateArgs) -> anyhow::Result<ExitCode> {
    let rig = load_rig(args.rig.as_deref())?;
    let models = rig.follower_models();
    let dirs = collect_episode_dirs(&args.paths)?;
    let mut failed = 0;
    for dir in &dirs {
        let check = check_episode(dir, &models);
        if check.is_clean() {
            println!("ok   {}", dir.display());
        } else {
            failed += 1;
            println!("FAIL {}", dir.display());
            for (_, detail) in check.problems.iter().take(20) {
                println!("     {detail}");
            }
            if check.problems.len() > 20 {
                println!("     ... {} more", check.problems.len() - 20);
            }
        }
    }
    println!("{} episodes, {} failed", dirs.len(), failed);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATIONS)
    })
}
