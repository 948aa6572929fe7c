use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Args;
use teleop_core::analyze::{
    group_stats, interaction_point, AnalyzeError, GroupBy, DEFAULT_PROXIMITY_THRESHOLD,
};
use teleop_core::recorder::{read_episode, validate_episode};

use crate::{collect_episode_dirs, load_rig, EXIT_VIOLATIONS};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Episode directories or trees containing them.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// End-effector distance below which the closest approach counts as an interaction, meters.
    #[arg(long, default_value_t = DEFAULT_PROXIMITY_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "location")]
    pub group_by: GroupArg,
    /// Per-episode CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-group CSV destination.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum GroupArg {
    Location,
    Operator,
    Task,
}

impl From<GroupArg> for GroupBy {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Location => GroupBy::Location,
            GroupArg::Operator => GroupBy::Operator,
            GroupArg::Task => GroupBy::Task,
        }
    }
}

pub const EPISODE_COLUMNS: [&str; 9] = [
    "episode_id",
    "group",
    "status",
    "x",
    "y",
    "z",
    "min_distance",
    "t",
    "rig_hash",
];

pub const GROUP_COLUMNS: [&str; 11] = [
    "group", "count", "mean_x", "mean_y", "mean_z", "cov_xx", "cov_xy", "cov_xz", "cov_yy",
    "cov_yz", "cov_zz",
];

struct Row {
    episode_id: u64,
    group: String,
    rig_hash: String,
    result: Result<teleop_core::analyze::InteractionPoint, AnalyzeError>,
}

pub fn analyze(args: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    if !(args.threshold > 0.0 && args.threshold.is_finite()) {
        bail!("--threshold must be positive");
    }
    let rig = load_rig(args.rig.as_deref())?;
    let models = rig.follower_models();
    let group_by = GroupBy::from(args.group_by);
    let dirs = collect_episode_dirs(&args.paths)?;

    let mut rows = Vec::new();
    let mut invalid = 0;
    for dir in &dirs {
        let ep = match read_episode(dir) {
            Ok(ep) => ep,
            Err(e) => {
                eprintln!("skipping {}: {}: {e}", dir.display(), e.class());
                invalid += 1;
                continue;
            }
        };
        let report = validate_episode(&ep, &models);
        if !report.is_clean() {
            eprintln!("skipping {}: {}", dir.display(), report.classes().join(", "));
            invalid += 1;
            continue;
        }
        if ep.manifest.rig_hash != rig.hash {
            bail!(
                "{} was recorded with rig {} but the loaded rig is {}",
                dir.display(),
                ep.manifest.rig_hash,
                rig.hash
            );
        }
        rows.push(Row {
            episode_id: ep.manifest.episode_id,
            group: group_by.key(&ep.manifest.labels).to_owned(),
            rig_hash: ep.manifest.rig_hash.clone(),
            result: interaction_point(&ep, &models, args.threshold),
        });
    }
    rows.sort_by(|a, b| {
        (a.episode_id, &a.group)
            .cmp(&(b.episode_id, &b.group))
            .then_with(|| point_key(a).total_cmp(&point_key(b)))
    });

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| p.display().to_string())?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(EPISODE_COLUMNS)?;
    for r in &rows {
        let id = r.episode_id.to_string();
        let rec: Vec<String> = match &r.result {
            Ok(p) => vec![
                id,
                r.group.clone(),
                "interaction".into(),
                p.point.x.to_string(),
                p.point.y.to_string(),
                p.point.z.to_string(),
                p.min_distance.to_string(),
                p.t.to_string(),
                r.rig_hash.clone(),
            ],
            Err(AnalyzeError::NoInteraction { min_distance, .. }) => vec![
                id,
                r.group.clone(),
                "no_interaction".into(),
                String::new(),
                String::new(),
                String::new(),
                min_distance.to_string(),
                String::new(),
                r.rig_hash.clone(),
            ],
            Err(AnalyzeError::Empty) => {
                let mut v = vec![id, r.group.clone(), "empty".into()];
                v.extend(std::iter::repeat_n(String::new(), 5));
                v.push(r.rig_hash.clone());
                v
            }
        };
        w.write_record(&rec)?;
    }
    w.flush()?;

    let stats = group_stats(
        rows.iter()
            .filter_map(|r| r.result.as_ref().ok().map(|p| (r.group.as_str(), p.point))),
    );
    if let Some(path) = &args.groups {
        let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
        w.write_record(GROUP_COLUMNS)?;
        for (g, s) in &stats {
            let c = &s.covariance;
            let mut rec = vec![g.clone(), s.count.to_string()];
            rec.extend(s.mean.iter().map(f64::to_string));
            for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
                rec.push(c[(i, j)].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    for (g, s) in &stats {
        eprintln!(
            "group {g:?}: {} interactions, mean ({:.4}, {:.4}, {:.4})",
            s.count, s.mean.x, s.mean.y, s.mean.z
        );
    }
    Ok(if invalid == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATIONS)
    })
}

fn point_key(r: &Row) -> f64 {
    r.result.as_ref().map_or(f64::NAN, |p| p.point.x)
}
