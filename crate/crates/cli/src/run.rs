use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args};
use log::info;
use teleop_core::bus::capture::write_log;
use teleop_core::bus::tcp::serve;
use teleop_core::bus::{topics, Bus, BusMessage, Topic};
use teleop_core::clock::{secs_to_nanos, Clock};
use teleop_core::recorder::{next_episode_id, EpisodeLabels};
use teleop_core::simdev::{LeaderScript, LeaderSource, UiSetpoints};
use teleop_core::teleop::{LiveRun, RunOutcome, SimSetup, TeleopOptions, VirtualRig};

use crate::bridge::{Bridge, BridgeConfig, LeaderLink};
use crate::load_rig;

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["scripted", "live", "leader_log"])))]
pub struct RunArgs {
    /// Rig description file; the built-in desk rig when omitted.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Drive the leaders from a JSON waypoint script.
    #[arg(long, value_name = "SCRIPT")]
    pub scripted: Option<PathBuf>,
    /// Drive the leaders from the browser console.
    #[arg(long)]
    pub live: bool,
    /// Drive the leaders from a captured leader message log.
    #[arg(long, value_name = "LOG", requires = "virtual_clock")]
    pub leader_log: Option<PathBuf>,
    /// Episode output directory; defaults to the rig's record root.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Websocket bridge port (0 picks a free port).
    #[arg(long, default_value_t = 8765)]
    pub ws_port: u16,
    /// TCP bus port (0 picks a free port).
    #[arg(long, default_value_t = 7447)]
    pub bus_port: u16,
    /// Start neither the bus server nor the websocket bridge.
    #[arg(long)]
    pub headless: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run on simulated time as fast as possible.
    #[arg(long, conflicts_with = "live")]
    pub virtual_clock: bool,
    /// Stop after this many seconds instead of when the leader input ends.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Write every leader message to this log for later replay.
    #[arg(long, value_name = "LOG")]
    pub capture: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub task: String,
    #[arg(long, default_value = "")]
    pub location: String,
    #[arg(long, default_value = "")]
    pub operator: String,
}

/// Seconds to keep running after scripted input ends so the last episode can close.
const SETTLE_SECS: f64 = 1.0;

pub fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let rig = Arc::new(load_rig(args.rig.as_deref())?);
    let root = args.root.clone().unwrap_or_else(|| rig.desc.record_root.clone());
    if let Some(d) = args.duration {
        if !(d > 0.0 && d.is_finite()) {
            bail!("--duration must be positive");
        }
    }

    let script = match &args.scripted {
        Some(p) => Some(LeaderScript::load(p).with_context(|| format!("loading script {}", p.display()))?),
        None => None,
    };
    let log = match &args.leader_log {
        Some(p) => Some(
            teleop_core::bus::capture::read_log(p)
                .with_context(|| format!("reading leader log {}", p.display()))?,
        ),
        None => None,
    };

    let bus = Bus::new();
    let setpoints = UiSetpoints::new();
    let mut servers = None;
    if !args.headless {
        let bus_server = serve(&bus, ("127.0.0.1", args.bus_port))
            .with_context(|| format!("bus port {} unavailable", args.bus_port))?;
        let listener = Bridge::bind(("127.0.0.1", args.ws_port))
            .with_context(|| format!("websocket port {} unavailable", args.ws_port))?;
        let bridge = Bridge::start(
            listener,
            bus.clone(),
            BridgeConfig {
                leader: args.live.then(|| LeaderLink {
                    setpoints: setpoints.clone(),
                    models: rig.leaders.clone(),
                    rest: rig.ready(),
                }),
                record_root: root.clone(),
            },
        )?;
        println!("bus: tcp://{}", bus_server.local_addr());
        println!("console: http://{}/", bridge.local_addr());
        servers = Some((bus_server, bridge));
    }
    println!("episodes: {}", root.display());

    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let flag = interrupted.clone();
        ctrlc::set_handler(move || flag.store(true, Ordering::Release))
            .context("installing interrupt handler")?;
    }

    let first_episode_id = next_episode_id(&root).unwrap_or(0);
    let opts = TeleopOptions {
        labels: EpisodeLabels {
            task: args.task.clone(),
            location: args.location.clone(),
            operator: args.operator.clone(),
        },
        record_root: Some(root.clone()),
        first_episode_id,
    };
    let settle = secs_to_nanos(SETTLE_SECS + rig.desc.gesture.transit_duration);

    let capture_sub = args
        .capture
        .as_ref()
        .map(|_| bus.subscribe(&Topic::new(topics::LEADER_JOINT_STATES).unwrap(), 1 << 22));

    let outcome = if args.virtual_clock {
        let leader = match (script, log) {
            (Some(script), _) => LeaderSource::Script { script, start_ns: 0 },
            (None, Some(log)) => LeaderSource::log(log),
            (None, None) => unreachable!("clap enforces a leader source"),
        };
        let end = match args.duration {
            Some(d) => secs_to_nanos(d),
            None => leader.end_ns().unwrap_or(0) + settle,
        };
        let mut vr = VirtualRig::on_bus(
            SimSetup {
                rig: rig.clone(),
                leader,
                seed: args.seed,
                opts,
            },
            bus.clone(),
            0,
        );
        while vr.next_stamp() <= end && !interrupted.load(Ordering::Acquire) {
            vr.step();
        }
        vr.finish()
    } else {
        let clock = Clock::monotonic();
        let start = clock.now_ns();
        let (leader, input_end) = match script {
            Some(script) => {
                let src = LeaderSource::Script {
                    script,
                    start_ns: start,
                };
                let end = src.end_ns();
                (src, end)
            }
            None => (LeaderSource::Ui(setpoints.clone()), None),
        };
        let end = match (args.duration, input_end) {
            (Some(d), _) => Some(start + secs_to_nanos(d)),
            (None, Some(e)) => Some(e + settle),
            (None, None) => None,
        };
        let live = LiveRun::start(
            SimSetup {
                rig: rig.clone(),
                leader,
                seed: args.seed,
                opts,
            },
            &bus,
        );
        info!("running; press Ctrl-C to stop");
        while !interrupted.load(Ordering::Acquire) && end.is_none_or(|e| clock.now_ns() < e) {
            std::thread::sleep(Duration::from_millis(10));
        }
        live.stop()
    };

    if interrupted.load(Ordering::Acquire) {
        println!("interrupted");
    }
    if let (Some(path), Some(sub)) = (&args.capture, &capture_sub) {
        let msgs: Vec<BusMessage> = sub.drain();
        write_log(path, &msgs).with_context(|| format!("writing capture {}", path.display()))?;
        println!("captured {} leader messages to {}", msgs.len(), path.display());
    }
    report(&outcome);
    if let Some((bus_server, bridge)) = servers {
        bridge.shutdown();
        bus_server.shutdown();
    }
    Ok(ExitCode::SUCCESS)
}

fn report(outcome: &RunOutcome) {
    for e in &outcome.episodes {
        let status = match e.status {
            teleop_core::recorder::EpisodeStatus::Complete => "complete",
            teleop_core::recorder::EpisodeStatus::Aborted => "aborted",
        };
        match &e.path {
            Some(p) => println!(
                "episode {} {status} {} records {}",
                e.episode_id,
                e.record_count,
                p.display()
            ),
            None => println!("episode {} {status} {} records (not written)", e.episode_id, e.record_count),
        }
    }
    println!(
        "{} episodes written, {} ticks, {} gated",
        outcome.episodes.iter().filter(|e| e.path.is_some()).count(),
        outcome.stats.ticks,
        outcome.stats.gated_ticks
    );
}
