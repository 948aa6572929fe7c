use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::Args;
use teleop_core::bus::tcp::serve;
use teleop_core::bus::{Bus, BusMessage};
use teleop_core::clock::Clock;
use teleop_core::recorder::{read_episode, replay_messages, validate_episode};

use crate::bridge::{Bridge, BridgeConfig};
use crate::{load_rig, EXIT_VIOLATIONS};

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Episode directory.
    pub episode: PathBuf,
    /// Playback speed factor; 2.0 plays twice as fast.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long, default_value_t = 8765)]
    pub ws_port: u16,
    #[arg(long, default_value_t = 7447)]
    pub bus_port: u16,
    #[arg(long)]
    pub headless: bool,
    /// Publish without pacing.
    #[arg(long)]
    pub virtual_clock: bool,
}

pub fn replay(args: ReplayArgs) -> anyhow::Result<ExitCode> {
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        bail!("--speed must be positive");
    }
    let rig = load_rig(args.rig.as_deref())?;
    let ep = match read_episode(&args.episode) {
        Ok(ep) => ep,
        Err(e) => {
            println!("FAIL {}: {}: {e}", args.episode.display(), e.class());
            return Ok(ExitCode::from(EXIT_VIOLATIONS));
        }
    };
    let report = validate_episode(&ep, &rig.follower_models());
    if !report.is_clean() {
        println!("FAIL {}", args.episode.display());
        for v in &report.violations {
            println!("     {v}");
        }
        return Ok(ExitCode::from(EXIT_VIOLATIONS));
    }

    let bus = Bus::new();
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
                leader: None,
                record_root: args.episode.parent().map(Into::into).unwrap_or_default(),
            },
        )?;
        println!("bus: tcp://{}", bus_server.local_addr());
        println!("console: http://{}/", bridge.local_addr());
        servers = Some((bus_server, bridge));
    }

    let clock = Clock::monotonic();
    let base = clock.now_ns();
    let msgs = replay_messages(&ep, args.speed, base);
    let began = Instant::now();
    let (first, last) = (
        msgs.first().map_or(base, |m| m.stamp),
        msgs.last().map_or(base, |m| m.stamp),
    );
    for m in &msgs {
        if !args.virtual_clock {
            clock.sleep_until(m.stamp);
        }
        bus.publish(BusMessage {
            topic: m.topic.replay(),
            ..m.clone()
        });
    }
    println!(
        "replayed {} messages spanning {:.3} s in {:.3} s (episode {:.3} s at {}x)",
        msgs.len(),
        (last - first) as f64 * 1e-9,
        began.elapsed().as_secs_f64(),
        ep.duration_secs(),
        args.speed
    );
    if let Some((bus_server, bridge)) = servers {
        bridge.shutdown();
        bus_server.shutdown();
    }
    Ok(ExitCode::SUCCESS)
}
