use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::bus::{topics, ArmState, Bus, BusMessage, Payload, Publisher, Subscription, Topic};
use crate::clock::{period_nanos, Clock, Ticker};
use crate::kinematics::JointVector;
use crate::rig::Rig;
use crate::session::StateCode;
use crate::simdev::{CameraSim, FollowerSim, LeaderDevice, LeaderSource};

use super::{FinishedEpisode, TeleopNode, TeleopOptions, TeleopStats, TickReport};

/// Simulated follower pair: integrates the latest command each control period.
pub struct FollowerDevice {
    sims: [FollowerSim; 2],
    cmd_sub: Subscription,
    latest: [JointVector; 2],
    publisher: Publisher,
    topic: Topic,
    dt: f64,
}

impl FollowerDevice {
    pub fn new(rig: &Rig, bus: &Bus, clock: Clock, seed: u64) -> Self {
        let home = rig.desc.home_pose.pair();
        let cfg = rig.desc.follower_sim;
        let [l, r] = rig.follower_models();
        Self {
            sims: [
                FollowerSim::new(l, cfg, home[0], seed),
                FollowerSim::new(r, cfg, home[1], seed.wrapping_add(1)),
            ],
            cmd_sub: bus.subscribe(&Topic::new(topics::FOLLOWER_JOINT_COMMANDS).unwrap(), 1024),
            latest: home,
            publisher: Publisher::new(bus.clone(), clock),
            topic: Topic::new(topics::FOLLOWER_JOINT_STATES).unwrap(),
            dt: 1.0 / cfg.control_rate,
        }
    }

    pub fn tick(&mut self, now: u64) -> [ArmState; 2] {
        for m in self.cmd_sub.drain() {
            if let Payload::JointCommand(c) = &m.payload {
                if let Ok(c) = <[JointVector; 2]>::try_from(c.as_slice()) {
                    self.latest = c;
                }
            }
        }
        let states = [
            self.sims[0].step(&self.latest[0], self.dt),
            self.sims[1].step(&self.latest[1], self.dt),
        ];
        self.publisher
            .publish_at(&self.topic, now, Payload::JointState(states.to_vec()));
        states
    }
}

pub struct CameraDevice {
    sim: CameraSim,
    publisher: Publisher,
    topic: Topic,
}

impl CameraDevice {
    pub fn new(sim: CameraSim, bus: &Bus, clock: Clock) -> Self {
        Self {
            topic: Topic::camera(sim.camera_id()),
            sim,
            publisher: Publisher::new(bus.clone(), clock),
        }
    }

    pub fn tick(&mut self, now: u64) {
        let f = self.sim.next_frame();
        self.publisher
            .publish_at(&self.topic, now, Payload::CameraFrame(f));
    }
}

/// Everything needed to bring up a simulated rig.
pub struct SimSetup {
    pub rig: Arc<Rig>,
    pub leader: LeaderSource,
    pub seed: u64,
    pub opts: TeleopOptions,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub episodes: Vec<FinishedEpisode>,
    pub stats: TeleopStats,
    pub final_state: StateCode,
    pub end_stamp: u64,
    /// Every bus message seen, when capture was enabled.
    pub capture: Vec<BusMessage>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Leader,
    Camera(usize),
    Follower,
    Teleop,
}

/// Single-threaded rig on a virtual clock. Devices due at the same stamp run
/// in the order leader, cameras, follower, teleop.
pub struct VirtualRig {
    bus: Bus,
    clock: Clock,
    leader: LeaderDevice,
    leader_ticker: Ticker,
    cameras: Vec<(CameraDevice, Ticker)>,
    follower: FollowerDevice,
    follower_ticker: Ticker,
    teleop: TeleopNode,
    teleop_ticker: Ticker,
    capture: Option<Subscription>,
    captured: Vec<BusMessage>,
    last_stamp: u64,
}

impl VirtualRig {
    pub fn new(setup: SimSetup, start_ns: u64) -> Self {
        Self::on_bus(setup, Bus::new(), start_ns)
    }

    pub fn on_bus(setup: SimSetup, bus: Bus, start_ns: u64) -> Self {
        let clock = Clock::virtual_at(start_ns);
        let rig = setup.rig;
        let d = &rig.desc;
        let joint_period = period_nanos(d.follower_sim.control_rate);
        let cameras = (0..d.camera_count)
            .map(|id| {
                (
                    CameraDevice::new(CameraSim::new(id, d.cameras), &bus, clock.clone()),
                    Ticker::new(start_ns, period_nanos(d.cameras.rate)),
                )
            })
            .collect();
        Self {
            leader: LeaderDevice::new(setup.leader, Publisher::new(bus.clone(), clock.clone())),
            leader_ticker: Ticker::new(start_ns, joint_period),
            cameras,
            follower: FollowerDevice::new(&rig, &bus, clock.clone(), setup.seed),
            follower_ticker: Ticker::new(start_ns, joint_period),
            teleop: TeleopNode::new(rig.clone(), &bus, clock.clone(), setup.opts),
            teleop_ticker: Ticker::new(start_ns, period_nanos(d.tick_rate)),
            capture: None,
            captured: Vec::new(),
            last_stamp: start_ns,
            bus,
            clock,
        }
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn teleop(&self) -> &TeleopNode {
        &self.teleop
    }

    pub fn teleop_mut(&mut self) -> &mut TeleopNode {
        &mut self.teleop
    }

    /// Record every message published from now on.
    pub fn enable_capture(&mut self) {
        if self.capture.is_none() {
            self.capture = Some(self.bus.tap(1 << 20, None));
        }
    }

    fn next_slot(&self) -> (u64, Slot) {
        let mut best = (self.leader_ticker.next_deadline(), Slot::Leader);
        for (i, (_, t)) in self.cameras.iter().enumerate() {
            best = best.min((t.next_deadline(), Slot::Camera(i)));
        }
        best = best.min((self.follower_ticker.next_deadline(), Slot::Follower));
        best.min((self.teleop_ticker.next_deadline(), Slot::Teleop))
    }

    pub fn next_stamp(&self) -> u64 {
        self.next_slot().0
    }

    /// Run the next due device. Returns the tick report when the teleop node ran.
    pub fn step(&mut self) -> Option<TickReport> {
        let (stamp, slot) = self.next_slot();
        self.clock.advance_to(stamp);
        self.last_stamp = stamp;
        let report = match slot {
            Slot::Leader => {
                self.leader_ticker.advance();
                self.leader.tick(stamp);
                None
            }
            Slot::Camera(i) => {
                let (cam, t) = &mut self.cameras[i];
                t.advance();
                cam.tick(stamp);
                None
            }
            Slot::Follower => {
                self.follower_ticker.advance();
                self.follower.tick(stamp);
                None
            }
            Slot::Teleop => {
                self.teleop_ticker.advance();
                Some(self.teleop.tick(stamp))
            }
        };
        if let Some(c) = &self.capture {
            self.captured.extend(c.drain());
        }
        report
    }

    /// Step every device due at or before `end_ns`, passing each tick report to `on_tick`.
    pub fn run_until(&mut self, end_ns: u64, mut on_tick: impl FnMut(&TickReport)) {
        while self.next_stamp() <= end_ns {
            if let Some(r) = self.step() {
                on_tick(&r);
            }
        }
    }

    /// Stop the rig, aborting any in-flight episode.
    pub fn finish(mut self) -> RunOutcome {
        let end = self.last_stamp;
        self.teleop.abort(end);
        if let Some(c) = &self.capture {
            self.captured.extend(c.drain());
        }
        RunOutcome {
            episodes: self.teleop.take_finished(),
            stats: self.teleop.stats().clone(),
            final_state: self.teleop.state().code(),
            end_stamp: end,
            capture: self.captured,
        }
    }
}

/// Run a simulated rig on a virtual clock from stamp 0 through `end_ns`.
pub fn run_virtual(setup: SimSetup, end_ns: u64, capture: bool) -> RunOutcome {
    let mut rig = VirtualRig::new(setup, 0);
    if capture {
        rig.enable_capture();
    }
    rig.run_until(end_ns, |_| {});
    rig.finish()
}

/// Devices and teleop node on their own threads against the monotonic clock.
pub struct LiveRun {
    stop: Arc<AtomicBool>,
    devices: Vec<JoinHandle<()>>,
    teleop: Option<JoinHandle<TeleopNode>>,
    clock: Clock,
}

fn paced(
    clock: Clock,
    stop: Arc<AtomicBool>,
    start: u64,
    period: u64,
    mut f: impl FnMut(u64) + Send + 'static,
) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut ticker = Ticker::new(start, period);
        while !stop.load(Ordering::Acquire) {
            let deadline = ticker.advance();
            clock.sleep_until(deadline);
            f(deadline);
        }
    })
}

impl LiveRun {
    pub fn start(setup: SimSetup, bus: &Bus) -> Self {
        let clock = Clock::monotonic();
        let stop = Arc::new(AtomicBool::new(false));
        let rig = setup.rig;
        let d = rig.desc.clone();
        let start = clock.now_ns();
        let joint_period = period_nanos(d.follower_sim.control_rate);

        let mut leader =
            LeaderDevice::new(setup.leader, Publisher::new(bus.clone(), clock.clone()));
        let mut follower = FollowerDevice::new(&rig, bus, clock.clone(), setup.seed);
        let mut devices = vec![
            paced(clock.clone(), stop.clone(), start, joint_period, move |t| {
                leader.tick(t)
            }),
            paced(clock.clone(), stop.clone(), start, joint_period, move |t| {
                follower.tick(t);
            }),
        ];
        for id in 0..d.camera_count {
            let mut cam = CameraDevice::new(CameraSim::new(id, d.cameras), bus, clock.clone());
            devices.push(paced(
                clock.clone(),
                stop.clone(),
                start,
                period_nanos(d.cameras.rate),
                move |t| cam.tick(t),
            ));
        }

        let mut node = TeleopNode::new(rig.clone(), bus, clock.clone(), setup.opts);
        let teleop = {
            let clock = clock.clone();
            let stop = stop.clone();
            let period = period_nanos(d.tick_rate);
            thread::spawn(move || {
                let mut ticker = Ticker::new(start, period);
                while !stop.load(Ordering::Acquire) {
                    let deadline = ticker.advance();
                    clock.sleep_until(deadline);
                    node.tick(deadline);
                }
                node
            })
        };
        Self {
            stop,
            devices,
            teleop: Some(teleop),
            clock,
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Stop every thread and abort any in-flight episode.
    pub fn stop(mut self) -> RunOutcome {
        self.stop.store(true, Ordering::Release);
        for h in self.devices.drain(..) {
            let _ = h.join();
        }
        let mut node = self
            .teleop
            .take()
            .expect("teleop thread joined once")
            .join()
            .expect("teleop thread panicked");
        let end = self.clock.now_ns();
        node.abort(end);
        RunOutcome {
            episodes: node.take_finished(),
            stats: node.stats().clone(),
            final_state: node.state().code(),
            end_stamp: end,
            capture: Vec::new(),
        }
    }
}

impl Drop for LiveRun {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
    }
}
