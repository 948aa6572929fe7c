use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::kinematics::JointVector;
use teleop_core::session::{
    Aabb, GestureConfig, LeaderView, Session, SessionEvent, SessionInput, StateCode,
};

const MS: u64 = 1_000_000;

/// Reference interpreter written directly from the gesture rules.
struct Reference {
    code: StateCode,
    grasp_since: Option<u64>,
    zone_since: Option<u64>,
    phase_start: u64,
    next_id: u64,
    hold: u64,
    transit: u64,
}

#[derive(Debug, PartialEq, Eq)]
enum Expected {
    Start(u64),
    Stop(u64),
}

impl Reference {
    fn step(&mut self, now: u64, grasped: bool, grasped_in_zone: bool, at_ready: bool) -> Option<Expected> {
        use StateCode::*;
        let mut event = None;
        match self.code {
            Idle => {
                if at_ready {
                    self.code = Ready;
                }
            }
            Ready | Arming => {
                if !grasped {
                    self.grasp_since = None;
                    self.code = Ready;
                } else {
                    let since = *self.grasp_since.get_or_insert(now);
                    self.code = Arming;
                    if now - since >= self.hold {
                        event = Some(Expected::Start(self.next_id));
                        self.next_id += 1;
                        self.grasp_since = None;
                        self.phase_start = now;
                        self.code = if self.transit == 0 { Following } else { Transit };
                    }
                }
            }
            Transit => {
                if now - self.phase_start >= self.transit {
                    self.code = Following;
                }
            }
            Following | Disarming => {
                if !grasped_in_zone {
                    self.zone_since = None;
                    self.code = Following;
                } else {
                    let since = *self.zone_since.get_or_insert(now);
                    self.code = Disarming;
                    if now - since >= self.hold {
                        event = Some(Expected::Stop(self.next_id - 1));
                        self.zone_since = None;
                        self.phase_start = now;
                        self.code = Stopping;
                    }
                }
            }
            Stopping => {
                if now - self.phase_start >= self.transit && at_ready {
                    self.code = Ready;
                }
            }
        }
        event
    }
}

fn zone() -> Aabb {
    Aabb {
        min: [-0.1, -0.2, 0.1],
        max: [0.1, 0.2, 0.3],
    }
}

fn inside(zone: &Aabb, p: &Vector3<f64>) -> bool {
    p.x >= zone.min[0]
        && p.x <= zone.max[0]
        && p.y >= zone.min[1]
        && p.y <= zone.max[1]
        && p.z >= zone.min[2]
        && p.z <= zone.max[2]
}

/// Piecewise-constant random signal so that long holds occur.
struct Segment<T> {
    value: T,
    left: u32,
}

impl<T: Copy> Segment<T> {
    fn next(&mut self, rng: &mut ChaCha8Rng, draw: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        if self.left == 0 {
            self.value = draw(rng);
            self.left = rng.random_range(1..300);
        }
        self.left -= 1;
        self.value
    }
}

fn gripper_value(rng: &mut ChaCha8Rng, threshold: f64) -> f64 {
    match rng.random_range(0..5) {
        0 => threshold,
        1 | 2 => rng.random_range(0.0..threshold.max(1e-9)),
        _ => rng.random_range((threshold + 1e-6).min(1.0)..=1.0),
    }
}

fn ee_value(rng: &mut ChaCha8Rng, zone: &Aabb) -> Vector3<f64> {
    match rng.random_range(0..4) {
        0 => Vector3::new(zone.max[0], zone.min[1], rng.random_range(zone.min[2]..zone.max[2])),
        1 | 2 => Vector3::new(
            rng.random_range(zone.min[0]..zone.max[0]),
            rng.random_range(zone.min[1]..zone.max[1]),
            rng.random_range(zone.min[2]..zone.max[2]),
        ),
        _ => Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.5),
    }
}

/// Session against the reference interpreter over random gesture traces.
pub fn reference_fsm(traces: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF5A);
    let (mut starts, mut stops) = (0u64, 0u64);
    for trace in 0..traces {
        let cfg = GestureConfig {
            grasp_threshold: if trace % 4 == 0 { 0.2 } else { rng.random_range(0.0..=1.0) },
            hold_duration: if trace % 4 == 0 { 1.0 } else { rng.random_range(0.01..1.0) },
            end_zone: zone(),
            transit_duration: match trace % 5 {
                0 => 0.0,
                _ => rng.random_range(0.0..0.6),
            },
        };
        let first_id = rng.random_range(0..1000);
        let mut session = Session::starting_at(cfg, first_id);
        let mut reference = Reference {
            code: StateCode::Idle,
            grasp_since: None,
            zone_since: None,
            phase_start: 0,
            next_id: first_id,
            hold: cfg.hold_nanos(),
            transit: cfg.transit_nanos(),
        };

        let mut grip = [Segment { value: 1.0, left: 0 }, Segment { value: 1.0, left: 0 }];
        let mut ee = [
            Segment { value: Vector3::zeros(), left: 0 },
            Segment { value: Vector3::zeros(), left: 0 },
        ];
        let mut present = Segment { value: true, left: 0 };
        let mut ready = Segment { value: true, left: 0 };
        let mut now = rng.random_range(0..10) * MS;
        for tick in 0..rng.random_range(100..800) {
            now += match rng.random_range(0..10) {
                0 => rng.random_range(1..60) * MS,
                1 => rng.random_range(1..MS),
                _ => 8 * MS,
            };
            let g: [f64; 2] =
                std::array::from_fn(|i| grip[i].next(&mut rng, |r| gripper_value(r, cfg.grasp_threshold)));
            let p: [Vector3<f64>; 2] = std::array::from_fn(|i| ee[i].next(&mut rng, |r| ee_value(r, &zone())));
            let has_leader = present.next(&mut rng, |r| r.random_bool(0.9));
            let at_ready = ready.next(&mut rng, |r| r.random_bool(0.8));

            let input = SessionInput {
                leaders: has_leader.then(|| LeaderView {
                    q: [JointVector::new([0.0; 7], g[0]), JointVector::new([0.0; 7], g[1])],
                    ee: p,
                }),
                followers_at_ready: at_ready,
            };
            let grasped = has_leader && g.iter().all(|&x| x <= cfg.grasp_threshold);
            let in_zone = has_leader && p.iter().all(|x| inside(&zone(), x));

            let before = session.state().code();
            let events = session.step(&input, now);
            let expected = reference.step(now, grasped, grasped && in_zone, at_ready);

            let episode_events: Vec<Expected> = events
                .iter()
                .filter_map(|e| match *e {
                    SessionEvent::EpisodeStart { episode_id } => Some(Expected::Start(episode_id)),
                    SessionEvent::EpisodeStop { episode_id } => Some(Expected::Stop(episode_id)),
                    _ => None,
                })
                .collect();
            assert_eq!(
                episode_events,
                expected.into_iter().collect::<Vec<_>>(),
                "trace {trace} tick {tick}"
            );
            let after = session.state().code();
            assert_eq!(after, reference.code, "trace {trace} tick {tick}");
            let changed: Vec<_> = events
                .iter()
                .filter(|e| matches!(e, SessionEvent::StateChanged { .. }))
                .collect();
            if after == before {
                assert!(changed.is_empty(), "trace {trace} tick {tick}");
            } else {
                assert_eq!(changed, [&SessionEvent::StateChanged { state: after }]);
                assert!(matches!(events.last(), Some(SessionEvent::StateChanged { .. })));
            }
            for e in &episode_events {
                match e {
                    Expected::Start(_) => starts += 1,
                    Expected::Stop(_) => stops += 1,
                }
            }
        }
    }
    assert!(
        starts as usize > traces / 10 && stops as usize > traces / 20,
        "traces too tame: {starts} starts, {stops} stops"
    );
    format!("{traces} traces, {starts} starts, {stops} stops, no divergence")
}
