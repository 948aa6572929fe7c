use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::kinematics::{ArmModel, JointVector, LinkSpec, RigidTransform, JOINT_COUNT};

type M4 = [[f64; 4]; 4];

fn matmul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Rotation about a unit axis by Rodrigues' formula.
fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn quat_matrix(q: &UnitQuaternion<f64>) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn homogeneous(r: [[f64; 3]; 3], t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn transform_matrix(t: &RigidTransform) -> M4 {
    homogeneous(
        quat_matrix(&t.rotation),
        [t.translation.x, t.translation.y, t.translation.z],
    )
}

fn oracle_chain(model: &ArmModel, q: &JointVector) -> Vec<M4> {
    let mut frames = vec![transform_matrix(&model.base_pose)];
    for (link, &angle) in model.links.iter().zip(q.angles.iter()) {
        let a = link.axis;
        let joint = homogeneous(axis_angle([a.x, a.y, a.z], angle), [0.0; 3]);
        let next = matmul(&matmul(frames.last().unwrap(), &transform_matrix(&link.origin)), &joint);
        frames.push(next);
    }
    frames
}

fn rotation_error(m: &M4, t: &RigidTransform) -> f64 {
    let r = quat_matrix(&t.rotation);
    // trace(Mᵀ R) = 1 + 2 cos θ
    let tr: f64 = (0..3).map(|i| (0..3).map(|k| m[k][i] * r[k][i]).sum::<f64>()).sum();
    let c = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = [
        (0..3).map(|k| m[k][1] * r[k][2] - m[k][2] * r[k][1]).sum::<f64>(),
        (0..3).map(|k| m[k][2] * r[k][0] - m[k][0] * r[k][2]).sum::<f64>(),
        (0..3).map(|k| m[k][0] * r[k][1] - m[k][1] * r[k][0]).sum::<f64>(),
    ];
    let s = (skew.iter().map(|v| v * v).sum::<f64>()).sqrt() / 2.0;
    s.atan2(c)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_transform(rng: &mut ChaCha8Rng, reach: f64) -> RigidTransform {
    RigidTransform::new(
        Vector3::new(
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
            rng.random_range(-reach..reach),
        ),
        UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(random_unit(rng)),
            rng.random_range(-3.0..3.0),
        ),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> ArmModel {
    let mut m = ArmModel::desk_default("random", random_transform(rng, 0.5));
    m.links = std::array::from_fn(|_| LinkSpec {
        origin: random_transform(rng, 0.2),
        axis: random_unit(rng),
    });
    m
}

fn random_q(rng: &mut ChaCha8Rng, model: &ArmModel) -> JointVector {
    JointVector::new(
        std::array::from_fn(|i| {
            let (lo, hi) = model.joint_limits[i];
            rng.random_range(lo..=hi)
        }),
        rng.random_range(0.0..=1.0),
    )
}

/// FK against an independent 4x4 matrix chain; panics on disagreement.
pub fn forward_kinematics(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4b494e);
    let mut worst = (0.0f64, 0.0f64);
    for case in 0..cases {
        let model = if case % 2 == 0 {
            ArmModel::desk_default("desk", random_transform(&mut rng, 0.5))
        } else {
            random_model(&mut rng)
        };
        let q = random_q(&mut rng, &model);
        let frames = model.forward_kinematics(&q);
        let oracle = oracle_chain(&model, &q);
        assert_eq!(frames.len(), JOINT_COUNT + 1);
        for (f, m) in frames.iter().zip(oracle.iter()) {
            let dp = ((f.translation.x - m[0][3]).powi(2)
                + (f.translation.y - m[1][3]).powi(2)
                + (f.translation.z - m[2][3]).powi(2))
            .sqrt();
            let dr = rotation_error(m, f);
            worst = (worst.0.max(dp), worst.1.max(dr));
            assert!(dp <= 1e-9, "case {case}: position error {dp}");
            assert!(dr <= 1e-9, "case {case}: rotation error {dr}");
        }
    }
    format!(
        "{cases} configurations, worst error {:.1e} m / {:.1e} rad",
        worst.0, worst.1
    )
}

/// Scaled-leader frames are the follower frames scaled about the base.
pub fn scaled_leader(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5343);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let base = random_transform(&mut rng, 0.5);
        let model = if case % 2 == 0 {
            ArmModel::desk_default("f", base)
        } else {
            random_model(&mut rng).with_base_pose(base)
        };
        let s = rng.random_range(0.2..3.0);
        let scaled = model.scaled(s, "leader");
        let q = random_q(&mut rng, &model);
        let full = model.forward_kinematics(&q);
        let small = scaled.forward_kinematics(&q);
        let inv = base.rotation.inverse();
        for (a, b) in full.iter().zip(small.iter()) {
            // Positions relative to the base frame scale by s; orientations are unchanged.
            let pa = inv * (a.translation - base.translation);
            let pb = inv * (b.translation - base.translation);
            let dp = (pa * s - pb).norm();
            worst = worst.max(dp);
            assert!(dp <= 1e-9, "case {case}: {dp}");
            assert!(a.rotation.angle_to(&b.rotation) <= 1e-9, "case {case}");
        }
    }
    format!("{cases} scaled leaders, worst error {worst:.1e} m")
}
