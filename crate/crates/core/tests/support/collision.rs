use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::kinematics::Capsule;
use teleop_core::safety::capsule_distance;

const SAMPLES: usize = 400;

fn point(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

/// Smallest sampled axis-to-axis distance minus both radii.
fn brute_force(a: &Capsule, b: &Capsule) -> f64 {
    let pa: Vec<_> = (0..=SAMPLES)
        .map(|i| a.a.lerp(&a.b, i as f64 / SAMPLES as f64))
        .collect();
    let mut best = f64::INFINITY;
    for j in 0..=SAMPLES {
        let q = b.a.lerp(&b.b, j as f64 / SAMPLES as f64);
        for p in &pa {
            best = best.min((p - q).norm_squared());
        }
    }
    best.sqrt() - a.radius - b.radius
}

fn random_capsule(rng: &mut ChaCha8Rng, case: usize) -> Capsule {
    let a = point(rng, 0.3);
    let b = match case % 7 {
        // Degenerate: a sphere.
        0 => a,
        _ => a + point(rng, 0.15),
    };
    Capsule::new(a, b, rng.random_range(0.0..0.05))
}

/// Closed-form capsule distance against dense sampling of both axes.
pub fn capsule_distance_sampling(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let a = random_capsule(&mut rng, case);
        let mut b = random_capsule(&mut rng, case / 7);
        if case % 11 == 0 {
            // Parallel segments.
            let offset = point(&mut rng, 0.1);
            b = Capsule::new(a.a + offset, a.b + offset, b.radius);
        }
        let exact = capsule_distance(&a, &b);
        let sampled = brute_force(&a, &b);
        let err = (exact - sampled).abs();
        worst = worst.max(err);
        assert!(err <= 2e-3, "case {case}: exact {exact}, sampled {sampled}");
        assert!(exact <= sampled + 1e-12, "case {case}: exact exceeds a sampled distance");
        assert_eq!(exact, capsule_distance(&b, &a), "case {case}: asymmetric");
    }
    format!("{cases} capsule pairs, worst deviation {worst:.1e} m")
}
