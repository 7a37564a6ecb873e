use std::time::Instant;

use lesiontrack::registration::{
    map_lesion_centroids, preprocess_mask, register, resample_with_fill, RegistrationConfig, RigidTransform,
};
use lesiontrack::synth::{generate_phantom, transform_phantom, LesionSpec, PhantomSpec};
use lesiontrack::{LesionClass, Point3, Volume};

fn phantom(seed: u64) -> PhantomSpec {
    PhantomSpec {
        lesions: vec![
            LesionSpec {
                center: Point3::new(14.0, 6.0, 2.0),
                radius_mm: 6.0,
                intensity: 100.0,
                class: LesionClass::Target,
                label: None,
            },
            LesionSpec {
                center: Point3::new(-16.0, -8.0, -4.0),
                radius_mm: 5.0,
                intensity: 100.0,
                class: LesionClass::NonTarget,
                label: None,
            },
        ],
        ..PhantomSpec::standard(seed)
    }
}

fn dice_after(fixed: &Volume, moving: &Volume, t: &RigidTransform, threshold: f64) -> f64 {
    let (fill, _) = moving.intensity_range();
    let warped = resample_with_fill(moving, t, fixed, fill);
    let a = preprocess_mask(fixed, threshold).unwrap();
    let b = preprocess_mask(&warped, threshold).unwrap();
    a.dice(&b)
}

fn errors(recovered: &RigidTransform, truth: &RigidTransform) -> ([f64; 3], [f64; 3]) {
    let truth = truth.recentered(recovered.center);
    let a = [0, 1, 2].map(|i| (recovered.angles[i] - truth.angles[i]).to_degrees().abs());
    let t = [0, 1, 2].map(|i| (recovered.translation[i] - truth.translation[i]).abs());
    (a, t)
}

#[test]
fn self_registration_is_identity() {
    let (v, _) = generate_phantom(&phantom(1)).unwrap();
    let cfg = RegistrationConfig::default();
    let r = register(&v, &v, &cfg).unwrap();
    let (a, t) = errors(&r.transform, &RigidTransform::IDENTITY);
    assert!(a.iter().all(|&x| x < 0.1), "{a:?}");
    assert!(t.iter().all(|&x| x < 0.1), "{t:?}");
}

#[test]
fn known_transform_is_recovered() {
    let (v, truth) = generate_phantom(&phantom(2)).unwrap();
    let t = RigidTransform::new(
        [3f64.to_radians(), (-2f64).to_radians(), 5f64.to_radians()],
        [8.0, -6.0, 4.0],
        Point3::ORIGIN,
    );
    let (moving, _) = transform_phantom(&v, &truth, &t, &v).unwrap();
    let cfg = RegistrationConfig::default();
    let before = dice_after(&v, &moving, &RigidTransform::IDENTITY, cfg.body_threshold);
    let start = Instant::now();
    let r = register(&v, &moving, &cfg).unwrap();
    let elapsed = start.elapsed();
    let (a, tr) = errors(&r.transform, &t.inverse());
    let after = dice_after(&v, &moving, &r.transform, cfg.body_threshold);
    eprintln!(
        "angles {a:?} trans {tr:?} dice {before:.3} -> {after:.3} in {elapsed:?} iters {:?}",
        r.iterations_per_level()
    );
    assert!(a.iter().all(|&x| x < 1.0), "{a:?}");
    assert!(tr.iter().all(|&x| x < 1.0), "{tr:?}");
    assert!(before <= 0.80, "{before}");
    assert!(after >= 0.95, "{after}");
}

fn shifted_pair(seed: u64) -> (Volume, Volume, RigidTransform) {
    let (v, truth) = generate_phantom(&phantom(seed)).unwrap();
    let t = RigidTransform::new(
        [(-4f64).to_radians(), 2f64.to_radians(), 3f64.to_radians()],
        [-7.0, 5.0, 6.0],
        Point3::ORIGIN,
    );
    let (moving, _) = transform_phantom(&v, &truth, &t, &v).unwrap();
    (v, moving, t)
}

#[test]
fn registration_is_deterministic() {
    let (fixed, moving, _) = shifted_pair(3);
    let cfg = RegistrationConfig::default();
    let a = register(&fixed, &moving, &cfg).unwrap();
    let b = register(&fixed, &moving, &cfg).unwrap();
    assert_eq!(
        a.transform.parameters().map(f64::to_bits),
        b.transform.parameters().map(f64::to_bits)
    );
    assert_eq!(a.metric_trace, b.metric_trace);
}

#[test]
fn pyramid_needs_no_more_fine_iterations_than_single_level() {
    let multi = RegistrationConfig::default();
    let single = RegistrationConfig {
        shrink_factors: vec![1],
        smoothing_sigmas: vec![0.0],
        ..RegistrationConfig::default()
    };
    let mut fine_multi = Vec::new();
    let mut fine_single = Vec::new();
    for seed in 10..15 {
        let (fixed, moving, t) = shifted_pair(seed);
        for (cfg, sink) in [(&multi, &mut fine_multi), (&single, &mut fine_single)] {
            let r = register(&fixed, &moving, cfg).unwrap();
            let (a, tr) = errors(&r.transform, &t.inverse());
            assert!(
                a.iter().all(|&x| x < 1.0),
                "seed {seed} levels {:?}: {a:?}",
                cfg.shrink_factors
            );
            assert!(
                tr.iter().all(|&x| x < 1.0),
                "seed {seed} levels {:?}: {tr:?}",
                cfg.shrink_factors
            );
            sink.push(*r.iterations_per_level().last().unwrap());
        }
    }
    let median = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v[v.len() / 2]
    };
    let (m, s) = (median(&mut fine_multi), median(&mut fine_single));
    eprintln!("finest-level iterations: multi {fine_multi:?} single {fine_single:?}");
    assert!(m <= s, "multi-level median {m} > single-level median {s}");
}

#[test]
fn lesions_follow_the_registration() {
    let (v, truth) = generate_phantom(&phantom(4)).unwrap();
    let t = RigidTransform::new([0.05, -0.03, 0.08], [6.0, 4.0, -5.0], Point3::ORIGIN);
    let (moving, moved) = transform_phantom(&v, &truth, &t, &v).unwrap();
    let r = register(&v, &moving, &RegistrationConfig::default()).unwrap();
    let mapped = map_lesion_centroids(&r, moved.patient("P1"));
    for (m, f) in mapped.iter().zip(truth.patient("P1")) {
        assert_eq!(m.source_label, f.source_label);
        assert!(
            m.centroid.distance(f.centroid) < 1.5,
            "{} off by {}",
            m.source_label,
            m.centroid.distance(f.centroid)
        );
        let back = r.transform.apply(m.centroid);
        let orig = moved
            .patient("P1")
            .iter()
            .find(|a| a.source_label == m.source_label)
            .unwrap();
        assert!(back.distance(orig.centroid) < 1e-9);
    }
}
