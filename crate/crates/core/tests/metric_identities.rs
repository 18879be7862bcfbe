use nalgebra::{Rotation3, Unit, Vector3};
use quadfit::metrics::{
    appd, chamfer_distance, chamfer_metric, hausdorff, hausdorff_distance, MetricsReport, Region,
};
use quadfit::synth::{gen_target, gen_template, TemplateSpec, WarpSpec};
use quadfit::{Point3, QuadMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
        .collect()
}

fn brute_one_sided(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    a.iter()
        .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .collect()
}

fn warped_pair() -> (QuadMesh, QuadMesh) {
    let template = gen_template(&TemplateSpec::default()).unwrap();
    let case = gen_target(&template, &WarpSpec::default(), 0).unwrap();
    (template, case.truth)
}

#[test]
fn point_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.gen_range(1..500);
        let m = rng.gen_range(1..500);
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, m));
        let ab = brute_one_sided(&a, &b);
        let ba = brute_one_sided(&b, &a);
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        let cd = 0.5 * (mean(&ab) + mean(&ba));
        let hd = ab.iter().chain(&ba).fold(0.0f64, |x, &y| x.max(y));
        assert!((chamfer_distance(&a, &b).unwrap() - cd).abs() <= 1e-12);
        assert_eq!(hausdorff_distance(&a, &b).unwrap(), hd);
    }
}

#[test]
fn symmetry() {
    let (pred, truth) = warped_pair();
    for region in Region::ALL {
        let ab = chamfer_metric(&pred, &truth, region).unwrap();
        let ba = chamfer_metric(&truth, &pred, region).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        assert_eq!(hausdorff(&pred, &truth, region).unwrap(), hausdorff(&truth, &pred, region).unwrap());
    }
}

#[test]
fn identical_inputs_score_zero() {
    let (_, truth) = warped_pair();
    let report = MetricsReport::compute(&truth, &truth).unwrap();
    for m in report.regions.values() {
        assert_eq!(m.values(), [0.0; 3]);
    }
    assert!(report.landmarks.values().all(|&e| e == 0.0));
}

#[test]
fn rigid_motion_equivariance() {
    let (pred, truth) = warped_pair();
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, -2.0, 0.5)), 0.7);
    let shift = Vector3::new(3.0, -7.0, 12.0);
    let mv = |m: &QuadMesh| m.with_vertices(m.vertices.iter().map(|p| rot * p + shift).collect());
    let (pm, tm) = (mv(&pred), mv(&truth));
    for region in Region::ALL {
        for f in [appd, chamfer_metric, hausdorff] {
            assert!((f(&pred, &truth, region).unwrap() - f(&pm, &tm, region).unwrap()).abs() <= 1e-9);
        }
    }
}

#[test]
fn appd_refuses_mismatched_meshes() {
    let (pred, _) = warped_pair();
    let other = quadfit::synth::planar_grid(3, 3, 1.0);
    assert!(appd(&pred, &other, Region::Whole).is_err());
}
