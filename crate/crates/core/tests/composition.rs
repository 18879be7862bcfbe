use quadfit::losses::{
    compose_additive, compose_multiplicative, finite_difference_gradient, relative_inf_error,
    LossValue, PRODUCT_FLOOR,
};
use quadfit::{Point3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth positive test terms `c_k + Σ_i w_ki ‖x_i - a_ki‖²`.
struct Term {
    c: f64,
    w: Vec<f64>,
    a: Vec<Point3>,
}

impl Term {
    fn eval(&self, x: &[Point3]) -> LossValue {
        let mut v = LossValue::zero(x.len());
        v.value = self.c;
        for (i, p) in x.iter().enumerate() {
            let d = p - self.a[i];
            v.value += self.w[i] * d.norm_squared();
            v.gradient[i] = d * (2.0 * self.w[i]);
        }
        v
    }
}

fn terms(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Term> {
    (0..k)
        .map(|_| Term {
            c: rng.gen_range(0.1..1.0),
            w: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            a: (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect(),
        })
        .collect()
}

fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect()
}

#[test]
fn additive_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(2..12);
        let ts = terms(&mut rng, n, 4);
        let lambda: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
        let x = random_x(&mut rng, n);
        let eval = |x: &[Point3]| {
            let vals: Vec<LossValue> = ts.iter().map(|t| t.eval(x)).collect();
            compose_additive(&vals, &lambda).unwrap()
        };
        let direct: f64 = ts.iter().zip(&lambda).map(|(t, l)| l * t.eval(&x).value).sum();
        let got = eval(&x);
        assert!((got.value - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        let fd = finite_difference_gradient(|x| eval(x).value, &x, 1e-5);
        assert!(relative_inf_error(&got.gradient, &fd) <= 1e-5);
    }
}

#[test]
fn multiplicative_matches_direct_product_and_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20 {
        let n = rng.gen_range(2..12);
        let ts = terms(&mut rng, n, 4);
        let mut lambda: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
        if case % 2 == 1 {
            lambda[case % 4] = 1e-30;
        }
        let x = random_x(&mut rng, n);
        let eval = |x: &[Point3]| {
            let vals: Vec<LossValue> = ts.iter().map(|t| t.eval(x)).collect();
            compose_multiplicative(&vals, &lambda).unwrap()
        };
        let direct: f64 = ts
            .iter()
            .zip(&lambda)
            .map(|(t, l)| (l * t.eval(&x).value).max(PRODUCT_FLOOR))
            .product();
        let got = eval(&x);
        assert!((got.value - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        let fd = finite_difference_gradient(|x| eval(x).value, &x, 1e-5);
        assert!(relative_inf_error(&got.gradient, &fd) <= 1e-5, "case {case}");
    }
}

#[test]
fn all_floored_product_is_constant() {
    let x = vec![Point3::origin(); 3];
    let t = LossValue {
        value: 1.0,
        gradient: vec![Vec3::new(1.0, 2.0, 3.0); 3],
        skipped: 0,
    };
    let out = compose_multiplicative(&[t.clone(), t], &[0.0, 0.0]).unwrap();
    assert_eq!(out.value, PRODUCT_FLOOR * PRODUCT_FLOOR);
    assert!(out.gradient.iter().all(|g| *g == Vec3::zeros()));
    assert_eq!(out.gradient.len(), x.len());
}
