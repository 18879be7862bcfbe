//! Mesh losses with analytic gradients.
//!
//! Every loss returns a [`LossValue`]: a scalar and its gradient with respect
//! to each predicted vertex. [`finite_difference_gradient`] provides the
//! central-difference oracle used to check them.

pub mod gradcheck;
mod normal;
mod point;
mod quad;
mod smooth;

pub use normal::loss_normal;
pub use point::{loss_chamfer, loss_geom, SurfaceChamfer};
pub use quad::{loss_aspect, loss_corner, loss_flatness};

pub(crate) use point::quad_surface;
pub(crate) use quad::{aspect_ratio, corner_cosines, fit_plane};
pub use smooth::{loss_edge, loss_laplacian, loss_mc, Mu};

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result, Vec3};

/// Floor applied to each factor of a multiplicative composition.
pub const PRODUCT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Vec<Vec3>,
    /// Terms skipped because they were undefined (zero-area normals,
    /// collinear quads).
    pub skipped: usize,
}

impl LossValue {
    pub fn zero(n: usize) -> LossValue {
        LossValue {
            value: 0.0,
            gradient: vec![Vec3::zeros(); n],
            skipped: 0,
        }
    }

    pub fn scaled(mut self, s: f64) -> LossValue {
        self.value *= s;
        for g in &mut self.gradient {
            *g *= s;
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Regularizer weights for the fitting stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Alpha {
    pub mc: f64,
    pub flatness: f64,
    pub aspect: f64,
    pub corner: f64,
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha {
            mc: 0.01,
            flatness: 0.005,
            aspect: 0.001,
            corner: 0.001,
        }
    }
}

impl Alpha {
    pub fn zero() -> Alpha {
        Alpha {
            mc: 0.0,
            flatness: 0.0,
            aspect: 0.0,
            corner: 0.0,
        }
    }

    pub fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("mc", self.mc),
            ("flatness", self.flatness),
            ("aspect", self.aspect),
            ("corner", self.corner),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: Alpha,
    /// Chamfer, normal, edge and Laplacian weights of the composite loss.
    pub lambda: [f64; 4],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: Alpha::default(),
            lambda: [1.0; 4],
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = self.alpha.values().map(|(_, w)| w).into_iter().chain(self.lambda);
        for w in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("loss weight {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn check_terms(terms: &[LossValue], lambda: &[f64]) -> Result<usize> {
    if terms.len() != lambda.len() {
        return Err(Error::Shape {
            expected: terms.len(),
            actual: lambda.len(),
        });
    }
    let n = terms.first().map_or(0, |t| t.gradient.len());
    for t in terms {
        if t.gradient.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: t.gradient.len(),
            });
        }
    }
    Ok(n)
}

/// `Σ λ_k L_k`.
pub fn compose_additive(terms: &[LossValue], lambda: &[f64]) -> Result<LossValue> {
    let n = check_terms(terms, lambda)?;
    let mut out = LossValue::zero(n);
    for (t, &w) in terms.iter().zip(lambda) {
        out.value += w * t.value;
        for (o, g) in out.gradient.iter_mut().zip(&t.gradient) {
            *o += g * w;
        }
        out.skipped += t.skipped;
    }
    Ok(out)
}

/// `Π max(λ_k L_k, ε)`. A floored factor is constant and contributes no
/// gradient.
pub fn compose_multiplicative(terms: &[LossValue], lambda: &[f64]) -> Result<LossValue> {
    let n = check_terms(terms, lambda)?;
    let factors: Vec<f64> = terms
        .iter()
        .zip(lambda)
        .map(|(t, &w)| (w * t.value).max(PRODUCT_FLOOR))
        .collect();
    let mut out = LossValue::zero(n);
    out.value = factors.iter().product();
    for (k, (t, &w)) in terms.iter().zip(lambda).enumerate() {
        out.skipped += t.skipped;
        if w * t.value <= PRODUCT_FLOOR {
            continue;
        }
        // product of the other factors, without dividing
        let others: f64 = factors
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, f)| f)
            .product();
        for (o, g) in out.gradient.iter_mut().zip(&t.gradient) {
            *o += g * (others * w);
        }
    }
    Ok(out)
}

/// Central differences `(f(v + h e) - f(v - h e)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(mut f: F, pred: &[Point3], h: f64) -> Vec<Vec3>
where
    F: FnMut(&[Point3]) -> f64,
{
    let mut work = pred.to_vec();
    let mut grad = vec![Vec3::zeros(); pred.len()];
    for i in 0..pred.len() {
        for k in 0..3 {
            let x = pred[i][k];
            work[i][k] = x + h;
            let plus = f(&work);
            work[i][k] = x - h;
            let minus = f(&work);
            work[i][k] = x;
            grad[i][k] = (plus - minus) / (2.0 * h);
        }
    }
    grad
}

/// `‖a - b‖∞ / ‖b‖∞`, or the absolute error when `b` is zero.
pub fn relative_inf_error(analytic: &[Vec3], reference: &[Vec3]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let scale = reference.iter().map(|b| b.amax()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub(crate) fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape { expected: a, actual: b });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(value: f64, g: f64) -> LossValue {
        LossValue {
            value,
            gradient: vec![Vec3::new(g, -g, 2.0 * g); 2],
            skipped: 0,
        }
    }

    #[test]
    fn additive_is_linear() {
        let terms = [term(1.5, 1.0), term(2.0, -3.0)];
        let out = compose_additive(&terms, &[2.0, 3.0]).unwrap();
        assert_eq!(out.value, 9.0);
        assert_eq!(out.gradient[0], Vec3::new(-7.0, 7.0, -14.0));
        let single = compose_additive(&terms[..1], &[1.0]).unwrap();
        assert_eq!(single, terms[0]);
    }

    #[test]
    fn multiplicative_product_rule() {
        let g1 = term(2.0, 1.0);
        let g2 = term(3.0, 5.0);
        let out = compose_multiplicative(&[g1.clone(), g2.clone()], &[1.0, 1.0]).unwrap();
        assert_eq!(out.value, 6.0);
        assert_eq!(out.gradient[0], g1.gradient[0] * 3.0 + g2.gradient[0] * 2.0);
    }

    #[test]
    fn multiplicative_floor() {
        let out = compose_multiplicative(&[term(0.0, 1.0), term(3.0, 1.0)], &[1.0, 2.0]).unwrap();
        assert_eq!(out.value, PRODUCT_FLOOR * 6.0);
        assert_eq!(out.gradient[0], Vec3::new(2.0, -2.0, 4.0) * PRODUCT_FLOOR);
    }

    #[test]
    fn mismatched_lengths() {
        let mut b = term(1.0, 1.0);
        b.gradient.pop();
        assert!(compose_additive(&[term(1.0, 1.0), b], &[1.0, 1.0]).is_err());
        assert!(compose_additive(&[term(1.0, 1.0)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn fd_of_quadratic() {
        let pred = [Point3::new(1.0, 0.0, 0.0)];
        let g = finite_difference_gradient(|v| v[0].coords.norm_squared(), &pred, 1e-5);
        assert!((g[0] - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn negative_weight_rejected() {
        let mut w = LossWeights::default();
        w.alpha.corner = -1.0;
        assert!(w.check().is_err());
        w.alpha.corner = 0.0;
        w.lambda[2] = f64::NAN;
        assert!(w.check().is_err());
    }
}
