use super::LossValue;
use crate::mesh::TriSurface;
use crate::spatial::PointIndex;
use crate::{Error, Point3, Result};

const MIN_CROSS: f64 = 1e-14;

/// Normal consistency between a predicted polygon mesh and a target surface.
///
/// For each predicted vertex `p` with nearest target vertex `g*`, every
/// incident face contributes `‖n̂ - n_{g*}‖²`, where `n̂` is the normalized
/// cross product `(p₁ - p) × (p₂ - p)` of the face edges leaving `p` (next and
/// previous corner). A vertex's term is the mean over its incident faces; the
/// loss is the sum over vertices. Faces with a vanishing cross product are
/// skipped and counted.
///
/// `target_vertices` must index the vertices of `target`.
pub fn loss_normal<F: AsRef<[usize]>>(
    pred: &[Point3],
    faces: &[F],
    target: &TriSurface,
    target_vertices: &PointIndex,
) -> Result<LossValue> {
    let normals = target
        .vertex_normals
        .as_ref()
        .ok_or_else(|| Error::Config("normal loss needs target vertex normals".into()))?;
    if target_vertices.points().len() != normals.len() {
        return Err(Error::Shape {
            expected: normals.len(),
            actual: target_vertices.points().len(),
        });
    }
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); pred.len()];
    for (fi, f) in faces.iter().enumerate() {
        for (k, &v) in f.as_ref().iter().enumerate() {
            if v >= pred.len() {
                return Err(Error::Shape {
                    expected: pred.len(),
                    actual: v + 1,
                });
            }
            incident[v].push((fi, k));
        }
    }

    let mut out = LossValue::zero(pred.len());
    for (p, around) in incident.iter().enumerate() {
        if around.is_empty() {
            continue;
        }
        let (g, _) = target_vertices.nearest(&pred[p])?;
        let target_normal = normals[g];
        let mut terms = Vec::with_capacity(around.len());
        for &(fi, k) in around {
            let f = faces[fi].as_ref();
            let next = f[(k + 1) % f.len()];
            let prev = f[(k + f.len() - 1) % f.len()];
            let a = pred[next] - pred[p];
            let b = pred[prev] - pred[p];
            let c = a.cross(&b);
            let len = c.norm();
            if len <= MIN_CROSS {
                out.skipped += 1;
                continue;
            }
            let n = c / len;
            let w = (n - target_normal) * 2.0;
            let gc = (w - n * n.dot(&w)) / len;
            terms.push(((n - target_normal).norm_squared(), next, prev, b.cross(&gc), gc.cross(&a)));
        }
        if terms.is_empty() {
            continue;
        }
        let share = 1.0 / terms.len() as f64;
        for (value, next, prev, ga, gb) in terms {
            out.value += value * share;
            out.gradient[next] += ga * share;
            out.gradient[prev] += gb * share;
            out.gradient[p] -= (ga + gb) * share;
        }
    }
    Ok(out)
}
