//! Per-quad shape penalties, averaged over quads.

use nalgebra::{Matrix3, SymmetricEigen};

use super::{check_same_len, LossValue};
use crate::mesh::QuadMesh;
use crate::{Error, Point3, Result, Vec3};

const MIN_EDGE: f64 = 1e-14;
/// Relative eigenvalue gap below which a quad's plane is undefined.
const COLLINEAR: f64 = 1e-12;

fn corners(pred: &[Point3], q: &[usize; 4]) -> [Point3; 4] {
    q.map(|v| pred[v])
}

/// Least-squares plane of four points: centroid, unit normal, residual sum.
/// `None` when the corners are collinear.
pub(crate) fn fit_plane(c: &[Point3; 4]) -> Option<(Vec3, Vec3, f64)> {
    let centroid = c.iter().map(|p| p.coords).sum::<Vec3>() / 4.0;
    let mut cov = Matrix3::zeros();
    for p in c {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if hi <= 0.0 || mid - lo <= COLLINEAR * hi {
        return None;
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    Some((centroid, normal, lo.max(0.0)))
}

/// Sum of squared corner distances to each quad's least-squares plane,
/// averaged over quads. Collinear quads are skipped and counted.
pub fn loss_flatness(mesh: &QuadMesh, pred: &[Point3]) -> Result<LossValue> {
    check_same_len(mesh.vertices.len(), pred.len())?;
    let mut out = LossValue::zero(pred.len());
    if mesh.quads.is_empty() {
        return Ok(out);
    }
    let nq = mesh.quads.len() as f64;
    for q in &mesh.quads {
        let c = corners(pred, q);
        let Some((centroid, normal, _)) = fit_plane(&c) else {
            out.skipped += 1;
            continue;
        };
        for (p, &v) in c.iter().zip(q) {
            let h = (p.coords - centroid).dot(&normal);
            out.value += h * h / nq;
            out.gradient[v] += normal * (2.0 * h / nq);
        }
    }
    Ok(out)
}

fn side_lengths(c: &[Point3; 4]) -> Result<[f64; 4]> {
    let s = [0, 1, 2, 3].map(|k| (c[(k + 1) % 4] - c[k]).norm());
    if s.iter().any(|&x| x <= MIN_EDGE) {
        return Err(Error::Geometry("zero-length quad edge".into()));
    }
    Ok(s)
}

/// Aspect ratio `max/min` of the two opposite-side mean lengths.
pub(crate) fn aspect_ratio(c: &[Point3; 4]) -> Result<f64> {
    let s = side_lengths(c)?;
    let (a, b) = (0.5 * (s[0] + s[2]), 0.5 * (s[1] + s[3]));
    Ok(a.max(b) / a.min(b))
}

/// `(r - 1)²` per quad, `r` the aspect ratio; averaged over quads.
pub fn loss_aspect(mesh: &QuadMesh, pred: &[Point3]) -> Result<LossValue> {
    check_same_len(mesh.vertices.len(), pred.len())?;
    let mut out = LossValue::zero(pred.len());
    if mesh.quads.is_empty() {
        return Ok(out);
    }
    let nq = mesh.quads.len() as f64;
    for q in &mesh.quads {
        let c = corners(pred, q);
        let s = side_lengths(&c)?;
        let (a, b) = (0.5 * (s[0] + s[2]), 0.5 * (s[1] + s[3]));
        let (r, dr_da, dr_db) = if a >= b { (a / b, 1.0 / b, -a / (b * b)) } else { (b / a, -b / (a * a), 1.0 / a) };
        out.value += (r - 1.0).powi(2) / nq;
        let scale = 2.0 * (r - 1.0) / nq;
        for k in 0..4 {
            // sides 0 and 2 make up a, sides 1 and 3 make up b
            let dr = if k % 2 == 0 { dr_da } else { dr_db } * 0.5;
            let (i, j) = (q[k], q[(k + 1) % 4]);
            let u = (c[(k + 1) % 4] - c[k]) / s[k];
            out.gradient[j] += u * (scale * dr);
            out.gradient[i] -= u * (scale * dr);
        }
    }
    Ok(out)
}

/// Cosines of the four corner angles.
pub(crate) fn corner_cosines(c: &[Point3; 4]) -> Result<[f64; 4]> {
    side_lengths(c)?;
    Ok([0, 1, 2, 3].map(|k| {
        let e1 = c[(k + 1) % 4] - c[k];
        let e2 = c[(k + 3) % 4] - c[k];
        e1.dot(&e2) / (e1.norm() * e2.norm())
    }))
}

/// `Σ cos²θ` over the corners of each quad, averaged over quads.
pub fn loss_corner(mesh: &QuadMesh, pred: &[Point3]) -> Result<LossValue> {
    check_same_len(mesh.vertices.len(), pred.len())?;
    let mut out = LossValue::zero(pred.len());
    if mesh.quads.is_empty() {
        return Ok(out);
    }
    let nq = mesh.quads.len() as f64;
    for q in &mesh.quads {
        let c = corners(pred, q);
        side_lengths(&c)?;
        for k in 0..4 {
            let (next, prev) = ((k + 1) % 4, (k + 3) % 4);
            let e1 = c[next] - c[k];
            let e2 = c[prev] - c[k];
            let (l1, l2) = (e1.norm(), e2.norm());
            let cos = e1.dot(&e2) / (l1 * l2);
            out.value += cos * cos / nq;
            let scale = 2.0 * cos / nq;
            let g1 = (e2 / (l1 * l2) - e1 * (cos / (l1 * l1))) * scale;
            let g2 = (e1 / (l1 * l2) - e2 * (cos / (l2 * l2))) * scale;
            out.gradient[q[next]] += g1;
            out.gradient[q[prev]] += g2;
            out.gradient[q[k]] -= g1 + g2;
        }
    }
    Ok(out)
}
