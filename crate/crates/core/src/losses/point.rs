use rayon::prelude::*;

use super::{check_same_len, LossValue};
use crate::mesh::TriSurface;
use crate::spatial::{PointIndex, SurfaceIndex};
use crate::{Error, Point3, Result, Vec3};

/// Mean squared distance between corresponding vertices.
pub fn loss_geom(pred: &[Point3], truth: &[Point3]) -> Result<LossValue> {
    check_same_len(truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Shape { expected: 1, actual: 0 });
    }
    let n = pred.len() as f64;
    let mut out = LossValue::zero(pred.len());
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        let d = p - t;
        out.value += d.norm_squared();
        out.gradient[i] = d * (2.0 / n);
    }
    out.value /= n;
    Ok(out)
}

/// Symmetric squared-distance Chamfer loss between point sets. The gradient
/// flows to `pred` only.
pub fn loss_chamfer(pred: &[Point3], target: &[Point3]) -> Result<LossValue> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::Query("Chamfer loss needs two non-empty point sets".into()));
    }
    let target_index = PointIndex::build(target);
    let pred_index = PointIndex::build(pred);
    let np = pred.len() as f64;
    let ng = target.len() as f64;
    let mut out = LossValue::zero(pred.len());

    let forward: Vec<(usize, f64)> = pred
        .par_iter()
        .map(|p| target_index.nearest_squared(p))
        .collect::<Result<_>>()?;
    for (i, (j, d2)) in forward.into_iter().enumerate() {
        out.value += d2 / np;
        out.gradient[i] += (pred[i] - target[j]) * (2.0 / np);
    }
    let backward: Vec<(usize, f64)> = target
        .par_iter()
        .map(|g| pred_index.nearest_squared(g))
        .collect::<Result<_>>()?;
    for (g, (i, d2)) in target.iter().zip(backward) {
        out.value += d2 / ng;
        out.gradient[i] += (pred[i] - g) * (2.0 / ng);
    }
    Ok(out)
}

/// Squared-distance Chamfer loss between a quad mesh and a target surface.
///
/// The forward term averages the squared distance from each predicted vertex
/// to the target surface. The backward term averages the squared distance
/// from fixed target samples to the predicted surface, represented by a
/// bilinear subdivision of every quad into `2^subdivision` × `2^subdivision`
/// pairs of triangles. Both distances are point-to-surface, so a mesh lying on
/// the target scores exactly zero whatever the sample placement.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceChamfer<'a> {
    pub target: &'a SurfaceIndex,
    pub samples: &'a [Point3],
    pub quads: &'a [[usize; 4]],
    pub subdivision: u32,
    pub bidirectional: bool,
}

impl SurfaceChamfer<'_> {
    pub fn evaluate(&self, pred: &[Point3]) -> Result<LossValue> {
        let np = pred.len() as f64;
        let mut out = LossValue::zero(pred.len());
        let forward: Vec<Point3> = pred
            .par_iter()
            .map(|p| self.target.nearest(p).map(|r| r.point))
            .collect::<Result<_>>()?;
        for (i, q) in forward.into_iter().enumerate() {
            let d = pred[i] - q;
            out.value += d.norm_squared() / np;
            out.gradient[i] += d * (2.0 / np);
        }
        if !self.bidirectional || self.samples.is_empty() {
            return Ok(out);
        }

        let patch = BilinearPatches::new(self.quads, self.subdivision);
        let surface = patch.surface(pred);
        let index = SurfaceIndex::build(surface);
        let ns = self.samples.len() as f64;
        let backward: Vec<_> = self
            .samples
            .par_iter()
            .map(|s| index.nearest(s))
            .collect::<Result<_>>()?;
        for (s, r) in self.samples.iter().zip(backward) {
            let d = r.point - s;
            out.value += d.norm_squared() / ns;
            let tri = patch.triangles[r.triangle];
            for (corner, &b) in tri.iter().zip(&r.barycentric) {
                let (quad, weights) = patch.stencil(*corner);
                for (&v, &w) in self.quads[quad].iter().zip(&weights) {
                    out.gradient[v] += d * (2.0 / ns * b * w);
                }
            }
        }
        Ok(out)
    }
}

/// Triangulated bilinear refinement of every quad, `2^level` per side.
pub(crate) fn quad_surface(pred: &[Point3], quads: &[[usize; 4]], level: u32) -> TriSurface {
    BilinearPatches::new(quads, level).surface(pred)
}

/// Per-quad bilinear refinement; refined points are not shared between quads.
struct BilinearPatches<'a> {
    quads: &'a [[usize; 4]],
    k: usize,
    triangles: Vec<[usize; 3]>,
}

impl<'a> BilinearPatches<'a> {
    fn new(quads: &'a [[usize; 4]], level: u32) -> Self {
        let k = 1usize << level;
        let per = (k + 1) * (k + 1);
        let mut triangles = Vec::with_capacity(quads.len() * 2 * k * k);
        for q in 0..quads.len() {
            let id = |i: usize, j: usize| q * per + j * (k + 1) + i;
            for j in 0..k {
                for i in 0..k {
                    let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
            }
        }
        BilinearPatches { quads, k, triangles }
    }

    /// Owning quad and corner weights of a refined point.
    fn stencil(&self, point: usize) -> (usize, [f64; 4]) {
        let per = (self.k + 1) * (self.k + 1);
        let (q, r) = (point / per, point % per);
        let u = (r % (self.k + 1)) as f64 / self.k as f64;
        let v = (r / (self.k + 1)) as f64 / self.k as f64;
        (q, [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v])
    }

    fn surface(&self, pred: &[Point3]) -> TriSurface {
        let per = (self.k + 1) * (self.k + 1);
        let vertices = (0..self.quads.len() * per)
            .map(|p| {
                let (q, w) = self.stencil(p);
                let c = self.quads[q].iter().zip(&w).fold(Vec3::zeros(), |acc, (&v, &w)| acc + pred[v].coords * w);
                Point3::from(c)
            })
            .collect();
        TriSurface {
            vertices,
            triangles: self.triangles.clone(),
            vertex_normals: None,
        }
    }
}
