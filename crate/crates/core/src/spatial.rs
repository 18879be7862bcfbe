//! Closest-point queries: point to triangle, point to triangulated surface
//! (AABB tree), and point to point set (k-d tree).
//!
//! Distances are compared squared; ties go to the smallest triangle or point
//! index so results do not depend on traversal order.

use crate::mesh::{TriSurface, DEGENERATE_AREA};
use crate::{Error, Point3, Result, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    pub point: Point3,
    pub distance: f64,
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

/// Closest point on the closed triangle `abc` to `q`.
///
/// The returned `triangle` index is 0.
pub fn closest_point_on_triangle(q: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Result<ClosestPointResult> {
    if 0.5 * (b - a).cross(&(c - a)).norm() <= DEGENERATE_AREA {
        return Err(Error::Geometry("degenerate triangle".into()));
    }
    let (point, barycentric) = closest_on_triangle(q, a, b, c);
    Ok(ClosestPointResult {
        point,
        distance: (q - point).norm(),
        triangle: 0,
        barycentric,
    })
}

/// Region-based closest point (Ericson, Real-Time Collision Detection 5.1.5).
fn closest_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> (Point3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [va * denom, v, w])
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let excess = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d += excess * excess;
        }
        d
    }

    fn longest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Children for inner nodes; `start..end` into the item order for leaves.
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Inner(usize, usize),
    Leaf(usize, usize),
}

/// Recursively splits `items` at the median of their keys along the longest
/// axis of the node box, appending nodes and returning the root id.
fn build_tree(
    items: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
    bounds_of: &dyn Fn(usize, &mut Aabb),
    key: &dyn Fn(usize) -> Vec3,
) -> usize {
    let mut bounds = Aabb::empty();
    for &i in items.iter() {
        bounds_of(i, &mut bounds);
    }
    let id = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf(offset, offset + items.len()),
    });
    if items.len() <= LEAF_SIZE {
        return id;
    }
    let axis = bounds.longest_axis();
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |&x, &y| {
        key(x)[axis].total_cmp(&key(y)[axis]).then(x.cmp(&y))
    });
    let (lo, hi) = items.split_at_mut(mid);
    let left = build_tree(lo, offset, nodes, bounds_of, key);
    let right = build_tree(hi, offset + mid, nodes, bounds_of, key);
    nodes[id].kind = NodeKind::Inner(left, right);
    id
}

/// Bounding-volume hierarchy over the triangles of a [`TriSurface`].
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    surface: TriSurface,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl SurfaceIndex {
    pub fn build(surface: TriSurface) -> SurfaceIndex {
        let mut order: Vec<usize> = (0..surface.triangles.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let centroids: Vec<Vec3> = surface
                .triangles
                .iter()
                .map(|t| (surface.vertices[t[0]].coords + surface.vertices[t[1]].coords + surface.vertices[t[2]].coords) / 3.0)
                .collect();
            let bounds_of = |i: usize, b: &mut Aabb| {
                for &v in &surface.triangles[i] {
                    b.grow(&surface.vertices[v].coords);
                }
            };
            build_tree(&mut order, 0, &mut nodes, &bounds_of, &|i| centroids[i]);
        }
        SurfaceIndex { surface, nodes, order }
    }

    pub fn surface(&self) -> &TriSurface {
        &self.surface
    }

    /// Closest point on the surface; ties go to the smallest triangle index.
    pub fn nearest(&self, q: &Point3) -> Result<ClosestPointResult> {
        if self.nodes.is_empty() {
            return Err(Error::Query("surface has no triangles".into()));
        }
        let mut best = (f64::INFINITY, usize::MAX, Point3::origin(), [0.0; 3]);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((id, box_d2)) = stack.pop() {
            if box_d2 > best.0 {
                continue;
            }
            match self.nodes[id].kind {
                NodeKind::Leaf(start, end) => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = self.surface.triangles[t].map(|v| self.surface.vertices[v]);
                        let (point, bary) = closest_on_triangle(q, &a, &b, &c);
                        let d2 = (q - point).norm_squared();
                        if d2 < best.0 || (d2 == best.0 && t < best.1) {
                            best = (d2, t, point, bary);
                        }
                    }
                }
                NodeKind::Inner(l, r) => {
                    let dl = self.nodes[l].bounds.distance_squared(&q.coords);
                    let dr = self.nodes[r].bounds.distance_squared(&q.coords);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push((r, dr));
                        stack.push((l, dl));
                    } else {
                        stack.push((l, dl));
                        stack.push((r, dr));
                    }
                }
            }
        }
        Ok(ClosestPointResult {
            point: best.2,
            distance: best.0.sqrt(),
            triangle: best.1,
            barycentric: best.3,
        })
    }
}

pub fn nearest_on_surface(q: &Point3, index: &SurfaceIndex) -> Result<ClosestPointResult> {
    index.nearest(q)
}

/// Linear scan; ties go to the smallest index.
pub fn nearest_vertex(q: &Point3, points: &[Point3]) -> Result<(usize, f64)> {
    if points.is_empty() {
        return Err(Error::Query("empty point set".into()));
    }
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// k-d tree over a point set, answering the same queries as
/// [`nearest_vertex`] with identical tie-breaking.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl PointIndex {
    pub fn build(points: &[Point3]) -> PointIndex {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_tree(
                &mut order,
                0,
                &mut nodes,
                &|i, b| b.grow(&points[i].coords),
                &|i| points[i].coords,
            );
        }
        PointIndex {
            points: points.to_vec(),
            nodes,
            order,
        }
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn nearest(&self, q: &Point3) -> Result<(usize, f64)> {
        self.nearest_squared(q).map(|(i, d2)| (i, d2.sqrt()))
    }

    pub fn nearest_squared(&self, q: &Point3) -> Result<(usize, f64)> {
        if self.nodes.is_empty() {
            return Err(Error::Query("empty point set".into()));
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((id, box_d2)) = stack.pop() {
            if box_d2 > best.1 {
                continue;
            }
            match self.nodes[id].kind {
                NodeKind::Leaf(start, end) => {
                    for &i in &self.order[start..end] {
                        let d2 = (self.points[i] - q).norm_squared();
                        if d2 < best.1 || (d2 == best.1 && i < best.0) {
                            best = (i, d2);
                        }
                    }
                }
                NodeKind::Inner(l, r) => {
                    let dl = self.nodes[l].bounds.distance_squared(&q.coords);
                    let dr = self.nodes[r].bounds.distance_squared(&q.coords);
                    if dl <= dr {
                        stack.push((r, dr));
                        stack.push((l, dl));
                    } else {
                        stack.push((l, dl));
                        stack.push((r, dr));
                    }
                }
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Point3 {
        p(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
    }

    #[test]
    fn perpendicular_foot_inside() {
        let r = closest_point_on_triangle(&p(0.0, 0.0, 1.0), &p(0.0, 0.0, 0.0), &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(r.point, p(0.0, 0.0, 0.0));
        assert_eq!(r.distance, 1.0);
    }

    #[test]
    fn nearest_vertex_region() {
        let r = closest_point_on_triangle(&p(2.0, 0.0, 0.0), &p(0.0, 0.0, 0.0), &p(1.0, 0.0, 0.0), &p(0.0, 1.0, 0.0)).unwrap();
        assert_eq!(r.point, p(1.0, 0.0, 0.0));
        assert_eq!(r.distance, 1.0);
        assert_eq!(r.barycentric, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let a = p(0.0, 0.0, 0.0);
        assert!(closest_point_on_triangle(&a, &a, &p(1.0, 0.0, 0.0), &p(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn barycentric_reconstructs_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (a, b, c) = (random_point(&mut rng, 1.0), random_point(&mut rng, 1.0), random_point(&mut rng, 1.0));
            let q = random_point(&mut rng, 2.0);
            let Ok(r) = closest_point_on_triangle(&q, &a, &b, &c) else { continue };
            let [u, v, w] = r.barycentric;
            assert!(u >= 0.0 && v >= 0.0 && w >= 0.0);
            assert!((u + v + w - 1.0).abs() < 1e-9);
            let rebuilt = a.coords * u + b.coords * v + c.coords * w;
            assert!((rebuilt - r.point.coords).norm() < 1e-9);
            assert!((r.distance - (q - r.point).norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn point_index_ties_prefer_smallest_index() {
        let points = vec![p(1.0, 0.0, 0.0), p(-1.0, 0.0, 0.0), p(1.0, 0.0, 0.0)];
        let index = PointIndex::build(&points);
        assert_eq!(index.nearest(&p(0.0, 0.0, 0.0)).unwrap().0, 0);
        assert_eq!(nearest_vertex(&p(0.0, 0.0, 0.0), &points).unwrap().0, 0);
        assert_eq!(index.nearest(&p(2.0, 0.0, 0.0)).unwrap().0, 0);
    }

    #[test]
    fn nearest_vertex_examples() {
        let points = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)];
        let (i, d) = nearest_vertex(&p(0.6, 0.0, 0.0), &points).unwrap();
        assert_eq!(i, 1);
        assert!((d - 0.4).abs() < 1e-15);
        assert!(nearest_vertex(&p(0.0, 0.0, 0.0), &[]).is_err());
    }

    #[test]
    fn empty_surface_rejected() {
        let surface = TriSurface::new(vec![], vec![]).unwrap();
        let index = SurfaceIndex::build(surface);
        assert!(index.nearest(&p(0.0, 0.0, 0.0)).is_err());
    }
}
