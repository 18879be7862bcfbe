use serde::{Deserialize, Serialize};

use crate::mesh::QuadMesh;
use crate::{Error, Point3, Result};

/// Target polyline for one named template boundary loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConstraint {
    pub name: String,
    pub closed: bool,
    pub points: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConstraintSet {
    pub constraints: Vec<BoundaryConstraint>,
}

impl BoundaryConstraintSet {
    /// Every constraint names an existing loop of matching closedness and
    /// has at least two finite points.
    pub fn check(&self, template: &QuadMesh) -> Result<()> {
        for c in &self.constraints {
            let lp = template
                .boundary_loop(&c.name)
                .ok_or_else(|| Error::Correspondence(format!("no boundary loop named {:?}", c.name)))?;
            if lp.closed != c.closed {
                return Err(Error::Correspondence(format!("loop {:?}: open/closed mismatch", c.name)));
            }
            if c.points.len() < 2 || lp.vertices.len() < 2 {
                return Err(Error::Correspondence(format!("loop {:?}: fewer than two points", c.name)));
            }
            if c.points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
                return Err(Error::Correspondence(format!("loop {:?}: non-finite point", c.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BoundaryConstraint> {
        self.constraints.iter().find(|c| c.name == name)
    }
}

/// Polyline parameterized by normalized arc length.
struct ArcPolyline {
    points: Vec<Point3>,
    /// Normalized cumulative length at each point; a closed polyline has one
    /// extra entry (1.0) for the closing segment.
    params: Vec<f64>,
    closed: bool,
}

impl ArcPolyline {
    fn new(mut points: Vec<Point3>, closed: bool) -> Result<ArcPolyline> {
        if closed && points.len() > 2 && points.first() == points.last() {
            points.pop();
        }
        let n = points.len();
        let segments = if closed { n } else { n - 1 };
        let mut params = Vec::with_capacity(segments + 1);
        params.push(0.0);
        let mut total = 0.0;
        for k in 0..segments {
            total += (points[(k + 1) % n] - points[k]).norm();
            params.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Correspondence("polyline has zero length".into()));
        }
        for p in &mut params {
            *p /= total;
        }
        Ok(ArcPolyline { points, params, closed })
    }

    fn at(&self, u: f64) -> Point3 {
        let u = if self.closed { u.rem_euclid(1.0) } else { u.clamp(0.0, 1.0) };
        let seg = match self.params.partition_point(|&p| p <= u) {
            0 => 0,
            k => (k - 1).min(self.params.len() - 2),
        };
        let (u0, u1) = (self.params[seg], self.params[seg + 1]);
        let a = self.points[seg];
        let b = self.points[(seg + 1) % self.points.len()];
        if u1 > u0 {
            a + (b - a) * ((u - u0) / (u1 - u0))
        } else {
            a
        }
    }
}

/// Result of [`arclength_match`].
#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub targets: Vec<Point3>,
    /// Sum of squared distances between loop vertices and their targets.
    pub residual: f64,
    pub reversed: bool,
    /// Parameter offset of the first loop vertex (closed loops).
    pub shift: f64,
}

/// Maps each loop vertex to the polyline point at the same normalized arc
/// length. For closed loops the cyclic start offset is optimized, for both
/// loops the traversal direction; the choice minimizes the summed squared
/// distance.
pub fn arclength_match(loop_points: &[Point3], closed: bool, polyline: &[Point3], polyline_closed: bool) -> Result<Match> {
    if closed != polyline_closed {
        return Err(Error::Correspondence("open/closed mismatch between loop and polyline".into()));
    }
    if loop_points.len() < 2 || polyline.len() < 2 {
        return Err(Error::Correspondence("loop and polyline need at least two points".into()));
    }
    let own = ArcPolyline::new(loop_points.to_vec(), closed)?;
    let s = &own.params[..loop_points.len()];
    let mut best: Option<Match> = None;
    for reversed in [false, true] {
        let mut pts = polyline.to_vec();
        if reversed {
            pts.reverse();
        }
        let line = ArcPolyline::new(pts, closed)?;
        let cost = |shift: f64| -> f64 {
            s.iter()
                .zip(loop_points)
                .map(|(&u, x)| (line.at(u + shift) - x).norm_squared())
                .sum()
        };
        let shift = if closed {
            // start the loop at each polyline vertex, then refine by golden
            // section around the best
            let (mut at, mut lowest) = (0.0, f64::INFINITY);
            for &c in &line.params[..line.points.len()] {
                let v = cost(c);
                if v < lowest {
                    (at, lowest) = (c, v);
                }
            }
            let step = line
                .params
                .windows(2)
                .map(|w| w[1] - w[0])
                .chain(own.params.windows(2).map(|w| w[1] - w[0]))
                .fold(0.0, f64::max);
            let refined = golden_section(&cost, at - step, at + step, 80);
            if cost(refined) < lowest {
                refined
            } else {
                at
            }
        } else {
            0.0
        };
        let targets: Vec<Point3> = s.iter().map(|&u| line.at(u + shift)).collect();
        let residual = cost(shift);
        if best.as_ref().map_or(true, |b| residual < b.residual) {
            best = Some(Match {
                targets,
                residual,
                reversed,
                shift: if closed { shift.rem_euclid(1.0) } else { 0.0 },
            });
        }
    }
    Ok(best.expect("two candidates evaluated"))
}

/// Arc-length matches of a loop to a polyline for both traversal directions
/// and, for closed loops, every start at a polyline vertex.
pub(crate) fn match_candidates(loop_points: &[Point3], closed: bool, polyline: &[Point3]) -> Result<Vec<Vec<Point3>>> {
    if loop_points.len() < 2 || polyline.len() < 2 {
        return Err(Error::Correspondence("loop and polyline need at least two points".into()));
    }
    let own = ArcPolyline::new(loop_points.to_vec(), closed)?;
    let s = &own.params[..loop_points.len()];
    let mut out = Vec::new();
    for reversed in [false, true] {
        let mut pts = polyline.to_vec();
        if reversed {
            pts.reverse();
        }
        let line = ArcPolyline::new(pts, closed)?;
        let shifts: Vec<f64> = if closed {
            line.params[..line.points.len()].to_vec()
        } else {
            vec![0.0]
        };
        for shift in shifts {
            out.push(s.iter().map(|&u| line.at(u + shift)).collect());
        }
    }
    Ok(out)
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

/// Boundary vertices paired with their matched target points, over all
/// constrained loops. A vertex shared by two loops keeps its first match.
pub fn match_constraints(
    template: &QuadMesh,
    positions: &[Point3],
    constraints: &BoundaryConstraintSet,
) -> Result<Vec<(usize, Point3)>> {
    constraints.check(template)?;
    let mut seen = vec![false; positions.len()];
    let mut pairs = Vec::new();
    for c in &constraints.constraints {
        let lp = template.boundary_loop(&c.name).expect("checked above");
        let pts: Vec<Point3> = lp.vertices.iter().map(|&v| positions[v]).collect();
        let m = arclength_match(&pts, lp.closed, &c.points, c.closed)?;
        for (&v, y) in lp.vertices.iter().zip(m.targets) {
            if !seen[v] {
                seen[v] = true;
                pairs.push((v, y));
            }
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(n: usize, phase: f64) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let t = phase + 2.0 * PI * i as f64 / n as f64;
                Point3::new(t.cos(), t.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn identity_match() {
        let c = circle(16, 0.3);
        let m = arclength_match(&c, true, &c, true).unwrap();
        assert!(m.residual < 1e-20);
        for (a, b) in m.targets.iter().zip(&c) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rotated_dense_circle() {
        let lp = circle(16, 0.0);
        let dense: Vec<Point3> = circle(64, 0.0).into_iter().map(|p| Point3::new(-p.y, p.x, 0.0)).collect();
        let m = arclength_match(&lp, true, &dense, true).unwrap();
        // the 64-gon is a rotated copy, so each vertex should land on itself
        for (a, b) in m.targets.iter().zip(&lp) {
            assert!((a - b).norm() < 1e-2);
        }
        assert!(!m.reversed);
    }

    #[test]
    fn reversed_segment() {
        let seg: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let rev: Vec<Point3> = seg.iter().rev().copied().collect();
        let m = arclength_match(&seg, false, &rev, false).unwrap();
        assert!(m.reversed);
        assert!(m.residual < 1e-24);
    }

    #[test]
    fn reversed_circle() {
        let lp = circle(12, 0.1);
        let rev: Vec<Point3> = lp.iter().rev().copied().collect();
        let m = arclength_match(&lp, true, &rev, true).unwrap();
        assert!(m.reversed);
        assert!(m.residual < 1e-20);
    }

    #[test]
    fn closedness_mismatch() {
        let c = circle(8, 0.0);
        assert!(matches!(arclength_match(&c, true, &c, false), Err(Error::Correspondence(_))));
    }

    #[test]
    fn repeated_closing_point_is_ignored() {
        let lp = circle(10, 0.0);
        let mut poly = lp.clone();
        poly.push(poly[0]);
        let m = arclength_match(&lp, true, &poly, true).unwrap();
        assert!(m.residual < 1e-20);
    }
}
