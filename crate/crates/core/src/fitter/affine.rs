use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::constraints::{match_candidates, match_constraints, BoundaryConstraintSet};
use crate::mesh::QuadMesh;
use crate::{Error, Point3, Result, Vec3};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;
const DET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for AffineTransform {
    fn default() -> Self {
        AffineTransform::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> AffineTransform {
        AffineTransform {
            linear: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.linear * p.coords + self.translation)
    }

    /// Least-squares `(A, t)` minimizing `Σ ‖A x + t - y‖²`.
    pub fn solve(pairs: &[(Point3, Point3)]) -> Result<AffineTransform> {
        let n = pairs.len();
        let mut design = DMatrix::zeros(n.max(4), 4);
        let mut rhs = DMatrix::zeros(n.max(4), 3);
        for (r, (x, y)) in pairs.iter().enumerate() {
            for k in 0..3 {
                design[(r, k)] = x[k];
                rhs[(r, k)] = y[k];
            }
            design[(r, 3)] = 1.0;
        }
        let svd = design.svd(true, true);
        let v_t = svd.v_t.as_ref().expect("requested");
        let largest = svd.singular_values.max();
        let deficient: Vec<[f64; 4]> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|&(_, &s)| !(s > RANK_TOLERANCE * largest))
            .map(|(k, _)| [v_t[(k, 0)], v_t[(k, 1)], v_t[(k, 2)], v_t[(k, 3)]])
            .collect();
        if !deficient.is_empty() {
            return Err(Error::DegenerateConstraints {
                rank: 4 - deficient.len(),
                directions: deficient,
            });
        }
        let m = svd
            .solve(&rhs, 0.0)
            .map_err(|e| Error::Geometry(format!("affine solve failed: {e}")))?;
        let linear = Matrix3::from_fn(|r, c| m[(c, r)]);
        let translation = Vec3::new(m[(3, 0)], m[(3, 1)], m[(3, 2)]);
        if !(linear.determinant().abs() > DET_TOLERANCE) {
            return Err(Error::DegenerateConstraints {
                rank: 3,
                directions: vec![],
            });
        }
        Ok(AffineTransform { linear, translation })
    }
}

/// Affine fit with its boundary residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub transform: AffineTransform,
    /// Root-mean-square distance between mapped boundary vertices and their
    /// matched targets.
    pub rms_residual: f64,
    pub iterations: usize,
}

/// Combinations of per-loop candidates enumerated exhaustively; beyond this
/// the loops are chosen by coordinate sweeps.
const MAX_COMBINATIONS: usize = 4096;

/// Starting transform: for every constrained loop, each traversal direction
/// and (closed loops) each start vertex of its polyline is a candidate
/// correspondence; the combination whose least-squares affine leaves the
/// smallest residual wins.
fn initial_transform(template: &QuadMesh, constraints: &BoundaryConstraintSet) -> Result<AffineTransform> {
    constraints.check(template)?;
    let mut loops = Vec::new();
    for c in &constraints.constraints {
        let lp = template.boundary_loop(&c.name).expect("checked above");
        let pts: Vec<Point3> = lp.vertices.iter().map(|&v| template.vertices[v]).collect();
        loops.push((&lp.vertices, match_candidates(&pts, lp.closed, &c.points)?));
    }
    let evaluate = |choice: &[usize]| -> Option<(f64, AffineTransform)> {
        let mut seen = vec![false; template.vertices.len()];
        let mut corr = Vec::new();
        for ((ids, cands), &k) in loops.iter().zip(choice) {
            for (&v, y) in ids.iter().zip(&cands[k]) {
                if !seen[v] {
                    seen[v] = true;
                    corr.push((template.vertices[v], *y));
                }
            }
        }
        let t = AffineTransform::solve(&corr).ok()?;
        let r: f64 = corr.iter().map(|(x, y)| (t.apply(x) - y).norm_squared()).sum();
        Some((r, t))
    };
    let counts: Vec<usize> = loops.iter().map(|(_, c)| c.len()).collect();
    let total = counts.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let mut choice = vec![0; loops.len()];
    let mut best: Option<(f64, AffineTransform, Vec<usize>)> = None;
    let consider = |choice: &[usize], best: &mut Option<(f64, AffineTransform, Vec<usize>)>| {
        if let Some((r, t)) = evaluate(choice) {
            if best.as_ref().map_or(true, |b| r < b.0) {
                *best = Some((r, t, choice.to_vec()));
            }
        }
    };
    if total.is_some_and(|t| t <= MAX_COMBINATIONS) {
        'all: loop {
            consider(&choice, &mut best);
            for k in 0..choice.len() {
                choice[k] += 1;
                if choice[k] < counts[k] {
                    continue 'all;
                }
                choice[k] = 0;
            }
            break;
        }
    } else {
        for _ in 0..3 {
            for k in 0..loops.len() {
                for j in 0..counts[k] {
                    choice[k] = j;
                    consider(&choice, &mut best);
                }
                choice[k] = best.as_ref().map_or(0, |b| b.2[k]);
            }
        }
    }
    match best {
        Some((_, t, _)) => Ok(t),
        None => Ok(AffineTransform::identity()),
    }
}

/// Alternates arc-length matching of the mapped template boundary with a
/// least-squares affine solve, up to `iterations` rounds or until the
/// transform stops changing. The first matching starts from the best global
/// candidate correspondence. Zero rounds yields the identity.
pub fn fit_affine_iter(template: &QuadMesh, constraints: &BoundaryConstraintSet, iterations: usize) -> Result<AffineFit> {
    if iterations == 0 {
        return Ok(AffineFit {
            transform: AffineTransform::identity(),
            rms_residual: 0.0,
            iterations: 0,
        });
    }
    let mut transform = initial_transform(template, constraints)?;
    let mut rms_residual = 0.0;
    let mut done = 0;
    for _ in 0..iterations {
        let mapped: Vec<Point3> = template.vertices.iter().map(|p| transform.apply(p)).collect();
        let pairs = match_constraints(template, &mapped, constraints)?;
        if pairs.is_empty() {
            return Err(Error::DegenerateConstraints {
                rank: 0,
                directions: vec![],
            });
        }
        let corr: Vec<(Point3, Point3)> = pairs.iter().map(|&(v, y)| (template.vertices[v], y)).collect();
        let next = AffineTransform::solve(&corr)?;
        rms_residual = (corr.iter().map(|(x, y)| (next.apply(x) - y).norm_squared()).sum::<f64>() / corr.len() as f64).sqrt();
        let change = (next.linear - transform.linear).amax().max((next.translation - transform.translation).amax());
        transform = next;
        done += 1;
        if change <= 1e-14 * (1.0 + transform.linear.amax() + transform.translation.amax()) {
            break;
        }
    }
    Ok(AffineFit {
        transform,
        rms_residual,
        iterations: done,
    })
}

/// [`fit_affine_iter`] with up to 50 matching rounds.
pub fn fit_affine(template: &QuadMesh, constraints: &BoundaryConstraintSet) -> Result<AffineTransform> {
    fit_affine_iter(template, constraints, 50).map(|f| f.transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::BoundaryConstraint;
    use crate::synth::{gen_template, TemplateSpec};

    fn constraints_under(template: &QuadMesh, t: &AffineTransform) -> BoundaryConstraintSet {
        BoundaryConstraintSet {
            constraints: template
                .boundary_loops
                .iter()
                .map(|lp| BoundaryConstraint {
                    name: lp.name.clone(),
                    closed: lp.closed,
                    points: lp.vertices.iter().map(|&v| t.apply(&template.vertices[v])).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn identity_recovered() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let fit = fit_affine(&template, &constraints_under(&template, &AffineTransform::identity())).unwrap();
        assert!((fit.linear - Matrix3::identity()).amax() < 1e-9);
        assert!(fit.translation.amax() < 1e-9);
    }

    #[test]
    fn scale_and_shift_recovered() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let truth = AffineTransform {
            linear: Matrix3::identity() * 2.0,
            translation: Vec3::new(5.0, 0.0, 0.0),
        };
        let fit = fit_affine(&template, &constraints_under(&template, &truth)).unwrap();
        assert!((fit.linear - truth.linear).amax() < 1e-6);
        assert!((fit.translation - truth.translation).amax() < 1e-6);
    }

    #[test]
    fn coplanar_constraints_are_degenerate() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let mut c = constraints_under(&template, &AffineTransform::identity());
        c.constraints.truncate(1); // the flat top ring only
        match fit_affine(&template, &c) {
            Err(Error::DegenerateConstraints { rank, directions }) => {
                assert_eq!(rank, 3);
                assert_eq!(directions.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let c = constraints_under(&template, &AffineTransform::identity());
        assert_eq!(fit_affine_iter(&template, &c, 0).unwrap().transform, AffineTransform::identity());
    }
}
