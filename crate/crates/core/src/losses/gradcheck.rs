//! Finite-difference verification of every loss gradient on seeded random
//! meshes.
//!
//! Each case is a jittered, bumpy grid (4×4 up to 8×8 quads) or an open tube.
//! A case is skipped for a loss when the evaluation point lies within
//! [`SWITCH_MARGIN`] (plus the reach of the difference stencil) of a
//! nearest-neighbour assignment switch or an absolute-value kink, where the
//! loss is not differentiable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compose_additive, compose_multiplicative, finite_difference_gradient, loss_aspect,
    loss_chamfer, loss_corner, loss_edge, loss_flatness, loss_geom, loss_laplacian, loss_mc,
    loss_normal, relative_inf_error, LossValue, Mu, SurfaceChamfer,
};
use crate::fitter::sample_surface;
use crate::mesh::mean_edge_length;
use crate::losses::quad_surface;
use crate::spatial::{closest_point_on_triangle, PointIndex, SurfaceIndex};
use crate::synth::{open_tube, planar_grid, Refinement};
use crate::{AdjacencyTable, Error, Point3, QuadMesh, Result, TriSurface, Vec3};

/// Distance to a non-differentiable configuration below which a case is
/// excluded.
pub const SWITCH_MARGIN: f64 = 1e-6;

/// Every loss covered by [`run_gradcheck`], in report order.
pub const LOSS_NAMES: [&str; 12] = [
    "geom",
    "mc",
    "laplacian",
    "edge",
    "chamfer",
    "surface_chamfer",
    "normal",
    "flatness",
    "aspect",
    "corner",
    "additive",
    "multiplicative",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Test hook: perturb the analytic gradient of this loss before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            cases: 20,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_error: f64,
    /// Case index of `max_error`.
    pub worst_case: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub settings: GradCheckSettings,
    pub losses: Vec<LossCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.losses.iter().all(|l| l.passed)
    }
}

/// One seeded random mesh with everything the losses need.
pub struct Case {
    pub mesh: QuadMesh,
    pub adj: AdjacencyTable,
    /// Evaluation point.
    pub pred: Vec<Point3>,
    /// Corresponded reference for the geometry loss.
    pub truth: Vec<Point3>,
    /// Unstructured target points for the Chamfer loss.
    pub cloud: Vec<Point3>,
    pub surface: SurfaceIndex,
    pub normals_index: PointIndex,
    pub samples: Vec<Point3>,
    pub mu: f64,
}

fn jitter(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
}

impl Case {
    /// Case `k` of the suite: grids from 4×4 to 8×8, every sixth case a tube.
    /// `attempt` redraws the random geometry of the same mesh size.
    pub fn generate(k: usize, seed: u64, attempt: usize) -> Result<Case> {
        let stream = seed.wrapping_mul(1000).wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        rng.set_stream(attempt as u64);
        let base = if k % 6 == 5 {
            open_tube(8 + k % 4, 4, 3.0, 4.0)
        } else {
            let n = 4 + k % 6;
            let mut grid = planar_grid(n, n, 1.0);
            let (a, b) = (rng.gen_range(0.1..0.3), rng.gen_range(0.5..1.5));
            for p in &mut grid.vertices {
                p.z = a * (b * p.x).sin() * (0.7 * b * p.y).cos();
            }
            grid
        };
        let spacing = mean_edge_length(&base.vertices, &base.quads);
        let pred: Vec<Point3> = base
            .vertices
            .iter()
            .map(|p| p + jitter(&mut rng, 0.15 * spacing))
            .collect();
        let truth: Vec<Point3> = base
            .vertices
            .iter()
            .map(|p| p + jitter(&mut rng, 0.3 * spacing))
            .collect();
        let offset = jitter(&mut rng, 0.1 * spacing);
        let target_mesh = base.with_vertices(base.vertices.iter().map(|p| p + offset).collect());
        let refined = Refinement::new(&target_mesh, 1);
        let target = TriSurface::new(refined.vertices.clone(), refined.triangles.clone())?
            .with_vertex_normals();
        let cloud: Vec<Point3> = target
            .vertices
            .iter()
            .map(|p| p + jitter(&mut rng, 0.05 * spacing))
            .collect();
        let normals_index = PointIndex::build(&target.vertices);
        let samples = sample_surface(&target, 2 * pred.len(), rng.gen());
        let mu = spacing * rng.gen_range(0.8..1.2);
        let adj = AdjacencyTable::build(&base)?;
        Ok(Case {
            mesh: base,
            adj,
            pred,
            truth,
            cloud,
            surface: SurfaceIndex::build(target),
            normals_index,
            samples,
            mu,
        })
    }

    fn surface_chamfer(&self) -> SurfaceChamfer<'_> {
        SurfaceChamfer {
            target: &self.surface,
            samples: &self.samples,
            quads: &self.mesh.quads,
            subdivision: 1,
            bidirectional: true,
        }
    }

    fn normals(&self) -> &TriSurface {
        self.surface.surface()
    }

    /// Loss `name` at `x`.
    pub fn evaluate(&self, name: &str, x: &[Point3]) -> Result<LossValue> {
        match name {
            "geom" => loss_geom(x, &self.truth),
            "mc" => loss_mc(x, &self.adj),
            "laplacian" => loss_laplacian(x, &self.adj),
            "edge" => loss_edge(x, &self.adj, Mu::Fixed(self.mu)),
            "chamfer" => loss_chamfer(x, &self.cloud),
            "surface_chamfer" => self.surface_chamfer().evaluate(x),
            "normal" => loss_normal(x, &self.mesh.quads, self.normals(), &self.normals_index),
            "flatness" => loss_flatness(&self.mesh, x),
            "aspect" => loss_aspect(&self.mesh, x),
            "corner" => loss_corner(&self.mesh, x),
            "additive" => {
                let terms = [loss_geom(x, &self.truth)?, loss_mc(x, &self.adj)?];
                compose_additive(&terms, &[1.0, 0.3])
            }
            "multiplicative" => {
                let terms = self.unstructured_terms(x)?;
                compose_multiplicative(&terms, &[1.0, 0.5, 0.01, 0.2])
            }
            "multiplicative_floor" => {
                let terms = self.unstructured_terms(x)?;
                compose_multiplicative(&terms, &[1.0, 0.5, 1e-30, 0.2])
            }
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }

    fn unstructured_terms(&self, x: &[Point3]) -> Result<[LossValue; 4]> {
        Ok([
            loss_chamfer(x, &self.cloud)?,
            loss_normal(x, &self.mesh.quads, self.normals(), &self.normals_index)?,
            loss_edge(x, &self.adj, Mu::Fixed(self.mu))?,
            loss_laplacian(x, &self.adj)?,
        ])
    }

    /// Smallest distance from `x` to a configuration where loss `name` is not
    /// differentiable, in the loss's natural units (mm for assignments,
    /// mm² for edge excess, length difference for aspect).
    pub fn switch_gap(&self, name: &str, x: &[Point3], step: f64) -> f64 {
        let reach = 2.0 * step;
        let chamfer = || {
            assignment_gap(x, &self.cloud).min(assignment_gap(&self.cloud, x)) - reach
        };
        let normal = || assignment_gap(x, self.normals_index.points()) - reach;
        let edge = || {
            let mut gap = f64::INFINITY;
            for (p, nbrs) in self.adj.neighbors.iter().enumerate() {
                for &k in nbrs {
                    let d = x[p] - x[k];
                    let excess = (d.norm_squared() - self.mu * self.mu).abs();
                    gap = gap.min(excess - 4.0 * d.norm() * step);
                }
            }
            gap
        };
        match name {
            "chamfer" => chamfer(),
            "normal" => normal(),
            "edge" => edge(),
            "aspect" => self
                .mesh
                .quads
                .iter()
                .map(|q| {
                    let side = |i: usize| (x[q[(i + 1) % 4]] - x[q[i]]).norm();
                    let a = 0.5 * (side(0) + side(2));
                    let b = 0.5 * (side(1) + side(3));
                    (a - b).abs() - 2.0 * reach
                })
                .fold(f64::INFINITY, f64::min),
            "surface_chamfer" => {
                let predicted = quad_surface(x, &self.mesh.quads, 1);
                surface_gap(x, self.surface.surface(), reach)
                    .min(surface_gap(&self.samples, &predicted, reach))
            }
            "multiplicative" | "multiplicative_floor" => chamfer().min(normal()).min(edge()),
            _ => f64::INFINITY,
        }
    }
}

/// For every point of `from`, the difference between its second-nearest and
/// nearest distance to `to`; the minimum over `from`.
fn assignment_gap(from: &[Point3], to: &[Point3]) -> f64 {
    from.iter()
        .map(|p| {
            let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
            for q in to {
                let d = (p - q).norm();
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                } else if d < d2 {
                    d2 = d;
                }
            }
            d2 - d1
        })
        .fold(f64::INFINITY, f64::min)
}

/// Margin to a closest-point jump for queries against a triangle surface.
///
/// When the best point `c1` lies on its triangle, any other triangle's
/// closest point `c` that slides continuously from it satisfies
/// `|c - c1|² ≤ d² - d1²`. A candidate violating that bound is a separate
/// local minimum, and its distance excess is the margin to a switch.
fn surface_gap(queries: &[Point3], surface: &TriSurface, reach: f64) -> f64 {
    let mut gap = f64::INFINITY;
    for q in queries {
        let hits: Vec<(f64, Point3)> = (0..surface.triangles.len())
            .filter_map(|t| {
                let [a, b, c] = surface.triangle(t);
                closest_point_on_triangle(q, &a, &b, &c).ok().map(|r| (r.distance, r.point))
            })
            .collect();
        let Some(&(d1, c1)) = hits.iter().min_by(|a, b| a.0.total_cmp(&b.0)) else {
            continue;
        };
        for &(d, c) in &hits {
            if (c - c1).norm_squared() > 2.0 * (d * d - d1 * d1) + 1e-18 {
                gap = gap.min(d - d1 - reach);
            }
        }
    }
    gap
}

/// Compares analytic and central-difference gradients of one loss on one case.
/// Returns `None` when the case is excluded.
pub fn check_case(case: &Case, name: &str, settings: &GradCheckSettings) -> Result<Option<f64>> {
    if case.switch_gap(name, &case.pred, settings.step) < SWITCH_MARGIN {
        return Ok(None);
    }
    let mut analytic = case.evaluate(name, &case.pred)?.gradient;
    if settings.corrupt.as_deref() == Some(name) {
        for g in &mut analytic {
            *g *= 1.01;
        }
        analytic[0].x += 1e-3 * (1.0 + analytic[0].x.abs());
    }
    let mut failure = None;
    let numeric = finite_difference_gradient(
        |x| match case.evaluate(name, x) {
            Ok(v) => v.value,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &case.pred,
        settings.step,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Some(relative_inf_error(&analytic, &numeric)))
}

/// Redraws of an excluded case before it counts as skipped.
pub const MAX_ATTEMPTS: usize = 8;

/// Runs every loss in [`LOSS_NAMES`] (the multiplicative composition also
/// through its ε-floor path) on `settings.cases` seeded meshes. A case within
/// the switch margin is redrawn up to [`MAX_ATTEMPTS`] times; `skipped`
/// counts the excluded draws.
pub fn run_gradcheck(settings: &GradCheckSettings) -> Result<GradCheckReport> {
    if settings.cases == 0 || !(settings.step > 0.0) || !(settings.tolerance > 0.0) {
        return Err(Error::Config(
            "gradcheck needs cases > 0, step > 0 and tolerance > 0".into(),
        ));
    }
    if let Some(name) = &settings.corrupt {
        if !LOSS_NAMES.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown loss `{name}`")));
        }
    }
    let mut cases: Vec<Vec<Case>> = (0..settings.cases)
        .map(|k| Case::generate(k, settings.seed, 0).map(|c| vec![c]))
        .collect::<Result<_>>()?;
    let mut losses = Vec::new();
    for name in LOSS_NAMES {
        let mut check = LossCheck {
            loss: name.to_string(),
            checked: 0,
            skipped: 0,
            max_error: 0.0,
            worst_case: 0,
            passed: true,
        };
        let variants: &[&str] = if name == "multiplicative" {
            &["multiplicative", "multiplicative_floor"]
        } else {
            &[name]
        };
        for (k, draws) in cases.iter_mut().enumerate() {
            for &variant in variants {
                let mut s = settings.clone();
                if s.corrupt.as_deref() == Some(name) {
                    s.corrupt = Some(variant.to_string());
                }
                for attempt in 0..MAX_ATTEMPTS {
                    if draws.len() <= attempt {
                        draws.push(Case::generate(k, settings.seed, attempt)?);
                    }
                    match check_case(&draws[attempt], variant, &s)? {
                        None => check.skipped += 1,
                        Some(err) => {
                            check.checked += 1;
                            if !(err <= check.max_error) {
                                check.max_error = err;
                                check.worst_case = k;
                            }
                            break;
                        }
                    }
                }
            }
        }
        check.passed = check.checked >= cases.len() * variants.len() && check.max_error <= settings.tolerance;
        losses.push(check);
    }
    Ok(GradCheckReport {
        settings: settings.clone(),
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_deterministic() {
        let a = Case::generate(3, 7, 0).unwrap();
        let b = Case::generate(3, 7, 0).unwrap();
        assert_eq!(a.pred, b.pred);
        assert_eq!(a.samples, b.samples);
        let c = Case::generate(3, 7, 1).unwrap();
        assert_eq!(a.pred.len(), c.pred.len());
        assert_ne!(a.pred, c.pred);
    }

    #[test]
    fn floor_variant_floors_a_factor() {
        let case = Case::generate(0, 1, 0).unwrap();
        let terms = case.unstructured_terms(&case.pred).unwrap();
        let floored = case.evaluate("multiplicative_floor", &case.pred).unwrap();
        let direct = terms[0].value * 0.5 * terms[1].value * super::super::PRODUCT_FLOOR * 0.2 * terms[3].value;
        assert!((floored.value - direct).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn small_suite_passes() {
        let settings = GradCheckSettings {
            cases: 3,
            ..Default::default()
        };
        let report = run_gradcheck(&settings).unwrap();
        for l in &report.losses {
            assert!(l.passed, "{l:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let settings = GradCheckSettings {
            cases: 2,
            corrupt: Some("mc".into()),
            ..Default::default()
        };
        let report = run_gradcheck(&settings).unwrap();
        assert!(!report.passed());
        assert!(report.losses.iter().filter(|l| !l.passed).all(|l| l.loss == "mc"));
    }

    #[test]
    fn unknown_corruption_target_is_rejected() {
        let settings = GradCheckSettings {
            corrupt: Some("nope".into()),
            ..Default::default()
        };
        assert!(matches!(run_gradcheck(&settings), Err(Error::Config(_))));
    }
}
