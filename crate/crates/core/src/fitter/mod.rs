//! Template-fitting remeshing.
//!
//! [`run_pipeline`] deforms a quad template onto a target surface while
//! keeping its connectivity:
//!
//! 1. affine alignment of the template boundary loops to the constraint
//!    polylines (`n0` match/solve rounds);
//! 2. Laplacian relaxation (`n1` rounds) of the displacement from the affine
//!    template, with constrained boundary vertices placed on their matched
//!    targets and every boundary vertex held fixed;
//! 3. `n2` Adam iterations on all vertices with a soft boundary snap;
//! 4. `n3` Adam iterations with constrained boundary vertices placed on their
//!    targets and all boundary vertices frozen;
//! 5. projection of every vertex onto the target.
//!
//! The result of step 2 is the reference mesh for steps 3 and 4. The
//! curvature term acts on the displacement from it, and the flatness, aspect
//! and corner terms are measured relative to their value and slope at it, so
//! a reference already lying on the target is a stationary point.

mod affine;
mod constraints;
mod optimize;
mod relax;

pub use affine::{fit_affine, fit_affine_iter, AffineFit, AffineTransform};
pub use constraints::{arclength_match, match_constraints, BoundaryConstraint, BoundaryConstraintSet, Match};
pub use optimize::{
    final_projection, optimize_stage, sample_surface, Adam, AdamParams, Objective, ProjectionMode, Schedule, Stage,
    StageResult, StageSettings,
};
pub use relax::{relax_laplacian, Relaxed};

use serde::{Deserialize, Serialize};

use crate::losses::{Alpha, SurfaceChamfer};
use crate::mesh::{mean_edge_length, AdjacencyTable, QuadMesh, TriSurface};
use crate::metrics::{quality_report, surface_chamfer_metric, QualityReport};
use crate::spatial::SurfaceIndex;
use crate::{Error, Point3, Result};

/// Per-stage Adam learning rates in mm; `None` means 0.01 × the mean edge
/// length of the reference mesh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageRates {
    pub boundary: Option<f64>,
    pub interior: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub alpha: Alpha,
    pub learning_rate: StageRates,
    pub schedule: Schedule,
    pub adam: AdamParams,
    /// Relaxation factor of step 2.
    pub omega: f64,
    pub projection_mode: ProjectionMode,
    /// Weight of the mean squared boundary snap distance in step 3.
    pub boundary_snap_weight: f64,
    /// Target samples for the backward Chamfer term; `None` means four per
    /// template vertex.
    pub chamfer_sample_count: Option<usize>,
    /// Each quad is split `2^k` times per side for the backward Chamfer term.
    pub chamfer_subdivision: u32,
    pub chamfer_bidirectional: bool,
    /// Adam stages stop once every gradient component is at most this.
    pub gradient_tolerance: f64,
    pub random_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n0: 20,
            n1: 50,
            n2: 300,
            n3: 200,
            alpha: Alpha::default(),
            learning_rate: StageRates::default(),
            schedule: Schedule::Cosine,
            adam: AdamParams::default(),
            omega: 0.5,
            projection_mode: ProjectionMode::Surface,
            boundary_snap_weight: 10.0,
            chamfer_sample_count: None,
            chamfer_subdivision: 2,
            chamfer_bidirectional: true,
            gradient_tolerance: 1e-12,
            random_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        for (name, a) in self.alpha.values() {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(&format!("alpha.{name} must be finite and non-negative"));
            }
        }
        for rate in [self.learning_rate.boundary, self.learning_rate.interior].into_iter().flatten() {
            if !(rate > 0.0 && rate.is_finite()) {
                return bad("learning rates must be positive");
            }
        }
        let AdamParams { beta1, beta2, epsilon } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return bad("adam needs 0 <= beta < 1 and epsilon > 0");
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if !(self.boundary_snap_weight >= 0.0 && self.boundary_snap_weight.is_finite()) {
            return bad("boundary_snap_weight must be finite and non-negative");
        }
        if !(self.gradient_tolerance >= 0.0) {
            return bad("gradient_tolerance must be non-negative");
        }
        if self.chamfer_subdivision > 5 {
            return bad("chamfer_subdivision above 5");
        }
        Ok(())
    }
}

/// Loss traces and diagnostics of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub affine: AffineFit,
    /// Surface Chamfer metric of the affinely mapped template.
    pub post_affine_chamfer: f64,
    /// Mean distance from constrained boundary vertices to their matched
    /// targets, after the affine step and after step 3.
    pub post_affine_boundary_distance: f64,
    pub post_boundary_stage_distance: f64,
    pub relax_trace: Vec<f64>,
    pub boundary_trace: Vec<f64>,
    pub interior_trace: Vec<f64>,
    pub learning_rates: [f64; 2],
    pub sample_count: usize,
    /// Surface Chamfer metric before and after the final projection.
    pub pre_projection_chamfer: f64,
    pub final_chamfer: f64,
    pub max_projection_distance: f64,
    pub quality: QualityReport,
}

fn mean_pair_distance(x: &[Point3], pairs: &[(usize, Point3)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(v, y)| (x[*v] - y).norm()).sum::<f64>() / pairs.len() as f64
}

/// Runs the five fitting stages. The returned mesh shares the template's
/// quads, labels, loops and landmarks.
pub fn run_pipeline(
    template: &QuadMesh,
    target: &TriSurface,
    constraints: &BoundaryConstraintSet,
    config: &FitConfig,
) -> Result<(QuadMesh, FitReport)> {
    config.check()?;
    let adj = AdjacencyTable::build(template)?;
    if !(template.bounding_box_diagonal() > 0.0) {
        return Err(Error::Geometry("template vertices all coincide".into()));
    }
    if target.triangles.is_empty() {
        return Err(Error::Geometry("empty target surface".into()));
    }
    target.check()?;
    constraints.check(template)?;
    let index = SurfaceIndex::build(target.clone());

    // step 1
    let affine = fit_affine_iter(template, constraints, config.n0)?;
    let mapped: Vec<Point3> = template.vertices.iter().map(|p| affine.transform.apply(p)).collect();
    let post_affine_chamfer = surface_chamfer_metric(&template.with_vertices(mapped.clone()), &index)?;
    let pairs = match_constraints(template, &mapped, constraints)?;
    let post_affine_boundary_distance = mean_pair_distance(&mapped, &pairs);

    // step 2
    let (reference, relax_trace) = if config.n1 > 0 {
        let mut disp = vec![Point3::origin(); mapped.len()];
        for &(v, y) in &pairs {
            disp[v] = Point3::from(y - mapped[v]);
        }
        let relaxed = relax_laplacian(&disp, &adj, &adj.boundary, config.n1, config.omega)?;
        let x = mapped.iter().zip(&relaxed.vertices).map(|(p, d)| p + d.coords).collect();
        (x, relaxed.mc_trace)
    } else {
        (mapped, Vec::new())
    };

    // re-initialization
    let edge = mean_edge_length(&reference, &template.quads);
    let rates = [
        config.learning_rate.boundary.unwrap_or(0.01 * edge),
        config.learning_rate.interior.unwrap_or(0.01 * edge),
    ];
    let sample_count = config.chamfer_sample_count.unwrap_or(4 * template.vertices.len());
    let samples = sample_surface(target, sample_count, config.random_seed);
    let chamfer = SurfaceChamfer {
        target: &index,
        samples: &samples,
        quads: &template.quads,
        subdivision: config.chamfer_subdivision,
        bidirectional: config.chamfer_bidirectional,
    };
    let snap = match_constraints(template, &reference, constraints)?;
    let objective = Objective::new(template, &adj, reference.clone(), chamfer, config.alpha)?
        .with_snap(snap, config.boundary_snap_weight);
    let settings = |iterations, learning_rate| StageSettings {
        iterations,
        learning_rate,
        schedule: config.schedule,
        adam: config.adam,
        gradient_tolerance: config.gradient_tolerance,
    };

    // step 3
    let boundary = optimize_stage(&reference, &objective, Stage::Boundary, None, settings(config.n2, rates[0]))?;
    let mut x = boundary.vertices;
    let post_boundary_stage_distance = mean_pair_distance(&x, &match_constraints(template, &x, constraints)?);

    // step 4
    let interior_trace = if config.n3 > 0 {
        for (v, y) in match_constraints(template, &x, constraints)? {
            x[v] = y;
        }
        let interior = optimize_stage(&x, &objective, Stage::Interior, Some(&adj.boundary), settings(config.n3, rates[1]))?;
        x = interior.vertices;
        interior.trace
    } else {
        Vec::new()
    };
    let pre_projection_chamfer = surface_chamfer_metric(&template.with_vertices(x.clone()), &index)?;

    // step 5
    let projected = final_projection(&x, &index, config.projection_mode)?;
    let max_projection_distance = x.iter().zip(&projected).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let fitted = template.with_vertices(projected);
    let report = FitReport {
        affine,
        post_affine_chamfer,
        post_affine_boundary_distance,
        post_boundary_stage_distance,
        relax_trace,
        boundary_trace: boundary.trace,
        interior_trace,
        learning_rates: rates,
        sample_count: samples.len(),
        pre_projection_chamfer,
        final_chamfer: surface_chamfer_metric(&fitted, &index)?,
        max_projection_distance,
        quality: quality_report(&fitted),
    };
    Ok((fitted, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_target, gen_template, planar_grid, TemplateSpec, WarpSpec};
    use crate::Vec3;

    fn loop_constraints(mesh: &QuadMesh) -> BoundaryConstraintSet {
        BoundaryConstraintSet {
            constraints: mesh
                .boundary_loops
                .iter()
                .map(|lp| BoundaryConstraint {
                    name: lp.name.clone(),
                    closed: lp.closed,
                    points: lp.vertices.iter().map(|&v| mesh.vertices[v]).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn default_config_is_valid_and_strict() {
        FitConfig::default().check().unwrap();
        let json = serde_json::to_string(&FitConfig::default()).unwrap();
        let back: FitConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FitConfig::default());
        assert!(serde_json::from_str::<FitConfig>(r#"{"n9": 1}"#).is_err());
        let partial: FitConfig = serde_json::from_str(r#"{"n2": 7}"#).unwrap();
        assert_eq!(partial.n2, 7);
        assert_eq!(partial.n3, FitConfig::default().n3);
        let bad = FitConfig {
            omega: 1.5,
            ..FitConfig::default()
        };
        assert!(matches!(bad.check(), Err(Error::Config(_))));
    }

    #[test]
    fn single_free_vertex_projects_onto_plane() {
        let mesh = planar_grid(3, 3, 1.0);
        let index = SurfaceIndex::build(mesh.triangulate().unwrap());
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let free = 5;
        let mut start = mesh.vertices.clone();
        start[free] += Vec3::new(0.1, -0.05, 0.8);
        let chamfer = SurfaceChamfer {
            target: &index,
            samples: &[],
            quads: &mesh.quads,
            subdivision: 0,
            bidirectional: false,
        };
        let objective = Objective::new(&mesh, &adj, start.clone(), chamfer, Alpha::zero()).unwrap();
        let frozen: Vec<bool> = (0..start.len()).map(|i| i != free).collect();
        let settings = StageSettings {
            iterations: 800,
            learning_rate: 0.02,
            schedule: Schedule::Cosine,
            adam: AdamParams::default(),
            gradient_tolerance: 0.0,
        };
        let out = optimize_stage(&start, &objective, Stage::Interior, Some(&frozen), settings).unwrap();
        assert!(out.vertices[free].z.abs() < 1e-3, "{}", out.vertices[free].z);
        assert!((out.vertices[free].x - start[free].x).abs() < 1e-9);
        for i in (0..start.len()).filter(|&i| i != free) {
            assert_eq!(out.vertices[i], start[i]);
        }
        assert_eq!(out.trace.len(), 801);
        assert!(out.trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_iterations_is_projection() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let case = gen_target(&template, &WarpSpec::RadialBulge { amplitude: 1.2 }, 2).unwrap();
        let config = FitConfig {
            n0: 0,
            n1: 0,
            n2: 0,
            n3: 0,
            ..FitConfig::default()
        };
        let (fitted, report) = run_pipeline(&template, &case.target, &case.constraints, &config).unwrap();
        let index = SurfaceIndex::build(case.target.clone());
        let expected = final_projection(&template.vertices, &index, ProjectionMode::Surface).unwrap();
        assert_eq!(fitted.vertices, expected);
        assert_eq!(fitted.quads, template.quads);
        assert_eq!(report.affine.transform, AffineTransform::identity());
    }

    #[test]
    fn self_fit_stays_put() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let target = gen_target(&template, &WarpSpec::Identity, 2).unwrap().target;
        let config = FitConfig {
            n2: 40,
            n3: 40,
            ..FitConfig::default()
        };
        let (fitted, report) = run_pipeline(&template, &target, &loop_constraints(&template), &config).unwrap();
        let moved = fitted
            .vertices
            .iter()
            .zip(&template.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(moved < 1e-4, "{moved}");
        assert_eq!(fitted.labels, template.labels);
        assert_eq!(fitted.boundary_loops, template.boundary_loops);
        assert_eq!(fitted.landmarks, template.landmarks);
        assert_eq!(report.quality.inverted, 0);
        for trace in [&report.boundary_trace, &report.interior_trace] {
            assert!(trace.iter().all(|v| (v - trace[0]).abs() < 1e-8));
        }
    }

    #[test]
    fn bulge_fit_improves_on_affine() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let case = gen_target(&template, &WarpSpec::RadialBulge { amplitude: 1.2 }, 2).unwrap();
        let (_, report) = run_pipeline(&template, &case.target, &case.constraints, &FitConfig::default()).unwrap();
        assert!(report.final_chamfer < 0.1 * report.post_affine_chamfer, "{report:?}");
        assert!(report.post_boundary_stage_distance <= report.post_affine_boundary_distance + 1e-12);
        assert_eq!(report.quality.inverted, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let mesh = planar_grid(2, 2, 1.0);
        let index = SurfaceIndex::build(mesh.triangulate().unwrap());
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let chamfer = SurfaceChamfer {
            target: &index,
            samples: &[],
            quads: &mesh.quads,
            subdivision: 0,
            bidirectional: false,
        };
        let objective = Objective::new(&mesh, &adj, mesh.vertices.clone(), chamfer, Alpha::zero()).unwrap();
        let settings = StageSettings {
            iterations: 3,
            learning_rate: f64::INFINITY,
            schedule: Schedule::Constant,
            adam: AdamParams::default(),
            gradient_tolerance: 0.0,
        };
        let mut start = mesh.vertices.clone();
        start[4].z = 0.5;
        match optimize_stage(&start, &objective, Stage::Boundary, None, settings) {
            Err(Error::Divergence { iteration, last_finite, .. }) => {
                assert_eq!(iteration, 1);
                assert_eq!(last_finite, start);
            }
            other => panic!("{:?}", other.map(|r| r.trace)),
        }
    }
}
