//! Deterministic synthetic geometry: a valve-like quad template, simple grids
//! and tubes, smooth warps, and warped targets with known ground truth.
//!
//! The template is a stand-in with the right topology, not an anatomical
//! model. It is a single connected quad mesh:
//!
//! - the wall is an open cylinder of radius `R` whose top ring is flat at
//!   `z = height` and whose bottom ring is scalloped,
//!   `z = -depth * cos(3 (θ - φ0))`, lowest at each leaflet centre;
//! - each leaflet is an annular-sector grid hanging from one third of the
//!   scalloped ring (shared seam vertices), reaching inward to
//!   `R (1 - leaflet_depth)`, narrowing by `leaflet_taper` and rising by
//!   `leaflet_rise` towards its free edge.
//!
//! Boundary loops are `wall_top` (closed) and `leaflet{k}_free` (open, from
//! commissure to commissure). Hinge `Hk` is the lowest seam vertex of
//! leaflet `k`; commissure `Ckl` is the seam vertex where leaflets `k` and
//! `l` meet.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fitter::{BoundaryConstraint, BoundaryConstraintSet};
use crate::mesh::{edge_key, BoundaryLoop, Component, Landmark, QuadMesh, TriSurface};
use crate::{Error, Point3, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallSpec {
    pub radius: f64,
    pub height: f64,
    /// Quads around the circumference.
    pub circumferential: usize,
    /// Quads along the axis.
    pub axial: usize,
    /// Half the peak-to-peak height of the scalloped bottom ring (mm).
    pub scallop_depth: f64,
}

impl Default for WallSpec {
    fn default() -> Self {
        Self {
            radius: 12.0,
            height: 16.0,
            circumferential: 48,
            axial: 10,
            scallop_depth: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeafletSpec {
    /// Quads from the attachment seam to the free edge.
    pub radial: usize,
    /// Quads along the seam; must equal `circumferential / 3`.
    pub angular: usize,
    /// Radial reach as a fraction of the wall radius.
    pub depth: f64,
    /// Angular narrowing of the free edge, as a fraction of the leaflet span.
    pub taper: f64,
    /// Rise of the free edge above the seam (mm).
    pub rise: f64,
}

impl Default for LeafletSpec {
    fn default() -> Self {
        Self {
            radial: 4,
            angular: 16,
            depth: 0.5,
            taper: 0.15,
            rise: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateSpec {
    pub wall: WallSpec,
    pub leaflets: LeafletSpec,
}

impl TemplateSpec {
    pub fn check(&self) -> Result<()> {
        let w = &self.wall;
        let l = &self.leaflets;
        let bad = |msg: &str| Err(Error::Config(format!("template: {msg}")));
        if w.circumferential < 3 || w.axial < 3 || l.radial < 3 || l.angular < 3 {
            return bad("all counts must be at least 3");
        }
        if !(w.radius > 0.0 && w.height > 0.0) {
            return bad("radius and height must be positive");
        }
        if w.circumferential != 3 * l.angular {
            return bad("circumferential count must be three times the leaflet angular count");
        }
        if l.angular % 2 != 0 {
            return bad("leaflet angular count must be even so each hinge is a vertex");
        }
        if !(0.0..0.5 * w.height).contains(&w.scallop_depth) {
            return bad("scallop depth must lie in [0, height / 2)");
        }
        if !(l.depth > 0.0 && l.depth < 0.9) {
            return bad("leaflet depth must lie in (0, 0.9)");
        }
        if !(0.0..0.9).contains(&l.taper) {
            return bad("leaflet taper must lie in [0, 0.9)");
        }
        if !l.rise.is_finite() {
            return bad("leaflet rise must be finite");
        }
        Ok(())
    }
}

/// Angle of leaflet 0's centre.
const LEAFLET0_CENTER: f64 = PI / 2.0;

/// Builds the valve-like template described in the module docs.
pub fn gen_template(spec: &TemplateSpec) -> Result<QuadMesh> {
    spec.check()?;
    let w = &spec.wall;
    let l = &spec.leaflets;
    let nc = w.circumferential;
    let na = w.axial;
    let per = l.angular;
    let radius = w.radius;

    let junction0 = LEAFLET0_CENTER - PI / 3.0;
    let ring_angle = |i: usize| junction0 + 2.0 * PI * i as f64 / nc as f64;
    let scallop = |theta: f64| -w.scallop_depth * (3.0 * (theta - LEAFLET0_CENTER)).cos();

    let mut vertices = Vec::new();
    for a in 0..=na {
        let t = a as f64 / na as f64;
        for i in 0..nc {
            let theta = ring_angle(i);
            let zb = scallop(theta);
            let z = zb + (w.height - zb) * t;
            vertices.push(Point3::new(radius * theta.cos(), radius * theta.sin(), z));
        }
    }
    let wall_id = |i: usize, a: usize| a * nc + (i % nc);

    let mut quads = Vec::new();
    let mut labels = Vec::new();
    for a in 0..na {
        for i in 0..nc {
            quads.push([
                wall_id(i, a),
                wall_id(i + 1, a),
                wall_id(i + 1, a + 1),
                wall_id(i, a + 1),
            ]);
            labels.push(Component::Wall);
        }
    }

    let top: Vec<usize> = std::iter::once(0)
        .chain((1..nc).rev())
        .map(|i| wall_id(i, na))
        .collect();
    let mut boundary_loops = vec![BoundaryLoop::new("wall_top", top, true)];
    let mut landmarks = BTreeMap::new();

    let m = l.radial;
    for k in 0..3 {
        let center = LEAFLET0_CENTER + 2.0 * PI * k as f64 / 3.0;
        let first = vertices.len();
        // (i, j) for j >= 1; j = 0 is the shared seam vertex
        let leaf_id = |i: usize, j: usize| {
            if j == 0 {
                wall_id(k * per + i, 0)
            } else {
                first + (j - 1) * (per + 1) + i
            }
        };
        for j in 1..=m {
            let s = j as f64 / m as f64;
            for i in 0..=per {
                let seam_theta = ring_angle(k * per) + 2.0 * PI * i as f64 / nc as f64;
                let theta = center + (seam_theta - center) * (1.0 - l.taper * s);
                let r = radius * (1.0 - l.depth * s);
                let z = scallop(seam_theta) + l.rise * s;
                vertices.push(Point3::new(r * theta.cos(), r * theta.sin(), z));
            }
        }
        let label = Component::leaflet(k);
        for j in 0..m {
            for i in 0..per {
                quads.push([
                    leaf_id(i + 1, j),
                    leaf_id(i, j),
                    leaf_id(i, j + 1),
                    leaf_id(i + 1, j + 1),
                ]);
                labels.push(label);
            }
        }
        let mut free: Vec<usize> = (0..=m).map(|j| leaf_id(0, j)).collect();
        free.extend((1..=per).map(|i| leaf_id(i, m)));
        free.extend((0..m).rev().map(|j| leaf_id(per, j)));
        boundary_loops.push(BoundaryLoop::new(format!("leaflet{k}_free"), free, false));

        let hinge = [Landmark::H0, Landmark::H1, Landmark::H2][k];
        landmarks.insert(hinge, leaf_id(per / 2, 0));
    }
    landmarks.insert(Landmark::C20, wall_id(0, 0));
    landmarks.insert(Landmark::C01, wall_id(per, 0));
    landmarks.insert(Landmark::C12, wall_id(2 * per, 0));

    Ok(QuadMesh {
        vertices,
        quads,
        labels,
        boundary_loops,
        landmarks,
    })
}

/// `nx` × `ny` planar grid in z = 0 with one closed boundary loop `outer`.
pub fn planar_grid(nx: usize, ny: usize, spacing: f64) -> QuadMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut quads = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            quads.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut ring = Vec::new();
    ring.extend((0..nx).map(|i| id(i, 0)));
    ring.extend((0..ny).map(|j| id(nx, j)));
    ring.extend((1..=nx).rev().map(|i| id(i, ny)));
    ring.extend((1..=ny).rev().map(|j| id(0, j)));
    QuadMesh {
        labels: vec![Component::Wall; quads.len()],
        vertices,
        quads,
        boundary_loops: vec![BoundaryLoop::new("outer", ring, true)],
        landmarks: BTreeMap::new(),
    }
}

/// Open cylinder around the z axis, outward-facing, with closed loops
/// `bottom` and `top`.
pub fn open_tube(circumferential: usize, axial: usize, radius: f64, height: f64) -> QuadMesh {
    let nc = circumferential;
    let mut vertices = Vec::with_capacity(nc * (axial + 1));
    for a in 0..=axial {
        let z = height * a as f64 / axial as f64;
        for i in 0..nc {
            let theta = 2.0 * PI * i as f64 / nc as f64;
            vertices.push(Point3::new(radius * theta.cos(), radius * theta.sin(), z));
        }
    }
    let id = |i: usize, a: usize| a * nc + (i % nc);
    let mut quads = Vec::with_capacity(nc * axial);
    for a in 0..axial {
        for i in 0..nc {
            quads.push([id(i, a), id(i + 1, a), id(i + 1, a + 1), id(i, a + 1)]);
        }
    }
    let bottom: Vec<usize> = (0..nc).map(|i| id(i, 0)).collect();
    let top: Vec<usize> = std::iter::once(0)
        .chain((1..nc).rev())
        .map(|i| id(i, axial))
        .collect();
    QuadMesh {
        labels: vec![Component::Wall; quads.len()],
        vertices,
        quads,
        boundary_loops: vec![
            BoundaryLoop::new("bottom", bottom, true),
            BoundaryLoop::new("top", top, true),
        ],
        landmarks: BTreeMap::new(),
    }
}

/// Smooth deformation standing in for anatomical variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WarpSpec {
    Identity,
    /// Radial scaling by `1 + (amplitude / R) sin²(π t)`, `t` the normalized
    /// height. |amplitude| ≤ R / 2.
    RadialBulge { amplitude: f64 },
    /// Rotation about the axis by `angle_deg (t - 1/2)`. |angle_deg| ≤ 90.
    AxialTwist { angle_deg: f64 },
    /// Per-axis scaling about the bounding-box centre. Factors in [0.5, 2].
    AnisotropicScale { factors: [f64; 3] },
    /// Seeded random combination of a lopsided bulge, twist, anisotropic
    /// scale and rigid motion, each drawn uniformly within its bound.
    Composite {
        seed: u64,
        /// Peak bulge, mm. ≤ R / 2.
        bulge: f64,
        twist_deg: f64,
        /// Max deviation of each scale factor from 1. ≤ 0.5.
        scale: f64,
        rotation_deg: f64,
        translation: f64,
    },
}

impl Default for WarpSpec {
    fn default() -> Self {
        WarpSpec::Composite {
            seed: 1,
            bulge: 1.2,
            twist_deg: 10.0,
            scale: 0.08,
            rotation_deg: 10.0,
            translation: 2.0,
        }
    }
}

/// A warp resolved against a template's frame (axis = z through the origin).
#[derive(Debug, Clone)]
pub struct Warp {
    identity: bool,
    radius: f64,
    z0: f64,
    z1: f64,
    center: Vec3,
    bulge: f64,
    lopsided: f64,
    lopsided_phase: f64,
    twist: f64,
    scale: Vec3,
    rotation: nalgebra::Rotation3<f64>,
    translation: Vec3,
}

impl Warp {
    pub fn new(spec: &WarpSpec, template: &QuadMesh) -> Result<Warp> {
        let radius = template
            .vertices
            .iter()
            .map(|p| p.x.hypot(p.y))
            .fold(0.0, f64::max);
        let z0 = template.vertices.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let z1 = template.vertices.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        if !(radius > 0.0 && z1 > z0) {
            return Err(Error::Geometry("template has no radial or axial extent".into()));
        }
        let (lo, hi) = template.vertices.iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords)),
        );
        let mut warp = Warp {
            identity: matches!(spec, WarpSpec::Identity),
            radius,
            z0,
            z1,
            center: (lo + hi) * 0.5,
            bulge: 0.0,
            lopsided: 0.0,
            lopsided_phase: 0.0,
            twist: 0.0,
            scale: Vec3::repeat(1.0),
            rotation: nalgebra::Rotation3::identity(),
            translation: Vec3::zeros(),
        };
        let out_of_range = |what: &str| Err(Error::Config(format!("warp {what} out of range")));
        match *spec {
            WarpSpec::Identity => {}
            WarpSpec::RadialBulge { amplitude } => {
                if !(amplitude.abs() <= 0.5 * radius) {
                    return out_of_range("bulge amplitude");
                }
                warp.bulge = amplitude / radius;
            }
            WarpSpec::AxialTwist { angle_deg } => {
                if !(angle_deg.abs() <= 90.0) {
                    return out_of_range("twist angle");
                }
                warp.twist = angle_deg.to_radians();
            }
            WarpSpec::AnisotropicScale { factors } => {
                if !factors.iter().all(|f| (0.5..=2.0).contains(f)) {
                    return out_of_range("scale factor");
                }
                warp.scale = Vec3::from(factors);
            }
            WarpSpec::Composite {
                seed,
                bulge,
                twist_deg,
                scale,
                rotation_deg,
                translation,
            } => {
                if !(bulge.abs() <= 0.5 * radius) {
                    return out_of_range("bulge amplitude");
                }
                if !(twist_deg.abs() <= 90.0 && rotation_deg.abs() <= 180.0) {
                    return out_of_range("angle");
                }
                if !(scale.abs() <= 0.5) || !translation.is_finite() {
                    return out_of_range("scale or translation");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut sym = |bound: f64| bound * (2.0 * rng.gen::<f64>() - 1.0);
                warp.bulge = sym(bulge.abs()) / radius;
                warp.lopsided = sym(0.5);
                warp.lopsided_phase = sym(PI);
                warp.twist = sym(twist_deg.abs()).to_radians();
                warp.scale = Vec3::new(1.0 + sym(scale), 1.0 + sym(scale), 1.0 + sym(scale));
                let axis = Vec3::new(sym(1.0), sym(1.0), sym(1.0));
                let angle = sym(rotation_deg.abs()).to_radians();
                warp.rotation = match nalgebra::Unit::try_new(axis, 1e-9) {
                    Some(axis) => nalgebra::Rotation3::from_axis_angle(&axis, angle),
                    None => nalgebra::Rotation3::identity(),
                };
                warp.translation = Vec3::new(sym(translation), sym(translation), sym(translation));
            }
        }
        Ok(warp)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        if self.identity {
            return *p;
        }
        let t = ((p.z - self.z0) / (self.z1 - self.z0)).clamp(0.0, 1.0);
        let theta = p.y.atan2(p.x);
        let bump = (PI * t).sin().powi(2);
        let shape = 1.0 + self.lopsided * (theta - self.lopsided_phase).cos();
        let radial = 1.0 + self.bulge * shape / (1.0 + self.lopsided.abs()) * bump;
        let (s, c) = (self.twist * (t - 0.5)).sin_cos();
        let (x, y) = (p.x * radial, p.y * radial);
        let twisted = Vec3::new(c * x - s * y, s * x + c * y, p.z);
        let scaled = self.center + (twisted - self.center).component_mul(&self.scale);
        Point3::from(self.rotation * scaled + self.translation)
    }

    /// Central-difference Jacobian determinant.
    pub fn jacobian_determinant(&self, p: &Point3, h: f64) -> f64 {
        let mut cols = [Vec3::zeros(); 3];
        for (axis, col) in cols.iter_mut().enumerate() {
            let mut e = Vec3::zeros();
            e[axis] = h;
            *col = (self.apply(&(p + e)) - self.apply(&(p - e))) / (2.0 * h);
        }
        nalgebra::Matrix3::from_columns(&cols).determinant()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Quads split 2^level × 2^level by bilinear interpolation, each sub-quad cut
/// into two triangles. Shared edges produce shared vertices.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
    /// Interior points of each template edge, ordered from the smaller to the
    /// larger endpoint index.
    edge_points: HashMap<(usize, usize), Vec<usize>>,
}

impl Refinement {
    pub fn new(mesh: &QuadMesh, level: u32) -> Refinement {
        let k = 1usize << level;
        let mut vertices = mesh.vertices.clone();
        let mut edge_points: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut triangles = Vec::with_capacity(mesh.quads.len() * k * k * 2);

        for q in &mesh.quads {
            let corner = |c: usize| mesh.vertices[q[c]];
            let bilinear = |u: f64, v: f64| {
                let p = corner(0).coords * ((1.0 - u) * (1.0 - v))
                    + corner(1).coords * (u * (1.0 - v))
                    + corner(2).coords * (u * v)
                    + corner(3).coords * ((1.0 - u) * v);
                Point3::from(p)
            };
            let mut ids = vec![vec![0usize; k + 1]; k + 1];
            for (edge, (a, b)) in [(q[0], q[1]), (q[1], q[2]), (q[3], q[2]), (q[0], q[3])]
                .into_iter()
                .enumerate()
            {
                let key = edge_key(a, b);
                let points = edge_points.entry(key).or_insert_with(|| {
                    let (lo, hi) = (mesh.vertices[key.0], mesh.vertices[key.1]);
                    (1..k)
                        .map(|s| {
                            vertices.push(lo + (hi - lo) * (s as f64 / k as f64));
                            vertices.len() - 1
                        })
                        .collect()
                });
                for s in 1..k {
                    // step s from a towards b
                    let id = if a < b { points[s - 1] } else { points[k - s - 1] };
                    let (i, j) = match edge {
                        0 => (s, 0),
                        1 => (k, s),
                        2 => (s, k),
                        _ => (0, s),
                    };
                    ids[i][j] = id;
                }
            }
            ids[0][0] = q[0];
            ids[k][0] = q[1];
            ids[k][k] = q[2];
            ids[0][k] = q[3];
            for i in 1..k {
                for j in 1..k {
                    vertices.push(bilinear(i as f64 / k as f64, j as f64 / k as f64));
                    ids[i][j] = vertices.len() - 1;
                }
            }
            for i in 0..k {
                for j in 0..k {
                    let (a, b, c, d) = (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]);
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
            }
        }
        Refinement {
            vertices,
            triangles,
            edge_points,
        }
    }

    /// Refined vertex ids along a loop, in loop order.
    pub fn loop_points(&self, lp: &BoundaryLoop) -> Vec<usize> {
        let mut ids = Vec::new();
        let edges = lp.edges();
        for (a, b) in &edges {
            ids.push(*a);
            let mut inner = self.edge_points.get(&edge_key(*a, *b)).cloned().unwrap_or_default();
            if a > b {
                inner.reverse();
            }
            ids.extend(inner);
        }
        if !lp.closed {
            if let Some(&last) = lp.vertices.last() {
                ids.push(last);
            }
        }
        ids
    }
}

/// Target surface, constraints and ground truth produced by [`gen_target`].
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub target: TriSurface,
    pub constraints: BoundaryConstraintSet,
    pub truth: QuadMesh,
    /// Largest distance between the warped centroid of a refined triangle and
    /// the centroid of the warped triangle: how far the piecewise-flat target
    /// may stray from the smooth warped surface.
    pub refinement_error: f64,
}

/// Warps a refined triangulation of `template` into a target surface.
///
/// The ground truth is the template with warped vertices, so it lies exactly
/// on target vertices.
pub fn gen_target(template: &QuadMesh, warp: &WarpSpec, level: u32) -> Result<SyntheticCase> {
    if level > 5 {
        return Err(Error::Config("refinement level must be at most 5".into()));
    }
    let warp = Warp::new(warp, template)?;
    let refinement = Refinement::new(template, level);
    let warped: Vec<Point3> = refinement.vertices.iter().map(|p| warp.apply(p)).collect();

    let mut refinement_error: f64 = 0.0;
    for t in &refinement.triangles {
        let reference = Point3::from(
            (refinement.vertices[t[0]].coords
                + refinement.vertices[t[1]].coords
                + refinement.vertices[t[2]].coords)
                / 3.0,
        );
        let chord = (warped[t[0]].coords + warped[t[1]].coords + warped[t[2]].coords) / 3.0;
        refinement_error = refinement_error.max((warp.apply(&reference).coords - chord).norm());
    }

    let constraints = BoundaryConstraintSet {
        constraints: template
            .boundary_loops
            .iter()
            .map(|lp| BoundaryConstraint {
                name: lp.name.clone(),
                closed: lp.closed,
                points: refinement.loop_points(lp).into_iter().map(|i| warped[i]).collect(),
            })
            .collect(),
    };
    let truth = template.with_vertices(warped[..template.vertices.len()].to_vec());
    let target = TriSurface::new(warped, refinement.triangles)?.with_vertex_normals();
    Ok(SyntheticCase {
        target,
        constraints,
        truth,
        refinement_error,
    })
}
