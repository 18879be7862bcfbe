use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{loss_aspect, loss_corner, loss_flatness, loss_mc, Alpha, LossValue, SurfaceChamfer};
use crate::mesh::{AdjacencyTable, QuadMesh, TriSurface};
use crate::spatial::{PointIndex, SurfaceIndex};
use crate::{Error, Point3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam over a per-vertex vector field.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<Vec3>,
    v: Vec<Vec3>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, params: AdamParams) -> Adam {
        Adam {
            params,
            m: vec![Vec3::zeros(); n],
            v: vec![Vec3::zeros(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [Vec3], grad: &[Vec3], lr: f64) {
        let AdamParams { beta1, beta2, epsilon } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for ((xi, g), (m, v)) in x.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = *m * beta1 + g * (1.0 - beta1);
            *v = *v * beta2 + g.component_mul(g) * (1.0 - beta2);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *xi -= m_hat.zip_map(&v_hat, |a, b| lr * a / (b.sqrt() + epsilon));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the stage rate to zero.
    Cosine,
}

impl Schedule {
    fn rate(self, base: f64, iteration: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * iteration as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// All vertices move; constrained boundary vertices are pulled towards
    /// their matched targets.
    Boundary,
    /// Boundary vertices are frozen.
    Interior,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Boundary => "boundary",
            Stage::Interior => "interior",
        }
    }
}

/// A quality regularizer measured relative to the reference mesh: its value
/// and gradient at the reference are subtracted, so the reference itself is
/// stationary and only changes in element shape are penalized.
#[derive(Debug, Clone)]
struct Tilted {
    weight: f64,
    value: f64,
    gradient: Vec<Vec3>,
    eval: fn(&QuadMesh, &[Point3]) -> Result<LossValue>,
}

impl Tilted {
    fn new(weight: f64, eval: fn(&QuadMesh, &[Point3]) -> Result<LossValue>, mesh: &QuadMesh, reference: &[Point3]) -> Result<Tilted> {
        let base = if weight > 0.0 { eval(mesh, reference)? } else { LossValue::zero(reference.len()) };
        Ok(Tilted {
            weight,
            value: base.value,
            gradient: base.gradient,
            eval,
        })
    }

    fn add_to(&self, out: &mut LossValue, mesh: &QuadMesh, reference: &[Point3], x: &[Point3]) -> Result<()> {
        if self.weight == 0.0 {
            return Ok(());
        }
        let l = (self.eval)(mesh, x)?;
        let mut value = l.value - self.value;
        for (((o, g), g0), (p, r)) in out.gradient.iter_mut().zip(&l.gradient).zip(&self.gradient).zip(x.iter().zip(reference)) {
            value -= g0.dot(&(p - r));
            *o += (g - g0) * self.weight;
        }
        out.value += self.weight * value;
        out.skipped += l.skipped;
        Ok(())
    }
}

/// Fitting objective: surface Chamfer, α-weighted regularizers relative to a
/// reference mesh, and an optional boundary snap penalty.
///
/// The curvature term is the mean-curvature loss of the displacement from the
/// reference; flatness, aspect and corner terms are tilted at the reference
/// (see the crate docs of the fitter module).
pub struct Objective<'a> {
    mesh: &'a QuadMesh,
    adj: &'a AdjacencyTable,
    reference: Vec<Point3>,
    chamfer: SurfaceChamfer<'a>,
    mc_weight: f64,
    tilted: [Tilted; 3],
    snap: Vec<(usize, Point3)>,
    snap_weight: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        mesh: &'a QuadMesh,
        adj: &'a AdjacencyTable,
        reference: Vec<Point3>,
        chamfer: SurfaceChamfer<'a>,
        alpha: Alpha,
    ) -> Result<Objective<'a>> {
        let tilted = [
            Tilted::new(alpha.flatness, loss_flatness, mesh, &reference)?,
            Tilted::new(alpha.aspect, loss_aspect, mesh, &reference)?,
            Tilted::new(alpha.corner, loss_corner, mesh, &reference)?,
        ];
        Ok(Objective {
            mesh,
            adj,
            reference,
            chamfer,
            mc_weight: alpha.mc,
            tilted,
            snap: Vec::new(),
            snap_weight: 0.0,
        })
    }

    /// Pull `(vertex, target)` pairs together with weight × mean squared
    /// distance.
    pub fn with_snap(mut self, snap: Vec<(usize, Point3)>, weight: f64) -> Self {
        self.snap = snap;
        self.snap_weight = weight;
        self
    }

    pub fn reference(&self) -> &[Point3] {
        &self.reference
    }

    pub fn evaluate(&self, x: &[Point3], stage: Stage) -> Result<LossValue> {
        let mut out = self.chamfer.evaluate(x)?;
        if self.mc_weight > 0.0 {
            let disp: Vec<Point3> = x.iter().zip(&self.reference).map(|(p, r)| Point3::from(p - r)).collect();
            let mc = loss_mc(&disp, self.adj)?;
            out.value += self.mc_weight * mc.value;
            for (o, g) in out.gradient.iter_mut().zip(&mc.gradient) {
                *o += g * self.mc_weight;
            }
        }
        for t in &self.tilted {
            t.add_to(&mut out, self.mesh, &self.reference, x)?;
        }
        if stage == Stage::Boundary && self.snap_weight > 0.0 && !self.snap.is_empty() {
            let scale = self.snap_weight / self.snap.len() as f64;
            for &(v, y) in &self.snap {
                let d = x[v] - y;
                out.value += scale * d.norm_squared();
                out.gradient[v] += d * (2.0 * scale);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub vertices: Vec<Point3>,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub adam: AdamParams,
    /// The stage stops early once no gradient component exceeds this.
    pub gradient_tolerance: f64,
}

/// Runs Adam on the displacement from `vertices`. Vertices flagged in
/// `frozen` keep zero gradient. The trace holds the objective before the
/// first step and after each step taken.
pub fn optimize_stage(
    vertices: &[Point3],
    objective: &Objective<'_>,
    stage: Stage,
    frozen: Option<&[bool]>,
    settings: StageSettings,
) -> Result<StageResult> {
    let n = vertices.len();
    let mut disp = vec![Vec3::zeros(); n];
    let mut adam = Adam::new(n, settings.adam);
    let mut x = vertices.to_vec();
    let mut last_finite = x.clone();
    let diverged = |iteration: usize, last: &[Point3]| Error::Divergence {
        stage: stage.name().to_string(),
        iteration,
        last_finite: last.to_vec(),
    };
    let mut loss = objective.evaluate(&x, stage)?;
    if !loss.is_finite() {
        return Err(diverged(0, &last_finite));
    }
    let mut trace = vec![loss.value];
    for it in 0..settings.iterations {
        if let Some(frozen) = frozen {
            for (g, &f) in loss.gradient.iter_mut().zip(frozen) {
                if f {
                    *g = Vec3::zeros();
                }
            }
        }
        if loss.gradient.iter().all(|g| g.amax() <= settings.gradient_tolerance) {
            break;
        }
        let lr = settings.schedule.rate(settings.learning_rate, it, settings.iterations);
        adam.step(&mut disp, &loss.gradient, lr);
        for ((xi, v), d) in x.iter_mut().zip(vertices).zip(&disp) {
            *xi = v + d;
        }
        if x.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(diverged(it + 1, &last_finite));
        }
        loss = objective.evaluate(&x, stage)?;
        if !loss.is_finite() {
            return Err(diverged(it + 1, &last_finite));
        }
        last_finite.clone_from(&x);
        trace.push(loss.value);
    }
    Ok(StageResult { vertices: x, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Closest point on the target surface.
    #[default]
    Surface,
    /// Closest target vertex.
    Vertex,
}

/// Replaces every vertex by its closest point on, or closest vertex of, the
/// target.
pub fn final_projection(vertices: &[Point3], index: &SurfaceIndex, mode: ProjectionMode) -> Result<Vec<Point3>> {
    use rayon::prelude::*;
    match mode {
        ProjectionMode::Surface => vertices.par_iter().map(|p| index.nearest(p).map(|r| r.point)).collect(),
        ProjectionMode::Vertex => {
            let targets = &index.surface().vertices;
            let points = PointIndex::build(targets);
            vertices.par_iter().map(|p| points.nearest(p).map(|(i, _)| targets[i])).collect()
        }
    }
}

/// `count` points drawn uniformly by area from the surface.
pub fn sample_surface(surface: &TriSurface, count: usize, seed: u64) -> Vec<Point3> {
    let mut cdf = Vec::with_capacity(surface.triangles.len());
    let mut total = 0.0;
    for t in 0..surface.triangles.len() {
        total += surface.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let pick = rng.gen::<f64>() * total;
            let t = cdf.partition_point(|&c| c < pick).min(cdf.len() - 1);
            let [a, b, c] = surface.triangle(t);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                (u, v) = (1.0 - u, 1.0 - v);
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}
