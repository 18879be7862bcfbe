//! Evaluation metrics between corresponded quad meshes, per region.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::losses::{aspect_ratio, corner_cosines, fit_plane, quad_surface};
use crate::mesh::{Component, Landmark, QuadMesh};
use crate::spatial::{PointIndex, SurfaceIndex};
use crate::{Error, Point3, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Leaflet0,
    Leaflet1,
    Leaflet2,
    Wall,
    Whole,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::Leaflet0, Region::Leaflet1, Region::Leaflet2, Region::Wall, Region::Whole];

    pub fn name(self) -> &'static str {
        match self {
            Region::Leaflet0 => "leaflet0",
            Region::Leaflet1 => "leaflet1",
            Region::Leaflet2 => "leaflet2",
            Region::Wall => "wall",
            Region::Whole => "whole",
        }
    }

    fn component(self) -> Option<Component> {
        match self {
            Region::Leaflet0 => Some(Component::Leaflet0),
            Region::Leaflet1 => Some(Component::Leaflet1),
            Region::Leaflet2 => Some(Component::Leaflet2),
            Region::Wall => Some(Component::Wall),
            Region::Whole => None,
        }
    }

    /// Vertices incident to at least one quad of the region, ascending.
    pub fn vertices(self, mesh: &QuadMesh) -> Vec<usize> {
        match self.component() {
            Some(c) => mesh.region_vertices(c),
            None => {
                let mut used = vec![false; mesh.vertices.len()];
                for q in &mesh.quads {
                    for &v in q {
                        used[v] = true;
                    }
                }
                (0..used.len()).filter(|&i| used[i]).collect()
            }
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown region {s:?}")))
    }
}

fn check_correspondence(pred: &QuadMesh, truth: &QuadMesh) -> Result<()> {
    if pred.vertices.len() != truth.vertices.len() || pred.quads != truth.quads || pred.labels != truth.labels {
        return Err(Error::Correspondence("meshes do not share a topology".into()));
    }
    Ok(())
}

fn region_points(mesh: &QuadMesh, region: Region) -> Result<Vec<Point3>> {
    let points: Vec<Point3> = region.vertices(mesh).into_iter().map(|i| mesh.vertices[i]).collect();
    if points.is_empty() {
        return Err(Error::Query(format!("region {region} is empty")));
    }
    Ok(points)
}

/// Mean distance between corresponding vertices of the region.
pub fn appd(pred: &QuadMesh, truth: &QuadMesh, region: Region) -> Result<f64> {
    check_correspondence(pred, truth)?;
    let ids = region.vertices(truth);
    if ids.is_empty() {
        return Err(Error::Query(format!("region {region} is empty")));
    }
    Ok(ids.iter().map(|&i| (pred.vertices[i] - truth.vertices[i]).norm()).sum::<f64>() / ids.len() as f64)
}

fn nearest_distances(from: &[Point3], to: &[Point3]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Query("empty point set".into()));
    }
    let index = PointIndex::build(to);
    from.par_iter().map(|p| index.nearest(p).map(|(_, d)| d)).collect()
}

/// `½ [mean_a min_b ‖a - b‖ + mean_b min_a ‖b - a‖]`, unsquared.
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Symmetric Hausdorff distance between point sets.
pub fn hausdorff_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    let ab = nearest_distances(a, b)?;
    let ba = nearest_distances(b, a)?;
    Ok(ab.into_iter().chain(ba).fold(0.0, f64::max))
}

/// [`chamfer_distance`] between the region vertex sets of two meshes.
pub fn chamfer_metric(pred: &QuadMesh, truth: &QuadMesh, region: Region) -> Result<f64> {
    chamfer_distance(&region_points(pred, region)?, &region_points(truth, region)?)
}

/// [`hausdorff_distance`] between the region vertex sets of two meshes.
pub fn hausdorff(pred: &QuadMesh, truth: &QuadMesh, region: Region) -> Result<f64> {
    hausdorff_distance(&region_points(pred, region)?, &region_points(truth, region)?)
}

/// Unsquared, halved Chamfer distance between a quad mesh and a target
/// surface: the mean distance from mesh vertices to the surface, and from
/// target vertices to the mesh surface (each quad bilinearly refined four
/// times per side).
pub fn surface_chamfer_metric(mesh: &QuadMesh, target: &SurfaceIndex) -> Result<f64> {
    let forward: Vec<f64> = mesh
        .vertices
        .par_iter()
        .map(|p| target.nearest(p).map(|r| r.distance))
        .collect::<Result<_>>()?;
    let own = SurfaceIndex::build(quad_surface(&mesh.vertices, &mesh.quads, 2));
    let backward: Vec<f64> = target
        .surface()
        .vertices
        .par_iter()
        .map(|p| own.nearest(p).map(|r| r.distance))
        .collect::<Result<_>>()?;
    if forward.is_empty() || backward.is_empty() {
        return Err(Error::Query("empty mesh or target".into()));
    }
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    Ok(0.5 * (mean(&forward) + mean(&backward)))
}

/// Distance between corresponding landmark vertices.
pub fn landmark_errors(pred: &QuadMesh, truth: &QuadMesh) -> Result<BTreeMap<Landmark, f64>> {
    check_correspondence(pred, truth)?;
    let mut out = BTreeMap::new();
    for lm in Landmark::ALL {
        let (Some(&i), Some(&j)) = (pred.landmarks.get(&lm), truth.landmarks.get(&lm)) else {
            return Err(Error::Correspondence(format!("landmark {lm} missing")));
        };
        if i != j {
            return Err(Error::Correspondence(format!("landmark {lm} at different vertices")));
        }
        out.insert(lm, (pred.vertices[i] - truth.vertices[i]).norm());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        Stats {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub quads: usize,
    /// Quads with a zero-length edge or no defined normal; excluded from the
    /// statistics below.
    pub degenerate: usize,
    pub inverted: usize,
    pub aspect: Stats,
    /// |corner angle - 90°|, degrees.
    pub corner_deviation: Stats,
    /// Largest corner distance to the quad's least-squares plane, mm.
    pub flatness: Stats,
    /// Smallest per-corner scaled Jacobian of each quad.
    pub scaled_jacobian: Stats,
}

pub fn quality_report(mesh: &QuadMesh) -> QualityReport {
    let mut report = QualityReport {
        quads: mesh.quads.len(),
        ..Default::default()
    };
    let (mut aspect, mut corner, mut flat, mut jac) = (vec![], vec![], vec![], vec![]);
    for q in &mesh.quads {
        let c = q.map(|v| mesh.vertices[v]);
        let normal = (c[2] - c[0]).cross(&(c[3] - c[1]));
        let (Ok(r), Ok(cos), Some(norm)) = (aspect_ratio(&c), corner_cosines(&c), normal.try_normalize(1e-300)) else {
            report.degenerate += 1;
            continue;
        };
        let mut min_jac = f64::INFINITY;
        for k in 0..4 {
            let e1 = c[(k + 1) % 4] - c[k];
            let e2 = c[(k + 3) % 4] - c[k];
            min_jac = min_jac.min(e1.cross(&e2).dot(&norm) / (e1.norm() * e2.norm()));
        }
        if min_jac < 0.0 {
            report.inverted += 1;
        }
        jac.push(min_jac);
        aspect.push(r);
        corner.push(cos.iter().map(|x| (x.clamp(-1.0, 1.0).acos().to_degrees() - 90.0).abs()).fold(0.0, f64::max));
        flat.push(match fit_plane(&c) {
            Some((centroid, n, _)) => c.iter().map(|p| (p.coords - centroid).dot(&n).abs()).fold(0.0, f64::max),
            None => 0.0,
        });
    }
    report.aspect = Stats::of(&aspect);
    report.corner_deviation = Stats::of(&corner);
    report.flatness = Stats::of(&flat);
    report.scaled_jacobian = Stats::of(&jac);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub appd: f64,
    pub chamfer: f64,
    pub hausdorff: f64,
}

impl RegionMetrics {
    pub const NAMES: [&'static str; 3] = ["appd", "chamfer", "hausdorff"];

    pub fn values(&self) -> [f64; 3] {
        [self.appd, self.chamfer, self.hausdorff]
    }
}

/// Per-region distances, landmark errors and quality of a fitted mesh
/// against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regions: BTreeMap<Region, RegionMetrics>,
    pub landmarks: BTreeMap<Landmark, f64>,
    pub quality: QualityReport,
}

impl MetricsReport {
    pub fn compute(pred: &QuadMesh, truth: &QuadMesh) -> Result<MetricsReport> {
        check_correspondence(pred, truth)?;
        let mut regions = BTreeMap::new();
        for region in Region::ALL {
            if region.vertices(truth).is_empty() {
                continue;
            }
            regions.insert(
                region,
                RegionMetrics {
                    appd: appd(pred, truth, region)?,
                    chamfer: chamfer_metric(pred, truth, region)?,
                    hausdorff: hausdorff(pred, truth, region)?,
                },
            );
        }
        let landmarks = if truth.landmarks.is_empty() && pred.landmarks.is_empty() {
            BTreeMap::new()
        } else {
            landmark_errors(pred, truth)?
        };
        Ok(MetricsReport {
            regions,
            landmarks,
            quality: quality_report(pred),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

/// Mean and standard deviation of per-case reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateReport {
    pub cases: Vec<String>,
    pub regions: BTreeMap<Region, BTreeMap<String, MeanStd>>,
    pub landmarks: BTreeMap<Landmark, MeanStd>,
}

pub fn aggregate(reports: &[(String, MetricsReport)]) -> AggregateReport {
    let mut sorted: Vec<&(String, MetricsReport)> = reports.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = AggregateReport {
        cases: sorted.iter().map(|(n, _)| n.clone()).collect(),
        ..Default::default()
    };
    for region in Region::ALL {
        let rows: Vec<&RegionMetrics> = sorted.iter().filter_map(|(_, r)| r.regions.get(&region)).collect();
        if rows.is_empty() {
            continue;
        }
        let entry = out.regions.entry(region).or_default();
        for (k, name) in RegionMetrics::NAMES.iter().enumerate() {
            let values: Vec<f64> = rows.iter().map(|m| m.values()[k]).collect();
            entry.insert(name.to_string(), MeanStd::of(&values));
        }
    }
    for lm in Landmark::ALL {
        let values: Vec<f64> = sorted.iter().filter_map(|(_, r)| r.landmarks.get(&lm).copied()).collect();
        if !values.is_empty() {
            out.landmarks.insert(lm, MeanStd::of(&values));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_template, planar_grid, TemplateSpec};
    use crate::Vec3;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn point_set_examples() {
        assert_eq!(chamfer_distance(&[p(0.0, 0.0, 0.0)], &[p(1.0, 0.0, 0.0)]).unwrap(), 1.0);
        assert_eq!(hausdorff_distance(&[p(0.0, 0.0, 0.0)], &[p(3.0, 4.0, 0.0)]).unwrap(), 5.0);
        assert!(chamfer_distance(&[], &[p(0.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn appd_of_translation() {
        let truth = gen_template(&TemplateSpec::default()).unwrap();
        assert_eq!(appd(&truth, &truth, Region::Whole).unwrap(), 0.0);
        let moved = truth.with_vertices(truth.vertices.iter().map(|v| v + Vec3::x()).collect());
        for region in Region::ALL {
            assert!((appd(&moved, &truth, region).unwrap() - 1.0).abs() < 1e-12);
        }
        let moved = truth.with_vertices(truth.vertices.iter().map(|v| v + Vec3::new(0.0, 2.0, 0.0)).collect());
        assert!(landmark_errors(&moved, &truth).unwrap().values().all(|&e| (e - 2.0).abs() < 1e-12));
    }

    #[test]
    fn topology_mismatch_rejected() {
        let a = planar_grid(2, 2, 1.0);
        let b = planar_grid(2, 3, 1.0);
        assert!(matches!(appd(&a, &b, Region::Whole), Err(Error::Correspondence(_))));
        let mut c = a.clone();
        c.quads.swap(0, 1);
        assert!(matches!(appd(&a, &c, Region::Whole), Err(Error::Correspondence(_))));
    }

    #[test]
    fn missing_landmark() {
        let truth = gen_template(&TemplateSpec::default()).unwrap();
        let mut pred = truth.clone();
        pred.landmarks.remove(&Landmark::C12);
        assert!(landmark_errors(&pred, &truth).is_err());
    }

    #[test]
    fn uniform_grid_quality() {
        let q = quality_report(&planar_grid(3, 3, 1.0));
        assert_eq!(q.inverted, 0);
        assert_eq!(q.degenerate, 0);
        assert_eq!(q.aspect.max, 1.0);
        assert!(q.corner_deviation.max < 1e-12);
        assert_eq!(q.flatness.max, 0.0);
    }

    #[test]
    fn bow_tie_is_inverted() {
        let mut m = planar_grid(1, 1, 1.0);
        // corners in quad order: (0,0) (1,0) (0.3,1) (1,1.2)
        m.vertices[3] = p(0.3, 1.0, 0.0);
        m.vertices[2] = p(1.0, 1.2, 0.0);
        assert!(quality_report(&m).inverted >= 1);
    }

    #[test]
    fn tube_quality() {
        let q = quality_report(&crate::synth::open_tube(24, 6, 4.0, 6.0));
        assert_eq!(q.inverted, 0);
        assert!(q.aspect.max <= 2.0);
    }

    #[test]
    fn identical_report_is_zero() {
        let truth = gen_template(&TemplateSpec::default()).unwrap();
        let r = MetricsReport::compute(&truth, &truth).unwrap();
        assert_eq!(r.regions.len(), 5);
        assert!(r.regions.values().all(|m| m.values() == [0.0; 3]));
        assert!(r.landmarks.values().all(|&e| e == 0.0));
    }

    #[test]
    fn aggregate_mean_and_std() {
        let truth = planar_grid(2, 2, 1.0);
        let shifted = |d: f64| truth.with_vertices(truth.vertices.iter().map(|v| v + Vec3::x() * d).collect());
        let reports: Vec<(String, MetricsReport)> = [("b", 3.0), ("a", 1.0)]
            .iter()
            .map(|(n, d)| (n.to_string(), MetricsReport::compute(&shifted(*d), &truth).unwrap()))
            .collect();
        let agg = aggregate(&reports);
        assert_eq!(agg.cases, ["a", "b"]);
        let appd = agg.regions[&Region::Whole]["appd"];
        assert!((appd.mean - 2.0).abs() < 1e-12);
        assert!((appd.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn surface_chamfer_of_template_on_itself() {
        let mesh = planar_grid(3, 3, 1.0);
        let target = SurfaceIndex::build(mesh.triangulate().unwrap());
        assert!(surface_chamfer_metric(&mesh, &target).unwrap() < 1e-12);
    }
}
