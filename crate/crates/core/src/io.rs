//! Mesh files, landmark sidecars, constraint and configuration documents, and
//! report writers.
//!
//! Quad meshes are stored as OBJ (`v`/`g`/`f` records, one `g` group per run of
//! equally labelled quads) or legacy ASCII VTK POLYDATA (labels as the
//! `component` cell scalar). Landmarks and boundary loops live in a JSON
//! sidecar next to the mesh, `<stem>.landmarks.json`:
//!
//! ```json
//! {"landmarks": {"H0": 12}, "loops": {"wall_top": [0, 1, 2, 0]}}
//! ```
//!
//! A closed loop repeats its first index at the end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::fitter::{BoundaryConstraintSet, FitConfig};
use crate::mesh::{extract_boundary_loops, BoundaryLoop, Component, Landmark, QuadMesh, TriSurface};
use crate::metrics::{AggregateReport, MetricsReport, QualityReport};
use crate::synth::{TemplateSpec, WarpSpec};
use crate::{Error, Point3, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    #[default]
    Obj,
    Vtk,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Vtk => "vtk",
        }
    }

    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<MeshFormat> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        ext.to_ascii_lowercase()
            .parse()
            .map_err(|_| Error::Config(format!("cannot infer mesh format of {}", path.display())))
    }
}

impl FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obj" => Ok(MeshFormat::Obj),
            "vtk" => Ok(MeshFormat::Vtk),
            _ => Err(Error::Config(format!("unknown mesh format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// Polygon soup as read from a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshData {
    pub vertices: Vec<Point3>,
    pub faces: Vec<Vec<usize>>,
    /// Group name of each face, if any.
    pub groups: Vec<Option<String>>,
    /// Source line of each face.
    pub lines: Vec<usize>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number(token: Option<&str>, line: usize) -> Result<f64> {
    let t = token.ok_or_else(|| parse_err(line, "missing coordinate"))?;
    let x: f64 = t.parse().map_err(|_| parse_err(line, format!("bad number `{t}`")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("non-finite number `{t}`")));
    }
    Ok(x)
}

pub fn parse_obj(text: &str) -> Result<MeshData> {
    let mut data = MeshData::default();
    let mut group: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or_default();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let p = Point3::new(number(tokens.next(), line)?, number(tokens.next(), line)?, number(tokens.next(), line)?);
                data.vertices.push(p);
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or_default();
                    let k: i64 = head.parse().map_err(|_| parse_err(line, format!("bad face index `{t}`")))?;
                    let n = data.vertices.len() as i64;
                    let index = match k {
                        k if k > 0 => k - 1,
                        k if k < 0 => n + k,
                        _ => -1,
                    };
                    if index < 0 || index >= n {
                        return Err(parse_err(line, format!("face index {k} out of range")));
                    }
                    face.push(index as usize);
                }
                if face.len() != 3 && face.len() != 4 {
                    return Err(parse_err(line, format!("face with {} vertices; only triangles and quads are supported", face.len())));
                }
                data.faces.push(face);
                data.groups.push(group.clone());
                data.lines.push(line);
            }
            Some("g") | Some("o") => group = tokens.next().map(str::to_string),
            Some("vn" | "vt" | "s" | "usemtl" | "mtllib" | "l") | None => {}
            Some(other) => return Err(parse_err(line, format!("unsupported record `{other}`"))),
        }
    }
    Ok(data)
}

/// Label codes of the VTK `component` cell scalar.
fn component_code(c: Component) -> usize {
    match c {
        Component::Wall => 0,
        Component::Leaflet0 => 1,
        Component::Leaflet1 => 2,
        Component::Leaflet2 => 3,
    }
}

fn component_from_code(code: usize) -> Option<Component> {
    [Component::Wall, Component::Leaflet0, Component::Leaflet1, Component::Leaflet2].get(code).copied()
}

/// Whitespace-separated tokens with their line numbers.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    at: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, at: 0 }
    }

    fn line(&self) -> usize {
        self.items.get(self.at).or(self.items.last()).map_or(0, |t| t.0)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.line();
        let t = self.items.get(self.at).ok_or_else(|| parse_err(line, "unexpected end of file"))?;
        self.at += 1;
        Ok(t.1)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let t = self.next()?;
        if !t.eq_ignore_ascii_case(word) {
            return Err(parse_err(line, format!("expected `{word}`, found `{t}`")));
        }
        Ok(())
    }

    fn usize(&mut self) -> Result<usize> {
        let line = self.line();
        let t = self.next()?;
        t.parse().map_err(|_| parse_err(line, format!("expected an integer, found `{t}`")))
    }

    fn f64(&mut self) -> Result<f64> {
        let line = self.line();
        let t = self.next()?;
        number(Some(t), line)
    }
}

/// Legacy ASCII VTK POLYDATA with POINTS, POLYGONS and an optional integer
/// `component` cell scalar.
pub fn parse_vtk(text: &str) -> Result<MeshData> {
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with("# vtk DataFile")) {
        return Err(parse_err(1, "missing `# vtk DataFile` header"));
    }
    lines.next();
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(parse_err(3, "only ASCII VTK files are supported"));
    }
    let body_start: usize = text.lines().take(3).map(|l| l.len() + 1).sum();
    let mut tokens = Tokens::new(text.get(body_start..).unwrap_or_default());
    for t in &mut tokens.items {
        t.0 += 3;
    }
    tokens.expect("DATASET")?;
    tokens.expect("POLYDATA")?;
    let mut data = MeshData::default();
    let mut labels: Option<Vec<usize>> = None;
    while tokens.at < tokens.items.len() {
        let line = tokens.line();
        match tokens.next()?.to_ascii_uppercase().as_str() {
            "POINTS" => {
                let n = tokens.usize()?;
                tokens.next()?;
                for _ in 0..n {
                    data.vertices.push(Point3::new(tokens.f64()?, tokens.f64()?, tokens.f64()?));
                }
            }
            "POLYGONS" => {
                let n = tokens.usize()?;
                tokens.usize()?;
                for _ in 0..n {
                    let line = tokens.line();
                    let k = tokens.usize()?;
                    let face = (0..k).map(|_| tokens.usize()).collect::<Result<Vec<_>>>()?;
                    if k != 3 && k != 4 {
                        return Err(parse_err(line, format!("polygon with {k} vertices; only triangles and quads are supported")));
                    }
                    if let Some(&bad) = face.iter().find(|&&v| v >= data.vertices.len()) {
                        return Err(parse_err(line, format!("polygon index {bad} out of range")));
                    }
                    data.faces.push(face);
                    data.lines.push(line);
                }
            }
            "CELL_DATA" => {
                let n = tokens.usize()?;
                tokens.expect("SCALARS")?;
                let name = tokens.next()?;
                tokens.next()?;
                let mut t = tokens.next()?;
                if t == "1" {
                    t = tokens.next()?;
                }
                if !t.eq_ignore_ascii_case("LOOKUP_TABLE") {
                    return Err(parse_err(tokens.line(), "expected LOOKUP_TABLE"));
                }
                tokens.next()?;
                let values = (0..n).map(|_| tokens.usize()).collect::<Result<Vec<_>>>()?;
                if name == "component" {
                    labels = Some(values);
                }
            }
            other => return Err(parse_err(line, format!("unsupported VTK section `{other}`"))),
        }
    }
    data.groups = match labels {
        Some(codes) => {
            if codes.len() != data.faces.len() {
                return Err(parse_err(tokens.line(), "cell data count differs from polygon count"));
            }
            codes
                .into_iter()
                .zip(&data.lines)
                .map(|(c, &line)| {
                    component_from_code(c)
                        .map(|c| Some(c.name().to_string()))
                        .ok_or_else(|| parse_err(line, format!("unknown component code {c}")))
                })
                .collect::<Result<_>>()?
        }
        None => vec![None; data.faces.len()],
    };
    Ok(data)
}

pub fn read_mesh_data(path: &Path) -> Result<MeshData> {
    let text = fs::read_to_string(path)?;
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Vtk => parse_vtk(&text),
    }
}

/// `<stem>.landmarks.json` next to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("landmarks.json")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    #[serde(default)]
    pub landmarks: BTreeMap<Landmark, usize>,
    #[serde(default)]
    pub loops: IndexMap<String, Vec<usize>>,
}

impl Sidecar {
    pub fn of(mesh: &QuadMesh) -> Sidecar {
        Sidecar {
            landmarks: mesh.landmarks.clone(),
            loops: mesh
                .boundary_loops
                .iter()
                .map(|lp| {
                    let mut v = lp.vertices.clone();
                    if lp.closed {
                        v.push(v[0]);
                    }
                    (lp.name.clone(), v)
                })
                .collect(),
        }
    }

    pub fn boundary_loops(&self) -> Vec<BoundaryLoop> {
        self.loops
            .iter()
            .map(|(name, v)| {
                let closed = v.len() > 2 && v.first() == v.last();
                let vertices = if closed { v[..v.len() - 1].to_vec() } else { v.clone() };
                BoundaryLoop::new(name.clone(), vertices, closed)
            })
            .collect()
    }
}

impl MeshData {
    /// Quad mesh with labels from the face groups (`wall` when ungrouped).
    /// Loops and landmarks come from `sidecar`, or without one loops are
    /// extracted from the boundary and landmarks left empty.
    pub fn into_quad_mesh(self, sidecar: Option<Sidecar>) -> Result<QuadMesh> {
        let mut quads = Vec::with_capacity(self.faces.len());
        let mut labels = Vec::with_capacity(self.faces.len());
        for ((face, group), &line) in self.faces.iter().zip(&self.groups).zip(&self.lines) {
            let quad: [usize; 4] = face
                .as_slice()
                .try_into()
                .map_err(|_| parse_err(line, format!("expected a quad, found a {}-gon", face.len())))?;
            quads.push(quad);
            labels.push(match group {
                Some(g) => g.parse().map_err(|_| parse_err(line, format!("unknown component group `{g}`")))?,
                None => Component::Wall,
            });
        }
        let mut mesh = QuadMesh {
            vertices: self.vertices,
            quads,
            labels,
            ..Default::default()
        };
        match sidecar {
            Some(s) => {
                mesh.boundary_loops = s.boundary_loops();
                mesh.landmarks = s.landmarks;
            }
            None => mesh.boundary_loops = extract_boundary_loops(&mesh)?,
        }
        mesh.validate().into_result()?;
        Ok(mesh)
    }

    /// Triangle surface; quads are split along their 0-2 diagonal.
    pub fn into_tri_surface(self) -> Result<TriSurface> {
        let mut triangles = Vec::with_capacity(self.faces.len());
        for f in &self.faces {
            match f.as_slice() {
                &[a, b, c] => triangles.push([a, b, c]),
                &[a, b, c, d] => {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
                _ => unreachable!("parsers reject other arities"),
            }
        }
        TriSurface::new(self.vertices, triangles)
    }
}

/// Reads a quad mesh and, if present, its sidecar. With `require_sidecar` a
/// missing sidecar is an error.
pub fn read_quad_mesh(path: &Path, require_sidecar: bool) -> Result<QuadMesh> {
    let data = read_mesh_data(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&side)?)?)
    } else if require_sidecar {
        return Err(Error::Config(format!("missing landmark sidecar {}", side.display())));
    } else {
        None
    };
    data.into_quad_mesh(sidecar)
}

pub fn read_tri_surface(path: &Path) -> Result<TriSurface> {
    read_mesh_data(path)?.into_tri_surface()
}

fn push_point(out: &mut String, prefix: &str, p: &Point3) {
    let _ = writeln!(out, "{prefix}{:.9} {:.9} {:.9}", p.x, p.y, p.z);
}

pub fn quad_mesh_to_obj(mesh: &QuadMesh) -> String {
    let mut out = String::new();
    for p in &mesh.vertices {
        push_point(&mut out, "v ", p);
    }
    let mut current = None;
    for (q, &label) in mesh.quads.iter().zip(&mesh.labels) {
        if current != Some(label) {
            let _ = writeln!(out, "g {label}");
            current = Some(label);
        }
        let _ = writeln!(out, "f {} {} {} {}", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1);
    }
    out
}

pub fn tri_surface_to_obj(surface: &TriSurface) -> String {
    let mut out = String::new();
    for p in &surface.vertices {
        push_point(&mut out, "v ", p);
    }
    for t in &surface.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

fn vtk_polydata(vertices: &[Point3], faces: &[&[usize]], labels: Option<&[Component]>) -> String {
    let mut out = String::from("# vtk DataFile Version 3.0\nquadfit mesh\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {} double", vertices.len());
    for p in vertices {
        push_point(&mut out, "", p);
    }
    let size: usize = faces.iter().map(|f| f.len() + 1).sum();
    let _ = writeln!(out, "POLYGONS {} {size}", faces.len());
    for f in faces {
        let _ = write!(out, "{}", f.len());
        for v in *f {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    if let Some(labels) = labels {
        let _ = writeln!(out, "CELL_DATA {}\nSCALARS component int 1\nLOOKUP_TABLE default", labels.len());
        for &c in labels {
            let _ = writeln!(out, "{}", component_code(c));
        }
    }
    out
}

pub fn quad_mesh_to_vtk(mesh: &QuadMesh) -> String {
    let faces: Vec<&[usize]> = mesh.quads.iter().map(|q| q.as_slice()).collect();
    vtk_polydata(&mesh.vertices, &faces, Some(&mesh.labels))
}

pub fn tri_surface_to_vtk(surface: &TriSurface) -> String {
    let faces: Vec<&[usize]> = surface.triangles.iter().map(|t| t.as_slice()).collect();
    vtk_polydata(&surface.vertices, &faces, None)
}

fn to_json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes the mesh and its sidecar.
pub fn write_quad_mesh(mesh: &QuadMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let text = match format {
        MeshFormat::Obj => quad_mesh_to_obj(mesh),
        MeshFormat::Vtk => quad_mesh_to_vtk(mesh),
    };
    fs::write(path, text)?;
    fs::write(sidecar_path(path), to_json_text(&Sidecar::of(mesh))?)?;
    Ok(())
}

pub fn write_tri_surface(surface: &TriSurface, path: &Path, format: MeshFormat) -> Result<()> {
    let text = match format {
        MeshFormat::Obj => tri_surface_to_obj(surface),
        MeshFormat::Vtk => tri_surface_to_vtk(surface),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_constraints(path: &Path) -> Result<BoundaryConstraintSet> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_constraints(constraints: &BoundaryConstraintSet, path: &Path) -> Result<()> {
    fs::write(path, to_json_text(constraints)?)?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json_text(value)?)?;
    Ok(())
}

/// Settings of the evaluation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Refinement level of synthetic target surfaces.
    pub target_level: u32,
    /// Random meshes per loss in the gradient check.
    pub gradcheck_cases: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            target_level: 3,
            gradcheck_cases: 20,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
        }
    }
}

/// Input and output locations. Relative paths are taken from the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub mesh_format: MeshFormat,
    pub report_format: ReportFormat,
    pub template: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: PathBuf::from("out"),
            mesh_format: MeshFormat::Obj,
            report_format: ReportFormat::Json,
            template: None,
            target: None,
            constraints: None,
            truth: None,
        }
    }
}

/// The complete configuration of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub template: TemplateSpec,
    pub warp: WarpSpec,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl RunConfig {
    /// Parses a configuration document; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        self.template.check()?;
        self.fit.check()?;
        if self.eval.target_level > 5 {
            return Err(Error::Config("eval.target_level must be at most 5".into()));
        }
        if !(self.eval.gradcheck_step > 0.0 && self.eval.gradcheck_tolerance > 0.0) {
            return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
        }
        let paths = [&self.io.template, &self.io.target, &self.io.constraints, &self.io.truth];
        if self.io.out_dir.as_os_str().is_empty() || paths.into_iter().flatten().any(|p| p.as_os_str().is_empty()) {
            return Err(Error::Config("empty path in io section".into()));
        }
        Ok(())
    }
}

fn csv_text(rows: impl IntoIterator<Item = Vec<String>>, header: &[&str]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(&r).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

fn quality_rows(q: &QualityReport) -> Vec<Vec<String>> {
    let mut quality = vec![
        ("quads".to_string(), q.quads as f64),
        ("degenerate".to_string(), q.degenerate as f64),
        ("inverted".to_string(), q.inverted as f64),
    ];
    for (name, s) in [
        ("aspect", &q.aspect),
        ("corner_deviation", &q.corner_deviation),
        ("flatness", &q.flatness),
        ("scaled_jacobian", &q.scaled_jacobian),
    ] {
        quality.push((format!("{name}_min"), s.min));
        quality.push((format!("{name}_mean"), s.mean));
        quality.push((format!("{name}_max"), s.max));
    }
    quality
        .into_iter()
        .map(|(metric, v)| vec!["quality".into(), metric, v.to_string()])
        .collect()
}

/// Quality report as CSV with the per-case columns, region `quality`.
pub fn quality_csv(report: &QualityReport) -> Result<String> {
    csv_text(quality_rows(report), &["region", "metric", "value"])
}

/// Per-case report as CSV with columns `region,metric,value`. Region rows
/// carry `appd`, `chamfer` and `hausdorff`; landmark errors use the region
/// `landmarks`; quality statistics use the region `quality`.
pub fn metrics_csv(report: &MetricsReport) -> Result<String> {
    let mut rows = Vec::new();
    for (region, m) in &report.regions {
        for (name, v) in ["appd", "chamfer", "hausdorff"].iter().zip(m.values()) {
            rows.push(vec![region.to_string(), name.to_string(), v.to_string()]);
        }
    }
    for (lm, v) in &report.landmarks {
        rows.push(vec!["landmarks".into(), lm.to_string(), v.to_string()]);
    }
    rows.extend(quality_rows(&report.quality));
    csv_text(rows, &["region", "metric", "value"])
}

/// Aggregate report as CSV with columns `region,metric,mean,std`.
pub fn aggregate_csv(report: &AggregateReport) -> Result<String> {
    let mut rows = Vec::new();
    for (region, metrics) in &report.regions {
        for name in ["appd", "chamfer", "hausdorff"] {
            if let Some(m) = metrics.get(name) {
                rows.push(vec![region.to_string(), name.to_string(), m.mean.to_string(), m.std.to_string()]);
            }
        }
    }
    for (lm, m) in &report.landmarks {
        rows.push(vec!["landmarks".into(), lm.to_string(), m.mean.to_string(), m.std.to_string()]);
    }
    csv_text(rows, &["region", "metric", "mean", "std"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_template, planar_grid};

    #[test]
    fn obj_round_trip() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.obj");
        write_quad_mesh(&template, &path, MeshFormat::Obj).unwrap();
        let back = read_quad_mesh(&path, true).unwrap();
        assert_eq!(back.quads, template.quads);
        assert_eq!(back.labels, template.labels);
        assert_eq!(back.boundary_loops, template.boundary_loops);
        assert_eq!(back.landmarks, template.landmarks);
        for (a, b) in back.vertices.iter().zip(&template.vertices) {
            assert!((a - b).amax() <= 1e-9);
        }
        let first = fs::read(&path).unwrap();
        write_quad_mesh(&template, &path, MeshFormat::Obj).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }

    #[test]
    fn one_group_per_component() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let obj = quad_mesh_to_obj(&template);
        let groups: Vec<&str> = obj.lines().filter(|l| l.starts_with("g ")).collect();
        assert_eq!(groups, ["g wall", "g leaflet0", "g leaflet1", "g leaflet2"]);
    }

    #[test]
    fn vtk_round_trip() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vtk");
        write_quad_mesh(&template, &path, MeshFormat::Vtk).unwrap();
        let back = read_quad_mesh(&path, true).unwrap();
        assert_eq!(back.quads, template.quads);
        assert_eq!(back.labels, template.labels);
    }

    #[test]
    fn pentagon_is_rejected_with_line() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0.5 2 0\nf 1 2 3 4 5\n";
        match parse_obj(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixed_faces_rejected_for_quad_mesh() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf 1 2 3\n";
        let data = parse_obj(text).unwrap();
        assert!(matches!(data.clone().into_quad_mesh(None), Err(Error::Parse { line: 6, .. })));
        assert_eq!(data.into_tri_surface().unwrap().triangles.len(), 3);
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.obj");
        fs::write(&path, quad_mesh_to_obj(&planar_grid(2, 2, 1.0))).unwrap();
        assert!(matches!(read_quad_mesh(&path, true), Err(Error::Config(_))));
        let mesh = read_quad_mesh(&path, false).unwrap();
        assert_eq!(mesh.boundary_loops.len(), 1);
        assert!(mesh.boundary_loops[0].closed);
    }

    #[test]
    fn run_config_is_strict() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        assert!(matches!(RunConfig::from_json(r#"{"fit": {"n2": 3, "bogus": 1}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"extra": {}}"#), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"warp": {"kind": "radial-bulge", "amplitude": 1.2}, "io": {"report_format": "csv"}}"#).unwrap();
        assert_eq!(c.warp, WarpSpec::RadialBulge { amplitude: 1.2 });
        assert_eq!(c.io.report_format, ReportFormat::Csv);
    }

    #[test]
    fn csv_schema() {
        let template = gen_template(&TemplateSpec::default()).unwrap();
        let report = MetricsReport::compute(&template, &template).unwrap();
        let text = metrics_csv(&report).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("region,metric,value"));
        assert!(text.contains("whole,appd,0\n"));
        let agg = aggregate_csv(&crate::metrics::aggregate(&[("a".into(), report)])).unwrap();
        assert!(agg.starts_with("region,metric,mean,std\n"));
    }
}
