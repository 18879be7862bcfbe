//! Quad template and triangulated target surfaces.
//!
//! [`QuadMesh`] carries the template's fixed topology: quads wound
//! counter-clockwise seen from the outward side, one component label per quad,
//! named boundary loops and anatomical landmarks. Fitting only ever replaces
//! vertex positions; everything else is carried through unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result, Vec3};

/// Anatomical component a quad belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Wall,
    Leaflet0,
    Leaflet1,
    Leaflet2,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Leaflet0,
        Component::Leaflet1,
        Component::Leaflet2,
        Component::Wall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Wall => "wall",
            Component::Leaflet0 => "leaflet0",
            Component::Leaflet1 => "leaflet1",
            Component::Leaflet2 => "leaflet2",
        }
    }

    pub fn leaflet(k: usize) -> Component {
        match k % 3 {
            0 => Component::Leaflet0,
            1 => Component::Leaflet1,
            _ => Component::Leaflet2,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown component label `{s}`")))
    }
}

/// Hinge (lowest leaflet attachment) and commissure (leaflet junction) nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Landmark {
    H0,
    H1,
    H2,
    C01,
    C12,
    C20,
}

impl Landmark {
    pub const ALL: [Landmark; 6] = [
        Landmark::H0,
        Landmark::H1,
        Landmark::H2,
        Landmark::C01,
        Landmark::C12,
        Landmark::C20,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Landmark::H0 => "H0",
            Landmark::H1 => "H1",
            Landmark::H2 => "H2",
            Landmark::C01 => "C01",
            Landmark::C12 => "C12",
            Landmark::C20 => "C20",
        }
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Landmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Landmark::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown landmark `{s}`")))
    }
}

/// Named ordered sequence of boundary vertices.
///
/// A closed loop's last vertex connects back to its first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryLoop {
    pub name: String,
    pub vertices: Vec<usize>,
    pub closed: bool,
}

impl BoundaryLoop {
    pub fn new(name: impl Into<String>, vertices: Vec<usize>, closed: bool) -> Self {
        Self {
            name: name.into(),
            vertices,
            closed,
        }
    }

    /// Directed edges in loop order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.vertices.len();
        let mut edges: Vec<_> = self.vertices.windows(2).map(|w| (w[0], w[1])).collect();
        if self.closed && n > 2 {
            edges.push((self.vertices[n - 1], self.vertices[0]));
        }
        edges
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadMesh {
    pub vertices: Vec<Point3>,
    /// Counter-clockwise seen from the outward normal side.
    pub quads: Vec<[usize; 4]>,
    pub labels: Vec<Component>,
    pub boundary_loops: Vec<BoundaryLoop>,
    pub landmarks: BTreeMap<Landmark, usize>,
}

/// One broken invariant of a [`QuadMesh`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteVertex { vertex: usize },
    IndexOutOfRange { quad: usize, index: usize },
    RepeatedVertex { quad: usize },
    LabelCount { labels: usize, quads: usize },
    NonManifoldEdge { edge: (usize, usize), quads: usize },
    InconsistentOrientation { edge: (usize, usize) },
    LandmarkOutOfRange { landmark: Landmark, index: usize },
    LoopIndexOutOfRange { name: String, index: usize },
    LoopEdgeNotBoundary { name: String, edge: (usize, usize) },
    BoundaryEdgeUncovered { edge: (usize, usize) },
    BoundaryEdgeCoveredTwice { edge: (usize, usize) },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteVertex { vertex } => write!(f, "vertex {vertex} is not finite"),
            Violation::IndexOutOfRange { quad, index } => {
                write!(f, "quad {quad} references missing vertex {index}")
            }
            Violation::RepeatedVertex { quad } => write!(f, "quad {quad} repeats a vertex"),
            Violation::LabelCount { labels, quads } => {
                write!(f, "{labels} component labels for {quads} quads")
            }
            Violation::NonManifoldEdge { edge, quads } => {
                write!(f, "edge {edge:?} is shared by {quads} quads")
            }
            Violation::InconsistentOrientation { edge } => {
                write!(f, "edge {edge:?} is traversed in the same direction twice")
            }
            Violation::LandmarkOutOfRange { landmark, index } => {
                write!(f, "landmark {landmark} references missing vertex {index}")
            }
            Violation::LoopIndexOutOfRange { name, index } => {
                write!(f, "loop `{name}` references missing vertex {index}")
            }
            Violation::LoopEdgeNotBoundary { name, edge } => {
                write!(f, "loop `{name}` contains non-boundary edge {edge:?}")
            }
            Violation::BoundaryEdgeUncovered { edge } => {
                write!(f, "boundary edge {edge:?} is not covered by any loop")
            }
            Violation::BoundaryEdgeCoveredTwice { edge } => {
                write!(f, "boundary edge {edge:?} is covered by more than one loop")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        let shown: Vec<String> = self.violations.iter().take(8).map(|v| v.to_string()).collect();
        write!(f, "{}", shown.join("; "))?;
        if self.violations.len() > 8 {
            write!(f, "; and {} more", self.violations.len() - 8)?;
        }
        Ok(())
    }
}

/// Undirected edge key, smaller index first.
pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Directed edges of every face incident to each undirected edge.
fn edge_incidence<F: AsRef<[usize]>>(faces: &[F]) -> BTreeMap<(usize, usize), Vec<(usize, usize)>> {
    let mut map: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for face in faces {
        let f = face.as_ref();
        for k in 0..f.len() {
            let (a, b) = (f[k], f[(k + 1) % f.len()]);
            map.entry(edge_key(a, b)).or_default().push((a, b));
        }
    }
    map
}

impl QuadMesh {
    /// Checks every structural invariant; an empty report means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.vertices.len();

        for (i, v) in self.vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                violations.push(Violation::NonFiniteVertex { vertex: i });
            }
        }
        let mut indices_ok = true;
        for (qi, q) in self.quads.iter().enumerate() {
            for &index in q {
                if index >= n {
                    violations.push(Violation::IndexOutOfRange { quad: qi, index });
                    indices_ok = false;
                }
            }
            let distinct: BTreeSet<usize> = q.iter().copied().collect();
            if distinct.len() != 4 {
                violations.push(Violation::RepeatedVertex { quad: qi });
            }
        }
        if self.labels.len() != self.quads.len() {
            violations.push(Violation::LabelCount {
                labels: self.labels.len(),
                quads: self.quads.len(),
            });
        }
        for (&landmark, &index) in &self.landmarks {
            if index >= n {
                violations.push(Violation::LandmarkOutOfRange { landmark, index });
            }
        }

        let incidence = edge_incidence(&self.quads);
        let mut boundary_edges = BTreeSet::new();
        for (&edge, directed) in &incidence {
            match directed.len() {
                1 => {
                    boundary_edges.insert(edge);
                }
                2 => {
                    if directed[0] == directed[1] {
                        violations.push(Violation::InconsistentOrientation { edge });
                    }
                }
                quads => violations.push(Violation::NonManifoldEdge { edge, quads }),
            }
        }

        let mut covered = BTreeSet::new();
        for lp in &self.boundary_loops {
            let mut loop_ok = true;
            for &index in &lp.vertices {
                if index >= n {
                    violations.push(Violation::LoopIndexOutOfRange {
                        name: lp.name.clone(),
                        index,
                    });
                    loop_ok = false;
                }
            }
            if !loop_ok {
                continue;
            }
            for (a, b) in lp.edges() {
                let key = edge_key(a, b);
                if !boundary_edges.contains(&key) {
                    violations.push(Violation::LoopEdgeNotBoundary {
                        name: lp.name.clone(),
                        edge: key,
                    });
                } else if !covered.insert(key) {
                    violations.push(Violation::BoundaryEdgeCoveredTwice { edge: key });
                }
            }
        }
        if indices_ok {
            for &edge in boundary_edges.difference(&covered) {
                violations.push(Violation::BoundaryEdgeUncovered { edge });
            }
        }

        ValidationReport { violations }
    }

    pub fn boundary_loop(&self, name: &str) -> Option<&BoundaryLoop> {
        self.boundary_loops.iter().find(|l| l.name == name)
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> QuadMesh {
        QuadMesh {
            vertices,
            ..self.clone()
        }
    }

    /// Vertices incident to at least one quad labelled `component`, ascending.
    pub fn region_vertices(&self, component: Component) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .quads
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == component)
            .flat_map(|(q, _)| q.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        edge_incidence(&self.quads).into_keys().collect()
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        bounding_box_diagonal(&self.vertices)
    }

    /// Splits each quad along its 0–2 diagonal.
    pub fn triangulate(&self) -> Result<TriSurface> {
        let triangles = self
            .quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriSurface::new(self.vertices.clone(), triangles)
    }
}

pub fn bounding_box_diagonal(points: &[Point3]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut lo, mut hi) = (first.coords, first.coords);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm()
}

/// Mean length over the unique undirected edges of `faces`.
pub fn mean_edge_length<F: AsRef<[usize]>>(positions: &[Point3], faces: &[F]) -> f64 {
    let edges: BTreeSet<(usize, usize)> = faces
        .iter()
        .flat_map(|f| {
            let f = f.as_ref();
            (0..f.len()).map(move |k| edge_key(f[k], f[(k + 1) % f.len()]))
        })
        .collect();
    if edges.is_empty() {
        return 0.0;
    }
    edges
        .iter()
        .map(|&(a, b)| (positions[a] - positions[b]).norm())
        .sum::<f64>()
        / edges.len() as f64
}

/// Edge-connected neighbours of every vertex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencyTable {
    /// Sorted, duplicate-free.
    pub neighbors: Vec<Vec<usize>>,
    pub boundary: Vec<bool>,
}

impl AdjacencyTable {
    /// Adjacency of a validated quad mesh.
    pub fn build(mesh: &QuadMesh) -> Result<AdjacencyTable> {
        mesh.validate().into_result()?;
        Ok(AdjacencyTable::from_faces(mesh.vertices.len(), &mesh.quads))
    }

    /// Adjacency of arbitrary polygons; no validation.
    pub fn from_faces<F: AsRef<[usize]>>(vertex_count: usize, faces: &[F]) -> AdjacencyTable {
        let mut sets = vec![BTreeSet::new(); vertex_count];
        let mut boundary = vec![false; vertex_count];
        for (&(a, b), directed) in &edge_incidence(faces) {
            sets[a].insert(b);
            sets[b].insert(a);
            if directed.len() == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        AdjacencyTable {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            boundary,
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub(crate) fn check_len(&self, vertex_count: usize) -> Result<()> {
        if self.neighbors.len() != vertex_count {
            return Err(Error::Shape {
                expected: self.neighbors.len(),
                actual: vertex_count,
            });
        }
        Ok(())
    }
}

/// Maximal chains of boundary edges, oriented along the quad winding.
///
/// Chains that return to their start are reported closed. Loops are named
/// `boundary0`, `boundary1`, ... in order of their smallest starting edge.
pub fn extract_boundary_loops(mesh: &QuadMesh) -> Result<Vec<BoundaryLoop>> {
    let incidence = edge_incidence(&mesh.quads);
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut incoming: BTreeMap<usize, usize> = BTreeMap::new();
    for (edge, directed) in &incidence {
        match directed.len() {
            1 => {
                let (a, b) = directed[0];
                outgoing.entry(a).or_default().push(b);
                *incoming.entry(b).or_default() += 1;
            }
            2 => {}
            n => {
                return Err(Error::Topology(format!(
                    "edge {edge:?} is shared by {n} quads"
                )))
            }
        }
    }
    for targets in outgoing.values_mut() {
        targets.sort_unstable();
    }

    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut loops = Vec::new();
    // Chains that start at a vertex without incoming boundary edges are open;
    // walk those first so closed cycles are not cut through them.
    let mut starts: Vec<usize> = outgoing
        .keys()
        .copied()
        .filter(|v| !incoming.contains_key(v))
        .collect();
    starts.extend(outgoing.keys().copied());

    for start in starts {
        loop {
            let Some(&next) = outgoing[&start].iter().find(|&&b| !used.contains(&(start, b))) else {
                break;
            };
            let mut chain = vec![start];
            let (mut a, mut b) = (start, next);
            let mut closed = false;
            loop {
                used.insert((a, b));
                if b == start {
                    closed = true;
                    break;
                }
                chain.push(b);
                let Some(&c) = outgoing
                    .get(&b)
                    .and_then(|t| t.iter().find(|&&c| !used.contains(&(b, c))))
                else {
                    break;
                };
                a = b;
                b = c;
            }
            let name = format!("boundary{}", loops.len());
            loops.push(BoundaryLoop::new(name, chain, closed));
        }
    }
    Ok(loops)
}

/// Target surface: triangles with optional unit vertex normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriSurface {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

/// Triangles at or below this area (mm²) are degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

impl TriSurface {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<TriSurface> {
        let surface = TriSurface {
            vertices,
            triangles,
            vertex_normals: None,
        };
        surface.check()?;
        Ok(surface)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.vertices.len();
        for (ti, t) in self.triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::Geometry(format!(
                    "triangle {ti} references missing vertex {bad}"
                )));
            }
            if self.triangle_area(ti) <= DEGENERATE_AREA {
                return Err(Error::Geometry(format!("triangle {ti} is degenerate")));
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    actual: normals.len(),
                });
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::Geometry(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted vertex normals following the triangle winding. Vertices
    /// without incident triangles get `+z`.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for &[a, b, c] in &self.triangles {
            let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
            for i in [a, b, c] {
                acc[i] += n;
            }
        }
        self.vertex_normals = Some(
            acc.into_iter()
                .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z))
                .collect(),
        );
    }

    pub fn with_vertex_normals(mut self) -> Self {
        self.compute_vertex_normals();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `nx` × `ny` quads in the z = 0 plane, unit spacing, one boundary loop.
    pub(crate) fn grid(nx: usize, ny: usize) -> QuadMesh {
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Point3::new(i as f64, j as f64, 0.0));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut quads = Vec::new();
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

    #[test]
    fn planar_grid_is_valid() {
        assert!(grid(2, 2).validate().is_valid());
    }

    #[test]
    fn reversed_winding_is_reported() {
        let mut mesh = grid(2, 2);
        mesh.quads[0].reverse();
        let report = mesh.validate();
        let orientation = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::InconsistentOrientation { .. }))
            .count();
        assert!((1..=2).contains(&orientation), "{report}");
    }

    #[test]
    fn out_of_range_index_is_reported() {
        let mut mesh = grid(2, 2);
        mesh.quads[3][2] = mesh.vertices.len();
        assert!(mesh
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::IndexOutOfRange { .. })));
    }

    #[test]
    fn missing_loop_coverage_is_reported() {
        let mut mesh = grid(2, 2);
        mesh.boundary_loops.clear();
        assert_eq!(mesh.validate().violations.len(), 8);
    }

    #[test]
    fn single_quad_adjacency_and_loop() {
        let mesh = grid(1, 1);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        assert!(adj.neighbors.iter().all(|n| n.len() == 2));
        assert!(adj.boundary.iter().all(|&b| b));
        let loops = extract_boundary_loops(&mesh).unwrap();
        assert_eq!(loops.len(), 1);
        assert!(loops[0].closed);
        assert_eq!(loops[0].vertices.len(), 4);
        assert_eq!(loops[0].vertices, vec![0, 1, 3, 2]);
    }

    #[test]
    fn grid_valence() {
        let mesh = grid(2, 2);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        assert_eq!(adj.neighbors[4].len(), 4);
        for corner in [0, 2, 6, 8] {
            assert_eq!(adj.neighbors[corner].len(), 2);
        }
        assert!(!adj.boundary[4]);
    }

    #[test]
    fn grid_boundary_is_one_eight_loop() {
        let loops = extract_boundary_loops(&grid(2, 2)).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].vertices.len(), 8);
        assert!(loops[0].closed);
    }

    #[test]
    fn non_manifold_edge_is_a_topology_error() {
        let mut mesh = grid(1, 1);
        mesh.vertices.push(Point3::new(0.5, 0.5, 1.0));
        mesh.vertices.push(Point3::new(0.5, 0.5, 2.0));
        mesh.quads.push([0, 1, 4, 5]);
        mesh.quads.push([1, 0, 5, 4]);
        assert!(matches!(
            extract_boundary_loops(&mesh),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let v = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        assert!(TriSurface::new(v, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn region_membership_includes_seams() {
        let mut mesh = grid(2, 1);
        mesh.labels[1] = Component::Leaflet0;
        assert_eq!(mesh.region_vertices(Component::Wall), vec![0, 1, 3, 4]);
        assert_eq!(mesh.region_vertices(Component::Leaflet0), vec![1, 2, 4, 5]);
    }
}
