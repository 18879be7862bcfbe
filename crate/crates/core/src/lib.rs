//! Structured quad-mesh template fitting.
//!
//! A quad template with fixed topology is deformed onto a target triangulated
//! surface in five stages: affine alignment under boundary constraints,
//! Laplacian relaxation, boundary-constrained optimization, interior
//! relaxation, and final projection. Because every fitted mesh shares the
//! template's connectivity, meshes can be compared node-to-node.
//!
//! The crate also provides the mesh losses used to train shape-deformation
//! networks (a two-term geometry + curvature loss for corresponded quad
//! meshes, and the four-term Chamfer/normal/edge/Laplacian composite used for
//! unstructured meshes), every loss with an analytic gradient, and the
//! evaluation metrics: APPD, Chamfer and Hausdorff distances, landmark errors
//! and element quality.
//!
//! # Modules
//!
//! - [`mesh`]: quad and triangle surface types, adjacency, validation
//! - [`spatial`]: BVH closest-point queries and a k-d tree for point sets
//! - [`losses`]: loss values and gradients, composition, finite differences
//! - [`fitter`]: the template-fitting pipeline
//! - [`metrics`]: evaluation metrics and quality statistics
//! - [`synth`]: synthetic valve-like template and warped targets
//! - [`io`]: OBJ / VTK mesh files, sidecars, configuration

pub mod error;
pub mod fitter;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::{AdjacencyTable, BoundaryLoop, Component, Landmark, QuadMesh, TriSurface};

/// Position of a mesh node, in millimetres.
pub type Point3 = nalgebra::Point3<f64>;
/// Displacement or gradient vector.
pub type Vec3 = nalgebra::Vector3<f64>;
