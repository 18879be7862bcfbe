use crate::losses::loss_mc;
use crate::mesh::AdjacencyTable;
use crate::{Error, Point3, Result, Vec3};

/// Smoothed positions with the mean-curvature loss before the first and
/// after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxed {
    pub vertices: Vec<Point3>,
    pub mc_trace: Vec<f64>,
}

/// Umbrella smoothing of the free vertices: each moves by `omega` towards the
/// mean of its neighbours, all at once. Whenever a full step would raise the
/// mean-curvature loss, the step is halved until it does not, so the loss
/// never increases.
pub fn relax_laplacian(
    vertices: &[Point3],
    adj: &AdjacencyTable,
    fixed: &[bool],
    iterations: usize,
    omega: f64,
) -> Result<Relaxed> {
    adj.check_len(vertices.len())?;
    if fixed.len() != vertices.len() {
        return Err(Error::Shape {
            expected: vertices.len(),
            actual: fixed.len(),
        });
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::Config(format!("relaxation factor {omega} outside (0, 1]")));
    }
    let mut x = vertices.to_vec();
    let mut current = loss_mc(&x, adj)?.value;
    let mut mc_trace = vec![current];
    for _ in 0..iterations {
        let pull: Vec<_> = (0..x.len())
            .map(|i| {
                let n = &adj.neighbors[i];
                if fixed[i] || n.is_empty() {
                    return Vec3::zeros();
                }
                n.iter().map(|&j| x[j].coords).sum::<Vec3>() / n.len() as f64 - x[i].coords
            })
            .collect();
        let mut step = omega;
        for _ in 0..60 {
            let trial: Vec<Point3> = x.iter().zip(&pull).map(|(p, d)| p + d * step).collect();
            let value = loss_mc(&trial, adj)?.value;
            if value <= current {
                x = trial;
                current = value;
                break;
            }
            step *= 0.5;
        }
        mc_trace.push(current);
    }
    Ok(Relaxed { vertices: x, mc_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planar_grid;

    #[test]
    fn uniform_grid_is_fixed_point() {
        let m = planar_grid(4, 4, 1.0);
        let adj = AdjacencyTable::build(&m).unwrap();
        let r = relax_laplacian(&m.vertices, &adj, &adj.boundary, 10, 0.5).unwrap();
        assert_eq!(r.vertices, m.vertices);
    }

    #[test]
    fn displaced_vertex_relaxes() {
        let m = planar_grid(4, 4, 1.0);
        let adj = AdjacencyTable::build(&m).unwrap();
        let mut x = m.vertices.clone();
        x[12] += Vec3::new(0.3, -0.2, 0.5);
        let r = relax_laplacian(&x, &adj, &adj.boundary, 1, 0.5).unwrap();
        assert!((r.vertices[12] - m.vertices[12]).norm() < (x[12] - m.vertices[12]).norm());
        assert!(r.mc_trace[1] < r.mc_trace[0]);
        for (i, b) in adj.boundary.iter().enumerate() {
            if *b {
                assert_eq!(r.vertices[i], x[i]);
            }
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = planar_grid(2, 2, 1.0);
        let adj = AdjacencyTable::build(&m).unwrap();
        let mut x = m.vertices.clone();
        x[4].z = 1.0;
        assert_eq!(relax_laplacian(&x, &adj, &adj.boundary, 0, 0.5).unwrap().vertices, x);
    }

    #[test]
    fn bad_omega_rejected() {
        let m = planar_grid(2, 2, 1.0);
        let adj = AdjacencyTable::build(&m).unwrap();
        assert!(relax_laplacian(&m.vertices, &adj, &adj.boundary, 1, 1.5).is_err());
        assert!(relax_laplacian(&m.vertices, &adj, &adj.boundary, 1, 0.0).is_err());
    }
}
