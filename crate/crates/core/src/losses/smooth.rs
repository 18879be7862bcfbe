use serde::{Deserialize, Serialize};

use super::LossValue;
use crate::mesh::AdjacencyTable;
use crate::{Error, Point3, Result, Vec3};

/// Umbrella vector `Σ_{j∈N(i)} (v_j - v_i)` of every vertex.
pub(crate) fn umbrella(pred: &[Point3], adj: &AdjacencyTable) -> Vec<Vec3> {
    adj.neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + (pred[j] - pred[i])))
        .collect()
}

/// Mean squared umbrella vector.
pub fn loss_mc(pred: &[Point3], adj: &AdjacencyTable) -> Result<LossValue> {
    adj.check_len(pred.len())?;
    if pred.is_empty() {
        return Ok(LossValue::zero(0));
    }
    let n = pred.len() as f64;
    let r = umbrella(pred, adj);
    let mut out = LossValue::zero(pred.len());
    out.value = r.iter().map(|x| x.norm_squared()).sum::<f64>() / n;
    for (k, nbrs) in adj.neighbors.iter().enumerate() {
        let mut g = -r[k] * nbrs.len() as f64;
        for &j in nbrs {
            g += r[j];
        }
        out.gradient[k] = g * (2.0 / n);
    }
    Ok(out)
}

/// `Σ_p ‖p - mean(N(p))‖²`.
pub fn loss_laplacian(pred: &[Point3], adj: &AdjacencyTable) -> Result<LossValue> {
    adj.check_len(pred.len())?;
    if let Some(i) = adj.neighbors.iter().position(|n| n.is_empty()) {
        return Err(Error::Topology(format!("vertex {i} has no neighbours")));
    }
    let r: Vec<Vec3> = adj
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + pred[j].coords) / nbrs.len() as f64;
            pred[i].coords - mean
        })
        .collect();
    let mut out = LossValue::zero(pred.len());
    out.value = r.iter().map(|x| x.norm_squared()).sum();
    for (p, nbrs) in adj.neighbors.iter().enumerate() {
        out.gradient[p] += r[p] * 2.0;
        let share = r[p] * (2.0 / nbrs.len() as f64);
        for &k in nbrs {
            out.gradient[k] -= share;
        }
    }
    Ok(out)
}

/// Target edge length for [`loss_edge`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mu {
    /// Mean edge length of the evaluated mesh, held constant for the gradient.
    Auto,
    Fixed(f64),
}

/// `Σ_p Σ_{k∈N(p)} |‖p - k‖² - μ²|`, over directed edges.
pub fn loss_edge(pred: &[Point3], adj: &AdjacencyTable, mu: Mu) -> Result<LossValue> {
    adj.check_len(pred.len())?;
    let mu = match mu {
        Mu::Fixed(m) if m > 0.0 && m.is_finite() => m,
        Mu::Fixed(m) => return Err(Error::Config(format!("edge target length {m} must be positive"))),
        Mu::Auto => {
            let (sum, count) = adj
                .neighbors
                .iter()
                .enumerate()
                .flat_map(|(i, n)| n.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
                .fold((0.0, 0usize), |(s, c), (i, j)| (s + (pred[i] - pred[j]).norm(), c + 1));
            if count == 0 {
                return Ok(LossValue::zero(pred.len()));
            }
            sum / count as f64
        }
    };
    let mut out = LossValue::zero(pred.len());
    for (p, nbrs) in adj.neighbors.iter().enumerate() {
        for &k in nbrs {
            let d = pred[p] - pred[k];
            let excess = d.norm_squared() - mu * mu;
            out.value += excess.abs();
            let s = if excess > 0.0 {
                1.0
            } else if excess < 0.0 {
                -1.0
            } else {
                0.0
            };
            out.gradient[p] += d * (2.0 * s);
            out.gradient[k] -= d * (2.0 * s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{finite_difference_gradient, relative_inf_error};
    use crate::synth::planar_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jitter(points: &[Point3], seed: u64, s: f64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points
            .iter()
            .map(|p| p + Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s)))
            .collect()
    }

    #[test]
    fn mc_center_of_grid_is_zero() {
        let mesh = planar_grid(2, 2, 1.0);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let r = umbrella(&mesh.vertices, &adj);
        assert_eq!(r[4], Vec3::zeros());
    }

    #[test]
    fn mc_hand_evaluated_term() {
        let pred = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let adj = AdjacencyTable {
            neighbors: vec![vec![1, 2, 3], vec![0], vec![0], vec![0]],
            boundary: vec![false; 4],
        };
        assert_eq!(umbrella(&pred, &adj)[0].norm_squared(), 1.0);
        let l = loss_mc(&pred, &adj).unwrap();
        let expected = (1.0 + 1.0 + 1.0 + 1.0) / 4.0;
        assert!((l.value - expected).abs() < 1e-15);
    }

    #[test]
    fn mc_gradient_matches_fd() {
        let mesh = planar_grid(4, 4, 1.0);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let pred = jitter(&mesh.vertices, 1, 0.3);
        let l = loss_mc(&pred, &adj).unwrap();
        let fd = finite_difference_gradient(|x| loss_mc(x, &adj).unwrap().value, &pred, 1e-5);
        assert!(relative_inf_error(&l.gradient, &fd) < 1e-5);
    }

    #[test]
    fn laplacian_single_node() {
        let pred = vec![Point3::new(0.0, 0.0, 1.0), Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)];
        let adj = AdjacencyTable {
            neighbors: vec![vec![1, 2], vec![0], vec![0]],
            boundary: vec![false; 3],
        };
        let l = loss_laplacian(&pred, &adj).unwrap();
        // node 0 contributes 1, the leaves 1 + 1 = 2 each
        assert!((l.value - 5.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_grid_interior_zero_and_fd() {
        let mesh = planar_grid(4, 4, 1.0);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let l = loss_laplacian(&mesh.vertices, &adj).unwrap();
        let brute: f64 = (0..mesh.vertices.len())
            .map(|i| {
                let n = &adj.neighbors[i];
                let mean = n.iter().map(|&j| mesh.vertices[j].coords).sum::<Vec3>() / n.len() as f64;
                (mesh.vertices[i].coords - mean).norm_squared()
            })
            .sum();
        assert!((l.value - brute).abs() < 1e-12);
        assert!(l.value > 0.0);
        let pred = jitter(&mesh.vertices, 2, 0.3);
        let l = loss_laplacian(&pred, &adj).unwrap();
        let fd = finite_difference_gradient(|x| loss_laplacian(x, &adj).unwrap().value, &pred, 1e-5);
        assert!(relative_inf_error(&l.gradient, &fd) < 1e-5);
    }

    #[test]
    fn laplacian_isolated_vertex() {
        let adj = AdjacencyTable {
            neighbors: vec![vec![]],
            boundary: vec![false],
        };
        assert!(matches!(loss_laplacian(&[Point3::origin()], &adj), Err(Error::Topology(_))));
    }

    #[test]
    fn edge_examples() {
        let mesh = planar_grid(3, 3, 0.5);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        assert_eq!(loss_edge(&mesh.vertices, &adj, Mu::Fixed(0.5)).unwrap().value, 0.0);
        assert_eq!(loss_edge(&mesh.vertices, &adj, Mu::Auto).unwrap().value, 0.0);

        let pred = vec![Point3::origin(), Point3::new(2.0, 0.0, 0.0)];
        let adj = AdjacencyTable {
            neighbors: vec![vec![1], vec![0]],
            boundary: vec![true; 2],
        };
        assert_eq!(loss_edge(&pred, &adj, Mu::Fixed(1.0)).unwrap().value, 6.0);
        assert!(loss_edge(&pred, &adj, Mu::Fixed(0.0)).is_err());
        assert!(loss_edge(&pred, &adj, Mu::Fixed(-1.0)).is_err());
    }

    #[test]
    fn translation_invariance() {
        let mesh = planar_grid(3, 4, 1.0);
        let adj = AdjacencyTable::build(&mesh).unwrap();
        let pred = jitter(&mesh.vertices, 5, 0.2);
        let moved: Vec<Point3> = pred.iter().map(|p| p + Vec3::new(3.0, -7.0, 11.0)).collect();
        for f in [
            |x: &[Point3], a: &AdjacencyTable| loss_mc(x, a).unwrap().value,
            |x: &[Point3], a: &AdjacencyTable| loss_laplacian(x, a).unwrap().value,
            |x: &[Point3], a: &AdjacencyTable| loss_edge(x, a, Mu::Auto).unwrap().value,
        ] {
            assert!((f(&pred, &adj) - f(&moved, &adj)).abs() < 1e-10);
        }
    }
}
