//! Deterministic random-model generators for tests, benchmarks and the CLI.
//!
//! Everything is driven by a counter-based RNG seeded from a `u64`, so the
//! same arguments always produce bit-identical models.

use super::{EdgeObservation, FactorGraphModel, NodeId, NodeParams};
use crate::numerics::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Graph shapes the generators can produce. Grid dimensions are derived from
/// the node count (near-square, row-major); `ErdosRenyi` redraws until the
/// graph is connected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Chain,
    Cycle,
    Grid,
    ErdosRenyi { edge_prob: f64 },
    RandomTree,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("coupling must be nonzero and finite (an edge with zero coupling is not an edge)")]
    BadCoupling,
    #[error("{topology} topology needs at least {need} nodes, got {got}")]
    TopologyTooSmall {
        topology: &'static str,
        need: usize,
        got: usize,
    },
    #[error("edge probability must lie in (0, 1], got {0}")]
    BadEdgeProb(f64),
    #[error("could not draw a connected graph in {attempts} attempts")]
    CouldNotConnect { attempts: usize },
    #[error("node dimensions must be nonzero")]
    BadDims,
}

/// Undirected edges (1-based, lo < hi) for `n` nodes under `topology`.
fn topology_edges(
    n: usize,
    topology: Topology,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>, GenerateError> {
    match topology {
        Topology::Chain => Ok((1..n).map(|k| (k, k + 1)).collect()),
        Topology::Cycle => {
            if n < 3 {
                return Err(GenerateError::TopologyTooSmall {
                    topology: "cycle",
                    need: 3,
                    got: n,
                });
            }
            let mut e: Vec<(usize, usize)> = (1..n).map(|k| (k, k + 1)).collect();
            e.push((1, n));
            Ok(e)
        }
        Topology::Grid => {
            let rows = (n as f64).sqrt().floor().max(1.0) as usize;
            let cols = n.div_ceil(rows);
            let id = |r: usize, c: usize| r * cols + c + 1;
            let mut e = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = id(r, c);
                    if v > n {
                        continue;
                    }
                    if c + 1 < cols && id(r, c + 1) <= n {
                        e.push((v, id(r, c + 1)));
                    }
                    if r + 1 < rows && id(r + 1, c) <= n {
                        e.push((v, id(r + 1, c)));
                    }
                }
            }
            e.sort_unstable();
            Ok(e)
        }
        Topology::ErdosRenyi { edge_prob } => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(GenerateError::BadEdgeProb(edge_prob));
            }
            const ATTEMPTS: usize = 200;
            for _ in 0..ATTEMPTS {
                let mut e = Vec::new();
                for i in 1..=n {
                    for j in (i + 1)..=n {
                        if rng.random::<f64>() < edge_prob {
                            e.push((i, j));
                        }
                    }
                }
                if edges_connect(n, &e) {
                    return Ok(e);
                }
            }
            Err(GenerateError::CouldNotConnect { attempts: ATTEMPTS })
        }
        Topology::RandomTree => {
            // Uniform random attachment: node v picks an earlier anchor.
            let mut e = Vec::new();
            for v in 2..=n {
                let anchor = rng.random_range(1..v);
                e.push((anchor, v));
            }
            e.sort_unstable();
            Ok(e)
        }
    }
}

fn edges_connect(n: usize, edges: &[(usize, usize)]) -> bool {
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a - 1].push(b - 1);
        adj[b - 1].push(a - 1);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &nb in &adj[v] {
            if !seen[nb] {
                seen[nb] = true;
                count += 1;
                stack.push(nb);
            }
        }
    }
    count == n
}

/// Generates a GMRF with unit diagonal, off-diagonal `-coupling` on every
/// topology edge, and potentials drawn i.i.d. uniform from `[-1, 1]`.
///
/// Deterministic in `(n, topology, coupling, seed)`. A zero coupling is
/// rejected: the edge set is defined as the nonzero off-diagonal pattern, so
/// zero-coupling "edges" would silently vanish.
pub fn generate_gmrf(
    n: usize,
    topology: Topology,
    coupling: f64,
    seed: u64,
) -> Result<FactorGraphModel, GenerateError> {
    if coupling == 0.0 || !coupling.is_finite() {
        return Err(GenerateError::BadCoupling);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = topology_edges(n, topology, &mut rng)?;
    let mut j = Matrix::identity(n, n);
    for &(a, b) in &edges {
        j[(a - 1, b - 1)] = -coupling;
        j[(b - 1, a - 1)] = -coupling;
    }
    let h = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    Ok(FactorGraphModel::gmrf(j, h))
}

/// Generates a linear Gaussian model with identity priors, standard normal
/// coefficient matrices (redrawn until full column rank), isotropic noise
/// with variance drawn from `[0.5, 1.5]`, and observations synthesized from
/// a ground-truth state drawn from the prior.
///
/// `dims[k]` is the variable dimension of node `k + 1`. Returns the model
/// and the ground-truth states per node. Deterministic in
/// `(dims, topology, seed)`.
pub fn generate_linear(
    dims: &[usize],
    topology: Topology,
    seed: u64,
) -> Result<(FactorGraphModel, Vec<Vector>), GenerateError> {
    if dims.contains(&0) {
        return Err(GenerateError::BadDims);
    }
    let n = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = topology_edges(n, topology, &mut rng)?;

    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let truth: Vec<Vector> = dims
        .iter()
        .map(|&d| Vector::from_fn(d, |_, _| normal(&mut rng)))
        .collect();

    let nodes = (0..n)
        .map(|k| NodeParams {
            id: NodeId(k + 1),
            dim: dims[k],
            prior_cov: Matrix::identity(dims[k], dims[k]),
        })
        .collect();

    let mut obs_edges = Vec::with_capacity(edges.len());
    for &(a, b) in &edges {
        let (di, dj) = (dims[a - 1], dims[b - 1]);
        let m = di.max(dj);
        let draw_full_rank = |rng: &mut ChaCha8Rng, cols: usize| -> Matrix {
            loop {
                let cand = Matrix::from_fn(m, cols, |_, _| normal(rng));
                if super::has_full_column_rank(&cand) {
                    return cand;
                }
            }
        };
        let coeff_a = draw_full_rank(&mut rng, di);
        let coeff_b = draw_full_rank(&mut rng, dj);
        let sigma = rng.random_range(0.5..1.5);
        let noise = Matrix::identity(m, m) * sigma;
        let z = Vector::from_fn(m, |_, _| normal(&mut rng)) * sigma.sqrt();
        let y = &coeff_a * &truth[a - 1] + &coeff_b * &truth[b - 1] + z;
        obs_edges.push(EdgeObservation::new(
            NodeId(a),
            NodeId(b),
            coeff_a,
            coeff_b,
            noise,
            y,
        ));
    }
    Ok((FactorGraphModel::linear(nodes, obs_edges), truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{spectral_radius, SPECTRAL_TOL};

    #[test]
    fn gmrf_chain_has_expected_precision() {
        let model = generate_gmrf(3, Topology::Chain, 0.4, 7).unwrap();
        let g = model.as_gmrf().unwrap();
        let expected = Matrix::from_row_slice(
            3,
            3,
            &[1.0, -0.4, 0.0, -0.4, 1.0, -0.4, 0.0, -0.4, 1.0],
        );
        assert_eq!(g.precision(), &expected);
        assert!(g.potential().iter().all(|h| (-1.0..1.0).contains(h)));
        assert!(model.validate().is_empty());
    }

    #[test]
    fn gmrf_four_cycle_off_diagonal_radius() {
        let model = generate_gmrf(4, Topology::Cycle, 0.6, 3).unwrap();
        let g = model.as_gmrf().unwrap();
        let r = Matrix::identity(4, 4) - g.precision();
        let abs = r.map(|x| x.abs());
        let rho = spectral_radius(&abs, SPECTRAL_TOL).unwrap();
        approx::assert_relative_eq!(rho, 1.2, max_relative = 1e-12);
    }

    #[test]
    fn zero_coupling_is_rejected() {
        assert_eq!(
            generate_gmrf(2, Topology::Chain, 0.0, 5),
            Err(GenerateError::BadCoupling)
        );
    }

    #[test]
    fn cycle_needs_three_nodes() {
        assert!(matches!(
            generate_gmrf(2, Topology::Cycle, 0.3, 5),
            Err(GenerateError::TopologyTooSmall { .. })
        ));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_gmrf(6, Topology::Grid, 0.25, 11).unwrap();
        let b = generate_gmrf(6, Topology::Grid, 0.25, 11).unwrap();
        assert_eq!(a, b);
        let (la, ta) = generate_linear(&[2, 1, 2], Topology::Chain, 9).unwrap();
        let (lb, tb) = generate_linear(&[2, 1, 2], Topology::Chain, 9).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ta, tb);
    }

    #[test]
    fn linear_cycle_has_all_edges_and_validates() {
        let (model, truth) = generate_linear(&[2; 5], Topology::Cycle, 1).unwrap();
        assert_eq!(model.edges().len(), 5);
        assert_eq!(truth.len(), 5);
        assert!(model.validate().is_empty());
    }

    #[test]
    fn random_tree_is_connected_tree() {
        for seed in 0..10 {
            let model = generate_gmrf(9, Topology::RandomTree, 0.2, seed).unwrap();
            assert!(model.is_connected());
            assert_eq!(model.edges().len(), 8);
        }
    }

    #[test]
    fn erdos_renyi_is_connected() {
        let model = generate_gmrf(8, Topology::ErdosRenyi { edge_prob: 0.4 }, 0.15, 21).unwrap();
        assert!(model.is_connected());
        assert!(model.validate().is_empty());
    }

    #[test]
    fn grid_covers_all_nodes() {
        let model = generate_gmrf(7, Topology::Grid, 0.2, 2).unwrap();
        assert!(model.is_connected());
        assert_eq!(model.node_count(), 7);
    }
}
