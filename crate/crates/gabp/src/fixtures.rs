//! Hand-sized models shared by the unit tests.

use crate::model::{EdgeObservation, FactorGraphModel, NodeId, NodeParams};
use crate::numerics::{Matrix, Vector};

/// Two scalar nodes with unit priors joined by one observation
/// `y = x1 + x2 + z`, unit noise. Posterior precision [[2, 1], [1, 2]],
/// potential (y, y); for y = 1 both means are 1/3 and variances 2/3.
pub(crate) fn two_node_line(y: f64) -> FactorGraphModel {
    let nodes = vec![
        NodeParams {
            id: NodeId(1),
            dim: 1,
            prior_cov: Matrix::identity(1, 1),
        },
        NodeParams {
            id: NodeId(2),
            dim: 1,
            prior_cov: Matrix::identity(1, 1),
        },
    ];
    let edges = vec![EdgeObservation::new(
        NodeId(1),
        NodeId(2),
        Matrix::identity(1, 1),
        Matrix::identity(1, 1),
        Matrix::identity(1, 1),
        Vector::from_element(1, y),
    )];
    FactorGraphModel::linear(nodes, edges)
}

/// Three-node chain GMRF with unit diagonal, couplings `-c` on (1,2) and
/// (2,3), and the given potential.
pub(crate) fn gmrf_chain3(c: f64, h: [f64; 3]) -> FactorGraphModel {
    let mut j = Matrix::identity(3, 3);
    for (a, b) in [(0, 1), (1, 2)] {
        j[(a, b)] = -c;
        j[(b, a)] = -c;
    }
    FactorGraphModel::gmrf(j, Vector::from_row_slice(&h))
}

/// Four-node cycle GMRF with unit diagonal and couplings `-r`.
pub(crate) fn gmrf_cycle4(r: f64, h: [f64; 4]) -> FactorGraphModel {
    let mut j = Matrix::identity(4, 4);
    for (a, b) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
        j[(a, b)] = -r;
        j[(b, a)] = -r;
    }
    FactorGraphModel::gmrf(j, Vector::from_row_slice(&h))
}
