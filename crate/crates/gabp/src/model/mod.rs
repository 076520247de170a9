//! Model types for pairwise Gaussian inference, their validation, random
//! generators, and JSON persistence.
//!
//! Two kinds of model share one graph abstraction:
//!
//! * [`LinearGaussianModel`]: nodes carry zero-mean Gaussian priors with
//!   covariance `W_i`; each undirected edge `{i, j}` carries one vector
//!   observation `y = A_ji x_i + A_ij x_j + z`, `z ~ N(0, R)`.
//! * [`GmrfModel`]: a Gaussian Markov random field in information form,
//!   `p(x) ~ exp(-x' J x / 2 + h' x)` with unit diagonal `J`; the edge set is
//!   exactly the off-diagonal sparsity pattern of `J`.
//!
//! Node ids are 1-based and contiguous. Construction enforces shapes;
//! semantic requirements (definiteness, rank, connectivity) are reported by
//! [`FactorGraphModel::validate`].

pub mod generate;
pub mod io;

use crate::numerics::{self, Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::fmt;

pub use generate::{generate_gmrf, generate_linear, GenerateError, Topology};

/// 1-based node identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    /// 0-based index for storage lookups.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-node data of a linear Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub id: NodeId,
    pub dim: usize,
    /// Prior covariance `W_i`, `dim x dim`.
    pub prior_cov: Matrix,
}

/// One observation shared by an unordered node pair. Stored once per edge
/// with the smaller id first: `coeff_i` multiplies the smaller-id endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeObservation {
    i: NodeId,
    j: NodeId,
    coeff_i: Matrix,
    coeff_j: Matrix,
    noise_cov: Matrix,
    obs: Vector,
}

impl EdgeObservation {
    /// Builds an edge observation. Endpoints are normalized so the smaller
    /// id comes first, swapping the coefficients accordingly.
    ///
    /// Panics if `a == b`; self-loops are not representable.
    pub fn new(
        a: NodeId,
        b: NodeId,
        coeff_a: Matrix,
        coeff_b: Matrix,
        noise_cov: Matrix,
        obs: Vector,
    ) -> Self {
        assert!(a != b, "edge endpoints must differ, got ({a}, {b})");
        if a < b {
            EdgeObservation {
                i: a,
                j: b,
                coeff_i: coeff_a,
                coeff_j: coeff_b,
                noise_cov,
                obs,
            }
        } else {
            EdgeObservation {
                i: b,
                j: a,
                coeff_i: coeff_b,
                coeff_j: coeff_a,
                noise_cov,
                obs,
            }
        }
    }

    /// Endpoints in canonical order (smaller id first).
    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.i, self.j)
    }

    /// The other endpoint of the edge.
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.i {
            self.j
        } else {
            self.i
        }
    }

    /// Coefficient matrix multiplying `x_of`.
    ///
    /// Panics if `of` is not an endpoint.
    pub fn coeff_of(&self, of: NodeId) -> &Matrix {
        if of == self.i {
            &self.coeff_i
        } else if of == self.j {
            &self.coeff_j
        } else {
            panic!("node {of} is not an endpoint of edge ({}, {})", self.i, self.j)
        }
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    pub fn obs(&self) -> &Vector {
        &self.obs
    }

    /// Observation dimension `m`.
    pub fn obs_dim(&self) -> usize {
        self.obs.nrows()
    }
}

/// Linear Gaussian pairwise measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub nodes: Vec<NodeParams>,
    pub edges: Vec<EdgeObservation>,
}

/// Gaussian Markov random field in information form.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrfModel {
    precision: Matrix,
    potential: Vector,
}

impl GmrfModel {
    /// Builds a GMRF from a dense information matrix and potential vector.
    ///
    /// Panics if `precision` is not square or `potential` has a different
    /// length; value-level requirements are left to `validate`.
    pub fn new(precision: Matrix, potential: Vector) -> Self {
        assert_eq!(
            precision.nrows(),
            precision.ncols(),
            "information matrix must be square"
        );
        assert_eq!(
            precision.nrows(),
            potential.nrows(),
            "potential length must match the information matrix"
        );
        GmrfModel {
            precision,
            potential,
        }
    }

    pub fn len(&self) -> usize {
        self.potential.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    pub fn potential(&self) -> &Vector {
        &self.potential
    }

    /// `J[a, b]`.
    pub fn coupling(&self, a: NodeId, b: NodeId) -> f64 {
        self.precision[(a.index(), b.index())]
    }

    /// `h[a]`.
    pub fn potential_at(&self, a: NodeId) -> f64 {
        self.potential[a.index()]
    }
}

/// Payload of a [`FactorGraphModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    LinearGaussian(LinearGaussianModel),
    Gmrf(GmrfModel),
}

/// A pairwise model together with its adjacency structure. The adjacency is
/// derived from the payload at construction and never mutated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraphModel {
    kind: ModelKind,
    /// Sorted neighbor lists, indexed by `NodeId::index()`.
    adjacency: Vec<Vec<NodeId>>,
}

impl FactorGraphModel {
    pub fn new(kind: ModelKind) -> Self {
        let adjacency = match &kind {
            ModelKind::LinearGaussian(m) => {
                let n = m.nodes.len();
                let mut adj = vec![Vec::new(); n];
                for e in &m.edges {
                    let (i, j) = e.endpoints();
                    if i.index() < n && j.index() < n {
                        if !adj[i.index()].contains(&j) {
                            adj[i.index()].push(j);
                        }
                        if !adj[j.index()].contains(&i) {
                            adj[j.index()].push(i);
                        }
                    }
                }
                for list in &mut adj {
                    list.sort();
                }
                adj
            }
            ModelKind::Gmrf(m) => {
                let n = m.len();
                let mut adj = vec![Vec::new(); n];
                for r in 0..n {
                    for c in (r + 1)..n {
                        if m.precision[(r, c)] != 0.0 || m.precision[(c, r)] != 0.0 {
                            adj[r].push(NodeId(c + 1));
                            adj[c].push(NodeId(r + 1));
                        }
                    }
                }
                adj
            }
        };
        FactorGraphModel { kind, adjacency }
    }

    pub fn linear(nodes: Vec<NodeParams>, edges: Vec<EdgeObservation>) -> Self {
        Self::new(ModelKind::LinearGaussian(LinearGaussianModel { nodes, edges }))
    }

    pub fn gmrf(precision: Matrix, potential: Vector) -> Self {
        Self::new(ModelKind::Gmrf(GmrfModel::new(precision, potential)))
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn is_gmrf(&self) -> bool {
        matches!(self.kind, ModelKind::Gmrf(_))
    }

    pub fn as_gmrf(&self) -> Option<&GmrfModel> {
        match &self.kind {
            ModelKind::Gmrf(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearGaussianModel> {
        match &self.kind {
            ModelKind::LinearGaussian(m) => Some(m),
            _ => None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// All node ids in ascending order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.node_count()).map(NodeId)
    }

    /// Sorted neighbors of `n`.
    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adjacency[n.index()]
    }

    /// Variable dimension of `n` (always 1 for GMRF models).
    pub fn dim(&self, n: NodeId) -> usize {
        match &self.kind {
            ModelKind::LinearGaussian(m) => m.nodes[n.index()].dim,
            ModelKind::Gmrf(_) => 1,
        }
    }

    /// Undirected edges in canonical `(lo, hi)` order, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (idx, nbrs) in self.adjacency.iter().enumerate() {
            let a = NodeId(idx + 1);
            for &b in nbrs {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Edge observation for the unordered pair `{a, b}` (linear models).
    pub fn edge_observation(&self, a: NodeId, b: NodeId) -> Option<&EdgeObservation> {
        let m = self.as_linear()?;
        m.edges.iter().find(|e| {
            let (i, j) = e.endpoints();
            (i == a && j == b) || (i == b && j == a)
        })
    }

    /// True when every node can reach every other node. Single-node and
    /// empty models count as connected.
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &nb in &self.adjacency[v] {
                if !seen[nb.index()] {
                    seen[nb.index()] = true;
                    count += 1;
                    stack.push(nb.index());
                }
            }
        }
        count == n
    }

    /// Graph diameter in hops; `None` when disconnected or empty.
    pub fn diameter(&self) -> Option<usize> {
        let n = self.node_count();
        if n == 0 {
            return None;
        }
        let mut diameter = 0;
        for start in 0..n {
            let dist = self.bfs_distances(start);
            for d in &dist {
                diameter = diameter.max((*d)?);
            }
        }
        Some(diameter)
    }

    fn bfs_distances(&self, start: usize) -> Vec<Option<usize>> {
        let n = self.node_count();
        let mut dist = vec![None; n];
        dist[start] = Some(0);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap();
            for &nb in &self.adjacency[v] {
                if dist[nb.index()].is_none() {
                    dist[nb.index()] = Some(dv + 1);
                    queue.push_back(nb.index());
                }
            }
        }
        dist
    }

    /// Breadth-first spanning tree from `root`, visiting neighbors in
    /// ascending id order. Returns `(parent, depth)` per node; the root has
    /// no parent and unreachable nodes have no depth.
    pub fn bfs_tree(&self, root: NodeId) -> Vec<(Option<NodeId>, Option<usize>)> {
        let n = self.node_count();
        let mut out: Vec<(Option<NodeId>, Option<usize>)> = vec![(None, None); n];
        out[root.index()].1 = Some(0);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            let dv = out[v.index()].1.unwrap();
            for &nb in &self.adjacency[v.index()] {
                if out[nb.index()].1.is_none() {
                    out[nb.index()] = (Some(v), Some(dv + 1));
                    queue.push_back(nb);
                }
            }
        }
        out
    }

    /// Checks the semantic requirements the algorithms rely on and returns
    /// every violation found. An empty report means the model is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        match &self.kind {
            ModelKind::LinearGaussian(m) => validate_linear(m, &mut v),
            ModelKind::Gmrf(m) => validate_gmrf(m, &mut v),
        }
        if !self.is_connected() {
            v.push(Violation::Disconnected);
        }
        ValidationReport { violations: v }
    }
}

/// Relative singular-value cutoff for the full-column-rank check.
const RANK_TOL: f64 = 1e-10;

fn has_full_column_rank(m: &Matrix) -> bool {
    if m.ncols() == 0 || m.nrows() < m.ncols() {
        return false;
    }
    let svd = m.clone().singular_values();
    let max = svd.iter().fold(0.0_f64, |a, &s| a.max(s));
    let min = svd.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    min > RANK_TOL * max.max(1.0)
}

fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn validate_linear(m: &LinearGaussianModel, out: &mut Vec<Violation>) {
    let n = m.nodes.len();
    if n == 0 {
        out.push(Violation::NoNodes);
        return;
    }
    let mut ids: Vec<usize> = m.nodes.iter().map(|p| p.id.0).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n || ids.first() != Some(&1) || ids.last() != Some(&n) {
        out.push(Violation::NodeIdsNotContiguous { count: n });
        return;
    }
    // positional indexing by id is used throughout, so require sorted order
    if m.nodes.iter().enumerate().any(|(k, p)| p.id.0 != k + 1) {
        out.push(Violation::NodesOutOfOrder);
        return;
    }
    let mut dims = vec![0usize; n];
    for p in &m.nodes {
        dims[p.id.index()] = p.dim;
        if p.dim == 0 {
            out.push(Violation::ZeroDimension { node: p.id });
            continue;
        }
        if p.prior_cov.nrows() != p.dim || p.prior_cov.ncols() != p.dim {
            out.push(Violation::PriorShape {
                node: p.id,
                rows: p.prior_cov.nrows(),
                cols: p.prior_cov.ncols(),
                dim: p.dim,
            });
            continue;
        }
        if !all_finite(&p.prior_cov) {
            out.push(Violation::NonFinite {
                location: format!("prior covariance of node {}", p.id),
            });
            continue;
        }
        if numerics::relative_asymmetry(&p.prior_cov) > numerics::SYMMETRY_TOL {
            out.push(Violation::PriorAsymmetric { node: p.id });
        } else if !numerics::is_pd(&p.prior_cov).unwrap_or(false) {
            out.push(Violation::PriorNotPd { node: p.id });
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &m.edges {
        let (i, j) = e.endpoints();
        if i.0 == 0 || j.0 == 0 || i.index() >= n || j.index() >= n {
            out.push(Violation::EdgeEndpointsOutOfRange { i, j });
            continue;
        }
        if !seen.insert((i, j)) {
            out.push(Violation::DuplicateEdge { i, j });
            continue;
        }
        let md = e.obs_dim();
        if md == 0 {
            out.push(Violation::EmptyObservation { i, j });
            continue;
        }
        let mut shape_ok = true;
        for (of, coeff) in [(i, &e.coeff_i), (j, &e.coeff_j)] {
            if coeff.nrows() != md || coeff.ncols() != dims[of.index()] {
                out.push(Violation::CoeffShape {
                    i,
                    j,
                    endpoint: of,
                    rows: coeff.nrows(),
                    cols: coeff.ncols(),
                    obs_dim: md,
                    dim: dims[of.index()],
                });
                shape_ok = false;
            }
        }
        if e.noise_cov.nrows() != md || e.noise_cov.ncols() != md {
            out.push(Violation::NoiseShape {
                i,
                j,
                rows: e.noise_cov.nrows(),
                cols: e.noise_cov.ncols(),
                obs_dim: md,
            });
            shape_ok = false;
        }
        if !shape_ok {
            continue;
        }
        if !all_finite(&e.coeff_i)
            || !all_finite(&e.coeff_j)
            || !all_finite(&e.noise_cov)
            || !e.obs.iter().all(|x| x.is_finite())
        {
            out.push(Violation::NonFinite {
                location: format!("edge ({i}, {j})"),
            });
            continue;
        }
        for (of, coeff) in [(i, &e.coeff_i), (j, &e.coeff_j)] {
            if !has_full_column_rank(coeff) {
                out.push(Violation::CoeffRankDeficient { i, j, endpoint: of });
            }
        }
        if numerics::relative_asymmetry(&e.noise_cov) > numerics::SYMMETRY_TOL {
            out.push(Violation::NoiseAsymmetric { i, j });
        } else if !numerics::is_pd(&e.noise_cov).unwrap_or(false) {
            out.push(Violation::NoiseNotPd { i, j });
        }
    }
}

fn validate_gmrf(m: &GmrfModel, out: &mut Vec<Violation>) {
    let n = m.len();
    if n == 0 {
        out.push(Violation::NoNodes);
        return;
    }
    if !all_finite(&m.precision) || !m.potential.iter().all(|x| x.is_finite()) {
        out.push(Violation::NonFinite {
            location: "information matrix or potential".to_string(),
        });
        return;
    }
    if numerics::relative_asymmetry(&m.precision) > numerics::SYMMETRY_TOL {
        out.push(Violation::PrecisionAsymmetric);
    }
    for k in 0..n {
        let d = m.precision[(k, k)];
        if (d - 1.0).abs() > numerics::SYMMETRY_TOL {
            out.push(Violation::DiagonalNotUnit {
                node: NodeId(k + 1),
                value: d,
            });
        }
    }
}

/// One semantic defect found by validation, with its location.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoNodes,
    NodeIdsNotContiguous { count: usize },
    NodesOutOfOrder,
    ZeroDimension { node: NodeId },
    PriorShape { node: NodeId, rows: usize, cols: usize, dim: usize },
    PriorAsymmetric { node: NodeId },
    PriorNotPd { node: NodeId },
    EdgeEndpointsOutOfRange { i: NodeId, j: NodeId },
    DuplicateEdge { i: NodeId, j: NodeId },
    EmptyObservation { i: NodeId, j: NodeId },
    CoeffShape {
        i: NodeId,
        j: NodeId,
        endpoint: NodeId,
        rows: usize,
        cols: usize,
        obs_dim: usize,
        dim: usize,
    },
    NoiseShape { i: NodeId, j: NodeId, rows: usize, cols: usize, obs_dim: usize },
    CoeffRankDeficient { i: NodeId, j: NodeId, endpoint: NodeId },
    NoiseAsymmetric { i: NodeId, j: NodeId },
    NoiseNotPd { i: NodeId, j: NodeId },
    NonFinite { location: String },
    PrecisionAsymmetric,
    DiagonalNotUnit { node: NodeId, value: f64 },
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoNodes => write!(f, "model has no nodes"),
            Violation::NodeIdsNotContiguous { count } => {
                write!(f, "node ids are not contiguous 1..={count}")
            }
            Violation::NodesOutOfOrder => {
                write!(f, "nodes are not listed in ascending id order")
            }
            Violation::ZeroDimension { node } => {
                write!(f, "zero variable dimension at node {node}")
            }
            Violation::PriorShape { node, rows, cols, dim } => write!(
                f,
                "prior covariance at node {node} is {rows}x{cols}, expected {dim}x{dim}"
            ),
            Violation::PriorAsymmetric { node } => {
                write!(f, "prior covariance not symmetric at node {node}")
            }
            Violation::PriorNotPd { node } => {
                write!(f, "prior covariance not positive definite at node {node}")
            }
            Violation::EdgeEndpointsOutOfRange { i, j } => {
                write!(f, "edge ({i}, {j}) references unknown nodes")
            }
            Violation::DuplicateEdge { i, j } => {
                write!(f, "duplicate edge ({i}, {j})")
            }
            Violation::EmptyObservation { i, j } => {
                write!(f, "empty observation on edge ({i}, {j})")
            }
            Violation::CoeffShape { i, j, endpoint, rows, cols, obs_dim, dim } => write!(
                f,
                "dimension mismatch on edge ({i}, {j}): coefficient of node {endpoint} \
                 is {rows}x{cols}, expected {obs_dim}x{dim}"
            ),
            Violation::NoiseShape { i, j, rows, cols, obs_dim } => write!(
                f,
                "dimension mismatch on edge ({i}, {j}): noise covariance is \
                 {rows}x{cols}, expected {obs_dim}x{obs_dim}"
            ),
            Violation::CoeffRankDeficient { i, j, endpoint } => write!(
                f,
                "rank deficient coefficient on edge ({i}, {j}) for node {endpoint}"
            ),
            Violation::NoiseAsymmetric { i, j } => {
                write!(f, "noise covariance not symmetric on edge ({i}, {j})")
            }
            Violation::NoiseNotPd { i, j } => {
                write!(f, "noise covariance not positive definite on edge ({i}, {j})")
            }
            Violation::NonFinite { location } => {
                write!(f, "non-finite entries in {location}")
            }
            Violation::PrecisionAsymmetric => {
                write!(f, "information matrix not symmetric")
            }
            Violation::DiagonalNotUnit { node, value } => {
                write!(f, "diagonal not unit at node {node} (got {value})")
            }
            Violation::Disconnected => write!(f, "graph is not connected"),
        }
    }
}

/// All violations found in a model; empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_linear() -> FactorGraphModel {
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
            Vector::from_row_slice(&[1.0]),
        )];
        FactorGraphModel::linear(nodes, edges)
    }

    fn chain_gmrf(n: usize, r: f64) -> FactorGraphModel {
        let mut j = Matrix::identity(n, n);
        for k in 0..n - 1 {
            j[(k, k + 1)] = -r;
            j[(k + 1, k)] = -r;
        }
        FactorGraphModel::gmrf(j, Vector::from_element(n, 0.5))
    }

    #[test]
    fn valid_two_node_model_passes() {
        assert!(two_node_linear().validate().is_empty());
    }

    #[test]
    fn valid_gmrf_chain_passes() {
        assert!(chain_gmrf(3, 0.4).validate().is_empty());
    }

    #[test]
    fn gmrf_bad_diagonal_is_flagged() {
        let mut j = Matrix::identity(2, 2);
        j[(0, 0)] = 2.0;
        j[(0, 1)] = -0.3;
        j[(1, 0)] = -0.3;
        let model = FactorGraphModel::gmrf(j, Vector::zeros(2));
        let report = model.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DiagonalNotUnit { node: NodeId(1), .. })));
        assert!(report.to_string().contains("diagonal not unit at node 1"));
    }

    #[test]
    fn rank_deficient_coefficient_is_flagged() {
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
            Matrix::zeros(2, 1),
            Matrix::from_row_slice(2, 1, &[1.0, 0.0]),
            Matrix::identity(2, 2),
            Vector::from_row_slice(&[1.0, 0.0]),
        )];
        let report = FactorGraphModel::linear(nodes, edges).validate();
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::CoeffRankDeficient {
                endpoint: NodeId(1),
                ..
            }
        )));
    }

    #[test]
    fn duplicate_edge_is_flagged() {
        let mut model = two_node_linear();
        if let ModelKind::LinearGaussian(m) = &mut model.kind {
            let dup = m.edges[0].clone();
            m.edges.push(dup);
        }
        let model = FactorGraphModel::new(model.kind);
        assert!(model
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateEdge { .. })));
    }

    #[test]
    fn disconnected_graph_is_flagged() {
        let nodes = (1..=3)
            .map(|k| NodeParams {
                id: NodeId(k),
                dim: 1,
                prior_cov: Matrix::identity(1, 1),
            })
            .collect();
        let edges = vec![EdgeObservation::new(
            NodeId(1),
            NodeId(2),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Vector::from_row_slice(&[0.0]),
        )];
        let report = FactorGraphModel::linear(nodes, edges).validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Disconnected)));
    }

    #[test]
    fn edge_normalizes_endpoint_order() {
        let e = EdgeObservation::new(
            NodeId(3),
            NodeId(1),
            Matrix::from_row_slice(1, 1, &[5.0]),
            Matrix::from_row_slice(1, 1, &[7.0]),
            Matrix::identity(1, 1),
            Vector::from_row_slice(&[0.0]),
        );
        assert_eq!(e.endpoints(), (NodeId(1), NodeId(3)));
        assert_eq!(e.coeff_of(NodeId(3))[(0, 0)], 5.0);
        assert_eq!(e.coeff_of(NodeId(1))[(0, 0)], 7.0);
    }

    #[test]
    fn diameter_and_neighbors_on_chain() {
        let model = chain_gmrf(4, 0.3);
        assert_eq!(model.diameter(), Some(3));
        assert_eq!(model.neighbors(NodeId(2)), &[NodeId(1), NodeId(3)]);
        assert_eq!(
            model.edges(),
            vec![
                (NodeId(1), NodeId(2)),
                (NodeId(2), NodeId(3)),
                (NodeId(3), NodeId(4))
            ]
        );
    }

    #[test]
    fn bfs_tree_prefers_small_ids() {
        let mut j = Matrix::identity(4, 4);
        for &(a, b) in &[(0, 1), (0, 2), (1, 3), (2, 3)] {
            j[(a, b)] = -0.2;
            j[(b, a)] = -0.2;
        }
        let model = FactorGraphModel::gmrf(j, Vector::zeros(4));
        let tree = model.bfs_tree(NodeId(1));
        assert_eq!(tree[0], (None, Some(0)));
        assert_eq!(tree[1], (Some(NodeId(1)), Some(1)));
        assert_eq!(tree[2], (Some(NodeId(1)), Some(1)));
        // Node 4 is reached through node 2, its smallest-id neighbor at depth 1.
        assert_eq!(tree[3], (Some(NodeId(2)), Some(2)));
    }
}
