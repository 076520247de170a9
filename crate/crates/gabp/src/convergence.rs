//! Certification that the mean iteration of synchronous belief propagation
//! contracts, checked per node from locally held data, plus the centralized
//! baselines those local certificates are measured against.
//!
//! Message information evolves independently of message means, so it is
//! driven to its fixed point first. With information frozen, one sweep acts
//! on the stacked vector of message means as an affine map `v = b - Q v`.
//! The rows of `Q` owned by node `j` involve only the node's incident edge
//! data, its own outgoing message covariances, and the final information it
//! received from direct neighbors, and they are nonzero only at columns of
//! messages addressed to `j`. Distinct nodes' row blocks therefore have
//! disjoint column support, `Q_j Q_i^T = 0` for `i != j`, and
//! `rho(Q Q^T) = max_j rho(Q_j Q_j^T)`: every node can evaluate its own
//! share of the global contraction condition without seeing the rest of
//! the network.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::{
    self, DirectedEdge, GaussianMessage, MessageDirection, MessageState,
};
use crate::error::Error;
use crate::model::{EdgeObservation, FactorGraphModel, GmrfModel, NodeId};
use crate::numerics::{self, Matrix, Vector};
use crate::oracle;

/// Fixed point of the information half of the message recursion.
///
/// Linear models fill the three matrix maps: final variable-to-factor
/// information per directed edge, its inverse (the outgoing covariance,
/// positive definite), and the final factor-to-variable information. GMRF
/// models fill only the scalar precision deltas.
#[derive(Debug, Clone)]
pub struct FixedPointInfo {
    pub v2f_info: BTreeMap<DirectedEdge, Matrix>,
    pub v2f_cov: BTreeMap<DirectedEdge, Matrix>,
    pub f2v_info: BTreeMap<DirectedEdge, Matrix>,
    pub deltas: BTreeMap<DirectedEdge, f64>,
    /// Residual of the final sweep; strictly below the requested tolerance.
    pub residual: f64,
    /// Sweeps performed.
    pub iterations: usize,
}

/// Max absolute entrywise change between two equally-keyed matrix maps.
/// A NaN difference poisons the result so a diverging recursion can never
/// look settled; infinite differences stay infinite for the same reason.
pub(crate) fn matrix_map_residual(
    old: &BTreeMap<DirectedEdge, Matrix>,
    new: &BTreeMap<DirectedEdge, Matrix>,
) -> f64 {
    let mut worst = 0.0_f64;
    for (key, m) in new {
        for (a, b) in m.iter().zip(old[key].iter()) {
            let d = (a - b).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

/// Scalar-map counterpart of [`matrix_map_residual`].
pub(crate) fn scalar_map_residual(
    old: &BTreeMap<DirectedEdge, f64>,
    new: &BTreeMap<DirectedEdge, f64>,
) -> f64 {
    let mut worst = 0.0_f64;
    for (key, a) in new {
        let d = (a - old[key]).abs();
        if d.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(d);
    }
    worst
}

/// Information-only variable-to-factor update: prior information plus the
/// incoming factor informations in slice order, which callers fix to
/// ascending source id.
pub(crate) fn info_sum(prior: &Matrix, incoming: &[&Matrix]) -> Matrix {
    let mut out = prior.clone();
    for m in incoming {
        out += *m;
    }
    out
}

/// Information-only GMRF update: the precision delta emitted toward one
/// neighbor given the deltas received from the others, in slice order.
/// Matches the fused message kernel's arithmetic exactly.
pub(crate) fn gmrf_delta_update(diag: f64, coupling: f64, incoming: &[f64]) -> f64 {
    let mut denom = diag;
    for d in incoming {
        denom += d;
    }
    -(coupling * coupling) / denom
}

struct LinearSweep<'m> {
    model: &'m FactorGraphModel,
    order: Vec<DirectedEdge>,
    prior_info: Vec<Matrix>,
    edges: BTreeMap<(NodeId, NodeId), &'m EdgeObservation>,
}

impl<'m> LinearSweep<'m> {
    fn new(model: &'m FactorGraphModel) -> Result<Self, Error> {
        let linear = model.as_linear().ok_or(Error::WrongModelKind {
            expected: "linear_gaussian",
        })?;
        let mut prior_info = Vec::with_capacity(linear.nodes.len());
        for node in &linear.nodes {
            prior_info.push(
                numerics::invert_spd(&node.prior_cov)
                    .map_err(|e| Error::numerical(format!("prior inverse at node {}", node.id), e))?,
            );
        }
        let mut edges = BTreeMap::new();
        for e in &linear.edges {
            edges.insert(e.endpoints(), e);
        }
        Ok(LinearSweep {
            model,
            order: engine::directed_message_order(model),
            prior_info,
            edges,
        })
    }

    /// One synchronous information sweep: all variable-to-factor updates
    /// from the previous factor informations, then all factor-to-variable
    /// updates from the fresh variable informations.
    #[allow(clippy::type_complexity)]
    fn sweep(
        &self,
        f2v: &BTreeMap<DirectedEdge, Matrix>,
    ) -> Result<(BTreeMap<DirectedEdge, Matrix>, BTreeMap<DirectedEdge, Matrix>), Error> {
        let mut v2f = BTreeMap::new();
        for &key in &self.order {
            let mut incoming = Vec::new();
            for &k in self.model.neighbors(key.from) {
                if k == key.to {
                    continue;
                }
                incoming.push(&f2v[&DirectedEdge { from: k, to: key.from }]);
            }
            v2f.insert(key, info_sum(&self.prior_info[key.from.index()], &incoming));
        }
        let mut next = BTreeMap::new();
        for &key in &self.order {
            let edge = self.edges[&key.undirected()];
            let parts = engine::linear_f2v_info(edge, key.from, key.to, &v2f[&key]).map_err(|e| {
                let (a, b) = key.undirected();
                Error::numerical(
                    format!("information sweep on factor ({a}, {b}) into {}", key.to),
                    e,
                )
            })?;
            next.insert(key, parts.info);
        }
        Ok((v2f, next))
    }
}

/// Drives message information to its fixed point by synchronous sweeps
/// from zero initial information.
///
/// Information updates never involve message means, so this single pass
/// settles everything the mean iteration's coefficients depend on. On
/// trees the sweep recomputes identical values once every leaf has been
/// heard from, so the residual reaches exactly zero within diameter plus
/// one sweeps. Failure to reach `tol` within `max_iter` sweeps is an
/// error carrying the last residual: no certificate can be built then.
pub fn fixed_point_information(
    model: &FactorGraphModel,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointInfo, Error> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(Error::InvalidConfig(
            "fixed point tolerance must be positive and finite",
        ));
    }
    let report = model.validate();
    if !report.is_empty() {
        return Err(Error::InvalidModel(report));
    }
    let order = engine::directed_message_order(model);
    if let Some(gmrf) = model.as_gmrf() {
        let p = gmrf.precision();
        let mut deltas: BTreeMap<DirectedEdge, f64> = order.iter().map(|&k| (k, 0.0)).collect();
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < max_iter {
            let mut next = BTreeMap::new();
            for &key in &order {
                let mut incoming = Vec::new();
                for &k in model.neighbors(key.from) {
                    if k == key.to {
                        continue;
                    }
                    incoming.push(deltas[&DirectedEdge { from: k, to: key.from }]);
                }
                let row = key.from.index();
                next.insert(
                    key,
                    gmrf_delta_update(p[(row, row)], p[(row, key.to.index())], &incoming),
                );
            }
            residual = scalar_map_residual(&deltas, &next);
            deltas = next;
            iterations += 1;
            if residual < tol {
                return Ok(FixedPointInfo {
                    v2f_info: BTreeMap::new(),
                    v2f_cov: BTreeMap::new(),
                    f2v_info: BTreeMap::new(),
                    deltas,
                    residual,
                    iterations,
                });
            }
        }
        return Err(Error::FixedPointNotCertified {
            residual,
            iterations,
        });
    }

    let sweep = LinearSweep::new(model)?;
    let mut v2f: BTreeMap<DirectedEdge, Matrix> = order
        .iter()
        .map(|&k| (k, Matrix::zeros(model.dim(k.from), model.dim(k.from))))
        .collect();
    let mut f2v: BTreeMap<DirectedEdge, Matrix> = order
        .iter()
        .map(|&k| (k, Matrix::zeros(model.dim(k.to), model.dim(k.to))))
        .collect();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        let (new_v2f, new_f2v) = sweep.sweep(&f2v)?;
        let rv = matrix_map_residual(&v2f, &new_v2f);
        let rf = matrix_map_residual(&f2v, &new_f2v);
        residual = if rv.is_nan() || rf.is_nan() {
            f64::NAN
        } else {
            rv.max(rf)
        };
        v2f = new_v2f;
        f2v = new_f2v;
        iterations += 1;
        if residual < tol {
            let mut v2f_cov = BTreeMap::new();
            for (key, info) in &v2f {
                v2f_cov.insert(
                    *key,
                    numerics::invert_spd(info).map_err(|e| {
                        Error::numerical(
                            format!("outgoing covariance for ({} -> {})", key.from, key.to),
                            e,
                        )
                    })?,
                );
            }
            return Ok(FixedPointInfo {
                v2f_info: v2f,
                v2f_cov,
                f2v_info: f2v,
                deltas: BTreeMap::new(),
                residual,
                iterations,
            });
        }
    }
    Err(Error::FixedPointNotCertified {
        residual,
        iterations,
    })
}

/// Read gate restricting certificate construction at one node to data the
/// node legitimately holds after the information pass: its own edges and
/// outgoing covariances, and the final values received from direct
/// neighbors. Reads involving any other node fail; successful reads are
/// logged so tests can audit exactly what a certificate consumed.
pub struct LocalView<'a> {
    model: &'a FactorGraphModel,
    fp: &'a FixedPointInfo,
    node: NodeId,
    log: RefCell<Vec<String>>,
}

impl<'a> LocalView<'a> {
    pub fn new(model: &'a FactorGraphModel, fp: &'a FixedPointInfo, node: NodeId) -> Self {
        LocalView {
            model,
            fp,
            node,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn is_gmrf(&self) -> bool {
        self.model.is_gmrf()
    }

    /// The node's own adjacency list, ascending.
    pub fn neighbors(&self) -> &'a [NodeId] {
        self.model.neighbors(self.node)
    }

    /// Every read this view has served, for locality audits.
    pub fn access_log(&self) -> Vec<String> {
        self.log.borrow().clone()
    }

    fn check_neighbor(&self, other: NodeId, what: &str) -> Result<(), Error> {
        if !self.model.neighbors(self.node).contains(&other) {
            return Err(Error::NonLocalAccess {
                node: self.node,
                requested: format!("{what} involving node {other}"),
            });
        }
        Ok(())
    }

    fn note(&self, entry: String) {
        self.log.borrow_mut().push(entry);
    }

    fn gmrf(&self) -> Result<&'a GmrfModel, Error> {
        self.model
            .as_gmrf()
            .ok_or(Error::WrongModelKind { expected: "gmrf" })
    }

    /// Observation data of the edge joining this node to a neighbor.
    pub fn edge_data(&self, other: NodeId) -> Result<&'a EdgeObservation, Error> {
        self.check_neighbor(other, "edge data")?;
        let e = self
            .model
            .edge_observation(self.node, other)
            .ok_or(Error::UnknownEdge {
                a: self.node,
                b: other,
            })?;
        let (a, b) = e.endpoints();
        self.note(format!("edge data ({a}, {b})"));
        Ok(e)
    }

    /// The node's own outgoing message covariance toward a neighbor.
    pub fn own_covariance(&self, toward: NodeId) -> Result<&'a Matrix, Error> {
        self.check_neighbor(toward, "outgoing covariance")?;
        let key = DirectedEdge {
            from: self.node,
            to: toward,
        };
        let m = self.fp.v2f_cov.get(&key).ok_or(Error::MissingMessage {
            what: "fixed-point covariance",
            from: key.from,
            to: key.to,
        })?;
        self.note(format!("own covariance {} -> {}", key.from, key.to));
        Ok(m)
    }

    /// Covariance of a neighbor's final message toward this node. In a
    /// deployment this is derived from the information received over the
    /// shared edge during the fixed-point pass.
    pub fn incoming_covariance(&self, from: NodeId) -> Result<&'a Matrix, Error> {
        self.check_neighbor(from, "incoming covariance")?;
        let key = DirectedEdge {
            from,
            to: self.node,
        };
        let m = self.fp.v2f_cov.get(&key).ok_or(Error::MissingMessage {
            what: "fixed-point covariance",
            from: key.from,
            to: key.to,
        })?;
        self.note(format!("incoming covariance {} -> {}", key.from, key.to));
        Ok(m)
    }

    /// The node's own precision diagonal entry.
    pub fn precision_diag(&self) -> Result<f64, Error> {
        let g = self.gmrf()?;
        self.note(format!("precision diagonal at {}", self.node));
        Ok(g.precision()[(self.node.index(), self.node.index())])
    }

    /// The node's own potential entry.
    pub fn potential(&self) -> Result<f64, Error> {
        let g = self.gmrf()?;
        self.note(format!("potential at {}", self.node));
        Ok(g.potential()[self.node.index()])
    }

    /// Precision coupling on the edge to a neighbor.
    pub fn coupling(&self, other: NodeId) -> Result<f64, Error> {
        self.check_neighbor(other, "precision coupling")?;
        let g = self.gmrf()?;
        self.note(format!("coupling ({}, {other})", self.node));
        Ok(g.precision()[(self.node.index(), other.index())])
    }

    /// Fixed-point precision delta received from a neighbor.
    pub fn incoming_delta(&self, from: NodeId) -> Result<f64, Error> {
        self.check_neighbor(from, "incoming precision delta")?;
        let key = DirectedEdge {
            from,
            to: self.node,
        };
        let d = self.fp.deltas.get(&key).ok_or(Error::MissingMessage {
            what: "fixed-point delta",
            from: key.from,
            to: key.to,
        })?;
        self.note(format!("incoming delta {} -> {}", key.from, key.to));
        Ok(*d)
    }
}

/// One node's rows of the stacked mean recursion `v = b - Q v`, columns
/// compressed to the messages addressed to this node. All other columns of
/// the node's global rows are structurally zero, so nothing is lost.
#[derive(Debug, Clone)]
pub struct LocalQBlock {
    pub node: NodeId,
    /// Outgoing message keys `(node -> i)`, ascending `i`; one row block each.
    pub row_keys: Vec<DirectedEdge>,
    /// Incoming message keys `(k -> node)`, ascending `k`; one column block each.
    pub col_keys: Vec<DirectedEdge>,
    /// Row block boundaries, length `row_keys.len() + 1`.
    pub row_offsets: Vec<usize>,
    /// Column block boundaries, length `col_keys.len() + 1`.
    pub col_offsets: Vec<usize>,
    pub matrix: Matrix,
    /// Constant terms of the node's rows.
    pub constant: Vector,
}

/// Per-neighbor ingredients for one column group of a linear block.
pub(crate) struct LinearColumn<'a> {
    pub(crate) source: NodeId,
    pub(crate) edge: &'a EdgeObservation,
    /// The source's outgoing covariance toward the shared factor.
    pub(crate) source_cov: &'a Matrix,
}

/// Assembles one node's rows of the linear mean recursion from purely
/// node-local ingredients. `own_cov[r]` is the covariance the node sends
/// toward neighbor `r`; both slices are ascending in neighbor id.
///
/// Row `(node -> i)` of the recursion reads, for each other neighbor `k`,
/// `C (A_dst^T S_k^-1 A_src) v[k -> node]` with `C` the outgoing
/// covariance, `A_dst` the coefficient on this node, `A_src` the
/// coefficient on `k`, and `S_k` the factor's innovation covariance at the
/// fixed point; the constant term collects the same gains applied to the
/// observations.
pub(crate) fn assemble_linear_block(
    node: NodeId,
    own_cov: &[(NodeId, &Matrix)],
    columns: &[LinearColumn<'_>],
) -> Result<LocalQBlock, Error> {
    debug_assert_eq!(own_cov.len(), columns.len());
    let own_dim = own_cov.first().map_or(0, |(_, c)| c.nrows());
    let deg = own_cov.len();

    let mut col_gain_src = Vec::with_capacity(deg);
    let mut col_gain_obs = Vec::with_capacity(deg);
    for c in columns {
        let a_src = c.edge.coeff_of(c.source);
        let a_dst = c.edge.coeff_of(node);
        let bracket = numerics::symmetrize(
            &(c.edge.noise_cov() + a_src * (c.source_cov * a_src.transpose())),
        );
        let bracket_inv = numerics::invert_spd(&bracket).map_err(|e| {
            let (a, b) = c.edge.endpoints();
            Error::numerical(format!("certificate bracket on edge ({a}, {b})"), e)
        })?;
        let gain = a_dst.transpose() * &bracket_inv;
        col_gain_src.push(&gain * a_src);
        col_gain_obs.push(&gain * c.edge.obs());
    }

    let row_keys: Vec<DirectedEdge> = own_cov
        .iter()
        .map(|&(i, _)| DirectedEdge { from: node, to: i })
        .collect();
    let col_keys: Vec<DirectedEdge> = columns
        .iter()
        .map(|c| DirectedEdge {
            from: c.source,
            to: node,
        })
        .collect();
    let row_offsets: Vec<usize> = (0..=deg).map(|r| r * own_dim).collect();
    let mut col_offsets = Vec::with_capacity(deg + 1);
    col_offsets.push(0);
    for c in columns {
        col_offsets.push(col_offsets.last().unwrap() + c.source_cov.nrows());
    }

    let mut matrix = Matrix::zeros(deg * own_dim, *col_offsets.last().unwrap());
    let mut constant = Vector::zeros(deg * own_dim);
    for (r, &(i, cov_i)) in own_cov.iter().enumerate() {
        let mut acc = Vector::zeros(own_dim);
        for (c, col) in columns.iter().enumerate() {
            if col.source == i {
                continue;
            }
            let block = cov_i * &col_gain_src[c];
            matrix
                .view_mut(
                    (row_offsets[r], col_offsets[c]),
                    (own_dim, col_offsets[c + 1] - col_offsets[c]),
                )
                .copy_from(&block);
            acc += &col_gain_obs[c];
        }
        constant.rows_mut(row_offsets[r], own_dim).copy_from(&(cov_i * acc));
    }
    Ok(LocalQBlock {
        node,
        row_keys,
        col_keys,
        row_offsets,
        col_offsets,
        matrix,
        constant,
    })
}

/// GMRF counterpart of [`assemble_linear_block`]. `columns` holds, per
/// neighbor ascending, the coupling `J[node, k]` and the fixed-point delta
/// received from `k`. Row `(node -> i)` has the constant entry
/// `J[node, i] / d` at every column `k != i`, where `d` is the node's
/// diagonal plus the deltas from everyone but `i`, exactly as the fused
/// update computes its denominator.
pub(crate) fn assemble_gmrf_block(
    node: NodeId,
    diag: f64,
    potential: f64,
    columns: &[(NodeId, f64, f64)],
) -> LocalQBlock {
    let deg = columns.len();
    let row_keys: Vec<DirectedEdge> = columns
        .iter()
        .map(|&(i, _, _)| DirectedEdge { from: node, to: i })
        .collect();
    let col_keys: Vec<DirectedEdge> = columns
        .iter()
        .map(|&(k, _, _)| DirectedEdge { from: k, to: node })
        .collect();
    let mut matrix = Matrix::zeros(deg, deg);
    let mut constant = Vector::zeros(deg);
    for (r, &(i, coupling_i, _)) in columns.iter().enumerate() {
        let mut denom = diag;
        for &(k, _, delta_k) in columns {
            if k == i {
                continue;
            }
            denom += delta_k;
        }
        for (c, &(k, _, _)) in columns.iter().enumerate() {
            if k == i {
                continue;
            }
            matrix[(r, c)] = coupling_i / denom;
        }
        constant[r] = -coupling_i * potential / denom;
    }
    LocalQBlock {
        node,
        row_keys,
        col_keys,
        row_offsets: (0..=deg).collect(),
        col_offsets: (0..=deg).collect(),
        matrix,
        constant,
    }
}

/// Builds one node's recursion rows through an explicit local view.
pub fn build_local_q_from_view(view: &LocalView<'_>) -> Result<LocalQBlock, Error> {
    let node = view.node();
    let neighbors = view.neighbors().to_vec();
    if view.is_gmrf() {
        let diag = view.precision_diag()?;
        let potential = view.potential()?;
        let mut columns = Vec::with_capacity(neighbors.len());
        for &k in &neighbors {
            columns.push((k, view.coupling(k)?, view.incoming_delta(k)?));
        }
        return Ok(assemble_gmrf_block(node, diag, potential, &columns));
    }
    let mut own = Vec::with_capacity(neighbors.len());
    for &i in &neighbors {
        own.push((i, view.own_covariance(i)?));
    }
    let mut columns = Vec::with_capacity(neighbors.len());
    for &k in &neighbors {
        columns.push(LinearColumn {
            source: k,
            edge: view.edge_data(k)?,
            source_cov: view.incoming_covariance(k)?,
        });
    }
    assemble_linear_block(node, &own, &columns)
}

/// Builds one node's recursion rows from a computed fixed point.
pub fn build_local_q(
    model: &FactorGraphModel,
    fp: &FixedPointInfo,
    node: NodeId,
) -> Result<LocalQBlock, Error> {
    build_local_q_from_view(&LocalView::new(model, fp, node))
}

/// One node's share of the global contraction condition.
#[derive(Debug, Clone, Serialize)]
pub struct LocalVerdict {
    pub node: NodeId,
    /// Spectral radius of the node's compressed row block times its
    /// transpose.
    pub rho: f64,
    /// True when that radius is strictly below one.
    pub verdict: bool,
}

/// Evaluates a node's certificate. A leaf's block is entirely zero, so a
/// leaf always certifies with radius zero.
pub fn local_condition(block: &LocalQBlock) -> Result<LocalVerdict, Error> {
    let gram = numerics::symmetrize(&(&block.matrix * block.matrix.transpose()));
    let rho = numerics::spectral_radius(&gram, numerics::SPECTRAL_TOL)
        .map_err(|e| Error::numerical(format!("local certificate at node {}", block.node), e))?;
    Ok(LocalVerdict {
        node: block.node,
        rho,
        verdict: rho < 1.0,
    })
}

/// The assembled global mean recursion `v = b - Q v` over every directed
/// message, destination-major.
#[derive(Debug, Clone)]
pub struct StackedRecursion {
    pub order: Vec<DirectedEdge>,
    /// Stacked slice boundaries per message, length `order.len() + 1`.
    pub offsets: Vec<usize>,
    pub matrix: Matrix,
    pub constant: Vector,
}

impl StackedRecursion {
    /// One synchronous sweep of the frozen-information mean iteration.
    pub fn step(&self, v: &Vector) -> Vector {
        &self.constant - &self.matrix * v
    }

    /// Start and length of one message's slice of the stacked vector.
    pub fn slice_of(&self, key: DirectedEdge) -> Option<(usize, usize)> {
        let idx = self.order.iter().position(|&k| k == key)?;
        Some((self.offsets[idx], self.offsets[idx + 1] - self.offsets[idx]))
    }

    /// Stacks the variable-to-factor mean parts of a message state.
    pub fn stack_from_state(&self, state: &MessageState) -> Result<Vector, Error> {
        let mut v = Vector::zeros(*self.offsets.last().unwrap_or(&0));
        for (idx, key) in self.order.iter().enumerate() {
            let m = state
                .get(MessageDirection::VariableToFactor, key.from, key.to)
                .ok_or(Error::MissingMessage {
                    what: "variable-to-factor",
                    from: key.from,
                    to: key.to,
                })?;
            v.rows_mut(self.offsets[idx], m.mean_part.nrows())
                .copy_from(&m.mean_part);
        }
        Ok(v)
    }
}

/// Assembles the global recursion by scattering every node's local block
/// into its rows. Dense; refuses stacked dimensions beyond the same
/// envelope the exact solvers use.
pub fn stacked_recursion(
    model: &FactorGraphModel,
    fp: &FixedPointInfo,
) -> Result<StackedRecursion, Error> {
    let order = engine::directed_message_order(model);
    let mut offsets = Vec::with_capacity(order.len() + 1);
    offsets.push(0_usize);
    for key in &order {
        offsets.push(offsets.last().unwrap() + model.dim(key.from));
    }
    let total = *offsets.last().unwrap();
    if total > oracle::MAX_DENSE_DIM {
        return Err(Error::TooLarge {
            dimension: total,
            limit: oracle::MAX_DENSE_DIM,
        });
    }
    let index: BTreeMap<DirectedEdge, usize> =
        order.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut matrix = Matrix::zeros(total, total);
    let mut constant = Vector::zeros(total);
    for node in model.node_ids() {
        let block = build_local_q(model, fp, node)?;
        for (r, row_key) in block.row_keys.iter().enumerate() {
            let g_r = offsets[index[row_key]];
            let h = block.row_offsets[r + 1] - block.row_offsets[r];
            for (c, col_key) in block.col_keys.iter().enumerate() {
                let g_c = offsets[index[col_key]];
                let w = block.col_offsets[c + 1] - block.col_offsets[c];
                matrix.view_mut((g_r, g_c), (h, w)).copy_from(
                    &block
                        .matrix
                        .view((block.row_offsets[r], block.col_offsets[c]), (h, w)),
                );
            }
            constant
                .rows_mut(g_r, h)
                .copy_from(&block.constant.rows(block.row_offsets[r], h));
        }
    }
    Ok(StackedRecursion {
        order,
        offsets,
        matrix,
        constant,
    })
}

/// `(rho(Q), rho(Q Q^T))` of the assembled recursion.
pub fn centralized_condition(
    model: &FactorGraphModel,
    fp: &FixedPointInfo,
) -> Result<(f64, f64), Error> {
    let sr = stacked_recursion(model, fp)?;
    let rho_q = numerics::spectral_radius(&sr.matrix, numerics::SPECTRAL_TOL)
        .map_err(|e| Error::numerical("spectral radius of the stacked recursion matrix", e))?;
    let gram = numerics::symmetrize(&(&sr.matrix * sr.matrix.transpose()));
    let rho_qqt = numerics::spectral_radius(&gram, numerics::SPECTRAL_TOL)
        .map_err(|e| Error::numerical("spectral radius of the stacked Gram matrix", e))?;
    Ok((rho_q, rho_qqt))
}

/// Walk-summability check for GMRF models: the spectral radius of the
/// entrywise absolute value of the off-diagonal part after symmetric
/// diagonal normalization, and whether it is below one. A sufficient
/// condition for convergent means that is checkable without any message
/// passing, used as a baseline against the certificates.
pub fn walk_summability(model: &FactorGraphModel) -> Result<(f64, bool), Error> {
    let gmrf = model.as_gmrf().ok_or(Error::WrongModelKind { expected: "gmrf" })?;
    let report = model.validate();
    if !report.is_empty() {
        return Err(Error::InvalidModel(report));
    }
    let p = gmrf.precision();
    let n = gmrf.len();
    let mut a = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if r != c {
                a[(r, c)] = p[(r, c)].abs() / (p[(r, r)] * p[(c, c)]).sqrt();
            }
        }
    }
    let rho = numerics::spectral_radius(&a, numerics::SPECTRAL_TOL)
        .map_err(|e| Error::numerical("walk-summability radius", e))?;
    Ok((rho, rho < 1.0))
}

/// Initial factor-to-variable messages that place the engine at the
/// information fixed point with chosen variable-to-factor means. Starting
/// a run from this map, sweep `l` of the engine reproduces
/// `v(l) = b - Q v(l-1)` seeded at `v(0) = means`, up to drift on the
/// order of the fixed point residual per sweep. Linear models only: the
/// fused GMRF update rebuilds its precision deltas from zero by design,
/// so a GMRF engine cannot be started at the fixed point.
pub fn seeded_initial_messages(
    model: &FactorGraphModel,
    fp: &FixedPointInfo,
    means: &BTreeMap<DirectedEdge, Vector>,
) -> Result<BTreeMap<DirectedEdge, GaussianMessage>, Error> {
    let linear = model.as_linear().ok_or(Error::WrongModelKind {
        expected: "linear_gaussian",
    })?;
    let mut edges = BTreeMap::new();
    for e in &linear.edges {
        edges.insert(e.endpoints(), e);
    }
    let mut out = BTreeMap::new();
    for (&key, info) in &fp.v2f_info {
        let mean = means.get(&key).ok_or(Error::MissingMessage {
            what: "seed mean",
            from: key.from,
            to: key.to,
        })?;
        let source = GaussianMessage {
            info: info.clone(),
            mean_part: mean.clone(),
        };
        let edge = edges[&key.undirected()];
        let msg = engine::linear_f2v_kernel(edge, key.from, key.to, &source).map_err(|e| {
            Error::numerical(format!("seeding factor ({} -> {})", key.from, key.to), e)
        })?;
        out.insert(key, msg);
    }
    Ok(out)
}

/// Options for [`certify`].
#[derive(Debug, Clone)]
pub struct CertifyOptions {
    /// Fixed point tolerance.
    pub tol: f64,
    /// Fixed point sweep budget.
    pub max_iter: usize,
    /// Also compute the assembled global radii and, for GMRF models, the
    /// walk-summability baseline.
    pub centralized: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            tol: numerics::FIXED_POINT_TOL,
            max_iter: numerics::FIXED_POINT_MAX_ITER,
            centralized: false,
        }
    }
}

/// Walk-summability outcome carried in a report.
#[derive(Debug, Clone, Serialize)]
pub struct WalkSummability {
    /// Spectral radius of the normalized absolute off-diagonal part.
    pub rho_abs: f64,
    pub verdict: bool,
}

/// Certification outcome: every node's share of the contraction condition
/// and their conjunction, optionally with the centralized baselines.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub nodes: Vec<LocalVerdict>,
    /// Conjunction of the per-node verdicts.
    pub verdict: bool,
    /// Largest per-node radius; matches `rho(Q Q^T)` up to solver accuracy.
    pub rho_local_max: f64,
    /// How the verdict was obtained: "local" or "local+centralized".
    pub provenance: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_qqt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walk_summability: Option<WalkSummability>,
    pub fixed_point_residual: f64,
    pub fixed_point_iterations: usize,
}

/// Runs the full certification pipeline on one model.
pub fn certify(model: &FactorGraphModel, options: &CertifyOptions) -> Result<ConvergenceReport, Error> {
    let fp = fixed_point_information(model, options.tol, options.max_iter)?;
    certify_with_fixed_point(model, &fp, options)
}

/// Certification from an already computed fixed point.
pub fn certify_with_fixed_point(
    model: &FactorGraphModel,
    fp: &FixedPointInfo,
    options: &CertifyOptions,
) -> Result<ConvergenceReport, Error> {
    let mut nodes = Vec::with_capacity(model.node_count());
    for node in model.node_ids() {
        let block = build_local_q(model, fp, node)?;
        nodes.push(local_condition(&block)?);
    }
    let verdict = nodes.iter().all(|v| v.verdict);
    let rho_local_max = nodes.iter().fold(0.0_f64, |a, v| a.max(v.rho));
    let (rho_q, rho_qqt, walk, provenance) = if options.centralized {
        let (q, qqt) = centralized_condition(model, fp)?;
        let walk = if model.is_gmrf() {
            let (rho_abs, ok) = walk_summability(model)?;
            Some(WalkSummability {
                rho_abs,
                verdict: ok,
            })
        } else {
            None
        };
        (Some(q), Some(qqt), walk, "local+centralized")
    } else {
        (None, None, None, "local")
    };
    Ok(ConvergenceReport {
        nodes,
        verdict,
        rho_local_max,
        provenance,
        rho_q,
        rho_qqt,
        walk_summability: walk,
        fixed_point_residual: fp.residual,
        fixed_point_iterations: fp.iterations,
    })
}
