//! Round-based network simulation of the full pipeline under strict
//! topology-local communication.
//!
//! Every node is modeled as a process holding only its own slice of the
//! problem: its prior or precision row, its incident edge observations,
//! and whatever its direct neighbors sent it. All exchange happens through
//! byte payloads that the harness routes strictly along graph edges; a
//! send to a non-neighbor aborts the simulation. Because the processes run
//! the same kernels in the same order as the centralized code, every
//! simulated output is bit-identical to its centralized counterpart.
//!
//! Three phases, each optional:
//!
//! 1. information fixed point: nodes flood information payloads until the
//!    harness (acting as the experiment clock, not as a shortcut past the
//!    network) sees the global residual drop below the standard fixed
//!    point tolerance;
//! 2. certification: each node assembles its recursion rows from received
//!    data, evaluates its own spectral condition, and the verdicts are
//!    folded up a breadth-first spanning tree with one bit per node;
//! 3. mean propagation: full belief propagation with information and mean
//!    payloads per directed edge per round.
//!
//! The trace logs one record per payload and exports as line-delimited
//! `iter,edge_i,edge_j,direction,kind,bytes` with `edge_i < edge_j` and
//! `direction` telling which endpoint sent (`forward` means `edge_i`).

use std::collections::BTreeMap;

use crate::convergence::{
    self, assemble_gmrf_block, assemble_linear_block, ConvergenceReport, LinearColumn,
    LocalVerdict,
};
use crate::engine::{
    self, Belief, BpRunResult, DirectedEdge, EngineConfig, GaussianMessage, MessageState,
};
use crate::error::Error;
use crate::model::{EdgeObservation, FactorGraphModel, NodeId};
use crate::numerics::{self, Matrix, Vector};

/// What a payload carries. Matrix and vector bodies are little-endian
/// `f64` sequences in row-major order; scalar bodies are a single `f64`;
/// verdict bodies are one byte, zero or one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PayloadKind {
    InfoMatrix,
    MeanVector,
    PrecisionDelta,
    PotentialDelta,
    VerdictBit,
}

impl PayloadKind {
    pub fn label(self) -> &'static str {
        match self {
            PayloadKind::InfoMatrix => "info_matrix",
            PayloadKind::MeanVector => "mean_vector",
            PayloadKind::PrecisionDelta => "precision_delta",
            PayloadKind::PotentialDelta => "potential_delta",
            PayloadKind::VerdictBit => "verdict_bit",
        }
    }
}

/// One unit of traffic between two nodes.
#[derive(Debug, Clone)]
pub struct WirePayload {
    pub kind: PayloadKind,
    pub from: NodeId,
    pub to: NodeId,
    /// Global round counter at send time.
    pub iteration: usize,
    pub body: Vec<u8>,
}

/// One logged payload. Bodies are not retained, only their size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: PayloadKind,
    pub bytes: usize,
}

/// Append-only log of everything that crossed the simulated network, plus
/// the per-node verdicts once certification ran.
#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    records: Vec<TraceRecord>,
    counts: BTreeMap<&'static str, usize>,
    verdicts: BTreeMap<NodeId, bool>,
}

impl SimTrace {
    /// Builds a trace from raw records, for audits of external traces.
    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        let mut counts = BTreeMap::new();
        for r in &records {
            *counts.entry(r.kind.label()).or_insert(0) += 1;
        }
        SimTrace {
            records,
            counts,
            verdicts: BTreeMap::new(),
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Total payloads per kind label.
    pub fn counts(&self) -> &BTreeMap<&'static str, usize> {
        &self.counts
    }

    /// Per-node certification verdicts; empty unless certification ran.
    pub fn verdicts(&self) -> &BTreeMap<NodeId, bool> {
        &self.verdicts
    }

    /// Payloads of one kind logged in one round.
    pub fn payloads_in_round(&self, iteration: usize, kind: PayloadKind) -> usize {
        self.records
            .iter()
            .filter(|r| r.iteration == iteration && r.kind == kind)
            .count()
    }

    /// Rounds in which at least one payload of this kind was logged.
    pub fn rounds_with(&self, kind: PayloadKind) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.iteration)
            .collect();
        out.dedup();
        out
    }

    /// Line-delimited export: `iter,edge_i,edge_j,direction,kind,bytes`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let (lo, hi, direction) = if r.from < r.to {
                (r.from, r.to, "forward")
            } else {
                (r.to, r.from, "reverse")
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration,
                lo,
                hi,
                direction,
                r.kind.label(),
                r.bytes
            ));
        }
        out
    }

    fn push(&mut self, record: TraceRecord) {
        *self.counts.entry(record.kind.label()).or_insert(0) += 1;
        self.records.push(record);
    }
}

/// True when every logged payload traveled along an edge of the model.
/// An empty trace is vacuously local.
pub fn verify_locality(trace: &SimTrace, model: &FactorGraphModel) -> bool {
    let edges: std::collections::BTreeSet<(NodeId, NodeId)> =
        model.edges().into_iter().collect();
    trace.records().iter().all(|r| {
        let pair = if r.from < r.to {
            (r.from, r.to)
        } else {
            (r.to, r.from)
        };
        edges.contains(&pair)
    })
}

/// Which pipeline phases to simulate. Certification consumes the fixed
/// point, so it requires the first phase; mean propagation stands alone.
#[derive(Debug, Clone, Copy)]
pub struct SimPhases {
    pub info_fixed_point: bool,
    pub certify: bool,
    pub mean_propagation: bool,
}

impl Default for SimPhases {
    fn default() -> Self {
        SimPhases {
            info_fixed_point: true,
            certify: true,
            mean_propagation: true,
        }
    }
}

/// Simulation results: present exactly for the phases that ran.
#[derive(Debug)]
pub struct SimOutcome {
    pub run: Option<BpRunResult>,
    pub report: Option<ConvergenceReport>,
    pub trace: SimTrace,
}

fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

fn decode_matrix(bytes: &[u8], rows: usize, cols: usize) -> Option<Matrix> {
    if bytes.len() != rows * cols * 8 {
        return None;
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Some(Matrix::from_row_slice(rows, cols, &vals))
}

fn encode_vector(v: &Vector) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 8);
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_vector(bytes: &[u8], len: usize) -> Option<Vector> {
    if bytes.len() != len * 8 {
        return None;
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Some(Vector::from_vec(vals))
}

fn decode_scalar(bytes: &[u8]) -> Option<f64> {
    if bytes.len() != 8 {
        return None;
    }
    Some(f64::from_le_bytes(bytes.try_into().expect("checked length")))
}

/// One simulated node. Holds only the node's own problem slice and what
/// arrived over its edges; everything it computes uses the same kernels as
/// the centralized code.
struct NodeProcess {
    id: NodeId,
    dim: usize,
    /// Ascending adjacency; structural knowledge every node has.
    neighbors: Vec<NodeId>,
    neighbor_dims: BTreeMap<NodeId, usize>,
    gmrf: bool,
    // linear slice
    prior_info: Option<Matrix>,
    edges: BTreeMap<NodeId, EdgeObservation>,
    // gmrf slice
    diag: f64,
    couplings: BTreeMap<NodeId, f64>,
    potential: f64,
    // information fixed point state
    fp_own_info: BTreeMap<NodeId, Matrix>,
    fp_received_info: BTreeMap<NodeId, Matrix>,
    fp_f2v_info: BTreeMap<NodeId, Matrix>,
    fp_received_delta: BTreeMap<NodeId, f64>,
    // derived after the fixed point settles
    own_cov: BTreeMap<NodeId, Matrix>,
    source_cov: BTreeMap<NodeId, Matrix>,
    // certification
    certificate: Option<LocalVerdict>,
    agg_verdict: bool,
    // mean propagation state
    bp_own_v2f: BTreeMap<NodeId, GaussianMessage>,
    bp_f2v: BTreeMap<NodeId, GaussianMessage>,
    pending_info: BTreeMap<NodeId, Matrix>,
    pending_delta: BTreeMap<NodeId, f64>,
}

impl NodeProcess {
    fn new(model: &FactorGraphModel, id: NodeId) -> Result<Self, Error> {
        let neighbors = model.neighbors(id).to_vec();
        let neighbor_dims = neighbors.iter().map(|&k| (k, model.dim(k))).collect();
        let mut node = NodeProcess {
            id,
            dim: model.dim(id),
            neighbors: neighbors.clone(),
            neighbor_dims,
            gmrf: model.is_gmrf(),
            prior_info: None,
            edges: BTreeMap::new(),
            diag: 0.0,
            couplings: BTreeMap::new(),
            potential: 0.0,
            fp_own_info: BTreeMap::new(),
            fp_received_info: BTreeMap::new(),
            fp_f2v_info: BTreeMap::new(),
            fp_received_delta: BTreeMap::new(),
            own_cov: BTreeMap::new(),
            source_cov: BTreeMap::new(),
            certificate: None,
            agg_verdict: true,
            bp_own_v2f: BTreeMap::new(),
            bp_f2v: BTreeMap::new(),
            pending_info: BTreeMap::new(),
            pending_delta: BTreeMap::new(),
        };
        if let Some(gmrf) = model.as_gmrf() {
            node.diag = gmrf.precision()[(id.index(), id.index())];
            node.potential = gmrf.potential()[id.index()];
            for &k in &neighbors {
                node.couplings
                    .insert(k, gmrf.precision()[(id.index(), k.index())]);
                node.fp_received_delta.insert(k, 0.0);
            }
        } else {
            let linear = model.as_linear().expect("kind checked");
            node.prior_info = Some(
                numerics::invert_spd(&linear.nodes[id.index()].prior_cov)
                    .map_err(|e| Error::numerical(format!("prior inverse at node {id}"), e))?,
            );
            for &k in &neighbors {
                let edge = model
                    .edge_observation(id, k)
                    .ok_or(Error::UnknownEdge { a: id, b: k })?;
                node.edges.insert(k, edge.clone());
                let dk = model.dim(k);
                node.fp_own_info.insert(k, Matrix::zeros(node.dim, node.dim));
                node.fp_received_info.insert(k, Matrix::zeros(dk, dk));
                node.fp_f2v_info.insert(k, Matrix::zeros(node.dim, node.dim));
            }
        }
        Ok(node)
    }

    fn check_sender(&self, from: NodeId) -> Result<(), Error> {
        if !self.neighbors.contains(&from) {
            return Err(Error::NonLocalAccess {
                node: self.id,
                requested: format!("payload from non-neighbor {from}"),
            });
        }
        Ok(())
    }

    /// Information-phase payloads toward every neighbor, from the values
    /// received last round.
    fn emit_fp(&mut self, round: usize) -> Result<Vec<WirePayload>, Error> {
        let mut out = Vec::with_capacity(self.neighbors.len());
        let targets = self.neighbors.clone();
        for &i in &targets {
            if self.gmrf {
                let mut incoming = Vec::new();
                for &k in &self.neighbors {
                    if k != i {
                        incoming.push(self.fp_received_delta[&k]);
                    }
                }
                let delta =
                    convergence::gmrf_delta_update(self.diag, self.couplings[&i], &incoming);
                out.push(WirePayload {
                    kind: PayloadKind::PrecisionDelta,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body: delta.to_le_bytes().to_vec(),
                });
            } else {
                let mut incoming = Vec::new();
                for &k in &self.neighbors {
                    if k != i {
                        incoming.push(&self.fp_f2v_info[&k]);
                    }
                }
                let info = convergence::info_sum(
                    self.prior_info.as_ref().expect("linear node"),
                    &incoming,
                );
                let body = encode_matrix(&info);
                self.fp_own_info.insert(i, info);
                out.push(WirePayload {
                    kind: PayloadKind::InfoMatrix,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body,
                });
            }
        }
        Ok(out)
    }

    fn receive_fp(&mut self, payload: WirePayload) -> Result<(), Error> {
        self.check_sender(payload.from)?;
        match payload.kind {
            PayloadKind::PrecisionDelta => {
                let delta = decode_scalar(&payload.body).ok_or(Error::MalformedPayload {
                    kind: payload.kind.label(),
                    from: payload.from,
                    to: payload.to,
                })?;
                self.fp_received_delta.insert(payload.from, delta);
            }
            PayloadKind::InfoMatrix => {
                let dk = self.neighbor_dims[&payload.from];
                let info =
                    decode_matrix(&payload.body, dk, dk).ok_or(Error::MalformedPayload {
                        kind: payload.kind.label(),
                        from: payload.from,
                        to: payload.to,
                    })?;
                let edge = &self.edges[&payload.from];
                let parts = engine::linear_f2v_info(edge, payload.from, self.id, &info)
                    .map_err(|e| {
                        Error::numerical(
                            format!(
                                "node {} processing information from {}",
                                self.id, payload.from
                            ),
                            e,
                        )
                    })?;
                self.fp_f2v_info.insert(payload.from, parts.info);
                self.fp_received_info.insert(payload.from, info);
            }
            _ => {
                return Err(Error::PhaseOrder(
                    "only information payloads are valid in the fixed point phase",
                ))
            }
        }
        Ok(())
    }

    /// Inverts the settled informations into the covariances certification
    /// needs. Linear models only; GMRF certification reads deltas directly.
    fn finalize_fp(&mut self) -> Result<(), Error> {
        if self.gmrf {
            return Ok(());
        }
        for &i in &self.neighbors {
            self.own_cov.insert(
                i,
                numerics::invert_spd(&self.fp_own_info[&i]).map_err(|e| {
                    Error::numerical(
                        format!("outgoing covariance for ({} -> {i})", self.id),
                        e,
                    )
                })?,
            );
            self.source_cov.insert(
                i,
                numerics::invert_spd(&self.fp_received_info[&i]).map_err(|e| {
                    Error::numerical(
                        format!("outgoing covariance for ({i} -> {})", self.id),
                        e,
                    )
                })?,
            );
        }
        Ok(())
    }

    /// Evaluates this node's share of the contraction condition from its
    /// own stores, via the same assembly the centralized certifier uses.
    fn certify(&mut self) -> Result<LocalVerdict, Error> {
        let block = if self.gmrf {
            let columns: Vec<(NodeId, f64, f64)> = self
                .neighbors
                .iter()
                .map(|&k| (k, self.couplings[&k], self.fp_received_delta[&k]))
                .collect();
            assemble_gmrf_block(self.id, self.diag, self.potential, &columns)
        } else {
            let own: Vec<(NodeId, &Matrix)> = self
                .neighbors
                .iter()
                .map(|&i| (i, &self.own_cov[&i]))
                .collect();
            let columns: Vec<LinearColumn<'_>> = self
                .neighbors
                .iter()
                .map(|&k| LinearColumn {
                    source: k,
                    edge: &self.edges[&k],
                    source_cov: &self.source_cov[&k],
                })
                .collect();
            assemble_linear_block(self.id, &own, &columns)?
        };
        let verdict = convergence::local_condition(&block)?;
        self.agg_verdict = verdict.verdict;
        self.certificate = Some(verdict.clone());
        Ok(verdict)
    }

    fn receive_verdict(&mut self, payload: WirePayload) -> Result<(), Error> {
        self.check_sender(payload.from)?;
        let bit = match payload.body.as_slice() {
            [0] => false,
            [1] => true,
            _ => {
                return Err(Error::MalformedPayload {
                    kind: payload.kind.label(),
                    from: payload.from,
                    to: payload.to,
                })
            }
        };
        self.agg_verdict &= bit;
        Ok(())
    }

    /// Mean-phase payloads toward every neighbor: the fresh outgoing
    /// message, from the factor messages stored last round.
    fn emit_bp(&mut self, round: usize) -> Result<Vec<WirePayload>, Error> {
        let mut out = Vec::with_capacity(self.neighbors.len() * 2);
        let targets = self.neighbors.clone();
        for &i in &targets {
            let mut incoming = Vec::new();
            for &k in &self.neighbors {
                if k != i {
                    incoming.push(&self.bp_f2v[&k]);
                }
            }
            if self.gmrf {
                let msg =
                    engine::gmrf_kernel(self.diag, self.couplings[&i], self.potential, &incoming);
                let (dj, dh) = msg.scalar_parts();
                out.push(WirePayload {
                    kind: PayloadKind::PrecisionDelta,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body: dj.to_le_bytes().to_vec(),
                });
                out.push(WirePayload {
                    kind: PayloadKind::PotentialDelta,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body: dh.to_le_bytes().to_vec(),
                });
                self.bp_own_v2f.insert(i, msg);
            } else {
                let msg = engine::linear_v2f_kernel(
                    self.prior_info.as_ref().expect("linear node"),
                    &incoming,
                )
                .map_err(|e| {
                    Error::numerical(
                        format!("node {} emitting toward {i} in round {round}", self.id),
                        e,
                    )
                })?;
                out.push(WirePayload {
                    kind: PayloadKind::InfoMatrix,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body: encode_matrix(&msg.info),
                });
                out.push(WirePayload {
                    kind: PayloadKind::MeanVector,
                    from: self.id,
                    to: i,
                    iteration: round,
                    body: encode_vector(&msg.mean_part),
                });
                self.bp_own_v2f.insert(i, msg);
            }
        }
        Ok(out)
    }

    fn receive_bp(&mut self, payload: WirePayload) -> Result<(), Error> {
        self.check_sender(payload.from)?;
        let malformed = |kind: PayloadKind| Error::MalformedPayload {
            kind: kind.label(),
            from: payload.from,
            to: payload.to,
        };
        match payload.kind {
            PayloadKind::InfoMatrix => {
                let dk = self.neighbor_dims[&payload.from];
                let info = decode_matrix(&payload.body, dk, dk)
                    .ok_or_else(|| malformed(payload.kind))?;
                self.pending_info.insert(payload.from, info);
            }
            PayloadKind::MeanVector => {
                let dk = self.neighbor_dims[&payload.from];
                let mean = decode_vector(&payload.body, dk)
                    .ok_or_else(|| malformed(payload.kind))?;
                let info = self.pending_info.remove(&payload.from).ok_or(
                    Error::PhaseOrder("a mean payload arrived before its information payload"),
                )?;
                let msg = GaussianMessage {
                    info,
                    mean_part: mean,
                };
                let edge = &self.edges[&payload.from];
                let f2v = engine::linear_f2v_kernel(edge, payload.from, self.id, &msg)
                    .map_err(|e| {
                        Error::numerical(
                            format!(
                                "node {} processing message from {}",
                                self.id, payload.from
                            ),
                            e,
                        )
                    })?;
                self.bp_f2v.insert(payload.from, f2v);
            }
            PayloadKind::PrecisionDelta => {
                let dj = decode_scalar(&payload.body).ok_or_else(|| malformed(payload.kind))?;
                self.pending_delta.insert(payload.from, dj);
            }
            PayloadKind::PotentialDelta => {
                let dh = decode_scalar(&payload.body).ok_or_else(|| malformed(payload.kind))?;
                let dj = self.pending_delta.remove(&payload.from).ok_or(
                    Error::PhaseOrder(
                        "a potential payload arrived before its precision payload",
                    ),
                )?;
                self.bp_f2v
                    .insert(payload.from, GaussianMessage::scalar(dj, dh));
            }
            PayloadKind::VerdictBit => {
                return Err(Error::PhaseOrder(
                    "verdict payloads are not valid in the mean phase",
                ))
            }
        }
        Ok(())
    }

    /// This node's belief, identical to the centralized computation.
    fn belief(&self, iteration: usize) -> Result<Belief, Error> {
        if self.gmrf {
            let mut precision = self.diag;
            let mut potential = self.potential;
            for &k in &self.neighbors {
                let (dj, dh) = self.bp_f2v[&k].scalar_parts();
                precision += dj;
                potential += dh;
            }
            if precision == 0.0 {
                return Err(Error::BeliefUndefined {
                    node: self.id,
                    iteration,
                });
            }
            return Ok(Belief {
                node: self.id,
                mean: Vector::from_element(1, potential / precision),
                cov: Matrix::from_element(1, 1, 1.0 / precision),
            });
        }
        let incoming: Vec<&GaussianMessage> =
            self.neighbors.iter().map(|k| &self.bp_f2v[k]).collect();
        let (info, potential) = engine::accumulate_information(
            self.prior_info.as_ref().expect("linear node"),
            &incoming,
        );
        let undefined = |_| Error::BeliefUndefined {
            node: self.id,
            iteration,
        };
        let cov = numerics::invert_spd(&info).map_err(undefined)?;
        let mean = numerics::solve_spd(&info, &potential).map_err(undefined)?;
        Ok(Belief {
            node: self.id,
            mean,
            cov,
        })
    }
}

struct Harness<'m> {
    model: &'m FactorGraphModel,
    nodes: BTreeMap<NodeId, NodeProcess>,
    trace: SimTrace,
    /// Global round counter across all phases.
    round: usize,
    fp_residual: Option<f64>,
    fp_iterations: Option<usize>,
}

impl<'m> Harness<'m> {
    fn new(model: &'m FactorGraphModel) -> Result<Self, Error> {
        let mut nodes = BTreeMap::new();
        for id in model.node_ids() {
            nodes.insert(id, NodeProcess::new(model, id)?);
        }
        Ok(Harness {
            model,
            nodes,
            trace: SimTrace::default(),
            round: 0,
            fp_residual: None,
            fp_iterations: None,
        })
    }

    /// Routes one payload, enforcing that it travels along a graph edge,
    /// and logs it. Returns the payload for delivery.
    fn route(&mut self, payload: WirePayload) -> Result<WirePayload, Error> {
        if !self.model.neighbors(payload.from).contains(&payload.to) {
            return Err(Error::NonLocalSend {
                from: payload.from,
                to: payload.to,
            });
        }
        self.trace.push(TraceRecord {
            iteration: payload.iteration,
            from: payload.from,
            to: payload.to,
            kind: payload.kind,
            bytes: payload.body.len(),
        });
        Ok(payload)
    }

    fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    /// Stacks the nodes' current information stores into the same global
    /// maps the centralized fixed point iterates, for the termination
    /// check. This is experiment instrumentation: the values are read, not
    /// fed back into any node.
    fn collect_fp_linear(
        &self,
    ) -> (
        BTreeMap<DirectedEdge, Matrix>,
        BTreeMap<DirectedEdge, Matrix>,
    ) {
        let mut v2f = BTreeMap::new();
        let mut f2v = BTreeMap::new();
        for (&id, node) in &self.nodes {
            for (&i, m) in &node.fp_own_info {
                v2f.insert(DirectedEdge { from: id, to: i }, m.clone());
            }
            for (&k, m) in &node.fp_f2v_info {
                f2v.insert(DirectedEdge { from: k, to: id }, m.clone());
            }
        }
        (v2f, f2v)
    }

    fn collect_fp_deltas(&self) -> BTreeMap<DirectedEdge, f64> {
        let mut out = BTreeMap::new();
        for (&id, node) in &self.nodes {
            for (&k, &d) in &node.fp_received_delta {
                out.insert(DirectedEdge { from: k, to: id }, d);
            }
        }
        out
    }

    fn info_fixed_point_phase(&mut self, tol: f64, max_iter: usize) -> Result<(), Error> {
        let ids = self.node_ids();
        let gmrf = self.model.is_gmrf();
        let (mut old_v2f, mut old_f2v) = self.collect_fp_linear();
        let mut old_deltas = self.collect_fp_deltas();
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < max_iter {
            self.round += 1;
            let mut batch = Vec::new();
            for &id in &ids {
                let node = self.nodes.get_mut(&id).expect("known node");
                batch.extend(node.emit_fp(self.round)?);
            }
            for payload in batch {
                let payload = self.route(payload)?;
                let to = payload.to;
                self.nodes
                    .get_mut(&to)
                    .expect("known node")
                    .receive_fp(payload)?;
            }
            iterations += 1;
            if gmrf {
                let deltas = self.collect_fp_deltas();
                residual = convergence::scalar_map_residual(&old_deltas, &deltas);
                old_deltas = deltas;
            } else {
                let (v2f, f2v) = self.collect_fp_linear();
                let rv = convergence::matrix_map_residual(&old_v2f, &v2f);
                let rf = convergence::matrix_map_residual(&old_f2v, &f2v);
                residual = if rv.is_nan() || rf.is_nan() {
                    f64::NAN
                } else {
                    rv.max(rf)
                };
                old_v2f = v2f;
                old_f2v = f2v;
            }
            if residual < tol {
                for &id in &ids {
                    self.nodes.get_mut(&id).expect("known node").finalize_fp()?;
                }
                self.fp_residual = Some(residual);
                self.fp_iterations = Some(iterations);
                return Ok(());
            }
        }
        Err(Error::FixedPointNotCertified {
            residual,
            iterations,
        })
    }

    fn certify_phase(&mut self) -> Result<ConvergenceReport, Error> {
        let ids = self.node_ids();
        let mut verdicts = Vec::with_capacity(ids.len());
        for &id in &ids {
            let v = self
                .nodes
                .get_mut(&id)
                .expect("known node")
                .certify()?;
            self.trace.verdicts.insert(id, v.verdict);
            verdicts.push(v);
        }
        // convergecast: one verdict bit per node flows up the breadth-first
        // spanning tree, deepest nodes first
        let root = NodeId(1);
        let tree = self.model.bfs_tree(root);
        let max_depth = tree.iter().filter_map(|&(_, d)| d).max().unwrap_or(0);
        for step in 0..max_depth {
            let depth = max_depth - step;
            self.round += 1;
            let mut batch = Vec::new();
            for &id in &ids {
                let (parent, d) = tree[id.index()];
                if d != Some(depth) {
                    continue;
                }
                let parent = parent.expect("non-root nodes have parents");
                let bit = self.nodes[&id].agg_verdict;
                batch.push(WirePayload {
                    kind: PayloadKind::VerdictBit,
                    from: id,
                    to: parent,
                    iteration: self.round,
                    body: vec![u8::from(bit)],
                });
            }
            for payload in batch {
                let payload = self.route(payload)?;
                let to = payload.to;
                self.nodes
                    .get_mut(&to)
                    .expect("known node")
                    .receive_verdict(payload)?;
            }
        }
        let verdict = self.nodes[&root].agg_verdict;
        let rho_local_max = verdicts.iter().fold(0.0_f64, |a, v| a.max(v.rho));
        Ok(ConvergenceReport {
            nodes: verdicts,
            verdict,
            rho_local_max,
            provenance: "local",
            rho_q: None,
            rho_qqt: None,
            walk_summability: None,
            fixed_point_residual: self.fp_residual.expect("fixed point phase ran"),
            fixed_point_iterations: self.fp_iterations.expect("fixed point phase ran"),
        })
    }

    fn assemble_state(&self, iteration: usize) -> MessageState {
        let mut v2f = BTreeMap::new();
        let mut f2v = BTreeMap::new();
        for (&id, node) in &self.nodes {
            for (&i, msg) in &node.bp_own_v2f {
                v2f.insert(DirectedEdge { from: id, to: i }, msg.clone());
            }
            for (&k, msg) in &node.bp_f2v {
                f2v.insert(DirectedEdge { from: k, to: id }, msg.clone());
            }
        }
        MessageState {
            iteration,
            v2f,
            f2v,
        }
    }

    fn collect_beliefs(&self, iteration: usize) -> Result<Vec<Belief>, Error> {
        self.nodes
            .values()
            .map(|node| node.belief(iteration))
            .collect()
    }

    fn mean_phase(&mut self, config: &EngineConfig) -> Result<BpRunResult, Error> {
        let ids = self.node_ids();
        // the initial factor messages are experiment inputs; each node is
        // handed exactly its own incoming slice
        let state0 = engine::init_state(self.model, config)?;
        for (key, msg) in state0.messages(engine::MessageDirection::FactorToVariable) {
            self.nodes
                .get_mut(&key.to)
                .expect("known node")
                .bp_f2v
                .insert(key.from, msg.clone());
        }
        for (key, msg) in state0.messages(engine::MessageDirection::VariableToFactor) {
            self.nodes
                .get_mut(&key.from)
                .expect("known node")
                .bp_own_v2f
                .insert(key.to, msg.clone());
        }
        let record = config.record_history;
        let mut current = self.collect_beliefs(0)?;
        let mut belief_trajectory = Vec::new();
        let mut message_trajectory = Vec::new();
        if record {
            belief_trajectory.push(current.clone());
            message_trajectory.push(state0);
        }
        let mut deltas = Vec::new();
        let mut converged = false;
        let mut iteration = 0;
        while iteration < config.max_iter {
            self.round += 1;
            let mut batch = Vec::new();
            for &id in &ids {
                let node = self.nodes.get_mut(&id).expect("known node");
                batch.extend(node.emit_bp(self.round)?);
            }
            for payload in batch {
                let payload = self.route(payload)?;
                let to = payload.to;
                self.nodes
                    .get_mut(&to)
                    .expect("known node")
                    .receive_bp(payload)?;
            }
            iteration += 1;
            let next = self.collect_beliefs(iteration)?;
            let delta = engine::max_mean_delta(&current, &next);
            deltas.push(delta);
            if record {
                belief_trajectory.push(next.clone());
                message_trajectory.push(self.assemble_state(iteration));
            }
            current = next;
            if delta < config.eta {
                converged = true;
                break;
            }
        }
        Ok(BpRunResult {
            beliefs: current,
            converged,
            iterations: iteration,
            deltas,
            belief_trajectory,
            message_trajectory,
        })
    }
}

/// Runs the selected phases over a simulated network and returns their
/// outputs with the full traffic trace.
///
/// The fixed point phase uses the standard tolerance and sweep budget from
/// [`numerics`]; the mean phase honors `config` exactly as the engine
/// does, except that `threads` is ignored: rounds are inherently ordered
/// here, and engine results are bit-identical across thread counts anyway.
pub fn simulate(
    model: &FactorGraphModel,
    config: &EngineConfig,
    phases: SimPhases,
) -> Result<SimOutcome, Error> {
    let report = model.validate();
    if !report.is_empty() {
        return Err(Error::InvalidModel(report));
    }
    if config.eta <= 0.0 || !config.eta.is_finite() {
        return Err(Error::InvalidConfig("eta must be positive and finite"));
    }
    if phases.certify && !phases.info_fixed_point {
        return Err(Error::PhaseOrder(
            "certification requires the information fixed point phase",
        ));
    }
    let mut harness = Harness::new(model)?;
    if phases.info_fixed_point {
        harness.info_fixed_point_phase(
            numerics::FIXED_POINT_TOL,
            numerics::FIXED_POINT_MAX_ITER,
        )?;
    }
    let report = if phases.certify {
        Some(harness.certify_phase()?)
    } else {
        None
    };
    let run = if phases.mean_propagation {
        Some(harness.mean_phase(config)?)
    } else {
        None
    };
    Ok(SimOutcome {
        run,
        report,
        trace: harness.trace,
    })
}
