//! Synchronous-flooding Gaussian belief propagation.
//!
//! One iteration updates every variable-to-factor message from the previous
//! iteration's factor-to-variable set, then every factor-to-variable message
//! from the fresh variable-to-factor set, then beliefs. Updates within a
//! phase read only the other phase's snapshot, so in-phase execution order
//! cannot affect results; the optional thread pool exploits exactly that.
//!
//! GMRF models absorb the pairwise factor into the variable update: one
//! fused update produces the (precision delta, potential delta) pair that
//! plays both message roles, and the state mirrors it under both directions
//! so every edge always carries two messages per direction.

use crate::error::Error;
use crate::model::{EdgeObservation, FactorGraphModel, NodeId};
use crate::numerics::{self, Matrix, NumericsError, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;

/// Key of a directed message. `from -> to` names both the message that
/// variable `from` sends toward the factor it shares with `to` and the
/// message that factor emits into `to`; the two live in different maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectedEdge {
    pub from: NodeId,
    pub to: NodeId,
}

impl DirectedEdge {
    pub fn new(from: NodeId, to: NodeId) -> Self {
        DirectedEdge { from, to }
    }

    /// Unordered endpoint pair in `(lo, hi)` order.
    pub fn undirected(&self) -> (NodeId, NodeId) {
        if self.from < self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

impl fmt::Display for DirectedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageDirection {
    VariableToFactor,
    FactorToVariable,
}

/// One directed message in information form.
///
/// Linear Gaussian: `info` is the message information matrix and
/// `mean_part` the message mean. GMRF: both are 1x1, `info` holds the
/// precision delta and `mean_part` the potential delta.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessage {
    pub info: Matrix,
    pub mean_part: Vector,
}

impl GaussianMessage {
    pub fn zero(dim: usize) -> Self {
        GaussianMessage {
            info: Matrix::zeros(dim, dim),
            mean_part: Vector::zeros(dim),
        }
    }

    /// GMRF message from its two scalar parts.
    pub fn scalar(precision_delta: f64, potential_delta: f64) -> Self {
        GaussianMessage {
            info: Matrix::from_element(1, 1, precision_delta),
            mean_part: Vector::from_element(1, potential_delta),
        }
    }

    /// The two scalar parts of a GMRF message.
    pub fn scalar_parts(&self) -> (f64, f64) {
        (self.info[(0, 0)], self.mean_part[0])
    }
}

/// All directed messages of one iteration.
///
/// Invariant: both maps hold exactly one entry per directed edge, so two
/// messages per direction per undirected edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub(crate) iteration: usize,
    pub(crate) v2f: BTreeMap<DirectedEdge, GaussianMessage>,
    pub(crate) f2v: BTreeMap<DirectedEdge, GaussianMessage>,
}

impl MessageState {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn get(
        &self,
        direction: MessageDirection,
        from: NodeId,
        to: NodeId,
    ) -> Option<&GaussianMessage> {
        let key = DirectedEdge { from, to };
        match direction {
            MessageDirection::VariableToFactor => self.v2f.get(&key),
            MessageDirection::FactorToVariable => self.f2v.get(&key),
        }
    }

    pub fn messages(
        &self,
        direction: MessageDirection,
    ) -> impl Iterator<Item = (&DirectedEdge, &GaussianMessage)> {
        match direction {
            MessageDirection::VariableToFactor => self.v2f.iter(),
            MessageDirection::FactorToVariable => self.f2v.iter(),
        }
    }
}

/// Initial factor-to-variable messages. The variable-to-factor side always
/// starts as zero messages; it is overwritten before first use.
#[derive(Debug, Clone)]
pub enum MessageInit {
    /// Zero information, zero mean part everywhere.
    Zero,
    /// Zero information, mean parts drawn i.i.d. standard normal from the
    /// given seed. Draws follow the canonical directed-message order.
    RandomMeans { seed: u64 },
    /// Per-message initial values; absent messages default to zero.
    /// Linear information matrices must be symmetric PSD. GMRF precision
    /// deltas are forced to zero whatever the map says.
    Explicit(BTreeMap<DirectedEdge, GaussianMessage>),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Termination threshold on the max per-node belief mean change.
    pub eta: f64,
    pub max_iter: usize,
    pub init: MessageInit,
    /// Worker threads for the per-iteration message updates. `None` runs on
    /// the caller's thread; results are bit-identical either way.
    pub threads: Option<usize>,
    /// Record full belief and message trajectories in the run result.
    pub record_history: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            eta: 1e-9,
            max_iter: 500,
            init: MessageInit::Zero,
            threads: None,
            record_history: true,
        }
    }
}

/// Marginal estimate at one node after an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub node: NodeId,
    pub mean: Vector,
    /// Posterior covariance estimate. For GMRF models this is 1x1 and can
    /// be transiently negative while message precisions overshoot.
    pub cov: Matrix,
}

/// Outcome of [`Engine::run`]. Trajectories include the initial state and
/// one entry per iteration; they are empty when history recording is off.
#[derive(Debug, Clone)]
pub struct BpRunResult {
    pub beliefs: Vec<Belief>,
    pub converged: bool,
    pub iterations: usize,
    /// `deltas[l]` is the max per-node belief mean change at iteration l+1.
    pub deltas: Vec<f64>,
    pub belief_trajectory: Vec<Vec<Belief>>,
    pub message_trajectory: Vec<MessageState>,
}

/// Every directed message key in canonical order: destination-major,
/// source ascending within a destination. Stacked message vectors and all
/// seeded random draws follow this order.
pub fn directed_message_order(model: &FactorGraphModel) -> Vec<DirectedEdge> {
    let mut keys = Vec::new();
    for to in model.node_ids() {
        for &from in model.neighbors(to) {
            keys.push(DirectedEdge { from, to });
        }
    }
    keys
}

/// Builds the iteration-zero message state.
///
/// Factor-to-variable messages take the configured initial values; the
/// GMRF path forces all initial precision deltas to zero. Fails on initial
/// information that is not symmetric PSD, on shape mismatches, and on
/// explicit entries naming pairs that are not edges.
pub fn init_state(model: &FactorGraphModel, config: &EngineConfig) -> Result<MessageState, Error> {
    if let MessageInit::Explicit(map) = &config.init {
        for key in map.keys() {
            if !model.neighbors(key.to).contains(&key.from) {
                return Err(Error::UnknownEdge {
                    a: key.from,
                    b: key.to,
                });
            }
        }
    }
    let order = directed_message_order(model);
    let mut rng = match &config.init {
        MessageInit::RandomMeans { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut v2f = BTreeMap::new();
    let mut f2v = BTreeMap::new();
    for key in order {
        if model.is_gmrf() {
            let potential_delta = match &config.init {
                MessageInit::Zero => 0.0,
                MessageInit::RandomMeans { .. } => {
                    StandardNormal.sample(rng.as_mut().expect("rng present"))
                }
                MessageInit::Explicit(map) => match map.get(&key) {
                    None => 0.0,
                    Some(m) => {
                        if m.mean_part.len() != 1 {
                            return Err(Error::InitShapeMismatch {
                                from: key.from,
                                to: key.to,
                                expected: 1,
                            });
                        }
                        m.mean_part[0]
                    }
                },
            };
            let msg = GaussianMessage::scalar(0.0, potential_delta);
            v2f.insert(key, msg.clone());
            f2v.insert(key, msg);
        } else {
            let dim_to = model.dim(key.to);
            let msg = match &config.init {
                MessageInit::Zero => GaussianMessage::zero(dim_to),
                MessageInit::RandomMeans { .. } => {
                    let rng = rng.as_mut().expect("rng present");
                    GaussianMessage {
                        info: Matrix::zeros(dim_to, dim_to),
                        mean_part: Vector::from_fn(dim_to, |_, _| StandardNormal.sample(rng)),
                    }
                }
                MessageInit::Explicit(map) => match map.get(&key) {
                    None => GaussianMessage::zero(dim_to),
                    Some(m) => {
                        if m.info.nrows() != dim_to
                            || m.info.ncols() != dim_to
                            || m.mean_part.len() != dim_to
                        {
                            return Err(Error::InitShapeMismatch {
                                from: key.from,
                                to: key.to,
                                expected: dim_to,
                            });
                        }
                        let symmetric =
                            numerics::relative_asymmetry(&m.info) <= numerics::SYMMETRY_TOL;
                        if !symmetric || !numerics::is_psd(&m.info).unwrap_or(false) {
                            return Err(Error::InitInfoNotPsd {
                                from: key.from,
                                to: key.to,
                            });
                        }
                        m.clone()
                    }
                },
            };
            f2v.insert(key, msg);
            v2f.insert(key, GaussianMessage::zero(model.dim(key.from)));
        }
    }
    Ok(MessageState {
        iteration: 0,
        v2f,
        f2v,
    })
}

/// info = prior + sum of incoming infos; potential = sum of info-weighted
/// mean parts. Addition follows slice order, which callers fix to
/// ascending source id; zero-information messages contribute nothing, so
/// no inversion of incoming info ever happens here.
pub(crate) fn accumulate_information(
    prior_info: &Matrix,
    incoming: &[&GaussianMessage],
) -> (Matrix, Vector) {
    let mut info = prior_info.clone();
    let mut potential = Vector::zeros(prior_info.nrows());
    for m in incoming {
        info += &m.info;
        potential += &m.info * &m.mean_part;
    }
    (info, potential)
}

/// Variable-to-factor update for the linear Gaussian path.
pub(crate) fn linear_v2f_kernel(
    prior_info: &Matrix,
    incoming: &[&GaussianMessage],
) -> Result<GaussianMessage, NumericsError> {
    let (info, potential) = accumulate_information(prior_info, incoming);
    let mean_part = numerics::solve_spd(&info, &potential)?;
    Ok(GaussianMessage { info, mean_part })
}

/// Information-only factor output shared by the engine and the certifier.
pub(crate) struct FactorInfoParts {
    /// Inverse of the bracketed matrix `R + A_src C A_src^T`.
    pub(crate) bracket_inv: Matrix,
    /// Emitted message information `A_dst^T bracket_inv A_dst`.
    pub(crate) info: Matrix,
}

/// Information part of the factor-to-variable update on edge `{from, to}`
/// into `to`, given the source's variable-to-factor information.
pub(crate) fn linear_f2v_info(
    edge: &EdgeObservation,
    from: NodeId,
    to: NodeId,
    source_info: &Matrix,
) -> Result<FactorInfoParts, NumericsError> {
    let a_src = edge.coeff_of(from);
    let a_dst = edge.coeff_of(to);
    let source_cov = numerics::invert_spd(source_info)?;
    let bracket =
        numerics::symmetrize(&(edge.noise_cov() + a_src * (&source_cov * a_src.transpose())));
    let bracket_inv = numerics::invert_spd(&bracket)?;
    let info = numerics::symmetrize(&(a_dst.transpose() * (&bracket_inv * a_dst)));
    Ok(FactorInfoParts { bracket_inv, info })
}

/// Full factor-to-variable update on edge `{from, to}` into `to`.
pub(crate) fn linear_f2v_kernel(
    edge: &EdgeObservation,
    from: NodeId,
    to: NodeId,
    source: &GaussianMessage,
) -> Result<GaussianMessage, NumericsError> {
    let parts = linear_f2v_info(edge, from, to, &source.info)?;
    let innovation = edge.obs() - edge.coeff_of(from) * &source.mean_part;
    let potential = edge.coeff_of(to).transpose() * (&parts.bracket_inv * innovation);
    let mean_part = numerics::solve_spd(&parts.info, &potential)?;
    Ok(GaussianMessage {
        info: parts.info,
        mean_part,
    })
}

/// Fused GMRF update for the message `from -> to`.
///
/// `diag` and `potential` belong to the sender, `coupling` is the precision
/// entry joining the pair. A non-positive denominator is not an error: the
/// recursion is simply iterated and divergence surfaces as a run that never
/// meets its threshold.
pub(crate) fn gmrf_kernel(
    diag: f64,
    coupling: f64,
    potential: f64,
    incoming: &[&GaussianMessage],
) -> GaussianMessage {
    let mut denom = diag;
    let mut acc = potential;
    for m in incoming {
        let (dj, dh) = m.scalar_parts();
        denom += dj;
        acc += dh;
    }
    GaussianMessage::scalar(-(coupling * coupling) / denom, -coupling * acc / denom)
}

fn canonical_pair(key: DirectedEdge) -> (NodeId, NodeId) {
    key.undirected()
}

fn gather<'s>(
    map: &'s BTreeMap<DirectedEdge, GaussianMessage>,
    model: &FactorGraphModel,
    node: NodeId,
    exclude: Option<NodeId>,
) -> Result<Vec<&'s GaussianMessage>, Error> {
    let mut out = Vec::with_capacity(model.neighbors(node).len());
    for &k in model.neighbors(node) {
        if Some(k) == exclude {
            continue;
        }
        match map.get(&DirectedEdge { from: k, to: node }) {
            Some(m) => out.push(m),
            None => {
                return Err(Error::MissingMessage {
                    what: "factor-to-variable",
                    from: k,
                    to: node,
                })
            }
        }
    }
    Ok(out)
}

fn prior_information(model: &FactorGraphModel, node: NodeId) -> Result<Matrix, Error> {
    let linear = model.as_linear().ok_or(Error::WrongModelKind {
        expected: "linear_gaussian",
    })?;
    numerics::invert_spd(&linear.nodes[node.index()].prior_cov)
        .map_err(|e| Error::numerical(format!("prior inverse at node {node}"), e))
}

/// One variable-to-factor message from the previous iteration's
/// factor-to-variable messages. For GMRF models this is the fused update
/// whose output doubles as the factor-to-variable message.
pub fn update_variable_to_factor(
    model: &FactorGraphModel,
    state: &MessageState,
    from: NodeId,
    toward: NodeId,
) -> Result<GaussianMessage, Error> {
    if !model.neighbors(from).contains(&toward) {
        return Err(Error::UnknownEdge {
            a: from,
            b: toward,
        });
    }
    let incoming = gather(&state.f2v, model, from, Some(toward))?;
    if let Some(gmrf) = model.as_gmrf() {
        let p = gmrf.precision();
        return Ok(gmrf_kernel(
            p[(from.index(), from.index())],
            p[(from.index(), toward.index())],
            gmrf.potential()[from.index()],
            &incoming,
        ));
    }
    let prior_info = prior_information(model, from)?;
    linear_v2f_kernel(&prior_info, &incoming).map_err(|e| {
        Error::numerical(
            format!("variable {from} toward factor ({from}, {toward})"),
            e,
        )
    })
}

/// One factor-to-variable message into `into`, consuming the current
/// variable-to-factor message from `from` on the shared edge. For GMRF
/// models the factor is absorbed and the stored fused message is returned.
pub fn update_factor_to_variable(
    model: &FactorGraphModel,
    state: &MessageState,
    from: NodeId,
    into: NodeId,
) -> Result<GaussianMessage, Error> {
    let key = DirectedEdge { from, to: into };
    if !model.neighbors(from).contains(&into) {
        return Err(Error::UnknownEdge { a: from, b: into });
    }
    let source = state.v2f.get(&key).ok_or(Error::MissingMessage {
        what: "variable-to-factor",
        from,
        to: into,
    })?;
    if model.is_gmrf() {
        return Ok(source.clone());
    }
    let edge = model
        .edge_observation(from, into)
        .ok_or(Error::UnknownEdge { a: from, b: into })?;
    linear_f2v_kernel(edge, from, into, source)
        .map_err(|e| Error::numerical(format!("factor ({from}, {into}) into {into}"), e))
}

fn belief_at(
    model: &FactorGraphModel,
    state: &MessageState,
    node: NodeId,
    prior_info: Option<&Matrix>,
) -> Result<Belief, Error> {
    let incoming = gather(&state.f2v, model, node, None)?;
    if let Some(gmrf) = model.as_gmrf() {
        let mut precision = gmrf.precision()[(node.index(), node.index())];
        let mut potential = gmrf.potential()[node.index()];
        for m in &incoming {
            let (dj, dh) = m.scalar_parts();
            precision += dj;
            potential += dh;
        }
        if precision == 0.0 {
            return Err(Error::BeliefUndefined {
                node,
                iteration: state.iteration,
            });
        }
        return Ok(Belief {
            node,
            mean: Vector::from_element(1, potential / precision),
            cov: Matrix::from_element(1, 1, 1.0 / precision),
        });
    }
    let owned;
    let prior = match prior_info {
        Some(p) => p,
        None => {
            owned = prior_information(model, node)?;
            &owned
        }
    };
    let (info, potential) = accumulate_information(prior, &incoming);
    let undefined = |_| Error::BeliefUndefined {
        node,
        iteration: state.iteration,
    };
    let cov = numerics::invert_spd(&info).map_err(undefined)?;
    let mean = numerics::solve_spd(&info, &potential).map_err(undefined)?;
    Ok(Belief {
        node,
        mean,
        cov,
    })
}

/// Beliefs at every node for the given state, in node id order. Defined at
/// any iteration; with all-zero initial information this returns the prior.
pub fn compute_beliefs(
    model: &FactorGraphModel,
    state: &MessageState,
) -> Result<Vec<Belief>, Error> {
    model
        .node_ids()
        .map(|n| belief_at(model, state, n, None))
        .collect()
}

pub(crate) fn max_mean_delta(previous: &[Belief], current: &[Belief]) -> f64 {
    let mut worst = 0.0_f64;
    for (p, c) in previous.iter().zip(current) {
        let d = (&c.mean - &p.mean).norm();
        if d.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(d);
    }
    worst
}

/// Synchronous belief propagation over one model.
pub struct Engine<'m> {
    model: &'m FactorGraphModel,
    config: EngineConfig,
    state: MessageState,
    order: Vec<DirectedEdge>,
    /// `W_i^-1` per node for linear models; empty for GMRF.
    prior_info: Vec<Matrix>,
    /// Edge observations keyed by canonical pair, for O(log E) lookup.
    edges: BTreeMap<(NodeId, NodeId), &'m EdgeObservation>,
    pool: Option<rayon::ThreadPool>,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m FactorGraphModel, config: EngineConfig) -> Result<Self, Error> {
        if config.eta <= 0.0 || !config.eta.is_finite() {
            return Err(Error::InvalidConfig("eta must be positive and finite"));
        }
        let report = model.validate();
        if !report.is_empty() {
            return Err(Error::InvalidModel(report));
        }
        let state = init_state(model, &config)?;
        let order = directed_message_order(model);
        let mut prior_info = Vec::new();
        let mut edges = BTreeMap::new();
        if let Some(linear) = model.as_linear() {
            for p in &linear.nodes {
                prior_info.push(
                    numerics::invert_spd(&p.prior_cov)
                        .map_err(|e| Error::numerical(format!("prior inverse at node {}", p.id), e))?,
                );
            }
            for e in &linear.edges {
                edges.insert(e.endpoints(), e);
            }
        }
        let pool = match config.threads {
            None => None,
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|_| Error::InvalidConfig("could not build the thread pool"))?,
            ),
        };
        Ok(Engine {
            model,
            config,
            state,
            order,
            prior_info,
            edges,
            pool,
        })
    }

    pub fn model(&self) -> &'m FactorGraphModel {
        self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &MessageState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    fn map_messages<F>(&self, f: F) -> Vec<(DirectedEdge, Result<GaussianMessage, Error>)>
    where
        F: Fn(DirectedEdge) -> Result<GaussianMessage, Error> + Sync,
    {
        match &self.pool {
            Some(pool) => {
                pool.install(|| self.order.par_iter().map(|&k| (k, f(k))).collect())
            }
            None => self.order.iter().map(|&k| (k, f(k))).collect(),
        }
    }

    /// Advances one full iteration: all variable-to-factor updates, then
    /// all factor-to-variable updates.
    pub fn step(&mut self) -> Result<(), Error> {
        let next_iteration = self.state.iteration + 1;
        if self.model.is_gmrf() {
            let gmrf = self.model.as_gmrf().expect("kind checked");
            let state = &self.state;
            let model = self.model;
            let results = self.map_messages(|key| {
                let incoming = gather(&state.f2v, model, key.from, Some(key.to))?;
                let p = gmrf.precision();
                Ok(gmrf_kernel(
                    p[(key.from.index(), key.from.index())],
                    p[(key.from.index(), key.to.index())],
                    gmrf.potential()[key.from.index()],
                    &incoming,
                ))
            });
            let mut fused = BTreeMap::new();
            for (key, result) in results {
                fused.insert(key, result?);
            }
            self.state.v2f = fused.clone();
            self.state.f2v = fused;
        } else {
            let state = &self.state;
            let model = self.model;
            let prior_info = &self.prior_info;
            let v2f_results = self.map_messages(|key| {
                let incoming = gather(&state.f2v, model, key.from, Some(key.to))?;
                linear_v2f_kernel(&prior_info[key.from.index()], &incoming).map_err(|e| {
                    Error::numerical(
                        format!(
                            "variable {} toward factor ({}, {}) in iteration {}",
                            key.from, key.from, key.to, next_iteration
                        ),
                        e,
                    )
                })
            });
            let mut v2f = BTreeMap::new();
            for (key, result) in v2f_results {
                v2f.insert(key, result?);
            }
            let edges = &self.edges;
            let f2v_results = self.map_messages(|key| {
                let edge = edges[&canonical_pair(key)];
                let source = &v2f[&key];
                linear_f2v_kernel(edge, key.from, key.to, source).map_err(|e| {
                    Error::numerical(
                        format!(
                            "factor ({}, {}) into {} in iteration {}",
                            key.from, key.to, key.to, next_iteration
                        ),
                        e,
                    )
                })
            });
            let mut f2v = BTreeMap::new();
            for (key, result) in f2v_results {
                f2v.insert(key, result?);
            }
            self.state.v2f = v2f;
            self.state.f2v = f2v;
        }
        self.state.iteration = next_iteration;
        Ok(())
    }

    /// Beliefs for the current state, in node id order.
    pub fn beliefs(&self) -> Result<Vec<Belief>, Error> {
        self.model
            .node_ids()
            .map(|n| {
                let prior = self.prior_info.get(n.index());
                belief_at(self.model, &self.state, n, prior)
            })
            .collect()
    }

    /// Iterates until the max per-node belief mean change drops below eta
    /// or max_iter is reached.
    pub fn run(&mut self) -> Result<BpRunResult, Error> {
        let record = self.config.record_history;
        let mut current = self.beliefs()?;
        let mut belief_trajectory = Vec::new();
        let mut message_trajectory = Vec::new();
        if record {
            belief_trajectory.push(current.clone());
            message_trajectory.push(self.state.clone());
        }
        let mut deltas = Vec::new();
        let mut converged = false;
        while self.state.iteration < self.config.max_iter {
            self.step()?;
            let next = self.beliefs()?;
            let delta = max_mean_delta(&current, &next);
            deltas.push(delta);
            if record {
                belief_trajectory.push(next.clone());
                message_trajectory.push(self.state.clone());
            }
            current = next;
            if delta < self.config.eta {
                converged = true;
                break;
            }
        }
        Ok(BpRunResult {
            beliefs: current,
            converged,
            iterations: self.state.iteration,
            deltas,
            belief_trajectory,
            message_trajectory,
        })
    }
}

/// Builds an engine and runs it to termination.
pub fn run(model: &FactorGraphModel, config: EngineConfig) -> Result<BpRunResult, Error> {
    Engine::new(model, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{gmrf_chain3, gmrf_cycle4, two_node_line};
    use crate::model::generate::{generate_gmrf, generate_linear, Topology};
    use crate::oracle;
    use approx::assert_relative_eq;

    fn zero_config() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn init_defaults_on_chain_gmrf() {
        let model = gmrf_chain3(0.4, [1.0, 2.0, 3.0]);
        let state = init_state(&model, &zero_config()).unwrap();
        assert_eq!(state.f2v.len(), 4);
        assert_eq!(state.v2f.len(), 4);
        for (_, m) in state.messages(MessageDirection::FactorToVariable) {
            assert_eq!(m.scalar_parts(), (0.0, 0.0));
        }
        assert_eq!(state.iteration(), 0);
    }

    #[test]
    fn init_explicit_identity_info() {
        let model = two_node_line(1.0);
        let mut map = BTreeMap::new();
        for key in directed_message_order(&model) {
            map.insert(
                key,
                GaussianMessage {
                    info: Matrix::identity(1, 1),
                    mean_part: Vector::zeros(1),
                },
            );
        }
        let config = EngineConfig {
            init: MessageInit::Explicit(map),
            ..zero_config()
        };
        let state = init_state(&model, &config).unwrap();
        for (_, m) in state.messages(MessageDirection::FactorToVariable) {
            assert_eq!(m.info[(0, 0)], 1.0);
        }
    }

    #[test]
    fn init_rejects_negative_info() {
        let model = two_node_line(1.0);
        let mut map = BTreeMap::new();
        map.insert(
            DirectedEdge::new(NodeId(1), NodeId(2)),
            GaussianMessage {
                info: Matrix::from_element(1, 1, -0.1),
                mean_part: Vector::zeros(1),
            },
        );
        let config = EngineConfig {
            init: MessageInit::Explicit(map),
            ..zero_config()
        };
        assert!(matches!(
            init_state(&model, &config),
            Err(Error::InitInfoNotPsd { .. })
        ));
    }

    #[test]
    fn init_rejects_unknown_pair() {
        let model = gmrf_chain3(0.4, [0.0; 3]);
        let mut map = BTreeMap::new();
        map.insert(
            DirectedEdge::new(NodeId(1), NodeId(3)),
            GaussianMessage::scalar(0.0, 1.0),
        );
        let config = EngineConfig {
            init: MessageInit::Explicit(map),
            ..zero_config()
        };
        assert!(matches!(
            init_state(&model, &config),
            Err(Error::UnknownEdge { .. })
        ));
    }

    #[test]
    fn leaf_variable_update_is_prior() {
        let model = two_node_line(1.0);
        let state = init_state(&model, &zero_config()).unwrap();
        let m = update_variable_to_factor(&model, &state, NodeId(1), NodeId(2)).unwrap();
        assert_eq!(m.info[(0, 0)], 1.0);
        assert_eq!(m.mean_part[0], 0.0);
    }

    #[test]
    fn chain_gmrf_first_round_messages() {
        let model = gmrf_chain3(0.4, [1.0, 2.0, 3.0]);
        let mut engine = Engine::new(&model, zero_config()).unwrap();
        engine.step().unwrap();
        let (dj, dh) = engine
            .state()
            .get(MessageDirection::FactorToVariable, NodeId(2), NodeId(1))
            .unwrap()
            .scalar_parts();
        assert_relative_eq!(dj, -0.16, max_relative = 1e-15);
        assert_relative_eq!(dh, 0.4 * 2.0, max_relative = 1e-15);
    }

    #[test]
    fn two_node_first_round_factor_message() {
        let model = two_node_line(1.0);
        let mut engine = Engine::new(&model, zero_config()).unwrap();
        engine.step().unwrap();
        let v = engine
            .state()
            .get(MessageDirection::VariableToFactor, NodeId(2), NodeId(1))
            .unwrap();
        assert_eq!(v.info[(0, 0)], 1.0);
        assert_eq!(v.mean_part[0], 0.0);
        let f = engine
            .state()
            .get(MessageDirection::FactorToVariable, NodeId(2), NodeId(1))
            .unwrap();
        assert_relative_eq!(f.info[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(f.mean_part[0], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn identity_factor_halves_information() {
        // R = I, A both identity, C_src = I: emitted info = (2I)^-1 = I/2
        let model = two_node_line(0.0);
        let edge = model.edge_observation(NodeId(1), NodeId(2)).unwrap();
        let parts =
            linear_f2v_info(edge, NodeId(2), NodeId(1), &Matrix::identity(1, 1)).unwrap();
        assert_relative_eq!(parts.info[(0, 0)], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn beliefs_at_initialization_equal_prior() {
        let model = two_node_line(1.0);
        let engine = Engine::new(&model, zero_config()).unwrap();
        for b in engine.beliefs().unwrap() {
            assert_eq!(b.mean[0], 0.0);
            assert_relative_eq!(b.cov[(0, 0)], 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn two_node_run_converges_to_exact_marginals() {
        let model = two_node_line(1.0);
        let config = EngineConfig {
            eta: 1e-12,
            max_iter: 100,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        assert!(result.converged);
        for b in &result.beliefs {
            assert_relative_eq!(b.mean[0], 1.0 / 3.0, epsilon = 1e-10);
            assert_relative_eq!(b.cov[(0, 0)], 2.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn chain_gmrf_run_matches_oracle() {
        let model = gmrf_chain3(0.4, [1.0, -0.5, 2.0]);
        let config = EngineConfig {
            eta: 1e-12,
            max_iter: 50,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 10, "took {}", result.iterations);
        let exact = oracle::exact_gmrf(&model).unwrap();
        for (b, i) in result.beliefs.iter().zip(0..) {
            assert_relative_eq!(b.mean[0], exact.means[i][0], epsilon = 1e-10);
            assert_relative_eq!(b.cov[(0, 0)], exact.covariances[i][(0, 0)], epsilon = 1e-9);
        }
    }

    #[test]
    fn vector_tree_matches_oracle() {
        let (model, _) = generate_linear(&[2, 3, 1, 2], Topology::Chain, 9).unwrap();
        let config = EngineConfig {
            eta: 1e-12,
            max_iter: 50,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        assert!(result.converged);
        let exact = oracle::exact_linear(&model).unwrap();
        for (b, i) in result.beliefs.iter().zip(0..) {
            assert!((&b.mean - &exact.means[i]).amax() < 1e-9);
            assert!((&b.cov - &exact.covariances[i]).amax() < 1e-8);
        }
    }

    #[test]
    fn divergent_cycle_never_converges() {
        let model = gmrf_cycle4(0.6, [1.0, 1.0, 1.0, 1.0]);
        let config = EngineConfig {
            eta: 1e-9,
            max_iter: 500,
            record_history: false,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 500);
    }

    #[test]
    fn max_iter_zero_returns_initial_beliefs() {
        let model = gmrf_chain3(0.4, [1.0, 2.0, 3.0]);
        let config = EngineConfig {
            max_iter: 0,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 0);
        for (b, h) in result.beliefs.iter().zip([1.0, 2.0, 3.0]) {
            assert_eq!(b.mean[0], h);
        }
    }

    #[test]
    fn variable_info_positive_definite_every_iteration() {
        let (model, _) = generate_linear(&[2, 1, 2, 1, 2], Topology::Cycle, 4).unwrap();
        let mut engine = Engine::new(&model, zero_config()).unwrap();
        for _ in 0..30 {
            engine.step().unwrap();
            for (_, m) in engine.state().messages(MessageDirection::VariableToFactor) {
                assert!(numerics::is_pd(&m.info).unwrap());
            }
        }
    }

    #[test]
    fn info_trajectory_ignores_initial_means_linear() {
        // a chain, not a 2-node line: leaves never aggregate their only
        // neighbor's message, so the middle node is what propagates means
        let (model, _) = generate_linear(&[1, 1, 1], Topology::Chain, 30).unwrap();
        let explicit = |mean: f64| {
            let mut map = BTreeMap::new();
            for key in directed_message_order(&model) {
                map.insert(
                    key,
                    GaussianMessage {
                        info: Matrix::from_element(1, 1, 0.3),
                        mean_part: Vector::from_element(1, mean),
                    },
                );
            }
            EngineConfig {
                init: MessageInit::Explicit(map),
                max_iter: 20,
                ..zero_config()
            }
        };
        let mut a = Engine::new(&model, explicit(0.0)).unwrap();
        let mut b = Engine::new(&model, explicit(0.7)).unwrap();
        let mut means_differed = false;
        for _ in 0..20 {
            a.step().unwrap();
            b.step().unwrap();
            for (key, ma) in a.state().messages(MessageDirection::VariableToFactor) {
                let mb = b.state().get(MessageDirection::VariableToFactor, key.from, key.to);
                assert_eq!(ma.info, mb.unwrap().info);
            }
            for (key, ma) in a.state().messages(MessageDirection::FactorToVariable) {
                let mb = b
                    .state()
                    .get(MessageDirection::FactorToVariable, key.from, key.to)
                    .unwrap();
                assert_eq!(ma.info, mb.info);
                if ma.mean_part != mb.mean_part {
                    means_differed = true;
                }
            }
        }
        assert!(means_differed, "mean trajectories never separated");
    }

    #[test]
    fn info_trajectory_ignores_initial_means_gmrf() {
        let model = gmrf_cycle4(0.3, [1.0, -1.0, 0.5, 0.25]);
        let zero = EngineConfig::default();
        let random = EngineConfig {
            init: MessageInit::RandomMeans { seed: 77 },
            ..EngineConfig::default()
        };
        let mut a = Engine::new(&model, zero).unwrap();
        let mut b = Engine::new(&model, random).unwrap();
        let mut potentials_differed = false;
        for _ in 0..15 {
            a.step().unwrap();
            b.step().unwrap();
            for (key, ma) in a.state().messages(MessageDirection::FactorToVariable) {
                let mb = b
                    .state()
                    .get(MessageDirection::FactorToVariable, key.from, key.to)
                    .unwrap();
                assert_eq!(ma.scalar_parts().0, mb.scalar_parts().0);
                if ma.scalar_parts().1 != mb.scalar_parts().1 {
                    potentials_differed = true;
                }
            }
        }
        assert!(potentials_differed, "potential trajectories never separated");
    }

    #[test]
    fn gmrf_and_linear_paths_agree_on_shared_models() {
        // scalar linear chain, A = 1: the posterior is a GMRF after unit
        // diagonal normalization; both engines must land on the same means
        let (model, _) = generate_linear(&[1, 1, 1, 1], Topology::Chain, 21).unwrap();
        let config = EngineConfig {
            eta: 1e-13,
            max_iter: 200,
            ..zero_config()
        };
        let linear_result = run(&model, config.clone()).unwrap();
        assert!(linear_result.converged);
        let (j, h) = oracle::posterior_information(&model).unwrap();
        let n = h.len();
        let scale = Vector::from_fn(n, |i, _| j[(i, i)].sqrt());
        let mut j_unit = j.clone();
        let mut h_unit = h.clone();
        for r in 0..n {
            for c in 0..n {
                j_unit[(r, c)] /= scale[r] * scale[c];
            }
            h_unit[r] /= scale[r];
        }
        let gmrf = FactorGraphModel::gmrf(numerics::symmetrize(&j_unit), h_unit);
        let gmrf_result = run(&gmrf, config).unwrap();
        assert!(gmrf_result.converged);
        for i in 0..n {
            let descaled = gmrf_result.beliefs[i].mean[0] / scale[i];
            assert_relative_eq!(linear_result.beliefs[i].mean[0], descaled, epsilon = 1e-9);
        }
    }

    #[test]
    fn thread_pool_is_bit_identical_to_serial() {
        let (model, _) = generate_linear(&[2, 3, 2, 1, 2, 3], Topology::ErdosRenyi { edge_prob: 0.6 }, 13)
            .unwrap();
        let serial = run(&model, EngineConfig { max_iter: 40, ..zero_config() }).unwrap();
        let parallel = run(
            &model,
            EngineConfig {
                max_iter: 40,
                threads: Some(3),
                ..zero_config()
            },
        )
        .unwrap();
        assert_eq!(serial.iterations, parallel.iterations);
        for (a, b) in serial.beliefs.iter().zip(&parallel.beliefs) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov, b.cov);
        }
    }

    #[test]
    fn history_flag_controls_trajectories() {
        let model = gmrf_chain3(0.4, [1.0, 2.0, 3.0]);
        let with = run(&model, EngineConfig { max_iter: 5, ..zero_config() }).unwrap();
        assert_eq!(with.belief_trajectory.len(), with.iterations + 1);
        assert_eq!(with.message_trajectory.len(), with.iterations + 1);
        let without = run(
            &model,
            EngineConfig {
                max_iter: 5,
                record_history: false,
                ..zero_config()
            },
        )
        .unwrap();
        assert!(without.belief_trajectory.is_empty());
        assert!(without.message_trajectory.is_empty());
    }

    #[test]
    fn rejects_nonpositive_eta() {
        let model = two_node_line(1.0);
        let config = EngineConfig {
            eta: 0.0,
            ..zero_config()
        };
        assert!(matches!(
            Engine::new(&model, config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn invalid_model_is_rejected() {
        let mut j = Matrix::identity(2, 2);
        j[(0, 1)] = -0.5;
        j[(1, 0)] = -0.4; // asymmetric
        let model = FactorGraphModel::gmrf(j, Vector::zeros(2));
        assert!(matches!(
            Engine::new(&model, EngineConfig::default()),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn random_tree_gmrf_converges_within_diameter_plus_one() {
        let model = generate_gmrf(12, Topology::RandomTree, 0.2, 5).unwrap();
        let diameter = model.diameter().unwrap();
        let config = EngineConfig {
            eta: 1e-12,
            max_iter: diameter + 1,
            ..zero_config()
        };
        let result = run(&model, config).unwrap();
        let exact = oracle::exact_gmrf(&model).unwrap();
        for (b, i) in result.beliefs.iter().zip(0..) {
            assert_relative_eq!(b.mean[0], exact.means[i][0], epsilon = 1e-9);
        }
    }
}
