//! Capacitated traffic assignment with one Physarum subnetwork per origin.
//!
//! Each origin keeps its own conductivities and solves its own Poisson system
//! over the shared travel times. Capacity is apportioned to origins by their
//! share of the aggregate link flow, and travel times relax halfway toward
//! the volume-delay function of the aggregate flow every iteration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cppa::{ConvergenceTrace, RunStatus, StallDetector, TraceRow, MIN_PRESSURE_DROP};
use crate::graph::{
    build_graph, relative_excess, validate_capacity, ArcSpec, Graph, GraphError, Mode, NodeId,
    ViolationReport,
};
use crate::laplacian::{LaplacianError, PoissonSystem, PressureVector};
use crate::maxflow::{oracle_maxflow, MaxFlowError};

pub const BPR_ALPHA: f64 = 0.15;
pub const BPR_BETA: f64 = 4.0;

/// Arcs above this count evaluate the relative gap only every
/// [`SPARSE_RGAP_EVERY`] iterations.
pub const DENSE_RGAP_ARCS: usize = 100;
pub const SPARSE_RGAP_EVERY: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtapError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Laplacian(#[from] LaplacianError),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("demand {index}: {reason}")]
    InvalidDemand { index: usize, reason: String },
    #[error("destination {destination} unreachable from origin {origin}")]
    DisconnectedDestination { origin: usize, destination: usize },
    #[error("no path from {origin} to {destination}")]
    DisconnectedOdPair { origin: usize, destination: usize },
    #[error("total flow-weighted travel time is zero")]
    ZeroDenominator,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One link of a traffic network, as read from file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub tail: usize,
    pub head: usize,
    pub capacity: f64,
    pub free_flow_time: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Link {
    pub fn new(tail: usize, head: usize, capacity: f64, free_flow_time: f64) -> Self {
        Link {
            tail,
            head,
            capacity,
            free_flow_time,
            alpha: BPR_ALPHA,
            beta: BPR_BETA,
        }
    }
}

/// Directed network with per-link volume-delay parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficNetwork {
    pub graph: Graph,
    pub free_flow_time: Vec<f64>,
    pub capacity: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TrafficNetwork {
    pub fn from_links(node_count: usize, links: &[Link]) -> Result<Self, CtapError> {
        for (i, l) in links.iter().enumerate() {
            if !(l.alpha >= 0.0 && l.alpha.is_finite() && l.beta >= 0.0 && l.beta.is_finite()) {
                return Err(CtapError::InvalidNetwork(format!("link {i}: alpha and beta must be nonnegative")));
            }
        }
        let graph = build_graph(
            node_count,
            links
                .iter()
                .map(|l| ArcSpec::new(l.tail, l.head, l.free_flow_time, l.capacity, 0.0)),
            Mode::Directed,
        )?;
        Ok(TrafficNetwork {
            free_flow_time: graph.lengths(),
            capacity: graph.capacities(),
            alpha: links.iter().map(|l| l.alpha).collect(),
            beta: links.iter().map(|l| l.beta).collect(),
            graph,
        })
    }

    pub fn links(&self) -> Vec<Link> {
        self.graph
            .arcs()
            .iter()
            .map(|a| Link {
                tail: a.tail.0,
                head: a.head.0,
                capacity: self.capacity[a.id],
                free_flow_time: self.free_flow_time[a.id],
                alpha: self.alpha[a.id],
                beta: self.beta[a.id],
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn link_count(&self) -> usize {
        self.graph.arc_count()
    }

    /// Volume-delay times of every link at aggregate flow `flow`.
    pub fn link_times(&self, flow: &[f64]) -> Vec<f64> {
        (0..self.link_count())
            .map(|a| travel_time(self.free_flow_time[a], flow[a], self.capacity[a], self.alpha[a], self.beta[a]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdDemand {
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
}

impl OdDemand {
    pub fn new(origin: usize, destination: usize, demand: f64) -> Self {
        OdDemand {
            origin: NodeId(origin),
            destination: NodeId(destination),
            demand,
        }
    }
}

pub fn validate_demands(network: &TrafficNetwork, demands: &[OdDemand]) -> Result<(), CtapError> {
    let n = network.node_count();
    for (index, d) in demands.iter().enumerate() {
        let bad = |reason: String| Err(CtapError::InvalidDemand { index, reason });
        if d.origin.0 >= n || d.destination.0 >= n {
            return bad(format!("node out of range for {n} nodes"));
        }
        if d.origin == d.destination {
            return bad(format!("origin equals destination {}", d.origin));
        }
        if !(d.demand > 0.0 && d.demand.is_finite()) {
            return bad(format!("demand {} must be positive", d.demand));
        }
    }
    Ok(())
}

/// BPR volume-delay function `t0 (1 + alpha (Q/C)^beta)`.
pub fn travel_time(t0: f64, flow: f64, capacity: f64, alpha: f64, beta: f64) -> f64 {
    if alpha == 0.0 || capacity.is_infinite() {
        return t0;
    }
    t0 * (1.0 + alpha * (flow.max(0.0) / capacity).powf(beta))
}

/// Origin-level injections: `+sum` at the origin, `-demand` at each destination.
pub fn origin_injections(node_count: usize, origin: NodeId, demands: &[OdDemand]) -> Vec<f64> {
    let mut inj = vec![0.0; node_count];
    for d in demands.iter().filter(|d| d.origin == origin) {
        inj[origin.0] += d.demand;
        inj[d.destination.0] -= d.demand;
    }
    inj
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginState {
    pub origin: NodeId,
    pub injections: Vec<f64>,
    pub conductivity: Vec<f64>,
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtapState {
    /// One subnetwork per distinct origin, in ascending origin order.
    pub origins: Vec<OriginState>,
    pub flow_all: Vec<f64>,
    pub travel_time: Vec<f64>,
    pub iteration: usize,
    pub rgap: Option<f64>,
}

impl CtapState {
    pub fn initial(network: &TrafficNetwork, demands: &[OdDemand], conductivity: f64) -> Self {
        let mut origins: Vec<NodeId> = demands.iter().map(|d| d.origin).collect();
        origins.sort();
        origins.dedup();
        let m = network.link_count();
        CtapState {
            origins: origins
                .into_iter()
                .map(|o| OriginState {
                    origin: o,
                    injections: origin_injections(network.node_count(), o, demands),
                    conductivity: vec![conductivity; m],
                    flow: vec![0.0; m],
                })
                .collect(),
            flow_all: vec![0.0; m],
            travel_time: network.free_flow_time.clone(),
            iteration: 0,
            rgap: None,
        }
    }

    pub fn origin(&self, origin: NodeId) -> Option<&OriginState> {
        self.origins.iter().find(|o| o.origin == origin)
    }
}

/// Pressures of one origin's subnetwork, grounded at the origin.
/// Anti-parallel links add their conductances in the shared Laplacian entry.
pub fn origin_pressures(network: &TrafficNetwork, state: &CtapState, origin: &OriginState) -> Result<PressureVector, CtapError> {
    let sys = PoissonSystem::assemble(
        &network.graph,
        &origin.conductivity,
        &state.travel_time,
        &origin.injections,
        origin.origin,
    )?;
    match sys.solve() {
        Ok(p) => Ok(p),
        Err(LaplacianError::DisconnectedInjection { node, .. }) => Err(CtapError::DisconnectedDestination {
            origin: origin.origin.0,
            destination: node,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Clamped Poiseuille flows of one origin.
pub fn origin_flows(network: &TrafficNetwork, conductivity: &[f64], lengths: &[f64], pressures: &PressureVector) -> Vec<f64> {
    network
        .graph
        .arcs()
        .iter()
        .map(|a| (conductivity[a.id] / lengths[a.id] * pressures.drop(a.tail, a.head)).max(0.0))
        .collect()
}

/// Per-origin adaptation with capacity apportioned by flow share.
pub fn ctap_adapt(q_r: f64, d_r: f64, drop: f64, length: f64, capacity: f64, k: f64, q_all: f64) -> f64 {
    let share = if q_all < 1e-12 { 1.0 } else { q_r / q_all };
    if q_r <= k * share * capacity {
        return (q_r.abs() + d_r) / 2.0;
    }
    if drop.abs() < MIN_PRESSURE_DROP {
        return d_r;
    }
    share * capacity * length / drop.abs()
}

/// `L <- (L + t(Q_all)) / 2` per link.
pub fn update_travel_times(state: &CtapState, network: &TrafficNetwork) -> Vec<f64> {
    network
        .link_times(&state.flow_all)
        .into_iter()
        .zip(&state.travel_time)
        .map(|(t, l)| (l + t) / 2.0)
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Label(f64, usize);

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over nonnegative link times; unreachable nodes get infinity.
pub fn shortest_times(graph: &Graph, times: &[f64], origin: NodeId) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    dist[origin.0] = 0.0;
    let mut heap = BinaryHeap::from([Label(0.0, origin.0)]);
    while let Some(Label(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &a in graph.incident(NodeId(u)) {
            let arc = graph.arc(a);
            if arc.tail.0 != u {
                continue;
            }
            let nd = d + times[a];
            let v = arc.head.0;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Label(nd, v));
            }
        }
    }
    dist
}

/// Relative gap `1 - sum(d * shortest time) / sum(Q * t)`.
pub fn rgap(graph: &Graph, flow: &[f64], times: &[f64], demands: &[OdDemand]) -> Result<f64, CtapError> {
    graph.check_len(flow)?;
    graph.check_len(times)?;
    let mut origins: Vec<NodeId> = demands.iter().map(|d| d.origin).collect();
    origins.sort();
    origins.dedup();
    let mut numerator = 0.0;
    for o in origins {
        let dist = shortest_times(graph, times, o);
        for d in demands.iter().filter(|d| d.origin == o) {
            let sp = dist[d.destination.0];
            if sp.is_infinite() {
                return Err(CtapError::DisconnectedOdPair {
                    origin: o.0,
                    destination: d.destination.0,
                });
            }
            numerator += d.demand * sp;
        }
    }
    let denominator: f64 = flow.iter().zip(times).map(|(q, t)| q * t).sum();
    if denominator <= 0.0 {
        return Err(CtapError::ZeroDenominator);
    }
    Ok(1.0 - numerator / denominator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtapConfig {
    pub k: f64,
    pub rgap_target: f64,
    pub max_iterations: usize,
    /// Plain adaptation without any capacity cap.
    pub uncapacitated: bool,
    pub initial_conductivity: f64,
    /// Relative gap cadence; `None` picks by network size.
    pub rgap_every: Option<usize>,
    pub stall_window: usize,
    pub trace_stride: usize,
    /// Solve the origin subnetworks on the rayon pool.
    pub parallel: bool,
}

impl Default for CtapConfig {
    fn default() -> Self {
        CtapConfig {
            k: 0.85,
            rgap_target: 1e-4,
            max_iterations: 10_000,
            uncapacitated: false,
            initial_conductivity: 0.5,
            rgap_every: None,
            stall_window: 500,
            trace_stride: 1,
            parallel: true,
        }
    }
}

impl CtapConfig {
    pub fn validate(&self) -> Result<(), CtapError> {
        let bad = |m: &str| Err(CtapError::InvalidConfig(m.to_string()));
        if !(self.k > 0.0 && self.k <= 1.0) {
            return bad("k must lie in (0, 1]");
        }
        if !(self.rgap_target > 0.0) {
            return bad("rgap target must be positive");
        }
        if self.max_iterations == 0 || self.trace_stride == 0 || self.rgap_every == Some(0) {
            return bad("iteration counts must be at least 1");
        }
        if !(self.initial_conductivity > 0.0 && self.initial_conductivity.is_finite()) {
            return bad("initial conductivity must be positive");
        }
        Ok(())
    }

    fn cadence(&self, links: usize) -> usize {
        self.rgap_every.unwrap_or(if links <= DENSE_RGAP_ARCS { 1 } else { SPARSE_RGAP_EVERY })
    }
}

/// Per-link row of a result, mirroring a flow/capacity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub link: usize,
    pub tail: usize,
    pub head: usize,
    pub capacity: f64,
    pub flow: f64,
    pub time: f64,
    pub relative_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtapResult {
    pub flows: Vec<f64>,
    /// Relaxed travel times carried by the iteration.
    pub times: Vec<f64>,
    /// Volume-delay times at the final flows.
    pub link_times: Vec<f64>,
    pub origin_flows: Vec<(NodeId, Vec<f64>)>,
    pub rgap: Option<f64>,
    pub rgap_trace: Vec<(usize, f64)>,
    pub violations: ViolationReport,
    pub max_relative_excess: f64,
    pub iterations: usize,
    pub status: RunStatus,
    pub trace: ConvergenceTrace,
}

impl CtapResult {
    pub fn link_rows(&self, network: &TrafficNetwork) -> Vec<LinkRow> {
        network
            .graph
            .arcs()
            .iter()
            .map(|a| LinkRow {
                link: a.id,
                tail: a.tail.0,
                head: a.head.0,
                capacity: network.capacity[a.id],
                flow: self.flows[a.id],
                time: self.link_times[a.id],
                relative_excess: relative_excess(self.flows[a.id], network.capacity[a.id]),
            })
            .collect()
    }
}

struct OriginStep {
    pressure: PressureVector,
    flow: Vec<f64>,
    residual: f64,
}

fn solve_origin(network: &TrafficNetwork, state: &CtapState, o: &OriginState) -> Result<OriginStep, CtapError> {
    let pressure = origin_pressures(network, state, o)?;
    let mut residual = o.injections.clone();
    for a in network.graph.arcs() {
        let q = o.conductivity[a.id] / state.travel_time[a.id] * pressure.drop(a.tail, a.head);
        residual[a.tail.0] -= q;
        residual[a.head.0] += q;
    }
    let flow = origin_flows(network, &o.conductivity, &state.travel_time, &pressure);
    Ok(OriginStep {
        pressure,
        flow,
        residual: residual.iter().map(|r| r.abs()).fold(0.0, f64::max),
    })
}

/// Runs the multi-origin iteration until the relative gap reaches the target
/// or the iteration cap. Failures after the first iteration end the run with
/// [`RunStatus::Breakdown`] and the last good state.
pub fn cppa_ctap(network: &TrafficNetwork, demands: &[OdDemand], config: &CtapConfig) -> Result<CtapResult, CtapError> {
    config.validate()?;
    validate_demands(network, demands)?;
    if demands.is_empty() {
        return Err(CtapError::InvalidDemand {
            index: 0,
            reason: "no demands".into(),
        });
    }
    let mut state = CtapState::initial(network, demands, config.initial_conductivity);
    for o in &state.origins {
        let dist = shortest_times(&network.graph, &network.free_flow_time, o.origin);
        if let Some(d) = demands.iter().find(|d| d.origin == o.origin && dist[d.destination.0].is_infinite()) {
            return Err(CtapError::DisconnectedOdPair {
                origin: d.origin.0,
                destination: d.destination.0,
            });
        }
    }
    let cadence = config.cadence(network.link_count());
    let mut trace = ConvergenceTrace::new(config.trace_stride);
    let mut stall = StallDetector::new(config.stall_window);
    let mut rgap_trace = Vec::new();
    let mut flagged = false;
    let status;

    loop {
        let solved: Vec<Result<OriginStep, CtapError>> = if config.parallel {
            state.origins.par_iter().map(|o| solve_origin(network, &state, o)).collect()
        } else {
            state.origins.iter().map(|o| solve_origin(network, &state, o)).collect()
        };
        let solved: Result<Vec<OriginStep>, CtapError> = solved.into_iter().collect();
        let solved = match solved {
            Ok(s) => s,
            Err(e) if state.iteration == 0 => return Err(e),
            Err(e) => {
                trace.breakdown = Some(e.to_string());
                status = RunStatus::Breakdown;
                break;
            }
        };

        let m = network.link_count();
        let mut flow_all = vec![0.0; m];
        for s in &solved {
            for (acc, q) in flow_all.iter_mut().zip(&s.flow) {
                *acc += q;
            }
        }
        let mut next = state.clone();
        let (mut l1, mut linf, mut residual) = (0.0_f64, 0.0_f64, 0.0_f64);
        for (o, s) in next.origins.iter_mut().zip(&solved) {
            for a in network.graph.arcs() {
                let i = a.id;
                let drop = s.pressure.drop(a.tail, a.head);
                let d = if config.uncapacitated {
                    (s.flow[i] + o.conductivity[i]) / 2.0
                } else {
                    ctap_adapt(s.flow[i], o.conductivity[i], drop, state.travel_time[i], network.capacity[i], config.k, flow_all[i])
                };
                let delta = (s.flow[i] - o.flow[i]).abs();
                l1 += delta;
                linf = linf.max(delta);
                o.conductivity[i] = d;
                o.flow[i] = s.flow[i];
            }
            residual = residual.max(s.residual);
        }
        next.flow_all = flow_all;
        next.travel_time = update_travel_times(&next, network);
        next.iteration += 1;
        let finite = next
            .origins
            .iter()
            .all(|o| o.conductivity.iter().all(|x| x.is_finite()))
            && next.travel_time.iter().all(|x| x.is_finite());
        if !finite {
            trace.breakdown = Some(format!("non-finite state at iteration {}", next.iteration));
            status = RunStatus::Breakdown;
            break;
        }

        let last = next.iteration >= config.max_iterations;
        let mut gap = None;
        if next.iteration.is_multiple_of(cadence) || last {
            let times = network.link_times(&next.flow_all);
            if let Ok(g) = rgap(&network.graph, &next.flow_all, &times, demands) {
                gap = Some(g);
                next.rgap = Some(g);
                rgap_trace.push((next.iteration, g));
            }
        }
        state = next;
        let row = TraceRow {
            iteration: state.iteration,
            l1_change: l1,
            linf_change: linf,
            max_rel_excess: crate::graph::max_relative_excess(&network.graph, &state.flow_all),
            conservation_residual: residual,
            rgap: gap,
        };
        if stall.observe(state.iteration, l1) && !flagged {
            flagged = true;
            trace.non_converging_at = Some(state.iteration);
        }
        if gap.is_some_and(|g| g.abs() <= config.rgap_target) {
            trace.push(row, true);
            status = RunStatus::Converged;
            break;
        }
        if last {
            trace.push(row, true);
            status = if flagged {
                RunStatus::NonConverging
            } else {
                RunStatus::MaxIterationsExceeded
            };
            break;
        }
        trace.push(row, false);
    }

    let link_times = network.link_times(&state.flow_all);
    let violations = validate_capacity(&network.graph, &state.flow_all, 0.0)?;
    Ok(CtapResult {
        max_relative_excess: violations.max_relative_excess(),
        flows: state.flow_all.clone(),
        times: state.travel_time.clone(),
        link_times,
        origin_flows: state.origins.iter().map(|o| (o.origin, o.flow.clone())).collect(),
        rgap: state.rgap,
        rgap_trace,
        violations,
        iterations: state.iteration,
        status,
        trace,
    })
}

/// Single-commodity relaxation of demand feasibility: every origin fed from a
/// super source, every destination drained to a super sink. If `routable` is
/// below `total_demand`, no assignment can respect the capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandFeasibility {
    pub total_demand: f64,
    pub routable: f64,
}

impl DemandFeasibility {
    pub fn is_feasible(&self) -> bool {
        self.routable >= self.total_demand * (1.0 - 1e-12)
    }
}

pub fn demand_feasibility(network: &TrafficNetwork, demands: &[OdDemand]) -> Result<DemandFeasibility, CtapError> {
    validate_demands(network, demands)?;
    let n = network.node_count();
    let (src, snk) = (n, n + 1);
    let mut specs = network.graph.specs();
    let mut supply = vec![0.0; n];
    let mut sink = vec![0.0; n];
    for d in demands {
        supply[d.origin.0] += d.demand;
        sink[d.destination.0] += d.demand;
    }
    for i in 0..n {
        if supply[i] > 0.0 {
            specs.push(ArcSpec::with_capacity(src, i, supply[i]));
        }
        if sink[i] > 0.0 {
            specs.push(ArcSpec::with_capacity(i, snk, sink[i]));
        }
    }
    let g = crate::graph::build_graph_with(n + 2, specs, Mode::Directed, true)?;
    let flow = oracle_maxflow(&g, NodeId(src), NodeId(snk)).map_err(|e| match e {
        MaxFlowError::Graph(g) => CtapError::Graph(g),
        other => CtapError::InvalidNetwork(other.to_string()),
    })?;
    Ok(DemandFeasibility {
        total_demand: demands.iter().map(|d| d.demand).sum(),
        routable: flow.value,
    })
}
