//! Minimum-cost maximum flow in two Physarum phases: the maximum flow first,
//! then a second run on the original graph with unit costs as lengths and the
//! maximum flow as injection. An exact successive-shortest-path oracle is
//! included.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cppa::{self, ConvergenceTrace, CppaConfig, LengthUpdate, RunStatus, SolverState};
use crate::graph::{source_sink_injections, Graph, GraphError, Mode, NodeId};
use crate::maxflow::{check_terminals, cppa_maxflow, MaxFlowError, MaxFlowResult};

/// Lower bound on a length derived from a unit cost.
pub const COST_FLOOR: f64 = 1e-6;

/// Constant unit costs as lengths, floored at [`COST_FLOOR`].
pub fn cost_lengths(graph: &Graph) -> Vec<f64> {
    graph.arcs().iter().map(|a| a.unit_cost.max(COST_FLOOR)).collect()
}

/// `sum_a |Q_a| cost_a`.
pub fn total_cost(graph: &Graph, flows: &[f64]) -> Result<f64, GraphError> {
    graph.check_len(flows)?;
    Ok(graph.arcs().iter().zip(flows).map(|(a, q)| q.abs() * a.unit_cost).sum())
}

/// Marginal-cost lengths `c(Q) + Q c'(Q)` for flow-dependent unit costs.
/// The closure maps (arc id, |Q|) to (unit cost, derivative).
pub struct MarginalCost<F> {
    pub cost: F,
}

impl<F: Fn(usize, f64) -> (f64, f64)> LengthUpdate for MarginalCost<F> {
    fn update(&mut self, _graph: &Graph, state: &SolverState, lengths: &mut [f64]) {
        for (a, (l, q)) in lengths.iter_mut().zip(&state.flow).enumerate() {
            let q = q.abs();
            let (c, dc) = (self.cost)(a, q);
            *l = (c + q * dc).max(COST_FLOOR);
        }
    }
}

/// Which phase-one value the second phase injects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Injection {
    Raw,
    Rounded,
    /// Rounded when every capacity is integral, raw otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmfResult {
    pub max_flow: f64,
    pub rounded_max_flow: Option<f64>,
    /// Amount injected in the second phase.
    pub injection: f64,
    pub min_cost: f64,
    pub flows: Vec<f64>,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    pub phase1_status: RunStatus,
    pub phase2_status: RunStatus,
    pub phase1_trace: ConvergenceTrace,
    pub phase2_trace: ConvergenceTrace,
}

impl McmfResult {
    pub fn converged(&self) -> bool {
        self.phase1_status.is_converged() && self.phase2_status.is_converged()
    }
}

pub fn cppa_mcmf(graph: &Graph, source: NodeId, sink: NodeId, config: &CppaConfig) -> Result<McmfResult, MaxFlowError> {
    cppa_mcmf_with(graph, source, sink, config, Injection::Auto, None)
}

/// Two-phase run with an explicit injection policy and an optional length
/// update for the second phase.
pub fn cppa_mcmf_with(
    graph: &Graph,
    source: NodeId,
    sink: NodeId,
    config: &CppaConfig,
    injection: Injection,
    hook: Option<&mut dyn LengthUpdate>,
) -> Result<McmfResult, MaxFlowError> {
    let mf: MaxFlowResult = cppa_maxflow(graph, source, sink, config)?;
    let amount = match (injection, mf.rounded) {
        (Injection::Raw, _) | (Injection::Auto, None) => mf.max_flow,
        (Injection::Rounded, _) => mf.max_flow.round(),
        (Injection::Auto, Some(r)) => r,
    }
    .max(0.0);
    let base = graph.with_mode(config.mode)?;
    let m = base.arc_count();
    let (flows, iterations, status, trace) = if amount > 0.0 {
        let inj = source_sink_injections(base.node_count(), source, sink, amount);
        let cfg = CppaConfig {
            ground: Some(config.ground.unwrap_or(source)),
            ..config.clone()
        };
        let init = SolverState::initial(&base, cfg.initial_conductivity);
        let run = cppa::run_from(&base, &cost_lengths(&base), &inj, &cfg, init, hook)?;
        (run.state.flow, run.state.iteration, run.status, run.trace)
    } else {
        (vec![0.0; m], 0, RunStatus::Converged, ConvergenceTrace::new(config.trace_stride))
    };
    Ok(McmfResult {
        max_flow: mf.max_flow,
        rounded_max_flow: mf.rounded,
        injection: amount,
        min_cost: total_cost(&base, &flows)?,
        flows,
        phase1_iterations: mf.iterations,
        phase2_iterations: iterations,
        phase1_status: mf.status,
        phase2_status: status,
        phase1_trace: mf.trace,
        phase2_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMcmf {
    pub max_flow: f64,
    pub min_cost: f64,
    pub flows: Vec<f64>,
}

/// Successive shortest paths with a queue-based Bellman-Ford on the residual
/// network. Residual edges are scanned in arc-id order and labels change only
/// on strict improvement, so the result is deterministic.
pub fn oracle_mcmf(graph: &Graph, source: NodeId, sink: NodeId) -> Result<OracleMcmf, MaxFlowError> {
    check_terminals(graph, source, sink)?;
    let n = graph.node_count();
    // (to, cap, cost); edge e ^ 1 is the reverse of e
    let mut to = Vec::new();
    let mut cap = Vec::new();
    let mut cost = Vec::new();
    let mut out = vec![Vec::new(); n];
    // forward residual edge of each direction of each arc
    let mut forward: Vec<(usize, Option<usize>)> = Vec::new();
    let mut add = |u: usize, v: usize, c: f64, w: f64, out: &mut Vec<Vec<usize>>| {
        let e = to.len();
        to.extend([v, u]);
        cap.extend([c, 0.0]);
        cost.extend([w, -w]);
        out[u].push(e);
        out[v].push(e + 1);
        e
    };
    for a in graph.arcs() {
        let (u, v) = (a.tail.0, a.head.0);
        let e = add(u, v, a.capacity, a.unit_cost, &mut out);
        let back = match graph.mode() {
            Mode::Directed => None,
            Mode::Undirected => Some(add(v, u, a.capacity, a.unit_cost, &mut out)),
        };
        forward.push((e, back));
    }
    let initial = cap.clone();
    let (s, t) = (source.0, sink.0);
    let mut max_flow = 0.0;
    let mut min_cost = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut queued = vec![false; n];
        dist[s] = 0.0;
        let mut queue = VecDeque::from([s]);
        queued[s] = true;
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            for &e in &out[u] {
                if cap[e] <= 0.0 {
                    continue;
                }
                let v = to[e];
                let nd = dist[u] + cost[e];
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = e;
                    if !queued[v] {
                        queued[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        if dist[t].is_infinite() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let e = pred[v];
            bottleneck = bottleneck.min(cap[e]);
            v = to[e ^ 1];
        }
        if bottleneck.is_infinite() {
            return Ok(OracleMcmf {
                max_flow: f64::INFINITY,
                min_cost: f64::INFINITY,
                flows: vec![f64::NAN; graph.arc_count()],
            });
        }
        let mut v = t;
        while v != s {
            let e = pred[v];
            cap[e] -= bottleneck;
            cap[e ^ 1] += bottleneck;
            v = to[e ^ 1];
        }
        max_flow += bottleneck;
        min_cost += bottleneck * dist[t];
    }
    let used = |e: usize| initial[e] - cap[e];
    let flows = forward
        .iter()
        .map(|&(e, back)| used(e) - back.map_or(0.0, used))
        .collect();
    Ok(OracleMcmf {
        max_flow,
        min_cost,
        flows,
    })
}
