//! Maximum flow by capped Physarum dynamics, and an exact augmenting-path
//! oracle.
//!
//! The source is fed far more than the network can carry. A long,
//! high-capacity virtual path from source to sink absorbs the surplus, so once
//! the real arcs saturate, `MF = I0 - Q_virtual`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cppa::{self, ConvergenceTrace, CppaConfig, CppaError, RunStatus};
use crate::graph::{build_graph_with, source_sink_injections, ArcSpec, Graph, GraphError, Mode, NodeId};

/// Ratio between the virtual path and the summed base lengths and capacities.
pub const VIRTUAL_SCALE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaxFlowError {
    #[error("source and sink are both node {0}")]
    SameSourceSink(usize),
    #[error("terminal node {node} out of range for {node_count} nodes")]
    NodeOutOfRange { node: usize, node_count: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cppa(#[from] CppaError),
}

/// Stopping tolerance by graph size.
pub fn default_epsilon(node_count: usize) -> f64 {
    if node_count < 400 {
        5e-5
    } else {
        1e-4
    }
}

pub(crate) fn check_terminals(graph: &Graph, source: NodeId, sink: NodeId) -> Result<(), MaxFlowError> {
    let n = graph.node_count();
    for node in [source, sink] {
        if node.0 >= n {
            return Err(MaxFlowError::NodeOutOfRange {
                node: node.0,
                node_count: n,
            });
        }
    }
    if source == sink {
        return Err(MaxFlowError::SameSourceSink(source.0));
    }
    Ok(())
}

/// A graph with a virtual source-sink path appended after the base arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    pub base: Graph,
    pub graph: Graph,
    pub source: NodeId,
    pub sink: NodeId,
    pub virtual_arc_ids: Vec<usize>,
    pub virtual_node: Option<NodeId>,
    pub virtual_length: f64,
    pub virtual_capacity: f64,
}

impl AugmentedGraph {
    pub fn base_arc_count(&self) -> usize {
        self.base.arc_count()
    }

    /// Flow through the virtual path (taken on its first arc).
    pub fn virtual_flow(&self, flows: &[f64]) -> f64 {
        flows[self.virtual_arc_ids[0]]
    }
}

/// Appends the virtual path. A direct source-sink arc in the base forces an
/// intermediate virtual node so the two never run in parallel.
pub fn embed_virtual_path(graph: &Graph, source: NodeId, sink: NodeId) -> Result<AugmentedGraph, MaxFlowError> {
    check_terminals(graph, source, sink)?;
    let virtual_length = VIRTUAL_SCALE * graph.arcs().iter().map(|a| a.length).sum::<f64>();
    let virtual_capacity = VIRTUAL_SCALE * graph.arcs().iter().map(|a| a.capacity).sum::<f64>();
    // an empty base still needs a usable path
    let virtual_length = if virtual_length > 0.0 { virtual_length } else { VIRTUAL_SCALE };
    let virtual_capacity = if virtual_capacity > 0.0 { virtual_capacity } else { VIRTUAL_SCALE };

    let mut specs = graph.specs();
    let m = specs.len();
    let mut n = graph.node_count();
    let (virtual_arc_ids, virtual_node) = if graph.has_arc_between(source, sink) {
        let v = n;
        n += 1;
        specs.push(ArcSpec::new(source.0, v, virtual_length / 2.0, virtual_capacity, 0.0));
        specs.push(ArcSpec::new(v, sink.0, virtual_length / 2.0, virtual_capacity, 0.0));
        (vec![m, m + 1], Some(NodeId(v)))
    } else {
        specs.push(ArcSpec::new(source.0, sink.0, virtual_length, virtual_capacity, 0.0));
        (vec![m], None)
    };
    let augmented = build_graph_with(n, specs, graph.mode(), true)?;
    Ok(AugmentedGraph {
        base: graph.clone(),
        graph: augmented,
        source,
        sink,
        virtual_arc_ids,
        virtual_node,
        virtual_length,
        virtual_capacity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxFlowResult {
    /// `I0 - Q_virtual`, unrounded.
    pub max_flow: f64,
    /// Nearest integer, when every capacity is integral.
    pub rounded: Option<f64>,
    /// Flows on the base arcs.
    pub flows: Vec<f64>,
    pub virtual_flow: f64,
    pub injection: f64,
    pub iterations: usize,
    pub status: RunStatus,
    pub converged: bool,
    /// The stopping rule was met; see [`CppaRun::stationary`](crate::cppa::CppaRun::stationary).
    pub stationary: bool,
    pub trace: ConvergenceTrace,
}

impl MaxFlowResult {
    /// The rounded value when available, the raw one otherwise.
    pub fn value(&self) -> f64 {
        self.rounded.unwrap_or(self.max_flow)
    }
}

/// Capped Physarum maximum flow. Base arcs get unit length; the flow rule
/// follows `config.mode`.
pub fn cppa_maxflow(
    graph: &Graph,
    source: NodeId,
    sink: NodeId,
    config: &CppaConfig,
) -> Result<MaxFlowResult, MaxFlowError> {
    check_terminals(graph, source, sink)?;
    let base = graph.with_mode(config.mode)?.with_uniform_length(1.0)?;
    let aug = embed_virtual_path(&base, source, sink)?;
    let injection = aug.virtual_capacity;
    let inj = source_sink_injections(aug.graph.node_count(), source, sink, injection);
    let cfg = CppaConfig {
        ground: Some(config.ground.unwrap_or(source)),
        ..config.clone()
    };
    let run = cppa::run(&aug.graph, &aug.graph.lengths(), &inj, &cfg)?;
    let virtual_flow = aug.virtual_flow(&run.state.flow);
    let max_flow = injection - virtual_flow;
    let m = aug.base_arc_count();
    Ok(MaxFlowResult {
        max_flow,
        rounded: graph.has_integral_capacities().then(|| max_flow.round()),
        flows: run.state.flow[..m].to_vec(),
        virtual_flow,
        injection,
        iterations: run.state.iteration,
        status: run.status,
        converged: run.status.is_converged(),
        stationary: run.stationary,
        trace: run.trace,
    })
}

/// Exact max flow with per-arc flows and the source side of a minimum cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFlow {
    pub value: f64,
    pub flows: Vec<f64>,
    /// Nodes reachable from the source in the final residual network.
    pub source_side: Vec<bool>,
}

pub(crate) struct Residual {
    /// (to, residual capacity) per residual edge; edge `e ^ 1` is the reverse.
    pub to: Vec<usize>,
    pub cap: Vec<f64>,
    pub out: Vec<Vec<usize>>,
    pub initial: Vec<f64>,
}

impl Residual {
    /// Arc `a` becomes edges `2a` (forward) and `2a + 1` (reverse). Undirected
    /// edges carry their capacity both ways.
    pub fn new(graph: &Graph) -> Self {
        let m = graph.arc_count();
        let mut r = Residual {
            to: Vec::with_capacity(2 * m),
            cap: Vec::with_capacity(2 * m),
            out: vec![Vec::new(); graph.node_count()],
            initial: Vec::with_capacity(m),
        };
        for arc in graph.arcs() {
            let back = match graph.mode() {
                Mode::Directed => 0.0,
                Mode::Undirected => arc.capacity,
            };
            let e = r.to.len();
            r.to.extend([arc.head.0, arc.tail.0]);
            r.cap.extend([arc.capacity, back]);
            r.out[arc.tail.0].push(e);
            r.out[arc.head.0].push(e + 1);
            r.initial.push(arc.capacity);
        }
        r
    }

    /// Net flow on each original arc.
    pub fn flows(&self) -> Vec<f64> {
        self.initial
            .iter()
            .enumerate()
            .map(|(a, &c)| if c.is_infinite() { self.cap[2 * a + 1] } else { c - self.cap[2 * a] })
            .collect()
    }

    pub fn reachable(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.out.len()];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.out[u] {
                let v = self.to[e];
                if self.cap[e] > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn push(&mut self, e: usize, amount: f64) {
        self.cap[e] -= amount;
        self.cap[e ^ 1] += amount;
    }
}

/// Shortest-augmenting-path max flow (Edmonds-Karp). Ties between equally
/// short paths are broken by visiting residual edges in arc-id order.
pub fn oracle_maxflow(graph: &Graph, source: NodeId, sink: NodeId) -> Result<OracleFlow, MaxFlowError> {
    check_terminals(graph, source, sink)?;
    let (s, t) = (source.0, sink.0);
    let mut res = Residual::new(graph);
    let n = graph.node_count();
    let mut value = 0.0;
    loop {
        let mut pred = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        'bfs: while let Some(u) = queue.pop_front() {
            for &e in &res.out[u] {
                let v = res.to[e];
                if res.cap[e] > 0.0 && !seen[v] {
                    seen[v] = true;
                    pred[v] = e;
                    if v == t {
                        break 'bfs;
                    }
                    queue.push_back(v);
                }
            }
        }
        if !seen[t] {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let e = pred[v];
            bottleneck = bottleneck.min(res.cap[e]);
            v = res.to[e ^ 1];
        }
        if bottleneck.is_infinite() {
            value = f64::INFINITY;
            break;
        }
        let mut v = t;
        while v != s {
            let e = pred[v];
            res.push(e, bottleneck);
            v = res.to[e ^ 1];
        }
        value += bottleneck;
    }
    Ok(OracleFlow {
        value,
        flows: res.flows(),
        source_side: res.reachable(s),
    })
}

/// Capacity of the cut separating `source_side` from the rest. Undirected
/// edges count in either direction; directed arcs only from the source side.
pub fn cut_capacity(graph: &Graph, source_side: &[bool]) -> f64 {
    graph
        .arcs()
        .iter()
        .filter(|a| {
            let (t, h) = (source_side[a.tail.0], source_side[a.head.0]);
            match graph.mode() {
                Mode::Directed => t && !h,
                Mode::Undirected => t != h,
            }
        })
        .map(|a| a.capacity)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, validate_capacity, validate_conservation};

    pub(crate) fn diamond() -> Graph {
        build_graph(
            4,
            [
                ArcSpec::with_capacity(0, 1, 3.0),
                ArcSpec::with_capacity(0, 2, 2.0),
                ArcSpec::with_capacity(1, 3, 2.0),
                ArcSpec::with_capacity(2, 3, 3.0),
            ],
            Mode::Directed,
        )
        .unwrap()
    }

    #[test]
    fn virtual_path_dimensions() {
        let specs: Vec<_> = (0..187).map(|i| ArcSpec::with_capacity(i, i + 1, 1.0)).collect();
        let g = build_graph(188, specs, Mode::Directed).unwrap();
        let aug = embed_virtual_path(&g, NodeId(0), NodeId(187)).unwrap();
        assert_eq!(aug.virtual_length, 18700.0);
        assert_eq!(aug.virtual_node, None);
        assert_eq!(aug.virtual_arc_ids, vec![187]);

        let aug = embed_virtual_path(&diamond(), NodeId(0), NodeId(3)).unwrap();
        assert_eq!(aug.virtual_capacity, 1000.0);
    }

    #[test]
    fn direct_arc_forces_virtual_node() {
        let g = build_graph(2, [ArcSpec::with_capacity(0, 1, 5.0)], Mode::Directed).unwrap();
        let aug = embed_virtual_path(&g, NodeId(0), NodeId(1)).unwrap();
        assert_eq!(aug.virtual_node, Some(NodeId(2)));
        let a = aug.graph.arc(1);
        let b = aug.graph.arc(2);
        assert_eq!((a.tail, a.head, b.tail, b.head), (NodeId(0), NodeId(2), NodeId(2), NodeId(1)));
        assert_eq!(a.length, 50.0);

        // an opposite undirected edge also counts
        let u = build_graph(2, [ArcSpec::with_capacity(1, 0, 5.0)], Mode::Undirected).unwrap();
        assert!(embed_virtual_path(&u, NodeId(0), NodeId(1)).unwrap().virtual_node.is_some());
    }

    #[test]
    fn terminals_checked() {
        assert_eq!(
            embed_virtual_path(&diamond(), NodeId(1), NodeId(1)),
            Err(MaxFlowError::SameSourceSink(1))
        );
        assert!(matches!(
            oracle_maxflow(&diamond(), NodeId(0), NodeId(9)),
            Err(MaxFlowError::NodeOutOfRange { node: 9, .. })
        ));
    }

    #[test]
    fn oracle_examples() {
        let g = diamond();
        let o = oracle_maxflow(&g, NodeId(0), NodeId(3)).unwrap();
        assert_eq!(o.value, 4.0);
        assert_eq!(cut_capacity(&g, &o.source_side), 4.0);
        let inj = source_sink_injections(4, NodeId(0), NodeId(3), 4.0);
        assert!(validate_conservation(&g, &o.flows, &inj, 1e-9).unwrap().is_clean());
        assert!(validate_capacity(&g, &o.flows, 0.0).unwrap().is_clean());

        let single = build_graph(2, [ArcSpec::with_capacity(0, 1, 5.0)], Mode::Directed).unwrap();
        assert_eq!(oracle_maxflow(&single, NodeId(0), NodeId(1)).unwrap().value, 5.0);

        let split = build_graph(4, [ArcSpec::with_capacity(0, 1, 5.0), ArcSpec::with_capacity(2, 3, 5.0)], Mode::Directed)
            .unwrap();
        assert_eq!(oracle_maxflow(&split, NodeId(0), NodeId(3)).unwrap().value, 0.0);
    }

    #[test]
    fn undirected_oracle_uses_both_directions() {
        // 0-1 (2), 1-2 (2), 0-2 (1) undirected; reversed storage of 1-2
        let g = build_graph(
            3,
            [
                ArcSpec::with_capacity(0, 1, 2.0),
                ArcSpec::with_capacity(2, 1, 2.0),
                ArcSpec::with_capacity(0, 2, 1.0),
            ],
            Mode::Undirected,
        )
        .unwrap();
        let o = oracle_maxflow(&g, NodeId(0), NodeId(2)).unwrap();
        assert_eq!(o.value, 3.0);
        assert_eq!(o.flows, vec![2.0, -2.0, 1.0]);
    }

    #[test]
    fn cppa_examples() {
        let cfg = CppaConfig::default();
        let single = build_graph(2, [ArcSpec::with_capacity(0, 1, 5.0)], Mode::Directed).unwrap();
        let r = cppa_maxflow(&single, NodeId(0), NodeId(1), &cfg).unwrap();
        assert!(r.converged);
        assert!((r.max_flow - 5.0).abs() < 0.5);
        assert_eq!(r.rounded, Some(5.0));

        let r = cppa_maxflow(&diamond(), NodeId(0), NodeId(3), &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.rounded, Some(4.0));

        let two = build_graph(
            4,
            [
                ArcSpec::with_capacity(0, 1, 1.0),
                ArcSpec::with_capacity(1, 3, 1.0),
                ArcSpec::with_capacity(0, 2, 2.0),
                ArcSpec::with_capacity(2, 3, 2.0),
            ],
            Mode::Directed,
        )
        .unwrap();
        let r = cppa_maxflow(&two, NodeId(0), NodeId(3), &cfg).unwrap();
        assert_eq!(r.rounded, Some(3.0));
    }

    #[test]
    fn epsilon_defaults() {
        assert_eq!(default_epsilon(399), 5e-5);
        assert_eq!(default_epsilon(400), 1e-4);
    }
}
