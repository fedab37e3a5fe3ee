//! Problem instances and the feasibility validators used to check solver output.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense 0-based node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i)
    }
}

/// Orientation convention for every arc of a graph.
///
/// `Undirected` edges are stored once and carry signed flow (positive means
/// tail to head). `Directed` arcs may only carry nonnegative flow; the
/// restriction is applied when flows are computed, not in storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Undirected,
    #[default]
    Directed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Undirected => f.write_str("undirected"),
            Mode::Directed => f.write_str("directed"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "undirected" => Ok(Mode::Undirected),
            "directed" => Ok(Mode::Directed),
            other => Err(format!("unknown mode `{other}` (expected directed|undirected)")),
        }
    }
}

/// Raw arc description accepted by [`build_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub tail: usize,
    pub head: usize,
    pub length: f64,
    pub capacity: f64,
    pub unit_cost: f64,
}

impl ArcSpec {
    pub fn new(tail: usize, head: usize, length: f64, capacity: f64, unit_cost: f64) -> Self {
        ArcSpec {
            tail,
            head,
            length,
            capacity,
            unit_cost,
        }
    }

    /// Unit length, unit cost.
    pub fn with_capacity(tail: usize, head: usize, capacity: f64) -> Self {
        ArcSpec::new(tail, head, 1.0, capacity, 1.0)
    }
}

/// A validated arc. `id` is its position in [`Graph::arcs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub id: usize,
    pub tail: NodeId,
    pub head: NodeId,
    pub length: f64,
    pub capacity: f64,
    pub unit_cost: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("arc {arc}: node {node} out of range for {node_count} nodes")]
    OutOfRangeNode {
        arc: usize,
        node: usize,
        node_count: usize,
    },
    #[error("arc {arc}: length {length} must be finite and positive")]
    NonPositiveLength { arc: usize, length: f64 },
    #[error("arc {arc}: capacity {capacity} must be positive")]
    NonPositiveCapacity { arc: usize, capacity: f64 },
    #[error("arc {arc}: unit cost {cost} must be finite and nonnegative")]
    NegativeCost { arc: usize, cost: f64 },
    #[error("arc {arc}: self-loop at node {node}")]
    SelfLoop { arc: usize, node: usize },
    #[error("arc {arc}: parallel arc ({tail}, {head}) duplicates arc {first}")]
    ParallelArc {
        arc: usize,
        first: usize,
        tail: usize,
        head: usize,
    },
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Immutable problem instance with a per-node incidence index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    arcs: Vec<Arc>,
    mode: Mode,
    adjacency: Vec<Vec<usize>>,
}

/// Builds a graph, rejecting parallel arcs.
pub fn build_graph<I>(node_count: usize, arcs: I, mode: Mode) -> Result<Graph, GraphError>
where
    I: IntoIterator<Item = ArcSpec>,
{
    build_graph_with(node_count, arcs, mode, false)
}

/// Builds a graph. With `allow_parallel`, several arcs may share the same
/// endpoints; anti-parallel pairs such as (u,v) and (v,u) are always legal
/// in directed mode.
pub fn build_graph_with<I>(
    node_count: usize,
    arcs: I,
    mode: Mode,
    allow_parallel: bool,
) -> Result<Graph, GraphError>
where
    I: IntoIterator<Item = ArcSpec>,
{
    let mut out = Vec::new();
    let mut adjacency = vec![Vec::new(); node_count];
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut first_of: Vec<((usize, usize), usize)> = Vec::new();
    for (id, spec) in arcs.into_iter().enumerate() {
        for node in [spec.tail, spec.head] {
            if node >= node_count {
                return Err(GraphError::OutOfRangeNode {
                    arc: id,
                    node,
                    node_count,
                });
            }
        }
        if spec.tail == spec.head {
            return Err(GraphError::SelfLoop {
                arc: id,
                node: spec.tail,
            });
        }
        if !(spec.length.is_finite() && spec.length > 0.0) {
            return Err(GraphError::NonPositiveLength {
                arc: id,
                length: spec.length,
            });
        }
        // Infinite capacity is allowed: it switches the cap off for that arc.
        if spec.capacity.is_nan() || spec.capacity <= 0.0 {
            return Err(GraphError::NonPositiveCapacity {
                arc: id,
                capacity: spec.capacity,
            });
        }
        if !(spec.unit_cost.is_finite() && spec.unit_cost >= 0.0) {
            return Err(GraphError::NegativeCost {
                arc: id,
                cost: spec.unit_cost,
            });
        }
        let key = match mode {
            Mode::Directed => (spec.tail, spec.head),
            Mode::Undirected => (spec.tail.min(spec.head), spec.tail.max(spec.head)),
        };
        if !seen.insert(key) {
            if !allow_parallel {
                let first = first_of
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, a)| *a)
                    .unwrap_or(0);
                return Err(GraphError::ParallelArc {
                    arc: id,
                    first,
                    tail: spec.tail,
                    head: spec.head,
                });
            }
        } else {
            first_of.push((key, id));
        }
        adjacency[spec.tail].push(id);
        adjacency[spec.head].push(id);
        out.push(Arc {
            id,
            tail: NodeId(spec.tail),
            head: NodeId(spec.head),
            length: spec.length,
            capacity: spec.capacity,
            unit_cost: spec.unit_cost,
        });
    }
    Ok(Graph {
        node_count,
        arcs: out,
        mode,
        adjacency,
    })
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: usize) -> &Arc {
        &self.arcs[id]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Ids of arcs incident to `node`, in insertion order.
    pub fn incident(&self, node: NodeId) -> &[usize] {
        &self.adjacency[node.0]
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.arcs.iter().map(|a| a.length).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.arcs.iter().map(|a| a.capacity).collect()
    }

    pub fn unit_costs(&self) -> Vec<f64> {
        self.arcs.iter().map(|a| a.unit_cost).collect()
    }

    /// Arc specs in id order; feeding them back to [`build_graph_with`]
    /// reproduces this graph.
    pub fn specs(&self) -> Vec<ArcSpec> {
        self.arcs
            .iter()
            .map(|a| ArcSpec::new(a.tail.0, a.head.0, a.length, a.capacity, a.unit_cost))
            .collect()
    }

    /// Whether every finite capacity is an integer.
    pub fn has_integral_capacities(&self) -> bool {
        self.arcs
            .iter()
            .all(|a| a.capacity.is_infinite() || a.capacity.fract() == 0.0)
    }

    /// Same topology and capacities with every length replaced by `length`.
    pub fn with_uniform_length(&self, length: f64) -> Result<Graph, GraphError> {
        self.rebuild(|s| s.length = length)
    }

    /// Same topology with a different orientation mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Graph, GraphError> {
        build_graph_with(self.node_count, self.specs(), mode, true)
    }

    fn rebuild(&self, mut f: impl FnMut(&mut ArcSpec)) -> Result<Graph, GraphError> {
        let specs = self.specs().into_iter().map(|mut s| {
            f(&mut s);
            s
        });
        build_graph_with(self.node_count, specs, self.mode, true)
    }

    /// Whether some arc joins `a` and `b` (either orientation in undirected mode).
    pub fn has_arc_between(&self, a: NodeId, b: NodeId) -> bool {
        self.incident(a).iter().any(|&id| {
            let arc = &self.arcs[id];
            (arc.tail == a && arc.head == b)
                || (self.mode == Mode::Undirected && arc.tail == b && arc.head == a)
        })
    }

    pub(crate) fn check_len(&self, values: &[f64]) -> Result<(), GraphError> {
        if values.len() != self.arcs.len() {
            return Err(GraphError::DimensionMismatch {
                expected: self.arcs.len(),
                found: values.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_node_len(&self, values: &[f64]) -> Result<(), GraphError> {
        if values.len() != self.node_count {
            return Err(GraphError::DimensionMismatch {
                expected: self.node_count,
                found: values.len(),
            });
        }
        Ok(())
    }
}

/// Per-node injection vector with `+amount` at `source` and `-amount` at `sink`.
pub fn source_sink_injections(node_count: usize, source: NodeId, sink: NodeId, amount: f64) -> Vec<f64> {
    let mut inj = vec![0.0; node_count];
    inj[source.0] += amount;
    inj[sink.0] -= amount;
    inj
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityViolation {
    pub arc: usize,
    pub flow: f64,
    pub capacity: f64,
    /// `max(0, |flow| / capacity - 1)`
    pub relative_excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationViolation {
    pub node: usize,
    pub residual: f64,
}

/// Outcome of the feasibility validators. Empty lists mean feasible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub capacity: Vec<CapacityViolation>,
    pub conservation: Vec<ConservationViolation>,
    /// Residual of every node, populated by [`validate_conservation`].
    pub residuals: Vec<f64>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.capacity.is_empty() && self.conservation.is_empty()
    }

    pub fn max_relative_excess(&self) -> f64 {
        self.capacity
            .iter()
            .map(|v| v.relative_excess)
            .fold(0.0, f64::max)
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }
}

/// Node residuals `r_i = injection_i + inflow_i - outflow_i`; nodes with
/// `|r_i| > tol` are reported.
pub fn validate_conservation(
    graph: &Graph,
    flow: &[f64],
    injections: &[f64],
    tol: f64,
) -> Result<ViolationReport, GraphError> {
    graph.check_len(flow)?;
    graph.check_node_len(injections)?;
    let residuals = node_residuals(graph, flow, injections);
    let conservation = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > tol)
        .map(|(node, &residual)| ConservationViolation { node, residual })
        .collect();
    Ok(ViolationReport {
        capacity: Vec::new(),
        conservation,
        residuals,
    })
}

/// `b_i - (outflow_i - inflow_i)` for every node.
pub fn node_residuals(graph: &Graph, flow: &[f64], injections: &[f64]) -> Vec<f64> {
    let mut r = injections.to_vec();
    for (arc, &q) in graph.arcs.iter().zip(flow) {
        r[arc.tail.0] -= q;
        r[arc.head.0] += q;
    }
    r
}

/// Relative capacity excess of a single arc.
#[inline]
pub fn relative_excess(flow: f64, capacity: f64) -> f64 {
    if capacity.is_infinite() {
        return 0.0;
    }
    (flow.abs() / capacity - 1.0).max(0.0)
}

/// Arcs with `|Q| > (1 + rel_tol) C`, worst first.
pub fn validate_capacity(graph: &Graph, flow: &[f64], rel_tol: f64) -> Result<ViolationReport, GraphError> {
    graph.check_len(flow)?;
    let mut capacity: Vec<CapacityViolation> = graph
        .arcs
        .iter()
        .zip(flow)
        .filter(|(a, q)| q.abs() > (1.0 + rel_tol) * a.capacity)
        .map(|(a, &q)| CapacityViolation {
            arc: a.id,
            flow: q,
            capacity: a.capacity,
            relative_excess: relative_excess(q, a.capacity),
        })
        .collect();
    capacity.sort_by(|a, b| {
        b.relative_excess
            .total_cmp(&a.relative_excess)
            .then(a.arc.cmp(&b.arc))
    });
    Ok(ViolationReport {
        capacity,
        conservation: Vec::new(),
        residuals: Vec::new(),
    })
}

/// Largest relative capacity excess over all arcs (0 when feasible).
pub fn max_relative_excess(graph: &Graph, flow: &[f64]) -> f64 {
    graph
        .arcs
        .iter()
        .zip(flow)
        .map(|(a, &q)| relative_excess(q, a.capacity))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> Graph {
        build_graph(2, [ArcSpec::new(0, 1, 1.0, 5.0, 1.0)], Mode::Directed).unwrap()
    }

    #[test]
    fn smallest_instance_has_adjacency() {
        let g = two_node();
        assert_eq!(g.arc_count(), 1);
        assert_eq!(g.incident(NodeId(0)), &[0]);
        assert_eq!(g.incident(NodeId(1)), &[0]);
    }

    #[test]
    fn rejects_self_loop() {
        let err = build_graph(3, [ArcSpec::with_capacity(0, 0, 1.0)], Mode::Directed).unwrap_err();
        assert_eq!(err, GraphError::SelfLoop { arc: 0, node: 0 });
    }

    #[test]
    fn rejects_out_of_range() {
        let err = build_graph(3, [ArcSpec::with_capacity(0, 5, 1.0)], Mode::Directed).unwrap_err();
        assert!(matches!(err, GraphError::OutOfRangeNode { node: 5, .. }));
    }

    #[test]
    fn rejects_bad_length_and_capacity() {
        let err = build_graph(2, [ArcSpec::new(0, 1, 0.0, 1.0, 1.0)], Mode::Directed).unwrap_err();
        assert!(matches!(err, GraphError::NonPositiveLength { .. }));
        let err = build_graph(2, [ArcSpec::new(0, 1, 1.0, -2.0, 1.0)], Mode::Directed).unwrap_err();
        assert!(matches!(err, GraphError::NonPositiveCapacity { .. }));
        let err = build_graph(2, [ArcSpec::new(0, 1, 1.0, f64::NAN, 1.0)], Mode::Directed).unwrap_err();
        assert!(matches!(err, GraphError::NonPositiveCapacity { .. }));
    }

    #[test]
    fn parallel_arcs_need_flag() {
        let arcs = [ArcSpec::with_capacity(0, 1, 1.0), ArcSpec::with_capacity(0, 1, 2.0)];
        assert!(matches!(
            build_graph(2, arcs, Mode::Directed),
            Err(GraphError::ParallelArc { arc: 1, first: 0, .. })
        ));
        assert!(build_graph_with(2, arcs, Mode::Directed, true).is_ok());
        // anti-parallel is fine when directed, a duplicate edge when undirected
        let anti = [ArcSpec::with_capacity(0, 1, 1.0), ArcSpec::with_capacity(1, 0, 2.0)];
        assert!(build_graph(2, anti, Mode::Directed).is_ok());
        assert!(build_graph(2, anti, Mode::Undirected).is_err());
    }

    #[test]
    fn conservation_single_path() {
        let g = two_node();
        let ok = validate_conservation(&g, &[5.0], &[5.0, -5.0], 1e-9).unwrap();
        assert!(ok.is_clean());
        let bad = validate_conservation(&g, &[4.0], &[5.0, -5.0], 1e-9).unwrap();
        assert_eq!(bad.residuals, vec![1.0, -1.0]);
        assert_eq!(bad.conservation.len(), 2);
    }

    #[test]
    fn conservation_dimension_mismatch() {
        let g = two_node();
        assert!(matches!(
            validate_conservation(&g, &[1.0, 2.0], &[0.0, 0.0], 1e-9),
            Err(GraphError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn capacity_at_bound_is_feasible() {
        let g = build_graph(2, [ArcSpec::with_capacity(0, 1, 12.02)], Mode::Directed).unwrap();
        assert!(validate_capacity(&g, &[12.02], 0.0).unwrap().is_clean());
    }

    #[test]
    fn capacity_excess_is_relative() {
        let g = build_graph(2, [ArcSpec::with_capacity(0, 1, 25.0)], Mode::Directed).unwrap();
        let r = validate_capacity(&g, &[40.0], 0.0).unwrap();
        assert_eq!(r.capacity.len(), 1);
        assert!((r.capacity[0].relative_excess - 0.6).abs() < 1e-12);
        assert!(validate_capacity(&g, &[0.0], 0.0).unwrap().is_clean());
    }

    #[test]
    fn capacity_sorted_worst_first() {
        let g = build_graph(
            3,
            [
                ArcSpec::with_capacity(0, 1, 10.0),
                ArcSpec::with_capacity(1, 2, 10.0),
                ArcSpec::with_capacity(0, 2, 10.0),
            ],
            Mode::Directed,
        )
        .unwrap();
        let r = validate_capacity(&g, &[11.0, 15.0, -12.0], 0.0).unwrap();
        let ids: Vec<usize> = r.capacity.iter().map(|v| v.arc).collect();
        assert_eq!(ids, vec![1, 2, 0]);
    }

    #[test]
    fn construction_is_deterministic() {
        let arcs = vec![
            ArcSpec::with_capacity(2, 0, 1.0),
            ArcSpec::with_capacity(0, 1, 1.0),
            ArcSpec::with_capacity(1, 2, 1.0),
        ];
        let a = build_graph(3, arcs.clone(), Mode::Undirected).unwrap();
        let b = build_graph(3, arcs, Mode::Undirected).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.incident(NodeId(0)), &[0, 1]);
    }
}
