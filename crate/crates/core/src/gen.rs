//! Seeded instance generators and fixed test networks.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Uniform
//! reals are `(next_u64 >> 11) * 2^-53`; an integer in `[lo, hi]` is
//! `lo + next_u64 % (hi - lo + 1)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctap::{demand_feasibility, Link, OdDemand, TrafficNetwork};
use crate::graph::{build_graph, ArcSpec, Graph, Mode, NodeId};
use crate::maxflow::oracle_maxflow;

/// How node pairs are offered a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Each unordered pair `i < j` gets at most one arc, direction uniform.
    #[default]
    Unordered,
    /// Each ordered pair `(i, j)` independently gets the arc `i -> j`.
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub node_count: usize,
    pub seed: u64,
    pub connect_probability: f64,
    pub capacity_range: (u64, u64),
    pub cost_range: (u64, u64),
    pub length_constant: f64,
    pub sampling: Sampling,
}

impl GenSpec {
    pub fn new(node_count: usize, seed: u64) -> Self {
        GenSpec {
            node_count,
            seed,
            connect_probability: 0.7,
            capacity_range: (1, 10),
            cost_range: (1, 10),
            length_constant: 1.0,
            sampling: Sampling::Unordered,
        }
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.connect_probability = p;
        self
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn int_in(rng: &mut ChaCha8Rng, (lo, hi): (u64, u64)) -> u64 {
    lo + rng.next_u64() % (hi - lo + 1)
}

/// Random directed graph; the source is node 0 and the sink the last node.
///
/// Per offered pair, in lexicographic order: one draw decides whether the
/// pair is linked; for unordered sampling one more draw picks the direction
/// (low bit 0 means `i -> j`); then the capacity draw, then the cost draw.
pub fn random_directed(spec: &GenSpec) -> Graph {
    assert!(spec.node_count >= 2, "need at least two nodes");
    assert!((0.0..=1.0).contains(&spec.connect_probability), "probability out of range");
    assert!(spec.capacity_range.0 >= 1 && spec.capacity_range.0 <= spec.capacity_range.1);
    assert!(spec.cost_range.0 <= spec.cost_range.1);
    let n = spec.node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arcs = Vec::new();
    let mut offer = |rng: &mut ChaCha8Rng, i: usize, j: usize, orient: bool| {
        if uniform(rng) >= spec.connect_probability {
            return;
        }
        let (t, h) = if orient && rng.next_u64() & 1 == 1 { (j, i) } else { (i, j) };
        let cap = int_in(rng, spec.capacity_range) as f64;
        let cost = int_in(rng, spec.cost_range) as f64;
        arcs.push(ArcSpec::new(t, h, spec.length_constant, cap, cost));
    };
    for i in 0..n {
        for j in 0..n {
            match spec.sampling {
                Sampling::Unordered if i < j => offer(&mut rng, i, j, true),
                Sampling::Ordered if i != j => offer(&mut rng, i, j, false),
                _ => {}
            }
        }
    }
    build_graph(n, arcs, Mode::Directed).expect("generated arcs are valid")
}

/// A generated flow problem together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInstance {
    pub graph: Graph,
    pub source: NodeId,
    pub sink: NodeId,
    pub spec: GenSpec,
    /// Seed actually used, `spec.seed + retries`.
    pub seed: u64,
    pub retries: u32,
}

/// [`random_directed`], regenerated with the next seed while the source
/// cannot reach the sink.
pub fn random_flow_instance(spec: &GenSpec) -> FlowInstance {
    let mut retries = 0;
    loop {
        let seed = spec.seed.wrapping_add(retries as u64);
        let graph = random_directed(&GenSpec { seed, ..spec.clone() });
        let (source, sink) = (NodeId(0), NodeId(spec.node_count - 1));
        let value = oracle_maxflow(&graph, source, sink).map(|o| o.value).unwrap_or(0.0);
        if value > 0.0 || retries >= 1000 {
            return FlowInstance {
                graph,
                source,
                sink,
                spec: spec.clone(),
                seed,
                retries,
            };
        }
        retries += 1;
    }
}

/// Traffic network on a [`random_flow_instance`]: each arc becomes a link
/// with its capacity and free-flow time equal to its cost. Up to three OD
/// pairs among `{0, 1} x {n-1, n-2}` get 30% of their max flow as demand,
/// halved until the demands are jointly routable.
pub fn random_traffic_instance(spec: &GenSpec) -> (TrafficNetwork, Vec<OdDemand>) {
    let inst = random_flow_instance(spec);
    let n = spec.node_count;
    let links: Vec<Link> = inst
        .graph
        .arcs()
        .iter()
        .map(|a| Link::new(a.tail.0, a.head.0, a.capacity, a.unit_cost))
        .collect();
    let network = TrafficNetwork::from_links(n, &links).expect("generated links are valid");
    let mut demands = Vec::new();
    for (o, d) in [(0, n - 1), (0, n - 2), (1, n - 1)] {
        if o == d || o >= n || d == 0 {
            continue;
        }
        let mf = oracle_maxflow(&inst.graph, NodeId(o), NodeId(d)).map_or(0.0, |f| f.value);
        if mf > 0.0 {
            demands.push(OdDemand::new(o, d, 0.3 * mf));
        }
    }
    for _ in 0..30 {
        if demand_feasibility(&network, &demands).is_ok_and(|f| f.is_feasible()) {
            break;
        }
        for d in &mut demands {
            d.demand /= 2.0;
        }
    }
    (network, demands)
}

/// `depth` frames of `width x width` grids. Inside a frame every pair of
/// grid neighbours is joined both ways with capacity `cap_hi * width^2`;
/// consecutive frames are joined by a random one-to-one mapping with
/// capacities drawn from `cap_range`. Node `f * width^2 + r * width + c` is
/// row `r`, column `c` of frame `f`; the source is node 0 and the sink the
/// last node.
pub fn grid_on_pipe(width: usize, depth: usize, seed: u64, cap_range: (u64, u64)) -> Graph {
    assert!(width >= 2 && depth >= 2, "width and depth must be at least 2");
    assert!(cap_range.0 >= 1 && cap_range.0 <= cap_range.1);
    let frame = width * width;
    let inner = (cap_range.1 * frame as u64) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = Vec::new();
    for f in 0..depth {
        let base = f * frame;
        for r in 0..width {
            for c in 0..width {
                let i = base + r * width + c;
                if c + 1 < width {
                    arcs.push(ArcSpec::with_capacity(i, i + 1, inner));
                    arcs.push(ArcSpec::with_capacity(i + 1, i, inner));
                }
                if r + 1 < width {
                    arcs.push(ArcSpec::with_capacity(i, i + width, inner));
                    arcs.push(ArcSpec::with_capacity(i + width, i, inner));
                }
            }
        }
        if f + 1 < depth {
            let mut perm: Vec<usize> = (0..frame).collect();
            for i in (1..frame).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                perm.swap(i, j);
            }
            for (i, &p) in perm.iter().enumerate() {
                let cap = int_in(&mut rng, cap_range) as f64;
                arcs.push(ArcSpec::with_capacity(base + i, base + frame + p, cap));
            }
        }
    }
    build_graph(depth * frame, arcs, Mode::Directed).expect("grid arcs are valid")
}

/// Source, sink, one midpoint per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePath {
    pub graph: Graph,
    pub source: NodeId,
    pub sink: NodeId,
    /// The two arc ids of each path, shortest path first.
    pub paths: [[usize; 2]; 3],
    pub path_lengths: [f64; 3],
    pub path_capacities: [f64; 3],
    pub schedule: Vec<f64>,
}

impl ThreePath {
    pub fn max_flow(&self) -> f64 {
        self.path_capacities.iter().sum()
    }

    /// Flow along each path (mean of its two arcs).
    pub fn path_flows(&self, flows: &[f64]) -> [f64; 3] {
        self.paths.map(|[a, b]| (flows[a] + flows[b]) / 2.0)
    }
}

/// Three disjoint source-sink paths of lengths 1, 2, 3 and capacities 10, 20,
/// 30, undirected. Node 0 is the source, node 1 the sink and nodes 2..5 the
/// path midpoints; each path is split into two arcs of half its length.
pub fn three_path_fixture() -> ThreePath {
    let lengths = [1.0, 2.0, 3.0];
    let caps = [10.0, 20.0, 30.0];
    let mut arcs = Vec::new();
    for p in 0..3 {
        arcs.push(ArcSpec::new(0, 2 + p, lengths[p] / 2.0, caps[p], 0.0));
        arcs.push(ArcSpec::new(2 + p, 1, lengths[p] / 2.0, caps[p], 0.0));
    }
    ThreePath {
        graph: build_graph(5, arcs, Mode::Undirected).expect("fixture is valid"),
        source: NodeId(0),
        sink: NodeId(1),
        paths: [[0, 1], [2, 3], [4, 5]],
        path_lengths: lengths,
        path_capacities: caps,
        schedule: vec![10.0, 20.0, 40.0, 80.0],
    }
}

/// The nine-node, eighteen-link network with four OD demands. Links are
/// listed with 1-based node ids as published; node `k` maps to `k - 1`.
/// Every link has free-flow time 1 and BPR parameters 0.15 / 4.
pub const HEARN_LINKS: [(usize, usize, f64); 18] = [
    (1, 5, 12.02),
    (1, 6, 18.02),
    (2, 5, 43.59),
    (2, 6, 26.59),
    (5, 6, 50.0),
    (5, 7, 25.0),
    (5, 9, 35.0),
    (6, 5, 50.0),
    (6, 8, 25.0),
    (6, 9, 35.0),
    (7, 3, 25.0),
    (7, 4, 24.0),
    (7, 8, 50.0),
    (8, 2, 39.0),
    (8, 4, 43.0),
    (8, 7, 50.0),
    (9, 7, 35.0),
    (9, 8, 25.0),
];

pub const HEARN_DEMANDS: [(usize, usize, f64); 4] = [(1, 3, 10.0), (1, 4, 20.0), (2, 3, 30.0), (2, 4, 40.0)];

pub fn hearn_network() -> (TrafficNetwork, Vec<OdDemand>) {
    let links: Vec<Link> = HEARN_LINKS
        .iter()
        .map(|&(t, h, c)| Link::new(t - 1, h - 1, c, 1.0))
        .collect();
    let demands = HEARN_DEMANDS
        .iter()
        .map(|&(o, d, v)| OdDemand::new(o - 1, d - 1, v))
        .collect();
    (TrafficNetwork::from_links(9, &links).expect("fixture is valid"), demands)
}
