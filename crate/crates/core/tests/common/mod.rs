#![allow(dead_code)]

use cppa::graph::{build_graph, ArcSpec, Graph, Mode};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Connected graph: a random spanning tree plus extra edges, with
/// log-uniform conductances in [1e-3, 1e3] and balanced injections.
pub struct RandomSystem {
    pub graph: Graph,
    pub conductance: Vec<f64>,
    pub injections: Vec<f64>,
    pub ground: usize,
}

pub fn random_system(n: usize, extra: usize, seed: u64) -> RandomSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for v in 1..n {
        let u = below(&mut rng, v);
        seen.insert((u, v));
        arcs.push(ArcSpec::with_capacity(u, v, 1.0));
    }
    for _ in 0..extra {
        let (a, b) = (below(&mut rng, n), below(&mut rng, n));
        let (u, v) = (a.min(b), a.max(b));
        if u != v && seen.insert((u, v)) {
            arcs.push(ArcSpec::with_capacity(u, v, 1.0));
        }
    }
    let graph = build_graph(n, arcs, Mode::Undirected).unwrap();
    let conductance = (0..graph.arc_count())
        .map(|_| 10f64.powf(6.0 * unit(&mut rng) - 3.0))
        .collect();
    let mut injections: Vec<f64> = (0..n).map(|_| 20.0 * unit(&mut rng) - 10.0).collect();
    let mean = injections.iter().sum::<f64>() / n as f64;
    injections.iter_mut().for_each(|b| *b -= mean);
    let ground = below(&mut rng, n);
    RandomSystem {
        graph,
        conductance,
        injections,
        ground,
    }
}

/// Same arcs with every capacity replaced by `capacity`.
pub fn recapacitated(graph: &Graph, capacity: f64) -> Graph {
    let specs = graph.specs().into_iter().map(|s| ArcSpec { capacity, ..s });
    build_graph(graph.node_count(), specs, graph.mode()).unwrap()
}

/// Small directed graph with integer capacities and costs in [1, 10].
pub fn small_digraph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && unit(&mut rng) < p {
                let cap = 1 + below(&mut rng, 10);
                let cost = 1 + below(&mut rng, 10);
                arcs.push(ArcSpec::new(i, j, 1.0, cap as f64, cost as f64));
            }
        }
    }
    build_graph(n, arcs, Mode::Directed).unwrap()
}

/// Minimum s-t cut by enumerating every node subset containing `s` but not `t`.
pub fn brute_force_min_cut(graph: &Graph, s: usize, t: usize) -> f64 {
    let n = graph.node_count();
    assert!(n <= 16);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask & (1 << s) == 0 || mask & (1 << t) != 0 {
            continue;
        }
        let inside = |v: usize| mask & (1 << v) != 0;
        let mut cut = 0.0;
        for a in graph.arcs() {
            let (u, v) = (a.tail.0, a.head.0);
            let forward = inside(u) && !inside(v);
            let backward = graph.mode() == Mode::Undirected && inside(v) && !inside(u);
            if forward || backward {
                cut += a.capacity;
            }
        }
        best = best.min(cut);
    }
    best
}
