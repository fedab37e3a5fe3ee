//! Grounded network Poisson system: assembly, solution and the Poiseuille
//! flow law.
//!
//! The system `L p = b` uses the weighted Laplacian with arc conductances
//! `g_a = D_a / L_a`. Pinning the ground node to zero pressure removes its
//! row and column, leaving a symmetric positive definite matrix whenever every
//! node is connected to the ground.
//!
//! Conductivities produced by the adaptation dynamics span hundreds of orders
//! of magnitude (dead tubes decay geometrically while capped tubes grow), so
//! an ordinary Cholesky factorization loses all accuracy through cancellation
//! on the diagonal. The elimination here instead works on the graph itself:
//! removing a node replaces its star by a mesh (`w_ab += w_a w_b / d`), and
//! each pivot is recomputed as the sum of the remaining nonnegative weights
//! plus the accumulated leak to ground. No subtraction ever occurs during
//! factorization, which keeps every pivot accurate to a few ulps regardless of
//! the conductance spread.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::graph::{Graph, GraphError, Mode, NodeId};

/// Conductances below this are treated as absent when checking that every
/// injection can reach the ground.
pub const DEAD_CONDUCTANCE: f64 = 1e-12;

/// Relative residual bound `||L p - b|| <= RESIDUAL_TOL * max(1, ||b||)`.
pub const RESIDUAL_TOL: f64 = 1e-10;

const MAX_REFINEMENTS: usize = 4;

/// Right-hand side left on an isolated node below this fraction of the
/// largest injection is treated as underflow debris.
const STRANDED_TOL: f64 = 1e-250;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaplacianError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("injections sum to {sum:e}, exceeding 1e-9 of their total magnitude {scale:e}")]
    UnbalancedInjections { sum: f64, scale: f64 },
    #[error("arc {arc}: conductivity {value} must be finite and nonnegative")]
    NegativeConductivity { arc: usize, value: f64 },
    #[error("ground node {0} out of range")]
    GroundOutOfRange(usize),
    #[error("node {node} carries injection {injection} but is not connected to the ground")]
    DisconnectedInjection { node: usize, injection: f64 },
    #[error("singular system at node {0}")]
    SingularSystem(usize),
}

/// Factorization strategy. Both produce the same pressures up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Dense for small or dense graphs, sparse otherwise.
    #[default]
    Auto,
    /// O(n^3) elimination in natural node order.
    Dense,
    /// Elimination on adjacency maps in minimum-degree order.
    Sparse,
}

/// Grounded weighted-Laplacian system.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSystem {
    node_count: usize,
    /// (tail, head, conductance) for every arc, in arc order.
    edges: Vec<(usize, usize, f64)>,
    injections: Vec<f64>,
    ground: NodeId,
}

/// Solved pressures; `values[ground]` is exactly zero.
///
/// Each pressure is carried as an unevaluated sum `values[i] + low[i]`, so
/// drops between nearly equal pressures keep their relative accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureVector {
    pub values: Vec<f64>,
    pub low: Vec<f64>,
    pub residual_norm: f64,
    /// `||b||_2` of the grounded right-hand side.
    pub rhs_norm: f64,
}

impl PressureVector {
    /// Plain pressures with no correction terms.
    pub fn from_values(values: Vec<f64>) -> Self {
        PressureVector {
            low: vec![0.0; values.len()],
            values,
            residual_norm: 0.0,
            rhs_norm: 0.0,
        }
    }

    pub fn within_tolerance(&self) -> bool {
        self.residual_norm <= RESIDUAL_TOL * self.rhs_norm.max(1.0)
    }

    #[inline]
    pub fn drop(&self, tail: NodeId, head: NodeId) -> f64 {
        (self.values[tail.0] - self.values[head.0]) + (self.low[tail.0] - self.low[head.0])
    }
}

/// Checks `|sum| <= 1e-9 * sum |injection|`.
pub fn check_balance(injections: &[f64]) -> Result<(), LaplacianError> {
    let sum: f64 = injections.iter().sum();
    let scale: f64 = injections.iter().map(|x| x.abs()).sum();
    if sum.abs() > 1e-9 * scale {
        return Err(LaplacianError::UnbalancedInjections { sum, scale });
    }
    Ok(())
}

impl PoissonSystem {
    /// Assembles the system with conductances `conductivity[a] / lengths[a]`.
    pub fn assemble(
        graph: &Graph,
        conductivity: &[f64],
        lengths: &[f64],
        injections: &[f64],
        ground: NodeId,
    ) -> Result<Self, LaplacianError> {
        graph.check_len(conductivity)?;
        graph.check_len(lengths)?;
        let conductance: Vec<f64> = conductivity.iter().zip(lengths).map(|(d, l)| d / l).collect();
        for (arc, (&d, &g)) in conductivity.iter().zip(&conductance).enumerate() {
            if !(d >= 0.0 && d.is_finite() && g.is_finite()) {
                return Err(LaplacianError::NegativeConductivity { arc, value: d });
            }
        }
        Self::from_conductances(graph, &conductance, injections, ground)
    }

    /// Assembles the system from arc conductances directly.
    pub fn from_conductances(
        graph: &Graph,
        conductance: &[f64],
        injections: &[f64],
        ground: NodeId,
    ) -> Result<Self, LaplacianError> {
        graph.check_len(conductance)?;
        graph.check_node_len(injections)?;
        if ground.0 >= graph.node_count() {
            return Err(LaplacianError::GroundOutOfRange(ground.0));
        }
        for (arc, &g) in conductance.iter().enumerate() {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(LaplacianError::NegativeConductivity { arc, value: g });
            }
        }
        check_balance(injections)?;
        let edges = graph
            .arcs()
            .iter()
            .zip(conductance)
            .map(|(a, &g)| (a.tail.0, a.head.0, g))
            .collect();
        Ok(PoissonSystem {
            node_count: graph.node_count(),
            edges,
            injections: injections.to_vec(),
            ground,
        })
    }

    pub fn dimension(&self) -> usize {
        self.node_count
    }

    pub fn ground(&self) -> NodeId {
        self.ground
    }

    pub fn injections(&self) -> &[f64] {
        &self.injections
    }

    pub fn conductances(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.iter().map(|e| e.2)
    }

    /// Nodes other than the ground, in ascending order: the row order of
    /// [`grounded_matrix`](Self::grounded_matrix).
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&i| i != self.ground.0).collect()
    }

    /// Full `n x n` weighted Laplacian (rows sum to zero).
    pub fn laplacian(&self) -> Vec<Vec<f64>> {
        let n = self.node_count;
        let mut m = vec![vec![0.0; n]; n];
        for &(u, v, g) in &self.edges {
            m[u][u] += g;
            m[v][v] += g;
            m[u][v] -= g;
            m[v][u] -= g;
        }
        m
    }

    /// Laplacian with the ground row and column removed.
    pub fn grounded_matrix(&self) -> Vec<Vec<f64>> {
        let full = self.laplacian();
        let free = self.free_nodes();
        free.iter()
            .map(|&i| free.iter().map(|&j| full[i][j]).collect())
            .collect()
    }

    /// Right-hand side matching [`grounded_matrix`](Self::grounded_matrix).
    pub fn rhs(&self) -> Vec<f64> {
        self.free_nodes().iter().map(|&i| self.injections[i]).collect()
    }

    /// Per-node `b_i - (L p)_i`; the ground entry is zero.
    pub fn residual(&self, pressures: &[f64]) -> Vec<f64> {
        self.split_residual(pressures, &vec![0.0; self.node_count])
    }

    fn split_residual(&self, hi: &[f64], lo: &[f64]) -> Vec<f64> {
        let mut r = self.injections.clone();
        for &(u, v, g) in &self.edges {
            let q = g * ((hi[u] - hi[v]) + (lo[u] - lo[v]));
            r[u] -= q;
            r[v] += q;
        }
        r[self.ground.0] = 0.0;
        r
    }

    /// Nodes that reach the ground through arcs with conductance at least
    /// [`DEAD_CONDUCTANCE`].
    pub fn live_component(&self) -> Vec<bool> {
        let n = self.node_count;
        let mut adj = vec![Vec::new(); n];
        for &(u, v, g) in &self.edges {
            if g >= DEAD_CONDUCTANCE {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut seen = vec![false; n];
        seen[self.ground.0] = true;
        let mut queue = VecDeque::from([self.ground.0]);
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen
    }

    pub fn solve(&self) -> Result<PressureVector, LaplacianError> {
        self.solve_with(Backend::Auto)
    }

    pub fn solve_with(&self, backend: Backend) -> Result<PressureVector, LaplacianError> {
        let live = self.live_component();
        if let Some(node) = (0..self.node_count).find(|&i| !live[i] && self.injections[i] != 0.0) {
            return Err(LaplacianError::DisconnectedInjection {
                node,
                injection: self.injections[node],
            });
        }
        let free = self.free_nodes();
        let m = free.len();
        let mut values = vec![0.0; self.node_count];
        let rhs = self.rhs();
        let rhs_norm = norm(&rhs);
        if m == 0 {
            return Ok(PressureVector {
                low: values.clone(),
                values,
                residual_norm: 0.0,
                rhs_norm,
            });
        }
        let backend = match backend {
            Backend::Auto => {
                if m <= 200 || 8 * self.edges.len() >= m * m {
                    Backend::Dense
                } else {
                    Backend::Sparse
                }
            }
            other => other,
        };
        let factor = match backend {
            Backend::Sparse => Factor::sparse(self),
            _ => Factor::dense(self),
        };
        let x = factor.solve(&rhs)?;
        for (&node, &p) in free.iter().zip(&x) {
            values[node] = p;
        }
        let target = RESIDUAL_TOL * rhs_norm.max(1.0);
        let mut low = vec![0.0; self.node_count];
        let mut r = self.residual(&values);
        let mut residual_norm = norm(&r);
        for _ in 0..MAX_REFINEMENTS {
            if residual_norm <= target {
                break;
            }
            let rb: Vec<f64> = free.iter().map(|&i| r[i]).collect();
            let dx = factor.solve(&rb)?;
            let (mut hi, mut lo) = (values.clone(), low.clone());
            for (&node, &d) in free.iter().zip(&dx) {
                (hi[node], lo[node]) = two_sum(hi[node], lo[node] + d);
            }
            let tr = self.split_residual(&hi, &lo);
            let tn = norm(&tr);
            if !(tn < residual_norm) {
                break;
            }
            (values, low) = (hi, lo);
            r = tr;
            residual_norm = tn;
        }
        Ok(PressureVector {
            values,
            low,
            residual_norm,
            rhs_norm,
        })
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Star-mesh elimination record, reusable for several right-hand sides.
enum Factor {
    Dense {
        m: usize,
        /// Row `i` holds the weights to rows `j > i` at the time `i` was
        /// eliminated (upper triangle, row-major).
        upper: Vec<f64>,
        pivots: Vec<f64>,
    },
    Sparse {
        /// Free-row index by node.
        row_of: Vec<usize>,
        /// (row, pivot, later neighbours with weights) in elimination order.
        steps: Vec<(usize, f64, Vec<(usize, f64)>)>,
    },
}

impl Factor {
    fn dense(sys: &PoissonSystem) -> Factor {
        let free = sys.free_nodes();
        let m = free.len();
        let ground = sys.ground.0;
        let row = |node: usize| if node < ground { node } else { node - 1 };
        let mut upper = vec![0.0; m * m];
        let mut leak = vec![0.0; m];
        for &(u, v, g) in &sys.edges {
            if g == 0.0 {
                continue;
            }
            match (u == ground, v == ground) {
                (true, false) => leak[row(v)] += g,
                (false, true) => leak[row(u)] += g,
                (false, false) => {
                    let (a, b) = (row(u).min(row(v)), row(u).max(row(v)));
                    upper[a * m + b] += g;
                }
                (true, true) => unreachable!("self-loops are rejected at construction"),
            }
        }
        let mut pivots = vec![0.0; m];
        for i in 0..m {
            let (head, tail) = upper.split_at_mut((i + 1) * m);
            let wi = &head[i * m + i + 1..(i + 1) * m];
            let d: f64 = wi.iter().sum::<f64>() + leak[i];
            pivots[i] = d;
            if d == 0.0 {
                continue;
            }
            let li = leak[i];
            for (off, &wj) in wi.iter().enumerate() {
                if wj == 0.0 {
                    continue;
                }
                let j = i + 1 + off;
                let f = wj / d;
                leak[j] += f * li;
                let rj = &mut tail[(j - i - 1) * m..(j - i) * m];
                for (off2, &wl) in wi.iter().enumerate().skip(off + 1) {
                    if wl != 0.0 {
                        rj[i + 1 + off2] += f * wl;
                    }
                }
            }
        }
        Factor::Dense { m, upper, pivots }
    }

    fn sparse(sys: &PoissonSystem) -> Factor {
        let ground = sys.ground.0;
        let free = sys.free_nodes();
        let mut row_of = vec![usize::MAX; sys.node_count];
        for (r, &node) in free.iter().enumerate() {
            row_of[node] = r;
        }
        let m = free.len();
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
        let mut leak = vec![0.0; m];
        for &(u, v, g) in &sys.edges {
            if g == 0.0 {
                continue;
            }
            if u == ground {
                leak[row_of[v]] += g;
            } else if v == ground {
                leak[row_of[u]] += g;
            } else {
                let (a, b) = (row_of[u], row_of[v]);
                *adj[a].entry(b).or_insert(0.0) += g;
                *adj[b].entry(a).or_insert(0.0) += g;
            }
        }
        let mut queue: BTreeSet<(usize, usize)> = (0..m).map(|r| (adj[r].len(), r)).collect();
        let mut steps = Vec::with_capacity(m);
        while let Some((_, v)) = queue.pop_first() {
            let nbrs: Vec<(usize, f64)> = std::mem::take(&mut adj[v]).into_iter().collect();
            let d: f64 = nbrs.iter().map(|(_, w)| w).sum::<f64>() + leak[v];
            for &(a, _) in &nbrs {
                queue.remove(&(adj[a].len(), a));
                adj[a].remove(&v);
            }
            if d > 0.0 {
                for (ia, &(a, wa)) in nbrs.iter().enumerate() {
                    let f = wa / d;
                    leak[a] += f * leak[v];
                    for &(b, wb) in &nbrs[ia + 1..] {
                        let add = f * wb;
                        *adj[a].entry(b).or_insert(0.0) += add;
                        *adj[b].entry(a).or_insert(0.0) += add;
                    }
                }
            }
            for &(a, _) in &nbrs {
                queue.insert((adj[a].len(), a));
            }
            steps.push((v, d, nbrs));
        }
        Factor::Sparse { row_of, steps }
    }

    /// Solves for the free rows given the grounded right-hand side.
    ///
    /// A zero pivot means the node was cut off from the ground. Any
    /// right-hand side it still holds can only have arrived over weights so
    /// small that their fill-in underflowed; amounts below `stranded` are
    /// dropped, larger ones make the system singular.
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LaplacianError> {
        let mut b = rhs.to_vec();
        let stranded = STRANDED_TOL * rhs.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        match self {
            Factor::Dense { m, upper, pivots } => {
                let m = *m;
                for i in 0..m {
                    let d = pivots[i];
                    if d == 0.0 {
                        if b[i].abs() > stranded {
                            return Err(LaplacianError::SingularSystem(i));
                        }
                        continue;
                    }
                    let bi = b[i] / d;
                    if bi != 0.0 {
                        for j in i + 1..m {
                            b[j] += upper[i * m + j] * bi;
                        }
                    }
                }
                let mut x = vec![0.0; m];
                for i in (0..m).rev() {
                    let d = pivots[i];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &upper[i * m + i + 1..(i + 1) * m];
                    let s: f64 = row.iter().zip(&x[i + 1..]).map(|(w, p)| w * p).sum();
                    x[i] = (b[i] + s) / d;
                }
                Ok(x)
            }
            Factor::Sparse { row_of, steps } => {
                let _ = row_of;
                for &(v, d, ref nbrs) in steps {
                    if d == 0.0 {
                        if b[v].abs() > stranded {
                            return Err(LaplacianError::SingularSystem(v));
                        }
                        continue;
                    }
                    let bv = b[v] / d;
                    if bv != 0.0 {
                        for &(a, w) in nbrs {
                            b[a] += w * bv;
                        }
                    }
                }
                let mut x = vec![0.0; b.len()];
                for &(v, d, ref nbrs) in steps.iter().rev() {
                    if d == 0.0 {
                        continue;
                    }
                    let s: f64 = nbrs.iter().map(|&(a, w)| w * x[a]).sum();
                    x[v] = (b[v] + s) / d;
                }
                Ok(x)
            }
        }
    }
}

/// Poiseuille flows `Q_a = (D_a / L_a)(p_tail - p_head)`, clamped at zero
/// for directed graphs.
pub fn edge_flows(
    graph: &Graph,
    conductivity: &[f64],
    lengths: &[f64],
    pressures: &PressureVector,
) -> Result<Vec<f64>, GraphError> {
    graph.check_len(conductivity)?;
    graph.check_len(lengths)?;
    graph.check_node_len(&pressures.values)?;
    let signed: Vec<f64> = graph
        .arcs()
        .iter()
        .map(|a| conductivity[a.id] / lengths[a.id] * pressures.drop(a.tail, a.head))
        .collect();
    Ok(match graph.mode() {
        Mode::Undirected => signed,
        Mode::Directed => signed.into_iter().map(|q| q.max(0.0)).collect(),
    })
}

/// Unclamped Poiseuille flows regardless of mode.
pub fn signed_flows(
    graph: &Graph,
    conductivity: &[f64],
    lengths: &[f64],
    pressures: &[f64],
) -> Result<Vec<f64>, GraphError> {
    graph.check_len(conductivity)?;
    graph.check_len(lengths)?;
    graph.check_node_len(pressures)?;
    Ok(graph
        .arcs()
        .iter()
        .map(|a| conductivity[a.id] / lengths[a.id] * (pressures[a.tail.0] - pressures[a.head.0]))
        .collect())
}
