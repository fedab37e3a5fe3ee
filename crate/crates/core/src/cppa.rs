//! The capacitated Physarum iteration.
//!
//! One step solves the network Poisson system for the current
//! conductivities, evaluates the Poiseuille flows and adapts every arc:
//!
//! ```text
//! D' = (|Q| + D) / 2        if |Q| <= k C
//! D' = C L / |p_t - p_h|    otherwise
//! ```
//!
//! The second branch sets the conductivity that would carry exactly the
//! capacity at the current pressure drop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{relative_excess, Graph, GraphError, Mode, NodeId};
use crate::laplacian::{check_balance, LaplacianError, PoissonSystem};

/// Capped updates with a smaller pressure drop keep the old conductivity.
pub const MIN_PRESSURE_DROP: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CppaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Laplacian(#[from] LaplacianError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppaConfig {
    pub k: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Flow rule: signed flows, or flows clamped at zero.
    pub mode: Mode,
    /// Node pinned to zero pressure; `None` grounds the source (the first
    /// node with the largest positive injection).
    pub ground: Option<NodeId>,
    pub initial_conductivity: f64,
    /// Iterations without a new minimum of `last_change` before the run is
    /// flagged as non-converging.
    pub stall_window: usize,
    /// Relative capacity excess tolerated in a stationary state.
    pub feasibility_tol: f64,
    /// Record every `trace_stride`-th iteration (the last one is always kept).
    pub trace_stride: usize,
}

impl Default for CppaConfig {
    fn default() -> Self {
        CppaConfig {
            k: 0.85,
            epsilon: 5e-5,
            max_iterations: 10_000,
            mode: Mode::Directed,
            ground: None,
            initial_conductivity: 0.5,
            stall_window: 500,
            feasibility_tol: 1e-2,
            trace_stride: 1,
        }
    }
}

impl CppaConfig {
    pub fn validate(&self) -> Result<(), CppaError> {
        let bad = |m: &str| Err(CppaError::InvalidConfig(m.to_string()));
        if !(self.k > 0.0 && self.k <= 1.0) {
            return bad("k must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.initial_conductivity > 0.0 && self.initial_conductivity.is_finite()) {
            return bad("initial conductivity must be positive");
        }
        if self.trace_stride == 0 {
            return bad("trace stride must be at least 1");
        }
        if !(self.feasibility_tol >= 0.0) {
            return bad("feasibility tolerance must be nonnegative");
        }
        Ok(())
    }

    fn ground_for(&self, injections: &[f64]) -> NodeId {
        self.ground.unwrap_or_else(|| {
            let mut best = 0;
            for (i, &b) in injections.iter().enumerate() {
                if b > injections[best] {
                    best = i;
                }
            }
            NodeId(best)
        })
    }
}

/// The mutable iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    /// Conductivities for the next step.
    pub conductivity: Vec<f64>,
    /// Flows of the last step, computed from the conductivities it started with.
    pub flow: Vec<f64>,
    pub pressure: Vec<f64>,
    pub iteration: usize,
    /// `sum_a |Q_a - Q_a(previous step)|`.
    pub last_change: f64,
}

impl SolverState {
    pub fn initial(graph: &Graph, conductivity: f64) -> Self {
        SolverState {
            conductivity: vec![conductivity; graph.arc_count()],
            flow: vec![0.0; graph.arc_count()],
            pressure: vec![0.0; graph.node_count()],
            iteration: 0,
            last_change: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Stationary but infeasible, or stalled until the iteration cap.
    NonConverging,
    MaxIterationsExceeded,
    /// The linear solve failed or produced non-finite values; the last good
    /// state is returned.
    Breakdown,
}

impl RunStatus {
    pub fn is_converged(self) -> bool {
        self == RunStatus::Converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub l1_change: f64,
    pub linf_change: f64,
    pub max_rel_excess: f64,
    /// Largest node conservation residual of the unclamped flows.
    pub conservation_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub stride: usize,
    pub rows: Vec<TraceRow>,
    /// First iteration at which the stall detector fired.
    pub non_converging_at: Option<usize>,
    pub breakdown: Option<String>,
}

impl ConvergenceTrace {
    pub fn new(stride: usize) -> Self {
        ConvergenceTrace {
            stride,
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: TraceRow, force: bool) {
        let due = force || row.iteration.is_multiple_of(self.stride);
        if due && self.rows.last().map(|r| r.iteration) != Some(row.iteration) {
            self.rows.push(row);
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Tracks the best `last_change` seen and fires once no new minimum has
/// appeared for `window` iterations.
#[derive(Debug, Clone)]
pub struct StallDetector {
    window: usize,
    best: f64,
    best_at: usize,
}

impl StallDetector {
    pub fn new(window: usize) -> Self {
        StallDetector {
            window,
            best: f64::INFINITY,
            best_at: 0,
        }
    }

    pub fn observe(&mut self, iteration: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_at = iteration;
        }
        self.window > 0 && iteration - self.best_at >= self.window
    }
}

/// Thresholded adaptation of a single arc.
pub fn adapt_conductivity(q: f64, d: f64, p_tail: f64, p_head: f64, length: f64, capacity: f64, k: f64) -> f64 {
    if q.abs() <= k * capacity {
        return (q.abs() + d) / 2.0;
    }
    let drop = (p_tail - p_head).abs();
    if drop < MIN_PRESSURE_DROP {
        return d;
    }
    capacity * length / drop
}

/// `last_change < N epsilon`, and at least one step has been taken.
pub fn converged(state: &SolverState, config: &CppaConfig, node_count: usize) -> bool {
    state.iteration >= 1 && state.last_change < node_count as f64 * config.epsilon
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub l1_change: f64,
    pub linf_change: f64,
    pub max_rel_excess: f64,
    pub conservation_residual: f64,
}

/// One iteration from `state`.
pub fn step(
    graph: &Graph,
    lengths: &[f64],
    injections: &[f64],
    state: &SolverState,
    config: &CppaConfig,
) -> Result<SolverState, CppaError> {
    step_with_stats(graph, lengths, injections, state, config).map(|(s, _)| s)
}

pub fn step_with_stats(
    graph: &Graph,
    lengths: &[f64],
    injections: &[f64],
    state: &SolverState,
    config: &CppaConfig,
) -> Result<(SolverState, StepStats), CppaError> {
    graph.check_len(&state.conductivity)?;
    graph.check_len(&state.flow)?;
    let ground = config.ground_for(injections);
    let system = PoissonSystem::assemble(graph, &state.conductivity, lengths, injections, ground)?;
    let solved = system.solve()?;

    let n = graph.node_count();
    let m = graph.arc_count();
    let mut flow = Vec::with_capacity(m);
    let mut conductivity = Vec::with_capacity(m);
    let mut residual = injections.to_vec();
    let (mut l1, mut linf, mut excess) = (0.0_f64, 0.0_f64, 0.0_f64);
    for arc in graph.arcs() {
        let a = arc.id;
        let drop = solved.drop(arc.tail, arc.head);
        let signed = state.conductivity[a] / lengths[a] * drop;
        residual[arc.tail.0] -= signed;
        residual[arc.head.0] += signed;
        let q = match config.mode {
            Mode::Undirected => signed,
            Mode::Directed => signed.max(0.0),
        };
        let d = adapt_conductivity(q, state.conductivity[a], drop, 0.0, lengths[a], arc.capacity, config.k);
        let delta = (q - state.flow[a]).abs();
        l1 += delta;
        linf = linf.max(delta);
        excess = excess.max(relative_excess(q, arc.capacity));
        flow.push(q);
        conductivity.push(d);
    }
    debug_assert_eq!(residual.len(), n);
    let conservation_residual = residual.iter().map(|r| r.abs()).fold(0.0, f64::max);
    Ok((
        SolverState {
            conductivity,
            flow,
            pressure: solved.values,
            iteration: state.iteration + 1,
            last_change: l1,
        },
        StepStats {
            l1_change: l1,
            linf_change: linf,
            max_rel_excess: excess,
            conservation_residual,
        },
    ))
}

/// Per-iteration length update, e.g. marginal costs of a flow-dependent cost
/// function. Called after every step with the new state.
pub trait LengthUpdate {
    fn update(&mut self, graph: &Graph, state: &SolverState, lengths: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppaRun {
    pub state: SolverState,
    pub status: RunStatus,
    /// The stopping rule was met, whether or not the flows are feasible.
    pub stationary: bool,
    pub trace: ConvergenceTrace,
    /// Lengths in effect at the end (differs from the input only with a
    /// length update hook).
    pub lengths: Vec<f64>,
}

/// Iterates from the default initial state until convergence or the cap.
pub fn run(graph: &Graph, lengths: &[f64], injections: &[f64], config: &CppaConfig) -> Result<CppaRun, CppaError> {
    let init = SolverState::initial(graph, config.initial_conductivity);
    run_from(graph, lengths, injections, config, init, None)
}

/// Iterates from `state`. Errors are returned only when the very first step
/// fails; later failures end the run with [`RunStatus::Breakdown`].
pub fn run_from(
    graph: &Graph,
    lengths: &[f64],
    injections: &[f64],
    config: &CppaConfig,
    mut state: SolverState,
    mut hook: Option<&mut dyn LengthUpdate>,
) -> Result<CppaRun, CppaError> {
    config.validate()?;
    graph.check_len(lengths)?;
    graph.check_node_len(injections)?;
    check_balance(injections)?;
    let mut lengths = lengths.to_vec();
    for (arc, &l) in lengths.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(GraphError::NonPositiveLength { arc, length: l }.into());
        }
    }
    let n = graph.node_count();
    let mut trace = ConvergenceTrace::new(config.trace_stride);
    let mut stall = StallDetector::new(config.stall_window);
    let mut flagged = false;
    let start = state.iteration;

    loop {
        let (next, stats) = match step_with_stats(graph, &lengths, injections, &state, config) {
            Ok(r) => r,
            Err(e) if state.iteration == start => return Err(e),
            Err(e) => {
                trace.breakdown = Some(e.to_string());
                return Ok(finish(state, RunStatus::Breakdown, trace, lengths));
            }
        };
        if !next.conductivity.iter().chain(&next.flow).all(|x| x.is_finite()) {
            trace.breakdown = Some(format!("non-finite state at iteration {}", next.iteration));
            return Ok(finish(state, RunStatus::Breakdown, trace, lengths));
        }
        state = next;
        if let Some(h) = hook.as_deref_mut() {
            h.update(graph, &state, &mut lengths);
        }
        let row = TraceRow {
            iteration: state.iteration,
            l1_change: stats.l1_change,
            linf_change: stats.linf_change,
            max_rel_excess: stats.max_rel_excess,
            conservation_residual: stats.conservation_residual,
            rgap: None,
        };
        if stall.observe(state.iteration, stats.l1_change) && !flagged {
            flagged = true;
            trace.non_converging_at = Some(state.iteration);
        }
        if converged(&state, config, n) {
            trace.push(row, true);
            let status = if stats.max_rel_excess > config.feasibility_tol {
                trace.non_converging_at.get_or_insert(state.iteration);
                RunStatus::NonConverging
            } else {
                RunStatus::Converged
            };
            let mut run = finish(state, status, trace, lengths);
            run.stationary = true;
            return Ok(run);
        }
        if state.iteration - start >= config.max_iterations {
            trace.push(row, true);
            let status = if flagged {
                RunStatus::NonConverging
            } else {
                RunStatus::MaxIterationsExceeded
            };
            return Ok(finish(state, status, trace, lengths));
        }
        trace.push(row, false);
    }
}

fn finish(state: SolverState, status: RunStatus, trace: ConvergenceTrace, lengths: Vec<f64>) -> CppaRun {
    CppaRun {
        state,
        status,
        stationary: false,
        trace,
        lengths,
    }
}
