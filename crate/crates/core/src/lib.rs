//! Capacity-constrained Physarum solver.
//!
//! The core iteration ([`cppa`]) adapts per-arc conductivities over repeated
//! network Poisson solves ([`laplacian`]), capping each arc so its next flow
//! cannot exceed capacity. On top of it sit maximum flow ([`maxflow`]),
//! minimum-cost maximum flow ([`mincost`]) and capacitated traffic
//! assignment ([`ctap`]), each paired with an exact classical oracle.

pub mod cppa;
pub mod ctap;
pub mod gen;
pub mod graph;
pub mod io;
pub mod laplacian;
pub mod maxflow;
pub mod mincost;

pub use cppa::{CppaConfig, CppaError, RunStatus, SolverState};
pub use graph::{build_graph, ArcSpec, Graph, GraphError, Mode, NodeId};
