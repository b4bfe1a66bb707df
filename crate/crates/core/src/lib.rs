//! Consensus optimization over simulated multi-agent networks.
//!
//! A group of agents, each holding a private convex scalar cost, jointly
//! minimizes the sum of all costs subject to agreement across the edges of a
//! connected undirected graph. The crate provides four iteration engines over
//! a locality-enforcing simulated network - a parallel ADMM in which every
//! agent updates from neighbor snapshots only, the classical sequential
//! (Gauss-Seidel) ADMM, a proximal Jacobi ADMM, and the distributed
//! subgradient method - plus a centralized oracle and runtime certificates
//! (potential descent, O(1/k) ergodic cost bound, variational-inequality
//! residual) that are checked against every recorded trace.
//!
//! Modules follow the pipeline: [`graph`] builds topologies and incidence
//! matrices, [`costs`] owns local costs and the scalar subproblem solver,
//! [`algorithms`] holds the pure per-agent update rules, [`harness`] drives
//! round-synchronous message-passing runs, and [`analysis`] measures the
//! results.

pub mod algorithms;
pub mod analysis;
pub mod costs;
pub mod graph;
pub mod harness;

pub use algorithms::{Algorithm, RunConfig};
pub use analysis::{certify, solve_centralized, CertificateReport, OracleSolution};
pub use costs::{LeastSquaresCost, LocalCost, LsInstance};
pub use graph::{IncidenceSet, NeighborPartition, Topology};
pub use harness::{run, run_sequential, IterationTrace, Schedule, SimOptions, StopRule};
