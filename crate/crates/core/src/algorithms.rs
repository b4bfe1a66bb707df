//! The four iteration engines: parallel ADMM, sequential ADMM, proximal
//! Jacobi ADMM and the distributed subgradient method.
//!
//! Every update here is a pure function of one agent's state, its cost and a
//! snapshot of neighbor values; the harness owns scheduling and message
//! delivery. Neighbor maps are `BTreeMap`s so per-agent sums always run in a
//! fixed key order, which is what makes traces exactly identical across
//! evaluation schedules and worker counts.
//!
//! Dual ownership differs per engine. The parallel engine stores the dual of
//! edge (i, j), i < j, at agent i (one per edge, successor-directed); the
//! sequential engine stores it at agent j (predecessor-directed); proximal
//! Jacobi duplicates a directed dual at both endpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{Anchor, CostError, LocalCost, ScalarSubproblem};
use crate::graph::{AgentId, NeighborPartition};

#[derive(Debug, Error, PartialEq)]
pub enum AlgorithmError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("agent {agent} has no snapshot entry for neighbor {neighbor}")]
    MissingNeighborData { agent: AgentId, neighbor: AgentId },
    #[error("agent {agent} updated before predecessor {missing} in the sequential sweep")]
    OrderingViolation { agent: AgentId, missing: AgentId },
    #[error("weight row of agent {agent} is not stochastic or leaves the neighborhood")]
    BadWeights { agent: AgentId },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

/// Which engine drives the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ParallelAdmm,
    SequentialAdmm,
    Pjadmm,
    Dsm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ParallelAdmm,
        Algorithm::SequentialAdmm,
        Algorithm::Pjadmm,
        Algorithm::Dsm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ParallelAdmm => "parallel-admm",
            Algorithm::SequentialAdmm => "sequential-admm",
            Algorithm::Pjadmm => "pjadmm",
            Algorithm::Dsm => "dsm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel-admm" => Ok(Algorithm::ParallelAdmm),
            "sequential-admm" => Ok(Algorithm::SequentialAdmm),
            "pjadmm" => Ok(Algorithm::Pjadmm),
            "dsm" => Ok(Algorithm::Dsm),
            other => Err(format!(
                "unknown algorithm {other:?} (expected parallel-admm, sequential-admm, pjadmm or dsm)"
            )),
        }
    }
}

/// Diminishing step size `alpha(k) = scale * k^(-exponent)` for the
/// subgradient engine. The iteration counter starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsmStepSize {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for DsmStepSize {
    fn default() -> Self {
        DsmStepSize {
            scale: 1.0,
            exponent: 0.5,
        }
    }
}

impl DsmStepSize {
    pub fn alpha(&self, k: usize) -> f64 {
        debug_assert!(k >= 1, "step size is undefined at k = 0");
        self.scale * (k as f64).powf(-self.exponent)
    }
}

/// Run parameters shared by all engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Penalty weight on the consensus quadratics; must be positive.
    pub rho: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub algorithm: Algorithm,
    pub max_iter: usize,
    /// Stationarity tolerance handed to the scalar subproblem solver.
    pub subproblem_tol: f64,
    #[serde(default)]
    pub dsm_stepsize: DsmStepSize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rho: 1.0,
            eps1: 0.0,
            eps2: 0.0,
            algorithm: Algorithm::ParallelAdmm,
            max_iter: 1000,
            subproblem_tol: 1e-12,
            dsm_stepsize: DsmStepSize::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AlgorithmError> {
        if !(self.rho > 0.0) {
            return Err(AlgorithmError::InvalidConfig(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if self.eps1 < 0.0 || self.eps2 < 0.0 {
            return Err(AlgorithmError::InvalidConfig(format!(
                "eps1/eps2 must be nonnegative, got {} / {}",
                self.eps1, self.eps2
            )));
        }
        if !(self.subproblem_tol > 0.0) {
            return Err(AlgorithmError::InvalidConfig(format!(
                "subproblem_tol must be positive, got {}",
                self.subproblem_tol
            )));
        }
        if self.dsm_stepsize.scale <= 0.0 || self.dsm_stepsize.exponent < 0.0 {
            return Err(AlgorithmError::InvalidConfig(
                "dsm step size needs scale > 0 and exponent >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Iteration-k values an agent has received from its neighbors. Holds exactly
/// one primal entry per neighbor; dual entries follow the active engine's
/// ownership direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSnapshot {
    pub x: BTreeMap<AgentId, f64>,
    pub duals: BTreeMap<AgentId, f64>,
}

impl NeighborSnapshot {
    fn neighbor_x(&self, agent: AgentId, j: AgentId) -> Result<f64, AlgorithmError> {
        self.x
            .get(&j)
            .copied()
            .ok_or(AlgorithmError::MissingNeighborData { agent, neighbor: j })
    }

    fn neighbor_dual(&self, agent: AgentId, j: AgentId) -> Result<f64, AlgorithmError> {
        self.duals
            .get(&j)
            .copied()
            .ok_or(AlgorithmError::MissingNeighborData { agent, neighbor: j })
    }
}

/// One agent's primal estimate, the duals it owns and its neighbor snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentState {
    pub x: f64,
    /// Keyed by the opposite endpoint of the edge the dual belongs to.
    pub owned_duals: BTreeMap<AgentId, f64>,
    pub snapshot: NeighborSnapshot,
}

impl AgentState {
    fn owned_dual(&self, agent: AgentId, j: AgentId) -> Result<f64, AlgorithmError> {
        self.owned_duals
            .get(&j)
            .copied()
            .ok_or(AlgorithmError::MissingNeighborData { agent, neighbor: j })
    }
}

/// Fresh within-iteration primal values, used where an engine is allowed to
/// read iteration-(k+1) data: the sequential sweep and the proximal Jacobi
/// dual phase.
pub type FreshPrimal = BTreeMap<AgentId, f64>;

/// Parallel ADMM primal update. Consumes only iteration-k data.
///
/// Minimizes `f_i(x) + l*x + (rho/2) sum_N (x - x_j)^2
/// + (1+eps1) rho |P_i| (x - x_i)^2 + eps2 rho |S_i| (x - x_i)^2` where
/// `l = sum_P dual_ji - sum_S dual_ij - rho (sum_P x_j - |P_i| x_i)`.
pub fn parallel_x_update(
    i: AgentId,
    state: &AgentState,
    cost: &LocalCost,
    part: &NeighborPartition,
    cfg: &RunConfig,
) -> Result<f64, AlgorithmError> {
    let rho = cfg.rho;
    let preds = part.predecessors(i);
    let succs = part.successors(i);

    let mut linear = 0.0;
    let mut pred_x_sum = 0.0;
    for &j in preds {
        linear += state.snapshot.neighbor_dual(i, j)?;
        pred_x_sum += state.snapshot.neighbor_x(i, j)?;
    }
    for &j in succs {
        linear -= state.owned_dual(i, j)?;
    }
    linear -= rho * (pred_x_sum - preds.len() as f64 * state.x);

    let mut anchors = Vec::with_capacity(part.degree(i) + 2);
    for &j in part.neighbors(i) {
        anchors.push(Anchor::new(rho / 2.0, state.snapshot.neighbor_x(i, j)?));
    }
    let w_pred = (1.0 + cfg.eps1) * rho * preds.len() as f64;
    if w_pred > 0.0 {
        anchors.push(Anchor::new(w_pred, state.x));
    }
    let w_succ = cfg.eps2 * rho * succs.len() as f64;
    if w_succ > 0.0 {
        anchors.push(Anchor::new(w_succ, state.x));
    }

    let sub = ScalarSubproblem::new(cost, linear, anchors);
    Ok(sub.solve(cfg.subproblem_tol)?)
}

/// Parallel ADMM dual update: for each successor j,
/// `dual_ij <- dual_ij - rho (x_i_next - x_j_k)`. The snapshot still holds
/// iteration-k primals when this runs.
pub fn parallel_dual_update(
    i: AgentId,
    x_next: f64,
    state: &AgentState,
    cfg: &RunConfig,
) -> Result<BTreeMap<AgentId, f64>, AlgorithmError> {
    let mut out = BTreeMap::new();
    for (&j, &lam) in &state.owned_duals {
        let xj = state.snapshot.neighbor_x(i, j)?;
        out.insert(j, lam - cfg.rho * (x_next - xj));
    }
    Ok(out)
}

/// Sequential (Gauss-Seidel) primal update. Predecessors must already have
/// produced their iteration-(k+1) value, delivered through `fresh`.
pub fn sequential_x_update(
    i: AgentId,
    state: &AgentState,
    cost: &LocalCost,
    part: &NeighborPartition,
    cfg: &RunConfig,
    fresh: &FreshPrimal,
) -> Result<f64, AlgorithmError> {
    let rho = cfg.rho;
    let mut anchors = Vec::with_capacity(part.degree(i));
    for &j in part.predecessors(i) {
        let xj_next = *fresh
            .get(&j)
            .ok_or(AlgorithmError::OrderingViolation { agent: i, missing: j })?;
        let lam = state.owned_dual(i, j)?;
        anchors.push(Anchor::new(rho / 2.0, xj_next - lam / rho));
    }
    for &j in part.successors(i) {
        let xj = state.snapshot.neighbor_x(i, j)?;
        let lam = state.snapshot.neighbor_dual(i, j)?;
        anchors.push(Anchor::new(rho / 2.0, xj + lam / rho));
    }
    let sub = ScalarSubproblem::new(cost, 0.0, anchors);
    Ok(sub.solve(cfg.subproblem_tol)?)
}

/// Sequential dual update: for each predecessor j,
/// `dual_ji <- dual_ji - rho (x_j_next - x_i_next)`; both values are
/// iteration-(k+1).
pub fn sequential_dual_update(
    i: AgentId,
    x_next: f64,
    state: &AgentState,
    cfg: &RunConfig,
    fresh: &FreshPrimal,
) -> Result<BTreeMap<AgentId, f64>, AlgorithmError> {
    let mut out = BTreeMap::new();
    for (&j, &lam) in &state.owned_duals {
        let xj_next = *fresh
            .get(&j)
            .ok_or(AlgorithmError::OrderingViolation { agent: i, missing: j })?;
        out.insert(j, lam - cfg.rho * (xj_next - x_next));
    }
    Ok(out)
}

/// Proximal Jacobi primal update, iteration-k data only:
/// `min f_i(x) + (x - x_i)^2 / 2 + sum_N [ -dual_ij x + (rho/2)(x - x_j)^2 ]`.
///
/// The dual enters with a minus sign so that, paired with the descending dual
/// step below, consensus violations are corrected rather than amplified.
pub fn pjadmm_x_update(
    i: AgentId,
    state: &AgentState,
    cost: &LocalCost,
    part: &NeighborPartition,
    cfg: &RunConfig,
) -> Result<f64, AlgorithmError> {
    let rho = cfg.rho;
    let mut linear = 0.0;
    let mut anchors = Vec::with_capacity(part.degree(i) + 1);
    anchors.push(Anchor::new(0.5, state.x));
    for &j in part.neighbors(i) {
        linear -= state.owned_dual(i, j)?;
        anchors.push(Anchor::new(rho / 2.0, state.snapshot.neighbor_x(i, j)?));
    }
    let sub = ScalarSubproblem::new(cost, linear, anchors);
    Ok(sub.solve(cfg.subproblem_tol)?)
}

/// Proximal Jacobi dual update, after every agent finished its primal phase:
/// for each neighbor j, `dual_ij <- dual_ij - rho (x_i_next - x_j_next)`.
pub fn pjadmm_dual_update(
    i: AgentId,
    x_next: f64,
    state: &AgentState,
    cfg: &RunConfig,
    fresh: &FreshPrimal,
) -> Result<BTreeMap<AgentId, f64>, AlgorithmError> {
    let mut out = BTreeMap::new();
    for (&j, &lam) in &state.owned_duals {
        let xj_next = *fresh
            .get(&j)
            .ok_or(AlgorithmError::MissingNeighborData { agent: i, neighbor: j })?;
        out.insert(j, lam - cfg.rho * (x_next - xj_next));
    }
    Ok(out)
}

/// Doubly stochastic consensus weights with the Metropolis-Hastings rule:
/// `w_ij = 1 / (1 + max(deg_i, deg_j))` for neighbors, self-weight takes the
/// remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisWeights {
    rows: Vec<BTreeMap<AgentId, f64>>,
}

impl MetropolisWeights {
    pub fn from_partition(n: usize, part: &NeighborPartition) -> Self {
        let mut rows = vec![BTreeMap::new(); n + 1];
        for i in 1..=n {
            let mut self_weight = 1.0;
            for &j in part.neighbors(i) {
                let w = 1.0 / (1.0 + part.degree(i).max(part.degree(j)) as f64);
                rows[i].insert(j, w);
                self_weight -= w;
            }
            rows[i].insert(i, self_weight);
        }
        MetropolisWeights { rows }
    }

    /// Weight row of agent i, including the self-weight at key i.
    pub fn row(&self, i: AgentId) -> &BTreeMap<AgentId, f64> {
        &self.rows[i]
    }
}

/// Distributed subgradient update
/// `x_i <- sum_j w_ij x_j - alpha(k) g_i(x_i)` with `k >= 1`.
pub fn dsm_update(
    i: AgentId,
    state: &AgentState,
    cost: &LocalCost,
    weights: &MetropolisWeights,
    part: &NeighborPartition,
    k: usize,
    cfg: &RunConfig,
) -> Result<f64, AlgorithmError> {
    let row = weights.row(i);
    let mut sum = 0.0;
    let mut mixed = 0.0;
    for (&j, &w) in row {
        if w < 0.0 || (j != i && !part.neighbors(i).contains(&j)) {
            return Err(AlgorithmError::BadWeights { agent: i });
        }
        sum += w;
        let xj = if j == i {
            state.x
        } else {
            state.snapshot.neighbor_x(i, j)?
        };
        mixed += w * xj;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(AlgorithmError::BadWeights { agent: i });
    }
    Ok(mixed - cfg.dsm_stepsize.alpha(k) * cost.subgradient(state.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;

    fn cfg(rho: f64) -> RunConfig {
        RunConfig {
            rho,
            ..RunConfig::default()
        }
    }

    fn two_node() -> (Topology, NeighborPartition) {
        let t = Topology::new(2, &[(1, 2)]).unwrap();
        let p = NeighborPartition::from_topology(&t);
        (t, p)
    }

    /// Zero-initialized states for the 2-node instance under parallel
    /// ownership (agent 1 owns the single dual).
    fn two_node_states() -> [AgentState; 2] {
        let mut a1 = AgentState::default();
        a1.owned_duals.insert(2, 0.0);
        a1.snapshot.x.insert(2, 0.0);
        let mut a2 = AgentState::default();
        a2.snapshot.x.insert(1, 0.0);
        a2.snapshot.duals.insert(1, 0.0);
        [a1, a2]
    }

    #[test]
    fn parallel_two_node_first_step() {
        // f1 = x^2/2, f2 = (x-2)^2/2, rho = 1, eps = 0, zero init:
        // agent 1 minimizes x^2/2 + x^2/2 -> 0
        // agent 2 minimizes (x-2)^2/2 + x^2/2 + x^2 -> 1/2
        let (_, part) = two_node();
        let c = cfg(1.0);
        let f1 = LocalCost::quadratic(0.5, 0.0, 0.0);
        let f2 = LocalCost::quadratic(0.5, -2.0, 2.0);
        let [a1, a2] = two_node_states();
        let x1 = parallel_x_update(1, &a1, &f1, &part, &c).unwrap();
        let x2 = parallel_x_update(2, &a2, &f2, &part, &c).unwrap();
        assert!((x1 - 0.0).abs() < 1e-12);
        assert!((x2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parallel_stationary_point_is_fixed() {
        // all duals zero, every snapshot value equals x_hat, f'(x_hat) = 0
        let (_, part) = two_node();
        let c = cfg(2.0);
        let x_hat = 1.7;
        let f = LocalCost::quadratic(0.5, -x_hat, 0.0); // minimizer at x_hat
        let mut a1 = AgentState {
            x: x_hat,
            ..AgentState::default()
        };
        a1.owned_duals.insert(2, 0.0);
        a1.snapshot.x.insert(2, x_hat);
        let x1 = parallel_x_update(1, &a1, &f, &part, &c).unwrap();
        assert!((x1 - x_hat).abs() < 1e-12);
    }

    #[test]
    fn parallel_dual_direct_substitution() {
        let mut a1 = AgentState::default();
        a1.owned_duals.insert(2, 0.0);
        a1.snapshot.x.insert(2, 0.2);
        let duals = parallel_dual_update(1, 0.5, &a1, &cfg(1.0)).unwrap();
        assert!((duals[&2] - (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn parallel_dual_unchanged_at_consensus() {
        let mut a1 = AgentState {
            x: 0.9,
            ..AgentState::default()
        };
        a1.owned_duals.insert(2, 0.35);
        a1.snapshot.x.insert(2, 0.9);
        let duals = parallel_dual_update(1, 0.9, &a1, &cfg(1.3)).unwrap();
        assert_eq!(duals[&2], 0.35);
    }

    #[test]
    fn config_rejects_nonpositive_rho() {
        assert!(cfg(0.0).validate().is_err());
        assert!(cfg(-1.0).validate().is_err());
        assert!(cfg(1.0).validate().is_ok());
    }

    #[test]
    fn sequential_first_agent_ignores_fresh() {
        let (_, part) = two_node();
        let c = cfg(1.0);
        let f1 = LocalCost::quadratic(0.5, 0.0, 0.0);
        let mut a1 = AgentState::default();
        a1.snapshot.x.insert(2, 0.0);
        a1.snapshot.duals.insert(2, 0.0);
        // empty fresh map is fine for the agent without predecessors
        let x1 = sequential_x_update(1, &a1, &f1, &part, &c, &FreshPrimal::new()).unwrap();
        assert!((x1 - 0.0).abs() < 1e-12);
    }

    #[test]
    fn sequential_missing_predecessor_is_ordering_violation() {
        let (_, part) = two_node();
        let c = cfg(1.0);
        let f2 = LocalCost::quadratic(0.5, -2.0, 2.0);
        let mut a2 = AgentState::default();
        a2.owned_duals.insert(1, 0.0);
        let err = sequential_x_update(2, &a2, &f2, &part, &c, &FreshPrimal::new()).unwrap_err();
        assert_eq!(
            err,
            AlgorithmError::OrderingViolation {
                agent: 2,
                missing: 1
            }
        );
    }

    #[test]
    fn sequential_two_node_first_iteration() {
        // hand trace: x1 = 0, x2 = (2 + x1)/2 = 1, dual = 0 - (0 - 1) = 1
        let (_, part) = two_node();
        let c = cfg(1.0);
        let f1 = LocalCost::quadratic(0.5, 0.0, 0.0);
        let f2 = LocalCost::quadratic(0.5, -2.0, 2.0);

        let mut a1 = AgentState::default();
        a1.snapshot.x.insert(2, 0.0);
        a1.snapshot.duals.insert(2, 0.0);
        let mut a2 = AgentState::default();
        a2.owned_duals.insert(1, 0.0);
        a2.snapshot.x.insert(1, 0.0);

        let mut fresh = FreshPrimal::new();
        let x1 = sequential_x_update(1, &a1, &f1, &part, &c, &fresh).unwrap();
        fresh.insert(1, x1);
        let x2 = sequential_x_update(2, &a2, &f2, &part, &c, &fresh).unwrap();
        let duals = sequential_dual_update(2, x2, &a2, &c, &fresh).unwrap();
        assert!((x1 - 0.0).abs() < 1e-12);
        assert!((x2 - 1.0).abs() < 1e-12);
        assert!((duals[&1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequential_dual_magnitude_is_rho_times_gap() {
        let mut a2 = AgentState::default();
        a2.owned_duals.insert(1, 0.0);
        let mut fresh = FreshPrimal::new();
        fresh.insert(1, 0.7);
        let rho = 2.5;
        let duals = sequential_dual_update(2, 0.3, &a2, &cfg(rho), &fresh).unwrap();
        assert!((duals[&1].abs() - rho * (0.7 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn pjadmm_two_node_first_iteration() {
        // zero init, rho = 1: x1 = 0, x2 = 2/3, duals antisymmetric 2/3
        let (_, part) = two_node();
        let c = cfg(1.0);
        let f1 = LocalCost::quadratic(0.5, 0.0, 0.0);
        let f2 = LocalCost::quadratic(0.5, -2.0, 2.0);
        let mut a1 = AgentState::default();
        a1.owned_duals.insert(2, 0.0);
        a1.snapshot.x.insert(2, 0.0);
        let mut a2 = AgentState::default();
        a2.owned_duals.insert(1, 0.0);
        a2.snapshot.x.insert(1, 0.0);

        let x1 = pjadmm_x_update(1, &a1, &f1, &part, &c).unwrap();
        let x2 = pjadmm_x_update(2, &a2, &f2, &part, &c).unwrap();
        assert!((x1 - 0.0).abs() < 1e-12);
        assert!((x2 - 2.0 / 3.0).abs() < 1e-12);

        let fresh: FreshPrimal = [(1, x1), (2, x2)].into_iter().collect();
        let d1 = pjadmm_dual_update(1, x1, &a1, &c, &fresh).unwrap();
        let d2 = pjadmm_dual_update(2, x2, &a2, &c, &fresh).unwrap();
        assert!((d1[&2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d2[&1] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pjadmm_dual_sums_preserved() {
        // lam_ij + lam_ji is invariant under the paired dual updates
        let c = cfg(1.7);
        let mut a1 = AgentState::default();
        a1.owned_duals.insert(2, 0.4);
        let mut a2 = AgentState::default();
        a2.owned_duals.insert(1, -0.4);
        let fresh: FreshPrimal = [(1, 0.9), (2, 0.1)].into_iter().collect();
        let d1 = pjadmm_dual_update(1, 0.9, &a1, &c, &fresh).unwrap();
        let d2 = pjadmm_dual_update(2, 0.1, &a2, &c, &fresh).unwrap();
        assert!((d1[&2] + d2[&1]).abs() < 1e-15);
    }

    #[test]
    fn metropolis_weights_on_four_node_graph() {
        let t = Topology::new(4, &[(1, 2), (1, 3), (1, 4), (2, 4), (3, 4)]).unwrap();
        let part = NeighborPartition::from_topology(&t);
        let w = MetropolisWeights::from_partition(4, &part);
        // degrees: 3, 2, 2, 3; row 2: w_21 = w_24 = 1/4, self = 1/2
        let row = w.row(2);
        assert!((row[&1] - 0.25).abs() < 1e-15);
        assert!((row[&4] - 0.25).abs() < 1e-15);
        assert!((row[&2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dsm_consensus_with_zero_subgradient_is_fixed() {
        let (_, part) = two_node();
        let w = MetropolisWeights::from_partition(2, &part);
        let f = LocalCost::quadratic(0.5, -1.4, 0.0); // minimizer 1.4
        let mut a1 = AgentState {
            x: 1.4,
            ..AgentState::default()
        };
        a1.snapshot.x.insert(2, 1.4);
        let x = dsm_update(1, &a1, &f, &w, &part, 1, &cfg(1.0)).unwrap();
        assert!((x - 1.4).abs() < 1e-12);
    }

    #[test]
    fn dsm_two_node_single_step() {
        // alpha(1) = 1; x2 moves by -f2'(0) = 2, x1 stays
        let (_, part) = two_node();
        let w = MetropolisWeights::from_partition(2, &part);
        let f1 = LocalCost::quadratic(0.5, 0.0, 0.0);
        let f2 = LocalCost::quadratic(0.5, -2.0, 2.0);
        let mut a1 = AgentState::default();
        a1.snapshot.x.insert(2, 0.0);
        let mut a2 = AgentState::default();
        a2.snapshot.x.insert(1, 0.0);
        let c = cfg(1.0);
        assert!((dsm_update(1, &a1, &f1, &w, &part, 1, &c).unwrap() - 0.0).abs() < 1e-12);
        assert!((dsm_update(2, &a2, &f2, &w, &part, 1, &c).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dsm_rejects_nonstochastic_rows() {
        let (_, part) = two_node();
        let mut w = MetropolisWeights::from_partition(2, &part);
        w.rows[1].insert(1, 0.9); // row now sums to 1.4
        let f = LocalCost::quadratic(0.5, 0.0, 0.0);
        let mut a1 = AgentState::default();
        a1.snapshot.x.insert(2, 0.0);
        let err = dsm_update(1, &a1, &f, &w, &part, 1, &cfg(1.0)).unwrap_err();
        assert_eq!(err, AlgorithmError::BadWeights { agent: 1 });
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
        }
        assert!("gradient-descent".parse::<Algorithm>().is_err());
    }
}
