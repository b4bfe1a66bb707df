//! Private per-agent convex scalar costs and the regularized scalar
//! minimization that every primal update reduces to.
//!
//! Each x-update in this crate has the canonical form
//! `min_x f(x) + l*x + sum_t w_t * (x - c_t)^2` with all anchor weights
//! `w_t > 0`. [`ScalarSubproblem`] captures that form once; the engines only
//! assemble coefficients. Quadratic costs are solved in closed form, anything
//! else by derivative-sign bisection on an auto-expanded bracket.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("subproblem has no positive quadratic weight")]
    NonPositiveWeight,
    #[error("derivative does not change sign within the bracket expansion budget")]
    BracketFailure,
    #[error("instance is singular: no strictly convex direction")]
    SingularInstance,
}

/// Coefficients of `a*x^2 + b*x + c` with `a >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn evaluate(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    pub fn derivative(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum CostKind {
    Quadratic(Quadratic),
    Custom { eval: ScalarFn, subgrad: ScalarFn },
}

/// A closed, proper, convex scalar cost owned by one agent.
///
/// Exposes evaluation, a subgradient, and (when available) closed-form
/// quadratic coefficients that let the subproblem solver skip bisection.
#[derive(Clone)]
pub struct LocalCost {
    kind: CostKind,
}

impl fmt::Debug for LocalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CostKind::Quadratic(q) => write!(f, "LocalCost::Quadratic({:?})", q),
            CostKind::Custom { .. } => write!(f, "LocalCost::Custom"),
        }
    }
}

impl LocalCost {
    /// Quadratic cost `a*x^2 + b*x + c`. Requires `a >= 0` for convexity.
    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        assert!(a >= 0.0, "quadratic cost needs a >= 0");
        LocalCost {
            kind: CostKind::Quadratic(Quadratic { a, b, c }),
        }
    }

    /// Generic convex cost given by value and subgradient callbacks.
    pub fn custom(
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LocalCost {
            kind: CostKind::Custom {
                eval: Arc::new(eval),
                subgrad: Arc::new(subgrad),
            },
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match &self.kind {
            CostKind::Quadratic(q) => q.evaluate(x),
            CostKind::Custom { eval, .. } => eval(x),
        }
    }

    pub fn subgradient(&self, x: f64) -> f64 {
        match &self.kind {
            CostKind::Quadratic(q) => q.derivative(x),
            CostKind::Custom { subgrad, .. } => subgrad(x),
        }
    }

    pub fn quadratic_coefficients(&self) -> Option<Quadratic> {
        match &self.kind {
            CostKind::Quadratic(q) => Some(*q),
            CostKind::Custom { .. } => None,
        }
    }
}

/// Scalar sensing cost `f(x) = (M*x - y)^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresCost {
    /// Measurement coefficient M.
    pub m_coef: f64,
    /// Measurement y.
    pub y: f64,
}

impl LeastSquaresCost {
    pub fn cost(&self) -> LocalCost {
        LocalCost::quadratic(
            self.m_coef * self.m_coef / 2.0,
            -self.m_coef * self.y,
            self.y * self.y / 2.0,
        )
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let r = self.m_coef * x - self.y;
        0.5 * r * r
    }
}

/// One quadratic pull `w * (x - c)^2`, `w > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub weight: f64,
    pub center: f64,
}

impl Anchor {
    pub fn new(weight: f64, center: f64) -> Self {
        Anchor { weight, center }
    }
}

/// The canonical strictly convex scalar problem
/// `min_x f(x) + linear*x + sum_t w_t*(x - c_t)^2`.
#[derive(Debug, Clone)]
pub struct ScalarSubproblem<'a> {
    pub cost: &'a LocalCost,
    pub linear: f64,
    pub anchors: Vec<Anchor>,
}

impl<'a> ScalarSubproblem<'a> {
    pub fn new(cost: &'a LocalCost, linear: f64, anchors: Vec<Anchor>) -> Self {
        ScalarSubproblem {
            cost,
            linear,
            anchors,
        }
    }

    /// Sum of anchor weights; the subproblem is strictly convex when this is
    /// positive (or the cost itself is strictly convex).
    pub fn total_quadratic_weight(&self) -> f64 {
        self.anchors.iter().map(|a| a.weight).sum()
    }

    pub fn objective(&self, x: f64) -> f64 {
        let mut v = self.cost.evaluate(x) + self.linear * x;
        for a in &self.anchors {
            let d = x - a.center;
            v += a.weight * d * d;
        }
        v
    }

    /// Subgradient of the full objective.
    pub fn subgradient(&self, x: f64) -> f64 {
        let mut g = self.cost.subgradient(x) + self.linear;
        for a in &self.anchors {
            g += 2.0 * a.weight * (x - a.center);
        }
        g
    }

    /// Minimizes the subproblem to `|subgradient(x)| <= tol * max(1, |x|)`.
    ///
    /// Quadratic costs take the closed-form stationarity solve; custom costs
    /// fall back to derivative bisection on a bracket expanded from the
    /// anchor-weighted mean.
    pub fn solve(&self, tol: f64) -> Result<f64, CostError> {
        assert!(tol > 0.0, "tolerance must be positive");
        let w = self.total_quadratic_weight();
        let strictly_convex_cost = self
            .cost
            .quadratic_coefficients()
            .is_some_and(|q| q.a > 0.0);
        if w <= 0.0 && !strictly_convex_cost {
            return Err(CostError::NonPositiveWeight);
        }
        if let Some(q) = self.cost.quadratic_coefficients() {
            // 2a x + b + linear + sum 2w_t (x - c_t) = 0
            let denom = 2.0 * q.a + 2.0 * w;
            let num = -q.b - self.linear
                + self
                    .anchors
                    .iter()
                    .map(|a| 2.0 * a.weight * a.center)
                    .sum::<f64>();
            return Ok(num / denom);
        }
        self.bisect(tol)
    }

    fn bisect(&self, tol: f64) -> Result<f64, CostError> {
        let center = if self.total_quadratic_weight() > 0.0 {
            self.anchors
                .iter()
                .map(|a| a.weight * a.center)
                .sum::<f64>()
                / self.total_quadratic_weight()
        } else {
            0.0
        };
        let mut radius = 1.0_f64.max(center.abs());
        let (mut lo, mut hi) = (center - radius, center + radius);
        let mut expansions = 0;
        while self.subgradient(lo) > 0.0 || self.subgradient(hi) < 0.0 {
            expansions += 1;
            if expansions > 200 {
                return Err(CostError::BracketFailure);
            }
            radius *= 2.0;
            lo = center - radius;
            hi = center + radius;
        }
        // derivative is nondecreasing on [lo, hi] with a sign change inside;
        // a machine-width bracket also certifies the minimizer (the sign
        // change then sits at a kink where the pointwise derivative never
        // vanishes, or at the limit of representability)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let g = self.subgradient(mid);
            if g.abs() <= tol * 1.0_f64.max(mid.abs())
                || (hi - lo) <= 4.0 * f64::EPSILON * 1.0_f64.max(mid.abs())
            {
                return Ok(mid);
            }
            if g > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Solves the canonical subproblem. See [`ScalarSubproblem::solve`].
pub fn solve_subproblem(p: &ScalarSubproblem<'_>, tol: f64) -> Result<f64, CostError> {
    p.solve(tol)
}

/// A replayable least-squares sensing instance: `y_i = M_i * signal + e_i`
/// with `M_i, e_i, signal ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsInstance {
    pub n: usize,
    pub seed: u64,
    /// Ground-truth signal the measurements were generated from.
    pub signal: f64,
    pub costs: Vec<LeastSquaresCost>,
}

impl LsInstance {
    /// Draws a fresh instance. Deterministic given the seed: the signal comes
    /// from ChaCha8 stream 0 and agent i's `(M_i, e_i)` pair from stream i,
    /// so instances are bit-reproducible across platforms and agent counts
    /// extend without disturbing earlier agents.
    pub fn generate(n: usize, seed: u64) -> Self {
        Self::generate_with_noise(n, seed, 1.0)
    }

    /// Test hook: same draws as [`LsInstance::generate`] but with every noise
    /// term forced to zero, so the centralized optimum equals the signal.
    pub fn generate_noiseless(n: usize, seed: u64) -> Self {
        Self::generate_with_noise(n, seed, 0.0)
    }

    fn generate_with_noise(n: usize, seed: u64, noise_scale: f64) -> Self {
        assert!(n >= 2, "instances need at least 2 agents");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let signal: f64 = StandardNormal.sample(&mut rng);
        let mut costs = Vec::with_capacity(n);
        for i in 1..=n {
            let mut agent_rng = ChaCha8Rng::seed_from_u64(seed);
            agent_rng.set_stream(i as u64);
            let m_coef: f64 = StandardNormal.sample(&mut agent_rng);
            let e: f64 = StandardNormal.sample(&mut agent_rng);
            costs.push(LeastSquaresCost {
                m_coef,
                y: m_coef * signal + noise_scale * e,
            });
        }
        LsInstance {
            n,
            seed,
            signal,
            costs,
        }
    }

    pub fn local_costs(&self) -> Vec<LocalCost> {
        self.costs.iter().map(|c| c.cost()).collect()
    }
}

/// Draws the per-agent least-squares costs for a fresh instance.
pub fn generate_ls_instance(n: usize, seed: u64) -> Vec<LeastSquaresCost> {
    LsInstance::generate(n, seed).costs
}
