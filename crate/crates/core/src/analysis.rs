//! Centralized oracle and runtime convergence certificates.
//!
//! The oracle solves the aggregated problem directly (normal equation for
//! quadratics, derivative bisection otherwise) and recovers a multiplier
//! vector from the stationarity system, giving every metric a ground truth to
//! measure against. The certificates evaluate, along a recorded trace, the
//! quantities whose signs the convergence theory promises:
//!
//! * `lyapunov` - the nonnegative composite V of dual error and edge-projected
//!   primal error;
//! * `descent_slack` - the claimed per-iteration decrease of V net of the
//!   penalty terms, in two epsilon weightings (`Full` keeps the weights the
//!   primal update actually injects, `Halved` halves them);
//! * `descent_slack_corrected` - the same slack plus the skew cross-term
//!   `rho * (xbar - x^{k+1})' (E'A - A'E) (2x^k - x^{k+1})`, which is the
//!   inequality that actually follows from the update rule's first-order
//!   optimality. Empirically only this form is nonnegative along
//!   trajectories; the uncorrected slack can dip below zero.
//! * `ergodic_bound_check` - the O(1/k) bound margin on the running-average
//!   cost gap;
//! * `vi_residual` - violation of the variational-inequality optimality
//!   characterization over a fixed probe set.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::algorithms::RunConfig;
use crate::costs::LocalCost;
use crate::graph::IncidenceSet;
use crate::harness::IterationTrace;

/// Absolute slack below which a certificate is considered violated.
pub const CERTIFICATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("instance is singular: total quadratic curvature is zero")]
    SingularInstance,
    #[error("no stationary point found within the bracket expansion budget")]
    NoStationaryPoint,
    #[error("optimum is exactly zero; relative residual undefined")]
    ZeroOptimum,
}

/// Ground truth for one instance: consensual optimum, a stationarity
/// multiplier, and the optimal cost in both conventions (plain sum and
/// 1/n-scaled mean).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x_star: f64,
    pub x_star_vec: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub f_star_sum: f64,
    pub f_star_mean: f64,
}

fn total_cost(costs: &[LocalCost], x: &[f64]) -> f64 {
    costs
        .iter()
        .zip(x)
        .map(|(c, &xi)| c.evaluate(xi))
        .sum()
}

fn consensus_cost(costs: &[LocalCost], x_hat: f64) -> f64 {
    costs.iter().map(|c| c.evaluate(x_hat)).sum()
}

/// Solves `min_x sum_i f_i(x)` centrally and recovers the multiplier.
///
/// The multiplier solves `A' lambda = g` with `g_i = f_i'(x_star)`; taking
/// `lambda = A z` with `(A'A + J/n) z = g` yields the minimum-norm solution
/// (it lies in the row space of `A'` and is invariant to the kernel component
/// of z because `A 1 = 0`).
pub fn solve_centralized(
    costs: &[LocalCost],
    inc: &IncidenceSet,
) -> Result<OracleSolution, AnalysisError> {
    let n = inc.a.ncols();
    assert_eq!(costs.len(), n, "one cost per agent");

    let quadratics: Option<Vec<_>> = costs.iter().map(|c| c.quadratic_coefficients()).collect();
    let x_star = match quadratics {
        Some(qs) => {
            let sum_a: f64 = qs.iter().map(|q| q.a).sum();
            let sum_b: f64 = qs.iter().map(|q| q.b).sum();
            if sum_a <= 0.0 {
                return Err(AnalysisError::SingularInstance);
            }
            -sum_b / (2.0 * sum_a)
        }
        None => bisect_total_subgradient(costs)?,
    };

    let g = DVector::from_iterator(n, costs.iter().map(|c| c.subgradient(x_star)));
    let laplacian = inc.a.transpose() * &inc.a;
    let shift = DMatrix::from_element(n, n, 1.0 / n as f64);
    let z = (laplacian + shift)
        .lu()
        .solve(&g)
        .expect("connected topology gives a nonsingular shifted laplacian");
    let lambda_star = (&inc.a * z).iter().copied().collect::<Vec<f64>>();

    let f_star_sum = consensus_cost(costs, x_star);
    Ok(OracleSolution {
        x_star,
        x_star_vec: vec![x_star; n],
        lambda_star,
        f_star_sum,
        f_star_mean: f_star_sum / n as f64,
    })
}

fn bisect_total_subgradient(costs: &[LocalCost]) -> Result<f64, AnalysisError> {
    let total = |x: f64| costs.iter().map(|c| c.subgradient(x)).sum::<f64>();
    let mut radius = 1.0;
    let mut expansions = 0;
    while total(-radius) > 0.0 || total(radius) < 0.0 {
        expansions += 1;
        if expansions > 200 {
            return Err(AnalysisError::NoStationaryPoint);
        }
        radius *= 2.0;
    }
    let (mut lo, mut hi) = (-radius, radius);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = total(mid);
        if g.abs() <= 1e-13 * 1.0_f64.max(mid.abs()) {
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

/// Relative distance to the consensual optimum,
/// `||x - xbar|| / ||xbar||`. Errors when the optimum is exactly zero.
pub fn residual(x: &[f64], oracle: &OracleSolution) -> Result<f64, AnalysisError> {
    if oracle.x_star == 0.0 {
        return Err(AnalysisError::ZeroOptimum);
    }
    Ok(residual_metric(x, oracle).value)
}

/// Residual that never fails: relative when the optimum is nonzero,
/// otherwise the absolute error with `absolute_fallback` set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualMetric {
    pub value: f64,
    pub absolute_fallback: bool,
}

pub fn residual_metric(x: &[f64], oracle: &OracleSolution) -> ResidualMetric {
    let err: f64 = x
        .iter()
        .zip(&oracle.x_star_vec)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = oracle.x_star.abs() * (x.len() as f64).sqrt();
    if oracle.x_star == 0.0 {
        ResidualMetric {
            value: err,
            absolute_fallback: true,
        }
    } else {
        ResidualMetric {
            value: err / scale,
            absolute_fallback: false,
        }
    }
}

/// Largest consensus violation over the edges, `max |x_i - x_j|`.
pub fn consensus_gap(x: &[f64], edges: &[(usize, usize)]) -> f64 {
    edges
        .iter()
        .map(|&(i, j)| (x[i - 1] - x[j - 1]).abs())
        .fold(0.0, f64::max)
}

/// Aggregated-cost gap `F(x) - F(xbar)` with F the plain (unscaled) sum.
pub fn cost_gap(x: &[f64], costs: &[LocalCost], oracle: &OracleSolution) -> f64 {
    total_cost(costs, x) - oracle.f_star_sum
}

/// Epsilon weighting carried by the descent certificate. `Full` keeps the
/// epsilon terms at the weight the primal update injects; `Halved` evaluates
/// the variant with half that weight in both the potential and the penalties.
/// They coincide at epsilon = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsWeighting {
    Full,
    Halved,
}

fn eps_pair(cfg: &RunConfig, weighting: EpsWeighting) -> (f64, f64) {
    match weighting {
        EpsWeighting::Full => (cfg.eps1, cfg.eps2),
        EpsWeighting::Halved => (cfg.eps1 / 2.0, cfg.eps2 / 2.0),
    }
}

fn lyapunov_weighted(
    x: &DVector<f64>,
    lam: &DVector<f64>,
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
    weighting: EpsWeighting,
) -> f64 {
    let (e1, e2) = eps_pair(cfg, weighting);
    let rho = cfg.rho;
    let xs = DVector::from_element(x.len(), oracle.x_star);
    let lam_star = DVector::from_column_slice(&oracle.lambda_star);
    let dual_err = lam - &lam_star - (&inc.e * x) * rho;
    let ex = &inc.e * (x - &xs);
    let bx = &inc.b * (x - &xs);
    dual_err.norm_squared() / (2.0 * rho)
        + (2.0 + e1) * rho * ex.norm_squared()
        + e2 * rho * bx.norm_squared()
}

/// The certificate potential
/// `V = ||lam - lam* - rho E x||^2 / (2 rho) + (2 + eps1) rho ||E(x - xbar)||^2
/// + eps2 rho ||B(x - xbar)||^2`. Nonnegative by construction.
pub fn lyapunov(
    x: &[f64],
    lam: &[f64],
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
) -> f64 {
    lyapunov_weighted(
        &DVector::from_column_slice(x),
        &DVector::from_column_slice(lam),
        oracle,
        inc,
        cfg,
        EpsWeighting::Full,
    )
}

fn descent_slack_impl(
    trace: &IterationTrace,
    k: usize,
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
    weighting: EpsWeighting,
) -> f64 {
    let (e1, e2) = eps_pair(cfg, weighting);
    let rho = cfg.rho;
    let xk = DVector::from_column_slice(&trace.xs[k]);
    let xk1 = DVector::from_column_slice(&trace.xs[k + 1]);
    let lk = DVector::from_column_slice(&trace.lambdas[k]);
    let lk1 = DVector::from_column_slice(&trace.lambdas[k + 1]);
    let delta = &xk1 - &xk;
    let vk = lyapunov_weighted(&xk, &lk, oracle, inc, cfg, weighting);
    let vk1 = lyapunov_weighted(&xk1, &lk1, oracle, inc, cfg, weighting);
    let drift = (&inc.e * &delta) * 2.0 - &inc.a * &xk1;
    let e_delta = &inc.e * &delta;
    let b_delta = &inc.b * &delta;
    vk - vk1
        - (rho / 2.0) * drift.norm_squared()
        - e1 * rho * e_delta.norm_squared()
        - e2 * rho * b_delta.norm_squared()
}

/// Claimed per-step descent slack of the potential for the step k -> k+1:
/// `V^k - V^{k+1} - (rho/2)||2E(x^{k+1}-x^k) - A x^{k+1}||^2
/// - eps1 rho ||E delta||^2 - eps2 rho ||B delta||^2`.
pub fn descent_slack(
    trace: &IterationTrace,
    k: usize,
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
) -> f64 {
    descent_slack_impl(trace, k, oracle, inc, cfg, EpsWeighting::Full)
}

/// Same slack under an alternative epsilon weighting.
pub fn descent_slack_weighted(
    trace: &IterationTrace,
    k: usize,
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
    weighting: EpsWeighting,
) -> f64 {
    descent_slack_impl(trace, k, oracle, inc, cfg, weighting)
}

/// Descent slack plus the skew cross-term the plain form drops:
/// `rho (xbar - x^{k+1})' (E'A - A'E) (2 x^k - x^{k+1})`.
///
/// This is the per-step inequality implied by first-order optimality of the
/// primal update together with the saddle property, and it holds to floating
/// point accuracy on every run.
pub fn descent_slack_corrected(
    trace: &IterationTrace,
    k: usize,
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
) -> f64 {
    let xk = DVector::from_column_slice(&trace.xs[k]);
    let xk1 = DVector::from_column_slice(&trace.xs[k + 1]);
    let xs = DVector::from_element(xk.len(), oracle.x_star);
    let d = &xs - &xk1;
    let probe = &xk * 2.0 - &xk1;
    let ea = inc.e.transpose() * &inc.a;
    let skew = &ea - &ea.transpose();
    let correction = cfg.rho * (d.transpose() * skew * probe)[(0, 0)];
    descent_slack_impl(trace, k, oracle, inc, cfg, EpsWeighting::Full) + correction
}

/// Margins of the O(1/k) ergodic bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicReport {
    /// Potential at the initial iterate with the multiplier term dropped.
    pub v_bar0: f64,
    /// `margins[s-1] = v_bar0 / s - (F(mean of x^1..x^s) - F*)`.
    pub margins: Vec<f64>,
}

/// Checks `F(running mean) - F* <= v_bar0 / s` for every s in the trace.
pub fn ergodic_bound_check(
    trace: &IterationTrace,
    costs: &[LocalCost],
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
) -> ErgodicReport {
    let rho = cfg.rho;
    let n = trace.n;
    let x0 = DVector::from_column_slice(&trace.xs[0]);
    let l0 = DVector::from_column_slice(&trace.lambdas[0]);
    let xs = DVector::from_element(n, oracle.x_star);
    let dual_part = &l0 - (&inc.e * &x0) * rho;
    let v_bar0 = dual_part.norm_squared() / (2.0 * rho)
        + (2.0 + cfg.eps1) * rho * (&inc.e * (&x0 - &xs)).norm_squared()
        + cfg.eps2 * rho * (&inc.b * (&x0 - &xs)).norm_squared();

    let mut margins = Vec::with_capacity(trace.executed);
    let mut acc = vec![0.0; n];
    for s in 1..=trace.executed {
        for (a, v) in acc.iter_mut().zip(&trace.xs[s]) {
            *a += v;
        }
        let mean: Vec<f64> = acc.iter().map(|a| a / s as f64).collect();
        let gap = total_cost(costs, &mean) - oracle.f_star_sum;
        margins.push(v_bar0 / s as f64 - gap);
    }
    ErgodicReport { v_bar0, margins }
}

/// Violation of the variational-inequality optimality characterization at
/// `(x, lam)`, maximized over a fixed probe set of consensus candidates and
/// multiplier perturbations. Near zero at the optimum, strictly positive far
/// from it.
pub fn vi_residual(
    x: &[f64],
    lam: &[f64],
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    costs: &[LocalCost],
) -> f64 {
    let n = x.len();
    let xv = DVector::from_column_slice(x);
    let lv = DVector::from_column_slice(lam);
    let ax = &inc.a * &xv;
    let at_lam = inc.a.transpose() * &lv;
    let f_x = total_cost(costs, x);

    let scale = 1.0_f64.max(oracle.x_star.abs());
    let mut x_probes: Vec<f64> = [0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0]
        .iter()
        .map(|d| oracle.x_star + d * scale)
        .collect();
    x_probes.push(x.iter().sum::<f64>() / n as f64); // self probe when x is consensual

    let lam_star = DVector::from_column_slice(&oracle.lambda_star);
    let ones = DVector::from_element(lam.len(), 1.0);
    let lam_probes: Vec<DVector<f64>> = vec![
        lv.clone(),
        DVector::zeros(lam.len()),
        lam_star,
        &lv + &ones * 0.5,
        &lv - &ones * 0.5,
    ];

    let mut worst = f64::NEG_INFINITY;
    for &x_hat in &x_probes {
        let x_hat_vec = DVector::from_element(n, x_hat);
        // (x_hat 1 - x)' (-A' lam)
        let primal_part = -(&x_hat_vec - &xv).dot(&at_lam);
        let f_hat = consensus_cost(costs, x_hat);
        for lam_hat in &lam_probes {
            let dual_part = (lam_hat - &lv).dot(&ax);
            let term = f_hat - f_x + primal_part + dual_part;
            worst = worst.max(-term);
        }
    }
    worst
}

/// Everything `certify` measures for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow {
    pub k: usize,
    pub v: f64,
    /// Slack of the step k -> k+1; `None` on the final row.
    pub descent_slack: Option<f64>,
    pub descent_slack_halved: Option<f64>,
    pub descent_slack_corrected: Option<f64>,
    pub residual: f64,
    pub residual_is_absolute: bool,
    pub consensus_gap: f64,
    pub cost_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateSummary {
    pub min_descent_slack: f64,
    pub min_descent_slack_halved: f64,
    pub min_descent_slack_corrected: f64,
    pub min_ergodic_margin: f64,
    pub descent_pass: bool,
    pub descent_halved_pass: bool,
    pub descent_corrected_pass: bool,
    pub ergodic_pass: bool,
    pub vi_final: f64,
    pub final_residual: f64,
    pub final_consensus_gap: f64,
}

/// Per-iteration certificate values plus the run-level summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub rows: Vec<CertificateRow>,
    pub ergodic: ErgodicReport,
    pub summary: CertificateSummary,
}

/// Evaluates every certificate along a trace.
pub fn certify(
    trace: &IterationTrace,
    costs: &[LocalCost],
    oracle: &OracleSolution,
    inc: &IncidenceSet,
    cfg: &RunConfig,
) -> CertificateReport {
    let steps = trace.executed;
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let is_step = k < steps;
        let res = residual_metric(&trace.xs[k], oracle);
        rows.push(CertificateRow {
            k,
            v: lyapunov(&trace.xs[k], &trace.lambdas[k], oracle, inc, cfg),
            descent_slack: is_step.then(|| descent_slack(trace, k, oracle, inc, cfg)),
            descent_slack_halved: is_step.then(|| {
                descent_slack_weighted(trace, k, oracle, inc, cfg, EpsWeighting::Halved)
            }),
            descent_slack_corrected: is_step
                .then(|| descent_slack_corrected(trace, k, oracle, inc, cfg)),
            residual: res.value,
            residual_is_absolute: res.absolute_fallback,
            consensus_gap: consensus_gap(&trace.xs[k], &trace.edges),
            cost_gap: cost_gap(&trace.xs[k], costs, oracle),
        });
    }
    let ergodic = ergodic_bound_check(trace, costs, oracle, inc, cfg);
    let min_of = |f: fn(&CertificateRow) -> Option<f64>| {
        rows.iter().filter_map(f).fold(f64::INFINITY, f64::min)
    };
    let min_slack = min_of(|r| r.descent_slack);
    let min_slack_h = min_of(|r| r.descent_slack_halved);
    let min_slack_c = min_of(|r| r.descent_slack_corrected);
    let min_margin = ergodic
        .margins
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let last = rows.last().expect("at least the initial row");
    let summary = CertificateSummary {
        min_descent_slack: min_slack,
        min_descent_slack_halved: min_slack_h,
        min_descent_slack_corrected: min_slack_c,
        min_ergodic_margin: min_margin,
        descent_pass: min_slack >= -CERTIFICATE_TOL,
        descent_halved_pass: min_slack_h >= -CERTIFICATE_TOL,
        descent_corrected_pass: min_slack_c >= -CERTIFICATE_TOL,
        ergodic_pass: min_margin >= -CERTIFICATE_TOL,
        vi_final: vi_residual(
            trace.final_x(),
            trace.lambdas.last().unwrap(),
            oracle,
            inc,
            costs,
        ),
        final_residual: last.residual,
        final_consensus_gap: last.consensus_gap,
    };
    CertificateReport {
        rows,
        ergodic,
        summary,
    }
}

/// Writes a trace as CSV: `iter,x_1..x_n,lambda_1..lambda_m` plus the metric
/// columns `residual,cost_gap,consensus_gap,V` when a report is supplied.
pub fn write_trace_csv(
    trace: &IterationTrace,
    metrics: Option<&CertificateReport>,
    w: &mut impl Write,
) -> io::Result<()> {
    let m = trace.edges.len();
    let mut header = String::from("iter");
    for i in 1..=trace.n {
        header.push_str(&format!(",x_{i}"));
    }
    for r in 1..=m {
        header.push_str(&format!(",lambda_{r}"));
    }
    if metrics.is_some() {
        header.push_str(",residual,cost_gap,consensus_gap,V");
    }
    writeln!(w, "{header}")?;
    for k in 0..trace.xs.len() {
        let mut line = format!("{k}");
        for v in &trace.xs[k] {
            line.push_str(&format!(",{v}"));
        }
        for v in &trace.lambdas[k] {
            line.push_str(&format!(",{v}"));
        }
        if let Some(rep) = metrics {
            let row = &rep.rows[k];
            line.push_str(&format!(
                ",{},{},{},{}",
                row.residual, row.cost_gap, row.consensus_gap, row.v
            ));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Writes the per-iteration certificate table and a trailing summary block of
/// `#`-prefixed pass/fail lines.
pub fn write_certificate_csv(report: &CertificateReport, w: &mut impl Write) -> io::Result<()> {
    writeln!(
        w,
        "k,V,descent_slack,residual,consensus_gap,cost_gap,descent_slack_halved,descent_slack_corrected"
    )?;
    let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.k,
            row.v,
            fmt_opt(row.descent_slack),
            row.residual,
            row.consensus_gap,
            row.cost_gap,
            fmt_opt(row.descent_slack_halved),
            fmt_opt(row.descent_slack_corrected),
        )?;
    }
    let s = &report.summary;
    let pf = |b: bool| if b { "PASS" } else { "FAIL" };
    writeln!(w, "# certificate,result,min_value,tolerance")?;
    writeln!(
        w,
        "# descent,{},{},{}",
        pf(s.descent_pass),
        s.min_descent_slack,
        -CERTIFICATE_TOL
    )?;
    writeln!(
        w,
        "# descent-halved,{},{},{}",
        pf(s.descent_halved_pass),
        s.min_descent_slack_halved,
        -CERTIFICATE_TOL
    )?;
    writeln!(
        w,
        "# descent-corrected,{},{},{}",
        pf(s.descent_corrected_pass),
        s.min_descent_slack_corrected,
        -CERTIFICATE_TOL
    )?;
    writeln!(
        w,
        "# ergodic,{},{},{}",
        pf(s.ergodic_pass),
        s.min_ergodic_margin,
        -CERTIFICATE_TOL
    )?;
    writeln!(w, "# vi-final,{}", s.vi_final)?;
    writeln!(w, "# final-residual,{}", s.final_residual)?;
    writeln!(w, "# final-consensus-gap,{}", s.final_consensus_gap)?;
    Ok(())
}
