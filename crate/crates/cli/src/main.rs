//! Experiment runner: executes configured algorithms over one instance,
//! writes plot-ready CSV traces, certificate reports and comparison tables.

mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use concord_core::algorithms::Algorithm;
use concord_core::analysis::{
    certify, residual_metric, solve_centralized, write_certificate_csv, write_trace_csv,
    CertificateReport, OracleSolution,
};
use concord_core::costs::LsInstance;
use concord_core::graph::{build_incidence, IncidenceSet, Topology};
use concord_core::harness::{run, IterationTrace, SimOptions, StopRule};

use config::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "concord",
    about = "Consensus optimization engine: parallel ADMM and baselines over simulated agent networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the output directory from the config file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the instance seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit nonzero when a runtime certificate fails (corrected descent or
    /// ergodic bound).
    #[arg(long, global = true)]
    strict_certificates: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default benchmark configuration to the given path.
    Init { path: PathBuf },
    /// Run every configured algorithm, writing one trace CSV per algorithm
    /// plus a certificate report.
    Run {
        config: PathBuf,
        /// Override the iteration budget from the config file.
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Run all configured algorithms on the identical instance and emit
    /// aligned residual-versus-iteration columns.
    Compare { config: PathBuf },
    /// Run the parallel engine once per epsilon value (eps1 = eps2 = eps) and
    /// tabulate iterations-to-threshold.
    SweepEps {
        config: PathBuf,
        /// Epsilon values to sweep.
        #[arg(long, num_args = 1.., required = true)]
        eps: Vec<f64>,
        /// Residual threshold the iteration count is measured against.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // config problems exit 2, runtime problems exit 1
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

struct Experiment {
    cfg: ExperimentConfig,
    topology: Topology,
    instance: LsInstance,
    incidence: IncidenceSet,
    oracle: OracleSolution,
    out_dir: PathBuf,
}

fn prepare(
    config_path: &PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> anyhow::Result<Experiment> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.instance.seed = Some(seed);
        cfg.instance.replay = None;
    }
    let topology = cfg.graph.build()?;
    let instance = cfg.instance.load(topology.n())?;
    let incidence = build_incidence(&topology);
    let oracle = solve_centralized(&instance.local_costs(), &incidence)
        .map_err(|e| anyhow::anyhow!("oracle failed: {e}"))?;
    let out_dir = out_dir.unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out_dir)?;
    Ok(Experiment {
        cfg,
        topology,
        instance,
        incidence,
        oracle,
        out_dir,
    })
}

impl Experiment {
    fn sim_options(&self) -> SimOptions {
        SimOptions {
            schedule: Default::default(),
            stop: self.cfg.run.stop_tolerance.map(|threshold| StopRule {
                target: self.oracle.x_star_vec.clone(),
                threshold,
            }),
        }
    }

    fn run_algorithm(&self, algorithm: Algorithm) -> anyhow::Result<IterationTrace> {
        let rc = self.cfg.run_config(algorithm);
        Ok(run(
            &rc,
            &self.topology,
            &self.instance.local_costs(),
            &self.sim_options(),
        )?)
    }

    fn certificate_report(&self, algorithm: Algorithm, trace: &IterationTrace) -> CertificateReport {
        certify(
            trace,
            &self.instance.local_costs(),
            &self.oracle,
            &self.incidence,
            &self.cfg.run_config(algorithm),
        )
    }

    fn save_instance(&self) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join("instance.toml");
        fs::write(&path, toml::to_string_pretty(&self.instance)?)?;
        Ok(path)
    }

    fn iterations_to(&self, trace: &IterationTrace, threshold: f64) -> Option<usize> {
        trace
            .xs
            .iter()
            .position(|x| residual_metric(x, &self.oracle).value < threshold)
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Init { path } => {
            fs::write(&path, ExperimentConfig::default_benchmark().to_toml())?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, max_iter } => {
            let mut exp = prepare(&config, cli.out_dir, cli.seed)?;
            if let Some(m) = max_iter {
                exp.cfg.run.max_iter = m;
            }
            cmd_run(&exp, cli.strict_certificates)
        }
        Command::Compare { config } => {
            let exp = prepare(&config, cli.out_dir, cli.seed)?;
            cmd_compare(&exp)
        }
        Command::SweepEps {
            config,
            eps,
            threshold,
        } => {
            if let Some(bad) = eps.iter().find(|e| **e < 0.0) {
                return Err(ConfigError::Invalid(format!("negative eps {bad}")).into());
            }
            let exp = prepare(&config, cli.out_dir, cli.seed)?;
            cmd_sweep_eps(&exp, &eps, threshold)
        }
    }
}

fn cmd_run(exp: &Experiment, strict: bool) -> anyhow::Result<ExitCode> {
    println!(
        "instance: n={} m={} x*={} F*(sum)={} F*(mean)={}",
        exp.topology.n(),
        exp.topology.m(),
        exp.oracle.x_star,
        exp.oracle.f_star_sum,
        exp.oracle.f_star_mean
    );
    if exp.cfg.output.save_instance {
        let path = exp.save_instance()?;
        println!("instance saved to {}", path.display());
    }

    // the certificate report follows the parallel engine when it is
    // configured, otherwise the first ADMM-family algorithm
    let gate_algorithm = exp
        .cfg
        .run
        .algorithms
        .iter()
        .copied()
        .find(|a| *a == Algorithm::ParallelAdmm)
        .or_else(|| {
            exp.cfg
                .run
                .algorithms
                .iter()
                .copied()
                .find(|a| *a != Algorithm::Dsm)
        });

    let mut gate_report: Option<CertificateReport> = None;
    for &algorithm in &exp.cfg.run.algorithms {
        let trace = exp.run_algorithm(algorithm)?;
        let report = exp
            .cfg
            .output
            .certificates
            .then(|| exp.certificate_report(algorithm, &trace));

        let path = exp.out_dir.join(format!("trace_{algorithm}.csv"));
        let mut file = fs::File::create(&path)?;
        write_trace_csv(&trace, report.as_ref(), &mut file)?;

        let res = residual_metric(trace.final_x(), &exp.oracle);
        let f_gap = concord_core::analysis::cost_gap(
            trace.final_x(),
            &exp.instance.local_costs(),
            &exp.oracle,
        );
        println!(
            "{algorithm}: iterations={} final_residual={:.6e}{} F_gap={:.6e} -> {}",
            trace.executed,
            res.value,
            if res.absolute_fallback {
                " (absolute)"
            } else {
                ""
            },
            f_gap,
            path.display()
        );

        if Some(algorithm) == gate_algorithm {
            gate_report = report;
        }
    }

    if let Some(report) = &gate_report {
        let path = exp.out_dir.join("certificates.csv");
        let mut file = fs::File::create(&path)?;
        write_certificate_csv(report, &mut file)?;
        let s = &report.summary;
        println!(
            "certificates: descent={} descent-corrected={} ergodic={} vi_final={:.3e} -> {}",
            if s.descent_pass { "PASS" } else { "FAIL" },
            if s.descent_corrected_pass { "PASS" } else { "FAIL" },
            if s.ergodic_pass { "PASS" } else { "FAIL" },
            s.vi_final,
            path.display()
        );
        if strict && !(s.descent_corrected_pass && s.ergodic_pass) {
            eprintln!("strict mode: certificate failure");
            return Ok(ExitCode::from(1));
        }
    } else if exp.cfg.output.certificates {
        println!("certificates: no ADMM-family run configured, report skipped");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(exp: &Experiment) -> anyhow::Result<ExitCode> {
    let mut traces = Vec::new();
    for &algorithm in &exp.cfg.run.algorithms {
        traces.push((algorithm, exp.run_algorithm(algorithm)?));
    }
    let rows = traces
        .iter()
        .map(|(_, t)| t.xs.len())
        .max()
        .unwrap_or(1);

    let path = exp.out_dir.join("compare.csv");
    let mut file = fs::File::create(&path)?;
    let header: Vec<String> = std::iter::once("iter".to_string())
        .chain(traces.iter().map(|(a, _)| a.to_string()))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for k in 0..rows {
        let mut line = k.to_string();
        for (_, trace) in &traces {
            match trace.xs.get(k) {
                Some(x) => line.push_str(&format!(",{}", residual_metric(x, &exp.oracle).value)),
                None => line.push(','),
            }
        }
        writeln!(file, "{line}")?;
    }

    for (algorithm, trace) in &traces {
        let reached = exp.iterations_to(trace, 1e-4);
        println!(
            "{algorithm}: iterations-to-1e-4 = {}",
            reached.map_or("not reached".into(), |v| v.to_string())
        );
    }
    println!("comparison table -> {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep_eps(exp: &Experiment, eps_values: &[f64], threshold: f64) -> anyhow::Result<ExitCode> {
    let path = exp.out_dir.join("sweep_eps.csv");
    let mut file = fs::File::create(&path)?;
    writeln!(file, "eps,iters_to_{threshold:e}")?;
    for &eps in eps_values {
        let mut cfg = exp.cfg.clone();
        cfg.run.eps1 = eps;
        cfg.run.eps2 = eps;
        let rc = cfg.run_config(Algorithm::ParallelAdmm);
        let trace = run(
            &rc,
            &exp.topology,
            &exp.instance.local_costs(),
            &exp.sim_options(),
        )?;
        let reached = exp.iterations_to(&trace, threshold);
        writeln!(
            file,
            "{eps},{}",
            reached.map_or(String::new(), |v| v.to_string())
        )?;
        println!(
            "eps={eps}: iterations-to-{threshold:e} = {}",
            reached.map_or("not reached".into(), |v| v.to_string())
        );
    }
    println!("sweep table -> {}", path.display());
    Ok(ExitCode::SUCCESS)
}
