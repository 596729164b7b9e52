//! Command-line front end: reproducible experiments over branching
//! mechanisms and their coagulation dynamics, emitting RFC-4180 CSV data
//! and JSON reports. Every run echoes its configuration into the JSON
//! report; outputs are byte-stable for a fixed config and seed regardless
//! of the thread count.
//!
//! Exit codes: 0 pass/ok, 1 fail or error, 2 inconclusive.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use csbp::exponent::{ExactSolver, ExponentFlow, FlowBackend, InitialExponent};
use csbp::gml::MittagLefflerLaw;
use csbp::measures::MeasureView;
use csbp::mechanism::{AtomicMeasure, BranchingMechanism};
use csbp::scaling::{
    check_conditional_limit, check_fundamental_limit, check_process_limit, check_scaling_limit,
    ProcessHarness, ScalingReport, Verdict,
};
use csbp::simulate::{sample_conditional, sample_csbp, sample_weak_solution, CsbpSampler};
use csbp::SelfSimilarFamily;

#[derive(Parser)]
#[command(
    name = "csbp",
    version,
    about = "branching-process and coagulation numerics"
)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed override for stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = library default). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Quadrature tolerance for the exact solver.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structural diagnostics of a mechanism: criticality, extinction
    /// verdict, regular-variation index and a merge-rate table.
    Mechanism,
    /// Tabulate the backward-equation flow: t,q,phi,dq_phi,method.
    Solve,
    /// Tabulate a Mittag-Leffler law: x,cdf,pdf,accuracy_flag.
    Selfsim,
    /// Draw a population ensemble and write its summary.
    Simulate,
    /// Run one of the limit-theorem checks.
    #[command(name = "limit-check")]
    LimitCheck,
    /// Recover the mass distribution function by transform inversion.
    Invert,
}

/// Grid specification: either an explicit list or a range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum GridSpec {
    Explicit(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        spacing: Spacing,
    },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Spacing {
    #[default]
    Log,
    Linear,
}

impl GridSpec {
    fn values(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::Explicit(v) => Ok(v.clone()),
            GridSpec::Range {
                start,
                stop,
                count,
                spacing,
            } => {
                // negated form also rejects NaN endpoints
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if *count < 2 || !(stop > start) {
                    bail!("grid range needs count >= 2 and stop > start");
                }
                let n = *count as f64 - 1.0;
                Ok((0..*count)
                    .map(|i| match spacing {
                        Spacing::Linear => start + (stop - start) * i as f64 / n,
                        Spacing::Log => start * (stop / start).powf(i as f64 / n),
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum InitialSpec {
    Identity,
    Atoms { atoms: Vec<(f64, f64)> },
    Power { rho: f64 },
}

impl InitialSpec {
    fn build(&self) -> Result<InitialExponent> {
        Ok(match self {
            InitialSpec::Identity => InitialExponent::Identity,
            InitialSpec::Atoms { atoms } => {
                InitialExponent::Measure(AtomicMeasure::new(atoms.clone())?)
            }
            InitialSpec::Power { rho } => InitialExponent::Power { rho: *rho },
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
struct FamilySpec {
    beta: f64,
    gamma: f64,
    #[serde(default = "one")]
    rho: f64,
}

fn one() -> f64 {
    1.0
}

/// 17 significant digits, so tables diff cleanly across runs.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut body = String::new();
    body.push_str(header);
    body.push_str("\r\n");
    for row in rows {
        body.push_str(&row.join(","));
        body.push_str("\r\n");
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_report(out: &Path, name: &str, config: &Value, payload: Value) -> Result<()> {
    let report = json!({ "config": config, "report": payload });
    let path = out.join(format!("{name}_report.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Value> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <path> is required for this command"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).context("config is not valid JSON")
}

fn field<'a>(config: &'a Value, name: &str) -> Result<&'a Value> {
    config
        .get(name)
        .ok_or_else(|| anyhow!("config field {name:?} is missing"))
}

fn parse_field<T: serde::de::DeserializeOwned>(config: &Value, name: &str) -> Result<T> {
    serde_json::from_value(field(config, name)?.clone())
        .with_context(|| format!("config field {name:?}"))
}

fn parse_optional<T: serde::de::DeserializeOwned>(config: &Value, name: &str) -> Result<Option<T>> {
    match config.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => Ok(Some(
            serde_json::from_value(v.clone()).with_context(|| format!("config field {name:?}"))?,
        )),
    }
}

fn mechanism_from(config: &Value) -> Result<BranchingMechanism> {
    let spec = field(config, "mechanism")?;
    BranchingMechanism::from_json(&spec.to_string()).map_err(Into::into)
}

/// Either a closed-form family or a mechanism-backed harness.
fn harness_from(config: &Value, quad_tol: f64) -> Result<ProcessHarness> {
    if let Some(fam) = parse_optional::<FamilySpec>(config, "family")? {
        Ok(ProcessHarness::from_family(SelfSimilarFamily::new(
            fam.beta, fam.gamma, fam.rho,
        )?)?)
    } else {
        Ok(ProcessHarness::from_mechanism(
            mechanism_from(config)?,
            quad_tol,
        )?)
    }
}

fn cmd_mechanism(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let mech = mechanism_from(config)?;
    let probe = parse_optional::<f64>(config, "grey_probe")?.unwrap_or(1.0);
    let grey = mech.greys_check(probe, cli.tol)?;
    let rv_grid: Vec<f64> = (0..=28)
        .map(|i| 0.1 * 10f64.powf(-(i as f64) * 0.25))
        .collect();
    let gamma_hat = mech.rv_index(&rv_grid, 0.05).ok();
    let rate_rho = parse_optional::<Vec<f64>>(config, "rate_rho")?.unwrap_or(vec![0.5, 1.0, 2.0]);
    let k_max = parse_optional::<u32>(config, "rate_k_max")?.unwrap_or(6);
    let mut rates = Vec::new();
    for &rho in &rate_rho {
        for k in 2..=k_max {
            rates.push(json!({"rho": rho, "k": k, "rate": mech.merge_rate(rho, k)?}));
        }
    }
    write_report(
        &cli.out,
        "mechanism",
        config,
        json!({
            "criticality": mech.criticality(),
            "grey": grey,
            "gamma_hat": gamma_hat,
            "rates": rates,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let mech = mechanism_from(config)?;
    let initial = parse_optional::<InitialSpec>(config, "initial")?
        .map(|s| s.build())
        .transpose()?
        .unwrap_or(InitialExponent::Identity);
    let method: String =
        parse_optional::<String>(config, "method")?.unwrap_or_else(|| "closed".into());
    let t_grid = parse_field::<GridSpec>(config, "t_grid")?.values()?;
    let q_grid = parse_field::<GridSpec>(config, "q_grid")?.values()?;
    let backend = match method.as_str() {
        "closed" => FlowBackend::Exact(ExactSolver::build(mech, cli.tol)?),
        "euler" => FlowBackend::Euler {
            mech,
            steps: parse_optional::<u32>(config, "euler_steps")?.unwrap_or(10_000),
        },
        other => bail!("method must be \"closed\" or \"euler\", got {other:?}"),
    };
    let flow = ExponentFlow::new(backend, initial);
    let mut rows = Vec::new();
    for &t in &t_grid {
        for &q in &q_grid {
            rows.push(vec![
                fmt(t),
                fmt(q),
                fmt(flow.phi(t, q)?),
                fmt(flow.mass_transform(t, q)?),
                method.clone(),
            ]);
        }
    }
    write_csv(&cli.out.join("solve.csv"), "t,q,phi,dq_phi,method", &rows)?;
    write_report(
        &cli.out,
        "solve",
        config,
        json!({"rows": rows.len(), "method": method, "csv": "solve.csv"}),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfsim(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let gamma: f64 = parse_field(config, "gamma")?;
    let rho: f64 = parse_optional(config, "rho")?.unwrap_or(1.0);
    let scale: f64 = parse_optional(config, "scale")?.unwrap_or(1.0);
    let law = MittagLefflerLaw::new(gamma, rho, scale)?;
    let x_grid = parse_field::<GridSpec>(config, "x_grid")?.values()?;
    let mut rows = Vec::new();
    for &x in &x_grid {
        let (cdf, cdf_flag) = law.cdf_flagged(x);
        let (pdf, pdf_flag) = if x > 0.0 {
            law.pdf_flagged(x)?
        } else {
            (0.0, cdf_flag)
        };
        // report the weaker of the two flags
        let flag = if matches!(pdf_flag, csbp::AccuracyFlag::Asymptotic)
            || matches!(cdf_flag, csbp::AccuracyFlag::Asymptotic)
        {
            "asymptotic"
        } else if matches!(pdf_flag, csbp::AccuracyFlag::Series)
            || matches!(cdf_flag, csbp::AccuracyFlag::Series)
        {
            "series"
        } else {
            "exact"
        };
        rows.push(vec![fmt(x), fmt(cdf), fmt(pdf), flag.to_string()]);
    }
    write_csv(
        &cli.out.join("selfsim.csv"),
        "x,cdf,pdf,accuracy_flag",
        &rows,
    )?;
    write_report(
        &cli.out,
        "selfsim",
        config,
        json!({"gamma": gamma, "rho": rho, "scale": scale, "rows": rows.len(), "csv": "selfsim.csv"}),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let t: f64 = parse_field(config, "t")?;
    let x: f64 = parse_optional(config, "x")?.unwrap_or(1.0);
    let n: usize = parse_field(config, "n")?;
    let seed = cli
        .seed
        .or(parse_optional::<u64>(config, "seed")?)
        .unwrap_or(0);
    let conditional: bool = parse_optional(config, "conditional")?.unwrap_or(false);
    let raw_csv: bool = parse_optional(config, "raw_csv")?.unwrap_or(false);
    let sampler = if let Some(fam) = parse_optional::<FamilySpec>(config, "family")? {
        CsbpSampler::for_family(&SelfSimilarFamily::new(fam.beta, fam.gamma, fam.rho)?, t)?
    } else {
        CsbpSampler::for_mechanism(&mechanism_from(config)?, t, cli.tol)?
    };
    let weak_initial = parse_optional::<Vec<(f64, f64)>>(config, "weak_initial")?;
    let payload = if let Some(atoms) = weak_initial {
        let nu0 = AtomicMeasure::new(atoms)?;
        let out = sample_weak_solution(&sampler, &nu0, n, seed)?;
        if raw_csv {
            let rows: Vec<Vec<String>> = out.samples.iter().map(|&z| vec![fmt(z)]).collect();
            write_csv(&cli.out.join("samples.csv"), "sample", &rows)?;
        }
        json!({
            "kind": "weak_solution",
            "n": n,
            "seed": seed,
            "acceptance_rate": out.acceptance_rate,
            "low_acceptance": out.low_acceptance,
            "mean": out.samples.iter().sum::<f64>() / n as f64,
        })
    } else {
        let ensemble = if conditional {
            sample_conditional(&sampler, x, n, seed)?
        } else {
            sample_csbp(&sampler, x, n, seed)?
        };
        if raw_csv {
            let rows: Vec<Vec<String>> = ensemble.samples.iter().map(|&z| vec![fmt(z)]).collect();
            write_csv(&cli.out.join("samples.csv"), "sample", &rows)?;
        }
        json!({
            "kind": if conditional { "conditional" } else { "population" },
            "jumps_exact": sampler.jumps_exact(),
            "summary": ensemble.summary(),
        })
    };
    write_report(&cli.out, "simulate", config, payload)?;
    Ok(ExitCode::SUCCESS)
}

fn verdict_exit(v: Verdict) -> ExitCode {
    match v {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
        Verdict::Inconclusive => ExitCode::from(2),
    }
}

fn cmd_limit_check(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let check: String = parse_field(config, "check")?;
    let harness = harness_from(config, cli.tol)?;
    let tolerance: f64 = parse_optional(config, "tolerance")?.unwrap_or(0.01);
    let default_q: Vec<f64> = (0..=12)
        .map(|i| 0.1 * 100f64.powf(i as f64 / 12.0))
        .collect();
    let grid_or = |name: &str, fallback: Vec<f64>| -> Result<Vec<f64>> {
        Ok(match parse_optional::<GridSpec>(config, name)? {
            Some(g) => g.values()?,
            None => fallback,
        })
    };
    let report: ScalingReport = match check.as_str() {
        "scaling_limit" => {
            let initial = parse_optional::<InitialSpec>(config, "initial")?
                .map(|s| s.build())
                .transpose()?
                .unwrap_or(InitialExponent::Measure(AtomicMeasure::dirac(1.0)?));
            let t0: f64 = parse_optional(config, "t0")?.unwrap_or(1.0);
            let s_grid = grid_or("s_grid", vec![100.0, 1000.0, 10_000.0])?;
            let q_grid = grid_or("q_grid", default_q)?;
            let t_factors =
                parse_optional::<Vec<f64>>(config, "t_factors")?.unwrap_or(vec![0.5, 1.0, 2.0]);
            check_scaling_limit(&harness, &initial, t0, &s_grid, &q_grid, &t_factors, tolerance)?
        }
        "fundamental_limit" => {
            let t_grid = grid_or("t_grid", vec![10.0, 100.0, 1000.0])?;
            let q_grid = grid_or("q_grid", default_q)?;
            check_fundamental_limit(&harness, &t_grid, &q_grid, tolerance)?
        }
        "conditional_limit" => {
            let x: f64 = parse_optional(config, "x")?.unwrap_or(1.0);
            let t_grid = grid_or("t_grid", vec![10.0, 100.0])?;
            let n: usize = parse_optional(config, "n")?.unwrap_or(100_000);
            let seed = cli.seed.or(parse_optional::<u64>(config, "seed")?).unwrap_or(1);
            let threshold: f64 = parse_optional(config, "threshold")?.unwrap_or(0.02);
            check_conditional_limit(&harness, x, &t_grid, n, seed, threshold)?
        }
        "process_limit" => {
            let t: f64 = parse_optional(config, "t")?.unwrap_or(2.0);
            let s_grid = grid_or("s_grid", vec![100.0, 1000.0, 10_000.0])?;
            let q_grid = grid_or("q_grid", default_q)?;
            check_process_limit(&harness, t, &s_grid, &q_grid, tolerance)?
        }
        other => bail!(
            "check must be one of scaling_limit, fundamental_limit, conditional_limit, process_limit; got {other:?}"
        ),
    };
    let verdict = report.verdict;
    write_report(
        &cli.out,
        "limit_check",
        config,
        serde_json::to_value(&report)?,
    )?;
    Ok(verdict_exit(verdict))
}

fn cmd_invert(cli: &Cli, config: &Value) -> Result<ExitCode> {
    let t: f64 = parse_field(config, "t")?;
    let initial = parse_optional::<InitialSpec>(config, "initial")?
        .map(|s| s.build())
        .transpose()?
        .unwrap_or(InitialExponent::Identity);
    let backend = if let Some(fam) = parse_optional::<FamilySpec>(config, "family")? {
        FlowBackend::ClosedForm(SelfSimilarFamily::new(fam.beta, fam.gamma, fam.rho)?)
    } else {
        FlowBackend::Exact(ExactSolver::build(mechanism_from(config)?, cli.tol)?)
    };
    let order: u32 = parse_optional(config, "order")?.unwrap_or(14);
    let view = MeasureView::new(ExponentFlow::new(backend, initial), t, order)?;
    let x_grid = parse_field::<GridSpec>(config, "x_grid")?.values()?;
    let points = view.mass_cdf(&x_grid)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let flag = match p.flag {
                csbp::InversionFlag::Stable => "stable",
                csbp::InversionFlag::Unstable => "unstable",
            };
            vec![fmt(p.x), fmt(p.mass_cdf), flag.to_string()]
        })
        .collect();
    write_csv(&cli.out.join("invert.csv"), "x,mass_cdf,flag", &rows)?;
    let (total, first_moment) = view.number_and_mass();
    let diag = match parse_optional::<(f64, f64)>(config, "tail_window")? {
        Some((lo, hi)) => {
            let report = view.tail_index(lo, hi)?;
            json!({
                "total": total,
                "first_moment": first_moment,
                "rho_hat": report.rho_hat,
                "estimator_spread": report.spread,
                "conclusive": report.conclusive,
            })
        }
        None => json!({
            "total": total,
            "first_moment": first_moment,
            "rho_hat": Value::Null,
            "estimator_spread": Value::Null,
        }),
    };
    write_report(&cli.out, "invert", config, diag)?;
    Ok(ExitCode::SUCCESS)
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("thread pool already initialized")?;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let config = load_config(&cli)?;
    match cli.command {
        Command::Mechanism => cmd_mechanism(&cli, &config),
        Command::Solve => cmd_solve(&cli, &config),
        Command::Selfsim => cmd_selfsim(&cli, &config),
        Command::Simulate => cmd_simulate(&cli, &config),
        Command::LimitCheck => cmd_limit_check(&cli, &config),
        Command::Invert => cmd_invert(&cli, &config),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
