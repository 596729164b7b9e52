//! Runs the four limit checks for the quadratic mechanism and prints the
//! verdicts; a quick smoke survey of the harness.

use csbp::exponent::InitialExponent;
use csbp::mechanism::AtomicMeasure;
use csbp::scaling::{
    check_conditional_limit, check_fundamental_limit, check_process_limit, check_scaling_limit,
    ProcessHarness,
};
use csbp::SelfSimilarFamily;

fn main() -> csbp::Result<()> {
    let harness = ProcessHarness::from_family(SelfSimilarFamily::new(1.0, 2.0, 1.0)?)?;
    let q_grid: Vec<f64> = (0..=12)
        .map(|i| 0.1 * 100f64.powf(i as f64 / 12.0))
        .collect();
    let s_grid = [100.0, 1000.0, 10_000.0];

    let scaling = check_scaling_limit(
        &harness,
        &InitialExponent::Measure(AtomicMeasure::dirac(1.0)?),
        1.0,
        &s_grid,
        &q_grid,
        &[0.5, 1.0, 2.0],
        0.01,
    )?;
    let fundamental = check_fundamental_limit(&harness, &[10.0, 100.0, 1000.0], &q_grid, 1e-8)?;
    let conditional = check_conditional_limit(&harness, 1.0, &[10.0, 100.0], 50_000, 7, 0.02)?;
    let process = check_process_limit(&harness, 2.0, &s_grid, &q_grid, 0.01)?;

    for report in [&scaling, &fundamental, &conditional, &process] {
        println!(
            "{:?}: {:?} (final error {:.3e}, fitted gamma {:.3})",
            report.theorem,
            report.verdict,
            report.sup_error.last().unwrap(),
            report.fitted.gamma,
        );
    }
    Ok(())
}
