//! Quick end-to-end checks run by `boundopt selftest`.

use serde::{Deserialize, Serialize};

use super::run::execute;
use super::spec::{Algorithm, DataSpec, ExperimentSpec, Preprocessing};
use crate::cccp::{cccp_rate_matrix, quartic_bench};
use crate::diagnostics::estimate_rate_matrix;
use crate::em::Separation;
use crate::error::Result;
use crate::gis::maxent::{random_maxent, solve_maxent};
use crate::gis::{gis_rate_matrix, MaxentMap};
use crate::numerics::fd_gradient;
use crate::optimizer::{IterationMap, MONOTONE_SLACK};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &str, outcome: Result<(bool, String)>) -> Self {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs every check; the whole set takes a few seconds.
pub fn selftest() -> Vec<Check> {
    vec![
        Check::from("cccp rate matrices", cccp_rates()),
        Check::from("gis rate matrix", gis_rate()),
        Check::from("mixture convergence", mixture()),
        Check::from("learning curves monotone", monotone()),
        Check::from("gradient oracle", gradients()),
        Check::from("determinism", determinism()),
    ]
}

fn cccp_rates() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (d, expected) in quartic_bench().iter().zip([0.5, 0.8125, 0.95]) {
        worst = worst.max((cccp_rate_matrix(d, &[1.0])?[(0, 0)] - expected).abs());
    }
    Ok((worst <= 1e-6, format!("largest deviation {worst:.2e}")))
}

fn gis_rate() -> Result<(bool, String)> {
    let model = random_maxent(6, 3, 20.0, false, &mut rng::seeded(11));
    let theta = solve_maxent(&model, &vec![0.0; model.dim()])?;
    let analytic = gis_rate_matrix(&model, &theta)?;
    let map = MaxentMap::new(model)?;
    let active = theta[..theta.len() - 1].to_vec();
    let fd = estimate_rate_matrix(&map, &map.pack(&active)?)?;
    let block = analytic.view((0, 0), (fd.nrows(), fd.ncols())).into_owned();
    let rel = (&block - &fd).norm() / fd.norm().max(1e-300);
    Ok((rel <= 1e-3, format!("relative error {rel:.2e}")))
}

fn mog_spec(separation: Separation) -> ExperimentSpec {
    ExperimentSpec::new(
        Algorithm::EmMog,
        DataSpec {
            separation: Some(separation),
            n: Some(200),
            seed: 7,
            ..DataSpec::default()
        },
    )
}

fn mixture() -> Result<(bool, String)> {
    let rec = execute(&mog_spec(Separation::Well))?;
    let cos = rec
        .report
        .diagnostics
        .as_ref()
        .and_then(|d| d.directions.as_ref())
        .and_then(|d| d.cos_step_newton)
        .unwrap_or(f64::NAN);
    Ok((
        rec.report.iterations <= 25 && cos >= 0.99,
        format!("{} iterations, cos(step, Newton) {cos:.4}", rec.report.iterations),
    ))
}

fn quick_specs() -> Vec<ExperimentSpec> {
    let mut specs = vec![
        mog_spec(Separation::Overlapping),
        ExperimentSpec::new(
            Algorithm::EmHmm,
            DataSpec {
                num_seqs: Some(5),
                len: Some(40),
                seed: 3,
                ..DataSpec::default()
            },
        ),
        ExperimentSpec::new(Algorithm::GisMaxent, DataSpec::default()).with_preprocessing(&[Preprocessing::Translate]),
        ExperimentSpec::new(
            Algorithm::GisLogistic,
            DataSpec {
                n: Some(200),
                offset: Some(3.0),
                ..DataSpec::default()
            },
        )
        .with_preprocessing(&[Preprocessing::Translate]),
        ExperimentSpec::new(
            Algorithm::Nmf,
            DataSpec {
                dim: Some(6),
                count: Some(10),
                rank: Some(2),
                ..DataSpec::default()
            },
        ),
        ExperimentSpec::new(Algorithm::Cccp, DataSpec::default())
            .with_preprocessing(&[Preprocessing::Decomposition("dec2".into())]),
    ];
    for s in &mut specs {
        s.diagnostics = false;
        s.stop.max_iter = 2000;
    }
    specs
}

fn monotone() -> Result<(bool, String)> {
    let mut failures = Vec::new();
    for spec in quick_specs() {
        let rec = execute(&spec)?;
        if let Some(i) = rec.outcome.curve.first_monotonicity_violation(MONOTONE_SLACK) {
            failures.push(format!("{} at iteration {i}", spec.label()));
        }
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            "all runs monotone".into()
        } else {
            failures.join("; ")
        },
    ))
}

fn gradients() -> Result<(bool, String)> {
    let model = random_maxent(5, 2, 1.0, true, &mut rng::seeded(5));
    let map = MaxentMap::new(model)?;
    let theta = map.pack(&[0.3, -0.2])?;
    let analytic = map.gradient(&theta)?;
    let fd = fd_gradient(|x| map.objective(&map.pack(x)?), &theta.values, 1e-6)?;
    let worst = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    Ok((worst <= 1e-6, format!("largest relative deviation {worst:.2e}")))
}

fn determinism() -> Result<(bool, String)> {
    let spec = &quick_specs()[1];
    let a = execute(spec)?.outcome.curve.to_csv();
    let b = execute(spec)?.outcome.curve.to_csv();
    Ok((a == b, format!("{} curve rows", a.lines().count() - 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for check in selftest() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
