//! Side-by-side comparison of runs against a baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::spec::Algorithm;
use super::RunManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComparisonRow {
    pub label: String,
    pub iterations: usize,
    /// Baseline iterations divided by this run's iterations.
    pub speedup: f64,
    pub final_objective: f64,
    pub predicted_rate: Option<f64>,
    pub observed_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

/// Compares runs against the first one. All runs must share the algorithm
/// and the data seed.
pub fn compare_runs(manifests: &[RunManifest]) -> Result<Comparison> {
    let base = manifests
        .first()
        .ok_or_else(|| Error::Incomparable("no runs given".into()))?;
    let (algorithm, seed) = (base.spec.algorithm, base.spec.data_spec.seed);
    for m in &manifests[1..] {
        if m.spec.algorithm != algorithm {
            return Err(Error::Incomparable(format!(
                "`{}` is {} but the baseline is {}",
                m.spec.label(),
                m.spec.algorithm,
                algorithm
            )));
        }
        if m.spec.data_spec.seed != seed {
            return Err(Error::Incomparable(format!(
                "`{}` uses data seed {} but the baseline uses {}",
                m.spec.label(),
                m.spec.data_spec.seed,
                seed
            )));
        }
    }
    let rows = manifests
        .iter()
        .map(|m| ComparisonRow {
            label: m.spec.label(),
            iterations: m.iterations,
            speedup: base.iterations as f64 / m.iterations.max(1) as f64,
            final_objective: m.final_objective,
            predicted_rate: m.predicted_rate,
            observed_rate: m.observed_rate,
        })
        .collect();
    Ok(Comparison { algorithm, seed, rows })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = String::from("label,iterations,speedup,final_objective,predicted_rate,observed_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.label.replace(',', ";"),
                r.iterations,
                r.speedup,
                r.final_objective,
                opt(r.predicted_rate),
                opt(r.observed_rate)
            );
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:width$}  {:>10}  {:>8}  {:>22}  {:>9}  {:>9}\n",
            "run", "iterations", "speedup", "final objective", "predicted", "observed"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:width$}  {:>10}  {:>8.2}  {:>22}  {:>9}  {:>9}",
                r.label,
                r.iterations,
                r.speedup,
                r.final_objective,
                opt(r.predicted_rate),
                opt(r.observed_rate)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::spec::{DataSpec, ExperimentSpec, Preprocessing};
    use crate::optimizer::RunStatus;

    fn manifest(algorithm: Algorithm, seed: u64, iterations: usize) -> RunManifest {
        let spec = ExperimentSpec::new(
            algorithm,
            DataSpec {
                seed,
                ..DataSpec::default()
            },
        )
        .with_preprocessing(&[Preprocessing::None]);
        RunManifest {
            spec,
            version: "0".into(),
            wall_clock_seconds: 0.0,
            status: RunStatus::Converged,
            iterations,
            final_objective: -1.0,
            predicted_rate: Some(0.5),
            observed_rate: None,
            files: Vec::new(),
            dir: Default::default(),
        }
    }

    #[test]
    fn self_comparison_is_unit_speedup() {
        let m = manifest(Algorithm::Nmf, 3, 40);
        let c = compare_runs(&[m.clone(), m]).unwrap();
        assert!(c.rows.iter().all(|r| r.speedup == 1.0));
    }

    #[test]
    fn speedup_is_relative_to_first() {
        let c = compare_runs(&[manifest(Algorithm::Nmf, 3, 120), manifest(Algorithm::Nmf, 3, 10)]).unwrap();
        assert_eq!(c.rows[1].speedup, 12.0);
        assert!(c.to_csv().lines().nth(2).unwrap().starts_with("nmf,10,12,"));
        assert!(c.to_table().contains("12.00"));
    }

    #[test]
    fn mismatched_runs_are_incomparable() {
        let a = manifest(Algorithm::Nmf, 3, 10);
        for other in [manifest(Algorithm::Nmf, 4, 10), manifest(Algorithm::Cccp, 3, 10)] {
            assert!(matches!(compare_runs(&[a.clone(), other]), Err(Error::Incomparable(_))));
        }
        assert!(compare_runs(&[]).is_err());
    }
}
