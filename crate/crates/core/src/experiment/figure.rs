//! Plot-ready CSV data: the likelihood surface with direction arrows for a
//! two-mean mixture, and aligned learning curves.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::run::mog_data;
use super::spec::{Algorithm, ExperimentSpec};
use super::RunManifest;
use crate::diagnostics::{chart_hessian, newton_direction};
use crate::em::{MogMeansEm, MogParams};
use crate::error::{Error, Result};
use crate::numerics::{cosine, norm, sub};
use crate::optimizer::{run_recording, IterationMap, LearningCurve, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureKind {
    Fig1Quiver,
    Fig2Curves,
    Fig3Curves,
    Fig4Curves,
}

impl FigureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FigureKind::Fig1Quiver => "fig1-quiver",
            FigureKind::Fig2Curves => "fig2-curves",
            FigureKind::Fig3Curves => "fig3-curves",
            FigureKind::Fig4Curves => "fig4-curves",
        }
    }

    /// Whether runs of `algorithm` belong in this figure.
    pub fn accepts(self, algorithm: Algorithm) -> bool {
        match self {
            FigureKind::Fig1Quiver => algorithm == Algorithm::EmMog,
            FigureKind::Fig2Curves => matches!(algorithm, Algorithm::EmMog | Algorithm::EmHmm),
            FigureKind::Fig3Curves => matches!(
                algorithm,
                Algorithm::GisMaxent | Algorithm::GisLogistic | Algorithm::Nmf
            ),
            FigureKind::Fig4Curves => algorithm == Algorithm::Cccp,
        }
    }
}

impl fmt::Display for FigureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FigureKind::Fig1Quiver,
            FigureKind::Fig2Curves,
            FigureKind::Fig3Curves,
            FigureKind::Fig4Curves,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::config("kind", format!("unknown figure `{s}`")))
    }
}

/// Grid resolution and number of arrows for the surface plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuiverSettings {
    pub grid: usize,
    pub samples: usize,
}

impl Default for QuiverSettings {
    fn default() -> Self {
        Self { grid: 101, samples: 12 }
    }
}

/// Unit directions at one iterate of the means-only EM trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub iter: usize,
    pub at: [f64; 2],
    pub step: [f64; 2],
    pub grad: [f64; 2],
    pub newton: Option<[f64; 2]>,
    /// `ln ‖∇L‖`.
    pub grad_log_norm: f64,
    pub cos_step_newton: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuiverData {
    /// Shared coordinate axis for both means.
    pub axis: Vec<f64>,
    /// `loglik[(i, j)] = L(axis[i], axis[j])`.
    pub loglik: DMatrix<f64>,
    pub arrows: Vec<Arrow>,
}

fn unit(v: &[f64]) -> [f64; 2] {
    let n = norm(v);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Log-likelihood of a two-component, one-dimensional mixture over a grid
/// of the two means, with equal weights and unit variances, plus direction
/// arrows along the EM trajectory from a lopsided start.
pub fn fig1_quiver(spec: &ExperimentSpec, settings: QuiverSettings) -> Result<QuiverData> {
    if spec.algorithm != Algorithm::EmMog {
        return Err(Error::config(
            "algorithm",
            format!("fig1-quiver needs em-mog runs, got {}", spec.algorithm),
        ));
    }
    if spec.data_spec.components.is_some_and(|m| m != 2) {
        return Err(Error::config(
            "dataSpec.components",
            "fig1-quiver plots two-component mixtures",
        ));
    }
    if settings.grid < 2 || settings.samples == 0 {
        return Err(Error::config("grid", "need at least a 2x2 grid and one arrow"));
    }
    let data = mog_data(spec)?;
    if data.dim() != 1 {
        return Err(Error::config("dataSpec.d", "fig1-quiver plots one-dimensional data"));
    }
    let fixed = MogParams {
        weights: vec![0.5, 0.5],
        means: vec![vec![0.0], vec![0.0]],
        covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
    };
    let mut sorted = data.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0] - 0.5, sorted[sorted.len() - 1] + 0.5);
    let map = MogMeansEm::new(data, fixed)?;

    let axis: Vec<f64> = (0..settings.grid)
        .map(|i| lo + (hi - lo) * i as f64 / (settings.grid - 1) as f64)
        .collect();
    let mut loglik = DMatrix::zeros(settings.grid, settings.grid);
    for (i, a) in axis.iter().enumerate() {
        for (j, b) in axis.iter().enumerate() {
            loglik[(i, j)] = map.log_lik(&[*a, *b])?;
        }
    }

    let init = map.pack(&[quantile(&sorted, 0.05), quantile(&sorted, 0.15)])?;
    let (_, trajectory) = run_recording(&map, &init, &StopRule::new(1e-12, 1000)?)?;
    let last = trajectory.len().saturating_sub(2);
    let mut picks: Vec<usize> = (0..settings.samples)
        .map(|k| {
            if settings.samples == 1 {
                0
            } else {
                (k as f64 * last as f64 / (settings.samples - 1) as f64).round() as usize
            }
        })
        .collect();
    picks.dedup();
    let mut arrows = Vec::with_capacity(picks.len());
    for i in picks {
        let theta = &trajectory[i];
        let grad = map.gradient(theta)?;
        let step = sub(&map.step(theta)?.values, &theta.values);
        let newton = newton_direction(&chart_hessian(&map, theta)?, &grad)?;
        arrows.push(Arrow {
            iter: i,
            at: [theta.values[0], theta.values[1]],
            step: unit(&step),
            grad: unit(&grad),
            newton: newton.as_deref().map(unit),
            grad_log_norm: norm(&grad).ln(),
            cos_step_newton: newton.as_ref().and_then(|n| cosine(&step, n)),
        });
    }
    Ok(QuiverData { axis, loglik, arrows })
}

impl QuiverData {
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("mu1,mu2,loglik\n");
        for (i, a) in self.axis.iter().enumerate() {
            for (j, b) in self.axis.iter().enumerate() {
                let _ = writeln!(out, "{a},{b},{}", self.loglik[(i, j)]);
            }
        }
        out
    }

    pub fn arrows_csv(&self) -> String {
        let mut out =
            String::from("iter,mu1,mu2,step_x,step_y,grad_x,grad_y,newton_x,newton_y,grad_log_norm,cos_step_newton\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for a in &self.arrows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                a.iter,
                a.at[0],
                a.at[1],
                a.step[0],
                a.step[1],
                a.grad[0],
                a.grad[1],
                opt(a.newton.map(|n| n[0])),
                opt(a.newton.map(|n| n[1])),
                a.grad_log_norm,
                opt(a.cos_step_newton)
            );
        }
        out
    }
}

/// Learning curves shifted so each run's final objective is zero, one
/// column per run, in the problem's own sign. Cells past the end of a
/// shorter run are empty.
pub fn aligned_curves(runs: &[(String, LearningCurve)]) -> String {
    let mut labels: Vec<String> = Vec::with_capacity(runs.len());
    for (label, _) in runs {
        let clean = label.replace(',', ";");
        let dupes = labels
            .iter()
            .filter(|l| l.split('#').next() == Some(clean.as_str()))
            .count();
        labels.push(if dupes == 0 { clean } else { format!("{clean}#{dupes}") });
    }
    let columns: Vec<Vec<f64>> = runs
        .iter()
        .map(|(_, c)| {
            let values = c.display_objectives();
            let last = values.last().copied().unwrap_or(0.0);
            values.iter().map(|v| v - last).collect()
        })
        .collect();
    let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = format!("iter,{}\n", labels.join(","));
    for i in 0..rows {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| c.get(i).map_or_else(String::new, |v| v.to_string()))
            .collect();
        let _ = writeln!(out, "{i},{}", cells.join(","));
    }
    out
}

/// Writes the plot data for `kind` from the given runs into `out_dir`;
/// returns the written files.
pub fn emit_figure_data(kind: FigureKind, manifests: &[RunManifest], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if manifests.is_empty() {
        return Err(Error::config("runs", format!("{kind} needs at least one run")));
    }
    for m in manifests {
        if !kind.accepts(m.spec.algorithm) {
            return Err(Error::config(
                "kind",
                format!("{kind} does not plot {} runs (`{}`)", m.spec.algorithm, m.spec.label()),
            ));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    match kind {
        FigureKind::Fig1Quiver => {
            let mut written = Vec::new();
            for (k, m) in manifests.iter().enumerate() {
                let data = fig1_quiver(&m.spec, QuiverSettings::default())?;
                let stem = if manifests.len() == 1 {
                    "fig1".to_string()
                } else {
                    format!("fig1-{k}")
                };
                let grid = out_dir.join(format!("{stem}-grid.csv"));
                let arrows = out_dir.join(format!("{stem}-arrows.csv"));
                std::fs::write(&grid, data.grid_csv())?;
                std::fs::write(&arrows, data.arrows_csv())?;
                written.extend([grid, arrows]);
            }
            Ok(written)
        }
        _ => {
            let runs = manifests
                .iter()
                .map(|m| Ok((m.spec.label(), m.curve()?)))
                .collect::<Result<Vec<_>>>()?;
            let path = out_dir.join(format!("{kind}.csv"));
            std::fs::write(&path, aligned_curves(&runs))?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::Separation;
    use crate::experiment::spec::DataSpec;
    use crate::optimizer::{CurveRow, Sense};

    fn mog(separation: Separation) -> ExperimentSpec {
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

    #[test]
    fn quiver_near_optimum_follows_newton() {
        let data = fig1_quiver(&mog(Separation::Well), QuiverSettings { grid: 11, samples: 12 }).unwrap();
        assert_eq!(data.loglik.shape(), (11, 11));
        assert_eq!(data.grid_csv().lines().count(), 122);
        let last = data.arrows.last().unwrap();
        assert!(last.cos_step_newton.unwrap() >= 0.99, "{last:?}");
        assert!(data
            .arrows
            .iter()
            .all(|a| (a.step[0].hypot(a.step[1]) - 1.0).abs() < 1e-12));
        assert_eq!(data.arrows_csv().lines().count(), data.arrows.len() + 1);
    }

    #[test]
    fn aligned_curves_end_at_zero() {
        let curve = |objs: &[f64], sense| LearningCurve {
            rows: objs
                .iter()
                .enumerate()
                .map(|(i, o)| CurveRow {
                    iter: i,
                    objective: *o,
                    step_norm: 0.0,
                    grad_norm: 0.0,
                })
                .collect(),
            sense,
        };
        let text = aligned_curves(&[
            ("a".into(), curve(&[-5.0, -3.0, -2.5], Sense::Maximize)),
            ("a".into(), curve(&[-9.0, -4.0], Sense::Minimize)),
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,a,a#1");
        assert_eq!(lines[1], "0,-2.5,5");
        assert_eq!(lines[2], "1,-0.5,0");
        assert_eq!(lines[3], "2,0,");
    }

    #[test]
    fn figure_kinds_parse_and_filter() {
        for k in ["fig1-quiver", "fig2-curves", "fig3-curves", "fig4-curves"] {
            assert_eq!(k.parse::<FigureKind>().unwrap().to_string(), k);
        }
        assert!("fig5".parse::<FigureKind>().unwrap_err().is_config());
        assert!(FigureKind::Fig4Curves.accepts(Algorithm::Cccp));
        assert!(!FigureKind::Fig4Curves.accepts(Algorithm::Nmf));
        assert!(fig1_quiver(
            &ExperimentSpec::new(Algorithm::Nmf, DataSpec::default()),
            QuiverSettings::default()
        )
        .unwrap_err()
        .is_config());
    }
}
