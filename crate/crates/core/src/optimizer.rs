//! The bound-optimizer contract and the iteration driver.
//!
//! Every algorithm in the crate is exposed as an [`IterationMap`]: an
//! objective to be maximized, its gradient in the unconstrained chart of the
//! parameter layout, and the map taking one iterate to the next. Minimization
//! problems (NMF, CCCP) are negated on the way in and report [`Sense::Minimize`]
//! so curves can be displayed in their natural sign.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, sub};
use crate::param::ParamVector;

/// Relative slack beyond which a decrease of the objective aborts a run.
pub const ABORT_SLACK: f64 = 1e-9;

/// Absolute slack added to [`ABORT_SLACK`] so objectives at zero can absorb
/// rounding noise.
pub const ABORT_FLOOR: f64 = 1e-12;

/// Relative slack used when auditing monotonicity of recorded curves.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Gradient norm below which the projection audit is vacuous.
pub const PROJECTION_GRAD_FLOOR: f64 = 1e-8;

/// Relative tolerance of the bound-contract probes.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    #[default]
    Maximize,
    Minimize,
}

impl Sense {
    /// Converts an internal (maximized) objective to the problem's own sign.
    pub fn display(self, internal: f64) -> f64 {
        match self {
            Sense::Maximize => internal,
            Sense::Minimize => -internal,
        }
    }
}

/// One bound optimizer: `Θ ↦ argmax_Θ' G(Θ', Θ)`.
pub trait IterationMap {
    fn name(&self) -> &str;

    /// Sign convention of the original problem.
    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    /// Objective to be maximized.
    fn objective(&self, theta: &ParamVector) -> Result<f64>;

    /// Gradient of [`IterationMap::objective`] with respect to the chart
    /// coordinates of `theta` (see [`ParamVector::to_chart`]).
    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>>;

    /// One bound-optimization update.
    fn step(&self, theta: &ParamVector) -> Result<ParamVector>;

    /// The surrogate `G(Θ, Ψ)`, in the maximized sense, so that
    /// `G(Θ, Θ) = L(Θ)` and `L(Θ) >= G(Θ, Ψ)`.
    fn bound_at_pair(&self, _theta: &ParamVector, _psi: &ParamVector) -> Option<Result<f64>> {
        None
    }

    /// Chart directions along which objective and map are invariant.
    fn gauge_directions(&self, _theta: &ParamVector) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

impl<M: IterationMap + ?Sized> IterationMap for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn sense(&self) -> Sense {
        (**self).sense()
    }
    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        (**self).objective(theta)
    }
    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        (**self).gradient(theta)
    }
    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        (**self).step(theta)
    }
    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        (**self).bound_at_pair(theta, psi)
    }
    fn gauge_directions(&self, theta: &ParamVector) -> Vec<Vec<f64>> {
        (**self).gauge_directions(theta)
    }
}

/// The map expressed on chart coordinates: `c ↦ chart(step(unchart(c)))`.
pub fn chart_step<M: IterationMap + ?Sized>(map: &M, template: &ParamVector, chart: &[f64]) -> Result<Vec<f64>> {
    let theta = template.from_chart(chart)?;
    Ok(map.step(&theta)?.to_chart())
}

/// Objective as a function of chart coordinates.
pub fn chart_objective<M: IterationMap + ?Sized>(map: &M, template: &ParamVector, chart: &[f64]) -> Result<f64> {
    map.objective(&template.from_chart(chart)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StopRule {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl StopRule {
    pub fn new(rel_tol: f64, max_iter: usize) -> Result<Self> {
        let rule = Self { rel_tol, max_iter };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::config("stop.relTol", "must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("stop.maxIter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    /// Internal (maximized) objective.
    pub objective: f64,
    pub step_norm: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
    pub sense: Sense,
}

pub const CURVE_HEADER: &str = "iter,objective,step_norm,grad_norm";

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&CurveRow> {
        self.rows.last()
    }

    /// Objective values in the problem's own sign.
    pub fn display_objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| self.sense.display(r.objective)).collect()
    }

    /// Index of the first row violating monotonicity beyond `slack` (relative).
    pub fn first_monotonicity_violation(&self, slack: f64) -> Option<usize> {
        self.rows
            .windows(2)
            .position(|w| {
                let (a, b) = (w[0].objective, w[1].objective);
                b < a - slack * a.abs()
            })
            .map(|i| i + 1)
    }

    /// CSV with header `iter,objective,step_norm,grad_norm`; objectives are
    /// written in display sign. Floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str(CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iter,
                self.sense.display(r.objective),
                r.step_norm,
                r.grad_norm
            );
        }
        out
    }

    pub fn from_csv(text: &str, sense: Sense) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            path: "<curve>".into(),
            message: msg,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CURVE_HEADER => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", n + 2)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 2)));
            rows.push(CurveRow {
                iter: f[0].trim().parse().map_err(|e| bad(format!("line {}: {e}", n + 2)))?,
                objective: sense.display(num(f[1])?),
                step_norm: num(f[2])?,
                grad_norm: num(f[3])?,
            });
        }
        Ok(Self { rows, sense })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterReached,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_params: ParamVector,
    pub curve: LearningCurve,
    pub status: RunStatus,
    /// Number of map evaluations performed.
    pub iterations: usize,
}

impl RunOutcome {
    pub fn final_objective(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |r| r.objective)
    }
}

/// Iterates `map` from `init` until the relative objective gain falls below
/// `stop.rel_tol` or `stop.max_iter` steps have been taken.
pub fn run<M: IterationMap + ?Sized>(map: &M, init: &ParamVector, stop: &StopRule) -> Result<RunOutcome> {
    run_observed(map, init, stop, |_, _| {})
}

/// Like [`run`], handing every iterate (including the initial point) to `observe`.
pub fn run_observed<M, F>(map: &M, init: &ParamVector, stop: &StopRule, mut observe: F) -> Result<RunOutcome>
where
    M: IterationMap + ?Sized,
    F: FnMut(usize, &ParamVector),
{
    stop.validate()?;
    init.validate()?;
    let mut theta = init.clone();
    let mut obj = map.objective(&theta)?;
    if !obj.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut chart = theta.to_chart();
    let mut curve = LearningCurve {
        rows: Vec::new(),
        sense: map.sense(),
    };
    curve.rows.push(CurveRow {
        iter: 0,
        objective: obj,
        step_norm: 0.0,
        grad_norm: norm(&map.gradient(&theta)?),
    });
    observe(0, &theta);

    for t in 1..=stop.max_iter {
        let next = map.step(&theta)?;
        let next_obj = map.objective(&next)?;
        if !next_obj.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        if next_obj < obj - ABORT_SLACK * obj.abs() - ABORT_FLOOR {
            return Err(Error::BoundViolation {
                iteration: t,
                before: obj,
                after: next_obj,
            });
        }
        let next_chart = next.to_chart();
        curve.rows.push(CurveRow {
            iter: t,
            objective: next_obj,
            step_norm: norm(&sub(&next_chart, &chart)),
            grad_norm: norm(&map.gradient(&next)?),
        });
        observe(t, &next);
        let gain = next_obj - obj;
        let rel = if gain <= 0.0 {
            0.0
        } else if next_obj == 0.0 {
            f64::INFINITY
        } else {
            gain / next_obj.abs()
        };
        theta = next;
        chart = next_chart;
        obj = next_obj;
        if rel < stop.rel_tol {
            return Ok(RunOutcome {
                final_params: theta,
                curve,
                status: RunStatus::Converged,
                iterations: t,
            });
        }
    }
    Ok(RunOutcome {
        final_params: theta,
        curve,
        status: RunStatus::MaxIterReached,
        iterations: stop.max_iter,
    })
}

/// Like [`run`] but also returns every iterate.
pub fn run_recording<M: IterationMap + ?Sized>(
    map: &M,
    init: &ParamVector,
    stop: &StopRule,
) -> Result<(RunOutcome, Vec<ParamVector>)> {
    let mut traj = Vec::new();
    let out = run_observed(map, init, stop, |_, p| traj.push(p.clone()))?;
    Ok((out, traj))
}

/// Result of [`polish_fixed_point`].
#[derive(Debug, Clone)]
pub struct Polished {
    pub point: ParamVector,
    pub iterations: usize,
    /// Whether the step-size tolerance was met within the budget.
    pub converged: bool,
}

/// Iterates until the chart step norm drops below `tol * (1 + |chart|)`,
/// returning the last iterate even when the budget runs out.
pub fn polish_fixed_point<M: IterationMap + ?Sized>(
    map: &M,
    start: &ParamVector,
    tol: f64,
    max_iter: usize,
) -> Result<Polished> {
    let mut theta = start.clone();
    let mut chart = theta.to_chart();
    for t in 1..=max_iter {
        let next = map.step(&theta)?;
        let next_chart = next.to_chart();
        let step = norm(&sub(&next_chart, &chart));
        theta = next;
        chart = next_chart;
        if step <= tol * (1.0 + norm(&chart)) {
            return Ok(Polished {
                point: theta,
                iterations: t,
                converged: true,
            });
        }
    }
    Ok(Polished {
        point: theta,
        iterations: max_iter,
        converged: false,
    })
}

/// Like [`polish_fixed_point`] but fails when the tolerance is not met.
///
/// Used to land on fixed points precisely enough for rate-matrix estimation,
/// where the objective-based stopping rule is too coarse.
pub fn refine_fixed_point<M: IterationMap + ?Sized>(
    map: &M,
    start: &ParamVector,
    tol: f64,
    max_iter: usize,
) -> Result<(ParamVector, usize)> {
    let p = polish_fixed_point(map, start, tol, max_iter)?;
    if p.converged {
        return Ok((p.point, p.iterations));
    }
    let residual = norm(&sub(&map.step(&p.point)?.to_chart(), &p.point.to_chart()));
    Err(Error::NotConverged { residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundProbe {
    pub objective: f64,
    pub bound_at_self: f64,
    pub bound_at_pair: f64,
    /// `G(Θ,Θ) = L(Θ)` within tolerance.
    pub tight: bool,
    /// `L(Θ) >= G(Θ,Ψ)` within tolerance.
    pub holds: bool,
}

impl BoundProbe {
    pub fn passed(&self) -> bool {
        self.tight && self.holds
    }
}

/// Checks the two defining properties of the surrogate at each `(Θ, Ψ)` probe.
pub fn check_bound_contract<M: IterationMap + ?Sized>(
    map: &M,
    probes: &[(ParamVector, ParamVector)],
) -> Result<Vec<BoundProbe>> {
    let mut out = Vec::with_capacity(probes.len());
    for (theta, psi) in probes {
        let objective = map.objective(theta)?;
        let bound_at_self = map
            .bound_at_pair(theta, theta)
            .ok_or_else(|| Error::Unsupported(map.name().to_string()))??;
        let bound_at_pair = map
            .bound_at_pair(theta, psi)
            .ok_or_else(|| Error::Unsupported(map.name().to_string()))??;
        let scale = objective.abs().max(1e-3);
        out.push(BoundProbe {
            objective,
            bound_at_self,
            bound_at_pair,
            tight: (bound_at_self - objective).abs() <= BOUND_TOL * scale,
            holds: objective >= bound_at_pair - BOUND_TOL * scale,
        });
    }
    Ok(out)
}

/// For consecutive iterates, checks that the step has positive projection on
/// the gradient. Points whose gradient norm is at most
/// [`PROJECTION_GRAD_FLOOR`] pass vacuously.
pub fn positive_projection_audit<M: IterationMap + ?Sized>(map: &M, trajectory: &[ParamVector]) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(trajectory.len().saturating_sub(1));
    for pair in trajectory.windows(2) {
        let g = map.gradient(&pair[0])?;
        if norm(&g) <= PROJECTION_GRAD_FLOOR {
            out.push(true);
            continue;
        }
        let delta = sub(&pair[1].to_chart(), &pair[0].to_chart());
        out.push(dot(&g, &delta) > 0.0);
    }
    Ok(out)
}
