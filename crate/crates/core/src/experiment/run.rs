//! Builds the problem an [`ExperimentSpec`] describes, runs it and gathers
//! terminal-point diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::spec::{Algorithm, ExperimentSpec, Preprocessing};
use crate::cccp::{decomposition_ratio_score, CccpMap, Decomposition};
use crate::diagnostics::{
    chart_hessian, direction_report, estimate_rate_matrix, is_near_fixed_point, newton_fixed_point,
    quasi_newton_residual, report_from_rate_matrix, ConvergenceReport, DirectionReport, FIXED_POINT_TOL,
    NEAR_FIXED_POINT,
};
use crate::em::{
    gen_hmm_data, gen_mog_data, read_sequences, HmmDataSpec, HmmEm, HmmKind, HmmParams, MogDataSpec, MogEm, MogParams,
    Points, Separation,
};
use crate::error::{Error, Result};
use crate::gis::maxent::{empirical_feature_covariance, random_maxent};
use crate::gis::{
    gen_logistic_data, translate_features, whiten_features, FeatureTransform, LogisticData, LogisticDataSpec,
    LogisticMap, MaxentMap, MaxentModel,
};
use crate::nmf::{gen_nmf_data, kl_divergence, read_matrix_csv, translate_data, NmfDataSpec, NmfMap};
use crate::numerics::{norm, Matrix};
use crate::optimizer::{polish_fixed_point, run_recording, IterationMap, RunOutcome, RunStatus};
use crate::param::ParamVector;
use crate::rng;

/// Step tolerance when polishing the terminal point into a fixed point.
pub const REFINE_TOL: f64 = 1e-12;

/// Extra iterations allowed for that polish.
pub const REFINE_MAX_ITER: usize = 50_000;

/// Plain iterations tried before switching to Newton's method.
const REFINE_PLAIN_ITER: usize = 5_000;

/// Direction cosines are probed at the last iterate whose step is at least
/// this large relative to the parameters; smaller steps are mostly rounding.
pub const PROBE_STEP: f64 = 1e-6;

/// Newton solves tried when plain polishing stalls.
const NEWTON_POLISH_STEPS: usize = 8;

const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostics {
    /// Extra iterations spent polishing the terminal point.
    pub refine_iterations: Option<usize>,
    pub convergence: Option<ConvergenceReport>,
    /// Iteration at which the direction report was taken.
    pub probe_iteration: usize,
    pub directions: Option<DirectionReport>,
    pub quasi_newton_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn predicted_rate(&self) -> Option<f64> {
        self.convergence.as_ref().map(|c| c.predicted_rate)
    }

    pub fn observed_rate(&self) -> Option<f64> {
        self.convergence.as_ref().and_then(|c| c.observed_rate)
    }
}

/// The report document written next to the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub label: String,
    pub status: RunStatus,
    pub iterations: usize,
    /// In the problem's own sign: log-likelihood, KL divergence or energy.
    pub final_objective: f64,
    pub diagnostics: Option<Diagnostics>,
    /// Fitted parameters and algorithm-specific quantities.
    pub result: Value,
}

/// An extra matrix written as CSV into the run directory.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub matrix: Matrix,
}

/// Everything an experiment produces, before it touches the disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub outcome: RunOutcome,
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

fn data_error(e: Error, what: &str) -> Error {
    e.context(format!("preparing {what} data"))
}

/// Runs the experiment in memory.
pub fn execute(spec: &ExperimentSpec) -> Result<RunRecord> {
    spec.validate()?;
    let ctx = |e: Error| e.context(format!("running {}", spec.label()));
    let (outcome, diagnostics, result, artifacts) = match spec.algorithm {
        Algorithm::EmMog => run_mog(spec),
        Algorithm::EmHmm => run_hmm(spec),
        Algorithm::GisMaxent => run_maxent(spec),
        Algorithm::GisLogistic => run_logistic(spec),
        Algorithm::Nmf => run_nmf(spec),
        Algorithm::Cccp => run_cccp(spec),
    }
    .map_err(ctx)?;
    let final_objective = outcome.curve.sense.display(outcome.final_objective());
    let report = RunReport {
        algorithm: spec.algorithm,
        label: spec.label(),
        status: outcome.status,
        iterations: outcome.iterations,
        final_objective,
        diagnostics,
        result,
    };
    Ok(RunRecord {
        spec: spec.clone(),
        outcome,
        report,
        artifacts,
    })
}

type Produced = (RunOutcome, Option<Diagnostics>, Value, Vec<Artifact>);

fn drive<M: IterationMap>(
    map: &M,
    init: &ParamVector,
    spec: &ExperimentSpec,
) -> Result<(RunOutcome, Option<Diagnostics>)> {
    let (outcome, trajectory) = run_recording(map, init, &spec.stop)?;
    let diagnostics = if spec.diagnostics {
        Some(diagnose(map, &outcome, &trajectory))
    } else {
        None
    };
    Ok((outcome, diagnostics))
}

/// Polishes the terminal point into a fixed point, switching to Newton's
/// method when plain iteration stalls and falling back to more plain
/// iterations if that fails.
fn locate_fixed_point<M: IterationMap + ?Sized>(
    map: &M,
    start: &ParamVector,
    notes: &mut Vec<String>,
) -> (ParamVector, Option<usize>) {
    let first = match polish_fixed_point(map, start, REFINE_TOL, REFINE_PLAIN_ITER) {
        Ok(p) if p.converged => return (p.point, Some(p.iterations)),
        Ok(p) => p,
        Err(e) => {
            notes.push(format!("terminal point not polished: {e}"));
            return (start.clone(), None);
        }
    };
    if let Ok((point, true)) = newton_fixed_point(map, &first.point, FIXED_POINT_TOL * 1e-2, NEWTON_POLISH_STEPS) {
        notes.push(format!(
            "fixed point reached by Newton's method after {} plain iterations",
            first.iterations
        ));
        return (point, Some(first.iterations));
    }
    match polish_fixed_point(map, &first.point, REFINE_TOL, REFINE_MAX_ITER - first.iterations) {
        Ok(p) if p.converged => (p.point, Some(first.iterations + p.iterations)),
        Ok(p) => {
            notes.push(format!(
                "terminal point polished for {REFINE_MAX_ITER} iterations without meeting the step tolerance"
            ));
            (p.point, None)
        }
        Err(e) => {
            notes.push(format!("terminal point not polished: {e}"));
            (first.point, None)
        }
    }
}

/// Where to check the quasi-Newton limit when the probe is still far out.
///
/// The residual shrinks linearly with the distance to `Θ*`, so a run that
/// stopped early is judged on the segment from the fixed point to the probe,
/// scaled into the near-fixed-point gradient radius.
fn quasi_newton_point<M: IterationMap + ?Sized>(
    map: &M,
    probe: &ParamVector,
    fixed_point: &ParamVector,
    have_fixed_point: bool,
) -> Result<Option<ParamVector>> {
    if !have_fixed_point || is_near_fixed_point(map, probe)? {
        return Ok(None);
    }
    let radius = NEAR_FIXED_POINT * (1.0 + map.objective(probe)?.abs());
    let shrink = (0.5 * radius / norm(&map.gradient(probe)?)).min(1.0);
    let star = fixed_point.to_chart();
    let chart: Vec<f64> = star
        .iter()
        .zip(probe.to_chart())
        .map(|(s, p)| s + shrink * (p - s))
        .collect();
    fixed_point.from_chart(&chart).map(Some)
}

/// Rate matrix at the polished terminal point, then direction cosines and
/// the quasi-Newton residual at the last informative iterate. Failures are
/// recorded as notes rather than failing the run.
pub fn diagnose<M: IterationMap + ?Sized>(map: &M, outcome: &RunOutcome, trajectory: &[ParamVector]) -> Diagnostics {
    let mut notes = Vec::new();
    let (fixed_point, refine_iterations) = locate_fixed_point(map, &outcome.final_params, &mut notes);
    let rate = match estimate_rate_matrix(map, &fixed_point) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("rate matrix: {e}"));
            None
        }
    };
    let convergence =
        rate.as_ref().and_then(
            |r| match report_from_rate_matrix(map, &fixed_point, r, Some(trajectory)) {
                Ok(c) => Some(c),
                Err(e) => {
                    notes.push(format!("spectrum: {e}"));
                    None
                }
            },
        );

    let probe_iteration = (0..outcome.curve.rows.len().saturating_sub(1))
        .rev()
        .find(|&i| {
            let scale = 1.0 + norm(&trajectory[i].to_chart());
            outcome.curve.rows[i + 1].step_norm >= PROBE_STEP * scale
        })
        .unwrap_or(0);
    let probe = &trajectory[probe_iteration.min(trajectory.len() - 1)];
    let mut directions = None;
    let mut quasi_newton = None;
    match chart_hessian(map, probe) {
        Ok(hessian) => {
            match direction_report(map, probe, &hessian) {
                Ok(d) => directions = Some(d),
                Err(e) => notes.push(format!("directions: {e}")),
            }
            if let Some(r) = &rate {
                let near = quasi_newton_point(map, probe, &fixed_point, refine_iterations.is_some());
                let measured = match near {
                    Ok(Some(point)) => {
                        notes.push("quasi-Newton residual measured between the probe and the fixed point".into());
                        chart_hessian(map, &point).and_then(|h| {
                            let d = direction_report(map, &point, &h)?;
                            Ok(d.newton_available.then_some((point, h)))
                        })
                    }
                    Ok(None) => Ok(directions
                        .as_ref()
                        .is_some_and(|d| d.newton_available)
                        .then(|| (probe.clone(), hessian.clone()))),
                    Err(e) => Err(e),
                };
                match measured.and_then(|m| m.map(|(p, h)| quasi_newton_residual(map, &p, r, &h)).transpose()) {
                    Ok(Some(q)) if q.is_finite() => quasi_newton = Some(q),
                    Ok(Some(_)) => notes.push("quasi-Newton residual is not finite".into()),
                    Ok(None) => {}
                    Err(e) => notes.push(format!("quasi-Newton residual: {e}")),
                }
            }
        }
        Err(e) => notes.push(format!("Hessian: {e}")),
    }
    Diagnostics {
        refine_iterations,
        convergence,
        probe_iteration,
        directions,
        quasi_newton_residual: quasi_newton,
        notes,
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// The data an `em-mog` spec describes.
pub fn mog_data(spec: &ExperimentSpec) -> Result<Points> {
    let ds = &spec.data_spec;
    match &ds.file {
        Some(path) => Points::read_csv(path),
        None => Ok(gen_mog_data(&MogDataSpec {
            separation: ds.separation.unwrap_or(Separation::Well),
            n: ds.n.unwrap_or(200),
            d: ds.d.unwrap_or(1),
            seed: ds.seed,
        })),
    }
}

fn run_mog(spec: &ExperimentSpec) -> Result<Produced> {
    let data = mog_data(spec).map_err(|e| data_error(e, "mixture"))?;
    let m = spec.data_spec.components.unwrap_or(2);
    let map = MogEm::new(data, m)?;
    let init = map.pack(&MogParams::quantile_init(map.data(), m)?)?;
    let (outcome, diagnostics) = drive(&map, &init, spec)?;
    let p = map.unpack(&outcome.final_params);
    let result = json!({
        "weights": p.weights,
        "means": p.means,
        "covariances": p.covariances.iter().map(matrix_rows).collect::<Vec<_>>(),
    });
    Ok((outcome, diagnostics, result, Vec::new()))
}

/// The sequences an `em-hmm` spec describes, with the alphabet size.
pub fn hmm_data(spec: &ExperimentSpec) -> Result<(Vec<Vec<usize>>, usize)> {
    let ds = &spec.data_spec;
    match &ds.file {
        Some(path) => {
            let seqs = read_sequences(path)?;
            let seen = seqs.iter().flatten().max().map_or(0, |m| m + 1);
            let symbols = ds.symbols.unwrap_or(seen);
            if seen > symbols {
                return Err(Error::config("dataSpec.symbols", format!("data uses {seen} symbols")));
            }
            Ok((seqs, symbols))
        }
        None => {
            let mut gen = HmmDataSpec::new(ds.kind.unwrap_or(HmmKind::Structured), ds.seed);
            gen.states = ds.states.unwrap_or(gen.states);
            gen.symbols = ds.symbols.unwrap_or(gen.symbols);
            gen.num_seqs = ds.num_seqs.unwrap_or(gen.num_seqs);
            gen.len = ds.len.unwrap_or(gen.len);
            Ok((gen_hmm_data(&gen), gen.symbols))
        }
    }
}

fn run_hmm(spec: &ExperimentSpec) -> Result<Produced> {
    let (seqs, symbols) = hmm_data(spec).map_err(|e| data_error(e, "sequence"))?;
    let states = spec.data_spec.states.unwrap_or(5);
    let map = HmmEm::new(seqs, states, symbols)?;
    let init = HmmParams::random(states, symbols, &mut rng::stream(spec.data_spec.seed, INIT_STREAM));
    let (outcome, diagnostics) = drive(&map, &map.pack(&init)?, spec)?;
    let p = map.unpack(&outcome.final_params);
    let result = json!({
        "initial": p.initial,
        "transitions": p.transitions.chunks(states).collect::<Vec<_>>(),
        "emissions": p.emissions.chunks(symbols).collect::<Vec<_>>(),
    });
    Ok((outcome, diagnostics, result, Vec::new()))
}

/// The enumerable model a `gis-maxent` spec describes, before preprocessing.
pub fn maxent_model(spec: &ExperimentSpec) -> Result<MaxentModel> {
    let ds = &spec.data_spec;
    match &ds.file {
        Some(path) => MaxentModel::read(path),
        None => Ok(random_maxent(
            ds.outcomes.unwrap_or(8),
            ds.d.unwrap_or(3),
            ds.offset.unwrap_or(20.0),
            ds.correlated.unwrap_or(false),
            &mut rng::seeded(ds.seed),
        )),
    }
}

/// Applies the spec's translate/whiten stages to a maxent model.
pub fn preprocess_maxent(spec: &ExperimentSpec, mut model: MaxentModel) -> Result<MaxentModel> {
    for step in &spec.preprocessing {
        model = match step {
            Preprocessing::Translate => translate_features(&model)?.0,
            Preprocessing::Whiten => whiten_features(&model, &empirical_feature_covariance(&model))?,
            _ => model,
        };
    }
    Ok(model)
}

fn run_maxent(spec: &ExperimentSpec) -> Result<Produced> {
    let model = maxent_model(spec).map_err(|e| data_error(e, "maxent"))?;
    let model = preprocess_maxent(spec, model)?;
    let s = model.s();
    let map = MaxentMap::new(model)?;
    let init = map.pack(&vec![0.0; map.model().num_features()])?;
    let (outcome, diagnostics) = drive(&map, &init, spec)?;
    let theta = map.full(&outcome.final_params);
    let result = json!({
        "theta": theta,
        "s": s,
        "distribution": map.model().distribution(&theta)?,
        "momentResidual": map.model().moment_residual(&theta)?,
    });
    Ok((outcome, diagnostics, result, Vec::new()))
}

/// Features and labels a `gis-logistic` spec describes, before preprocessing.
pub fn logistic_data(spec: &ExperimentSpec) -> Result<(Points, Vec<i8>)> {
    let ds = &spec.data_spec;
    match &ds.file {
        Some(path) => {
            let data = LogisticData::read_csv(path)?;
            Ok((data.features(), data.labels().to_vec()))
        }
        None => {
            let mut gen = LogisticDataSpec::benchmark(ds.oriented.unwrap_or(false), ds.seed);
            gen.n = ds.n.unwrap_or(gen.n);
            gen.d = ds.d.unwrap_or(gen.d);
            gen.offset = ds.offset.unwrap_or(gen.offset);
            let (x, y, _) = gen_logistic_data(&gen);
            Ok((x, y))
        }
    }
}

/// The composed feature transform of the spec's preprocessing stages.
pub fn logistic_transform(spec: &ExperimentSpec, features: &Points) -> Result<FeatureTransform> {
    let mut transform = FeatureTransform::identity(features.dim());
    for step in &spec.preprocessing {
        let current = transform.apply(features)?;
        let next = match step {
            Preprocessing::Translate => FeatureTransform::translate(&current),
            Preprocessing::Whiten => FeatureTransform::whiten(&current)?,
            _ => continue,
        };
        transform = transform.then(&next);
    }
    Ok(transform)
}

fn run_logistic(spec: &ExperimentSpec) -> Result<Produced> {
    let (x, y) = logistic_data(spec).map_err(|e| data_error(e, "logistic"))?;
    let transform = logistic_transform(spec, &x)?;
    let data = LogisticData::new(&transform.apply(&x)?, y)?;
    let map = LogisticMap::new(data)?;
    let (outcome, diagnostics) = drive(&map, &map.zero(), spec)?;
    let w = &outcome.final_params.values;
    let result = json!({
        "weights": w,
        "originalWeights": transform.weights_to_original(w),
        "transform": matrix_rows(&transform.a),
        "shift": transform.shift,
        "s": map.data().s(),
    });
    Ok((outcome, diagnostics, result, Vec::new()))
}

/// The data matrix an `nmf` spec describes, after preprocessing, and the
/// translation applied.
pub fn nmf_data(spec: &ExperimentSpec) -> Result<(Matrix, f64)> {
    let ds = &spec.data_spec;
    let mut v = match &ds.file {
        Some(path) => read_matrix_csv(path)?,
        None => {
            let mut gen = NmfDataSpec::benchmark(ds.seed);
            gen.dim = ds.dim.unwrap_or(gen.dim);
            gen.count = ds.count.unwrap_or(gen.count);
            gen.offset = ds.offset.unwrap_or(gen.offset);
            gen_nmf_data(&gen)
        }
    };
    let mut total = 0.0;
    for step in &spec.preprocessing {
        if *step == Preprocessing::Translate {
            let (next, t) = translate_data(&v, None)?;
            v = next;
            total += t;
        }
    }
    Ok((v, total))
}

fn run_nmf(spec: &ExperimentSpec) -> Result<Produced> {
    let (v, shift) = nmf_data(spec).map_err(|e| data_error(e, "NMF"))?;
    let rank = spec.data_spec.rank.unwrap_or(3);
    let map = NmfMap::new(v.clone(), rank, spec.data_spec.update.unwrap_or_default())?;
    let init = map.init(spec.data_spec.seed.wrapping_add(INIT_STREAM));
    let (outcome, diagnostics) = drive(&map, &init, spec)?;
    let f = map.unpack(&outcome.final_params);
    let result = json!({
        "rank": rank,
        "shift": shift,
        "divergence": kl_divergence(&v, &f)?,
    });
    let artifacts = vec![
        Artifact {
            name: "factor_w.csv".into(),
            matrix: f.w.clone(),
        },
        Artifact {
            name: "factor_h.csv".into(),
            matrix: f.h.clone(),
        },
    ];
    Ok((outcome, diagnostics, result, artifacts))
}

fn run_cccp(spec: &ExperimentSpec) -> Result<Produced> {
    let d = spec.decomposition()?;
    let x0 = spec.data_spec.x0.clone().unwrap_or_else(|| vec![2.0]);
    if x0.len() != d.dim() {
        return Err(Error::config(
            "dataSpec.x0",
            format!("decomposition `{}` is {}-dimensional", d.name, d.dim()),
        ));
    }
    let map = CccpMap::new(d)?;
    let (outcome, diagnostics) = drive(&map, &map.pack(&x0)?, spec)?;
    let x = &outcome.final_params.values;
    let d = map.decomposition();
    let result = json!({
        "decomposition": d.name,
        "x": x,
        "energy": d.energy(x),
        "ratioScore": decomposition_ratio_score(d, x).ok(),
    });
    Ok((outcome, diagnostics, result, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::spec::DataSpec;
    use crate::optimizer::StopRule;

    fn cccp_spec(name: &str) -> ExperimentSpec {
        ExperimentSpec::new(Algorithm::Cccp, DataSpec::default())
            .with_preprocessing(&[Preprocessing::Decomposition(name.into())])
    }

    #[test]
    fn cccp_runs_report_rates() {
        let mut counts = Vec::new();
        for (name, rate) in [("dec1", 0.5), ("dec2", 0.8125), ("dec3", 0.95)] {
            let rec = execute(&cccp_spec(name)).unwrap();
            let diag = rec.report.diagnostics.unwrap();
            let predicted = diag.predicted_rate().unwrap();
            assert!((predicted - rate).abs() < 1e-6, "{name}: {predicted}");
            let observed = diag.observed_rate().unwrap();
            assert!((observed - rate).abs() <= 0.1 * rate, "{name}: {observed}");
            assert!((rec.report.final_objective + 2.0).abs() < 1e-8);
            counts.push(rec.report.iterations);
        }
        assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
    }

    #[test]
    fn one_dimensional_x0_is_required_for_scalar_energies() {
        let mut spec = cccp_spec("dec1");
        spec.data_spec.x0 = Some(vec![1.0, 2.0]);
        assert!(execute(&spec).unwrap_err().is_config());
    }

    #[test]
    fn well_separated_mixture_converges_fast() {
        let spec = ExperimentSpec::new(
            Algorithm::EmMog,
            DataSpec {
                separation: Some(Separation::Well),
                n: Some(200),
                seed: 7,
                ..DataSpec::default()
            },
        );
        let rec = execute(&spec).unwrap();
        assert_eq!(rec.report.status, RunStatus::Converged);
        assert!(rec.report.iterations <= 25, "{}", rec.report.iterations);
        let diag = rec.report.diagnostics.unwrap();
        assert!(diag.directions.unwrap().cos_step_newton.unwrap() >= 0.99);
    }

    #[test]
    fn logistic_preprocessing_recovers_the_same_model() {
        let base = ExperimentSpec::new(
            Algorithm::GisLogistic,
            DataSpec {
                n: Some(300),
                offset: Some(5.0),
                seed: 2,
                ..DataSpec::default()
            },
        )
        .with_stop(StopRule::new(1e-13, 200_000).unwrap());
        let mut fits = Vec::new();
        for steps in [
            vec![],
            vec![Preprocessing::Translate],
            vec![Preprocessing::Translate, Preprocessing::Whiten],
        ] {
            let mut spec = base.clone().with_preprocessing(&steps);
            spec.diagnostics = false;
            let rec = execute(&spec).unwrap();
            let w: Vec<f64> = serde_json::from_value(rec.report.result["originalWeights"].clone()).unwrap();
            fits.push((w, rec.report.final_objective));
        }
        for (w, ll) in &fits[1..] {
            assert!((ll - fits[0].1).abs() < 1e-6 * fits[0].1.abs(), "{ll} vs {}", fits[0].1);
            for (a, b) in w.iter().zip(&fits[0].0) {
                assert!((a - b).abs() < 1e-2 * (1.0 + b.abs()), "{w:?} vs {:?}", fits[0].0);
            }
        }
    }

    #[test]
    fn nmf_run_writes_factor_artifacts() {
        let spec = ExperimentSpec::new(
            Algorithm::Nmf,
            DataSpec {
                dim: Some(4),
                count: Some(6),
                rank: Some(2),
                seed: 1,
                ..DataSpec::default()
            },
        )
        .with_preprocessing(&[Preprocessing::Translate])
        .with_stop(StopRule::new(1e-10, 5000).unwrap());
        let rec = execute(&spec).unwrap();
        assert_eq!(rec.artifacts.len(), 2);
        assert_eq!(rec.artifacts[0].matrix.shape(), (4, 2));
        assert!(rec.report.final_objective >= 0.0);
    }
}
