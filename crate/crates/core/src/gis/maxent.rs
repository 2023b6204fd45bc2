//! GIS on fully enumerable maximum-entropy models.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;

use super::{whitening_matrix, FEATURE_MARGIN};
use crate::error::{Error, Result};
use crate::numerics::{eig, log_sum_exp, solve, symmetric_eigen, Matrix};
use crate::optimizer::IterationMap;
use crate::param::{Domain, Layout, ParamVector};
use crate::rng::Rng;

/// Model expectations below this are treated as underflow.
const EXPECTATION_FLOOR: f64 = 1e-300;

/// Moment residual accepted as a fixed point.
pub const MOMENT_TOL: f64 = 1e-8;

/// A maxent model over a finite domain. Feature vectors exclude the constant
/// bias feature, which is stored once and appended as the last coordinate of
/// every full feature vector `F(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxentModel {
    outcomes: Vec<String>,
    features: Vec<Vec<f64>>,
    bias: f64,
    empirical: Vec<f64>,
}

/// Model moments of the full feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl FeatureStats {
    /// `D = diag(mean)`.
    pub fn d(&self) -> Matrix {
        Matrix::from_diagonal(&nalgebra::DVector::from_vec(self.mean.clone()))
    }
}

impl MaxentModel {
    pub fn new(outcomes: Vec<String>, features: Vec<Vec<f64>>, bias: f64, empirical: Vec<f64>) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 || features.len() != n || empirical.len() != n {
            return Err(Error::Model(
                "outcomes, features and empirical weights must have equal length".into(),
            ));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Model("feature vectors have unequal length".into()));
        }
        if !(bias > 0.0) || features.iter().flatten().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Model("all feature values must be strictly positive".into()));
        }
        let total: f64 = empirical.iter().sum();
        if empirical.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Model("empirical weights must form a probability vector".into()));
        }
        Ok(Self {
            outcomes,
            features,
            bias,
            empirical,
        })
    }

    /// Outcomes named `x0, x1, ...`.
    pub fn unnamed(features: Vec<Vec<f64>>, bias: f64, empirical: Vec<f64>) -> Result<Self> {
        let names = (0..features.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, features, bias, empirical)
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of non-bias features.
    pub fn num_features(&self) -> usize {
        self.features[0].len()
    }

    /// Length of Θ, bias included.
    pub fn dim(&self) -> usize {
        self.num_features() + 1
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn empirical(&self) -> &[f64] {
        &self.empirical
    }

    /// Non-bias features of outcome `x`.
    pub fn raw_features(&self, x: usize) -> &[f64] {
        &self.features[x]
    }

    /// Full feature vector of outcome `x`, bias last.
    pub fn feature(&self, x: usize) -> Vec<f64> {
        let mut f = self.features[x].clone();
        f.push(self.bias);
        f
    }

    /// `s = max_x Σ_i f_i(x)`.
    pub fn s(&self) -> f64 {
        self.features
            .iter()
            .map(|f| f.iter().sum::<f64>() + self.bias)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, model needs {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `p(x|Θ)` by exact enumeration.
    pub fn distribution(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let scores: Vec<f64> = (0..self.len())
            .map(|x| self.feature(x).iter().zip(theta).map(|(f, t)| f * t).sum())
            .collect();
        let lz = log_sum_exp(&scores);
        if !lz.is_finite() {
            return Err(Error::non_finite("maxent partition function"));
        }
        Ok(scores.iter().map(|s| (s - lz).exp()).collect())
    }

    /// Mean and covariance of `F` under the distribution `p`.
    pub fn stats_under(&self, p: &[f64]) -> FeatureStats {
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        for (x, px) in p.iter().enumerate() {
            for (m, f) in mean.iter_mut().zip(self.feature(x)) {
                *m += px * f;
            }
        }
        let mut cov = Matrix::zeros(dim, dim);
        for (x, px) in p.iter().enumerate() {
            let f = self.feature(x);
            for i in 0..dim {
                for j in 0..dim {
                    cov[(i, j)] += px * (f[i] - mean[i]) * (f[j] - mean[j]);
                }
            }
        }
        // the bias is constant, so its row and column vanish exactly
        for i in 0..dim {
            cov[(dim - 1, i)] = 0.0;
            cov[(i, dim - 1)] = 0.0;
        }
        FeatureStats { mean, cov }
    }

    pub fn feature_stats(&self, theta: &[f64]) -> Result<FeatureStats> {
        Ok(self.stats_under(&self.distribution(theta)?))
    }

    pub fn empirical_stats(&self) -> FeatureStats {
        self.stats_under(&self.empirical)
    }

    /// Largest absolute gap between model and empirical feature means.
    pub fn moment_residual(&self, theta: &[f64]) -> Result<f64> {
        let model = self.feature_stats(theta)?.mean;
        let emp = self.empirical_stats().mean;
        Ok(model.iter().zip(&emp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Same model with every feature, bias included, multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let features = self
            .features
            .iter()
            .map(|f| f.iter().map(|v| v * c).collect())
            .collect();
        Self::new(self.outcomes.clone(), features, self.bias * c, self.empirical.clone())
    }

    /// Same outcomes and empirical weights with new non-bias features.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.outcomes.clone(), features, self.bias, self.empirical.clone())
    }

    /// Reads the text format written by [`MaxentModel::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut bias = None;
        let (mut outcomes, mut features, mut empirical) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let number = |t: Option<&str>| -> std::result::Result<f64, String> {
                t.ok_or_else(|| format!("line {}: missing value", n + 1))?
                    .parse::<f64>()
                    .map_err(|e| format!("line {}: {e}", n + 1))
            };
            match tokens.next() {
                Some("bias") => bias = Some(number(tokens.next())?),
                Some("outcome") => {
                    outcomes.push(
                        tokens
                            .next()
                            .ok_or(format!("line {}: missing outcome name", n + 1))?
                            .to_string(),
                    );
                    empirical.push(number(tokens.next())?);
                    features.push(
                        tokens
                            .map(|t| number(Some(t)))
                            .collect::<std::result::Result<Vec<_>, _>>()?,
                    );
                }
                Some(other) => return Err(format!("line {}: unknown record `{other}`", n + 1)),
                None => {}
            }
        }
        let bias = bias.ok_or("missing `bias` record")?;
        Self::new(outcomes, features, bias, empirical).map_err(|e| e.to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# outcome <name> <empirical weight> <features...>\nbias {:?}\n",
            self.bias
        );
        for x in 0..self.len() {
            out.push_str(&format!("outcome {} {:?}", self.outcomes[x], self.empirical[x]));
            for f in &self.features[x] {
                out.push_str(&format!(" {f:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn maxent_log_lik(model: &MaxentModel, theta: &[f64]) -> Result<f64> {
    let p = model.distribution(theta)?;
    let mut total = 0.0;
    for (pe, pm) in model.empirical.iter().zip(&p) {
        if *pe > 0.0 {
            total += pe * pm.ln();
        }
    }
    if !total.is_finite() {
        return Err(Error::non_finite("maxent log-likelihood"));
    }
    Ok(total)
}

/// One GIS update of the full parameter vector.
pub fn gis_step(model: &MaxentModel, theta: &[f64]) -> Result<Vec<f64>> {
    let model_mean = model.feature_stats(theta)?.mean;
    let emp_mean = model.empirical_stats().mean;
    let s = model.s();
    theta
        .iter()
        .zip(model_mean.iter().zip(&emp_mean))
        .enumerate()
        .map(|(i, (t, (m, e)))| {
            if *m < EXPECTATION_FLOOR {
                return Err(Error::non_finite(format!(
                    "model expectation of feature {i} underflows"
                )));
            }
            Ok(t + (e / m).ln() / s)
        })
        .collect()
}

/// Jacobian of [`gis_step`] at a fixed point, `I − (1/s)·D⁻¹·Cov`, over all
/// coordinates with the bias last. In the row-vector convention
/// `Θᵗ⁺¹ = Θᵗ M′` this is the transpose `I − (1/s)·Cov·D⁻¹`; both share one
/// spectrum.
pub fn gis_rate_matrix(model: &MaxentModel, theta: &[f64]) -> Result<Matrix> {
    let residual = model.moment_residual(theta)?;
    if residual > MOMENT_TOL {
        return Err(Error::NotConverged { residual });
    }
    Ok(rate_matrix_under(model, &model.distribution(theta)?))
}

/// The rate matrix assembled from the moments of an arbitrary distribution.
pub fn rate_matrix_under(model: &MaxentModel, p: &[f64]) -> Matrix {
    let stats = model.stats_under(p);
    let dim = model.dim();
    let s = model.s();
    let mut m = Matrix::identity(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] -= stats.cov[(i, j)] / (s * stats.mean[i]);
        }
    }
    m
}

/// Non-bias block of a full rate matrix. The bias row and column of the full
/// matrix are those of the identity, so the spectra differ only by one unit
/// eigenvalue.
pub fn active_block(full: &Matrix) -> Matrix {
    let d = full.nrows() - 1;
    full.view((0, 0), (d, d)).into_owned()
}

/// Largest eigenvalue of the non-bias rate block at the model's fitted
/// distribution `p`. The block is similar to a symmetric matrix, so its
/// spectrum is real.
pub fn top_eigenvalue_under(model: &MaxentModel, p: &[f64]) -> Result<f64> {
    Ok(eig(&active_block(&rate_matrix_under(model, p)))?.max_real())
}

/// Maximum-likelihood parameters by damped Newton on the non-bias
/// coordinates with the bias pinned at zero.
pub fn solve_maxent(model: &MaxentModel, start: &[f64]) -> Result<Vec<f64>> {
    model.check_theta(start)?;
    let d = model.num_features();
    let mut theta = start.to_vec();
    theta[d] = 0.0;
    let emp = model.empirical_stats().mean;
    let mut ll = maxent_log_lik(model, &theta)?;
    for _ in 0..200 {
        let stats = model.feature_stats(&theta)?;
        let grad: Vec<f64> = (0..d).map(|i| emp[i] - stats.mean[i]).collect();
        if grad
            .iter()
            .all(|g| g.abs() <= 1e-14 * (1.0 + emp[..d].iter().fold(0.0f64, |a, b| a.max(b.abs()))))
        {
            return Ok(theta);
        }
        let mut hess = active_block(&stats.cov);
        let ridge = 1e-10 * (1.0 + hess.trace());
        for i in 0..d {
            hess[(i, i)] += ridge;
        }
        let dir = solve(&hess, &grad)?;
        let mut t = 1.0;
        loop {
            let mut cand = theta.clone();
            for i in 0..d {
                cand[i] += t * dir[i];
            }
            let cand_ll = maxent_log_lik(model, &cand)?;
            if cand_ll >= ll - 1e-15 * ll.abs() || t < 1e-12 {
                if t < 1e-12 {
                    return Ok(theta);
                }
                theta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
    }
    let residual = model.moment_residual(&theta)?;
    if residual > MOMENT_TOL {
        return Err(Error::NotConverged { residual });
    }
    Ok(theta)
}

/// Optimal translation `F − V`, `V_i = min_x f_i(x) − margin`, bias exempt.
/// Returns the new model and `V`. `s` drops by exactly `Σ V_i`.
pub fn translate_features(model: &MaxentModel) -> Result<(MaxentModel, Vec<f64>)> {
    let d = model.num_features();
    let shift: Vec<f64> = (0..d)
        .map(|i| model.features.iter().map(|f| f[i]).fold(f64::INFINITY, f64::min) - FEATURE_MARGIN)
        .collect();
    let features = model
        .features
        .iter()
        .map(|f| f.iter().zip(&shift).map(|(v, s)| v - s).collect())
        .collect();
    Ok((model.with_features(features)?, shift))
}

/// Covariance of the non-bias features under the empirical distribution.
pub fn empirical_feature_covariance(model: &MaxentModel) -> Matrix {
    active_block(&model.empirical_stats().cov)
}

/// Applies `A = W H^{-1/2} Wᵀ` (from `cov_estimate`) to the non-bias
/// features, then translates back to positivity.
pub fn whiten_features(model: &MaxentModel, cov_estimate: &Matrix) -> Result<MaxentModel> {
    let a = whitening_matrix(cov_estimate)?;
    let features = model
        .features
        .iter()
        .map(|f| (&a * nalgebra::DVector::from_column_slice(f)).iter().copied().collect())
        .collect::<Vec<Vec<f64>>>();
    let min = features.iter().flatten().fold(f64::INFINITY, |m, v| m.min(*v));
    let features = if min > 0.0 {
        features
    } else {
        features
            .into_iter()
            .map(|f| f.into_iter().map(|v| v - min + FEATURE_MARGIN).collect())
            .collect()
    };
    let whitened = model.with_features(features)?;
    Ok(translate_features(&whitened)?.0)
}

/// Random model with `n` outcomes and `d` positive features. With
/// `correlated`, all features share a common component.
pub fn random_maxent(n: usize, d: usize, offset: f64, correlated: bool, rng: &mut Rng) -> MaxentModel {
    let features = (0..n)
        .map(|_| {
            let common = rng.random_range(0.0..2.0);
            (0..d)
                .map(|i| {
                    let own = rng.random_range(0.1..2.0);
                    let mixed = if correlated {
                        0.3 * own + common * (1.0 + 0.5 * i as f64)
                    } else {
                        own
                    };
                    offset + mixed
                })
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let z: f64 = raw.iter().sum();
    MaxentModel::unnamed(features, 1.0, raw.iter().map(|r| r / z).collect()).expect("valid random model")
}

/// GIS over the non-bias coordinates of Θ, with the bias pinned at zero.
#[derive(Debug, Clone)]
pub struct MaxentMap {
    model: MaxentModel,
    layout: Arc<Layout>,
    gauge: Vec<Vec<f64>>,
}

impl MaxentMap {
    pub fn new(model: MaxentModel) -> Result<Self> {
        let d = model.num_features();
        let layout = Arc::new(Layout::builder().segment("theta", d, Domain::Free).build()?);
        // feature combinations that are constant over the domain leave p unchanged
        let uniform = vec![1.0 / model.len() as f64; model.len()];
        let cov = active_block(&model.stats_under(&uniform).cov);
        let (values, vectors) = symmetric_eigen(&cov)?;
        let scale = 1.0 + cov.trace();
        let gauge = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v <= 1e-12 * scale)
            .map(|(k, _)| vectors.column(k).iter().copied().collect())
            .collect();
        Ok(Self { model, layout, gauge })
    }

    pub fn model(&self) -> &MaxentModel {
        &self.model
    }

    pub fn pack(&self, theta: &[f64]) -> Result<ParamVector> {
        let d = self.model.num_features();
        if theta.len() != d && theta.len() != d + 1 {
            return Err(Error::Dimension(format!("theta has {} entries", theta.len())));
        }
        ParamVector::new(theta[..d].to_vec(), Arc::clone(&self.layout))
    }

    /// Full Θ with the pinned bias.
    pub fn full(&self, theta: &ParamVector) -> Vec<f64> {
        let mut t = theta.values.clone();
        t.push(0.0);
        t
    }

    fn bound(&self, theta: &[f64], psi: &[f64]) -> Result<f64> {
        let p = self.model.distribution(psi)?;
        let s = self.model.s();
        let emp = self.model.empirical_stats().mean;
        let delta: Vec<f64> = theta.iter().zip(psi).map(|(a, b)| a - b).collect();
        let mut g = maxent_log_lik(&self.model, psi)? + 1.0;
        g += delta.iter().zip(&emp).map(|(d, e)| d * e).sum::<f64>();
        for (x, px) in p.iter().enumerate() {
            let f = self.model.feature(x);
            let total: f64 = f.iter().sum();
            let mix: f64 = f.iter().zip(&delta).map(|(fi, di)| fi / s * (s * di).exp()).sum();
            g -= px * (mix + (s - total) / s);
        }
        Ok(g)
    }
}

impl IterationMap for MaxentMap {
    fn name(&self) -> &str {
        "gis-maxent"
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        maxent_log_lik(&self.model, &self.full(theta))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let model = self.model.feature_stats(&self.full(theta))?.mean;
        let emp = self.model.empirical_stats().mean;
        let d = self.model.num_features();
        Ok((0..d).map(|i| emp[i] - model[i]).collect())
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.pack(&gis_step(&self.model, &self.full(theta))?)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        Some(self.bound(&self.full(theta), &self.full(psi)))
    }

    fn gauge_directions(&self, _theta: &ParamVector) -> Vec<Vec<f64>> {
        self.gauge.clone()
    }
}

/// Total-variation distance between two distributions on the same domain.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::estimate_rate_matrix;
    use crate::numerics::fd_gradient;
    use crate::optimizer::{check_bound_contract, refine_fixed_point};
    use crate::rng;

    fn two_outcome(f0: f64, f1: f64, p0: f64) -> MaxentModel {
        MaxentModel::unnamed(vec![vec![f0], vec![f1]], 1.0, vec![p0, 1.0 - p0]).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_theta_uniform_empirical() {
        let m = MaxentModel::unnamed(vec![vec![1.0], vec![2.0], vec![3.0]], 1.0, vec![1.0 / 3.0; 3]).unwrap();
        assert!((maxent_log_lik(&m, &[0.0, 0.0]).unwrap() + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_outcome_log_lik_is_zero() {
        let m = MaxentModel::unnamed(vec![vec![2.5, 0.5]], 1.0, vec![1.0]).unwrap();
        assert!(maxent_log_lik(&m, &[3.0, -7.0, 1.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn two_outcome_hand_enumeration() {
        let m = two_outcome(1.0, 3.0, 0.3);
        let t = 0.7;
        let (a, b) = ((t * 1.0f64).exp(), (t * 3.0f64).exp());
        let expected = 0.3 * (a / (a + b)).ln() + 0.7 * (b / (a + b)).ln();
        assert!((maxent_log_lik(&m, &[t, 0.4]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn matched_moments_are_fixed() {
        let m = MaxentModel::unnamed(vec![vec![1.0], vec![2.0]], 1.0, vec![0.5, 0.5]).unwrap();
        let next = gis_step(&m, &[0.0, 0.0]).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
    }

    #[test]
    fn fixed_point_matches_bisection() {
        let m = two_outcome(1.0, 3.0, 0.3);
        let target = 0.3 * 1.0 + 0.7 * 3.0;
        let root = bisect(
            |t| {
                let (a, b) = (t.exp(), (3.0 * t).exp());
                (a + 3.0 * b) / (a + b) - target
            },
            -10.0,
            10.0,
        );
        let map = MaxentMap::new(m.clone()).unwrap();
        let (fixed, _) = refine_fixed_point(&map, &map.pack(&[0.0]).unwrap(), 1e-14, 100_000).unwrap();
        assert!((fixed.values[0] - root).abs() < 1e-10, "{} vs {root}", fixed.values[0]);
        let newton = solve_maxent(&m, &[0.0, 0.0]).unwrap();
        assert!((newton[0] - root).abs() < 1e-12);
    }

    #[test]
    fn analytic_rate_matrix_matches_finite_differences() {
        let mut r = rng::seeded(3);
        for _ in 0..5 {
            let m = random_maxent(8, 3, 0.0, true, &mut r);
            let theta = solve_maxent(&m, &[0.0; 4]).unwrap();
            let map = MaxentMap::new(m.clone()).unwrap();
            let fd = estimate_rate_matrix(&map, &map.pack(&theta).unwrap()).unwrap();
            let analytic = active_block(&gis_rate_matrix(&m, &theta).unwrap());
            let err = (&fd - &analytic).norm() / analytic.norm();
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn rate_matrix_rejects_non_fixed_point() {
        let m = two_outcome(1.0, 3.0, 0.3);
        assert!(matches!(
            gis_rate_matrix(&m, &[0.0, 0.0]),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn binary_feature_eigenvalues() {
        let m = two_outcome(1.0, 2.0, 0.5);
        let theta = solve_maxent(&m, &[0.0, 0.0]).unwrap();
        let s = eig(&gis_rate_matrix(&m, &theta).unwrap()).unwrap();
        for e in &s.eigenvalues {
            assert!(e.re >= 0.0 && e.re <= 1.0 && e.im == 0.0);
        }
        let block = eig(&active_block(&gis_rate_matrix(&m, &theta).unwrap())).unwrap();
        // Cov = 1/4, D = 3/2, s = 3
        assert!((block.max_real() - (1.0 - 0.25 / (3.0 * 1.5))).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_gives_unit_eigenvalue_and_gauge() {
        let m = MaxentModel::unnamed(
            vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![2.0, 2.0]],
            1.0,
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let theta = solve_maxent(&m, &[0.0; 3]).unwrap();
        let rate = gis_rate_matrix(&m, &theta).unwrap();
        assert!(rate
            .row(1)
            .iter()
            .zip([0.0, 1.0, 0.0])
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let map = MaxentMap::new(m).unwrap();
        let gauge = map.gauge_directions(&map.pack(&theta).unwrap());
        assert_eq!(gauge.len(), 1);
        assert!(gauge[0][1].abs() > 1.0 - 1e-9);
    }

    #[test]
    fn translation_lowers_top_eigenvalue() {
        let mut r = rng::seeded(8);
        for _ in 0..10 {
            let m = random_maxent(10, 3, 20.0, false, &mut r);
            let p = m.distribution(&solve_maxent(&m, &[0.0; 4]).unwrap()).unwrap();
            let (t, shift) = translate_features(&m).unwrap();
            assert!((t.s() - (m.s() - shift.iter().sum::<f64>())).abs() < 1e-9);
            let before = top_eigenvalue_under(&m, &p).unwrap();
            let after = top_eigenvalue_under(&t, &p).unwrap();
            assert!(after < before, "{after} vs {before}");
        }
    }

    #[test]
    fn translated_model_has_same_fit() {
        let m = random_maxent(6, 2, 5.0, false, &mut rng::seeded(1));
        let (t, _) = translate_features(&m).unwrap();
        let p = m.distribution(&solve_maxent(&m, &[0.0; 3]).unwrap()).unwrap();
        let q = t.distribution(&solve_maxent(&t, &[0.0; 3]).unwrap()).unwrap();
        assert!(total_variation(&p, &q) < 1e-10);
    }

    #[test]
    fn homogeneous_scaling_keeps_spectrum() {
        let m = random_maxent(7, 3, 1.0, true, &mut rng::seeded(5));
        let p = m.distribution(&solve_maxent(&m, &[0.0; 4]).unwrap()).unwrap();
        let a = eig(&rate_matrix_under(&m, &p)).unwrap();
        let b = eig(&rate_matrix_under(&m.scaled(3.7).unwrap(), &p)).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x.re - y.re).abs() < 1e-10 && (x.im - y.im).abs() < 1e-10);
        }
    }

    #[test]
    fn white_features_stay_white() {
        let m = random_maxent(12, 3, 2.0, true, &mut rng::seeded(6));
        let w = whiten_features(&m, &empirical_feature_covariance(&m)).unwrap();
        let cov = empirical_feature_covariance(&w);
        assert!((cov - Matrix::identity(3, 3)).abs().max() < 1e-6);
        let again = whiten_features(&w, &empirical_feature_covariance(&w)).unwrap();
        for x in 0..w.len() {
            for (a, b) in w.raw_features(x).iter().zip(again.raw_features(x)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradient_and_bound_contract() {
        let m = random_maxent(6, 2, 0.5, true, &mut rng::seeded(2));
        let map = MaxentMap::new(m).unwrap();
        let theta = map.pack(&[0.3, -0.2]).unwrap();
        let g = map.gradient(&theta).unwrap();
        let fd = fd_gradient(|c| map.objective(&theta.from_chart(c)?), &theta.values, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
        }
        let psi = map.pack(&[-0.5, 0.8]).unwrap();
        let probes = check_bound_contract(&map, &[(theta.clone(), psi.clone()), (psi, theta)]).unwrap();
        assert!(probes.iter().all(|p| p.passed()), "{probes:?}");
    }

    #[test]
    fn text_format_round_trip() {
        let m = random_maxent(4, 2, 1.0, false, &mut rng::seeded(0));
        assert_eq!(MaxentModel::parse(&m.to_text()).unwrap(), m);
        assert!(MaxentModel::parse("outcome a 1.0 2.0\n").is_err());
    }
}
