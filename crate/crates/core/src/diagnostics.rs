//! Convergence-rate analysis of bound optimizers.
//!
//! Near a fixed point `Θ*` an iteration map behaves like the linear map
//! `Θ ↦ Θ* + M'(Θ - Θ*)`, so the spectral radius of the rate matrix `M'`
//! predicts the asymptotic linear rate. `M'` is estimated here by central
//! differences of the map in its unconstrained chart; the rate is
//! chart-invariant at a fixed point.
//!
//! The same machinery compares the bound-optimizer step against the
//! gradient and the Newton direction, and measures how well
//! `step ≈ (I - M')(-S)⁻¹ ∇L` holds near the optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, cosine, fd_hessian, fd_jacobian, mat_vec, norm, sub, Matrix, Spectrum};
use crate::optimizer::{chart_step, IterationMap};
use crate::param::ParamVector;

/// Residual allowed at a point handed to [`estimate_rate_matrix`], relative to `1 + |Θ|`.
pub const FIXED_POINT_TOL: f64 = 1e-7;

/// Eigenvalues this close to one are candidates for gauge directions.
pub const GAUGE_EIGEN_TOL: f64 = 1e-4;

/// Minimum cosine between an eigenvector and an analytic gauge direction.
pub const GAUGE_COSINE: f64 = 0.99;

/// Error floor below which trajectory points are ignored by [`observed_rate`].
pub const ERROR_FLOOR: f64 = 1e-12;

/// Default number of trailing ratios averaged by [`observed_rate`].
pub const OBSERVED_WINDOW: usize = 10;

/// Gradient-norm radius (relative to `1 + |L|`) inside which the
/// quasi-Newton limit is checked.
pub const NEAR_FIXED_POINT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvergenceReport {
    pub spectrum: Spectrum,
    pub spectral_radius: f64,
    pub predicted_rate: f64,
    pub observed_rate: Option<f64>,
    pub gauge_dimensions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DirectionReport {
    pub cos_step_grad: f64,
    /// `None` when the Hessian is not negative definite.
    pub cos_step_newton: Option<f64>,
    pub cos_grad_newton: Option<f64>,
    pub grad_log_norm: f64,
    pub newton_available: bool,
}

fn fixed_point_residual<M: IterationMap + ?Sized>(map: &M, point: &ParamVector) -> Result<f64> {
    let chart = point.to_chart();
    Ok(norm(&sub(&map.step(point)?.to_chart(), &chart)))
}

/// Central-difference Jacobian of the map (in chart coordinates) at a fixed point.
pub fn estimate_rate_matrix<M: IterationMap + ?Sized>(map: &M, fixed_point: &ParamVector) -> Result<Matrix> {
    let chart = fixed_point.to_chart();
    estimate_rate_matrix_with_step(map, fixed_point, numerics::default_step(&chart))
}

pub fn estimate_rate_matrix_with_step<M: IterationMap + ?Sized>(
    map: &M,
    fixed_point: &ParamVector,
    h: f64,
) -> Result<Matrix> {
    let chart = fixed_point.to_chart();
    let residual = fixed_point_residual(map, fixed_point)?;
    if residual > FIXED_POINT_TOL * (1.0 + norm(&chart)) {
        return Err(Error::NotConverged { residual });
    }
    fd_jacobian(|c| chart_step(map, fixed_point, c), &chart, h)
}

/// Newton's method on `M(Θ) - Θ = 0` in chart coordinates.
///
/// Plain iteration crawls when the rate is close to one; this lands on the
/// fixed point in a handful of Jacobian solves. Gauge directions make
/// `M' - I` singular, so the update is the minimum-norm least-squares solution.
/// Returns the final point and whether the residual dropped below `tol * (1 + |Θ|)`.
pub fn newton_fixed_point<M: IterationMap + ?Sized>(
    map: &M,
    start: &ParamVector,
    tol: f64,
    max_iter: usize,
) -> Result<(ParamVector, bool)> {
    let mut theta = start.clone();
    for _ in 0..max_iter {
        let chart = theta.to_chart();
        let residual = sub(&map.step(&theta)?.to_chart(), &chart);
        if norm(&residual) <= tol * (1.0 + norm(&chart)) {
            return Ok((theta, true));
        }
        let n = chart.len();
        let jac = fd_jacobian(|c| chart_step(map, &theta, c), &chart, numerics::default_step(&chart))?;
        let a = jac - Matrix::identity(n, n);
        let rhs = nalgebra::DVector::from_iterator(n, residual.iter().map(|r| -r));
        let svd = a.svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-10;
        let delta = svd
            .solve(&rhs, cutoff)
            .map_err(|e| Error::DegenerateDirection(format!("fixed-point solve: {e}")))?;
        let next: Vec<f64> = chart.iter().zip(delta.iter()).map(|(c, d)| c + d).collect();
        match theta.from_chart(&next).and_then(|p| p.validate().map(|_| p)) {
            Ok(p) => theta = p,
            Err(_) => return Ok((theta, false)),
        }
    }
    let chart = theta.to_chart();
    let ok = fixed_point_residual(map, &theta)? <= tol * (1.0 + norm(&chart));
    Ok((theta, ok))
}

/// Hessian of the objective in chart coordinates, from the analytic gradient.
pub fn chart_hessian<M: IterationMap + ?Sized>(map: &M, theta: &ParamVector) -> Result<Matrix> {
    let chart = theta.to_chart();
    fd_hessian(
        |c| map.gradient(&theta.from_chart(c)?),
        &chart,
        numerics::default_step(&chart),
    )
}

/// Geometric mean of `|Θ_{t+1} - Θ*| / |Θ_t - Θ*|` over the last `k` ratios
/// whose errors both exceed [`ERROR_FLOOR`].
pub fn observed_rate(trajectory: &[ParamVector], fixed_point: &ParamVector, k: usize) -> Result<f64> {
    let star = fixed_point.to_chart();
    let errors: Vec<f64> = trajectory.iter().map(|p| norm(&sub(&p.to_chart(), &star))).collect();
    observed_rate_from_errors(&errors, k)
}

/// [`observed_rate`] on a precomputed error sequence.
pub fn observed_rate_from_errors(errors: &[f64], k: usize) -> Result<f64> {
    let usable: Vec<f64> = errors
        .windows(2)
        .filter(|w| w[0] > ERROR_FLOOR && w[1] > ERROR_FLOOR)
        .map(|w| w[1] / w[0])
        .collect();
    // A superlinear tail collapses below the floor almost at once; treat a
    // trajectory that reached the floor with fewer ratios as rate zero.
    let reached_floor = errors.last().is_some_and(|e| *e <= ERROR_FLOOR);
    if usable.len() < 3 {
        if reached_floor && !usable.is_empty() {
            return Ok(0.0);
        }
        return Err(Error::InsufficientData(format!(
            "{} usable error ratios, need at least 3",
            usable.len()
        )));
    }
    let tail = &usable[usable.len().saturating_sub(k.max(1))..];
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64;
    Ok(log_mean.exp())
}

/// Newton direction `(-S)⁻¹ ∇L`, if `S` is negative definite.
pub fn newton_direction(hessian: &Matrix, grad: &[f64]) -> Result<Option<Vec<f64>>> {
    let neg = -hessian;
    if neg.clone().cholesky().is_none() {
        return Ok(None);
    }
    numerics::solve(&neg, grad).map(Some)
}

/// Cosines among the bound-optimizer step, the gradient and the Newton
/// direction at `theta`.
pub fn direction_report<M: IterationMap + ?Sized>(
    map: &M,
    theta: &ParamVector,
    hessian: &Matrix,
) -> Result<DirectionReport> {
    let grad = map.gradient(theta)?;
    let step = sub(&map.step(theta)?.to_chart(), &theta.to_chart());
    let cos_step_grad = cosine(&step, &grad).ok_or_else(|| {
        Error::DegenerateDirection(format!("step norm {:e}, gradient norm {:e}", norm(&step), norm(&grad)))
    })?;
    let newton = newton_direction(hessian, &grad)?;
    Ok(DirectionReport {
        cos_step_grad,
        cos_step_newton: newton.as_ref().and_then(|n| cosine(&step, n)),
        cos_grad_newton: newton.as_ref().and_then(|n| cosine(&grad, n)),
        grad_log_norm: norm(&grad).ln(),
        newton_available: newton.is_some(),
    })
}

/// `|step - (I - M')(-S)⁻¹∇L| / |step|`.
pub fn quasi_newton_residual<M: IterationMap + ?Sized>(
    map: &M,
    theta: &ParamVector,
    rate_matrix: &Matrix,
    hessian: &Matrix,
) -> Result<f64> {
    let grad = map.gradient(theta)?;
    let step = sub(&map.step(theta)?.to_chart(), &theta.to_chart());
    let step_norm = norm(&step);
    if step_norm == 0.0 {
        return Err(Error::DegenerateDirection("zero step".into()));
    }
    let newton = numerics::solve(&(-hessian), &grad)?;
    let n = rate_matrix.nrows();
    let predicted = mat_vec(&(Matrix::identity(n, n) - rate_matrix), &newton);
    Ok(norm(&sub(&step, &predicted)) / step_norm)
}

/// True when `theta` is inside the neighborhood used for quasi-Newton checks.
pub fn is_near_fixed_point<M: IterationMap + ?Sized>(map: &M, theta: &ParamVector) -> Result<bool> {
    let l = map.objective(theta)?;
    Ok(norm(&map.gradient(theta)?) <= NEAR_FIXED_POINT * (1.0 + l.abs()))
}

/// Number of unit eigenvalues explained by the map's analytic gauge directions.
///
/// A gauge direction `g` counts when it is (numerically) an eigenvector of
/// `M'` for an eigenvalue within [`GAUGE_EIGEN_TOL`] of one: `M'g` must be
/// parallel to `g` with cosine at least [`GAUGE_COSINE`].
pub fn detect_gauge<M: IterationMap + ?Sized>(
    spectrum: &Spectrum,
    rate_matrix: &Matrix,
    map: &M,
    fixed_point: &ParamVector,
) -> usize {
    let unit = spectrum
        .eigenvalues
        .iter()
        .filter(|e| (e.re - 1.0).abs() <= GAUGE_EIGEN_TOL && e.im.abs() <= GAUGE_EIGEN_TOL)
        .count();
    if unit == 0 {
        return 0;
    }
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for g in map.gauge_directions(fixed_point) {
        if g.len() != rate_matrix.ncols() || norm(&g) == 0.0 {
            continue;
        }
        let image = mat_vec(rate_matrix, &g);
        let ratio = norm(&image) / norm(&g);
        let aligned = cosine(&image, &g).is_some_and(|c| c >= GAUGE_COSINE);
        if !aligned || (ratio - 1.0).abs() > GAUGE_EIGEN_TOL {
            continue;
        }
        // Keep only directions independent of those already accepted.
        let mut residual = g.clone();
        for a in &accepted {
            let coef = numerics::dot(&residual, a) / numerics::dot(a, a);
            for (r, v) in residual.iter_mut().zip(a) {
                *r -= coef * v;
            }
        }
        if norm(&residual) > 1e-6 * norm(&g) {
            accepted.push(residual);
        }
    }
    accepted.len().min(unit)
}

/// Spectral radius after discarding the `gauge` eigenvalues nearest to one.
pub fn predicted_rate(spectrum: &Spectrum, gauge: usize) -> f64 {
    let mut by_distance: Vec<_> = spectrum.eigenvalues.iter().collect();
    by_distance.sort_by(|a, b| {
        let da = (a.re - 1.0).hypot(a.im);
        let db = (b.re - 1.0).hypot(b.im);
        da.total_cmp(&db)
    });
    by_distance.iter().skip(gauge).map(|e| e.modulus()).fold(0.0, f64::max)
}

/// Full report: rate matrix spectrum, gauge count, predicted rate and, when a
/// trajectory is supplied, the observed rate.
pub fn convergence_report<M: IterationMap + ?Sized>(
    map: &M,
    fixed_point: &ParamVector,
    trajectory: Option<&[ParamVector]>,
) -> Result<ConvergenceReport> {
    let rate = estimate_rate_matrix(map, fixed_point)?;
    report_from_rate_matrix(map, fixed_point, &rate, trajectory)
}

pub fn report_from_rate_matrix<M: IterationMap + ?Sized>(
    map: &M,
    fixed_point: &ParamVector,
    rate: &Matrix,
    trajectory: Option<&[ParamVector]>,
) -> Result<ConvergenceReport> {
    let spectrum = numerics::eig(rate)?;
    let gauge_dimensions = detect_gauge(&spectrum, rate, map, fixed_point);
    let observed_rate = match trajectory {
        Some(t) => observed_rate(t, fixed_point, OBSERVED_WINDOW).ok(),
        None => None,
    };
    Ok(ConvergenceReport {
        spectral_radius: spectrum.spectral_radius,
        predicted_rate: predicted_rate(&spectrum, gauge_dimensions),
        spectrum,
        observed_rate,
        gauge_dimensions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Eigenvalue;
    use crate::optimizer::Sense;

    /// Linear map on a quadratic: `x ↦ x + P ∇L` with `L = -½ xᵀ A x`.
    struct Linear {
        a: Matrix,
        p: Matrix,
    }

    impl IterationMap for Linear {
        fn name(&self) -> &str {
            "linear"
        }
        fn sense(&self) -> Sense {
            Sense::Maximize
        }
        fn objective(&self, t: &ParamVector) -> Result<f64> {
            let ax = mat_vec(&self.a, &t.values);
            Ok(-0.5 * numerics::dot(&t.values, &ax))
        }
        fn gradient(&self, t: &ParamVector) -> Result<Vec<f64>> {
            Ok(mat_vec(&self.a, &t.values).iter().map(|v| -v).collect())
        }
        fn step(&self, t: &ParamVector) -> Result<ParamVector> {
            let g = self.gradient(t)?;
            let d = mat_vec(&self.p, &g);
            t.with_values(t.values.iter().zip(&d).map(|(x, s)| x + s).collect())
        }
    }

    fn newton_map() -> Linear {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = a.clone().try_inverse().unwrap();
        Linear { a, p }
    }

    #[test]
    fn halving_map_has_rate_one_half() {
        let traj: Vec<ParamVector> = (0..30).map(|t| ParamVector::free("x", vec![0.5f64.powi(t)])).collect();
        let star = ParamVector::free("x", vec![0.0]);
        let r = observed_rate(&traj, &star, 10).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn observed_rate_needs_data() {
        let traj: Vec<ParamVector> = (0..3).map(|t| ParamVector::free("x", vec![0.5f64.powi(t)])).collect();
        let star = ParamVector::free("x", vec![0.0]);
        assert!(matches!(
            observed_rate(&traj, &star, 10),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn newton_map_collapses_immediately() {
        let map = newton_map();
        let x0 = ParamVector::free("x", vec![1.0, -2.0]);
        let x1 = map.step(&x0).unwrap();
        assert!(norm(&x1.values) < 1e-15);
        let errs = [norm(&x0.values), 0.3, 0.02, 1e-4, 0.0];
        assert!(observed_rate_from_errors(&errs, 10).unwrap() < 0.1);
    }

    #[test]
    fn rate_matrix_of_linear_map() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let p = Matrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.5]);
        let map = Linear { a, p };
        let star = ParamVector::free("x", vec![0.0, 0.0]);
        let m = estimate_rate_matrix(&map, &star).unwrap();
        // I - P A = diag(0.5, 0.5)
        assert!((m.clone() - Matrix::identity(2, 2) * 0.5).amax() < 1e-9);
        let rep = convergence_report(&map, &star, None).unwrap();
        assert!((rep.predicted_rate - 0.5).abs() < 1e-9);
        assert_eq!(rep.gauge_dimensions, 0);
    }

    #[test]
    fn rate_matrix_rejects_non_fixed_point() {
        let map = newton_map();
        let x = ParamVector::free("x", vec![1.0, 1.0]);
        assert!(matches!(
            estimate_rate_matrix(&map, &x),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn isotropic_gradient_step_aligns_all_directions() {
        let a = Matrix::identity(3, 3) * 2.0;
        let map = Linear {
            a: a.clone(),
            p: Matrix::identity(3, 3) * 0.25,
        };
        let x = ParamVector::free("x", vec![1.0, -0.5, 2.0]);
        let rep = direction_report(&map, &x, &(-a)).unwrap();
        assert!((rep.cos_step_grad - 1.0).abs() < 1e-12);
        assert!((rep.cos_step_newton.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.cos_grad_newton.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.grad_log_norm - (2.0 * norm(&x.values)).ln()).abs() < 1e-12);
    }

    #[test]
    fn direction_report_without_definite_hessian() {
        let map = newton_map();
        let x = ParamVector::free("x", vec![1.0, -0.5]);
        let rep = direction_report(&map, &x, &Matrix::identity(2, 2)).unwrap();
        assert!(!rep.newton_available);
        assert!(rep.cos_step_newton.is_none());
    }

    #[test]
    fn degenerate_direction_at_optimum() {
        let map = newton_map();
        let x = ParamVector::free("x", vec![0.0, 0.0]);
        let err = direction_report(&map, &x, &(-map.a.clone())).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection(_)));
    }

    #[test]
    fn exact_newton_has_zero_quasi_newton_residual() {
        let map = newton_map();
        let x = ParamVector::free("x", vec![0.3, -0.7]);
        let r = quasi_newton_residual(&map, &x, &Matrix::zeros(2, 2), &(-map.a.clone())).unwrap();
        assert!(r < 1e-14, "{r}");
    }

    #[test]
    fn predicted_rate_skips_gauge_eigenvalues() {
        let e = |re| Eigenvalue { re, im: 0.0 };
        let s = Spectrum {
            eigenvalues: vec![e(1.0), e(0.99995), e(0.7), e(0.1)],
            spectral_radius: 1.0,
        };
        assert_eq!(predicted_rate(&s, 0), 1.0);
        assert_eq!(predicted_rate(&s, 2), 0.7);
    }
}
