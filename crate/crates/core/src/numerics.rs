//! Small dense linear algebra and finite differences.
//!
//! Every matrix handled by this crate is tiny (at most a few hundred rows), so
//! everything here is dense and allocation-happy. Eigenvalues come from a full
//! real Schur decomposition; linear solves go through LU with a singular-value
//! condition estimate in front of them.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Condition number above which a system is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Iteration budget handed to the Schur decomposition.
pub const EIGEN_MAX_ITER: usize = 10_000;

/// A (possibly complex) eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Eigenvalues sorted by modulus, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Spectrum {
    pub eigenvalues: Vec<Eigenvalue>,
    pub spectral_radius: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest real part. For the rate matrices studied here all eigenvalues
    /// are real, so this is the "top eigenvalue".
    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (idx % m.nrows(), idx / m.nrows());
        return Err(Error::non_finite(format!("{what} entry ({r}, {c})")));
    }
    Ok(())
}

/// Full eigenvalue spectrum of a square matrix.
pub fn eig(m: &Matrix) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eig needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "eig input")?;
    if m.nrows() == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            spectral_radius: 0.0,
        });
    }
    // Clustered eigenvalues can stall the deflation test at machine epsilon;
    // retry with a slightly looser one before giving up.
    let schur = [f64::EPSILON, 1e-14, 1e-12]
        .iter()
        .find_map(|eps| Schur::try_new(m.clone(), *eps, EIGEN_MAX_ITER))
        .ok_or(Error::EigenNonConvergence {
            iterations: EIGEN_MAX_ITER,
        })?;
    let mut eigenvalues: Vec<Eigenvalue> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Eigenvalue { re: z.re, im: z.im })
        .collect();
    // Sort by modulus descending; ties broken by real part so conjugate pairs
    // and sign pairs come out in a stable order.
    eigenvalues.sort_by(|a, b| {
        b.modulus()
            .total_cmp(&a.modulus())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    let spectral_radius = eigenvalues[0].modulus();
    Ok(Spectrum {
        eigenvalues,
        spectral_radius,
    })
}

/// Ratio of extreme singular values; infinite for an exactly singular matrix.
pub fn condition_estimate(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m x = b`, refusing systems whose condition estimate exceeds
/// [`CONDITION_LIMIT`].
pub fn solve(m: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !m.is_square() || m.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "solve: matrix {}x{}, rhs {}",
            m.nrows(),
            m.ncols(),
            b.len()
        )));
    }
    check_finite(m, "solve matrix")?;
    let condition = condition_estimate(m);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::Singular { condition });
    }
    let rhs = DVector::from_column_slice(b);
    let lu = m.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::Singular { condition })?;
    // One step of iterative refinement.
    let r = &rhs - m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x.iter().copied().collect())
}

/// Default central-difference step for a point.
pub fn default_step(x0: &[f64]) -> f64 {
    let inf_norm = x0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    f64::max(1e-6, 1e-7 * inf_norm)
}

/// Central-difference Jacobian; column `j` is `(f(x+h e_j) - f(x-h e_j)) / 2h`.
pub fn fd_jacobian<F>(f: F, x0: &[f64], h: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Dimension(format!("step size must be positive, got {h}")));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut jac: Option<Matrix> = None;
    for j in 0..n {
        x[j] = x0[j] + h;
        let plus = f(&x)?;
        x[j] = x0[j] - h;
        let minus = f(&x)?;
        x[j] = x0[j];
        if plus.len() != minus.len() {
            return Err(Error::Dimension("map output length changed".into()));
        }
        let jac = jac.get_or_insert_with(|| Matrix::zeros(plus.len(), n));
        if jac.nrows() != plus.len() {
            return Err(Error::Dimension("map output length changed".into()));
        }
        for i in 0..plus.len() {
            let d = (plus[i] - minus[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::non_finite(format!(
                    "finite difference of output {i} along coordinate {j}"
                )));
            }
            jac[(i, j)] = d;
        }
    }
    match jac {
        Some(j) => Ok(j),
        None => Ok(Matrix::zeros(f(x0)?.len(), 0)),
    }
}

/// Hessian from an analytic gradient: central-difference Jacobian of `g`,
/// symmetrized exactly.
pub fn fd_hessian<G>(g: G, x0: &[f64], h: f64) -> Result<Matrix>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let jac = fd_jacobian(g, x0, h)?;
    if !jac.is_square() {
        return Err(Error::Dimension("gradient length differs from point length".into()));
    }
    let n = jac.nrows();
    let mut out = jac.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (jac[(i, j)] + jac[(j, i)]);
        }
    }
    // Average above guarantees (i,j) and (j,i) are computed from the same two
    // summands, so the result is bit-for-bit symmetric.
    Ok(out)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x0: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let jac = fd_jacobian(|x| Ok(vec![f(x)?]), x0, h)?;
    Ok(jac.row(0).iter().copied().collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Cosine of the angle between two vectors; `None` if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
    }
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().copied().collect()
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric eigendecomposition `(eigenvalues, eigenvectors as columns)`.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric_eigen needs a square matrix".into()));
    }
    check_finite(m, "symmetric_eigen input")?;
    let eig = m.clone().symmetric_eigen();
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) * f(hi) < 0.0);
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
    fn identity_spectrum() {
        let s = eig(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(s.len(), 3);
        for e in &s.eigenvalues {
            assert!((e.re - 1.0).abs() < 1e-14 && e.im.abs() < 1e-14);
        }
        assert!((s.spectral_radius - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_spectrum() {
        let m = Matrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.268]));
        let s = eig(&m).unwrap();
        assert!((s.spectral_radius - 0.5).abs() < 1e-14);
        assert!((s.eigenvalues[1].re - 0.268).abs() < 1e-14);
    }

    #[test]
    fn companion_matrix_golden_ratio() {
        // x^2 - x - 1: companion [[1, 1], [1, 0]]
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        let root = bisect(|x| x * x - x - 1.0, 1.0, 2.0);
        let s = eig(&m).unwrap();
        assert!((s.spectral_radius - root).abs() < 1e-12);
        assert!((root - 1.618_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn rotation_gives_conjugate_pair() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let s = eig(&m).unwrap();
        assert!((s.spectral_radius - 1.0).abs() < 1e-14);
        assert!((s.eigenvalues[0].im + s.eigenvalues[1].im).abs() < 1e-14);
        assert!(s.eigenvalues[0].im.abs() > 0.99);
    }

    #[test]
    fn eig_rejects_non_square() {
        let err = eig(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn solve_examples() {
        assert_eq!(solve(&Matrix::identity(2, 2), &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let d = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = solve(&d, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);

        let m = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = [1.0, 2.0];
        let x = solve(&m, &b).unwrap();
        let r = sub(&mat_vec(&m, &x), &b);
        assert!(norm(&r) <= 1e-12);
    }

    #[test]
    fn solve_flags_singular() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        match solve(&m, &[1.0, 1.0]).unwrap_err() {
            Error::Singular { condition } => assert!(condition > CONDITION_LIMIT),
            e => panic!("unexpected {e:?}"),
        }
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(solve(&m, &[1.0, 1.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let j = fd_jacobian(|x| Ok(x.to_vec()), &[0.3, -2.0, 5.0], 1e-5).unwrap();
        assert!((j - Matrix::identity(3, 3)).amax() < 1e-10);

        let a = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 7.0]);
        let f = |x: &[f64]| Ok(mat_vec(&a, x));
        let j = fd_jacobian(f, &[0.0, 0.0, 0.0], 1e-5).unwrap();
        assert!((j - &a).amax() < 1e-10);
    }

    #[test]
    fn jacobian_reports_non_finite_coordinate() {
        let f = |x: &[f64]| Ok(vec![if x[1] > 1.0 { f64::NAN } else { x[0] }]);
        let err = fd_jacobian(f, &[0.0, 1.0], 1e-3).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn hessian_examples() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = |x: &[f64]| Ok(mat_vec(&a, x));
        let h = fd_hessian(g, &[1.0, -1.0], 1e-5).unwrap();
        assert!((h - &a).amax() < 1e-9);

        // E(x) = x^4 - 3x^2 + 2x - 2, E''(1) = 12 - 6
        let g = |x: &[f64]| Ok(vec![4.0 * x[0].powi(3) - 6.0 * x[0] + 2.0]);
        let h = fd_hessian(g, &[1.0], 1e-6).unwrap();
        assert!((h[(0, 0)] - 6.0).abs() < 1e-6);

        let h = fd_hessian(|_| Ok(vec![0.0, 0.0]), &[3.0, 4.0], 1e-6).unwrap();
        assert_eq!(h, Matrix::zeros(2, 2));
    }

    #[test]
    fn default_step_scales_with_point() {
        assert_eq!(default_step(&[0.1, -0.2]), 1e-6);
        assert!((default_step(&[1e3, 2.0]) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
