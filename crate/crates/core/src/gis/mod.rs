//! Generalized Iterative Scaling for enumerable maxent models and binary
//! logistic regression, with feature translation and whitening.

use crate::error::{Error, Result};
use crate::numerics::{symmetric_eigen, Matrix, CONDITION_LIMIT};

pub mod logistic;
pub mod maxent;

pub use logistic::{
    gen_logistic_data, logistic_gis_step, logistic_grad, logistic_log_lik, FeatureTransform, LogisticData,
    LogisticDataSpec, LogisticMap,
};
pub use maxent::{
    gis_rate_matrix, gis_step, maxent_log_lik, translate_features, whiten_features, FeatureStats, MaxentMap,
    MaxentModel,
};

/// Positivity margin left after translating a feature to its minimum.
pub const FEATURE_MARGIN: f64 = 1e-6;

/// Relative ridge added to covariance estimates before whitening.
pub const WHITEN_RIDGE: f64 = 1e-8;

/// `A = W H^{-1/2} Wᵀ` for `cov + ridge·I = W H Wᵀ`, ridge `1e-8·trace/d`.
pub fn whitening_matrix(cov: &Matrix) -> Result<Matrix> {
    let d = cov.nrows();
    if d == 0 || !cov.is_square() {
        return Err(Error::Dimension(
            "covariance estimate must be square and non-empty".into(),
        ));
    }
    if (cov - cov.transpose()).abs().max() > 1e-10 * (1.0 + cov.abs().max()) {
        return Err(Error::Model("covariance estimate is not symmetric".into()));
    }
    let trace = cov.trace();
    let ridged = cov + Matrix::identity(d, d) * (WHITEN_RIDGE * trace / d as f64);
    let (values, vectors) = symmetric_eigen(&ridged)?;
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(trace > 0.0) || !(min > 0.0) || max / min > CONDITION_LIMIT {
        return Err(Error::Singular {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let scale = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        values.iter().map(|v| v.powf(-0.5)),
    ));
    Ok(&vectors * scale * vectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitening_inverts_square_root() {
        let cov = Matrix::from_row_slice(2, 2, &[4.0, 1.5, 1.5, 1.0]);
        let a = whitening_matrix(&cov).unwrap();
        let white = &a * &cov * a.transpose();
        assert!((white - Matrix::identity(2, 2)).abs().max() < 1e-7);
        assert!((&a - a.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        assert!(matches!(
            whitening_matrix(&Matrix::zeros(2, 2)),
            Err(Error::Singular { .. })
        ));
    }
}
