//! Iterative scaling for two-class logistic regression.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{whitening_matrix, FEATURE_MARGIN};
use crate::em::Points;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::optimizer::IterationMap;
use crate::param::{Domain, Layout, ParamVector};
use crate::rng;

/// Positive feature rows with a constant bias column of 1 appended, and
/// labels in {+1, −1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    width: usize,
    xs: Vec<f64>,
    ys: Vec<i8>,
    s: f64,
    /// `Σ_{y=+1} x_n`.
    observed: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)`, stable for large |z|.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl LogisticData {
    pub fn new(features: &Points, ys: Vec<i8>) -> Result<Self> {
        if features.len() != ys.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.len(),
                ys.len()
            )));
        }
        if let Some(bad) = ys.iter().find(|y| **y != 1 && **y != -1) {
            return Err(Error::Model(format!("label {bad} is not +1 or -1")));
        }
        for label in [1, -1] {
            if !ys.contains(&label) {
                return Err(Error::DegenerateLabel(label));
            }
        }
        if features.values().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Model("logistic features must be strictly positive".into()));
        }
        let width = features.dim() + 1;
        let mut xs = Vec::with_capacity(features.len() * width);
        for row in features.rows() {
            xs.extend_from_slice(row);
            xs.push(1.0);
        }
        let s = xs
            .chunks(width)
            .map(|r| r.iter().sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut observed = vec![0.0; width];
        for (x, _) in xs.chunks(width).zip(&ys).filter(|(_, y)| **y == 1) {
            observed.iter_mut().zip(x).for_each(|(o, xi)| *o += xi);
        }
        Ok(Self {
            width,
            xs,
            ys,
            s,
            observed,
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Length of `w`, bias included.
    pub fn dim(&self) -> usize {
        self.width
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.xs[n * self.width..(n + 1) * self.width]
    }

    pub fn labels(&self) -> &[i8] {
        &self.ys
    }

    /// Non-bias features.
    pub fn features(&self) -> Points {
        let d = self.width - 1;
        let values = self
            .xs
            .chunks(self.width)
            .flat_map(|r| r[..d].iter().copied())
            .collect();
        Points::new(d, values).expect("stored features are valid")
    }

    /// `s = max_n Σ_i x_ni`.
    pub fn s(&self) -> f64 {
        self.s
    }

    fn score(&self, n: usize, w: &[f64]) -> f64 {
        self.row(n).iter().zip(w).map(|(x, w)| x * w).sum()
    }

    /// `p(y = +1 | x_n, w)` for every row.
    pub fn probabilities(&self, w: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|n| sigmoid(self.score(n, w))).collect()
    }

    /// Reads a header-less CSV whose first column is the label.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = Points::read_csv(path)?;
        if table.dim() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "need a label column and at least one feature".into(),
            });
        }
        let mut ys = Vec::with_capacity(table.len());
        let mut values = Vec::new();
        for row in table.rows() {
            ys.push(if row[0] > 0.0 { 1 } else { -1 });
            values.extend_from_slice(&row[1..]);
        }
        Self::new(&Points::new(table.dim() - 1, values)?, ys)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.width - 1;
        let mut values = Vec::with_capacity(self.len() * self.width);
        for (n, y) in self.ys.iter().enumerate() {
            values.push(f64::from(*y));
            values.extend_from_slice(&self.row(n)[..d]);
        }
        Points::new(self.width, values)?.write_csv(path)
    }
}

pub fn logistic_log_lik(data: &LogisticData, w: &[f64]) -> Result<f64> {
    check_dim(data, w)?;
    let total: f64 = (0..data.len())
        .map(|n| log_sigmoid(f64::from(data.ys[n]) * data.score(n, w)))
        .sum();
    if !total.is_finite() {
        return Err(Error::non_finite("logistic log-likelihood"));
    }
    Ok(total)
}

fn check_dim(data: &LogisticData, w: &[f64]) -> Result<()> {
    if w.len() != data.dim() {
        return Err(Error::Dimension(format!(
            "w has {} entries, data needs {}",
            w.len(),
            data.dim()
        )));
    }
    Ok(())
}

/// `Σ_n σ(wᵀx_n) x_n`.
fn expected_features(data: &LogisticData, w: &[f64]) -> Vec<f64> {
    let mut expected = vec![0.0; data.dim()];
    for x in data.xs.chunks_exact(data.width) {
        let p = sigmoid(x.iter().zip(w).map(|(a, b)| a * b).sum());
        expected.iter_mut().zip(x).for_each(|(e, xi)| *e += p * xi);
    }
    expected
}

pub fn logistic_grad(data: &LogisticData, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(data, w)?;
    let expected = expected_features(data, w);
    Ok(data.observed.iter().zip(&expected).map(|(o, e)| o - e).collect())
}

pub fn logistic_gis_step(data: &LogisticData, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(data, w)?;
    let expected = expected_features(data, w);
    let s = data.s;
    w.iter()
        .zip(data.observed.iter().zip(&expected))
        .enumerate()
        .map(|(i, (wi, (o, e)))| {
            let next = wi + (o / e).ln() / s;
            if next.is_finite() {
                Ok(next)
            } else {
                Err(Error::non_finite(format!("logistic GIS update of weight {i}")))
            }
        })
        .collect()
}

/// Affine feature preprocessing `x ↦ A x − V` applied to the non-bias columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform {
    pub a: Matrix,
    pub shift: Vec<f64>,
}

impl FeatureTransform {
    pub fn identity(d: usize) -> Self {
        Self {
            a: Matrix::identity(d, d),
            shift: vec![0.0; d],
        }
    }

    /// `V_i = min_n x_ni − margin`.
    pub fn translate(features: &Points) -> Self {
        let mut t = Self::identity(features.dim());
        t.shift = column_minima(features).iter().map(|m| m - FEATURE_MARGIN).collect();
        t
    }

    /// Whitening with the ridged sample covariance, then translation.
    pub fn whiten(features: &Points) -> Result<Self> {
        let a = whitening_matrix(&features.covariance())?;
        let mut t = Self {
            a,
            shift: vec![0.0; features.dim()],
        };
        let rotated = t.apply(features)?;
        t.shift = column_minima(&rotated).iter().map(|m| m - FEATURE_MARGIN).collect();
        Ok(t)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &FeatureTransform) -> Self {
        let a = &next.a * &self.a;
        let carried = &next.a * DVector::from_column_slice(&self.shift);
        let shift = carried.iter().zip(&next.shift).map(|(c, s)| c + s).collect();
        Self { a, shift }
    }

    pub fn apply(&self, features: &Points) -> Result<Points> {
        let mut values = Vec::with_capacity(features.values().len());
        for row in features.rows() {
            let y = &self.a * DVector::from_column_slice(row);
            values.extend(y.iter().zip(&self.shift).map(|(v, s)| v - s));
        }
        Points::new(features.dim(), values)
    }

    /// Weights on the original features inducing the same scores as `w` on
    /// the transformed ones.
    pub fn weights_to_original(&self, w: &[f64]) -> Vec<f64> {
        let d = self.shift.len();
        let head = DVector::from_column_slice(&w[..d]);
        let mut out: Vec<f64> = (self.a.transpose() * &head).iter().copied().collect();
        out.push(w[d] - head.iter().zip(&self.shift).map(|(a, b)| a * b).sum::<f64>());
        out
    }
}

fn column_minima(features: &Points) -> Vec<f64> {
    (0..features.dim())
        .map(|i| features.rows().map(|r| r[i]).fold(f64::INFINITY, f64::min))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticDataSpec {
    pub n: usize,
    pub d: usize,
    /// Draw features with a rotated, anisotropic covariance instead of `2I`.
    pub oriented: bool,
    pub offset: f64,
    pub seed: u64,
}

impl LogisticDataSpec {
    pub fn benchmark(oriented: bool, seed: u64) -> Self {
        Self {
            n: 2000,
            d: 2,
            oriented,
            offset: 20.0,
            seed,
        }
    }
}

/// Largest and smallest covariance eigenvalues of the oriented design.
const ORIENTED_SPREAD: (f64, f64) = (8.0, 0.5);

/// Features, labels and the generating weights (without bias).
pub fn gen_logistic_data(spec: &LogisticDataSpec) -> (Points, Vec<i8>, Vec<f64>) {
    let d = spec.d.max(1);
    let mut r = rng::seeded(spec.seed);
    let normal = |r: &mut rng::Rng| -> f64 { StandardNormal.sample(r) };
    let raw: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w_true: Vec<f64> = raw.iter().map(|v| v * 2f64.sqrt() / len).collect();
    let transform = if spec.oriented {
        let g = Matrix::from_fn(d, d, |_, _| normal(&mut r));
        let q = g.qr().q();
        let (hi, lo) = ORIENTED_SPREAD;
        let scales = DVector::from_fn(d, |k, _| {
            let t = if d > 1 { k as f64 / (d - 1) as f64 } else { 0.0 };
            (hi * (lo / hi).powf(t)).sqrt()
        });
        &q * Matrix::from_diagonal(&scales)
    } else {
        Matrix::identity(d, d) * 2f64.sqrt()
    };
    let mut values = Vec::with_capacity(spec.n * d);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z = DVector::from_fn(d, |_, _| normal(&mut r));
        let x = &transform * z;
        let score: f64 = x.iter().zip(&w_true).map(|(a, b)| a * b).sum();
        let u: f64 = r.random();
        ys.push(if u < sigmoid(score) { 1 } else { -1 });
        values.extend(x.iter().map(|v| v + spec.offset));
    }
    (Points::new(d, values).expect("finite features"), ys, w_true)
}

/// Logistic iterative scaling as an iteration map over `w` (bias last).
#[derive(Debug, Clone)]
pub struct LogisticMap {
    data: LogisticData,
    layout: Arc<Layout>,
}

impl LogisticMap {
    pub fn new(data: LogisticData) -> Result<Self> {
        let layout = Arc::new(Layout::builder().segment("w", data.dim(), Domain::Free).build()?);
        Ok(Self { data, layout })
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }

    pub fn pack(&self, w: &[f64]) -> Result<ParamVector> {
        ParamVector::new(w.to_vec(), Arc::clone(&self.layout))
    }

    pub fn zero(&self) -> ParamVector {
        self.pack(&vec![0.0; self.data.dim()]).expect("matching layout")
    }

    fn bound(&self, w: &[f64], psi: &[f64]) -> Result<f64> {
        let s = self.data.s();
        let delta: Vec<f64> = w.iter().zip(psi).map(|(a, b)| a - b).collect();
        let growth: Vec<f64> = delta.iter().map(|d| (s * d).exp()).collect();
        let mut g = logistic_log_lik(&self.data, psi)?;
        for (n, p) in self.data.probabilities(psi).iter().enumerate() {
            let x = self.data.row(n);
            if self.data.ys[n] == 1 {
                g += x.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
            }
            let total: f64 = x.iter().sum();
            let mix: f64 = x.iter().zip(&growth).map(|(xi, e)| xi / s * e).sum();
            g += p - p * (mix + (s - total) / s);
        }
        Ok(g)
    }
}

impl IterationMap for LogisticMap {
    fn name(&self) -> &str {
        "gis-logistic"
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        logistic_log_lik(&self.data, &theta.values)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        logistic_grad(&self.data, &theta.values)
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.pack(&logistic_gis_step(&self.data, &theta.values)?)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        Some(self.bound(&theta.values, &psi.values))
    }
}
