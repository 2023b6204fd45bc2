//! The concave-convex procedure: `∇E_vex(Θᵗ⁺¹) = −∇E_cave(Θᵗ)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{eig, norm, solve, Matrix};
use crate::optimizer::{IterationMap, Sense};
use crate::param::{Domain, Layout, ParamVector};

/// Residual tolerance of the implicit update.
pub const INNER_TOL: f64 = 1e-12;

/// Inner iterations before the solve is declared stagnant.
pub const INNER_MAX_ITER: usize = 200;

/// Half-width of the interval on which polynomial decompositions are checked
/// for convexity and concavity.
pub const TRUST_RADIUS: f64 = 10.0;

const CONVEXITY_SAMPLES: usize = 1000;

/// An energy split as `E = E_vex + E_cave`.
pub trait Decomposition {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn vex(&self, x: &[f64]) -> f64;
    fn vex_grad(&self, x: &[f64]) -> Vec<f64>;
    fn vex_hess(&self, x: &[f64]) -> Matrix;
    fn cave(&self, x: &[f64]) -> f64;
    fn cave_grad(&self, x: &[f64]) -> Vec<f64>;
    fn cave_hess(&self, x: &[f64]) -> Matrix;

    fn energy(&self, x: &[f64]) -> f64 {
        self.vex(x) + self.cave(x)
    }

    fn energy_grad(&self, x: &[f64]) -> Vec<f64> {
        self.vex_grad(x)
            .iter()
            .zip(self.cave_grad(x))
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Polynomial coefficients in ascending powers.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect()
}

/// A scalar decomposition with polynomial parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyDecomposition {
    pub name: String,
    /// Coefficients of `E_vex`, constant term first.
    pub vex: Vec<f64>,
    /// Coefficients of `E_cave`, constant term first.
    pub cave: Vec<f64>,
}

impl PolyDecomposition {
    /// Checks convexity of `vex` and concavity of `cave` on the trust region.
    pub fn new(name: impl Into<String>, vex: Vec<f64>, cave: Vec<f64>) -> Result<Self> {
        let d = Self {
            name: name.into(),
            vex,
            cave,
        };
        if d.vex.iter().chain(&d.cave).any(|c| !c.is_finite()) {
            return Err(Error::Model("decomposition coefficients must be finite".into()));
        }
        let (v2, c2) = (derivative(&derivative(&d.vex)), derivative(&derivative(&d.cave)));
        for k in 0..=CONVEXITY_SAMPLES {
            let x = -TRUST_RADIUS + 2.0 * TRUST_RADIUS * k as f64 / CONVEXITY_SAMPLES as f64;
            let (a, b) = (poly(&v2, x), poly(&c2, x));
            let tol = 1e-12 * (1.0 + a.abs() + b.abs());
            if a < -tol {
                return Err(Error::Model(format!(
                    "{}: convex part has curvature {a} at x = {x}",
                    d.name
                )));
            }
            if b > tol {
                return Err(Error::Model(format!(
                    "{}: concave part has curvature {b} at x = {x}",
                    d.name
                )));
            }
        }
        Ok(d)
    }

    /// Coefficients of `E = E_vex + E_cave`.
    pub fn energy_coefficients(&self) -> Vec<f64> {
        let len = self.vex.len().max(self.cave.len());
        (0..len)
            .map(|k| self.vex.get(k).unwrap_or(&0.0) + self.cave.get(k).unwrap_or(&0.0))
            .collect()
    }

    /// Moves `μx²` from the concave part to the convex part and back:
    /// `E_vex + μx²`, `E_cave − μx²`.
    pub fn shifted(&self, mu: f64) -> Result<Self> {
        let mut vex = self.vex.clone();
        let mut cave = self.cave.clone();
        vex.resize(vex.len().max(3), 0.0);
        cave.resize(cave.len().max(3), 0.0);
        vex[2] += mu;
        cave[2] -= mu;
        Self::new(format!("{}+{mu}", self.name), vex, cave)
    }
}

impl Decomposition for PolyDecomposition {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        1
    }
    fn vex(&self, x: &[f64]) -> f64 {
        poly(&self.vex, x[0])
    }
    fn vex_grad(&self, x: &[f64]) -> Vec<f64> {
        vec![poly(&derivative(&self.vex), x[0])]
    }
    fn vex_hess(&self, x: &[f64]) -> Matrix {
        Matrix::from_element(1, 1, poly(&derivative(&derivative(&self.vex)), x[0]))
    }
    fn cave(&self, x: &[f64]) -> f64 {
        poly(&self.cave, x[0])
    }
    fn cave_grad(&self, x: &[f64]) -> Vec<f64> {
        vec![poly(&derivative(&self.cave), x[0])]
    }
    fn cave_hess(&self, x: &[f64]) -> Matrix {
        Matrix::from_element(1, 1, poly(&derivative(&derivative(&self.cave)), x[0]))
    }
}

/// A multivariate test energy with
/// `E_vex(x) = ½xᵀAx + bᵀx + q·Σ x_i⁴`, `E_cave(x) = −½xᵀBx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticDecomposition {
    pub name: String,
    pub a: Matrix,
    pub b: Vec<f64>,
    pub quartic: f64,
    pub cave: Matrix,
}

impl Decomposition for QuadraticDecomposition {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn vex(&self, x: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(x);
        0.5 * v.dot(&(&self.a * &v))
            + v.dot(&nalgebra::DVector::from_column_slice(&self.b))
            + self.quartic * x.iter().map(|t| t.powi(4)).sum::<f64>()
    }
    fn vex_grad(&self, x: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.a * &v)
            .iter()
            .zip(&self.b)
            .zip(x)
            .map(|((a, b), t)| a + b + 4.0 * self.quartic * t.powi(3))
            .collect()
    }
    fn vex_hess(&self, x: &[f64]) -> Matrix {
        let mut h = self.a.clone();
        for (i, t) in x.iter().enumerate() {
            h[(i, i)] += 12.0 * self.quartic * t * t;
        }
        h
    }
    fn cave(&self, x: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(x);
        -0.5 * v.dot(&(&self.cave * &v))
    }
    fn cave_grad(&self, x: &[f64]) -> Vec<f64> {
        (&self.cave * nalgebra::DVector::from_column_slice(x))
            .iter()
            .map(|v| -v)
            .collect()
    }
    fn cave_hess(&self, _x: &[f64]) -> Matrix {
        -&self.cave
    }
}

/// The three splits of `E(x) = x⁴ − 3x² + 2x − 2`, ordered by increasing
/// concave-to-convex curvature.
pub fn quartic_bench() -> Vec<PolyDecomposition> {
    ["dec1", "dec2", "dec3"]
        .iter()
        .map(|n| decomposition(n).expect("registered"))
        .collect()
}

/// Registered decompositions by name.
pub fn decomposition(name: &str) -> Option<PolyDecomposition> {
    let (vex, cave) = match name {
        "dec1" => (vec![0.0, 2.0, 0.0, 0.0, 1.0], vec![-2.0, 0.0, -3.0]),
        "dec2" => (vec![0.0, 2.0, 10.0, 0.0, 1.0], vec![-2.0, 0.0, -13.0]),
        "dec3" => (vec![0.0, 2.0, 0.0, 0.0, 10.0], vec![-2.0, 0.0, -3.0, 0.0, -9.0]),
        _ => return None,
    };
    Some(PolyDecomposition::new(name, vex, cave).expect("registered decompositions are valid"))
}

/// Solves `∇E_vex(x) = −∇E_cave(xᵗ)`.
pub fn cccp_step<D: Decomposition + ?Sized>(d: &D, xt: &[f64]) -> Result<Vec<f64>> {
    if xt.len() != d.dim() {
        return Err(Error::Dimension(format!(
            "point has {} coordinates, energy needs {}",
            xt.len(),
            d.dim()
        )));
    }
    let target: Vec<f64> = d.cave_grad(xt).iter().map(|v| -v).collect();
    let tol = INNER_TOL * (1.0 + norm(&target));
    let residual = |x: &[f64]| -> Vec<f64> { d.vex_grad(x).iter().zip(&target).map(|(a, b)| a - b).collect() };
    // the update minimizes the convex φ(x) = E_vex(x) − xᵀ·target
    let phi = |x: &[f64]| d.vex(x) - x.iter().zip(&target).map(|(a, b)| a * b).sum::<f64>();
    let mut x = xt.to_vec();
    let mut r = residual(&x);
    for _ in 0..INNER_MAX_ITER {
        if norm(&r) <= tol {
            return Ok(x);
        }
        let dir = match solve(&d.vex_hess(&x), &r) {
            Ok(dir) => dir,
            Err(_) => break,
        };
        let base = phi(&x);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - t * b).collect();
            let cr = residual(&cand);
            if phi(&cand) <= base || norm(&cr) < norm(&r) {
                x = cand;
                r = cr;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if norm(&r) <= tol {
        return Ok(x);
    }
    if d.dim() == 1 {
        return bisect_step(d, xt[0], target[0], tol);
    }
    Err(Error::InnerSolve {
        iterations: INNER_MAX_ITER,
        residual: norm(&r),
    })
}

/// 1-d fallback: `E_vex'` is non-decreasing, so expand a bracket around `xᵗ`
/// and bisect.
fn bisect_step<D: Decomposition + ?Sized>(d: &D, xt: f64, target: f64, tol: f64) -> Result<Vec<f64>> {
    let g = |x: f64| d.vex_grad(&[x])[0] - target;
    let mut width = 1.0 + xt.abs();
    let (mut lo, mut hi) = (xt - width, xt + width);
    let mut expansions = 0;
    while g(lo) > 0.0 || g(hi) < 0.0 {
        width *= 2.0;
        lo = xt - width;
        hi = xt + width;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::InnerSolve {
                iterations: expansions,
                residual: g(xt).abs(),
            });
        }
    }
    for _ in 0..INNER_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol || hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
            return Ok(vec![mid]);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Err(Error::InnerSolve {
        iterations: INNER_MAX_ITER,
        residual: g(mid).abs(),
    })
}

/// Jacobian of [`cccp_step`] at a fixed point,
/// `−[∂²E_vex]⁻¹[∂²E_cave]`. For scalar energies this equals the curvature
/// ratio `−E_cave''/E_vex''`; in general it is the transpose of
/// `−[∂²E_cave][∂²E_vex]⁻¹` and shares its spectrum.
pub fn cccp_rate_matrix<D: Decomposition + ?Sized>(d: &D, x: &[f64]) -> Result<Matrix> {
    let next = cccp_step(d, x)?;
    let residual = norm(&next.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>());
    if residual > 1e-7 * (1.0 + norm(x)) {
        return Err(Error::NotConverged { residual });
    }
    curvature_ratio(d, x)
}

fn curvature_ratio<D: Decomposition + ?Sized>(d: &D, x: &[f64]) -> Result<Matrix> {
    let vex = d.vex_hess(x);
    let cave = d.cave_hess(x);
    let n = d.dim();
    let mut m = Matrix::zeros(n, n);
    for col in 0..n {
        let rhs: Vec<f64> = cave.column(col).iter().map(|v| -v).collect();
        m.column_mut(col).copy_from_slice(&solve(&vex, &rhs)?);
    }
    Ok(m)
}

/// Spectral radius of the curvature ratio at a probe point; lower is faster.
pub fn decomposition_ratio_score<D: Decomposition + ?Sized>(d: &D, x: &[f64]) -> Result<f64> {
    Ok(eig(&curvature_ratio(d, x)?)?.spectral_radius)
}

/// CCCP as an iteration map maximizing `−E`.
pub struct CccpMap<D> {
    decomposition: D,
    layout: Arc<Layout>,
}

impl<D: Decomposition> CccpMap<D> {
    pub fn new(decomposition: D) -> Result<Self> {
        let layout = Arc::new(
            Layout::builder()
                .segment("x", decomposition.dim(), Domain::Free)
                .build()?,
        );
        Ok(Self { decomposition, layout })
    }

    pub fn decomposition(&self) -> &D {
        &self.decomposition
    }

    pub fn pack(&self, x: &[f64]) -> Result<ParamVector> {
        ParamVector::new(x.to_vec(), Arc::clone(&self.layout))
    }
}

impl<D: Decomposition> IterationMap for CccpMap<D> {
    fn name(&self) -> &str {
        "cccp"
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        Ok(-self.decomposition.energy(&theta.values))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        Ok(self
            .decomposition
            .energy_grad(&theta.values)
            .iter()
            .map(|g| -g)
            .collect())
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.pack(&cccp_step(&self.decomposition, &theta.values)?)
    }

    /// `−[E_vex(Θ) + E_cave(Ψ) + (Θ − Ψ)ᵀ∇E_cave(Ψ)]`.
    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        let d = &self.decomposition;
        let (t, p) = (&theta.values, &psi.values);
        let lin: f64 = t.iter().zip(p).zip(d.cave_grad(p)).map(|((a, b), g)| (a - b) * g).sum();
        Some(Ok(-(d.vex(t) + d.cave(p) + lin)))
    }
}
