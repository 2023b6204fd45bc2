//! Nonnegative matrix factorization under the generalized KL divergence.

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::em::Points;
use crate::error::{Error, Result};
use crate::numerics::{solve, Matrix};
use crate::optimizer::{IterationMap, Sense};
use crate::param::{Domain, Layout, ParamVector};
use crate::rng;

/// Positivity floor on factor entries.
pub const NMF_FLOOR: f64 = 1e-12;

/// Fixed-point residual required by [`nmf_rate_matrix_analytic`].
pub const NMF_FIXED_POINT_TOL: f64 = 1e-7;

/// `V ≈ W H` with `W` n×r and `H` r×m.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: Matrix,
    pub h: Matrix,
}

impl Factorization {
    pub fn new(w: Matrix, h: Matrix) -> Result<Self> {
        if w.ncols() != h.nrows() || w.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "W is {}x{} but H is {}x{}",
                w.nrows(),
                w.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        if w.iter().chain(h.iter()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Model("factor entries must be positive and finite".into()));
        }
        Ok(Self { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn product(&self) -> Matrix {
        &self.w * &self.h
    }

    /// Uniform(0.5, 1.5) entries scaled by `√(mean(V)/r)`.
    pub fn random_init(v: &Matrix, r: usize, rng: &mut rng::Rng) -> Self {
        let scale = (v.mean().max(NMF_FLOOR) / r as f64).sqrt();
        let mut draw = |rows, cols| Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.5..1.5) * scale);
        let w = draw(v.nrows(), r);
        let h = draw(r, v.ncols());
        Self { w, h }
    }
}

fn check_data(v: &Matrix) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Model("NMF data must be non-negative and finite".into()));
    }
    Ok(())
}

fn check_shapes(v: &Matrix, f: &Factorization) -> Result<()> {
    if f.w.nrows() != v.nrows() || f.h.ncols() != v.ncols() {
        return Err(Error::Dimension(format!(
            "factors give a {}x{} product but V is {}x{}",
            f.w.nrows(),
            f.h.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(())
}

/// `Σ_ij V_ij ln(V_ij/(WH)_ij) − V_ij + (WH)_ij`, with `0·ln 0 = 0`.
pub fn kl_divergence(v: &Matrix, f: &Factorization) -> Result<f64> {
    check_shapes(v, f)?;
    let wh = f.product();
    let mut total = 0.0;
    for (x, y) in v.iter().zip(wh.iter()) {
        total += y - x;
        if *x > 0.0 {
            total += x * (x / y).ln();
        }
    }
    if !total.is_finite() {
        return Err(Error::non_finite("KL divergence"));
    }
    Ok(total)
}

/// `α_ij(a, b) = W_ia H_bj / (WH)_ij`.
pub fn alpha(f: &Factorization, i: usize, j: usize, a: usize, b: usize) -> f64 {
    let vbar: f64 = (0..f.rank()).map(|c| f.w[(i, c)] * f.h[(c, j)]).sum();
    f.w[(i, a)] * f.h[(b, j)] / vbar
}

/// Expected counts of the bound: `A_ic = Σ_j V_ij α_ij(c,c)`,
/// `B_cj = Σ_i V_ij α_ij(c,c)`.
fn split_counts(v: &Matrix, f: &Factorization) -> (Matrix, Matrix) {
    let ratio = v.component_div(&f.product());
    let a = (&ratio * f.h.transpose()).component_mul(&f.w);
    let b = (f.w.transpose() * &ratio).component_mul(&f.h);
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmfUpdate {
    /// Joint minimizer of the bound from `(Wᵗ, Hᵗ)`, with each row sum of
    /// `H` held fixed.
    #[default]
    Joint,
    /// Multiplicative `W` update, then the `H` update using the new `W`.
    Alternating,
}

/// One bound-minimization step.
pub fn nmf_step(v: &Matrix, f: &Factorization, update: NmfUpdate) -> Result<Factorization> {
    check_shapes(v, f)?;
    let r = f.rank();
    let h_sums: Vec<f64> = (0..r).map(|c| f.h.row(c).sum()).collect();
    let (a, b) = split_counts(v, f);
    let mut w = a.clone();
    for c in 0..r {
        w.column_mut(c).scale_mut(1.0 / h_sums[c]);
    }
    let mut h = match update {
        NmfUpdate::Joint => {
            let mut h = b;
            for c in 0..r {
                let t = a.column(c).sum();
                if t <= 0.0 {
                    return Err(Error::non_finite(format!("component {c} carries no mass")));
                }
                h.row_mut(c).scale_mut(h_sums[c] / t);
            }
            h
        }
        NmfUpdate::Alternating => {
            w.iter_mut().for_each(|x| *x = x.max(NMF_FLOOR));
            let mid = Factorization {
                w: w.clone(),
                h: f.h.clone(),
            };
            let (_, b) = split_counts(v, &mid);
            let mut h = b;
            for c in 0..r {
                h.row_mut(c).scale_mut(1.0 / w.column(c).sum());
            }
            h
        }
    };
    w.iter_mut().chain(h.iter_mut()).for_each(|x| *x = x.max(NMF_FLOOR));
    if w.iter().chain(h.iter()).any(|x| !x.is_finite()) {
        return Err(Error::non_finite("NMF update"));
    }
    Ok(Factorization { w, h })
}

/// `(∂L/∂W, ∂L/∂H)` of the divergence.
pub fn nmf_grad(v: &Matrix, f: &Factorization) -> Result<(Matrix, Matrix)> {
    check_shapes(v, f)?;
    let resid = v.component_div(&f.product()).map(|x| 1.0 - x);
    Ok((&resid * f.h.transpose(), f.w.transpose() * &resid))
}

/// The upper bound `G(Θ, Ψ) ≥ L(Θ)` built from `Ψ`'s split weights.
pub fn nmf_bound(v: &Matrix, theta: &Factorization, psi: &Factorization) -> Result<f64> {
    check_shapes(v, theta)?;
    check_shapes(v, psi)?;
    let (n, m, r) = (v.nrows(), v.ncols(), theta.rank());
    let psi_wh = psi.product();
    let mut g = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = v[(i, j)];
            let mut prod = 0.0;
            let mut split = 0.0;
            for c in 0..r {
                let t = theta.w[(i, c)] * theta.h[(c, j)];
                prod += t;
                if x > 0.0 {
                    let al = psi.w[(i, c)] * psi.h[(c, j)] / psi_wh[(i, j)];
                    split += al * (t / al).ln();
                }
            }
            g += prod - x;
            if x > 0.0 {
                g += x * x.ln() - x * split;
            }
        }
    }
    Ok(g)
}

/// Default translation `t = min V − ε`, or the given `t`.
pub fn translate_data(v: &Matrix, t: Option<f64>) -> Result<(Matrix, f64)> {
    check_data(v)?;
    let min = v.min();
    let t = t.unwrap_or(min - NMF_FLOOR);
    if t > min {
        return Err(Error::Negativity { shift: t, min });
    }
    Ok((v.map(|x| x - t), t))
}

/// Packed parameter layout: `W` row-major, then `H` row-major.
fn layout(n: usize, m: usize, r: usize) -> Result<Arc<Layout>> {
    Ok(Arc::new(
        Layout::builder()
            .segment("w", n * r, Domain::Positive)
            .segment("h", r * m, Domain::Positive)
            .build()?,
    ))
}

/// Analytic Jacobian of the joint update at a fixed point, in packed
/// native coordinates. `J = −(H_ΘΘ + CᵀC)⁻¹ (H_ΘΨ + CᵀC_Ψ)` where `H_ΘΘ`,
/// `H_ΘΨ` are the second derivatives of the bound and `C` pins the row sums
/// of `H`, which removes the rescaling freedom of the minimizer.
pub fn nmf_rate_matrix_analytic(v: &Matrix, f: &Factorization) -> Result<Matrix> {
    check_shapes(v, f)?;
    if f.w.iter().chain(f.h.iter()).any(|x| *x <= 10.0 * NMF_FLOOR) {
        return Err(Error::Boundary("factor entry at the positivity floor".into()));
    }
    let next = nmf_step(v, f, NmfUpdate::Joint)?;
    let residual = (&next.w - &f.w).norm().hypot((&next.h - &f.h).norm());
    let size = f.w.norm().hypot(f.h.norm());
    if residual > NMF_FIXED_POINT_TOL * (1.0 + size) {
        return Err(Error::NotConverged { residual });
    }
    let (n, m, r) = (v.nrows(), v.ncols(), f.rank());
    let nw = n * r;
    let dim = nw + r * m;
    let wi = |i: usize, c: usize| i * r + c;
    let hi = |c: usize, j: usize| nw + c * m + j;
    let (w, h) = (&f.w, &f.h);
    let vbar = f.product();
    let (a, b) = split_counts(v, f);

    let mut hess = Matrix::zeros(dim, dim);
    let mut cross = Matrix::zeros(dim, dim);
    for i in 0..n {
        for c in 0..r {
            hess[(wi(i, c), wi(i, c))] = a[(i, c)] / (w[(i, c)] * w[(i, c)]);
            for j in 0..m {
                hess[(wi(i, c), hi(c, j))] = 1.0;
                hess[(hi(c, j), wi(i, c))] = 1.0;
            }
        }
    }
    for c in 0..r {
        for j in 0..m {
            hess[(hi(c, j), hi(c, j))] = b[(c, j)] / (h[(c, j)] * h[(c, j)]);
        }
    }
    for i in 0..n {
        for j in 0..m {
            let q = v[(i, j)] / vbar[(i, j)];
            if q == 0.0 {
                continue;
            }
            for c in 0..r {
                for p in 0..r {
                    let delta = if c == p { 1.0 } else { 0.0 };
                    // ∂²G/∂W_ic ∂Wᵗ_ip
                    cross[(wi(i, c), wi(i, p))] -=
                        q * h[(c, j)] / w[(i, c)] * (delta - w[(i, c)] * h[(p, j)] / vbar[(i, j)]);
                    // ∂²G/∂H_cj ∂Hᵗ_pj
                    cross[(hi(c, j), hi(p, j))] -=
                        q * w[(i, c)] / h[(c, j)] * (delta - w[(i, p)] * h[(c, j)] / vbar[(i, j)]);
                    // ∂²G/∂W_ic ∂Hᵗ_pj
                    cross[(wi(i, c), hi(p, j))] -= q * (delta - w[(i, p)] * h[(c, j)] / vbar[(i, j)]);
                    // ∂²G/∂H_cj ∂Wᵗ_ip
                    cross[(hi(c, j), wi(i, p))] -= q * (delta - w[(i, c)] * h[(p, j)] / vbar[(i, j)]);
                }
            }
        }
    }
    let mut c_theta = Matrix::zeros(r, dim);
    for c in 0..r {
        for j in 0..m {
            c_theta[(c, hi(c, j))] = 1.0;
        }
    }
    let c_psi = -&c_theta;
    let lhs = &hess + c_theta.transpose() * &c_theta;
    let rhs = &cross + c_theta.transpose() * &c_psi;
    let mut jac = Matrix::zeros(dim, dim);
    for col in 0..dim {
        let b: Vec<f64> = rhs.column(col).iter().map(|x| -x).collect();
        let x = solve(&lhs, &b)?;
        jac.column_mut(col).copy_from_slice(&x);
    }
    Ok(jac)
}

/// The NMF update as an iteration map on `(W, H)` in the log chart,
/// maximizing the negated divergence.
#[derive(Debug, Clone)]
pub struct NmfMap {
    v: Matrix,
    rank: usize,
    update: NmfUpdate,
    layout: Arc<Layout>,
}

impl NmfMap {
    pub fn new(v: Matrix, rank: usize, update: NmfUpdate) -> Result<Self> {
        check_data(&v)?;
        if rank == 0 {
            return Err(Error::Model("NMF rank must be positive".into()));
        }
        let layout = layout(v.nrows(), v.ncols(), rank)?;
        Ok(Self {
            v,
            rank,
            update,
            layout,
        })
    }

    pub fn data(&self) -> &Matrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn pack(&self, f: &Factorization) -> Result<ParamVector> {
        check_shapes(&self.v, f)?;
        let mut values: Vec<f64> = f.w.transpose().iter().copied().collect();
        values.extend(f.h.transpose().iter().copied());
        ParamVector::new(values, Arc::clone(&self.layout))
    }

    pub fn unpack(&self, theta: &ParamVector) -> Factorization {
        let (n, m, r) = (self.v.nrows(), self.v.ncols(), self.rank);
        Factorization {
            w: Matrix::from_row_slice(n, r, theta.segment("w").expect("layout")),
            h: Matrix::from_row_slice(r, m, theta.segment("h").expect("layout")),
        }
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let f = Factorization::random_init(&self.v, self.rank, &mut rng::seeded(seed));
        self.pack(&f).expect("matching shapes")
    }
}

impl IterationMap for NmfMap {
    fn name(&self) -> &str {
        "nmf"
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        Ok(-kl_divergence(&self.v, &self.unpack(theta))?)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let f = self.unpack(theta);
        let (gw, gh) = nmf_grad(&self.v, &f)?;
        let mut out: Vec<f64> = gw.component_mul(&f.w).transpose().iter().map(|x| -x).collect();
        out.extend(gh.component_mul(&f.h).transpose().iter().map(|x| -x));
        Ok(out)
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.pack(&nmf_step(&self.v, &self.unpack(theta), self.update)?)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        Some(nmf_bound(&self.v, &self.unpack(theta), &self.unpack(psi)).map(|g| -g))
    }

    /// For each component `c`: `+1` on `ln W_·c`, `−1` on `ln H_c·`.
    fn gauge_directions(&self, _theta: &ParamVector) -> Vec<Vec<f64>> {
        let (n, m, r) = (self.v.nrows(), self.v.ncols(), self.rank);
        (0..r)
            .map(|c| {
                let mut g = vec![0.0; n * r + r * m];
                for i in 0..n {
                    g[i * r + c] = 1.0;
                }
                for j in 0..m {
                    g[n * r + c * m + j] = -1.0;
                }
                g
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfDataSpec {
    /// Dimension of each data vector (rows of V).
    pub dim: usize,
    /// Number of data vectors (columns of V).
    pub count: usize,
    pub offset: f64,
    pub seed: u64,
}

impl NmfDataSpec {
    pub fn benchmark(seed: u64) -> Self {
        Self {
            dim: 16,
            count: 100,
            offset: 20.0,
            seed,
        }
    }
}

/// Columns drawn from `N(0, I)` plus `offset`, clipped at zero.
pub fn gen_nmf_data(spec: &NmfDataSpec) -> Matrix {
    let mut r = rng::seeded(spec.seed);
    let mut v = Matrix::zeros(spec.dim, spec.count);
    for j in 0..spec.count {
        for i in 0..spec.dim {
            let z: f64 = StandardNormal.sample(&mut r);
            v[(i, j)] = (z + spec.offset).max(0.0);
        }
    }
    v
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let p = Points::read_csv(path)?;
    Ok(Matrix::from_row_slice(p.len(), p.dim(), p.values()))
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    Points::new(m.ncols(), m.transpose().iter().copied().collect())?.write_csv(path)
}

/// Writes `W` and `H` as `<stem>_w.csv` and `<stem>_h.csv` inside `dir`.
pub fn write_factors(dir: &Path, stem: &str, f: &Factorization) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let wp = dir.join(format!("{stem}_w.csv"));
    let hp = dir.join(format!("{stem}_h.csv"));
    write_matrix_csv(&wp, &f.w)?;
    write_matrix_csv(&hp, &f.h)?;
    Ok((wp, hp))
}
