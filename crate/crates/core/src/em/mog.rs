//! EM for mixtures of full-covariance Gaussians.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;
use crate::optimizer::IterationMap;
use crate::param::{Domain, Layout, ParamVector};

use super::Points;

/// Floor on covariance eigenvalues.
pub const COV_FLOOR: f64 = 1e-6;

/// Total responsibility below which a component is considered empty.
const EMPTY_COMPONENT: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct MogParams {
    pub weights: Vec<f64>,
    /// One mean vector per component.
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl MogParams {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = (self.components(), self.dim());
        if m == 0 || self.means.len() != m || self.covariances.len() != m {
            return Err(Error::Model("component counts disagree".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::Model("mixing weights must be a positive simplex".into()));
        }
        for (k, (mu, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mu.len() != d || cov.nrows() != d || cov.ncols() != d {
                return Err(Error::Model(format!("component {k} has wrong dimensions")));
            }
            let min_eig = cov.clone().symmetric_eigenvalues().min();
            if min_eig < COV_FLOOR * (1.0 - 1e-9) {
                return Err(Error::Model(format!(
                    "component {k} covariance eigenvalue {min_eig:e} below floor"
                )));
            }
        }
        Ok(())
    }

    /// Moment-based start: means at evenly spaced quantiles of the first
    /// coordinate, every covariance equal to the data covariance, equal weights.
    pub fn quantile_init(data: &Points, m: usize) -> Result<Self> {
        if data.len() < m || m == 0 {
            return Err(Error::Model(format!("need at least {m} points for {m} components")));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data.row(a)[0].total_cmp(&data.row(b)[0]));
        let means = (0..m)
            .map(|k| {
                let q = ((k as f64 + 0.5) / m as f64 * data.len() as f64) as usize;
                data.row(order[q.min(data.len() - 1)]).to_vec()
            })
            .collect();
        let cov = floor_covariance(data.covariance());
        Ok(Self {
            weights: vec![1.0 / m as f64; m],
            means,
            covariances: vec![cov; m],
        })
    }

    /// Random start: means at distinct random data points, data covariance,
    /// weights perturbed around uniform.
    pub fn random_init(data: &Points, m: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        if data.len() < m || m == 0 {
            return Err(Error::Model(format!("need at least {m} points for {m} components")));
        }
        let picks = rand::seq::index::sample(rng, data.len(), m);
        let means = picks.iter().map(|i| data.row(i).to_vec()).collect();
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
        let z: f64 = raw.iter().sum();
        let cov = floor_covariance(data.covariance());
        Ok(Self {
            weights: raw.iter().map(|w| w / z).collect(),
            means,
            covariances: vec![cov; m],
        })
    }
}

/// Symmetrizes and lifts eigenvalues below [`COV_FLOOR`].
pub fn floor_covariance(cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let mut sym = cov.clone();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= COV_FLOOR {
        return sym;
    }
    // Add rank-one lifts to the original entries instead of rebuilding the
    // matrix from its eigenvectors: a floored covariance is badly conditioned
    // and the rebuild would cost the likelihood far more than its roundoff.
    let mut out = sym.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < COV_FLOOR {
            let v = eig.eigenvectors.column(k);
            out += (COV_FLOOR - lambda) * v * v.transpose();
        }
    }
    let mut sym = out.clone();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    sym
}

/// Cached per-component quantities for density evaluation.
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn prepare(params: &MogParams) -> Result<Vec<Component>> {
        let d = params.dim() as f64;
        params
            .weights
            .iter()
            .zip(&params.means)
            .zip(&params.covariances)
            .enumerate()
            .map(|(k, ((w, mu), cov))| {
                let chol = cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Model(format!("component {k} covariance not positive definite")))?
                    .l();
                let log_det_half: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
                Ok(Component {
                    log_weight: w.ln(),
                    mean: DVector::from_column_slice(mu),
                    chol,
                    log_norm: -0.5 * d * LN_2PI - log_det_half,
                })
            })
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Log joint `ln π_k + ln N(x_n | μ_k, Σ_k)` for every point and component.
fn log_joint(params: &MogParams, data: &Points) -> Result<Vec<Vec<f64>>> {
    let comps = Component::prepare(params)?;
    Ok((0..data.len())
        .map(|n| {
            let x = data.row(n);
            comps.iter().map(|c| c.log_weight + c.log_density(x)).collect()
        })
        .collect())
}

/// `Σ_n ln Σ_k π_k N(x_n | μ_k, Σ_k)`.
pub fn mog_log_lik(params: &MogParams, data: &Points) -> Result<f64> {
    let lj = log_joint(params, data)?;
    let mut total = 0.0;
    for (n, row) in lj.iter().enumerate() {
        let v = log_sum_exp(row);
        if !v.is_finite() {
            return Err(Error::non_finite(format!("log density of datum {n}")));
        }
        total += v;
    }
    Ok(total)
}

/// Posterior component probabilities, one row per datum.
pub fn responsibilities(params: &MogParams, data: &Points) -> Result<Vec<Vec<f64>>> {
    let lj = log_joint(params, data)?;
    Ok(lj
        .into_iter()
        .map(|row| {
            let z = log_sum_exp(&row);
            row.iter().map(|v| (v - z).exp()).collect()
        })
        .collect())
}

/// One EM update.
pub fn mog_em_step(params: &MogParams, data: &Points) -> Result<MogParams> {
    let resp = responsibilities(params, data)?;
    m_step(&resp, data)
}

/// Closed-form maximizer of the expected complete log-likelihood.
pub fn m_step(resp: &[Vec<f64>], data: &Points) -> Result<MogParams> {
    let m = resp.first().map_or(0, Vec::len);
    let d = data.dim();
    let n = data.len() as f64;
    let mut weights = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut covariances = Vec::with_capacity(m);
    for k in 0..m {
        let nk: f64 = resp.iter().map(|r| r[k]).sum();
        if nk < EMPTY_COMPONENT {
            return Err(Error::DegenerateComponent { component: k });
        }
        let mut mu = vec![0.0; d];
        for (i, r) in resp.iter().enumerate() {
            for (acc, x) in mu.iter_mut().zip(data.row(i)) {
                *acc += r[k] * x;
            }
        }
        mu.iter_mut().for_each(|v| *v /= nk);
        let mut cov = DMatrix::zeros(d, d);
        for (i, r) in resp.iter().enumerate() {
            let x = data.row(i);
            for a in 0..d {
                let da = x[a] - mu[a];
                for b in 0..=a {
                    cov[(a, b)] += r[k] * da * (x[b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / nk;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        weights.push(nk / n);
        means.push(mu);
        covariances.push(floor_covariance(cov));
    }
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok(MogParams {
        weights,
        means,
        covariances,
    })
}

/// Gradient of the log-likelihood in the chart of [`MogEm::layout`]:
/// log-ratio weights, free means, log-Cholesky covariances.
pub fn mog_grad(params: &MogParams, data: &Points) -> Result<Vec<f64>> {
    let resp = responsibilities(params, data)?;
    let (m, d) = (params.components(), params.dim());
    let n = data.len() as f64;
    let nk: Vec<f64> = (0..m).map(|k| resp.iter().map(|r| r[k]).sum()).collect();
    let mut out = Vec::with_capacity(m - 1 + m * d + m * d * (d + 1) / 2);
    for k in 0..m - 1 {
        out.push(nk[k] - n * params.weights[k]);
    }
    let mut cov_blocks = Vec::with_capacity(m);
    for k in 0..m {
        let cov = &params.covariances[k];
        let prec = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Model(format!("component {k} covariance not positive definite")))?
            .inverse();
        let mu = DVector::from_column_slice(&params.means[k]);
        let mut first = DVector::zeros(d);
        let mut scatter = DMatrix::zeros(d, d);
        for (i, r) in resp.iter().enumerate() {
            let diff = DVector::from_column_slice(data.row(i)) - &mu;
            first += &diff * r[k];
            scatter += &diff * diff.transpose() * r[k];
        }
        out.extend((&prec * first).iter());
        // dL/dΣ = ½ (P S P - N_k P)
        let g = (&prec * scatter * &prec - &prec * nk[k]) * 0.5;
        let l = cov.clone().cholesky().expect("checked above").l();
        let gl = &g * &l * 2.0;
        let mut block = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                block.push(if i == j { gl[(i, j)] * l[(i, j)] } else { gl[(i, j)] });
            }
        }
        cov_blocks.push(block);
    }
    for b in cov_blocks {
        out.extend(b);
    }
    Ok(out)
}

/// The EM iteration map for a Gaussian mixture on a fixed data set.
#[derive(Debug, Clone)]
pub struct MogEm {
    data: Points,
    layout: Arc<Layout>,
    components: usize,
}

impl MogEm {
    pub fn new(data: Points, components: usize) -> Result<Self> {
        if components == 0 {
            return Err(Error::Model("need at least one component".into()));
        }
        let d = data.dim();
        let mut b = Layout::builder();
        // A single component has a trivial simplex; keep it out of the chart.
        if components > 1 {
            b = b.segment("weights", components, Domain::SimplexRow { width: components });
        }
        b = b.segment("means", components * d, Domain::Free);
        for k in 0..components {
            b = b.segment(format!("cov{k}"), d * d, Domain::SpdMatrix { dim: d });
        }
        Ok(Self {
            data,
            layout: Arc::new(b.build()?),
            components,
        })
    }

    pub fn data(&self) -> &Points {
        &self.data
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn pack(&self, p: &MogParams) -> Result<ParamVector> {
        if p.components() != self.components || p.dim() != self.data.dim() {
            return Err(Error::Model("parameters do not match the model shape".into()));
        }
        let mut values = Vec::with_capacity(self.layout.len());
        if self.components > 1 {
            values.extend_from_slice(&p.weights);
        }
        for mu in &p.means {
            values.extend_from_slice(mu);
        }
        for cov in &p.covariances {
            let d = cov.nrows();
            for i in 0..d {
                for j in 0..d {
                    values.push(cov[(i, j)]);
                }
            }
        }
        ParamVector::new(values, Arc::clone(&self.layout))
    }

    pub fn unpack(&self, v: &ParamVector) -> MogParams {
        let (m, d) = (self.components, self.data.dim());
        let weights = match v.segment("weights") {
            Some(w) => w.to_vec(),
            None => vec![1.0],
        };
        let means_flat = v.segment("means").expect("layout has means");
        let means = means_flat.chunks(d).map(<[f64]>::to_vec).collect();
        let covariances = (0..m)
            .map(|k| DMatrix::from_row_slice(d, d, v.segment(&format!("cov{k}")).expect("layout has cov")))
            .collect();
        MogParams {
            weights,
            means,
            covariances,
        }
    }

    /// Expected complete log-likelihood under `psi`'s posterior plus the
    /// posterior entropy; touches the log-likelihood at `theta = psi`.
    pub fn bound(&self, theta: &MogParams, psi: &MogParams) -> Result<f64> {
        let resp = responsibilities(psi, &self.data)?;
        let lj = log_joint(theta, &self.data)?;
        let mut g = 0.0;
        for (r, l) in resp.iter().zip(&lj) {
            for (rk, lk) in r.iter().zip(l) {
                if *rk > 0.0 {
                    g += rk * (lk - rk.ln());
                }
            }
        }
        Ok(g)
    }
}

impl IterationMap for MogEm {
    fn name(&self) -> &str {
        "em-mog"
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        mog_log_lik(&self.unpack(theta), &self.data)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        mog_grad(&self.unpack(theta), &self.data)
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        let next = mog_em_step(&self.unpack(theta), &self.data)?;
        self.pack(&next)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        Some(self.bound(&self.unpack(theta), &self.unpack(psi)))
    }
}

/// EM over the component means alone; weights and covariances stay at the
/// values given to [`MogMeansEm::new`]. With two components in one
/// dimension this is the two-parameter likelihood surface of a contour plot.
#[derive(Debug, Clone)]
pub struct MogMeansEm {
    data: Points,
    fixed: MogParams,
    layout: Arc<Layout>,
}

impl MogMeansEm {
    pub fn new(data: Points, fixed: MogParams) -> Result<Self> {
        fixed.validate()?;
        if fixed.dim() != data.dim() {
            return Err(Error::Dimension(format!(
                "model has dimension {}, data {}",
                fixed.dim(),
                data.dim()
            )));
        }
        let layout = Arc::new(
            Layout::builder()
                .segment("means", fixed.components() * data.dim(), Domain::Free)
                .build()?,
        );
        Ok(Self { data, fixed, layout })
    }

    pub fn pack(&self, means: &[f64]) -> Result<ParamVector> {
        ParamVector::new(means.to_vec(), Arc::clone(&self.layout))
    }

    pub fn unpack(&self, v: &ParamVector) -> MogParams {
        MogParams {
            means: v.values.chunks(self.data.dim()).map(<[f64]>::to_vec).collect(),
            ..self.fixed.clone()
        }
    }

    pub fn log_lik(&self, means: &[f64]) -> Result<f64> {
        mog_log_lik(&self.unpack(&self.pack(means)?), &self.data)
    }
}

impl IterationMap for MogMeansEm {
    fn name(&self) -> &str {
        "em-mog-means"
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        mog_log_lik(&self.unpack(theta), &self.data)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let g = mog_grad(&self.unpack(theta), &self.data)?;
        let start = self.fixed.components() - 1;
        Ok(g[start..start + theta.len()].to_vec())
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        let resp = responsibilities(&self.unpack(theta), &self.data)?;
        let d = self.data.dim();
        let mut means = Vec::with_capacity(theta.len());
        for k in 0..self.fixed.components() {
            let total: f64 = resp.iter().map(|r| r[k]).sum();
            if total < 1e-12 {
                return Err(Error::DegenerateComponent { component: k });
            }
            for axis in 0..d {
                means.push(
                    resp.iter()
                        .enumerate()
                        .map(|(i, r)| r[k] * self.data.row(i)[axis])
                        .sum::<f64>()
                        / total,
                );
            }
        }
        self.pack(&means)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        let em = MogEm::new(self.data.clone(), self.fixed.components()).ok()?;
        Some(em.bound(&self.unpack(theta), &self.unpack(psi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::data::{gen_mog_data, MogDataSpec, Separation};
    use crate::numerics::{fd_gradient, norm};
    use crate::optimizer::{run, StopRule};
    use crate::rng;

    fn two_comp() -> MogParams {
        MogParams {
            weights: vec![0.3, 0.7],
            means: vec![vec![-1.0], vec![2.0]],
            covariances: vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 2.0)],
        }
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn standard_normal_at_zero() {
        let p = MogParams {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            covariances: vec![DMatrix::identity(1, 1)],
        };
        let data = Points::new(1, vec![0.0]).unwrap();
        let l = mog_log_lik(&p, &data).unwrap();
        assert!((l + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_component_matches_single() {
        let single = MogParams {
            weights: vec![1.0],
            means: vec![vec![0.3, -0.2]],
            covariances: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])],
        };
        let dup = MogParams {
            weights: vec![0.5, 0.5],
            means: vec![single.means[0].clone(); 2],
            covariances: vec![single.covariances[0].clone(); 2],
        };
        let data = Points::new(2, vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.5]).unwrap();
        let a = mog_log_lik(&single, &data).unwrap();
        let b = mog_log_lik(&dup, &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_lik_matches_direct_density_sum() {
        let p = two_comp();
        let xs = [-2.0, -0.5, 0.1, 1.7, 3.3];
        let data = Points::new(1, xs.to_vec()).unwrap();
        let direct: f64 = xs
            .iter()
            .map(|&x| (0.3 * normal_pdf(x, -1.0, 0.5) + 0.7 * normal_pdf(x, 2.0, 2.0)).ln())
            .sum();
        let l = mog_log_lik(&p, &data).unwrap();
        assert!((l - direct).abs() < 1e-12, "{l} vs {direct}");
    }

    #[test]
    fn one_component_step_lands_on_sample_moments() {
        let xs = vec![1.0, 2.0, 4.0, 7.0, -3.0];
        let data = Points::new(1, xs.clone()).unwrap();
        let p = MogParams {
            weights: vec![1.0],
            means: vec![vec![10.0]],
            covariances: vec![DMatrix::from_element(1, 1, 0.1)],
        };
        let next = mog_em_step(&p, &data).unwrap();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert!((next.means[0][0] - mean).abs() < 1e-14);
        assert!((next.covariances[0][(0, 0)] - var).abs() < 1e-13);
    }

    #[test]
    fn symmetric_init_stays_symmetric() {
        let data = Points::new(1, vec![-3.0, -2.0, -1.5, 1.5, 2.0, 3.0]).unwrap();
        let p = MogParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            covariances: vec![DMatrix::from_element(1, 1, 1.0); 2],
        };
        let next = mog_em_step(&p, &data).unwrap();
        assert!((next.means[0][0] + next.means[1][0]).abs() < 1e-14);
        assert!((next.weights[0] - 0.5).abs() < 1e-15);
        assert!((next.covariances[0][(0, 0)] - next.covariances[1][(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn empty_component_is_reported() {
        let data = Points::new(1, vec![0.0, 0.1, -0.1]).unwrap();
        let p = MogParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![1e4]],
            covariances: vec![DMatrix::from_element(1, 1, 1.0); 2],
        };
        match mog_em_step(&p, &data).unwrap_err() {
            Error::DegenerateComponent { component } => assert_eq!(component, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn permuting_components_permutes_the_update() {
        let data = gen_mog_data(&MogDataSpec {
            separation: Separation::Overlapping,
            n: 50,
            d: 2,
            seed: 3,
        });
        let p = MogParams {
            weights: vec![0.2, 0.5, 0.3],
            means: vec![vec![-1.0, 0.0], vec![0.5, 0.5], vec![1.0, -1.0]],
            covariances: vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]),
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 0.5]),
            ],
        };
        let perm = [2usize, 0, 1];
        let q = MogParams {
            weights: perm.iter().map(|&k| p.weights[k]).collect(),
            means: perm.iter().map(|&k| p.means[k].clone()).collect(),
            covariances: perm.iter().map(|&k| p.covariances[k].clone()).collect(),
        };
        let a = mog_em_step(&p, &data).unwrap();
        let b = mog_em_step(&q, &data).unwrap();
        for (j, &k) in perm.iter().enumerate() {
            assert!((a.weights[k] - b.weights[j]).abs() < 1e-14);
            assert!((a.covariances[k].clone() - &b.covariances[j]).amax() < 1e-12);
        }
    }

    #[test]
    fn chart_gradient_matches_finite_differences() {
        let data = gen_mog_data(&MogDataSpec {
            separation: Separation::Overlapping,
            n: 40,
            d: 2,
            seed: 11,
        });
        let model = MogEm::new(data.clone(), 2).unwrap();
        let p = MogParams {
            weights: vec![0.4, 0.6],
            means: vec![vec![-0.3, 0.2], vec![0.8, -0.1]],
            covariances: vec![
                DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.9]),
                DMatrix::from_row_slice(2, 2, &[0.7, -0.1, -0.1, 1.5]),
            ],
        };
        let theta = model.pack(&p).unwrap();
        let g = model.gradient(&theta).unwrap();
        let fd = fd_gradient(|c| model.objective(&theta.from_chart(c)?), &theta.to_chart(), 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn one_component_mean_score() {
        let xs = vec![0.5, 1.5, -0.25];
        let data = Points::new(1, xs.clone()).unwrap();
        let model = MogEm::new(data, 1).unwrap();
        let p = MogParams {
            weights: vec![1.0],
            means: vec![vec![0.2]],
            covariances: vec![DMatrix::identity(1, 1)],
        };
        let g = model.gradient(&model.pack(&p).unwrap()).unwrap();
        let expected: f64 = xs.iter().map(|x| x - 0.2).sum();
        assert!((g[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn bound_touches_and_minorizes() {
        let data = gen_mog_data(&MogDataSpec {
            separation: Separation::Well,
            n: 30,
            d: 1,
            seed: 5,
        });
        let model = MogEm::new(data.clone(), 2).unwrap();
        let a = two_comp();
        let mut b = two_comp();
        b.means[0][0] = -2.5;
        b.weights = vec![0.6, 0.4];
        let l = mog_log_lik(&a, &data).unwrap();
        assert!((model.bound(&a, &a).unwrap() - l).abs() < 1e-12 * l.abs());
        assert!(model.bound(&a, &b).unwrap() <= l);
    }

    #[test]
    fn em_run_is_monotone_and_reaches_stationarity() {
        let data = gen_mog_data(&MogDataSpec {
            separation: Separation::Well,
            n: 200,
            d: 1,
            seed: 7,
        });
        let model = MogEm::new(data.clone(), 2).unwrap();
        let init = model
            .pack(&MogParams::random_init(&data, 2, &mut rng::seeded(1)).unwrap())
            .unwrap();
        let out = run(&model, &init, &StopRule::default()).unwrap();
        assert!(out.curve.first_monotonicity_violation(1e-12).is_none());
        let g = model.gradient(&out.final_params).unwrap();
        assert!(norm(&g) < 1e-3, "{}", norm(&g));
    }

    #[test]
    fn means_only_map_climbs_and_matches_gradient() {
        let data = gen_mog_data(&MogDataSpec {
            separation: Separation::Well,
            n: 200,
            d: 1,
            seed: 3,
        });
        let fixed = MogParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![0.0]],
            covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        };
        let map = MogMeansEm::new(data, fixed).unwrap();
        let theta = map.pack(&[-1.0, 0.5]).unwrap();
        let g = map.gradient(&theta).unwrap();
        let fd = fd_gradient(|m| map.log_lik(m), &theta.values, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
        }
        let out = run(&map, &theta, &StopRule::new(1e-10, 200).unwrap()).unwrap();
        let m = &out.final_params.values;
        assert!((m[0] + 3.0).abs() < 0.5 && (m[1] - 3.0).abs() < 0.5, "{m:?}");
    }
}
