//! Baum-Welch EM for discrete hidden Markov models.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::optimizer::IterationMap;
use crate::param::{Domain, Layout, ParamVector};

/// Floor on every probability entry.
pub const PROB_FLOOR: f64 = 1e-8;

/// Expected-count total below which a row cannot be re-estimated.
const EMPTY_ROW: f64 = 1e-12;

/// Row-major stochastic matrices of an HMM with `states` hidden states
/// and `symbols` output symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub states: usize,
    pub symbols: usize,
    pub initial: Vec<f64>,
    pub transitions: Vec<f64>,
    pub emissions: Vec<f64>,
}

impl HmmParams {
    pub fn uniform(states: usize, symbols: usize) -> Self {
        Self {
            states,
            symbols,
            initial: vec![1.0 / states as f64; states],
            transitions: vec![1.0 / states as f64; states * states],
            emissions: vec![1.0 / symbols as f64; states * symbols],
        }
    }

    /// Entries drawn uniformly from (0.5, 1.5) and normalized per row.
    pub fn random(states: usize, symbols: usize, rng: &mut impl rand::Rng) -> Self {
        let mut row = |len: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..1.5)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|v| v / z).collect()
        };
        let initial = row(states);
        let transitions = (0..states).flat_map(|_| row(states)).collect();
        let emissions = (0..states).flat_map(|_| row(symbols)).collect();
        Self {
            states,
            symbols,
            initial,
            transitions,
            emissions,
        }
    }

    pub fn trans(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.states + to]
    }

    pub fn emit(&self, state: usize, symbol: usize) -> f64 {
        self.emissions[state * self.symbols + symbol]
    }

    pub fn validate(&self) -> Result<()> {
        let (k, a) = (self.states, self.symbols);
        if k == 0 || a == 0 {
            return Err(Error::Model("HMM needs at least one state and one symbol".into()));
        }
        if self.initial.len() != k || self.transitions.len() != k * k || self.emissions.len() != k * a {
            return Err(Error::Model("HMM tables have the wrong size".into()));
        }
        let rows = std::iter::once(&self.initial[..])
            .chain(self.transitions.chunks(k))
            .chain(self.emissions.chunks(a));
        for row in rows {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 || row.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::Model(format!(
                    "row {row:?} is not a positive probability vector"
                )));
            }
        }
        Ok(())
    }
}

/// Per-sequence posteriors from forward-backward.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmPosterior {
    pub log_lik: f64,
    /// `gamma[t][k] = P(state_t = k | seq)`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi_sum[j*K + k] = Σ_t P(state_t = j, state_{t+1} = k | seq)`.
    pub xi_sum: Vec<f64>,
    /// Posterior entropy of the hidden path.
    pub entropy: f64,
}

/// Scaled forward-backward pass.
pub fn hmm_forward_backward(params: &HmmParams, seq: &[usize]) -> Result<HmmPosterior> {
    posterior(params, seq, true)
}

/// Scaled forward pass: normalized `alpha` and the per-step scale factors.
fn forward(params: &HmmParams, seq: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (k, t_len) = (params.states, seq.len());
    if t_len == 0 {
        return Err(Error::Model("empty sequence".into()));
    }
    if let Some(bad) = seq.iter().find(|s| **s >= params.symbols) {
        return Err(Error::Model(format!(
            "symbol {bad} outside alphabet of size {}",
            params.symbols
        )));
    }
    let mut alpha = vec![vec![0.0; k]; t_len];
    let mut scale = vec![0.0; t_len];
    for s in 0..k {
        alpha[0][s] = params.initial[s] * params.emit(s, seq[0]);
    }
    scale[0] = alpha[0].iter().sum();
    alpha[0].iter_mut().for_each(|v| *v /= scale[0]);
    for t in 1..t_len {
        for s in 0..k {
            let mut acc = 0.0;
            for r in 0..k {
                acc += alpha[t - 1][r] * params.trans(r, s);
            }
            alpha[t][s] = acc * params.emit(s, seq[t]);
        }
        scale[t] = alpha[t].iter().sum();
        let c = scale[t];
        alpha[t].iter_mut().for_each(|v| *v /= c);
    }
    Ok((alpha, scale))
}

fn scaled_log_lik(scale: &[f64]) -> Result<f64> {
    let log_lik: f64 = scale.iter().map(|c| c.ln()).sum();
    if !log_lik.is_finite() {
        return Err(Error::non_finite("sequence log-likelihood"));
    }
    Ok(log_lik)
}

/// Total log-likelihood of a set of sequences (forward pass only).
pub fn hmm_log_lik(params: &HmmParams, seqs: &[Vec<usize>]) -> Result<f64> {
    seqs.iter().map(|seq| scaled_log_lik(&forward(params, seq)?.1)).sum()
}

/// The path entropy costs a logarithm per transition and is only needed by
/// the bound, so it is optional.
fn posterior(params: &HmmParams, seq: &[usize], with_entropy: bool) -> Result<HmmPosterior> {
    let (k, t_len) = (params.states, seq.len());
    let (alpha, scale) = forward(params, seq)?;
    // eb[t][s] = B(s, x_t)·β_t(s), shared by the backward pass and the pair posteriors.
    let mut beta = vec![vec![1.0; k]; t_len];
    let mut eb = vec![vec![0.0; k]; t_len];
    for t in (0..t_len - 1).rev() {
        for s in 0..k {
            eb[t + 1][s] = params.emit(s, seq[t + 1]) * beta[t + 1][s];
        }
        for r in 0..k {
            let row = &params.transitions[r * k..(r + 1) * k];
            let acc: f64 = row.iter().zip(&eb[t + 1]).map(|(a, b)| a * b).sum();
            beta[t][r] = acc / scale[t + 1];
        }
    }
    let log_lik = scaled_log_lik(&scale)?;
    let mut gamma = vec![vec![0.0; k]; t_len];
    for t in 0..t_len {
        let z: f64 = (0..k).map(|s| alpha[t][s] * beta[t][s]).sum();
        for s in 0..k {
            gamma[t][s] = alpha[t][s] * beta[t][s] / z;
        }
    }
    let mut xi_sum = vec![0.0; k * k];
    let mut entropy = 0.0;
    if with_entropy {
        entropy = -gamma[0].iter().filter(|g| **g > 0.0).map(|g| g * g.ln()).sum::<f64>();
    }
    let mut xi = vec![0.0; k * k];
    for t in 0..t_len - 1 {
        for r in 0..k {
            let a = alpha[t][r] / scale[t + 1];
            let row = &params.transitions[r * k..(r + 1) * k];
            for s in 0..k {
                xi[r * k + s] = a * row[s] * eb[t + 1][s];
            }
        }
        let z: f64 = xi.iter().sum();
        for r in 0..k {
            for s in 0..k {
                let v = xi[r * k + s] / z;
                xi_sum[r * k + s] += v;
                if with_entropy && v > 0.0 && gamma[t][r] > 0.0 {
                    entropy -= v * (v / gamma[t][r]).ln();
                }
            }
        }
    }
    Ok(HmmPosterior {
        log_lik,
        gamma,
        xi_sum,
        entropy,
    })
}

/// Expected sufficient statistics summed over sequences, in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmCounts {
    pub log_lik: f64,
    pub initial: Vec<f64>,
    pub transitions: Vec<f64>,
    pub emissions: Vec<f64>,
    pub entropy: f64,
}

pub fn expected_counts(params: &HmmParams, seqs: &[Vec<usize>]) -> Result<HmmCounts> {
    accumulate(params, seqs, true)
}

fn accumulate(params: &HmmParams, seqs: &[Vec<usize>], with_entropy: bool) -> Result<HmmCounts> {
    let (k, a) = (params.states, params.symbols);
    let mut c = HmmCounts {
        log_lik: 0.0,
        initial: vec![0.0; k],
        transitions: vec![0.0; k * k],
        emissions: vec![0.0; k * a],
        entropy: 0.0,
    };
    for seq in seqs {
        let post = posterior(params, seq, with_entropy)?;
        c.log_lik += post.log_lik;
        c.entropy += post.entropy;
        for s in 0..k {
            c.initial[s] += post.gamma[0][s];
        }
        for (acc, v) in c.transitions.iter_mut().zip(&post.xi_sum) {
            *acc += v;
        }
        for (t, sym) in seq.iter().enumerate() {
            for s in 0..k {
                c.emissions[s * a + sym] += post.gamma[t][s];
            }
        }
    }
    Ok(c)
}

/// Normalizes a row of counts and lifts entries to [`PROB_FLOOR`], keeping
/// the row on the simplex.
fn normalize_floored(counts: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if total < EMPTY_ROW {
        return None;
    }
    let mut row: Vec<f64> = counts.iter().map(|c| c / total).collect();
    if row.iter().all(|p| *p >= PROB_FLOOR) {
        return Some(row);
    }
    let mut clipped = vec![false; row.len()];
    loop {
        for (p, c) in row.iter().zip(clipped.iter_mut()) {
            if *p < PROB_FLOOR {
                *c = true;
            }
        }
        let n_clipped = clipped.iter().filter(|c| **c).count() as f64;
        let free_mass = 1.0 - n_clipped * PROB_FLOOR;
        let free_total: f64 = counts.iter().zip(&clipped).filter(|(_, c)| !**c).map(|(v, _)| v).sum();
        for ((p, c), v) in row.iter_mut().zip(&clipped).zip(counts) {
            *p = if *c { PROB_FLOOR } else { v / free_total * free_mass };
        }
        if row.iter().zip(&clipped).all(|(p, c)| *c || *p >= PROB_FLOOR) {
            return Some(row);
        }
    }
}

fn reestimate(counts: &[f64], width: usize, table: &'static str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(counts.len());
    for (state, row) in counts.chunks(width).enumerate() {
        out.extend(normalize_floored(row).ok_or(Error::DegenerateState { state, table })?);
    }
    Ok(out)
}

/// One Baum-Welch update over a set of sequences.
pub fn hmm_em_step(params: &HmmParams, seqs: &[Vec<usize>]) -> Result<HmmParams> {
    let counts = accumulate(params, seqs, false)?;
    Ok(HmmParams {
        states: params.states,
        symbols: params.symbols,
        initial: reestimate(&counts.initial, params.states, "initial")?,
        transitions: reestimate(&counts.transitions, params.states, "transitions")?,
        emissions: reestimate(&counts.emissions, params.symbols, "emissions")?,
    })
}

/// Gradient of the total log-likelihood in the log-ratio chart of every row.
pub fn hmm_grad(params: &HmmParams, seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
    let counts = accumulate(params, seqs, false)?;
    let mut out = Vec::new();
    let mut rows = |counts: &[f64], probs: &[f64], width: usize| {
        for (c, p) in counts.chunks(width).zip(probs.chunks(width)) {
            let total: f64 = c.iter().sum();
            out.extend((0..width - 1).map(|i| c[i] - total * p[i]));
        }
    };
    rows(&counts.initial, &params.initial, params.states);
    rows(&counts.transitions, &params.transitions, params.states);
    rows(&counts.emissions, &params.emissions, params.symbols);
    Ok(out)
}

/// Baum-Welch as an iteration map over a fixed sequence set.
#[derive(Debug, Clone)]
pub struct HmmEm {
    seqs: Vec<Vec<usize>>,
    states: usize,
    symbols: usize,
    layout: Arc<Layout>,
}

impl HmmEm {
    pub fn new(seqs: Vec<Vec<usize>>, states: usize, symbols: usize) -> Result<Self> {
        if states < 2 || symbols < 2 {
            return Err(Error::Model(
                "the HMM map needs at least two states and two symbols".into(),
            ));
        }
        if seqs.iter().flatten().any(|s| *s >= symbols) {
            return Err(Error::Model("sequence symbol outside alphabet".into()));
        }
        let layout = Layout::builder()
            .segment("initial", states, Domain::SimplexRow { width: states })
            .segment("transitions", states * states, Domain::SimplexRow { width: states })
            .segment("emissions", states * symbols, Domain::SimplexRow { width: symbols })
            .build()?;
        Ok(Self {
            seqs,
            states,
            symbols,
            layout: Arc::new(layout),
        })
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.seqs
    }

    pub fn pack(&self, p: &HmmParams) -> Result<ParamVector> {
        if p.states != self.states || p.symbols != self.symbols {
            return Err(Error::Model("parameters do not match the model shape".into()));
        }
        let mut v = p.initial.clone();
        v.extend_from_slice(&p.transitions);
        v.extend_from_slice(&p.emissions);
        ParamVector::new(v, Arc::clone(&self.layout))
    }

    pub fn unpack(&self, v: &ParamVector) -> HmmParams {
        HmmParams {
            states: self.states,
            symbols: self.symbols,
            initial: v.segment("initial").expect("layout").to_vec(),
            transitions: v.segment("transitions").expect("layout").to_vec(),
            emissions: v.segment("emissions").expect("layout").to_vec(),
        }
    }

    /// Expected complete log-likelihood under `psi`'s posterior plus its entropy.
    pub fn bound(&self, theta: &HmmParams, psi: &HmmParams) -> Result<f64> {
        let c = expected_counts(psi, &self.seqs)?;
        let q = |counts: &[f64], probs: &[f64]| -> f64 { counts.iter().zip(probs).map(|(c, p)| c * p.ln()).sum() };
        Ok(q(&c.initial, &theta.initial)
            + q(&c.transitions, &theta.transitions)
            + q(&c.emissions, &theta.emissions)
            + c.entropy)
    }
}

impl IterationMap for HmmEm {
    fn name(&self) -> &str {
        "em-hmm"
    }

    fn objective(&self, theta: &ParamVector) -> Result<f64> {
        hmm_log_lik(&self.unpack(theta), &self.seqs)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        hmm_grad(&self.unpack(theta), &self.seqs)
    }

    fn step(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.pack(&hmm_em_step(&self.unpack(theta), &self.seqs)?)
    }

    fn bound_at_pair(&self, theta: &ParamVector, psi: &ParamVector) -> Option<Result<f64>> {
        Some(self.bound(&self.unpack(theta), &self.unpack(psi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_gradient;
    use crate::rng;

    /// Sums path probabilities over all K^T hidden paths.
    fn brute_force(params: &HmmParams, seq: &[usize]) -> (f64, Vec<Vec<f64>>) {
        let (k, t_len) = (params.states, seq.len());
        let mut total = 0.0;
        let mut marg = vec![vec![0.0; k]; t_len];
        let paths = k.pow(t_len as u32);
        for code in 0..paths {
            let mut path = Vec::with_capacity(t_len);
            let mut c = code;
            for _ in 0..t_len {
                path.push(c % k);
                c /= k;
            }
            let mut p = params.initial[path[0]] * params.emit(path[0], seq[0]);
            for t in 1..t_len {
                p *= params.trans(path[t - 1], path[t]) * params.emit(path[t], seq[t]);
            }
            total += p;
            for t in 0..t_len {
                marg[t][path[t]] += p;
            }
        }
        for row in &mut marg {
            row.iter_mut().for_each(|v| *v /= total);
        }
        (total.ln(), marg)
    }

    #[test]
    fn single_state_log_lik() {
        let p = HmmParams {
            states: 1,
            symbols: 3,
            initial: vec![1.0],
            transitions: vec![1.0],
            emissions: vec![0.2, 0.5, 0.3],
        };
        let seq = [0, 1, 1, 2, 0];
        let post = hmm_forward_backward(&p, &seq).unwrap();
        let expected: f64 = seq.iter().map(|s| p.emissions[*s].ln()).sum();
        assert!((post.log_lik - expected).abs() < 1e-14);
    }

    #[test]
    fn uniform_model_log_lik() {
        let p = HmmParams::uniform(3, 4);
        let seq = vec![0, 3, 2, 2, 1, 0, 3];
        let post = hmm_forward_backward(&p, &seq).unwrap();
        assert!((post.log_lik - 7.0 * (0.25f64).ln()).abs() < 1e-13);
    }

    #[test]
    fn matches_path_enumeration() {
        let mut r = rng::seeded(9);
        for (k, a, t) in [(2, 2, 3), (2, 3, 6), (3, 2, 5), (4, 3, 4)] {
            let p = HmmParams::random(k, a, &mut r);
            let seq: Vec<usize> = (0..t).map(|i| (i * 7 + 3) % a).collect();
            let post = hmm_forward_backward(&p, &seq).unwrap();
            let (ll, marg) = brute_force(&p, &seq);
            assert!((post.log_lik - ll).abs() < 1e-12, "{} vs {ll}", post.log_lik);
            for t in 0..t {
                let s: f64 = post.gamma[t].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                for i in 0..k {
                    assert!((post.gamma[t][i] - marg[t][i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_state_step_gives_symbol_frequencies() {
        let p = HmmParams {
            states: 1,
            symbols: 3,
            initial: vec![1.0],
            transitions: vec![1.0],
            emissions: vec![0.6, 0.2, 0.2],
        };
        let seqs = vec![vec![0, 1, 1, 2, 1, 1, 0, 2]];
        let next = hmm_em_step(&p, &seqs).unwrap();
        let expected = [0.25, 0.5, 0.25];
        for (a, b) in next.emissions.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn floor_keeps_rows_on_simplex() {
        let row = normalize_floored(&[1.0, 0.0, 0.0, 3.0]).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(row.iter().all(|p| *p >= PROB_FLOOR));
        assert_eq!(row[1], PROB_FLOOR);
        assert!(normalize_floored(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn degenerate_row_is_reported() {
        let err = reestimate(&[0.5, 0.5, 0.0, 0.0], 2, "transitions").unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateState {
                state: 1,
                table: "transitions"
            }
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_and_bound_touches() {
        let mut r = rng::seeded(4);
        let p = HmmParams::random(3, 3, &mut r);
        let seqs = vec![vec![0, 1, 2, 2, 1, 0, 0], vec![2, 2, 1, 0]];
        let model = HmmEm::new(seqs, 3, 3).unwrap();
        let theta = model.pack(&p).unwrap();
        let g = model.gradient(&theta).unwrap();
        let fd = fd_gradient(|c| model.objective(&theta.from_chart(c)?), &theta.to_chart(), 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
        let l = model.objective(&theta).unwrap();
        assert!((model.bound(&p, &p).unwrap() - l).abs() < 1e-11 * l.abs());
        let q = HmmParams::random(3, 3, &mut r);
        assert!(model.bound(&p, &q).unwrap() <= l);
    }

    #[test]
    fn fixed_point_of_counts_is_stationary() {
        let seqs = vec![vec![0, 1, 0, 1, 1, 0], vec![1, 1, 0]];
        let model = HmmEm::new(seqs, 2, 2).unwrap();
        let mut theta = model.pack(&HmmParams::random(2, 2, &mut rng::seeded(2))).unwrap();
        for _ in 0..5000 {
            theta = model.step(&theta).unwrap();
        }
        let again = model.step(&theta).unwrap();
        for (a, b) in theta.values.iter().zip(&again.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
