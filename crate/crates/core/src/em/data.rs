//! Synthetic data for the EM experiments.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hmm::HmmParams;
use super::Points;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    Well,
    Overlapping,
}

impl Separation {
    /// Distance between the two cluster centers in units of the cluster σ.
    pub fn gap(self) -> f64 {
        match self {
            Separation::Well => 6.0,
            Separation::Overlapping => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MogDataSpec {
    pub separation: Separation,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// Two isotropic unit-variance clusters centered at ±gap/2 along the first
/// axis. The first ⌈n/2⌉ points come from the negative cluster.
pub fn gen_mog_data(spec: &MogDataSpec) -> Points {
    let mut r = rng::seeded(spec.seed);
    let d = spec.d.max(1);
    let half = spec.separation.gap() / 2.0;
    let first = spec.n.div_ceil(2);
    let mut values = Vec::with_capacity(spec.n * d);
    for i in 0..spec.n.max(2) {
        let center = if i < first { -half } else { half };
        for axis in 0..d {
            let z: f64 = StandardNormal.sample(&mut r);
            values.push(if axis == 0 { center + z } else { z });
        }
    }
    Points::new(d, values).expect("generated data is finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HmmKind {
    Structured,
    Aliased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmDataSpec {
    pub kind: HmmKind,
    pub states: usize,
    pub symbols: usize,
    pub num_seqs: usize,
    pub len: usize,
    pub seed: u64,
}

impl HmmDataSpec {
    pub fn new(kind: HmmKind, seed: u64) -> Self {
        Self {
            kind,
            states: 5,
            symbols: 5,
            num_seqs: 20,
            len: 100,
            seed,
        }
    }
}

/// Probability of the dominant entry in each structured row.
pub const DOMINANCE: f64 = 0.9;
const ALIAS_NOISE: f64 = 0.1;
const ALIAS_CLIP: f64 = 1e-3;

fn dominant_rows(rows: usize, width: usize, r: &mut rng::Rng) -> Vec<f64> {
    let mut targets: Vec<usize> = (0..rows).map(|i| i % width).collect();
    targets.shuffle(r);
    let rest = if width > 1 {
        (1.0 - DOMINANCE) / (width - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(rows * width);
    for t in targets {
        out.extend((0..width).map(|j| if j == t { DOMINANCE } else { rest }));
    }
    if width == 1 {
        out.iter_mut().for_each(|v| *v = 1.0);
    }
    out
}

/// Uniform rows multiplied by `1 + ε`, ε ~ N(0, 0.1²), clipped and renormalized.
fn noisy_uniform_rows(rows: usize, width: usize, r: &mut rng::Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, ALIAS_NOISE).expect("valid normal");
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..width)
            .map(|_| (1.0 + noise.sample(r)).max(ALIAS_CLIP) / width as f64)
            .collect();
        let z: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / z));
    }
    out
}

/// The HMM that generates data for `spec`.
pub fn generating_hmm(spec: &HmmDataSpec) -> HmmParams {
    let mut r = rng::stream(spec.seed, 1);
    let (k, a) = (spec.states, spec.symbols);
    let (transitions, emissions) = match spec.kind {
        HmmKind::Structured => (dominant_rows(k, k, &mut r), dominant_rows(k, a, &mut r)),
        HmmKind::Aliased => (noisy_uniform_rows(k, k, &mut r), noisy_uniform_rows(k, a, &mut r)),
    };
    HmmParams {
        states: k,
        symbols: a,
        initial: vec![1.0 / k as f64; k],
        transitions,
        emissions,
    }
}

fn draw(probs: &[f64], r: &mut rng::Rng) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sequences sampled from [`generating_hmm`].
pub fn gen_hmm_data(spec: &HmmDataSpec) -> Vec<Vec<usize>> {
    let hmm = generating_hmm(spec);
    let mut r = rng::stream(spec.seed, 2);
    let (k, a) = (hmm.states, hmm.symbols);
    (0..spec.num_seqs)
        .map(|_| {
            let mut state = draw(&hmm.initial, &mut r);
            let mut seq = Vec::with_capacity(spec.len);
            for t in 0..spec.len.max(2) {
                if t > 0 {
                    state = draw(&hmm.transitions[state * k..(state + 1) * k], &mut r);
                }
                seq.push(draw(&hmm.emissions[state * a..(state + 1) * a], &mut r));
            }
            seq
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster_gap(p: &Points) -> f64 {
        let n = p.len();
        let first = n.div_ceil(2);
        let xs: Vec<f64> = p.rows().map(|r| r[0]).collect();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let var = |s: &[f64]| {
            let m = mean(s);
            s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s.len() as f64
        };
        let (a, b) = xs.split_at(first);
        let sigma = ((var(a) + var(b)) / 2.0).sqrt();
        (mean(b) - mean(a)) / sigma
    }

    #[test]
    fn well_separated_gap() {
        let p = gen_mog_data(&MogDataSpec {
            separation: Separation::Well,
            n: 200,
            d: 1,
            seed: 7,
        });
        assert!(cluster_gap(&p) >= 5.0);
    }

    #[test]
    fn overlapping_gap() {
        let p = gen_mog_data(&MogDataSpec {
            separation: Separation::Overlapping,
            n: 200,
            d: 1,
            seed: 7,
        });
        assert!(cluster_gap(&p) <= 2.0);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let spec = MogDataSpec {
            separation: Separation::Well,
            n: 31,
            d: 3,
            seed: 2,
        };
        assert_eq!(gen_mog_data(&spec), gen_mog_data(&spec));
        let h = HmmDataSpec::new(HmmKind::Aliased, 5);
        assert_eq!(gen_hmm_data(&h), gen_hmm_data(&h));
        assert_ne!(gen_hmm_data(&h), gen_hmm_data(&HmmDataSpec::new(HmmKind::Aliased, 6)));
    }

    #[test]
    fn structured_rows_are_dominated() {
        for seed in 0..10 {
            let hmm = generating_hmm(&HmmDataSpec::new(HmmKind::Structured, seed));
            hmm.validate().unwrap();
            for row in hmm.transitions.chunks(5).chain(hmm.emissions.chunks(5)) {
                assert!(row.iter().cloned().fold(0.0, f64::max) >= 0.9);
            }
        }
    }

    #[test]
    fn aliased_emissions_stay_in_band() {
        for seed in 0..50 {
            let hmm = generating_hmm(&HmmDataSpec::new(HmmKind::Aliased, seed));
            hmm.validate().unwrap();
            for p in &hmm.emissions {
                assert!(*p >= 0.2 / 5.0 && *p <= 3.0 / 5.0, "{p}");
            }
        }
    }

    #[test]
    fn sequences_have_requested_shape() {
        let spec = HmmDataSpec::new(HmmKind::Structured, 1);
        let seqs = gen_hmm_data(&spec);
        assert_eq!(seqs.len(), 20);
        assert!(seqs.iter().all(|s| s.len() == 100 && s.iter().all(|x| *x < 5)));
    }
}
