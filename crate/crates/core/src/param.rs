//! Flat parameter vectors with a named layout.
//!
//! Models pack their parameters into a single `Vec<f64>`; the [`Layout`]
//! records which slice belongs to which named block and what domain
//! constraint that block obeys. Each domain has an unconstrained *chart*
//! (identity, log, log-ratio, log-Cholesky) used wherever the diagnostics
//! need two-sided perturbations or gradients.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on simplex row sums.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Free,
    Positive,
    /// Consecutive rows of `width` entries, each summing to one.
    SimplexRow {
        width: usize,
    },
    /// A symmetric positive-definite `dim x dim` matrix stored row-major.
    SpdMatrix {
        dim: usize,
    },
}

impl Domain {
    fn chart_len(&self, len: usize) -> usize {
        match *self {
            Domain::Free | Domain::Positive => len,
            Domain::SimplexRow { width } => len / width * (width - 1),
            Domain::SpdMatrix { dim } => dim * (dim + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn chart_len(&self) -> usize {
        self.segments.iter().map(|s| s.domain.chart_len(s.len)).sum()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<Segment>,
    offset: usize,
}

impl LayoutBuilder {
    pub fn segment(mut self, name: impl Into<String>, len: usize, domain: Domain) -> Self {
        self.segments.push(Segment {
            name: name.into(),
            offset: self.offset,
            len,
            domain,
        });
        self.offset += len;
        self
    }

    pub fn build(self) -> Result<Layout> {
        for s in &self.segments {
            match s.domain {
                Domain::SimplexRow { width } if width < 2 || s.len % width != 0 => {
                    return Err(Error::Layout(format!(
                        "segment `{}`: length {} is not a multiple of simplex width {width} >= 2",
                        s.name, s.len
                    )))
                }
                Domain::SpdMatrix { dim } if s.len != dim * dim || dim == 0 => {
                    return Err(Error::Layout(format!(
                        "segment `{}`: length {} does not hold a {dim}x{dim} matrix",
                        s.name, s.len
                    )))
                }
                _ => {}
            }
        }
        Ok(Layout {
            segments: self.segments,
        })
    }
}

/// Parameter values together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    /// Builds and validates a parameter vector.
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        let p = Self { values, layout };
        p.validate()?;
        Ok(p)
    }

    /// A vector with the same layout as `self` holding `values`.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, Arc::clone(&self.layout))
    }

    /// All-free layout with a single segment.
    pub fn free(name: &str, values: Vec<f64>) -> Self {
        let layout = Layout::builder()
            .segment(name, values.len(), Domain::Free)
            .build()
            .expect("free layout is always valid");
        Self {
            values,
            layout: Arc::new(layout),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.layout.len() {
            return Err(Error::Layout(format!(
                "{} values for a layout of length {}",
                self.values.len(),
                self.layout.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Layout(format!("entry {i} is not finite")));
        }
        for s in self.layout.segments() {
            let vals = &self.values[s.offset..s.offset + s.len];
            match s.domain {
                Domain::Free => {}
                Domain::Positive => {
                    if let Some(i) = vals.iter().position(|v| *v <= 0.0) {
                        return Err(Error::Layout(format!("segment `{}` entry {i} is not positive", s.name)));
                    }
                }
                Domain::SimplexRow { width } => {
                    for (r, row) in vals.chunks(width).enumerate() {
                        let sum: f64 = row.iter().sum();
                        if row.iter().any(|v| *v <= 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
                            return Err(Error::Layout(format!(
                                "segment `{}` row {r} is not a positive simplex row (sum {sum})",
                                s.name
                            )));
                        }
                    }
                }
                Domain::SpdMatrix { dim } => {
                    if cholesky(vals, dim).is_none() {
                        return Err(Error::Layout(format!(
                            "segment `{}` is not symmetric positive definite",
                            s.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Coordinates in the unconstrained chart.
    pub fn to_chart(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.chart_len());
        for s in self.layout.segments() {
            let vals = &self.values[s.offset..s.offset + s.len];
            match s.domain {
                Domain::Free => out.extend_from_slice(vals),
                Domain::Positive => out.extend(vals.iter().map(|v| v.ln())),
                Domain::SimplexRow { width } => {
                    for row in vals.chunks(width) {
                        let last = row[width - 1].ln();
                        out.extend(row[..width - 1].iter().map(|v| v.ln() - last));
                    }
                }
                Domain::SpdMatrix { dim } => {
                    let l = cholesky(vals, dim).expect("validated SPD segment");
                    for i in 0..dim {
                        for j in 0..=i {
                            let v = l[(i, j)];
                            out.push(if i == j { v.ln() } else { v });
                        }
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`ParamVector::to_chart`], keeping this vector's layout.
    pub fn from_chart(&self, chart: &[f64]) -> Result<Self> {
        from_chart(&self.layout, chart)
    }
}

/// Rebuilds a parameter vector from chart coordinates.
pub fn from_chart(layout: &Arc<Layout>, chart: &[f64]) -> Result<ParamVector> {
    if chart.len() != layout.chart_len() {
        return Err(Error::Layout(format!(
            "chart vector has length {}, layout expects {}",
            chart.len(),
            layout.chart_len()
        )));
    }
    let mut values = Vec::with_capacity(layout.len());
    let mut pos = 0;
    for s in layout.segments() {
        match s.domain {
            Domain::Free => values.extend_from_slice(&chart[pos..pos + s.len]),
            Domain::Positive => values.extend(chart[pos..pos + s.len].iter().map(|c| c.exp())),
            Domain::SimplexRow { width } => {
                let rows = s.len / width;
                for r in 0..rows {
                    let logits = &chart[pos + r * (width - 1)..pos + (r + 1) * (width - 1)];
                    let max = logits.iter().cloned().fold(0.0_f64, f64::max);
                    let mut row: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    row.push((-max).exp());
                    let z: f64 = row.iter().sum();
                    values.extend(row.iter().map(|v| v / z));
                }
            }
            Domain::SpdMatrix { dim } => {
                let mut l = DMatrix::zeros(dim, dim);
                let mut k = pos;
                for i in 0..dim {
                    for j in 0..=i {
                        l[(i, j)] = if i == j { chart[k].exp() } else { chart[k] };
                        k += 1;
                    }
                }
                let m = &l * l.transpose();
                for i in 0..dim {
                    for j in 0..dim {
                        // Exact symmetry: copy the lower triangle.
                        values.push(if j <= i { m[(i, j)] } else { m[(j, i)] });
                    }
                }
            }
        }
        pos += s.domain.chart_len(s.len);
    }
    ParamVector::new(values, Arc::clone(layout))
}

/// Lower Cholesky factor of a row-major symmetric matrix, `None` if not SPD.
pub fn cholesky(vals: &[f64], dim: usize) -> Option<DMatrix<f64>> {
    if vals.len() != dim * dim {
        return None;
    }
    let m = DMatrix::from_row_slice(dim, dim, vals);
    for i in 0..dim {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return None;
            }
        }
    }
    m.cholesky().map(|c| c.l())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mixed_layout() -> Arc<Layout> {
        Arc::new(
            Layout::builder()
                .segment("w", 3, Domain::SimplexRow { width: 3 })
                .segment("mu", 2, Domain::Free)
                .segment("var", 2, Domain::Positive)
                .segment("cov", 4, Domain::SpdMatrix { dim: 2 })
                .build()
                .unwrap(),
        )
    }

    #[test]
    fn layout_lengths() {
        let l = mixed_layout();
        assert_eq!(l.len(), 11);
        assert_eq!(l.chart_len(), 2 + 2 + 2 + 3);
        assert_eq!(l.segment("var").unwrap().offset, 5);
    }

    #[test]
    fn validation_catches_domain_violations() {
        let l = mixed_layout();
        let good = vec![0.2, 0.3, 0.5, 1.0, -1.0, 0.5, 2.0, 2.0, 0.5, 0.5, 1.0];
        assert!(ParamVector::new(good.clone(), l.clone()).is_ok());

        let mut bad = good.clone();
        bad[0] = 0.25;
        assert!(ParamVector::new(bad, l.clone()).is_err());
        let mut bad = good.clone();
        bad[5] = 0.0;
        assert!(ParamVector::new(bad, l.clone()).is_err());
        let mut bad = good.clone();
        bad[8] = 3.0;
        assert!(ParamVector::new(bad, l.clone()).is_err());
        assert!(ParamVector::new(good[..10].to_vec(), l).is_err());
    }

    #[test]
    fn builder_rejects_bad_segments() {
        assert!(Layout::builder()
            .segment("s", 5, Domain::SimplexRow { width: 2 })
            .build()
            .is_err());
        assert!(Layout::builder()
            .segment("c", 3, Domain::SpdMatrix { dim: 2 })
            .build()
            .is_err());
    }

    proptest! {
        #[test]
        fn chart_round_trip(
            logits in proptest::collection::vec(-3.0..3.0f64, 2),
            mu in proptest::collection::vec(-10.0..10.0f64, 2),
            logvar in proptest::collection::vec(-3.0..3.0f64, 2),
            chol in proptest::collection::vec(-1.0..1.0f64, 3),
        ) {
            let l = mixed_layout();
            let chart: Vec<f64> = logits.iter().chain(&mu).chain(&logvar).chain(&chol).copied().collect();
            let p = from_chart(&l, &chart).unwrap();
            let back = p.to_chart();
            for (a, b) in chart.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
