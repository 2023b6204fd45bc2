//! EM for Gaussian mixtures and discrete hidden Markov models.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub mod data;
pub mod hmm;
pub mod mog;

pub use data::{gen_hmm_data, gen_mog_data, HmmDataSpec, HmmKind, MogDataSpec, Separation};
pub use hmm::{hmm_em_step, hmm_forward_backward, hmm_grad, hmm_log_lik, HmmEm, HmmParams, HmmPosterior};
pub use mog::{mog_em_step, mog_grad, mog_log_lik, responsibilities, MogEm, MogMeansEm, MogParams};

/// Row-major table of `len()` points in `dim()` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    values: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("data point {}", i / dim)));
        }
        Ok(Self { dim, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (a, x) in m.iter_mut().zip(row) {
                *a += x;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Maximum-likelihood (1/N) covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for row in self.rows() {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    c[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
            }
        }
        c / self.len() as f64
    }

    /// Reads a header-less CSV with one point per row.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_error(path, e))?;
        let mut dim = None;
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| parse_error(path, e))?;
            if *dim.get_or_insert(record.len()) != record.len() {
                return Err(parse_error(path, format!("row {line} has {} columns", record.len())));
            }
            for field in &record {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| parse_error(path, format!("row {line}: {e}")))?,
                );
            }
        }
        Points::new(dim.unwrap_or(0), values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| parse_error(path, e))?;
        for row in self.rows() {
            writer
                .write_record(row.iter().map(|v| format!("{v:?}")))
                .map_err(|e| parse_error(path, e))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads one whitespace-separated symbol sequence per non-empty line.
pub fn read_sequences(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|e| parse_error(path, format!("line {}: {e}", n + 1)))
                })
                .collect()
        })
        .collect()
}

pub fn write_sequences(path: &Path, seqs: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    for seq in seqs {
        let line: Vec<String> = seq.iter().map(|s| s.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_input() {
        assert!(Points::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Points::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn covariance_of_two_points() {
        let p = Points::new(2, vec![0.0, 0.0, 2.0, 4.0]).unwrap();
        let c = p.covariance();
        assert_eq!(p.mean(), vec![1.0, 2.0]);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 2.0);
        assert_eq!(c[(1, 1)], 4.0);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.csv");
        let p = Points::new(3, vec![0.1, -1e-300, 3.0, 1.0 / 3.0, 2e10, -0.0]).unwrap();
        p.write_csv(&path).unwrap();
        assert_eq!(Points::read_csv(&path).unwrap(), p);
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.txt");
        let seqs = vec![vec![0, 4, 2], vec![1], vec![3, 3, 3, 0]];
        write_sequences(&path, &seqs).unwrap();
        assert_eq!(read_sequences(&path).unwrap(), seqs);
        std::fs::write(&path, "0 1 x\n").unwrap();
        assert!(matches!(read_sequences(&path), Err(Error::Parse { .. })));
    }
}
