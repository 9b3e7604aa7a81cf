//! Orthonormal DCT-II along the time axis with coefficient truncation.
//!
//! The basis row `k` is `a_k cos(pi (n + 1/2) k / T)` with `a_0 = sqrt(1/T)`
//! and `a_k = sqrt(2/T)`, so the full `T x T` matrix is orthogonal and the
//! inverse is its transpose. Keeping only the first `L` rows discards the
//! high-frequency content of a trajectory.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DctPlan {
    len: usize,
    keep: usize,
    /// Row-major `len x len`, row = frequency.
    basis: Vec<f64>,
}

impl DctPlan {
    pub fn new(len: usize, keep: usize) -> Result<Self> {
        if len == 0 || keep == 0 || keep > len {
            return Err(Error::Invalid(format!(
                "DCT plan needs 1 <= keep <= len, got keep={keep} len={len}"
            )));
        }
        let n = len as f64;
        let mut basis = vec![0.0; len * len];
        for k in 0..len {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for t in 0..len {
                let angle = std::f64::consts::PI * (t as f64 + 0.5) * k as f64 / n;
                basis[k * len + t] = scale * angle.cos();
            }
        }
        Ok(Self { len, keep, basis })
    }

    /// Default truncation for a sequence of `len` steps: one coefficient per
    /// five frames, rounded up.
    pub fn default_keep(len: usize) -> usize {
        len.div_ceil(5).max(1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    /// Full `len x len` basis, row-major.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// The kept rows of the basis: `keep x len`, row-major.
    pub fn truncated_basis(&self) -> &[f64] {
        &self.basis[..self.keep * self.len]
    }

    pub fn forward(&self, signal: &[f64]) -> Result<Vec<f64>> {
        if signal.len() != self.len {
            return Err(Error::Length(format!(
                "DCT expects {} samples, got {}",
                self.len,
                signal.len()
            )));
        }
        Ok((0..self.keep)
            .map(|k| {
                let row = &self.basis[k * self.len..(k + 1) * self.len];
                row.iter().zip(signal).map(|(b, x)| b * x).sum()
            })
            .collect())
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.keep {
            return Err(Error::Length(format!(
                "IDCT expects {} coefficients, got {}",
                self.keep,
                coeffs.len()
            )));
        }
        let mut out = vec![0.0; self.len];
        for (k, c) in coeffs.iter().enumerate() {
            let row = &self.basis[k * self.len..(k + 1) * self.len];
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * c;
            }
        }
        Ok(out)
    }

    /// Transforms every column of a time-major `len x channels` block;
    /// returns `keep x channels`.
    pub fn forward_channels(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if rows.len() != self.len {
            return Err(Error::Length(format!(
                "DCT expects {} time steps, got {}",
                self.len,
                rows.len()
            )));
        }
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Length("ragged channel rows".into()));
        }
        let mut out = vec![vec![0.0; channels]; self.keep];
        for (k, out_row) in out.iter_mut().enumerate() {
            let basis_row = &self.basis[k * self.len..(k + 1) * self.len];
            for (b, row) in basis_row.iter().zip(rows) {
                for (o, x) in out_row.iter_mut().zip(row) {
                    *o += b * x;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DctPlan::forward_channels`]: `keep x channels` in,
    /// `len x channels` out.
    pub fn inverse_channels(&self, coeffs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if coeffs.len() != self.keep {
            return Err(Error::Length(format!(
                "IDCT expects {} coefficient rows, got {}",
                self.keep,
                coeffs.len()
            )));
        }
        let channels = coeffs.first().map_or(0, Vec::len);
        let mut out = vec![vec![0.0; channels]; self.len];
        for (k, c_row) in coeffs.iter().enumerate() {
            let basis_row = &self.basis[k * self.len..(k + 1) * self.len];
            for (b, out_row) in basis_row.iter().zip(out.iter_mut()) {
                for (o, c) in out_row.iter_mut().zip(c_row) {
                    *o += b * c;
                }
            }
        }
        Ok(out)
    }
}
