//! Periodic lattice descriptor and the 3-D FFT plumbing shared by every field.
//!
//! Samples are stored x-fastest: the flat index of lattice point `(i, j, k)`
//! is `i + n * (j + n * k)`, where `i` runs along the first coordinate.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic lattice on the cube `[0, length)^3` with `n` points per axis.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Grid {
    /// Builds a grid. `n` must be a power of two no smaller than 8.
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::BadResolution(n));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::BadLength(length));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            length,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    /// The `[0, 2π)^3` box used throughout the examples.
    pub fn periodic_2pi(n: usize) -> Result<Self> {
        Self::new(n, 2.0 * PI)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of lattice points, `n^3`.
    pub fn points(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(3)
    }

    /// Quadrature weight of one lattice point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Integer wavenumber of FFT slot `m`, in `{-n/2+1, ..., n/2}`.
    pub fn wavenumber_index(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m <= n / 2 {
            m
        } else {
            m - n
        }
    }

    /// Physical wavenumber of FFT slot `m`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        self.wavenumber_index(m) as f64 * self.fundamental()
    }

    /// `2π / length`.
    pub fn fundamental(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// The full lattice of integer wavenumbers along one axis, in FFT slot order.
    pub fn wavenumber_indices(&self) -> Vec<i64> {
        (0..self.n).map(|m| self.wavenumber_index(m)).collect()
    }

    /// FFT slot holding integer wavenumber `k`, if it is representable.
    pub fn slot_of(&self, k: i64) -> Option<usize> {
        let n = self.n as i64;
        if k > -n / 2 && k <= n / 2 {
            Some(k.rem_euclid(n) as usize)
        } else {
            None
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let [i, j, k] = self.coords(idx);
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }

    /// Wave vector of the spectral slot with flat index `idx`.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        [self.wavenumber(i), self.wavenumber(j), self.wavenumber(k)]
    }

    /// Largest integer wavenumber kept by the 2/3 truncation rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    /// Whether a spectral slot survives 2/3-rule truncation.
    pub fn keeps_mode(&self, idx: usize) -> bool {
        let cut = self.dealias_cutoff();
        self.coords(idx)
            .iter()
            .all(|&m| self.wavenumber_index(m).abs() <= cut)
    }

    /// Whether a spectral slot lies on one of the Nyquist planes.
    pub fn on_nyquist_plane(&self, idx: usize) -> bool {
        let half = self.n / 2;
        self.coords(idx).contains(&half)
    }

    /// Unnormalized in-place 3-D transform of one component.
    pub(crate) fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(data.len(), n * n * n);
        let fft = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);

        let mut lines = vec![Complex64::default(); n * n];
        for plane in data.chunks_exact_mut(n * n) {
            for j in 0..n {
                for i in 0..n {
                    lines[i * n + j] = plane[i + n * j];
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for j in 0..n {
                for i in 0..n {
                    plane[i + n * j] = lines[i * n + j];
                }
            }
        }

        for j in 0..n {
            for k in 0..n {
                let base = n * (j + n * k);
                for i in 0..n {
                    lines[i * n + k] = data[base + i];
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for k in 0..n {
                let base = n * (j + n * k);
                for i in 0..n {
                    data[base + i] = lines[i * n + k];
                }
            }
        }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length == other.length
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}
