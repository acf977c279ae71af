//! Discrete Fourier transforms and exact spectral differential operators.
//!
//! The forward transform is normalized so that a field equals
//! `Σ_k c_k exp(i k·x)` on the lattice: a constant `c` has the single
//! coefficient `c` at `k = 0`, and Parseval reads
//! `Σ_x |f(x)|² h³ = L³ Σ_k |c_k|²`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::field::{Field, SymTensorField, VectorField, SYM_PAIRS};
use crate::grid::Grid;

/// Fourier coefficients of a `C`-component field, component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<const C: usize> {
    grid: Grid,
    data: Vec<Complex64>,
}

/// Derivative orders along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub [u32; 3]);

impl MultiIndex {
    pub const ZERO: Self = Self([0, 0, 0]);

    pub fn new(a1: u32, a2: u32, a3: u32) -> Self {
        Self([a1, a2, a3])
    }

    /// Unit multi-index along `axis`.
    pub fn axis(axis: usize) -> Self {
        let mut a = [0; 3];
        a[axis] = 1;
        Self(a)
    }

    /// Total order `|α|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0).all(|(a, b)| *a <= b)
    }

    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        Some(Self([
            self.0[0].checked_sub(other.0[0])?,
            self.0[1].checked_sub(other.0[1])?,
            self.0[2].checked_sub(other.0[2])?,
        ]))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }

    /// Every multi-index with total order at most `m`, in lexicographic order.
    pub fn all_up_to(m: u32) -> Vec<Self> {
        let mut out = Vec::new();
        for a in 0..=m {
            for b in 0..=m - a {
                for c in 0..=m - a - b {
                    out.push(Self([a, b, c]));
                }
            }
        }
        out
    }
}

impl<const C: usize> SpectralField<C> {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![Complex64::default(); C * grid.points()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let n3 = self.grid.points();
        &self.data[c * n3..(c + 1) * n3]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n3 = self.grid.points();
        &mut self.data[c * n3..(c + 1) * n3]
    }

    /// Coefficient of component `c` at integer wavenumber `k`, if representable.
    pub fn coefficient(&self, c: usize, k: [i64; 3]) -> Option<Complex64> {
        let g = &self.grid;
        let idx = g.index(g.slot_of(k[0])?, g.slot_of(k[1])?, g.slot_of(k[2])?);
        Some(self.component(c)[idx])
    }

    /// Multiplies every coefficient by `f(slot, wavevector)`.
    pub fn apply_multiplier(&mut self, f: impl Fn(usize, [f64; 3]) -> Complex64 + Sync) {
        let n3 = self.grid.points();
        let grid = &self.grid;
        self.data.par_chunks_mut(n3).for_each(|comp| {
            for (idx, v) in comp.iter_mut().enumerate() {
                *v *= f(idx, grid.wavevector(idx));
            }
        });
    }

    /// Zeroes every mode outside the 2/3-rule box.
    pub fn dealias(&mut self) {
        let n3 = self.grid.points();
        let grid = &self.grid;
        self.data.par_chunks_mut(n3).for_each(|comp| {
            for (idx, v) in comp.iter_mut().enumerate() {
                if !grid.keeps_mode(idx) {
                    *v = Complex64::default();
                }
            }
        });
    }

    /// Largest deviation from Hermitian symmetry `c(−k) = conj c(k)`,
    /// ignoring the Nyquist planes where `−k` is not representable.
    pub fn hermitian_defect(&self) -> f64 {
        let g = &self.grid;
        let n = g.n();
        let mut worst = 0.0f64;
        for c in 0..C {
            let comp = self.component(c);
            for idx in 0..g.points() {
                if g.on_nyquist_plane(idx) {
                    continue;
                }
                let [i, j, k] = g.coords(idx);
                let mirror = g.index((n - i) % n, (n - j) % n, (n - k) % n);
                worst = worst.max((comp[idx] - comp[mirror].conj()).norm());
            }
        }
        worst
    }
}

/// Normalized forward transform; each component is transformed independently.
pub fn forward_transform<const C: usize>(f: &Field<C>) -> SpectralField<C> {
    let grid = f.grid().clone();
    let n3 = grid.points();
    let norm = 1.0 / n3 as f64;
    let mut data: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    data.par_chunks_mut(n3).for_each(|comp| {
        grid.fft3(comp, false);
        comp.iter_mut().for_each(|v| *v *= norm);
    });
    SpectralField { grid, data }
}

/// Inverse transform, keeping the real part.
pub fn inverse_transform<const C: usize>(fh: &SpectralField<C>) -> Field<C> {
    let grid = fh.grid.clone();
    let n3 = grid.points();
    let mut data = fh.data.clone();
    data.par_chunks_mut(n3)
        .for_each(|comp| grid.fft3(comp, true));
    Field::from_raw(&grid, data.into_iter().map(|v| v.re).collect())
}

/// Per-axis factors `(i k)^a` for `a = 0..=order`, indexed `[axis][a][slot]`.
fn derivative_tables(grid: &Grid, alpha: &MultiIndex) -> [Vec<Complex64>; 3] {
    std::array::from_fn(|axis| {
        (0..grid.n())
            .map(|m| Complex64::new(0.0, grid.wavenumber(m)).powu(alpha.0[axis]))
            .collect()
    })
}

/// Multiplier `(ik₁)^{α₁}(ik₂)^{α₂}(ik₃)^{α₃}` at one slot.
pub fn derivative_symbol(grid: &Grid, alpha: &MultiIndex, idx: usize) -> Complex64 {
    let [i, j, k] = grid.coords(idx);
    let f = |m: usize, a: u32| Complex64::new(0.0, grid.wavenumber(m)).powu(a);
    f(i, alpha.0[0]) * f(j, alpha.0[1]) * f(k, alpha.0[2])
}

/// `D^α` applied coefficientwise, Nyquist modes included.
pub fn spectral_derivative<const C: usize>(
    fh: &SpectralField<C>,
    alpha: &MultiIndex,
) -> SpectralField<C> {
    let mut out = fh.clone();
    if *alpha == MultiIndex::ZERO {
        return out;
    }
    let tables = derivative_tables(&fh.grid, alpha);
    let grid = &fh.grid;
    out.apply_multiplier(|idx, _| {
        let [i, j, k] = grid.coords(idx);
        tables[0][i] * tables[1][j] * tables[2][k]
    });
    out
}

/// `D^α f` in physical space.
pub fn derivative<const C: usize>(f: &Field<C>, alpha: &MultiIndex) -> Field<C> {
    inverse_transform(&spectral_derivative(&forward_transform(f), alpha))
}

/// Spectral divergence of a packed symmetric tensor: `(div σ)_j = ∂_k σ_kj`.
pub fn divergence_sym_tensor_hat(sh: &SpectralField<6>) -> SpectralField<3> {
    let grid = sh.grid().clone();
    let mut out = SpectralField::<3>::zeros(&grid);
    let n3 = grid.points();
    let kv: Vec<[f64; 3]> = (0..n3).map(|idx| grid.wavevector(idx)).collect();
    out.data
        .par_chunks_mut(n3)
        .enumerate()
        .for_each(|(j, comp)| {
            for (idx, v) in comp.iter_mut().enumerate() {
                let k = kv[idx];
                let mut acc = Complex64::default();
                for (kk, &kval) in k.iter().enumerate() {
                    acc += Complex64::new(0.0, kval)
                        * sh.component(crate::field::sym_index(kk, j))[idx];
                }
                *v = acc;
            }
        });
    out
}

/// `(div σ)_j = ∂_k σ_kj`, computed spectrally.
pub fn divergence_sym_tensor(sigma: &SymTensorField) -> VectorField {
    inverse_transform(&divergence_sym_tensor_hat(&forward_transform(sigma)))
}

/// Spectral divergence of a vector field.
pub fn divergence_vector(u: &VectorField) -> crate::field::ScalarField {
    let uh = forward_transform(u);
    let grid = u.grid();
    let mut out = SpectralField::<1>::zeros(grid);
    for idx in 0..grid.points() {
        let k = grid.wavevector(idx);
        out.data[idx] = (0..3)
            .map(|d| Complex64::new(0.0, k[d]) * uh.component(d)[idx])
            .sum();
    }
    inverse_transform(&out)
}

/// Spectral interpolation onto another resolution of the same box.
///
/// Modes representable on both grids are copied; Nyquist planes of the
/// coarser grid are dropped, so the map is exact for fields band-limited
/// below both Nyquist wavenumbers.
pub fn resample<const C: usize>(f: &Field<C>, target: &Grid) -> Field<C> {
    assert_eq!(f.grid().length(), target.length(), "resample keeps the box");
    let src = forward_transform(f);
    let sg = f.grid();
    let limit = (sg.n().min(target.n()) / 2) as i64;
    let mut out = SpectralField::<C>::zeros(target);
    for c in 0..C {
        let s = src.component(c);
        let o = &mut out.data[c * target.points()..(c + 1) * target.points()];
        for idx in 0..sg.points() {
            let [i, j, k] = sg.coords(idx);
            let kk = [
                sg.wavenumber_index(i),
                sg.wavenumber_index(j),
                sg.wavenumber_index(k),
            ];
            if kk.iter().any(|v| v.abs() >= limit) {
                continue;
            }
            let t = target.index(
                target.slot_of(kk[0]).unwrap(),
                target.slot_of(kk[1]).unwrap(),
                target.slot_of(kk[2]).unwrap(),
            );
            o[t] = s[idx];
        }
    }
    inverse_transform(&out)
}

/// Packed symmetric tensor gradient `∂_k σ_s`, component `6k + s`, from coefficients.
pub fn gradient_sym_hat(sh: &SpectralField<6>) -> SpectralField<18> {
    let grid = sh.grid().clone();
    let n3 = grid.points();
    let mut out = SpectralField::<18>::zeros(&grid);
    out.data
        .par_chunks_mut(n3)
        .enumerate()
        .for_each(|(c, comp)| {
            let (axis, s) = (c / 6, c % 6);
            let src = sh.component(s);
            for (idx, v) in comp.iter_mut().enumerate() {
                *v = Complex64::new(0.0, grid.wavevector(idx)[axis]) * src[idx];
            }
        });
    out
}

/// Converts packed symmetric pairs to a human-readable label such as `"12"`.
pub fn sym_label(s: usize) -> String {
    let (i, j) = SYM_PAIRS[s];
    format!("{}{}", i + 1, j + 1)
}
