//! Real-valued fields sampled on a [`Grid`].
//!
//! A field with `C` components stores component `c` contiguously in
//! `data[c * N..(c + 1) * N]`, `N = n^3`.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Index of `(i, j)` in the packed 6-component storage of a symmetric tensor.
///
/// Order: 11, 22, 33, 12, 13, 23 (zero-based pairs `(0,0), (1,1), (2,2), (0,1), (0,2), (1,2)`).
pub const fn sym_index(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) | (1, 0) => 3,
        (0, 2) | (2, 0) => 4,
        _ => 5,
    }
}

/// Row/column pair of packed symmetric component `s`.
pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Frobenius weights of packed symmetric components (off-diagonals appear twice).
pub const SYM_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

/// A field with `C` real components per lattice point.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<const C: usize> {
    grid: Grid,
    data: Vec<f64>,
}

pub type ScalarField = Field<1>;
pub type VectorField = Field<3>;
/// Full 3×3 tensor, component `3 * i + j` holds entry `(i, j)`.
pub type TensorField = Field<9>;
/// Symmetric 3×3 tensor in packed storage, see [`sym_index`].
pub type SymTensorField = Field<6>;
/// Gradient of a symmetric tensor: component `6 * k + s` holds `∂_k` of packed entry `s`.
pub type SymTensorGradient = Field<18>;

impl<const C: usize> Field<C> {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![0.0; C * grid.points()],
        }
    }

    /// Samples `f(position) -> [f64; C]` at every lattice point.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> [f64; C]) -> Self {
        let n3 = grid.points();
        let mut data = vec![0.0; C * n3];
        for idx in 0..n3 {
            let v = f(grid.position(idx));
            for c in 0..C {
                data[c * n3 + idx] = v[c];
            }
        }
        Self {
            grid: grid.clone(),
            data,
        }
    }

    /// Wraps raw component-major samples. Rejects wrong lengths and non-finite values.
    pub fn from_data(grid: &Grid, data: Vec<f64>) -> Result<Self> {
        let expected = C * grid.points();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    /// Wraps samples without the finiteness check; used for intermediate stages.
    pub(crate) fn from_raw(grid: &Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), C * grid.points());
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n3 = self.grid.points();
        &self.data[c * n3..(c + 1) * n3]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n3 = self.grid.points();
        &mut self.data[c * n3..(c + 1) * n3]
    }

    /// All components at lattice point `idx`.
    pub fn at(&self, idx: usize) -> [f64; C] {
        let n3 = self.grid.points();
        std::array::from_fn(|c| self.data[c * n3 + idx])
    }

    pub fn set(&mut self, idx: usize, value: [f64; C]) {
        let n3 = self.grid.points();
        for (c, v) in value.into_iter().enumerate() {
            self.data[c * n3 + idx] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert!(self.grid == other.grid);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        debug_assert!(self.grid == other.grid);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::from_raw(&self.grid, data)
    }

    /// Pointwise map over every component sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise magnitude weights: symmetric tensors count off-diagonals twice
    /// so that the result is the Frobenius norm of the full 3×3 tensor.
    pub(crate) fn component_weight(c: usize) -> f64 {
        match C {
            6 => SYM_WEIGHTS[c],
            18 => SYM_WEIGHTS[c % 6],
            _ => 1.0,
        }
    }

    /// Squared pointwise magnitude at lattice point `idx`.
    pub fn magnitude_sq_at(&self, idx: usize) -> f64 {
        let n3 = self.grid.points();
        (0..C)
            .map(|c| Self::component_weight(c) * self.data[c * n3 + idx].powi(2))
            .sum()
    }

    /// Pointwise magnitude as a scalar field.
    pub fn magnitude(&self) -> ScalarField {
        let n3 = self.grid.points();
        let data = (0..n3).map(|i| self.magnitude_sq_at(i).sqrt()).collect();
        ScalarField::from_raw(&self.grid, data)
    }
}

impl SymTensorField {
    /// Builds a symmetric field from a full-tensor sampler; only the upper triangle is read.
    pub fn from_tensor_fn(grid: &Grid, f: impl Fn([f64; 3]) -> [[f64; 3]; 3]) -> Self {
        Self::from_fn(grid, |x| {
            let t = f(x);
            SYM_PAIRS.map(|(i, j)| t[i][j])
        })
    }

    /// Entry `(i, j)` at lattice point `idx`.
    pub fn entry(&self, idx: usize, i: usize, j: usize) -> f64 {
        self.component(sym_index(i, j))[idx]
    }

    /// Full 3×3 matrix at lattice point `idx`.
    pub fn matrix_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let s = self.at(idx);
        std::array::from_fn(|i| std::array::from_fn(|j| s[sym_index(i, j)]))
    }

    /// Expands to the full 9-component tensor; symmetric by construction.
    pub fn to_full(&self) -> TensorField {
        let n3 = self.grid().points();
        let mut data = vec![0.0; 9 * n3];
        for i in 0..3 {
            for j in 0..3 {
                data[(3 * i + j) * n3..(3 * i + j + 1) * n3]
                    .copy_from_slice(self.component(sym_index(i, j)));
            }
        }
        TensorField::from_raw(self.grid(), data)
    }

    /// Pointwise trace.
    pub fn trace(&self) -> ScalarField {
        let n3 = self.grid().points();
        let data = (0..n3)
            .map(|i| self.component(0)[i] + self.component(1)[i] + self.component(2)[i])
            .collect();
        ScalarField::from_raw(self.grid(), data)
    }
}

impl TensorField {
    pub fn entry(&self, idx: usize, i: usize, j: usize) -> f64 {
        self.component(3 * i + j)[idx]
    }

    pub fn matrix_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let t = self.at(idx);
        std::array::from_fn(|i| std::array::from_fn(|j| t[3 * i + j]))
    }

    /// `(T + Tᵀ)/2` packed into symmetric storage.
    pub fn symmetric_part(&self) -> SymTensorField {
        let n3 = self.grid().points();
        let mut data = vec![0.0; 6 * n3];
        for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            let a = self.component(3 * i + j);
            let b = self.component(3 * j + i);
            for p in 0..n3 {
                data[s * n3 + p] = 0.5 * (a[p] + b[p]);
            }
        }
        SymTensorField::from_raw(self.grid(), data)
    }

    /// Largest `|T_ij − T_ji|` over the lattice.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for &(i, j) in &SYM_PAIRS[3..] {
            let a = self.component(3 * i + j);
            let b = self.component(3 * j + i);
            for p in 0..a.len() {
                worst = worst.max((a[p] - b[p]).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_index_roundtrip() {
        for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            assert_eq!(sym_index(i, j), s);
            assert_eq!(sym_index(j, i), s);
        }
    }

    #[test]
    fn expansion_is_symmetric() {
        let g = Grid::periodic_2pi(8).unwrap();
        let s = SymTensorField::from_fn(&g, |x| [x[0], 1.0, 2.0, x[1].sin(), x[2], -3.0]);
        let full = s.to_full();
        assert_eq!(full.max_asymmetry(), 0.0);
        assert_eq!(full.symmetric_part(), s);
        let m = s.matrix_at(77);
        assert_eq!(m[1][0], m[0][1]);
    }

    #[test]
    fn frobenius_magnitude_counts_off_diagonals_twice() {
        let g = Grid::periodic_2pi(8).unwrap();
        let s = SymTensorField::from_fn(&g, |_| [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((s.magnitude().data()[5] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn from_data_rejects_bad_input() {
        let g = Grid::periodic_2pi(8).unwrap();
        assert!(matches!(
            VectorField::from_data(&g, vec![0.0; 10]),
            Err(Error::ShapeMismatch {
                expected: 1536,
                actual: 10
            })
        ));
        let mut v = vec![0.0; 512];
        v[3] = f64::NAN;
        assert!(matches!(
            ScalarField::from_data(&g, v),
            Err(Error::NonFinite)
        ));
    }
}
