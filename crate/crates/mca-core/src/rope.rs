//! Rotary position encoding.
//!
//! A head dimension `d` is treated as `d/2` independent planes. For a token
//! at integer position `m`, plane `i` is rotated by the angle `m * theta_i`
//! with `theta_i = base^(-2i/d)` (0-based `i`). The first plane turns one
//! radian per position step, later planes turn geometrically slower.
//!
//! [`rotate`] is the fast path used everywhere; [`rotation_matrix`] builds the
//! equivalent dense block-diagonal matrix and exists so tests can check the
//! fast path against plain matrix algebra.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RotaryFrequencies<T> {
    dim: usize,
    base: T,
    thetas: Vec<T>,
}

impl<T: Scalar> RotaryFrequencies<T> {
    pub const DEFAULT_BASE: f64 = 10_000.0;

    /// Per-plane angular frequencies for an even head dimension.
    pub fn new(dim: usize, base: T) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidDimension { dim });
        }
        if !base.is_finite() || base <= T::one() {
            return Err(Error::InvalidBase {
                base: base.to_f64().unwrap_or(f64::NAN),
            });
        }
        let thetas = (0..dim / 2)
            .map(|i| base.powf(T::real(-2.0 * i as f64 / dim as f64)))
            .collect();
        Ok(Self { dim, base, thetas })
    }

    pub fn with_default_base(dim: usize) -> Result<Self> {
        Self::new(dim, T::real(Self::DEFAULT_BASE))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> T {
        self.base
    }

    /// One angular frequency per plane, `dim/2` entries, strictly decreasing,
    /// `thetas()[0] == 1` exactly.
    pub fn thetas(&self) -> &[T] {
        &self.thetas
    }
}

/// Rotate `vec` in place for a token at position `m`. `m` may be negative;
/// rotating by `m` and then by `-m` restores the input up to roundoff.
pub fn rotate_in_place<T: Scalar>(vec: &mut [T], m: i64, freq: &RotaryFrequencies<T>) -> Result<()> {
    if vec.len() != freq.dim() {
        return Err(Error::Shape {
            context: "rotate",
            expected: format!("vector of length {}", freq.dim()),
            got: vec.len().to_string(),
        });
    }
    let pos = T::real(m as f64);
    for (theta, pair) in freq.thetas().iter().zip(vec.chunks_exact_mut(2)) {
        let (sin, cos) = (pos * *theta).sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
    Ok(())
}

/// Rotated copy of `vec` for a token at position `m`.
pub fn rotate<T: Scalar>(vec: &[T], m: i64, freq: &RotaryFrequencies<T>) -> Result<Vec<T>> {
    let mut out = vec.to_vec();
    rotate_in_place(&mut out, m, freq)?;
    Ok(out)
}

/// Unit vector whose energy sits entirely in the slowest-turning plane.
///
/// Its self-similarity after a rotation by `m` is exactly
/// `cos(m * theta_last)`, which is strictly decreasing in `m` as long as
/// `m * theta_last` stays below pi. Useful where a test or demo needs decay
/// that is monotone by construction rather than merely on average.
pub fn slowest_plane_unit<T: Scalar>(dim: usize) -> Result<Vec<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidDimension { dim });
    }
    let mut v = vec![T::zero(); dim];
    v[dim - 2] = T::one();
    Ok(v)
}

/// Dense `d x d` rotation, the slow reference form of [`rotate`]. Plane `i`
/// occupies rows/columns `2i` and `2i+1` with the block
/// `[[cos, -sin], [sin, cos]]`; everything off the blocks is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix<T> {
    dim: usize,
    entries: Vec<T>, // row-major
}

/// Materialize the rotation for position `m`.
pub fn rotation_matrix<T: Scalar>(m: i64, freq: &RotaryFrequencies<T>) -> RotationMatrix<T> {
    let d = freq.dim();
    let mut entries = vec![T::zero(); d * d];
    let pos = T::real(m as f64);
    for (i, theta) in freq.thetas().iter().enumerate() {
        let (sin, cos) = (pos * *theta).sin_cos();
        let (r, c) = (2 * i, 2 * i);
        entries[r * d + c] = cos;
        entries[r * d + c + 1] = -sin;
        entries[(r + 1) * d + c] = sin;
        entries[(r + 1) * d + c + 1] = cos;
    }
    RotationMatrix { dim: d, entries }
}

impl<T: Scalar> RotationMatrix<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> T {
        self.entries[row * self.dim + col]
    }

    /// Row-major entries, `dim * dim` of them.
    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.dim {
            return Err(Error::Shape {
                context: "rotation apply",
                expected: format!("vector of length {}", self.dim),
                got: v.len().to_string(),
            });
        }
        let d = self.dim;
        let mut out = vec![T::zero(); d];
        for r in 0..d {
            let mut acc = T::zero();
            for c in 0..d {
                acc += self.entries[r * d + c] * v[c];
            }
            out[r] = acc;
        }
        Ok(out)
    }

    /// Transpose. For a rotation this equals the rotation by the negated
    /// position.
    pub fn transposed(&self) -> Self {
        let d = self.dim;
        let mut entries = vec![T::zero(); d * d];
        for r in 0..d {
            for c in 0..d {
                entries[c * d + r] = self.entries[r * d + c];
            }
        }
        Self { dim: d, entries }
    }

    /// Plain dense product, used by tests to form `R(i)^T R(j)`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Shape {
                context: "rotation matmul",
                expected: self.dim.to_string(),
                got: other.dim.to_string(),
            });
        }
        let d = self.dim;
        let mut entries = vec![T::zero(); d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == T::zero() {
                    continue;
                }
                for c in 0..d {
                    entries[r * d + c] += a * other.entries[k * d + c];
                }
            }
        }
        Ok(Self { dim: d, entries })
    }

    /// Largest absolute entry difference against another matrix.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}
