//! Small dense square matrices, the operator 2-norm, and scaled products.
//!
//! Everything here is sized for state dimensions of a handful of components.
//! The hot paths (`mul_into`, [`NormWorkspace::norm2`]) work on row-major
//! slices so callers can keep long matrix sequences in one flat buffer.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Mul;

use crate::error::{Error, Result};

/// Dense `d x d` matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::usage(format!(
                "matrix of dimension {dim} needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Matrix { dim, data })
    }

    /// Builds a matrix from rows. Panics if the rows are ragged or not square.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "matrix rows must form a square");
            data.extend_from_slice(r);
        }
        Matrix { dim, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = *v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim);
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.dim;
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t.data[j * d + i] = self.data[i * d + j];
            }
        }
        t
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += self.data[i * d + j] * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        NormWorkspace::new(self.dim).norm(&self.data, kind)
    }

    pub fn norm2(&self) -> f64 {
        self.norm(NormKind::Two)
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.data.chunks(self.dim.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in matrix product");
        let mut out = Matrix::zeros(self.dim);
        mul_into(&self.data, &rhs.data, &mut out.data, self.dim);
        out
    }
}

/// `out = a * b` for row-major `d x d` slices. Each entry sums over `k`
/// left to right.
#[inline]
pub fn mul_into(a: &[f64], b: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        let arow = &a[i * d..(i + 1) * d];
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += arow[k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Operator norm induced by the Euclidean vector norm.
    #[default]
    Two,
    Frobenius,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "2" => Ok(NormKind::Two),
            "frobenius" | "fro" => Ok(NormKind::Frobenius),
            other => Err(Error::usage(format!("unknown norm `{other}`"))),
        }
    }
}

/// Scratch space for repeated norm evaluations without allocation.
#[derive(Debug, Clone)]
pub struct NormWorkspace {
    dim: usize,
    gram: Vec<f64>,
    scaled: Vec<f64>,
}

/// Jacobi sweeps stop once the off-diagonal Frobenius mass falls below this
/// fraction of the full Frobenius norm.
const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 64;

impl NormWorkspace {
    pub fn new(dim: usize) -> Self {
        NormWorkspace {
            dim,
            gram: vec![0.0; dim * dim],
            scaled: vec![0.0; dim * dim],
        }
    }

    pub fn norm(&mut self, a: &[f64], kind: NormKind) -> f64 {
        match kind {
            NormKind::Two => self.norm2(a),
            NormKind::Frobenius => frobenius(a),
        }
    }

    /// Operator 2-norm of a row-major `d x d` slice: the square root of the
    /// largest eigenvalue of `AᵀA`, found by cyclic Jacobi.
    pub fn norm2(&mut self, a: &[f64]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(a.len(), d * d);
        if d == 1 {
            return a[0].abs();
        }
        let max = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return 0.0;
        }
        // Entries far from unity would over/underflow in AᵀA; rescale by an
        // exact power of two.
        let (src, unscale): (&[f64], f64) = if !(1e-100..=1e100).contains(&max) {
            let k = max.log2().floor() as i32;
            let s = 2f64.powi(-k);
            for (dst, v) in self.scaled.iter_mut().zip(a) {
                *dst = v * s;
            }
            (&self.scaled, 2f64.powi(k))
        } else {
            (a, 1.0)
        };
        gram_into(src, &mut self.gram, d);
        sym_max_eigenvalue(&mut self.gram, d).max(0.0).sqrt() * unscale
    }
}

/// `g = aᵀa`.
#[inline]
fn gram_into(a: &[f64], g: &mut [f64], d: usize) {
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += a[k * d + i] * a[k * d + j];
            }
            g[i * d + j] = acc;
            g[j * d + i] = acc;
        }
    }
}

/// Largest eigenvalue of the symmetric matrix `a` (destroyed in place).
pub(crate) fn sym_max_eigenvalue(a: &mut [f64], d: usize) -> f64 {
    let fro = frobenius(a);
    if fro == 0.0 {
        return 0.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    off += a[i * d + j] * a[i * d + j];
                }
            }
        }
        if off.sqrt() < JACOBI_TOL * fro {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    let nkp = c * akp - s * akq;
                    let nkq = s * akp + c * akq;
                    a[k * d + p] = nkp;
                    a[p * d + k] = nkp;
                    a[k * d + q] = nkq;
                    a[q * d + k] = nkq;
                }
                a[p * d + p] = app - t * apq;
                a[q * d + q] = aqq + t * apq;
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).fold(f64::NEG_INFINITY, f64::max)
}

/// A matrix stored as `mantissa * exp(log_scale)`, with the mantissa's
/// 2-norm kept inside `[1/2, 2]` (or the mantissa exactly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix {
    mantissa: Matrix,
    log_scale: f64,
    /// 2-norm of the mantissa, cached from the last normalization.
    mantissa_norm: f64,
}

pub const BAND_LO: f64 = 0.5;
pub const BAND_HI: f64 = 2.0;

impl ScaledMatrix {
    pub fn identity(dim: usize) -> Self {
        ScaledMatrix {
            mantissa: Matrix::identity(dim),
            log_scale: 0.0,
            mantissa_norm: 1.0,
        }
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let mut ws = NormWorkspace::new(m.dim());
        let mut s = ScaledMatrix {
            mantissa: m,
            log_scale: 0.0,
            mantissa_norm: 0.0,
        };
        s.normalize(&mut ws);
        s
    }

    pub fn mantissa(&self) -> &Matrix {
        &self.mantissa
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn dim(&self) -> usize {
        self.mantissa.dim()
    }

    /// 2-norm of the mantissa alone.
    #[inline]
    pub fn mantissa_norm(&self) -> f64 {
        self.mantissa_norm
    }

    /// Natural log of the represented matrix's 2-norm (`-inf` for zero).
    pub fn log_norm2(&self) -> f64 {
        self.mantissa_norm.ln() + self.log_scale
    }

    /// The represented matrix; entries overflow to infinity when the scale
    /// is too large for `f64`.
    pub fn to_matrix(&self) -> Matrix {
        self.mantissa.scaled(self.log_scale.exp())
    }

    /// `self = self * rhs` followed by renormalization.
    pub fn mul_assign_slice(&mut self, rhs: &[f64], scratch: &mut [f64], ws: &mut NormWorkspace) {
        let d = self.mantissa.dim();
        mul_into(self.mantissa.as_slice(), rhs, scratch, d);
        self.mantissa.as_mut_slice().copy_from_slice(&scratch[..d * d]);
        self.normalize(ws);
    }

    pub fn mul(&self, rhs: &ScaledMatrix) -> ScaledMatrix {
        let d = self.dim();
        let mut ws = NormWorkspace::new(d);
        let mut out = ScaledMatrix {
            mantissa: &self.mantissa * &rhs.mantissa,
            log_scale: self.log_scale + rhs.log_scale,
            mantissa_norm: 0.0,
        };
        out.normalize(&mut ws);
        out
    }

    /// Recomputes the mantissa norm and, if it left the band, rescales the
    /// mantissa by an exact power of two.
    fn normalize(&mut self, ws: &mut NormWorkspace) {
        let n = ws.norm2(self.mantissa.as_slice());
        if n == 0.0 {
            self.mantissa_norm = 0.0;
            return;
        }
        if (BAND_LO..=BAND_HI).contains(&n) {
            self.mantissa_norm = n;
            return;
        }
        let k = n.log2().round() as i32;
        let s = 2f64.powi(-k);
        for v in self.mantissa.as_mut_slice() {
            *v *= s;
        }
        self.log_scale += k as f64 * std::f64::consts::LN_2;
        self.mantissa_norm = n * s;
    }
}
