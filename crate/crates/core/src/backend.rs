//! Arithmetic backends.
//!
//! Every geometry kernel and layer is written once against [`Ops`]. The
//! plain [`Eval`] backend computes values directly in `f64`; the tape in
//! [`crate::autodiff`] records the same computation for reverse-mode
//! differentiation. Both backends share the scalar routines below, so a
//! value computed on the tape is bit-identical to the plain one.

use crate::geometry::StabilityConfig;

/// Elementwise scalar functions understood by every backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Identity,
    /// `tanh` with its argument clipped to `±tanh_clip`.
    Tanh,
    /// `atanh` with its argument clipped to `±atanh_clip`.
    Atanh,
    Sigmoid,
    Sqrt,
    Asinh,
    Exp,
    Ln,
    /// `ln(1 + e^t)`, evaluated without overflow.
    Softplus,
    Recip,
    /// `max(t, lo)`.
    ClampMin(f64),
}

impl Unary {
    pub fn value(self, t: f64, stab: &StabilityConfig) -> f64 {
        match self {
            Unary::Identity => t,
            Unary::Tanh => t.clamp(-stab.tanh_clip, stab.tanh_clip).tanh(),
            Unary::Atanh => t.clamp(-stab.atanh_clip, stab.atanh_clip).atanh(),
            Unary::Sigmoid => sigmoid(t),
            Unary::Sqrt => t.sqrt(),
            Unary::Asinh => t.asinh(),
            Unary::Exp => t.exp(),
            Unary::Ln => t.ln(),
            Unary::Softplus => softplus(t),
            Unary::Recip => 1.0 / t,
            Unary::ClampMin(lo) => t.max(lo),
        }
    }

    /// Derivative at `t`, given the already computed output `y`.
    ///
    /// Clipped functions are flat outside their clip range.
    pub fn derivative(self, t: f64, y: f64, stab: &StabilityConfig) -> f64 {
        match self {
            Unary::Identity => 1.0,
            Unary::Tanh => {
                if t.abs() > stab.tanh_clip {
                    0.0
                } else {
                    1.0 - y * y
                }
            }
            Unary::Atanh => {
                if t.abs() > stab.atanh_clip {
                    0.0
                } else {
                    1.0 / (1.0 - t * t)
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Asinh => 1.0 / (1.0 + t * t).sqrt(),
            Unary::Exp => y,
            Unary::Ln => 1.0 / t,
            Unary::Softplus => sigmoid(t),
            Unary::Recip => -y * y,
            Unary::ClampMin(lo) => {
                if t > lo {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Row-major `rows × cols` matrix times vector, written into `out`.
pub fn matvec_into(m: &[f64], cols: usize, v: &[f64], out: &mut Vec<f64>) {
    debug_assert_eq!(v.len(), cols);
    out.extend(m.chunks_exact(cols).map(|row| dot(row, v)));
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data does not match its shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, x) in d.iter().enumerate() {
            m.data[i * n + i] = *x;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows);
        matvec_into(&self.data, self.cols, v, &mut out);
        out
    }
}

/// The arithmetic a geometry kernel or layer needs.
///
/// Scalars, vectors and matrices are opaque handles; `val` exposes a
/// scalar's current value so kernels can pick a branch (projection,
/// zero-norm limits) without leaving the backend.
pub trait Ops {
    type S: Clone;
    type V: Clone;
    type M: Clone;

    fn stability(&self) -> &StabilityConfig;

    fn lit(&self, c: f64) -> Self::S;
    fn val(&self, s: &Self::S) -> f64;
    fn vector(&self, values: &[f64]) -> Self::V;
    fn values(&self, v: &Self::V) -> Vec<f64>;
    fn dim(&self, v: &Self::V) -> usize;
    fn mat_shape(&self, m: &Self::M) -> (usize, usize);

    fn add(&self, a: &Self::S, b: &Self::S) -> Self::S;
    fn sub(&self, a: &Self::S, b: &Self::S) -> Self::S;
    fn mul(&self, a: &Self::S, b: &Self::S) -> Self::S;
    fn div(&self, a: &Self::S, b: &Self::S) -> Self::S;
    fn unary(&self, f: Unary, a: &Self::S) -> Self::S;

    fn vadd(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn vsub(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn vneg(&self, a: &Self::V) -> Self::V;
    fn scale(&self, v: &Self::V, s: &Self::S) -> Self::V;
    fn scale_by(&self, v: &Self::V, c: f64) -> Self::V;
    fn hadamard(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn vmap(&self, f: Unary, v: &Self::V) -> Self::V;
    fn dot(&self, a: &Self::V, b: &Self::V) -> Self::S;
    fn norm_sq(&self, v: &Self::V) -> Self::S;
    /// Euclidean norm; its derivative at the zero vector is taken as zero.
    fn norm(&self, v: &Self::V) -> Self::S;
    fn sum(&self, v: &Self::V) -> Self::S;
    fn matvec(&self, m: &Self::M, v: &Self::V) -> Self::V;
    fn concat(&self, parts: &[Self::V]) -> Self::V;
    fn stack(&self, scalars: &[Self::S]) -> Self::V;
    fn component(&self, v: &Self::V, i: usize) -> Self::S;
    fn row(&self, m: &Self::M, i: usize) -> Self::V;
    fn as_vector(&self, m: &Self::M) -> Self::V;

    fn zeros(&self, n: usize) -> Self::V {
        self.vector(&vec![0.0; n])
    }

    fn neg(&self, a: &Self::S) -> Self::S {
        self.sub(&self.lit(0.0), a)
    }
}

/// Direct `f64` evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Eval {
    stab: StabilityConfig,
}

impl Eval {
    pub fn new(stab: StabilityConfig) -> Self {
        Self { stab }
    }
}

impl Ops for Eval {
    type S = f64;
    type V = Vec<f64>;
    type M = Matrix;

    fn stability(&self) -> &StabilityConfig {
        &self.stab
    }

    fn lit(&self, c: f64) -> f64 {
        c
    }

    fn val(&self, s: &f64) -> f64 {
        *s
    }

    fn vector(&self, values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    fn values(&self, v: &Vec<f64>) -> Vec<f64> {
        v.clone()
    }

    fn dim(&self, v: &Vec<f64>) -> usize {
        v.len()
    }

    fn mat_shape(&self, m: &Matrix) -> (usize, usize) {
        (m.rows, m.cols)
    }

    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }

    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }

    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }

    fn div(&self, a: &f64, b: &f64) -> f64 {
        a / b
    }

    fn unary(&self, f: Unary, a: &f64) -> f64 {
        f.value(*a, &self.stab)
    }

    fn vadd(&self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn vsub(&self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    fn vneg(&self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|x| -x).collect()
    }

    fn scale(&self, v: &Vec<f64>, s: &f64) -> Vec<f64> {
        v.iter().map(|x| x * s).collect()
    }

    fn scale_by(&self, v: &Vec<f64>, c: f64) -> Vec<f64> {
        v.iter().map(|x| x * c).collect()
    }

    fn hadamard(&self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    fn vmap(&self, f: Unary, v: &Vec<f64>) -> Vec<f64> {
        v.iter().map(|x| f.value(*x, &self.stab)).collect()
    }

    fn dot(&self, a: &Vec<f64>, b: &Vec<f64>) -> f64 {
        dot(a, b)
    }

    fn norm_sq(&self, v: &Vec<f64>) -> f64 {
        norm_sq(v)
    }

    fn norm(&self, v: &Vec<f64>) -> f64 {
        norm(v)
    }

    fn sum(&self, v: &Vec<f64>) -> f64 {
        v.iter().sum()
    }

    fn matvec(&self, m: &Matrix, v: &Vec<f64>) -> Vec<f64> {
        m.mul_vec(v)
    }

    fn concat(&self, parts: &[Vec<f64>]) -> Vec<f64> {
        parts.concat()
    }

    fn stack(&self, scalars: &[f64]) -> Vec<f64> {
        scalars.to_vec()
    }

    fn component(&self, v: &Vec<f64>, i: usize) -> f64 {
        v[i]
    }

    fn row(&self, m: &Matrix, i: usize) -> Vec<f64> {
        m.row(i).to_vec()
    }

    fn as_vector(&self, m: &Matrix) -> Vec<f64> {
        m.data.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn clipped_derivatives_vanish_outside_range() {
        let stab = StabilityConfig::default();
        let y = Unary::Tanh.value(20.0, &stab);
        assert_eq!(y, 15f64.tanh());
        assert_eq!(Unary::Tanh.derivative(20.0, y, &stab), 0.0);
        let y = Unary::Atanh.value(1.0, &stab);
        assert!(y.is_finite());
        assert_eq!(Unary::Atanh.derivative(1.0, y, &stab), 0.0);
    }

    #[test]
    fn matrix_vector_product() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.mul_vec(&[1.0, -1.0]), vec![-1.0, -1.0, -1.0]);
    }
}
