//! Dense row-major matrices, GEMM and activation functions.
//!
//! Storage is `f32`. Every reduction (GEMM included) accumulates in `f64` and
//! rounds once on the way out, so results do not depend on batch layout.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::from_vec",
                format!("{} elements for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite element {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Rounds an `f64` buffer into a new matrix.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "from_f64: length mismatch");
        DenseMatrix {
            rows,
            cols,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `C = op(A) · op(B)` over `f64` buffers, where `op` optionally transposes.
///
/// `a` holds `m×k` row-major (or `k×m` when `a_t`), `b` holds `k×n` (or
/// `n×k` when `b_t`); `c` receives `m×n` and is overwritten.
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "dgemm: lhs length");
    assert_eq!(b.len(), k * n, "dgemm: rhs length");
    assert_eq!(c.len(), m * n, "dgemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product with `f64` accumulation.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    dgemm(
        a.rows,
        a.cols,
        b.cols,
        &a.to_f64(),
        false,
        &b.to_f64(),
        false,
        &mut out,
    );
    Ok(DenseMatrix::from_f64(a.rows, b.cols, &out))
}

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Identity,
    Relu,
    LeakyRelu { slope: f32 },
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    pub fn leaky_relu(slope: f32) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::input(format!("leaky relu slope must be > 0, got {slope}")));
        }
        Ok(ActivationKind::LeakyRelu { slope })
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => z,
            ActivationKind::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope as f64 * z
                }
            }
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Tanh => z.tanh(),
        }
    }

    /// Derivative at `z`. The kink at 0 takes the left-hand value, so ReLU'(0) = 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope as f64
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Checkpoint code: 0=Identity, 1=ReLU, 2=LeakyReLU, 3=Sigmoid, 4=Tanh.
    pub fn code(self) -> u8 {
        match self {
            ActivationKind::Identity => 0,
            ActivationKind::Relu => 1,
            ActivationKind::LeakyRelu { .. } => 2,
            ActivationKind::Sigmoid => 3,
            ActivationKind::Tanh => 4,
        }
    }

    pub fn from_code(code: u8, slope: f32) -> Result<Self> {
        match code {
            0 => Ok(ActivationKind::Identity),
            1 => Ok(ActivationKind::Relu),
            2 => ActivationKind::leaky_relu(slope),
            3 => Ok(ActivationKind::Sigmoid),
            4 => Ok(ActivationKind::Tanh),
            other => Err(Error::format(format!("unknown activation code {other}"))),
        }
    }

    /// Slope stored alongside the code; 0 for everything but LeakyReLU.
    pub fn slope(self) -> f32 {
        match self {
            ActivationKind::LeakyRelu { slope } => slope,
            _ => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu { .. } => "leaky-relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(ActivationKind::Identity),
            "relu" => Ok(ActivationKind::Relu),
            "leaky-relu" | "leaky_relu" | "leakyrelu" => {
                Ok(ActivationKind::LeakyRelu { slope: DEFAULT_LEAKY_SLOPE })
            }
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            other => Err(Error::input(format!("unknown activation '{other}'"))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn activation_apply(kind: ActivationKind, z: &DenseMatrix) -> DenseMatrix {
    map_f64(z, |v| kind.apply(v))
}

pub fn activation_grad(kind: ActivationKind, z: &DenseMatrix) -> DenseMatrix {
    map_f64(z, |v| kind.derivative(v))
}

fn map_f64(z: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    DenseMatrix {
        rows: z.rows,
        cols: z.cols,
        data: z.data.iter().map(|&v| f(v as f64) as f32).collect(),
    }
}

/// Input region where an activation's derivative is (nearly) zero.
///
/// For saturating activations only the left tail is stored; `mirrored` marks
/// that the reflected right tail `[-upper, +inf)` belongs to the region too.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlindRange {
    Empty,
    LeftUnbounded { upper: f64, mirrored: bool },
    Interval { lower: f64, upper: f64 },
}

impl BlindRange {
    pub fn contains(&self, z: f64) -> bool {
        match *self {
            BlindRange::Empty => false,
            BlindRange::LeftUnbounded { upper, mirrored } => {
                z <= upper || (mirrored && z >= -upper)
            }
            BlindRange::Interval { lower, upper } => lower <= z && z <= upper,
        }
    }

    fn everywhere() -> Self {
        BlindRange::Interval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }
}

impl fmt::Display for BlindRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BlindRange::Empty => f.write_str("{}"),
            BlindRange::LeftUnbounded { upper, mirrored: false } => write!(f, "(-inf, {upper}]"),
            BlindRange::LeftUnbounded { upper, mirrored: true } => {
                write!(f, "(-inf, {upper}] U [{}, +inf)", -upper)
            }
            BlindRange::Interval { lower, upper } => write!(f, "[{lower}, {upper}]"),
        }
    }
}

/// Maximal input region where `|phi'(z)| <= tol`.
pub fn blind_range(kind: ActivationKind, tol: f64) -> BlindRange {
    assert!(tol >= 0.0, "blind_range: tol must be >= 0, got {tol}");
    match kind {
        ActivationKind::Identity => {
            if tol >= 1.0 {
                BlindRange::everywhere()
            } else {
                BlindRange::Empty
            }
        }
        ActivationKind::Relu => {
            if tol >= 1.0 {
                BlindRange::everywhere()
            } else {
                BlindRange::LeftUnbounded { upper: 0.0, mirrored: false }
            }
        }
        ActivationKind::LeakyRelu { slope } => {
            if tol >= 1.0 {
                BlindRange::everywhere()
            } else if tol >= slope as f64 {
                BlindRange::LeftUnbounded { upper: 0.0, mirrored: false }
            } else {
                BlindRange::Empty
            }
        }
        ActivationKind::Sigmoid => {
            if tol == 0.0 {
                BlindRange::Empty
            } else if tol >= 0.25 {
                BlindRange::everywhere()
            } else {
                // s(1-s) = tol  =>  s = (1 + sqrt(1 - 4 tol)) / 2 on the right branch
                let s = 0.5 * (1.0 + (1.0 - 4.0 * tol).sqrt());
                let edge = (s / (1.0 - s)).ln();
                BlindRange::LeftUnbounded { upper: -edge, mirrored: true }
            }
        }
        ActivationKind::Tanh => {
            if tol == 0.0 {
                BlindRange::Empty
            } else if tol >= 1.0 {
                BlindRange::everywhere()
            } else {
                let edge = (1.0 - tol).sqrt().atanh();
                BlindRange::LeftUnbounded { upper: -edge, mirrored: true }
            }
        }
    }
}
