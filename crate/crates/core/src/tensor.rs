//! Dense row-major matrices over `f32`/`f64` with BLAS-style products.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Floating-point element type usable by the model.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally
    /// transposes. `a` is `m x k` after `op`, `b` is `k x n`, `c` is `m x n`;
    /// all stored row-major with their natural (pre-transpose) widths.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(
                    a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
                    "gemm shape mismatch"
                );
                if m == 0 || n == 0 {
                    return;
                }
                // op(x)[i][j] lives at i * rs + j * cs in the row-major storage.
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the slices cover the strided extents checked above.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length does not match {rows}x{cols}"
        );
        Self { rows, cols, data }
    }

    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal =
            Normal::new(0.0, std).expect("standard deviation must be finite and non-negative");
        Self {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| F::lit(normal.sample(rng)))
                .collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn cast<G: Scalar>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| G::from_f64(x.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Self {
        let mut out = Self::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Writes `src` into columns `start..start + src.cols`.
    pub fn set_col_slice(&mut self, start: usize, src: &Self) {
        for i in 0..self.rows {
            let w = src.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(src.row(i));
        }
    }

    pub fn add_row_vector(&mut self, v: &[F]) {
        assert_eq!(v.len(), self.cols);
        for i in 0..self.rows {
            self.row_mut(i)
                .iter_mut()
                .zip(v)
                .for_each(|(a, &b)| *a += b);
        }
    }

    /// Accumulates the column sums into `out`.
    pub fn col_sums_into(&self, out: &mut [F]) {
        for i in 0..self.rows {
            out.iter_mut().zip(self.row(i)).for_each(|(a, &b)| *a += b);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

fn op_shape<F>(m: &Mat<F>, t: bool) -> (usize, usize) {
    if t {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    }
}

/// `c = alpha * op(a) op(b) + beta * c`.
pub fn gemm_into<F: Scalar>(
    a: &Mat<F>,
    ta: bool,
    b: &Mat<F>,
    tb: bool,
    alpha: F,
    beta: F,
    c: &mut Mat<F>,
) {
    let (m, k) = op_shape(a, ta);
    let (k2, n) = op_shape(b, tb);
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape mismatch");
    F::gemm(m, k, n, alpha, &a.data, ta, &b.data, tb, beta, &mut c.data);
}

pub fn matmul<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm_into(a, false, b, false, F::one(), F::zero(), &mut c);
    c
}

/// `a * b^T`.
pub fn matmul_nt<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    let mut c = Mat::zeros(a.rows, b.rows);
    gemm_into(a, false, b, true, F::one(), F::zero(), &mut c);
    c
}

/// `a^T * b`.
pub fn matmul_tn<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    let mut c = Mat::zeros(a.cols, b.cols);
    gemm_into(a, true, b, false, F::one(), F::zero(), &mut c);
    c
}

/// `c += a^T * b`.
pub fn add_matmul_tn<F: Scalar>(c: &mut Mat<F>, a: &Mat<F>, b: &Mat<F>) {
    gemm_into(a, true, b, false, F::one(), F::one(), c);
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Scalar>(m: &mut Mat<F>) {
    for i in 0..m.rows {
        softmax(m.row_mut(i));
    }
}

pub fn softmax<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

/// `log(sum(exp(row)))`, computed stably.
pub fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln()
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    F::lit(0.5) * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = F::lit(0.5);
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x)
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
