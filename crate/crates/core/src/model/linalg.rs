//! Dense kernels shared by the transformer's forward and backward passes.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use super::kernels;

/// Floating-point element type of a model: `f32` for training and inference,
/// `f64` for gradient checking.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + std::iter::Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    /// `c = alpha · op(a) · op(b) + beta · c` over strided row-major views.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self], rsc: isize, csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from(v).expect("literal fits")
    }

    /// In place: `row ← softmax(row·scale + bias)`. Keys with a `−∞` bias get
    /// exactly zero weight.
    fn softmax_row(row: &mut [Self], bias: &[Self], scale: Self) {
        let mut max = Self::neg_infinity();
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v * scale + b;
            max = max.max(*v);
        }
        let mut sum = Self::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    /// In place: `dp ← p ⊙ (dp − ⟨p, dp⟩) · scale`, the softmax backward step.
    fn softmax_grad_row(p: &[Self], dp: &mut [Self], scale: Self) {
        let dot: Self = p.iter().zip(dp.iter()).map(|(&a, &b)| a * b).sum();
        for (g, &pv) in dp.iter_mut().zip(p) {
            *g = pv * (*g - dot) * scale;
        }
    }

    fn gelu_slice(u: &[Self], out: &mut [Self]) {
        for (o, &x) in out.iter_mut().zip(u) {
            *o = gelu(x);
        }
    }

    /// In place: `g ← g ⊙ gelu'(u)`.
    fn gelu_grad_slice(u: &[Self], g: &mut [Self]) {
        for (o, &x) in g.iter_mut().zip(u) {
            *o *= gelu_grad(x);
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path $(, $extra:item)*) => {
        impl Scalar for $t {
            fn gemm_raw(
                m: usize, k: usize, n: usize, alpha: Self,
                a: &[Self], rsa: isize, csa: isize,
                b: &[Self], rsb: isize, csb: isize,
                beta: Self, c: &mut [Self], rsc: isize, csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |r: usize, c: usize, rs: isize, cs: isize| {
                    if r == 0 || c == 0 { 0 } else { ((r - 1) as isize * rs + (c - 1) as isize * cs) as usize + 1 }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: a too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: b too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: c too short");
                // SAFETY: bounds of all three strided views were checked above.
                unsafe {
                    $f(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }
            $($extra)*
        }
    };
}

impl_scalar!(
    f32,
    matrixmultiply::sgemm,
    fn softmax_row(row: &mut [f32], bias: &[f32], scale: f32) {
        kernels::softmax_row(row, bias, scale)
    },
    fn softmax_grad_row(p: &[f32], dp: &mut [f32], scale: f32) {
        kernels::softmax_grad_row(p, dp, scale)
    },
    fn gelu_slice(u: &[f32], out: &mut [f32]) {
        kernels::gelu_slice(u, out)
    },
    fn gelu_grad_slice(u: &[f32], g: &mut [f32]) {
        kernels::gelu_grad_slice(u, g)
    }
);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix view: `rows × cols` with a row stride, starting at `offset`.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub offset: usize,
}

impl View {
    pub fn full(rows: usize, cols: usize) -> Self {
        View { rows, cols, stride: cols, offset: 0 }
    }

    pub fn cols_of(rows: usize, stride: usize, start: usize, cols: usize) -> Self {
        View { rows, cols, stride, offset: start }
    }
}

/// `c (+)= op(a) · op(b)` where `op` optionally transposes the view.
pub fn matmul<T: Scalar>(
    a: &[T], av: View, ta: bool,
    b: &[T], bv: View, tb: bool,
    c: &mut [T], cv: View, accumulate: bool,
) {
    let (m, k) = if ta { (av.cols, av.rows) } else { (av.rows, av.cols) };
    let (k2, n) = if tb { (bv.cols, bv.rows) } else { (bv.rows, bv.cols) };
    assert_eq!(k, k2, "matmul inner dims");
    assert_eq!((cv.rows, cv.cols), (m, n), "matmul output dims");
    let (rsa, csa) = if ta { (1, av.stride as isize) } else { (av.stride as isize, 1) };
    let (rsb, csb) = if tb { (1, bv.stride as isize) } else { (bv.stride as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            for r in 0..m {
                c[cv.offset + r * cv.stride..cv.offset + r * cv.stride + n].fill(T::zero());
            }
        }
        return;
    }
    T::gemm_raw(
        m, k, n, T::one(),
        &a[av.offset..], rsa, csa,
        &b[bv.offset..], rsb, csb,
        beta, &mut c[cv.offset..], cv.stride as isize, 1,
    );
}

/// `x · w + bias` for row-major `x (rows × in)` and `w (in × out)`.
pub fn linear<T: Scalar>(x: &[T], rows: usize, w: &[T], bias: &[T], inp: usize, out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    matmul(x, View::full(rows, inp), false, w, View::full(inp, out), false, &mut y, View::full(rows, out), true);
    y
}

/// Gradients of [`linear`]: accumulates into `dw`, `db`, returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T], dy: &[T], rows: usize, w: &[T], inp: usize, out: usize, dw: &mut [T], db: &mut [T],
) -> Vec<T> {
    matmul(x, View::full(rows, inp), true, dy, View::full(rows, out), false, dw, View::full(inp, out), true);
    for r in 0..rows {
        for (d, g) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *d = *d + *g;
        }
    }
    let mut dx = vec![T::zero(); rows * inp];
    matmul(dy, View::full(rows, out), false, w, View::full(inp, out), true, &mut dx, View::full(rows, inp), false);
    dx
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over rows; returns (output, normalized input, 1/std per row).
pub fn layer_norm<T: Scalar>(x: &[T], dim: usize, gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / dim;
    let n = T::lit(dim as f64);
    let eps = T::lit(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..dim {
            let h = (row[i] - mean) * rs;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gamma[i] + beta[i];
        }
    }
    (y, xhat, rstd)
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T], xhat: &[T], rstd: &[T], dim: usize, gamma: &[T], dgamma: &mut [T], dbeta: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / dim;
    let n = T::lit(dim as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); dim];
    for r in 0..rows {
        let (g, h) = (&dy[r * dim..(r + 1) * dim], &xhat[r * dim..(r + 1) * dim]);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for i in 0..dim {
            dgamma[i] = dgamma[i] + g[i] * h[i];
            dbeta[i] = dbeta[i] + g[i];
            dxhat[i] = g[i] * gamma[i];
            m1 = m1 + dxhat[i];
            m2 = m2 + dxhat[i] * h[i];
        }
        m1 = m1 / n;
        m2 = m2 / n;
        for i in 0..dim {
            dx[r * dim + i] = rstd[r] * (dxhat[i] - m1 - h[i] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        matmul(&a, View::full(2, 3), false, &b, View::full(3, 2), false, &mut c, View::full(2, 2), false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ·a : 3x3
        let mut d = [0.0f64; 9];
        matmul(&a, View::full(2, 3), true, &a, View::full(2, 3), false, &mut d, View::full(3, 3), false);
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // strided column block: second column of a as 2x1
        let mut e = [0.0f64; 4];
        matmul(&a, View::cols_of(2, 3, 1, 1), false, &a, View::cols_of(2, 3, 1, 1), true, &mut e, View::full(2, 2), false);
        assert_eq!(e, [4.0, 10.0, 10.0, 25.0]);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
