//! Vectorizable f32 element-wise kernels, dispatched to an AVX2+FMA build
//! when the CPU supports it.

use std::sync::OnceLock;

const LOG2E: f32 = std::f32::consts::LOG2_E;
const LN2_HI: f32 = 0.693_359_4;
const LN2_LO: f32 = -2.121_944_4e-4;
const ROUND_MAGIC: f32 = 12_582_912.0; // 1.5 · 2^23
/// Inputs below this underflow to exactly 0.
const EXP_FLOOR: f32 = -87.0;
const GELU_C: f32 = 0.797_884_6;
const GELU_A: f32 = 0.044_715;

/// `e^x` with relative error below 2e-7 on `[-87, 88]`; exactly 0 below.
#[inline(always)]
fn exp_approx(x: f32) -> f32 {
    let xc = x.clamp(EXP_FLOOR, 88.0);
    let k = (xc * LOG2E + ROUND_MAGIC) - ROUND_MAGIC;
    let r = xc - k * LN2_HI - k * LN2_LO;
    let p = 1.987_569_1e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 0.166_666_66;
    let p = p * r + 0.5;
    let e = (p * r * r + r) + 1.0;
    let scale = f32::from_bits(((k as i32 + 127) << 23) as u32);
    if x < EXP_FLOOR {
        0.0
    } else {
        e * scale
    }
}

#[inline(always)]
fn tanh_approx(u: f32) -> f32 {
    let uc = u.clamp(-9.0, 9.0);
    let e = exp_approx(2.0 * uc);
    (e - 1.0) / (e + 1.0)
}

#[inline(always)]
fn max_of(v: &[f32]) -> f32 {
    let mut acc = [f32::NEG_INFINITY; 8];
    let chunks = v.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] = if c[i] > acc[i] { c[i] } else { acc[i] };
        }
    }
    let mut m = acc.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    for &x in rest {
        m = m.max(x);
    }
    m
}

#[inline(always)]
fn sum_of(v: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] += c[i];
        }
    }
    acc.iter().sum::<f32>() + rest.iter().sum::<f32>()
}

#[inline(always)]
fn dot_body(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[inline(always)]
fn softmax_body(row: &mut [f32], bias: &[f32], scale: f32) {
    for (v, &b) in row.iter_mut().zip(bias) {
        *v = *v * scale + b;
    }
    let max = max_of(row);
    for v in row.iter_mut() {
        *v = exp_approx(*v - max);
    }
    let inv = 1.0 / sum_of(row);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

#[inline(always)]
fn softmax_grad_body(p: &[f32], dp: &mut [f32], scale: f32) {
    let dot = dot_body(p, dp);
    for (g, &pv) in dp.iter_mut().zip(p) {
        *g = pv * (*g - dot) * scale;
    }
}

#[inline(always)]
fn gelu_body(u: &[f32], out: &mut [f32]) {
    for (o, &x) in out.iter_mut().zip(u) {
        *o = 0.5 * x * (1.0 + tanh_approx(GELU_C * (x + GELU_A * x * x * x)));
    }
}

#[inline(always)]
fn gelu_grad_body(u: &[f32], g: &mut [f32]) {
    for (o, &x) in g.iter_mut().zip(u) {
        let th = tanh_approx(GELU_C * (x + GELU_A * x * x * x));
        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
        *o *= 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    }
}

macro_rules! dispatched {
    ($(fn $name:ident($($arg:ident: $ty:ty),*) $(-> $ret:ty)? => $body:ident;)*) => {
        mod avx2 {
            use super::*;
            $(
                #[target_feature(enable = "avx2,fma")]
                pub unsafe fn $name($($arg: $ty),*) $(-> $ret)? {
                    $body($($arg),*)
                }
            )*
        }
        $(
            pub fn $name($($arg: $ty),*) $(-> $ret)? {
                if has_avx2() {
                    // SAFETY: the CPU supports the enabled features.
                    unsafe { avx2::$name($($arg),*) }
                } else {
                    $body($($arg),*)
                }
            }
        )*
    };
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    static HAS: OnceLock<bool> = OnceLock::new();
    *HAS.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[cfg(not(target_arch = "x86_64"))]
fn has_avx2() -> bool {
    false
}

#[cfg(target_arch = "x86_64")]
dispatched! {
    fn softmax_row(row: &mut [f32], bias: &[f32], scale: f32) => softmax_body;
    fn softmax_grad_row(p: &[f32], dp: &mut [f32], scale: f32) => softmax_grad_body;
    fn gelu_slice(u: &[f32], out: &mut [f32]) => gelu_body;
    fn gelu_grad_slice(u: &[f32], g: &mut [f32]) => gelu_grad_body;
}

#[cfg(not(target_arch = "x86_64"))]
pub use fallback::*;

#[cfg(not(target_arch = "x86_64"))]
mod fallback {
    pub fn softmax_row(row: &mut [f32], bias: &[f32], scale: f32) {
        super::softmax_body(row, bias, scale)
    }
    pub fn softmax_grad_row(p: &[f32], dp: &mut [f32], scale: f32) {
        super::softmax_grad_body(p, dp, scale)
    }
    pub fn gelu_slice(u: &[f32], out: &mut [f32]) {
        super::gelu_body(u, out)
    }
    pub fn gelu_grad_slice(u: &[f32], g: &mut [f32]) {
        super::gelu_grad_body(u, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_matches_std() {
        let mut worst: f32 = 0.0;
        let mut x = -87.0f32;
        while x < 88.0 {
            let rel = (exp_approx(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 5e-7, "{worst}");
        assert_eq!(exp_approx(f32::NEG_INFINITY), 0.0);
        assert_eq!(exp_approx(-200.0), 0.0);
        assert_eq!(exp_approx(0.0), 1.0);
    }

    #[test]
    fn softmax_masks_exactly() {
        let mut row = vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.0, 7.0, -3.0, 0.1, 0.2];
        let mut bias = vec![0.0; 10];
        bias[2] = f32::NEG_INFINITY;
        bias[9] = f32::NEG_INFINITY;
        softmax_row(&mut row, &bias, 0.5);
        assert_eq!(row[2], 0.0);
        assert_eq!(row[9], 0.0);
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_matches_reference() {
        let u: Vec<f32> = (-40..40).map(|i| i as f32 * 0.2).collect();
        let mut out = vec![0.0; u.len()];
        gelu_slice(&u, &mut out);
        let mut g = vec![1.0; u.len()];
        gelu_grad_slice(&u, &mut g);
        for i in 0..u.len() {
            let x = u[i] as f64;
            assert!((out[i] as f64 - super::super::linalg::gelu(x)).abs() < 1e-5);
            assert!((g[i] as f64 - super::super::linalg::gelu_grad(x)).abs() < 1e-5);
        }
    }
}
