//! Dense kernels over `f64` slices. Vectors are plain slices; matrices are
//! row-major slices with explicit dimensions.

/// Dot product with four interleaved partial sums. The summation order is
/// fixed, so results are reproducible for a given input.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in tail_a.iter().zip(tail_b) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

pub fn sum_squares(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Euclidean norm. Falls back to a max-scaled evaluation when the plain sum
/// of squares overflows, so only genuinely non-finite input yields a
/// non-finite norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    let ss = sum_squares(v);
    if ss.is_finite() {
        return ss.sqrt();
    }
    if v.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max.is_infinite() {
        return f64::INFINITY;
    }
    let scaled: f64 = v.iter().map(|x| (x / max) * (x / max)).sum();
    max * scaled.sqrt()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `out = W x + b` for a row-major `rows x cols` matrix `W`.
pub fn affine_into(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    debug_assert_eq!(out.len(), b.len());
    for ((o, row), bi) in out.iter_mut().zip(w.chunks_exact(cols)).zip(b) {
        *o = dot(row, x) + bi;
    }
}
