//! Small dense-layer toolkit with hand-written backward passes.
//!
//! Parameters live in one flat buffer; layers hold offsets into it. All
//! matrices are row-major with one row per token. Generic over `f32`
//! (training and inference) and `f64` (gradient checks).

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;

pub trait Scalar: Float + AddAssign + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must address valid `m x k`, `k x n` and `m x n`
    /// matrices, with `c` not aliasing `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from(v).expect("representable constant")
    }
}

impl Scalar for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct Mat<'a, S> {
    data: &'a [S],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

pub struct MatMut<'a, S> {
    data: &'a mut [S],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

impl<'a, S> Mat<'a, S> {
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [S], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(span(rows, cols, rs, cs) <= data.len(), "matrix view out of bounds");
        Mat { data, rows, cols, rs, cs }
    }

    pub fn t(self) -> Self {
        Mat {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

impl<'a, S> MatMut<'a, S> {
    pub fn new(data: &'a mut [S], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [S], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        assert!(span(rows, cols, rs, cs) <= data.len(), "matrix view out of bounds");
        MatMut { data, rows, cols, rs, cs }
    }
}

/// `c = alpha * a b + beta * c`.
pub fn gemm<S: Scalar>(alpha: S, a: Mat<S>, b: Mat<S>, beta: S, c: MatMut<S>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    // SAFETY: every view was bounds-checked at construction and `c` is a
    // unique borrow, so it cannot alias the shared inputs.
    unsafe {
        S::raw_gemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// A named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default, Clone)]
pub struct Layout {
    pub entries: Vec<TensorEntry>,
    pub len: usize,
}

impl Layout {
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let e = TensorEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += e.len();
        self.entries.push(e);
        offset
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        Linear {
            w: self.alloc(format!("{name}.weight"), &[din, dout]),
            b: self.alloc(format!("{name}.bias"), &[dout]),
            din,
            dout,
        }
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            g: self.alloc(format!("{name}.gain"), &[dim]),
            b: self.alloc(format!("{name}.bias"), &[dim]),
            dim,
        }
    }
}

/// `y = x W + b` with `W` stored `din x dout`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn weight<'a, S>(&self, p: &'a [S]) -> &'a [S] {
        &p[self.w..self.w + self.din * self.dout]
    }

    pub fn forward<S: Scalar>(&self, p: &[S], x: &[S], n: usize, y: &mut [S]) {
        let bias = &p[self.b..self.b + self.dout];
        for row in y[..n * self.dout].chunks_exact_mut(self.dout) {
            row.copy_from_slice(bias);
        }
        gemm(
            S::one(),
            Mat::new(&x[..n * self.din], n, self.din),
            Mat::new(self.weight(p), self.din, self.dout),
            S::one(),
            MatMut::new(&mut y[..n * self.dout], n, self.dout),
        );
    }

    /// Accumulates weight and bias gradients; writes `dx` when given.
    pub fn backward<S: Scalar>(&self, p: &[S], g: &mut [S], x: &[S], dy: &[S], n: usize, dx: Option<&mut [S]>) {
        let dy = &dy[..n * self.dout];
        gemm(
            S::one(),
            Mat::new(&x[..n * self.din], n, self.din).t(),
            Mat::new(dy, n, self.dout),
            S::one(),
            MatMut::new(&mut g[self.w..self.w + self.din * self.dout], self.din, self.dout),
        );
        let db = &mut g[self.b..self.b + self.dout];
        for row in dy.chunks_exact(self.dout) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += *v;
            }
        }
        if let Some(dx) = dx {
            gemm(
                S::one(),
                Mat::new(dy, n, self.dout),
                Mat::new(self.weight(p), self.din, self.dout).t(),
                S::zero(),
                MatMut::new(&mut dx[..n * self.din], n, self.din),
            );
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

impl LayerNorm {
    /// Normalizes each row; `stats` receives `(mean, 1/std)` per row.
    pub fn forward<S: Scalar>(&self, p: &[S], x: &[S], n: usize, y: &mut [S], stats: &mut [S]) {
        let d = self.dim;
        let (gain, bias) = (&p[self.g..self.g + d], &p[self.b..self.b + d]);
        let inv_d = S::of(1.0 / d as f64);
        for r in 0..n {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().fold(S::zero(), |a, v| a + *v) * inv_d;
            let var = xr.iter().fold(S::zero(), |a, v| a + (*v - mean) * (*v - mean)) * inv_d;
            let rstd = (var + S::of(LN_EPS)).sqrt().recip();
            stats[2 * r] = mean;
            stats[2 * r + 1] = rstd;
            for k in 0..d {
                y[r * d + k] = (xr[k] - mean) * rstd * gain[k] + bias[k];
            }
        }
    }

    /// Accumulates parameter gradients and adds the input gradient to `dx`.
    pub fn backward<S: Scalar>(&self, p: &[S], g: &mut [S], x: &[S], stats: &[S], dy: &[S], n: usize, dx: &mut [S]) {
        let d = self.dim;
        let inv_d = S::of(1.0 / d as f64);
        for r in 0..n {
            let (mean, rstd) = (stats[2 * r], stats[2 * r + 1]);
            let xr = &x[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut sum_dxhat = S::zero();
            let mut sum_dxhat_xhat = S::zero();
            for k in 0..d {
                let xhat = (xr[k] - mean) * rstd;
                g[self.g + k] += dyr[k] * xhat;
                g[self.b + k] += dyr[k];
                let dxhat = dyr[k] * p[self.g + k];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            for k in 0..d {
                let xhat = (xr[k] - mean) * rstd;
                let dxhat = dy[r * d + k] * p[self.g + k];
                dx[r * d + k] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub fn gelu<S: Scalar>(x: S) -> S {
    let inner = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    S::of(0.5) * x * (S::one() + inner.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let inner = S::of(GELU_C) * (x + S::of(GELU_A) * x * x * x);
    let th = inner.tanh();
    let dinner = S::of(GELU_C) * (S::one() + S::of(3.0 * GELU_A) * x * x);
    S::of(0.5) * (S::one() + th) + S::of(0.5) * x * (S::one() - th * th) * dinner
}

pub fn silu<S: Scalar>(x: S) -> S {
    x / (S::one() + (-x).exp())
}

pub fn silu_grad<S: Scalar>(x: S) -> S {
    let s = S::one() / (S::one() + (-x).exp());
    s * (S::one() + x * (S::one() - s))
}

/// Multi-head self-attention over all tokens (no mask).
///
/// `qkv` is `n x 3d` with query, key and value blocks side by side; `probs`
/// receives the `heads x n x n` attention matrices and `out` the `n x d`
/// concatenated head outputs. Head `h` subtracts `slopes[h] * |i - j|` from
/// its scores, a fixed locality bias (the backward pass is unaffected).
pub fn attention_forward<S: Scalar>(
    qkv: &[S],
    n: usize,
    d: usize,
    heads: usize,
    slopes: &[f64],
    probs: &mut [S],
    out: &mut [S],
) {
    assert_eq!(slopes.len(), heads, "one slope per head");
    let hd = d / heads;
    let scale = S::of(1.0 / (hd as f64).sqrt());
    for h in 0..heads {
        let q = Mat::strided(&qkv[h * hd..], n, hd, 3 * d, 1);
        let k = Mat::strided(&qkv[d + h * hd..], n, hd, 3 * d, 1);
        let v = Mat::strided(&qkv[2 * d + h * hd..], n, hd, 3 * d, 1);
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(scale, q, k.t(), S::zero(), MatMut::new(p, n, n));
        for (i, row) in p.chunks_exact_mut(n).enumerate() {
            if slopes[h] != 0.0 {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v - S::of(slopes[h] * i.abs_diff(j) as f64);
                }
            }
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            let inv = z.recip();
            for v in row.iter_mut() {
                *v = *v * inv;
            }
        }
        gemm(
            S::one(),
            Mat::new(p, n, n),
            v,
            S::zero(),
            MatMut::strided(&mut out[h * hd..], n, hd, d, 1),
        );
    }
}

/// Writes `dqkv` (overwriting) from the output gradient.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<S: Scalar>(
    qkv: &[S],
    probs: &[S],
    dout: &[S],
    n: usize,
    d: usize,
    heads: usize,
    dqkv: &mut [S],
    scratch: &mut Vec<S>,
) {
    let hd = d / heads;
    let scale = S::of(1.0 / (hd as f64).sqrt());
    scratch.resize(n * n, S::zero());
    for h in 0..heads {
        let q = Mat::strided(&qkv[h * hd..], n, hd, 3 * d, 1);
        let k = Mat::strided(&qkv[d + h * hd..], n, hd, 3 * d, 1);
        let v = Mat::strided(&qkv[2 * d + h * hd..], n, hd, 3 * d, 1);
        let p = &probs[h * n * n..(h + 1) * n * n];
        let dout_h = Mat::strided(&dout[h * hd..], n, hd, d, 1);
        // dV = P^T dO
        gemm(
            S::one(),
            Mat::new(p, n, n).t(),
            dout_h,
            S::zero(),
            MatMut::strided(&mut dqkv[2 * d + h * hd..], n, hd, 3 * d, 1),
        );
        // dP = dO V^T, then the softmax Jacobian.
        let ds = &mut scratch[..n * n];
        gemm(S::one(), dout_h, v.t(), S::zero(), MatMut::new(ds, n, n));
        for (drow, prow) in ds.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let dot = drow.iter().zip(prow).fold(S::zero(), |a, (x, y)| a + *x * *y);
            for (x, y) in drow.iter_mut().zip(prow) {
                *x = *y * (*x - dot) * scale;
            }
        }
        let ds = &scratch[..n * n];
        gemm(
            S::one(),
            Mat::new(ds, n, n),
            k,
            S::zero(),
            MatMut::strided(&mut dqkv[h * hd..], n, hd, 3 * d, 1),
        );
        gemm(
            S::one(),
            Mat::new(ds, n, n).t(),
            q,
            S::zero(),
            MatMut::strided(&mut dqkv[d + h * hd..], n, hd, 3 * d, 1),
        );
    }
}

/// Sinusoidal features of a scalar position: `sin, cos` pairs at
/// geometrically spaced frequencies.
pub fn sinusoid<S: Scalar>(pos: f64, dim: usize, out: &mut [S]) {
    for i in 0..dim / 2 {
        let freq = (-(10_000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
        out[2 * i] = S::of((pos * freq).sin());
        out[2 * i + 1] = S::of((pos * freq).cos());
    }
    if dim % 2 == 1 {
        out[dim - 1] = S::zero();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_vec(&mut rng, 12);
        let b = rand_vec(&mut rng, 20);
        let mut c = vec![0.0; 15];
        gemm(1.0, Mat::new(&a, 4, 3).t(), Mat::new(&b, 4, 5), 0.0, MatMut::new(&mut c, 3, 5));
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| a[k * 3 + i] * b[k * 5 + j]).sum();
                assert!((c[i * 5 + j] - want).abs() < 1e-12);
            }
        }
    }

    fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let mut xx = x.to_vec();
        (0..x.len())
            .map(|i| {
                xx[i] = x[i] + h;
                let a = f(&xx);
                xx[i] = x[i] - h;
                let b = f(&xx);
                xx[i] = x[i];
                (a - b) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn linear_and_layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layout = Layout::default();
        let lin = layout.linear("l", 4, 3);
        let ln = layout.layer_norm("n", 3);
        let mut p = rand_vec(&mut rng, layout.len);
        for k in 0..3 {
            p[ln.g + k] = 1.0 + 0.3 * p[ln.g + k];
        }
        let n = 5;
        let x = rand_vec(&mut rng, n * 4);
        let r = rand_vec(&mut rng, n * 3);
        let loss = |p: &[f64], x: &[f64]| {
            let mut y = vec![0.0; n * 3];
            lin.forward(p, x, n, &mut y);
            let mut z = vec![0.0; n * 3];
            let mut st = vec![0.0; 2 * n];
            ln.forward(p, &y, n, &mut z, &mut st);
            z.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = vec![0.0; n * 3];
        lin.forward(&p, &x, n, &mut y);
        let mut z = vec![0.0; n * 3];
        let mut st = vec![0.0; 2 * n];
        ln.forward(&p, &y, n, &mut z, &mut st);
        let mut g = vec![0.0; layout.len];
        let mut dy = vec![0.0; n * 3];
        ln.backward(&p, &mut g, &y, &st, &r, n, &mut dy);
        let mut dx = vec![0.0; n * 4];
        lin.backward(&p, &mut g, &x, &dy, n, Some(&mut dx));

        assert_close(&g, &numeric_grad(&mut |pp| loss(pp, &x), &p));
        assert_close(&dx, &numeric_grad(&mut |xx| loss(&p, xx), &x));
    }

    #[test]
    fn attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d, heads) = (5, 4, 2);
        let qkv = rand_vec(&mut rng, n * 3 * d);
        let r = rand_vec(&mut rng, n * d);
        let loss = |qkv: &[f64]| {
            let mut probs = vec![0.0; heads * n * n];
            let mut out = vec![0.0; n * d];
            attention_forward(qkv, n, d, heads, &[0.5, 0.0], &mut probs, &mut out);
            out.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        attention_forward(&qkv, n, d, heads, &[0.5, 0.0], &mut probs, &mut out);
        for row in probs.chunks(n) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut dqkv = vec![0.0; n * 3 * d];
        attention_backward(&qkv, &probs, &r, n, d, heads, &mut dqkv, &mut Vec::new());
        assert_close(&dqkv, &numeric_grad(&mut |q| loss(q), &qkv));
    }

    #[test]
    fn activation_derivatives() {
        for i in -30..=30 {
            let x = i as f64 * 0.2;
            let h = 1e-6;
            let ng = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - ng).abs() < 1e-8);
            let ns = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((silu_grad(x) - ns).abs() < 1e-8);
        }
    }
}
