//! Batched building blocks shared by the layer implementations.
//!
//! Hidden states are column-major `n × (batch · width)` blocks: sample `b`,
//! channel `c` lives in column `b * width + c`.

use faer::MatRef;

use crate::dense::{col_major, col_major_mut, gemm, row_major, row_major_mut};
use crate::field::{DomainId, Field};
use crate::{NormError, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Batch {
    pub n: usize,
    pub width: usize,
    pub batch: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(n: usize, width: usize, batch: usize) -> Self {
        Batch { n, width, batch, data: vec![0.0; n * width * batch] }
    }

    pub fn from_raw(n: usize, width: usize, batch: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * width * batch);
        Batch { n, width, batch, data }
    }

    pub fn from_fields(fields: &[&Field]) -> Result<Self> {
        let first = fields.first().ok_or(NormError::EmptyBatch)?;
        let (n, w) = (first.n_nodes(), first.channels());
        let mut out = Batch::zeros(n, w, fields.len());
        for (b, f) in fields.iter().enumerate() {
            if f.n_nodes() != n || f.channels() != w {
                return Err(NormError::ShapeMismatch(format!(
                    "batch member {b} is {}x{}, expected {n}x{w}",
                    f.n_nodes(),
                    f.channels()
                )));
            }
            let vals = f.values();
            for c in 0..w {
                let col = &mut out.data[n * (b * w + c)..n * (b * w + c + 1)];
                for (i, x) in col.iter_mut().enumerate() {
                    *x = vals[i * w + c];
                }
            }
        }
        Ok(out)
    }

    pub fn to_fields(&self, domain: DomainId) -> Vec<Field> {
        let (n, w) = (self.n, self.width);
        (0..self.batch)
            .map(|b| {
                let mut vals = vec![0.0; n * w];
                for c in 0..w {
                    let col = &self.data[n * (b * w + c)..n * (b * w + c + 1)];
                    for (i, x) in col.iter().enumerate() {
                        vals[i * w + c] = *x;
                    }
                }
                Field::new(n, w, vals, domain).expect("batch shape")
            })
            .collect()
    }

    pub fn sample(&self, b: usize) -> MatRef<'_, f64> {
        let len = self.n * self.width;
        col_major(&self.data[b * len..(b + 1) * len], self.n, self.width)
    }
}

/// `x_b · W + 1 biasᵀ` for every sample, with `W` stored row-major `d_in × d_out`.
pub(crate) fn affine_forward(x: &Batch, w: &[f64], bias: &[f64], d_out: usize) -> Batch {
    let d_in = x.width;
    let wm = row_major(w, d_in, d_out);
    let mut out = Batch::zeros(x.n, d_out, x.batch);
    let len = x.n * d_out;
    for b in 0..x.batch {
        let dst = col_major_mut(&mut out.data[b * len..(b + 1) * len], x.n, d_out);
        gemm(dst, x.sample(b), wm, false);
    }
    add_bias(&mut out, bias);
    out
}

pub(crate) fn add_bias(x: &mut Batch, bias: &[f64]) {
    let n = x.n;
    for (col, chunk) in x.data.chunks_exact_mut(n).enumerate() {
        let beta = bias[col % x.width];
        if beta != 0.0 {
            chunk.iter_mut().for_each(|v| *v += beta);
        }
    }
}

/// Accumulates `Σ_b x_bᵀ dy_b` into `gw` and column sums into `gb`.
pub(crate) fn affine_param_grads(x: &Batch, dy: &Batch, gw: &mut [f64], gb: &mut [f64]) {
    let (d_in, d_out) = (x.width, dy.width);
    for b in 0..x.batch {
        gemm(row_major_mut(gw, d_in, d_out), x.sample(b).transpose(), dy.sample(b), true);
    }
    bias_grad(dy, gb);
}

pub(crate) fn bias_grad(dy: &Batch, gb: &mut [f64]) {
    for (col, chunk) in dy.data.chunks_exact(dy.n).enumerate() {
        gb[col % dy.width] += chunk.iter().sum::<f64>();
    }
}

/// `dy_b · Wᵀ` for every sample.
pub(crate) fn affine_input_grad(dy: &Batch, w: &[f64], d_in: usize) -> Batch {
    let d_out = dy.width;
    let wt = row_major(w, d_in, d_out).transpose();
    let mut out = Batch::zeros(dy.n, d_in, dy.batch);
    let len = dy.n * d_in;
    for b in 0..dy.batch {
        let dst = col_major_mut(&mut out.data[b * len..(b + 1) * len], dy.n, d_in);
        gemm(dst, dy.sample(b), wt, false);
    }
    out
}

/// `lhs · X` where `X` is column-major with `lhs.ncols()` rows.
pub(crate) fn left_mul(lhs: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let (p, n) = (lhs.nrows(), lhs.ncols());
    let cols = x.len() / n;
    let mut out = vec![0.0; p * cols];
    gemm(col_major_mut(&mut out, p, cols), lhs, col_major(x, n, cols), false);
    out
}

/// Like [`left_mul`] but adds into `acc`.
pub(crate) fn left_mul_acc(lhs: MatRef<'_, f64>, x: &[f64], acc: &mut [f64]) {
    let (p, n) = (lhs.nrows(), lhs.ncols());
    let cols = x.len() / n;
    gemm(col_major_mut(acc, p, cols), lhs, col_major(x, n, cols), true);
}

/// Reorders `(i0, i1, r)` stored at `i0 + d0 (i1 + d1 r)` into `i1 + d1 (i0 + d0 r)`.
pub(crate) fn swap01(x: &[f64], d0: usize, d1: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let block = d0 * d1;
    for (src, dst) in x.chunks_exact(block).zip(out.chunks_exact_mut(block)) {
        for i1 in 0..d1 {
            for i0 in 0..d0 {
                dst[i1 + d1 * i0] = src[i0 + d0 * i1];
            }
        }
    }
    out
}

/// Index layout of a coefficient tensor: `a + A (k + K (c + C (ch + V b)))`,
/// where `k` runs over the modes mixed by `R` and `ch` over channels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixShape {
    pub a: usize,
    pub k: usize,
    pub c: usize,
    pub v: usize,
    pub b: usize,
}

impl MixShape {
    pub fn plain(d_m: usize, v: usize, b: usize) -> Self {
        MixShape { a: 1, k: d_m, c: 1, v, b }
    }

    pub fn len(&self) -> usize {
        self.a * self.k * self.c * self.v * self.b
    }

    fn in_len(&self, broadcast: bool) -> usize {
        if broadcast {
            self.len() / self.k
        } else {
            self.len()
        }
    }
}

impl MixShape {
    /// Columns of one per-mode block: the `(a, c, b)` positions.
    fn rest(&self) -> usize {
        self.a * self.c * self.b
    }

    /// Calls `f(src, dst)` for every element, where `src` indexes the tensor
    /// layout and `dst` the per-mode blocks `k * V * rest + j + V * (a + A (c + C b))`.
    /// Without a `k` axis (`broadcast`) there is a single block.
    fn for_each_index(&self, broadcast: bool, mut f: impl FnMut(usize, usize)) {
        let (na, nk, nc, nv) = (self.a, self.k, self.c, self.v);
        let rest = self.rest();
        let ks = if broadcast { 1 } else { nk };
        for b in 0..self.b {
            for j in 0..nv {
                for c in 0..nc {
                    for k in 0..ks {
                        let src = na * (k + ks * (c + nc * (j + nv * b)));
                        let dst = k * nv * rest + j + nv * na * (c + nc * b);
                        for a in 0..na {
                            f(src + a, dst + nv * a);
                        }
                    }
                }
            }
        }
    }

    fn gather(&self, x: &[f64], broadcast: bool) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.for_each_index(broadcast, |src, dst| out[dst] = x[src]);
        out
    }

    fn scatter(&self, blocks: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; blocks.len()];
        self.for_each_index(false, |src, dst| out[src] = blocks[dst]);
        out
    }
}

/// `out[a,k,c,l,b] = Σ_j R[k,l,j] x[a,k,c,j,b]`. With `broadcast` the input
/// has no `k` axis and is shared by every mode.
pub(crate) fn mix_forward(s: MixShape, r: &[f64], x: &[f64], broadcast: bool) -> Vec<f64> {
    debug_assert_eq!(x.len(), s.in_len(broadcast));
    let (v, rest) = (s.v, s.rest());
    let xs = s.gather(x, broadcast);
    let mut ys = vec![0.0; s.len()];
    for (k, y) in ys.chunks_exact_mut(v * rest).enumerate() {
        let xk = if broadcast { &xs[..] } else { &xs[k * v * rest..(k + 1) * v * rest] };
        gemm(
            col_major_mut(y, v, rest),
            row_major(&r[k * v * v..(k + 1) * v * v], v, v),
            col_major(xk, v, rest),
            false,
        );
    }
    s.scatter(&ys)
}

/// Reverse of [`mix_forward`]: returns `dx` and accumulates `dR` into `gr`.
pub(crate) fn mix_backward(
    s: MixShape,
    r: &[f64],
    x: &[f64],
    dy: &[f64],
    gr: &mut [f64],
    broadcast: bool,
) -> Vec<f64> {
    let (v, rest) = (s.v, s.rest());
    let xs = s.gather(x, broadcast);
    let dys = s.gather(dy, false);
    let mut dxs = vec![0.0; s.in_len(broadcast)];
    for (k, dyk) in dys.chunks_exact(v * rest).enumerate() {
        let blk = k * v * rest..(k + 1) * v * rest;
        let (xk, dxk) = if broadcast {
            (&xs[..], &mut dxs[..])
        } else {
            (&xs[blk.clone()], &mut dxs[blk])
        };
        let rk = row_major(&r[k * v * v..(k + 1) * v * v], v, v);
        gemm(col_major_mut(dxk, v, rest), rk.transpose(), col_major(dyk, v, rest), broadcast && k > 0);
        gemm(
            row_major_mut(&mut gr[k * v * v..(k + 1) * v * v], v, v),
            col_major(dyk, v, rest),
            col_major(xk, v, rest).transpose(),
            true,
        );
    }
    if broadcast {
        let mut dx = vec![0.0; dxs.len()];
        s.for_each_index(true, |src, dst| dx[src] = dxs[dst]);
        dx
    } else {
        s.scatter(&dxs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => z * normal_cdf(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => normal_cdf(z) + z * normal_pdf(z),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => z.to_vec(),
            _ => z.iter().map(|&v| self.eval(v)).collect(),
        }
    }

    /// `(σ(z), σ'(z))` sharing one evaluation of the error function.
    pub(crate) fn eval_with_derivative(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = normal_cdf(z);
                (z * cdf, cdf + z * normal_pdf(z))
            }
            _ => (self.eval(z), self.derivative(z)),
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trip() {
        let id = DomainId::default();
        let f0 = Field::from_fn(3, 2, id, |i, c| (i * 10 + c) as f64);
        let f1 = Field::from_fn(3, 2, id, |i, c| -((i * 10 + c) as f64));
        let b = Batch::from_fields(&[&f0, &f1]).unwrap();
        assert_eq!(b.sample(1)[(2, 1)], -21.0);
        assert_eq!(b.to_fields(id), vec![f0, f1]);
    }

    #[test]
    fn swap_is_transpose() {
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let y = swap01(&x, 2, 3);
        assert_eq!(swap01(&y, 3, 2), x);
        assert_eq!(y[1], x[2]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for z in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (Activation::Gelu.eval(z + h) - Activation::Gelu.eval(z - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(z)).abs() < 1e-9);
        }
        assert!((Activation::Gelu.eval(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn mix_backward_is_adjoint() {
        let s = MixShape { a: 2, k: 3, c: 2, v: 2, b: 2 };
        let r: Vec<f64> = (0..s.k * s.v * s.v).map(|i| (i as f64 * 0.37).sin()).collect();
        for broadcast in [false, true] {
            let x: Vec<f64> = (0..s.in_len(broadcast)).map(|i| (i as f64 * 0.11).cos()).collect();
            let dy: Vec<f64> = (0..s.len()).map(|i| (i as f64 * 0.23).sin()).collect();
            let y = mix_forward(s, &r, &x, broadcast);
            let mut gr = vec![0.0; r.len()];
            let dx = mix_backward(s, &r, &x, &dy, &mut gr, broadcast);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
            // the map is linear in R too, so <dR, R> recovers the same pairing
            let rr: f64 = gr.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!((lhs - rr).abs() < 1e-12);
        }
    }
}
