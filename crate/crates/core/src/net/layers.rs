//! Per-sample layers with explicit forward caches and backward passes.
//!
//! Activations are dense `C x H x W` buffers in row-major order. Layers hold
//! indices into the model's parameter list; gradients accumulate into a list
//! aligned with it.

use super::scalar::Scalar;
use super::Param;

pub(crate) type GradBuf<F> = [Vec<F>];

/// Unfold `k x k` neighbourhoods (zero padding `k/2`) into a `(c*k*k) x (h*w)` matrix.
pub(crate) fn im2col<F: Scalar>(x: &[F], c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let hw = h * w;
    if k == 1 {
        return x[..c * hw].to_vec();
    }
    let pad = (k / 2) as isize;
    let mut cols = vec![F::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let s0 = (src as isize + x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&plane[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, k: usize) -> Vec<F> {
    let hw = h * w;
    if k == 1 {
        return cols[..c * hw].to_vec();
    }
    let pad = (k / 2) as isize;
    let mut x = vec![F::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (sy as usize * w) as isize + x0 as isize + dx;
                    let dst = &mut plane[s0 as usize..s0 as usize + (x1 - x0)];
                    for (d, &v) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

/// Stride-1 convolution with `k/2` zero padding. Weight is `cout x (cin*k*k)`.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn forward<F: Scalar>(&self, p: &[Param<F>], x: &[F], h: usize, w: usize) -> (Vec<F>, Vec<F>) {
        let hw = h * w;
        let cols = im2col(x, self.cin, h, w, self.k);
        let mut y = vec![F::zero(); self.cout * hw];
        let kk = self.cin * self.k * self.k;
        F::gemm(self.cout, kk, hw, &p[self.weight].value, false, &cols, false, &mut y, false);
        for (co, &b) in p[self.bias].value.iter().enumerate() {
            for v in &mut y[co * hw..(co + 1) * hw] {
                *v += b;
            }
        }
        (y, cols)
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[Param<F>],
        cols: &[F],
        dy: &[F],
        h: usize,
        w: usize,
        grads: &mut GradBuf<F>,
        need_dx: bool,
    ) -> Option<Vec<F>> {
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        F::gemm(self.cout, hw, kk, dy, false, cols, true, &mut grads[self.weight], true);
        for (co, g) in grads[self.bias].iter_mut().enumerate() {
            *g += dy[co * hw..(co + 1) * hw].iter().copied().sum::<F>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![F::zero(); kk * hw];
        F::gemm(kk, self.cout, hw, &p[self.weight].value, true, dy, false, &mut dcols, false);
        Some(col2im(&dcols, self.cin, h, w, self.k))
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
    pub groups: usize,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) struct NormCache<F> {
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
}

impl GroupNorm {
    pub fn forward<F: Scalar>(&self, p: &[Param<F>], x: &[F], hw: usize) -> (Vec<F>, NormCache<F>) {
        let per = self.channels / self.groups;
        let n = (per * hw) as f64;
        let gamma = &p[self.gamma].value;
        let beta = &p[self.beta].value;
        let mut xhat = vec![F::zero(); x.len()];
        let mut y = vec![F::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let range = g * per * hw..(g + 1) * per * hw;
            let xs = &x[range.clone()];
            let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / n;
            let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(F::of(istd));
            let (m, s) = (F::of(mean), F::of(istd));
            for (j, c) in (g * per..(g + 1) * per).enumerate() {
                let off = range.start + j * hw;
                for i in off..off + hw {
                    let xh = (x[i] - m) * s;
                    xhat[i] = xh;
                    y[i] = gamma[c] * xh + beta[c];
                }
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[Param<F>],
        cache: &NormCache<F>,
        dy: &[F],
        hw: usize,
        grads: &mut GradBuf<F>,
    ) -> Vec<F> {
        let per = self.channels / self.groups;
        let n = F::of((per * hw) as f64);
        let gamma = &p[self.gamma].value;
        let mut dx = vec![F::zero(); dy.len()];
        for c in 0..self.channels {
            let r = c * hw..(c + 1) * hw;
            let mut dg = F::zero();
            let mut db = F::zero();
            for i in r {
                dg += dy[i] * cache.xhat[i];
                db += dy[i];
            }
            grads[self.gamma][c] += dg;
            grads[self.beta][c] += db;
        }
        for g in 0..self.groups {
            let range = g * per * hw..(g + 1) * per * hw;
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for (j, c) in (g * per..(g + 1) * per).enumerate() {
                let off = range.start + j * hw;
                for i in off..off + hw {
                    let d = dy[i] * gamma[c];
                    sum_d += d;
                    sum_dx += d * cache.xhat[i];
                }
            }
            let s = cache.inv_std[g] / n;
            for (j, c) in (g * per..(g + 1) * per).enumerate() {
                let off = range.start + j * hw;
                for i in off..off + hw {
                    let d = dy[i] * gamma[c];
                    dx[i] = s * (n * d - sum_d - cache.xhat[i] * sum_dx);
                }
            }
        }
        dx
    }
}

pub(crate) fn relu_inplace<F: Scalar>(x: &mut [F]) {
    for v in x {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zero the gradient where the ReLU output was not positive.
pub(crate) fn relu_backward_inplace<F: Scalar>(out: &[F], dy: &mut [F]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
}

/// Two `conv3x3 -> group norm -> relu` stages.
#[derive(Debug, Clone)]
pub(crate) struct DoubleConv {
    pub conv1: Conv,
    pub norm1: GroupNorm,
    pub conv2: Conv,
    pub norm2: GroupNorm,
}

pub(crate) struct BlockCache<F> {
    cols1: Vec<F>,
    norm1: NormCache<F>,
    act1: Vec<F>,
    cols2: Vec<F>,
    norm2: NormCache<F>,
    pub out: Vec<F>,
}

impl DoubleConv {
    pub fn cout(&self) -> usize {
        self.conv2.cout
    }

    pub fn forward<F: Scalar>(&self, p: &[Param<F>], x: &[F], h: usize, w: usize) -> BlockCache<F> {
        let hw = h * w;
        let (z1, cols1) = self.conv1.forward(p, x, h, w);
        let (mut act1, norm1) = self.norm1.forward(p, &z1, hw);
        relu_inplace(&mut act1);
        let (z2, cols2) = self.conv2.forward(p, &act1, h, w);
        let (mut out, norm2) = self.norm2.forward(p, &z2, hw);
        relu_inplace(&mut out);
        BlockCache {
            cols1,
            norm1,
            act1,
            cols2,
            norm2,
            out,
        }
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[Param<F>],
        cache: &BlockCache<F>,
        mut dout: Vec<F>,
        h: usize,
        w: usize,
        grads: &mut GradBuf<F>,
        need_dx: bool,
    ) -> Option<Vec<F>> {
        let hw = h * w;
        relu_backward_inplace(&cache.out, &mut dout);
        let dz2 = self.norm2.backward(p, &cache.norm2, &dout, hw, grads);
        let mut da1 = self
            .conv2
            .backward(p, &cache.cols2, &dz2, h, w, grads, true)
            .expect("dx requested");
        relu_backward_inplace(&cache.act1, &mut da1);
        let dz1 = self.norm1.backward(p, &cache.norm1, &da1, hw, grads);
        self.conv1.backward(p, &cache.cols1, &dz1, h, w, grads, need_dx)
    }
}

/// 2x2 max pooling, stride 2. Returns the argmax offsets for the backward pass.
pub(crate) fn maxpool2<F: Scalar>(x: &[F], c: usize, h: usize, w: usize) -> (Vec<F>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let k = base + (2 * i + di) * w + 2 * j + dj;
                    if x[k] > x[best] {
                        best = k;
                    }
                }
                y.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (y, idx)
}

pub(crate) fn maxpool2_backward<F: Scalar>(dy: &[F], idx: &[u32], input_len: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); input_len];
    for (&d, &k) in dy.iter().zip(idx) {
        dx[k as usize] += d;
    }
    dx
}

/// 2x2 stride-2 transposed convolution. Weight is `(cout*4) x cin`, rows ordered `(co, dy, dx)`.
#[derive(Debug, Clone)]
pub(crate) struct UpConv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
}

impl UpConv {
    pub fn forward<F: Scalar>(&self, p: &[Param<F>], x: &[F], h: usize, w: usize) -> Vec<F> {
        let hw = h * w;
        let mut z = vec![F::zero(); self.cout * 4 * hw];
        F::gemm(self.cout * 4, self.cin, hw, &p[self.weight].value, false, x, false, &mut z, false);
        let (oh, ow) = (2 * h, 2 * w);
        let bias = &p[self.bias].value;
        let mut y = vec![F::zero(); self.cout * oh * ow];
        for co in 0..self.cout {
            for q in 0..4 {
                let (a, b) = (q / 2, q % 2);
                let zr = &z[(co * 4 + q) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        y[co * oh * ow + (2 * i + a) * ow + 2 * j + b] = zr[i * w + j] + bias[co];
                    }
                }
            }
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[Param<F>],
        x: &[F],
        dy: &[F],
        h: usize,
        w: usize,
        grads: &mut GradBuf<F>,
    ) -> Vec<F> {
        let hw = h * w;
        let (oh, ow) = (2 * h, 2 * w);
        let mut dz = vec![F::zero(); self.cout * 4 * hw];
        for co in 0..self.cout {
            let plane = &dy[co * oh * ow..(co + 1) * oh * ow];
            grads[self.bias][co] += plane.iter().copied().sum::<F>();
            for q in 0..4 {
                let (a, b) = (q / 2, q % 2);
                let zr = &mut dz[(co * 4 + q) * hw..][..hw];
                for i in 0..h {
                    for j in 0..w {
                        zr[i * w + j] = plane[(2 * i + a) * ow + 2 * j + b];
                    }
                }
            }
        }
        F::gemm(self.cout * 4, hw, self.cin, &dz, false, x, true, &mut grads[self.weight], true);
        let mut dx = vec![F::zero(); self.cin * hw];
        F::gemm(self.cin, self.cout * 4, hw, &p[self.weight].value, true, &dz, false, &mut dx, false);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let cols_probe: Vec<f64> = (0..c * k * k * h * w).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = im2col(&x, c, h, w, k)
            .iter()
            .zip(&cols_probe)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&col2im(&cols_probe, c, h, w, k))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_picks_block_maxima() {
        let x: Vec<f64> = vec![1.0, 2.0, 5.0, 0.0, 3.0, 4.0, 1.0, 1.0];
        let (y, idx) = maxpool2(&x, 1, 2, 4);
        assert_eq!(y, vec![4.0, 5.0]);
        assert_eq!(idx, vec![5, 2]);
    }
}
