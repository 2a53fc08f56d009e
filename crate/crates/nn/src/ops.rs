//! Layer kernels with hand-written backward passes.

use rand::Rng;

use crate::param::Param;
use crate::tensor::Tensor;
use crate::NnError;

pub const LEAKY_SLOPE: f32 = 0.2;
pub const NORM_EPS: f32 = 1e-5;

/// `c = a * b + beta * c` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserted extents cover every element the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    /// Valid output columns `[lo, hi)` for kernel column `kx` at stride 1.
    fn span(&self, kx: usize) -> (usize, usize) {
        let lo = self.p.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.p - kx).min(self.wo).max(lo);
        (lo, hi)
    }
}

fn im2col(x: &[f32], g: Geom, cols: &mut [f32]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ci * g.k + ky) * g.k + kx) * hw..][..hw];
                let (lo, hi) = g.span(kx);
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.s == 1 {
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        dst[lo..hi].copy_from_slice(&src[lo + kx - g.p..hi + kx - g.p]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.s + kx) as isize - g.p as isize;
                            *d = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: Geom, x: &mut [f32]) {
    let hw = g.ho * g.wo;
    x.fill(0.0);
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * hw..][..hw];
                let (lo, hi) = g.span(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.s == 1 {
                        for (d, s) in dst[lo + kx - g.p..hi + kx - g.p].iter_mut().zip(&src[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.s + kx) as isize - g.p as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Square convolution with "same" padding (`k / 2`).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv2d {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, k: usize, stride: usize, bias: bool, rng: &mut R) -> Self {
        let fan_in = in_c * k * k;
        Self {
            in_c,
            out_c,
            k,
            stride,
            weight: Param::he_normal(out_c * fan_in, fan_in, rng),
            bias: bias.then(|| Param::zeros(out_c)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.k / 2;
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    fn geom(&self, x: &Tensor) -> Geom {
        let (ho, wo) = self.out_size(x.h, x.w);
        Geom { c: x.c, h: x.h, w: x.w, k: self.k, s: self.stride, p: self.k / 2, ho, wo }
    }

    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        if x.c != self.in_c {
            return Err(NnError::Shape(format!("conv expects {} channels, got {}", self.in_c, x.c)));
        }
        let g = self.geom(x);
        let (kk, hw) = (self.in_c * self.k * self.k, g.ho * g.wo);
        let mut y = Tensor::zeros(x.n, self.out_c, g.ho, g.wo);
        let mut cols = if self.direct() { Vec::new() } else { vec![0.0; kk * hw] };
        for i in 0..x.n {
            let src = if self.direct() {
                x.sample(i)
            } else {
                im2col(x.sample(i), g, &mut cols);
                &cols
            };
            let out = y.sample_mut(i);
            gemm(self.out_c, kk, hw, &self.weight.value, (kk, 1), src, (hw, 1), 0.0, out, hw);
            if let Some(b) = &self.bias {
                for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b.value[o]);
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight gradients when `weights` is set and returns the
    /// input gradient when `input` is set.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, weights: bool, input: bool) -> Option<Tensor> {
        if weights {
            self.accumulate_grads(x, dy);
        }
        input.then(|| self.input_grad(x, dy))
    }

    pub fn accumulate_grads(&mut self, x: &Tensor, dy: &Tensor) {
        let g = self.geom(x);
        let (kk, hw) = (self.in_c * self.k * self.k, g.ho * g.wo);
        debug_assert_eq!(dy.shape(), [x.n, self.out_c, g.ho, g.wo]);
        let mut cols = if self.direct() { Vec::new() } else { vec![0.0; kk * hw] };
        for i in 0..x.n {
            let dyi = dy.sample(i);
            let src = if self.direct() {
                x.sample(i)
            } else {
                im2col(x.sample(i), g, &mut cols);
                &cols
            };
            gemm(self.out_c, hw, kk, dyi, (hw, 1), src, (1, hw), 1.0, &mut self.weight.grad, kk);
            if let Some(b) = &mut self.bias {
                for (o, plane) in dyi.chunks_exact(hw).enumerate() {
                    b.grad[o] += plane.iter().sum::<f32>();
                }
            }
        }
    }

    pub fn input_grad(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = self.geom(x);
        let (kk, hw) = (self.in_c * self.k * self.k, g.ho * g.wo);
        debug_assert_eq!(dy.shape(), [x.n, self.out_c, g.ho, g.wo]);
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut cols = if self.direct() { Vec::new() } else { vec![0.0; kk * hw] };
        for i in 0..x.n {
            let dyi = dy.sample(i);
            if self.direct() {
                gemm(kk, self.out_c, hw, &self.weight.value, (1, kk), dyi, (hw, 1), 0.0, dx.sample_mut(i), hw);
            } else {
                gemm(kk, self.out_c, hw, &self.weight.value, (1, kk), dyi, (hw, 1), 0.0, &mut cols, hw);
                col2im(&cols, g, dx.sample_mut(i));
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut Param)> {
        std::iter::once(("weight", &mut self.weight)).chain(self.bias.as_mut().map(|b| ("bias", b)))
    }
}

/// Per-sample, per-channel normalisation without affine terms. Returns the
/// inverse standard deviations.
pub fn instance_norm(x: &mut Tensor) -> Vec<f32> {
    let hw = x.plane();
    x.data
        .chunks_exact_mut(hw)
        .map(|plane| {
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
            plane.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
            inv as f32
        })
        .collect()
}

/// In-place input gradient of [`instance_norm`] given its output `y`.
pub fn instance_norm_backward(y: &Tensor, inv_std: &[f32], dy: &mut Tensor) {
    let hw = y.plane();
    for ((d, yp), &inv) in dy.data.chunks_exact_mut(hw).zip(y.data.chunks_exact(hw)).zip(inv_std) {
        let md = d.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let mdy = d.iter().zip(yp).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / hw as f64;
        for (dv, &yv) in d.iter_mut().zip(yp) {
            *dv = (inv as f64 * (*dv as f64 - md - yv as f64 * mdy)) as f32;
        }
    }
}

pub fn leaky_relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE
        }
    });
}

/// Gradient through a leaky ReLU, keyed on the sign of its input or output.
pub fn leaky_relu_backward(pre: &Tensor, dy: &mut Tensor) {
    for (d, &p) in dy.data.iter_mut().zip(&pre.data) {
        if p < 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
}

pub fn relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn relu_backward(out: &Tensor, dy: &mut Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn sigmoid(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

pub fn sigmoid_backward(out: &Tensor, dy: &mut Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        *d *= o * (1.0 - o);
    }
}

pub fn tanh(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward(out: &Tensor, dy: &mut Tensor) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        *d *= 1.0 - o * o;
    }
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h, x.w);
    let mut y = Tensor::zeros(x.n, x.c, 2 * h, 2 * w);
    for (src, dst) in x.data.chunks_exact(h * w).zip(y.data.chunks_exact_mut(4 * h * w)) {
        for yy in 0..2 * h {
            let row = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            for (xx, d) in dst[yy * 2 * w..(yy + 1) * 2 * w].iter_mut().enumerate() {
                *d = row[xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for (src, dst) in dy.data.chunks_exact(dy.plane()).zip(dx.data.chunks_exact_mut(h * w)) {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
            }
        }
    }
    dx
}

/// 2x2 mean pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    for (src, dst) in x.data.chunks_exact(x.plane()).zip(y.data.chunks_exact_mut(h * w)) {
        for yy in 0..h {
            for xx in 0..w {
                let i = 2 * yy * x.w + 2 * xx;
                dst[yy * w + xx] = 0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    y
}

pub fn avg_pool2_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for (src, dst) in dy.data.chunks_exact(dy.plane()).zip(dx.data.chunks_exact_mut(h * w)) {
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                let g = 0.25 * src[yy * dy.w + xx];
                let i = 2 * yy * w + 2 * xx;
                dst[i] += g;
                dst[i + 1] += g;
                dst[i + w] += g;
                dst[i + w + 1] += g;
            }
        }
    }
    dx
}

/// Channel concatenation.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(NnError::Shape(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Ok(Tensor { n: a.n, c: a.c + b.c, h: a.h, w: a.w, data })
}

/// Inverse of [`concat`]: the first `c` channels and the rest.
pub fn split(x: &Tensor, c: usize) -> (Tensor, Tensor) {
    let hw = x.plane();
    let mut a = Tensor::zeros(x.n, c, x.h, x.w);
    let mut b = Tensor::zeros(x.n, x.c - c, x.h, x.w);
    for i in 0..x.n {
        let s = x.sample(i);
        a.sample_mut(i).copy_from_slice(&s[..c * hw]);
        b.sample_mut(i).copy_from_slice(&s[c * hw..]);
    }
    (a, b)
}
