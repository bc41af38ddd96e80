//! Raw numeric kernels over row-major NCHW buffers.

use super::tensor::{Scalar, Tensor};

/// Geometry of a 2-D convolution on a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
    ) -> Option<Self> {
        if stride == 0 || kernel == 0 || in_h + 2 * padding < kernel || in_w + 2 * padding < kernel
        {
            return None;
        }
        let out_h = (in_h + 2 * padding - kernel) / stride + 1;
        let out_w = (in_w + 2 * padding - kernel) / stride + 1;
        Some(Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            in_h,
            in_w,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    // Input row for output row `oy` and kernel row `ky`, or None inside the padding.
    #[inline]
    fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.padding)
            .filter(|&y| y < self.in_h)
    }

    // Output columns whose tap `kx` lands inside the input: `ox_lo..ox_hi`,
    // with input column `ox * stride + kx - padding`.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(kx).div_ceil(s);
        // largest ox with ox*s + kx - pad <= in_w - 1
        let hi = if self.in_w + self.padding > kx {
            ((self.in_w + self.padding - kx - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one sample into a `[in_ch*k*k, out_h*out_w]` patch matrix.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let hw = g.out_len();
    let (k, s, ow) = (g.kernel, g.stride, g.out_w);
    for c in 0..g.in_ch {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.out_h {
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    let Some(y) = g.src_row(oy, ky) else {
                        d.fill(T::zero());
                        continue;
                    };
                    d[..lo].fill(T::zero());
                    d[hi..].fill(T::zero());
                    let start = y * g.in_w + lo * s + kx - g.padding;
                    if s == 1 {
                        d[lo..hi].copy_from_slice(&plane[start..start + (hi - lo)]);
                    } else {
                        for (j, v) in d[lo..hi].iter_mut().enumerate() {
                            *v = plane[start + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `x`.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let hw = g.out_len();
    let (k, s, ow) = (g.kernel, g.stride, g.out_w);
    for c in 0..g.in_ch {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.out_h {
                    let Some(y) = g.src_row(oy, ky) else { continue };
                    let sr = &src[oy * ow + lo..oy * ow + hi];
                    let start = y * g.in_w + lo * s + kx - g.padding;
                    if s == 1 {
                        for (p, &v) in plane[start..start + (hi - lo)].iter_mut().zip(sr) {
                            *p += v;
                        }
                    } else {
                        for (j, &v) in sr.iter().enumerate() {
                            plane[start + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

// Direct kernels for stride 1. The channel counts in these models are small,
// so a blocked gemm spends most of its time in packing and edge kernels.
//
// Outputs are computed in "wide" rows that use the padded input pitch, so a
// kernel tap is a constant offset into the padded plane. Column `ox >= out_w`
// of a wide row is garbage: it is cropped, or held at zero for gradients.

// Accumulator width of the register-blocked loops.
const LANES: usize = 32;

struct Wide {
    pw: usize,
    plane: usize,
    // wide output length rounded up to whole blocks of LANES
    blocks: usize,
}

impl Wide {
    fn new(g: &ConvGeom) -> Self {
        let pw = g.in_w + 2 * g.padding;
        let len = (g.out_h - 1) * pw + g.out_w;
        Self {
            pw,
            plane: (g.in_h + 2 * g.padding) * pw,
            blocks: len.div_ceil(LANES),
        }
    }

    // Padded input buffer; the tail slack lets the last block read past the plane.
    fn buffer<T: Scalar>(&self, ch: usize) -> Vec<T> {
        vec![T::zero(); ch * self.plane + LANES]
    }

    // Offset of tap `(c, ky, kx)` for every tap in weight order.
    fn taps(&self, ch: usize, k: usize) -> Vec<usize> {
        let mut offs = Vec::with_capacity(ch * k * k);
        for c in 0..ch {
            for ky in 0..k {
                for kx in 0..k {
                    offs.push(c * self.plane + ky * self.pw + kx);
                }
            }
        }
        offs
    }
}

// Copies one sample into the interior of a zero-padded `[ch, h + 2p, w + 2p]` buffer.
#[inline(always)]
fn pad_into<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize, p: usize, buf: &mut [T]) {
    let pw = w + 2 * p;
    let plane = (h + 2 * p) * pw;
    buf.fill(T::zero());
    for c in 0..ch {
        for y in 0..h {
            let dst = c * plane + (y + p) * pw + p;
            buf[dst..dst + w].copy_from_slice(&x[(c * h + y) * w..(c * h + y + 1) * w]);
        }
    }
}

// Independent partial sums so the loop vectorizes; the fixed order keeps it
// deterministic. Both slices hold whole blocks of LANES.
#[inline(always)]
fn dot_blocks<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    for (x, y) in a.chunks_exact(LANES).zip(b.chunks_exact(LANES)) {
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().fold(T::zero(), |t, &v| t + v)
}

#[inline(always)]
fn conv2d_direct<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let (k, ow) = (g.kernel, g.out_w);
    let wide = Wide::new(g);
    let offs = wide.taps(g.in_ch, k);
    let hw = g.out_len();
    let n = x.batch();
    let wd = w.data();
    let mut buf = wide.buffer(g.in_ch);
    let mut acc0 = vec![T::zero(); wide.blocks * LANES];
    let mut acc1 = acc0.clone();
    let mut out = vec![T::zero(); n * g.out_ch * hw];
    for i in 0..n {
        pad_into(x.sample(i), g.in_ch, g.in_h, g.in_w, g.padding, &mut buf);
        let y = &mut out[i * g.out_ch * hw..(i + 1) * g.out_ch * hw];
        let nt = offs.len();
        let mut o = 0;
        while o < g.out_ch {
            // two output channels share every input load
            let pair = o + 1 < g.out_ch;
            let w0 = &wd[o * nt..(o + 1) * nt];
            let w1 = if pair {
                &wd[(o + 1) * nt..(o + 2) * nt]
            } else {
                w0
            };
            for j in 0..wide.blocks {
                let base = j * LANES;
                let mut r0 = [T::zero(); LANES];
                let mut r1 = [T::zero(); LANES];
                for ((&a0, &a1), &off) in w0.iter().zip(w1).zip(&offs) {
                    let src = &buf[off + base..off + base + LANES];
                    for l in 0..LANES {
                        r0[l] += a0 * src[l];
                        r1[l] += a1 * src[l];
                    }
                }
                acc0[base..base + LANES].copy_from_slice(&r0);
                acc1[base..base + LANES].copy_from_slice(&r1);
            }
            for (q, acc) in [&acc0, &acc1]
                .into_iter()
                .enumerate()
                .take(1 + pair as usize)
            {
                let yo = &mut y[(o + q) * hw..(o + q + 1) * hw];
                for oy in 0..g.out_h {
                    yo[oy * ow..(oy + 1) * ow]
                        .copy_from_slice(&acc[oy * wide.pw..oy * wide.pw + ow]);
                }
            }
            o += 2;
        }
    }
    Tensor::new(vec![n, g.out_ch, g.out_h, ow], out)
}

// The input gradient of a stride-1 convolution is a stride-1 convolution of
// `gy` with the flipped, channel-transposed kernel and padding `k - 1 - p`.
#[inline(always)]
fn conv2d_input_grad_direct<T: Scalar>(g: &ConvGeom, gy: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let k = g.kernel;
    let gt = ConvGeom::new(g.out_ch, g.in_ch, k, 1, k - 1 - g.padding, g.out_h, g.out_w)
        .expect("transposed geometry");
    debug_assert_eq!((gt.out_h, gt.out_w), (g.in_h, g.in_w));
    let wd = w.data();
    let mut wt = vec![T::zero(); wd.len()];
    for o in 0..g.out_ch {
        for c in 0..g.in_ch {
            for t in 0..k * k {
                wt[(c * g.out_ch + o) * k * k + t] = wd[(o * g.in_ch + c) * k * k + k * k - 1 - t];
            }
        }
    }
    conv2d_direct(&gt, gy, &Tensor::new(vec![g.in_ch, g.out_ch, k, k], wt))
}

#[inline(always)]
fn conv2d_weight_grad_direct<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let k = g.kernel;
    let wide = Wide::new(g);
    let offs = wide.taps(g.in_ch, k);
    let (hw, ow) = (g.out_len(), g.out_w);
    let n = x.batch();
    let span = wide.blocks * LANES;
    let mut gyw = vec![T::zero(); span];
    let mut buf = wide.buffer(g.in_ch);
    let mut out = vec![T::zero(); g.out_ch * offs.len()];
    for i in 0..n {
        pad_into(x.sample(i), g.in_ch, g.in_h, g.in_w, g.padding, &mut buf);
        let gi = gy.sample(i);
        for o in 0..g.out_ch {
            // gy_o in wide rows; garbage columns and the tail stay zero
            for oy in 0..g.out_h {
                let d = oy * wide.pw;
                gyw[d..d + ow].copy_from_slice(&gi[o * hw + oy * ow..o * hw + (oy + 1) * ow]);
            }
            let go = &mut out[o * offs.len()..(o + 1) * offs.len()];
            for (gw, &off) in go.iter_mut().zip(&offs) {
                *gw += dot_blocks(&gyw, &buf[off..off + span]);
            }
        }
    }
    Tensor::new(vec![g.out_ch, g.in_ch, k, k], out)
}

// Runs a direct kernel compiled for AVX2+FMA when the CPU has them.
macro_rules! with_simd {
    ($f:ident, $g:expr, $a:expr, $b:expr) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx2,fma")]
            unsafe fn simd<T: Scalar>(g: &ConvGeom, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
                $f(g, a, b)
            }
            if std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
            {
                // SAFETY: the required features were detected at runtime
                return unsafe { simd($g, $a, $b) };
            }
        }
        $f($g, $a, $b)
    }};
}

/// `y = conv(x, w)` with `x: [N, in_ch, h, w]`, `w: [out_ch, in_ch, k, k]`.
pub fn conv2d<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    if g.stride == 1 {
        with_simd!(conv2d_direct, g, x, w)
    } else {
        conv2d_im2col(g, x, w)
    }
}

fn conv2d_im2col<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let n = x.batch();
    let (pk, hw) = (g.patch_len(), g.out_len());
    let mut cols = vec![T::zero(); pk * hw];
    let mut out = vec![T::zero(); n * g.out_ch * hw];
    for i in 0..n {
        im2col(g, x.sample(i), &mut cols);
        let y = &mut out[i * g.out_ch * hw..(i + 1) * g.out_ch * hw];
        T::gemm(
            g.out_ch,
            pk,
            hw,
            T::one(),
            w.data(),
            (pk as isize, 1),
            &cols,
            (hw as isize, 1),
            T::zero(),
            y,
            (hw as isize, 1),
        );
    }
    Tensor::new(vec![n, g.out_ch, g.out_h, g.out_w], out)
}

/// Gradient of `conv2d` with respect to its input, i.e. the transposed convolution of `gy`.
pub fn conv2d_input_grad<T: Scalar>(g: &ConvGeom, gy: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    if g.stride == 1 && g.padding < g.kernel {
        with_simd!(conv2d_input_grad_direct, g, gy, w)
    } else {
        conv2d_input_grad_im2col(g, gy, w)
    }
}

fn conv2d_input_grad_im2col<T: Scalar>(g: &ConvGeom, gy: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let n = gy.batch();
    let (pk, hw) = (g.patch_len(), g.out_len());
    let mut cols = vec![T::zero(); pk * hw];
    let mut out = vec![T::zero(); n * g.in_len()];
    for i in 0..n {
        // cols = w^T [pk, out_ch] * gy_i [out_ch, hw]
        T::gemm(
            pk,
            g.out_ch,
            hw,
            T::one(),
            w.data(),
            (1, pk as isize),
            gy.sample(i),
            (hw as isize, 1),
            T::zero(),
            &mut cols,
            (hw as isize, 1),
        );
        col2im(g, &cols, &mut out[i * g.in_len()..(i + 1) * g.in_len()]);
    }
    Tensor::new(vec![n, g.in_ch, g.in_h, g.in_w], out)
}

/// Gradient of `conv2d` with respect to its weight: `sum_i gy_i * im2col(x_i)^T`.
pub fn conv2d_weight_grad<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    if g.stride == 1 {
        with_simd!(conv2d_weight_grad_direct, g, x, gy)
    } else {
        conv2d_weight_grad_im2col(g, x, gy)
    }
}

fn conv2d_weight_grad_im2col<T: Scalar>(g: &ConvGeom, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let n = x.batch();
    let (pk, hw) = (g.patch_len(), g.out_len());
    let mut cols = vec![T::zero(); pk * hw];
    let mut out = vec![T::zero(); g.out_ch * pk];
    for i in 0..n {
        im2col(g, x.sample(i), &mut cols);
        T::gemm(
            g.out_ch,
            hw,
            pk,
            T::one(),
            gy.sample(i),
            (hw as isize, 1),
            &cols,
            (1, hw as isize),
            T::one(),
            &mut out,
            (pk as isize, 1),
        );
    }
    Tensor::new(vec![g.out_ch, g.in_ch, g.kernel, g.kernel], out)
}

/// Matrix product of two rank-2 tensors with optional transposes.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "matmul inner dimensions differ");
    let sa = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let sb = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        sa,
        b.data(),
        sb,
        T::zero(),
        &mut out,
        (n as isize, 1),
    );
    Tensor::new(vec![m, n], out)
}

/// Nearest-neighbour upsampling by 2 on the last two axes.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let planes = x.len() / (h * w);
    let mut out = Vec::with_capacity(x.len() * 4);
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] *= 2;
    shape[r - 1] *= 2;
    Tensor::new(shape, out)
}

/// Adjoint of [`upsample2x`]: sums each 2x2 block.
pub fn downsample2x_sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let r = x.rank();
    let (h2, w2) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (h, w) = (h2 / 2, w2 / 2);
    let planes = x.len() / (h2 * w2);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &x.data()[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::new(shape, out)
}

/// Splits a shape `[N, C, rest..]` into `(N, C, prod(rest))`.
pub fn chan_dims(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape.get(1).copied().unwrap_or(1);
    let rest = shape.iter().skip(2).product();
    (n, c, rest)
}

/// Broadcasts a per-channel vector `[C]` over `shape = [N, C, rest..]`.
pub fn broadcast_chan<T: Scalar>(b: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let (n, c, rest) = chan_dims(shape);
    let mut out = Vec::with_capacity(n * c * rest);
    for _ in 0..n {
        for &v in b.data() {
            out.extend(std::iter::repeat_n(v, rest));
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Sums `[N, C, rest..]` down to a per-channel vector `[C]`.
pub fn sum_chan<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, rest) = chan_dims(x.shape());
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let off = (i * c + ch) * rest;
            *o += x.data()[off..off + rest].iter().copied().sum::<T>();
        }
    }
    Tensor::new(vec![c], out)
}

/// `x + broadcast(b)` along the channel axis.
pub fn add_chan<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, c, rest) = chan_dims(x.shape());
    let mut out = x.data().to_vec();
    for i in 0..n {
        for (ch, &bv) in b.data().iter().enumerate() {
            let off = (i * c + ch) * rest;
            for v in &mut out[off..off + rest] {
                *v += bv;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Sums over the trailing `k` axes.
pub fn sum_last<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let r = x.rank();
    let block: usize = x.shape()[r - k..].iter().product();
    let out: Vec<T> = x
        .data()
        .chunks(block.max(1))
        .map(|c| c.iter().copied().sum())
        .collect();
    Tensor::new(x.shape()[..r - k].to_vec(), out)
}

/// Repeats each element of `x` over trailing axes so the result has `shape`.
pub fn expand_last<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let block = shape.iter().product::<usize>() / x.len().max(1);
    let mut out = Vec::with_capacity(x.len() * block);
    for &v in x.data() {
        out.extend(std::iter::repeat_n(v, block));
    }
    Tensor::new(shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct nested-loop convolution, independent of im2col/gemm.
    fn conv_naive(g: &ConvGeom, x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let n = x.batch();
        let k = g.kernel;
        let mut out = Tensor::zeros(&[n, g.out_ch, g.out_h, g.out_w]);
        for i in 0..n {
            for o in 0..g.out_ch {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let y = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let xx = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if y < 0
                                        || xx < 0
                                        || y >= g.in_h as isize
                                        || xx >= g.in_w as isize
                                    {
                                        continue;
                                    }
                                    let (y, xx) = (y as usize, xx as usize);
                                    acc += x.data()[((i * g.in_ch + c) * g.in_h + y) * g.in_w + xx]
                                        * w.data()[((o * g.in_ch + c) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((i * g.out_ch + o) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn conv_matches_naive_loop() {
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let g = ConvGeom::new(3, 4, 3, stride, pad, 7, 6).unwrap();
            let x = pseudo(&[2, 3, 7, 6], 1);
            let w = pseudo(&[4, 3, 3, 3], 2);
            let fast = conv2d(&g, &x, &w);
            let slow = conv_naive(&g, &x, &w);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_grads_are_adjoint() {
        // <conv(x, w), gy> == <x, dx(gy, w)> == <w, dw(x, gy)>
        for &(stride, pad, h, w_) in &[(2, 1, 8, 8), (1, 1, 5, 7), (2, 0, 7, 6), (1, 0, 6, 6)] {
            let g = ConvGeom::new(2, 3, 3, stride, pad, h, w_).unwrap();
            let x = pseudo(&[2, 2, h, w_], 3);
            let w = pseudo(&[3, 2, 3, 3], 4);
            let gy = pseudo(&[2, 3, g.out_h, g.out_w], 5);
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
            };
            let lhs = dot(&conv2d(&g, &x, &w), &gy);
            let via_x = dot(&x, &conv2d_input_grad(&g, &gy, &w));
            let via_w = dot(&w, &conv2d_weight_grad(&g, &x, &gy));
            assert!((lhs - via_x).abs() < 1e-10);
            assert!((lhs - via_w).abs() < 1e-10);
        }
    }

    #[test]
    fn direct_and_im2col_paths_agree() {
        for &(k, pad, h, w_) in &[(3, 1, 6, 5), (3, 0, 7, 7), (2, 0, 5, 6), (5, 2, 6, 6)] {
            let g = ConvGeom::new(3, 2, k, 1, pad, h, w_).unwrap();
            let x = pseudo(&[2, 3, h, w_], 6);
            let w = pseudo(&[2, 3, k, k], 7);
            let gy = pseudo(&[2, 2, g.out_h, g.out_w], 8);
            let close = |a: Tensor<f64>, b: Tensor<f64>| {
                assert_eq!(a.shape(), b.shape());
                for (p, q) in a.data().iter().zip(b.data()) {
                    assert!((p - q).abs() < 1e-12, "{p} vs {q}");
                }
            };
            close(conv2d_direct(&g, &x, &w), conv2d_im2col(&g, &x, &w));
            close(
                conv2d_input_grad_direct(&g, &gy, &w),
                conv2d_input_grad_im2col(&g, &gy, &w),
            );
            close(
                conv2d_weight_grad_direct(&g, &x, &gy),
                conv2d_weight_grad_im2col(&g, &x, &gy),
            );
        }
    }

    #[test]
    fn upsample_nearest_example() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        let y = upsample2x(&x);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        assert_eq!(downsample2x_sum(&y).data(), &[4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::new(vec![2, 3], vec![1.0f64, 2., 3., 4., 5., 6.]);
        let b = Tensor::new(vec![3, 2], vec![1.0f64, 0., 0., 1., 1., 1.]);
        assert_eq!(matmul(&a, &b, false, false).data(), &[4., 5., 10., 11.]);
        // a^T a
        assert_eq!(
            matmul(&a, &a, true, false).data(),
            &[17., 22., 27., 22., 29., 36., 27., 36., 45.]
        );
        // a a^T
        assert_eq!(matmul(&a, &a, false, true).data(), &[14., 32., 32., 77.]);
    }
}
