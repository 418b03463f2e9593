//! Non-differentiable numeric kernels.
//!
//! Every differentiable op on the [`Graph`](super::Graph) evaluates its value
//! through one of these functions. They are also used directly wherever no
//! gradient is needed (feature extraction, sampling).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x * s)
}

pub fn add_scalar<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|x| x + c)
}

pub fn powf<T: Scalar>(a: &Tensor<T>, p: T) -> Tensor<T> {
    a.map(|x| x.powf(p))
}

pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.tanh())
}

pub fn leaky_relu<T: Scalar>(a: &Tensor<T>, slope: T) -> Tensor<T> {
    a.map(|x| if x > T::ZERO { x } else { x * slope })
}

/// Derivative of [`leaky_relu`], taken as `slope` at the kink.
pub fn leaky_relu_mask<T: Scalar>(a: &Tensor<T>, slope: T) -> Tensor<T> {
    a.map(|x| if x > T::ZERO { T::ONE } else { slope })
}

/// `(1 - alpha) * low + alpha * high`, returning an exact copy of the
/// selected path at `alpha` 0 or 1.
pub fn blend<T: Scalar>(low: &Tensor<T>, high: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    same_shape("blend", low, high)?;
    if alpha == T::ZERO {
        return Ok(low.clone());
    }
    if alpha == T::ONE {
        return Ok(high.clone());
    }
    let keep = T::ONE - alpha;
    zip("blend", low, high, |l, h| keep * l + alpha * h)
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("resample_up")?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; n * c * h2 * w2];
    for (plane, src) in out.chunks_exact_mut(h2 * w2).zip(x.data().chunks_exact(h * w)) {
        for i in 0..h2 {
            let srow = &src[(i / 2) * w..(i / 2 + 1) * w];
            let drow = &mut plane[i * w2..(i + 1) * w2];
            for (j, d) in drow.iter_mut().enumerate() {
                *d = srow[j / 2];
            }
        }
    }
    Tensor::new(&[n, c, h2, w2], out)
}

/// 2x2 average pooling of an NCHW tensor with even spatial extents.
pub fn avgpool2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("resample_down")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("resample_down", format!("odd spatial extent {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::ZERO; n * c * h2 * w2];
    for (plane, src) in out.chunks_exact_mut(h2 * w2).zip(x.data().chunks_exact(h * w)) {
        for i in 0..h2 {
            let r0 = &src[2 * i * w..(2 * i + 1) * w];
            let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..w2 {
                plane[i * w2 + j] =
                    (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * quarter;
            }
        }
    }
    Tensor::new(&[n, c, h2, w2], out)
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(op: &'static str, x_shape: &[usize], k: usize, pad: usize) -> Result<Self> {
        let (n, c, h, w) = match *x_shape {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape(op, format!("expected NCHW input, got {x_shape:?}"))),
        };
        if k == 0 || pad >= k {
            return Err(Error::shape(op, format!("padding {pad} invalid for kernel {k}")));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(op, format!("kernel {k} larger than padded {h}x{w}")));
        }
        let ho = h + 2 * pad - k + 1;
        let wo = w + 2 * pad - k + 1;
        Ok(ConvGeom { n, c, h, w, k, pad, ho, wo })
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Images per im2col batch, bounding the patch buffer.
    fn batch(&self) -> usize {
        (COLS_BUDGET / (self.ckk() * self.ho * self.wo).max(1)).clamp(1, self.n.max(1))
    }

    /// Unfolds one image into rows of a `(c*k*k) x ld` patch matrix, at
    /// columns `col0 .. col0 + ho*wo`.
    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T], ld: usize, col0: usize) {
        let (k, pad, h, w, ho, wo) = (self.k, self.pad, self.h, self.w, self.ho, self.wo);
        let hw = ho * wo;
        for ci in 0..self.c {
            let plane = &img[ci * h * w..(ci + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let row = (ci * k + a) * k + b;
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + hw];
                    // valid output columns: 0 <= oj + b - pad < w
                    let j_lo = pad.saturating_sub(b).min(wo);
                    let j_hi = (w + pad).saturating_sub(b).min(wo).max(j_lo);
                    for oi in 0..ho {
                        let drow = &mut dst[oi * wo..(oi + 1) * wo];
                        let ii = oi + a;
                        if ii < pad || ii - pad >= h {
                            drow.fill(T::ZERO);
                            continue;
                        }
                        let srow = &plane[(ii - pad) * w..(ii - pad + 1) * w];
                        drow[..j_lo].fill(T::ZERO);
                        drow[j_hi..].fill(T::ZERO);
                        if j_hi > j_lo {
                            let s0 = j_lo + b - pad;
                            drow[j_lo..j_hi].copy_from_slice(&srow[s0..s0 + (j_hi - j_lo)]);
                        }
                    }
                }
            }
        }
    }
}

/// Patch-matrix elements per im2col batch.
const COLS_BUDGET: usize = 1 << 16;

/// Stride-1 cross-correlation of `x: [N,C,H,W]` with `w: [O,C,k,k]`,
/// zero padding `pad` on every side. No bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (o, cw, kh, kw) = w.dims4("conv2d")?;
    if kh != kw {
        return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    let g = ConvGeom::new("conv2d", x.shape(), kh, pad)?;
    if cw != g.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, weight expects {cw}", g.c),
        ));
    }
    let (ckk, hw, chw) = (g.ckk(), g.ho * g.wo, g.c * g.h * g.w);
    let mut out = vec![T::ZERO; g.n * o * hw];
    let wmat = MatRef::rm(w.data(), o, ckk);
    let nb = g.batch();
    let mut cols = vec![T::ZERO; ckk * nb * hw];
    let mut tmp = vec![T::ZERO; o * nb * hw];
    let mut i0 = 0;
    while i0 < g.n {
        let m = nb.min(g.n - i0);
        let ld = m * hw;
        for j in 0..m {
            let img = &x.data()[(i0 + j) * chw..(i0 + j + 1) * chw];
            g.im2col(img, &mut cols, ld, j * hw);
        }
        gemm(wmat, MatRef::rm(&cols[..ckk * ld], ckk, ld), T::ZERO, &mut tmp[..o * ld]);
        for j in 0..m {
            for oi in 0..o {
                let src = &tmp[oi * ld + j * hw..oi * ld + (j + 1) * hw];
                let d0 = ((i0 + j) * o + oi) * hw;
                out[d0..d0 + hw].copy_from_slice(src);
            }
        }
        i0 += m;
    }
    Tensor::new(&[g.n, o, g.ho, g.wo], out)
}

/// Gradient of `<gy, conv2d(x, w, pad)>` with respect to `w`, i.e.
/// `gw[o,c,a,b] = sum gy[n,o,i,j] * x[n,c,i+a-pad,j+b-pad]`.
pub fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    k: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (gn, o, gh, gw_) = gy.dims4("conv2d_weight_grad")?;
    let g = ConvGeom::new("conv2d_weight_grad", x.shape(), k, pad)?;
    if gn != g.n || gh != g.ho || gw_ != g.wo {
        return Err(Error::shape(
            "conv2d_weight_grad",
            format!("gradient {:?} does not match output of {:?}", gy.shape(), x.shape()),
        ));
    }
    let (ckk, hw, chw) = (g.ckk(), g.ho * g.wo, g.c * g.h * g.w);
    let mut out = vec![T::ZERO; o * ckk];
    let nb = g.batch();
    let mut cols = vec![T::ZERO; ckk * nb * hw];
    let mut gmat = vec![T::ZERO; o * nb * hw];
    let mut i0 = 0;
    while i0 < g.n {
        let m = nb.min(g.n - i0);
        let ld = m * hw;
        for j in 0..m {
            let img = &x.data()[(i0 + j) * chw..(i0 + j + 1) * chw];
            g.im2col(img, &mut cols, ld, j * hw);
            for oi in 0..o {
                let s0 = ((i0 + j) * o + oi) * hw;
                gmat[oi * ld + j * hw..oi * ld + (j + 1) * hw].copy_from_slice(&gy.data()[s0..s0 + hw]);
            }
        }
        let beta = if i0 == 0 { T::ZERO } else { T::ONE };
        gemm(
            MatRef::rm(&gmat[..o * ld], o, ld),
            MatRef::rm_t(&cols[..ckk * ld], ckk, ld),
            beta,
            &mut out,
        );
        i0 += m;
    }
    Tensor::new(&[o, g.c, k, k], out)
}

/// `[O,C,k,k] -> [C,O,k,k]` with both spatial axes reversed. An involution;
/// convolving with it and padding `k-1-pad` is the adjoint of `conv2d`.
pub fn flip_transpose<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let (o, c, kh, kw) = w.dims4("flip_transpose")?;
    let mut out = vec![T::ZERO; w.numel()];
    let src = w.data();
    for oi in 0..o {
        for ci in 0..c {
            for a in 0..kh {
                for b in 0..kw {
                    out[((ci * o + oi) * kh + a) * kw + b] =
                        src[((oi * c + ci) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)];
                }
            }
        }
    }
    Tensor::new(&[c, o, kh, kw], out)
}

/// `(n, c, rest)` view over the first two axes.
fn channel_view(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("tensor {shape:?} has no channel axis")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Sums over every axis except axis 1, giving `[C]`.
pub fn channel_sum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, r) = channel_view("channel_sum", x.shape())?;
    let mut out = vec![T::ZERO; c];
    for i in 0..n {
        for (ci, acc) in out.iter_mut().enumerate() {
            let base = (i * c + ci) * r;
            for &v in &x.data()[base..base + r] {
                *acc += v;
            }
        }
    }
    Tensor::new(&[c], out)
}

/// Broadcasts `b: [C]` along axis 1 of `shape`.
pub fn broadcast_channel<T: Scalar>(b: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c, r) = channel_view("broadcast_channel", shape)?;
    if b.shape() != [c] {
        return Err(Error::shape(
            "broadcast_channel",
            format!("bias {:?} for {c} channels", b.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * c * r);
    for _ in 0..n {
        for &v in b.data() {
            out.extend(core::iter::repeat(v).take(r));
        }
    }
    Tensor::new(shape, out)
}

/// Sums over axis 1 keeping it as extent 1.
pub fn channel_sum_keep<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, r) = channel_view("channel_sum_keep", x.shape())?;
    let mut out = vec![T::ZERO; n * r];
    for i in 0..n {
        let dst = &mut out[i * r..(i + 1) * r];
        for ci in 0..c {
            let src = &x.data()[(i * c + ci) * r..(i * c + ci + 1) * r];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = 1;
    Tensor::new(&shape, out)
}

/// Repeats an extent-1 axis 1 `c` times.
pub fn expand_channels<T: Scalar>(x: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let (n, one, r) = channel_view("expand_channels", x.shape())?;
    if one != 1 || c == 0 {
        return Err(Error::shape("expand_channels", format!("cannot expand {:?}", x.shape())));
    }
    let mut out = Vec::with_capacity(n * c * r);
    for i in 0..n {
        let src = &x.data()[i * r..(i + 1) * r];
        for _ in 0..c {
            out.extend_from_slice(src);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = c;
    Tensor::new(&shape, out)
}

/// Sums every axis except the leading one, giving `[N]`.
pub fn row_sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.shape()[0];
    let r = x.numel() / n;
    let data = x
        .data()
        .chunks_exact(r)
        .map(|row| row.iter().fold(T::ZERO, |acc, &v| acc + v))
        .collect();
    Tensor { shape: vec![n], data }
}

/// Broadcasts `x: [N]` over the trailing axes of `shape`.
pub fn expand_rows<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if x.shape().len() != 1 || shape.first() != Some(&x.shape()[0]) {
        return Err(Error::shape("expand_rows", format!("{:?} into {shape:?}", x.shape())));
    }
    let r: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(x.numel() * r);
    for &v in x.data() {
        out.extend(core::iter::repeat(v).take(r));
    }
    Tensor::new(shape, out)
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().fold(T::ZERO, |acc, &v| acc + v))
}

pub fn broadcast_scalar<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let v = x
        .item()
        .ok_or_else(|| Error::shape("broadcast_scalar", format!("{:?} is not scalar", x.shape())))?;
    Ok(Tensor::full(shape, v))
}

fn dims2<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, format!("expected matrix, got {s:?}"))),
    }
}

/// `x [N,I] * w[O,I]^T -> [N,O]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, i) = dims2("linear", x)?;
    let (o, wi) = dims2("linear", w)?;
    if i != wi {
        return Err(Error::shape("linear", format!("{:?} x {:?}^T", x.shape(), w.shape())));
    }
    let mut out = vec![T::ZERO; n * o];
    gemm(MatRef::rm(x.data(), n, i), MatRef::rm_t(w.data(), o, i), T::ZERO, &mut out);
    Tensor::new(&[n, o], out)
}

/// `a [M,K] * b [K,N] -> [M,N]`.
pub fn matmul_nn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul", a)?;
    let (bk, n) = dims2("matmul", b)?;
    if k != bk {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![T::ZERO; m * n];
    gemm(MatRef::rm(a.data(), m, k), MatRef::rm(b.data(), k, n), T::ZERO, &mut out);
    Tensor::new(&[m, n], out)
}

/// `a [K,M]^T * b [K,N] -> [M,N]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = dims2("matmul_tn", a)?;
    let (bk, n) = dims2("matmul_tn", b)?;
    if k != bk {
        return Err(Error::shape("matmul_tn", format!("{:?}^T x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![T::ZERO; m * n];
    gemm(MatRef::rm_t(a.data(), k, m), MatRef::rm(b.data(), k, n), T::ZERO, &mut out);
    Tensor::new(&[m, n], out)
}
