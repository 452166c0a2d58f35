//! 2-D convolution and its two adjoints.
//!
//! For a fixed geometry the trilinear form `Σ x[c, i·s+a−p, j·s+b−p] ·
//! w[o, c, a, b] · y[o, i, j]` has three partial derivatives: the forward
//! convolution (→ y), the input gradient (→ x) and the weight gradient
//! (→ w). Each one's vector-Jacobian products are the other two, which
//! keeps the set closed under repeated differentiation.

use super::{Op, Tensor};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

/// Spatial geometry of a cross-correlation from `in` to `out` extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, k_h: usize, k_w: usize, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid!("convolution stride must be positive"));
        }
        if k_h == 0 || k_w == 0 {
            return Err(shape_err!("empty convolution kernel {}x{}", k_h, k_w));
        }
        let (ph, pw) = (in_h + 2 * padding, in_w + 2 * padding);
        if k_h > ph || k_w > pw {
            return Err(shape_err!(
                "kernel {}x{} exceeds padded input {}x{}",
                k_h, k_w, ph, pw
            ));
        }
        Ok(ConvGeom {
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            padding,
            out_h: (ph - k_h) / stride + 1,
            out_w: (pw - k_w) / stride + 1,
        })
    }

    fn taps(&self) -> usize {
        self.k_h * self.k_w
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one sample `[C, H, W]` into columns `[C·kh·kw, oh·ow]`.
fn im2col<T: Scalar>(x: &[T], channels: usize, g: &ConvGeom) -> Vec<T> {
    let (ohw, p, s) = (g.out_plane(), g.padding as isize, g.stride as isize);
    let mut col = vec![T::zero(); channels * g.taps() * ohw];
    for c in 0..channels {
        let plane = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        for a in 0..g.k_h {
            for b in 0..g.k_w {
                let row = &mut col[((c * g.k_h + a) * g.k_w + b) * ohw..][..ohw];
                for i in 0..g.out_h {
                    let u = i as isize * s + a as isize - p;
                    if u < 0 || u >= g.in_h as isize {
                        continue;
                    }
                    let src = &plane[u as usize * g.in_w..][..g.in_w];
                    let dst = &mut row[i * g.out_w..][..g.out_w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let v = j as isize * s + b as isize - p;
                        if v >= 0 && v < g.in_w as isize {
                            *d = src[v as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
fn col2im_add<T: Scalar>(col: &[T], channels: usize, g: &ConvGeom, x: &mut [T]) {
    let (ohw, p, s) = (g.out_plane(), g.padding as isize, g.stride as isize);
    for c in 0..channels {
        let plane = &mut x[c * g.in_plane()..(c + 1) * g.in_plane()];
        for a in 0..g.k_h {
            for b in 0..g.k_w {
                let row = &col[((c * g.k_h + a) * g.k_w + b) * ohw..][..ohw];
                for i in 0..g.out_h {
                    let u = i as isize * s + a as isize - p;
                    if u < 0 || u >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[u as usize * g.in_w..][..g.in_w];
                    for (j, &val) in row[i * g.out_w..][..g.out_w].iter().enumerate() {
                        let v = j as isize * s + b as isize - p;
                        if v >= 0 && v < g.in_w as isize {
                            dst[v as usize] = dst[v as usize] + val;
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = W · im2col(x[n])`.
fn conv_forward<T: Scalar>(x: &[T], batch: usize, c_in: usize, w: &[T], c_out: usize, g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (c_in * g.taps(), g.out_plane());
    let mut y = vec![T::zero(); batch * c_out * ohw];
    for n in 0..batch {
        let xn = &x[n * c_in * g.in_plane()..(n + 1) * c_in * g.in_plane()];
        let owned;
        let col: &[T] = if g.pointwise() {
            xn
        } else {
            owned = im2col(xn, c_in, g);
            &owned
        };
        T::gemm(
            c_out, ckk, ohw, T::one(),
            w, (ckk as isize, 1),
            col, (ohw as isize, 1),
            T::zero(), &mut y[n * c_out * ohw..(n + 1) * c_out * ohw], (ohw as isize, 1),
        );
    }
    y
}

/// `x[n] = col2im(Wᵀ · y[n])`.
fn conv_input_grad_kernel<T: Scalar>(y: &[T], batch: usize, c_out: usize, w: &[T], c_in: usize, g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (c_in * g.taps(), g.out_plane());
    let mut x = vec![T::zero(); batch * c_in * g.in_plane()];
    let mut col = vec![T::zero(); ckk * ohw];
    for n in 0..batch {
        let yn = &y[n * c_out * ohw..(n + 1) * c_out * ohw];
        let xn = &mut x[n * c_in * g.in_plane()..(n + 1) * c_in * g.in_plane()];
        if g.pointwise() {
            T::gemm(
                ckk, c_out, ohw, T::one(),
                w, (1, ckk as isize),
                yn, (ohw as isize, 1),
                T::zero(), xn, (ohw as isize, 1),
            );
            continue;
        }
        T::gemm(
            ckk, c_out, ohw, T::one(),
            w, (1, ckk as isize),
            yn, (ohw as isize, 1),
            T::zero(), &mut col, (ohw as isize, 1),
        );
        col2im_add(&col, c_in, g, xn);
    }
    x
}

/// `w = Σ_n y[n] · im2col(x[n])ᵀ`.
fn conv_weight_grad_kernel<T: Scalar>(x: &[T], batch: usize, c_in: usize, y: &[T], c_out: usize, g: &ConvGeom) -> Vec<T> {
    let (ckk, ohw) = (c_in * g.taps(), g.out_plane());
    let mut w = vec![T::zero(); c_out * ckk];
    for n in 0..batch {
        let xn = &x[n * c_in * g.in_plane()..(n + 1) * c_in * g.in_plane()];
        let yn = &y[n * c_out * ohw..(n + 1) * c_out * ohw];
        let owned;
        let col: &[T] = if g.pointwise() {
            xn
        } else {
            owned = im2col(xn, c_in, g);
            &owned
        };
        T::gemm(
            c_out, ohw, ckk, T::one(),
            yn, (ohw as isize, 1),
            col, (1, ohw as isize),
            T::one(), &mut w, (ckk as isize, 1),
        );
    }
    w
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of `[N, Cin, H, W]` with weights `[Cout, Cin, kh, kw]`.
    ///
    /// Output extents are `floor((H + 2·padding − kh) / stride) + 1`.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4()?;
        let [o, wc, kh, kw] = weight.dims4()?;
        if wc != c {
            return Err(shape_err!(
                "conv2d: input has {} channels but weight {:?} expects {}",
                c, weight.shape(), wc
            ));
        }
        let g = ConvGeom::new(h, w, kh, kw, stride, padding)?;
        let data = conv_forward(self.data(), n, c, weight.data(), o, &g);
        Ok(Tensor::from_op(
            vec![n, o, g.out_h, g.out_w],
            data,
            Op::Conv(self.clone(), weight.clone(), g),
        ))
    }

    /// Transposed convolution of `[N, Cin, H, W]` with weights
    /// `[Cin, Cout, kh, kw]`; the exact adjoint of [`Tensor::conv2d`].
    ///
    /// Output extents are `(H − 1)·stride − 2·padding + kh`.
    pub fn conv2d_transpose(&self, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let [_, c, h, w] = self.dims4()?;
        let [wc, _, kh, kw] = weight.dims4()?;
        if wc != c {
            return Err(shape_err!(
                "conv2d_transpose: input has {} channels but weight {:?} expects {}",
                c, weight.shape(), wc
            ));
        }
        if stride == 0 {
            return Err(invalid!("convolution stride must be positive"));
        }
        let out_h = ((h - 1) * stride + kh).checked_sub(2 * padding).filter(|&v| v > 0);
        let out_w = ((w - 1) * stride + kw).checked_sub(2 * padding).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(shape_err!("conv2d_transpose: padding {} leaves an empty output", padding));
        };
        let g = ConvGeom::new(out_h, out_w, kh, kw, stride, padding)?;
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        conv_input_grad(self, weight, g)
    }
}

/// `y: [N, O, oh, ow]`, `w: [O, C, kh, kw]` → `[N, C, in_h, in_w]`.
pub(crate) fn conv_input_grad<T: Scalar>(y: &Tensor<T>, w: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let [n, o, oh, ow] = y.dims4()?;
    let [wo, c, kh, kw] = w.dims4()?;
    if wo != o || (oh, ow) != (g.out_h, g.out_w) || (kh, kw) != (g.k_h, g.k_w) {
        return Err(shape_err!("conv input gradient: inconsistent shapes {:?}, {:?}", y.shape(), w.shape()));
    }
    let data = conv_input_grad_kernel(y.data(), n, o, w.data(), c, &g);
    Ok(Tensor::from_op(
        vec![n, c, g.in_h, g.in_w],
        data,
        Op::ConvInputGrad(y.clone(), w.clone(), g),
    ))
}

/// `x: [N, C, in_h, in_w]`, `y: [N, O, oh, ow]` → `[O, C, kh, kw]`.
pub(crate) fn conv_weight_grad<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let [yn, o, oh, ow] = y.dims4()?;
    if yn != n || (h, w) != (g.in_h, g.in_w) || (oh, ow) != (g.out_h, g.out_w) {
        return Err(shape_err!("conv weight gradient: inconsistent shapes {:?}, {:?}", x.shape(), y.shape()));
    }
    let data = conv_weight_grad_kernel(x.data(), n, c, y.data(), o, &g);
    Ok(Tensor::from_op(
        vec![o, c, g.k_h, g.k_w],
        data,
        Op::ConvWeightGrad(x.clone(), y.clone(), g),
    ))
}
