use rayon::prelude::*;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Output columns handled per GEMM call. Blocks are whole output rows so the
/// partition depends only on the layer geometry, never on the thread count.
const BLOCK_COLUMNS: usize = 2048;

/// Weights and geometry of one 2-D convolution.
///
/// Padding is always zero padding of `dilation * (k - 1) / 2` per side, which
/// keeps the spatial size for stride-1 layers with odd kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    /// `(out_channels, in_channels / groups, kh, kw)`.
    pub weights: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

/// Gradients returned by [`conv2d_grad`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Zero-initialized parameters.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        dilation: usize,
        groups: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if stride == 0 || dilation == 0 || groups == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv needs positive stride/dilation/groups/kernel, got stride={stride} dilation={dilation} groups={groups} kernel={kernel:?}"
            )));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "groups={groups} must divide in_channels={in_channels} and out_channels={out_channels}"
            )));
        }
        let weights = Tensor::zeros(Shape::new(
            out_channels,
            in_channels / groups,
            kernel.0,
            kernel.1,
        ));
        Ok(ConvParams {
            kernel,
            stride,
            dilation,
            groups,
            weights,
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().channels * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().batch
    }

    pub fn padding(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel.0 - 1) / 2,
            self.dilation * (self.kernel.1 - 1) / 2,
        )
    }

    /// Spatial output size, or `None` when the dilated kernel does not fit.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let (ph, pw) = self.padding();
        let span_h = self.dilation * (self.kernel.0 - 1) + 1;
        let span_w = self.dilation * (self.kernel.1 - 1) + 1;
        let padded_h = height + 2 * ph;
        let padded_w = width + 2 * pw;
        if height == 0 || width == 0 || padded_h < span_h || padded_w < span_w {
            return None;
        }
        Some((
            (padded_h - span_h) / self.stride + 1,
            (padded_w - span_w) / self.stride + 1,
        ))
    }

    /// One input and one output channel per group.
    pub fn is_depthwise(&self) -> bool {
        self.weights.shape().channels == 1 && self.out_channels() == self.groups
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn geometry(&self, input: Shape) -> Result<Geometry> {
        if input.channels != self.in_channels() {
            return Err(Error::shape(
                "conv2d",
                format!("input with {} channels", self.in_channels()),
                format!("input {input} (weights {})", self.weights.shape()),
            ));
        }
        let (oh, ow) = self.output_size(input.height, input.width).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!(
                    "spatial size covering kernel {:?} at dilation {}",
                    self.kernel, self.dilation
                ),
                input,
            )
        })?;
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels() {
                return Err(Error::shape("conv2d bias", self.out_channels(), b.len()));
            }
        }
        let (ph, pw) = self.padding();
        let cin_g = self.in_channels() / self.groups;
        Ok(Geometry {
            h: input.height,
            w: input.width,
            oh,
            ow,
            kh: self.kernel.0,
            kw: self.kernel.1,
            stride: self.stride,
            dilation: self.dilation,
            ph,
            pw,
            groups: self.groups,
            cin_g,
            cout_g: self.out_channels() / self.groups,
            k_g: cin_g * self.kernel.0 * self.kernel.1,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    ph: usize,
    pw: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    k_g: usize,
}

impl Geometry {
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn row_blocks(&self) -> Vec<(usize, usize)> {
        let rows = (BLOCK_COLUMNS / self.ow).max(1);
        (0..self.oh)
            .step_by(rows)
            .map(|r| (r, (r + rows).min(self.oh)))
            .collect()
    }

    /// Range of output columns whose tap at horizontal offset `off` lands
    /// inside the input row.
    #[inline]
    fn valid_columns(&self, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let ow = self.ow as isize;
        let lo = if off >= 0 { 0 } else { (((-off) + s - 1) / s).min(ow) };
        let last = self.w as isize - 1 - off;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(ow) };
        (lo as usize, hi.max(lo) as usize)
    }

    #[inline]
    fn tap_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky * self.dilation) as isize - self.ph as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    #[inline]
    fn tap_col_offset(&self, kx: usize) -> isize {
        (kx * self.dilation) as isize - self.pw as isize
    }

    /// Gathers input patches of group `g` for output rows `rows` into a
    /// `k_g x ncols` row-major matrix.
    fn im2col<T: Scalar>(&self, x: &[T], g: usize, rows: (usize, usize), cols: &mut [T]) {
        let ncols = (rows.1 - rows.0) * self.ow;
        let hw = self.h * self.w;
        for ci in 0..self.cin_g {
            let plane = &x[(g * self.cin_g + ci) * hw..][..hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let row = &mut cols[r * ncols..(r + 1) * ncols];
                    let off = self.tap_col_offset(kx);
                    let (lo, hi) = self.valid_columns(off);
                    for oy in rows.0..rows.1 {
                        let seg = &mut row[(oy - rows.0) * self.ow..][..self.ow];
                        let Some(iy) = self.tap_row(oy, ky) else {
                            seg.fill(T::zero());
                            continue;
                        };
                        seg[..lo].fill(T::zero());
                        seg[hi..].fill(T::zero());
                        let src = &plane[iy * self.w..][..self.w];
                        if lo == hi {
                            continue;
                        }
                        if self.stride == 1 {
                            let start = (lo as isize + off) as usize;
                            seg[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                seg[ox] = src[(ox as isize * self.stride as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters patch gradients back onto the input.
    fn col2im<T: Scalar>(&self, cols: &[T], g: usize, rows: (usize, usize), gx: &mut [T]) {
        let ncols = (rows.1 - rows.0) * self.ow;
        let hw = self.h * self.w;
        for ci in 0..self.cin_g {
            let plane = &mut gx[(g * self.cin_g + ci) * hw..][..hw];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let row = &cols[r * ncols..(r + 1) * ncols];
                    let off = self.tap_col_offset(kx);
                    let (lo, hi) = self.valid_columns(off);
                    for oy in rows.0..rows.1 {
                        let Some(iy) = self.tap_row(oy, ky) else {
                            continue;
                        };
                        let seg = &row[(oy - rows.0) * self.ow..][..self.ow];
                        let dst = &mut plane[iy * self.w..][..self.w];
                        for ox in lo..hi {
                            dst[(ox as isize * self.stride as isize + off) as usize] += seg[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Direct cross-correlation with zero "same" padding, stride, dilation and
/// channel groups. Adds the bias when present.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let shape = input.shape();
    let geo = params.geometry(shape)?;
    let cout = params.out_channels();
    let mut out = Tensor::zeros(Shape::new(shape.batch, cout, geo.oh, geo.ow));
    for b in 0..shape.batch {
        let x = input.item(b);
        let y = out.item_mut(b);
        if params.is_depthwise() {
            depthwise_forward(&geo, x, params.weights.data(), y);
        } else {
            dense_forward(&geo, x, params.weights.data(), y);
        }
        if let Some(bias) = &params.bias {
            let ohw = geo.oh * geo.ow;
            for (c, &bv) in bias.iter().enumerate() {
                y[c * ohw..(c + 1) * ohw].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

fn depthwise_forward<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], y: &mut [T]) {
    let hw = geo.h * geo.w;
    let ohw = geo.oh * geo.ow;
    let kk = geo.kh * geo.kw;
    y.par_chunks_mut(ohw).enumerate().for_each(|(c, out)| {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let wv = w[c * kk + ky * geo.kw + kx];
                let off = geo.tap_col_offset(kx);
                let (lo, hi) = geo.valid_columns(off);
                if lo == hi {
                    continue;
                }
                for oy in 0..geo.oh {
                    let Some(iy) = geo.tap_row(oy, ky) else {
                        continue;
                    };
                    let src = &plane[iy * geo.w..][..geo.w];
                    let dst = &mut out[oy * geo.ow..][..geo.ow];
                    if geo.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (d, &s) in dst[lo..hi].iter_mut().zip(&src[start..]) {
                            *d += wv * s;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox] +=
                                wv * src[(ox as isize * geo.stride as isize + off) as usize];
                        }
                    }
                }
            }
        }
    });
}

fn dense_forward<T: Scalar>(geo: &Geometry, x: &[T], w: &[T], y: &mut [T]) {
    let ohw = geo.oh * geo.ow;
    let cout = geo.cout_g * geo.groups;
    let blocks = geo.row_blocks();
    let results: Vec<Vec<T>> = blocks
        .par_iter()
        .map(|&rows| {
            let ncols = (rows.1 - rows.0) * geo.ow;
            let mut block = vec![T::zero(); cout * ncols];
            let mut cols = if geo.pointwise() && geo.groups == 1 {
                Vec::new()
            } else {
                vec![T::zero(); geo.k_g * ncols]
            };
            for g in 0..geo.groups {
                let wg = &w[g * geo.cout_g * geo.k_g..][..geo.cout_g * geo.k_g];
                let out = &mut block[g * geo.cout_g * ncols..][..geo.cout_g * ncols];
                if cols.is_empty() {
                    // 1x1 stride-1: the input rows already are the patch matrix.
                    let hw = geo.h * geo.w;
                    let start = rows.0 * geo.ow;
                    unsafe {
                        T::gemm(
                            geo.cout_g,
                            geo.k_g,
                            ncols,
                            T::one(),
                            wg.as_ptr(),
                            geo.k_g as isize,
                            1,
                            x[start..].as_ptr(),
                            hw as isize,
                            1,
                            T::zero(),
                            out.as_mut_ptr(),
                            ncols as isize,
                            1,
                        );
                    }
                } else {
                    geo.im2col(x, g, rows, &mut cols);
                    unsafe {
                        T::gemm(
                            geo.cout_g,
                            geo.k_g,
                            ncols,
                            T::one(),
                            wg.as_ptr(),
                            geo.k_g as isize,
                            1,
                            cols.as_ptr(),
                            ncols as isize,
                            1,
                            T::zero(),
                            out.as_mut_ptr(),
                            ncols as isize,
                            1,
                        );
                    }
                }
            }
            block
        })
        .collect();
    for (&rows, block) in blocks.iter().zip(results) {
        let ncols = (rows.1 - rows.0) * geo.ow;
        for c in 0..cout {
            y[c * ohw + rows.0 * geo.ow..][..ncols].copy_from_slice(&block[c * ncols..][..ncols]);
        }
    }
}

/// Exact adjoint of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_grad<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (grad_input, weights, bias) = conv2d_backward(input, params, upstream, true)?;
    Ok(ConvGrads {
        input: grad_input.expect("input gradient requested"),
        weights,
        bias,
    })
}

/// Backward pass; the input gradient is skipped when `need_input` is false.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Vec<T>)> {
    let shape = input.shape();
    let geo = params.geometry(shape)?;
    let cout = params.out_channels();
    let expected = Shape::new(shape.batch, cout, geo.oh, geo.ow);
    if upstream.shape() != expected {
        return Err(Error::shape("conv2d_grad upstream", expected, upstream.shape()));
    }
    let ohw = geo.oh * geo.ow;
    let mut grad_bias = vec![T::zero(); cout];
    for b in 0..shape.batch {
        let u = upstream.item(b);
        for (c, gb) in grad_bias.iter_mut().enumerate() {
            *gb += u[c * ohw..(c + 1) * ohw].iter().copied().sum::<T>();
        }
    }

    let mut grad_w = Tensor::zeros(params.weights.shape());
    let mut grad_x = need_input.then(|| Tensor::zeros(shape));
    for b in 0..shape.batch {
        let x = input.item(b);
        let u = upstream.item(b);
        let gx = grad_x.as_mut().map(|t| t.item_mut(b));
        if params.is_depthwise() {
            depthwise_backward(&geo, x, params.weights.data(), u, grad_w.data_mut(), gx);
        } else {
            dense_backward(&geo, x, params.weights.data(), u, grad_w.data_mut(), gx);
        }
    }
    Ok((grad_x, grad_w, grad_bias))
}

fn depthwise_backward<T: Scalar>(
    geo: &Geometry,
    x: &[T],
    w: &[T],
    u: &[T],
    gw: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let hw = geo.h * geo.w;
    let ohw = geo.oh * geo.ow;
    let kk = geo.kh * geo.kw;
    let s = geo.stride as isize;
    for c in 0..geo.groups {
        let plane = &x[c * hw..(c + 1) * hw];
        let up = &u[c * ohw..(c + 1) * ohw];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let widx = c * kk + ky * geo.kw + kx;
                let wv = w[widx];
                let off = geo.tap_col_offset(kx);
                let (lo, hi) = geo.valid_columns(off);
                let mut acc = T::zero();
                for oy in 0..geo.oh {
                    let Some(iy) = geo.tap_row(oy, ky) else {
                        continue;
                    };
                    let urow = &up[oy * geo.ow..][..geo.ow];
                    let src = &plane[iy * geo.w..][..geo.w];
                    for ox in lo..hi {
                        acc += urow[ox] * src[(ox as isize * s + off) as usize];
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let dst = &mut gx[c * hw + iy * geo.w..][..geo.w];
                        for ox in lo..hi {
                            dst[(ox as isize * s + off) as usize] += wv * urow[ox];
                        }
                    }
                }
                gw[widx] += acc;
            }
        }
    }
}

fn dense_backward<T: Scalar>(
    geo: &Geometry,
    x: &[T],
    w: &[T],
    u: &[T],
    gw: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let ohw = geo.oh * geo.ow;
    let hw = geo.h * geo.w;
    let direct = geo.pointwise() && geo.groups == 1;
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for rows in geo.row_blocks() {
        let ncols = (rows.1 - rows.0) * geo.ow;
        let col0 = rows.0 * geo.ow;
        if !direct {
            cols.resize(geo.k_g * ncols, T::zero());
            gcols.resize(geo.k_g * ncols, T::zero());
        }
        for g in 0..geo.groups {
            let wg = &w[g * geo.cout_g * geo.k_g..][..geo.cout_g * geo.k_g];
            let gwg = &mut gw[g * geo.cout_g * geo.k_g..][..geo.cout_g * geo.k_g];
            let ug = u[g * geo.cout_g * ohw + col0..].as_ptr();
            // Patch matrix (k_g x ncols) as pointer + row stride.
            let (patch, patch_rs) = if direct {
                (x[col0..].as_ptr(), hw as isize)
            } else {
                geo.im2col(x, g, rows, &mut cols);
                (cols.as_ptr(), ncols as isize)
            };
            unsafe {
                // gW += U * P^T
                T::gemm(
                    geo.cout_g,
                    ncols,
                    geo.k_g,
                    T::one(),
                    ug,
                    ohw as isize,
                    1,
                    patch,
                    1,
                    patch_rs,
                    T::one(),
                    gwg.as_mut_ptr(),
                    geo.k_g as isize,
                    1,
                );
            }
            let Some(gx) = gx.as_deref_mut() else {
                continue;
            };
            unsafe {
                // dP = W^T * U
                if direct {
                    T::gemm(
                        geo.k_g,
                        geo.cout_g,
                        ncols,
                        T::one(),
                        wg.as_ptr(),
                        1,
                        geo.k_g as isize,
                        ug,
                        ohw as isize,
                        1,
                        T::one(),
                        gx[col0..].as_mut_ptr(),
                        hw as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        geo.k_g,
                        geo.cout_g,
                        ncols,
                        T::one(),
                        wg.as_ptr(),
                        1,
                        geo.k_g as isize,
                        ug,
                        ohw as isize,
                        1,
                        T::zero(),
                        gcols.as_mut_ptr(),
                        ncols as isize,
                        1,
                    );
                }
            }
            if !direct {
                geo.col2im(&gcols, g, rows, gx);
            }
        }
    }
}
