//! Strided "same" convolution and its transpose via im2col / col2im and GEMM.
//!
//! A down convolution with kernel `f` (odd), stride `s` and padding
//! `(f - 1) / 2` maps `H x W` to `H/s x W/s`. The up (transposed) convolution
//! is its exact adjoint, mapping `h x w` to `h*s x w*s`.
//!
//! Down weights are `[out, in, f, f]`; up weights are `[in, out, f, f]`.

use crate::tensor::{gemm, FeatureMap, Scalar, Trans};

/// Geometry of a down convolution (the adjoint of an up convolution).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Geometry {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfolds `x` (`channels x height x width`) into a `[c*f*f, out_h*out_w]` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let (oh, ow, pad) = (g.out_height(), g.out_width(), g.pad() as isize);
    let cols = oh * ow;
    let mut col = vec![T::zero(); g.col_rows() * cols];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters and sums columns back into `channels x height x width`.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &Geometry) -> Vec<T> {
    let (oh, ow, pad) = (g.out_height(), g.out_width(), g.pad() as isize);
    let cols = oh * ow;
    let mut x = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            let d = &mut dst[ix as usize];
                            *d = *d + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut y[c * plane..(c + 1) * plane] {
            *v = *v + b;
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(grad_bias: &mut [T], dy: &[T], plane: usize) {
    for (c, gb) in grad_bias.iter_mut().enumerate() {
        *gb = *gb + dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

/// Down convolution. Returns the output and the unfolded input for the backward pass.
pub(crate) fn conv_down<T: Scalar>(
    x: &FeatureMap<T>,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    stride: usize,
) -> (FeatureMap<T>, Vec<T>) {
    let g = Geometry {
        channels: x.channels(),
        height: x.height(),
        width: x.width(),
        kernel,
        stride,
    };
    let out_c = bias.len();
    let col = im2col(x.as_slice(), &g);
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut y = vec![T::zero(); out_c * cols];
    gemm(Trans::No, Trans::No, out_c, cols, rows, weight, &col, &mut y, false);
    add_bias(&mut y, bias, cols);
    let y = FeatureMap::from_vec(out_c, g.out_height(), g.out_width(), y)
        .expect("conv output shape is consistent");
    (y, col)
}

/// Backward of [`conv_down`]; accumulates weight/bias gradients, returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_down_backward<T: Scalar>(
    input_shape: (usize, usize, usize),
    col: &[T],
    weight: &[T],
    kernel: usize,
    stride: usize,
    dy: &FeatureMap<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> FeatureMap<T> {
    let (c, h, w) = input_shape;
    let g = Geometry {
        channels: c,
        height: h,
        width: w,
        kernel,
        stride,
    };
    let out_c = dy.channels();
    let (rows, cols) = (g.col_rows(), g.col_cols());
    gemm(Trans::No, Trans::Yes, out_c, rows, cols, dy.as_slice(), col, grad_weight, true);
    accumulate_bias_grad(grad_bias, dy.as_slice(), cols);
    let mut dcol = vec![T::zero(); rows * cols];
    gemm(Trans::Yes, Trans::No, rows, cols, out_c, weight, dy.as_slice(), &mut dcol, false);
    FeatureMap::from_vec(c, h, w, col2im(&dcol, &g)).expect("conv input shape is consistent")
}

/// Up (transposed) convolution: output is `stride` times larger in each dimension.
pub(crate) fn conv_up<T: Scalar>(
    x: &FeatureMap<T>,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    stride: usize,
) -> FeatureMap<T> {
    let out_c = bias.len();
    let g = Geometry {
        channels: out_c,
        height: x.height() * stride,
        width: x.width() * stride,
        kernel,
        stride,
    };
    let (rows, cols) = (g.col_rows(), g.col_cols());
    debug_assert_eq!(cols, x.plane_len());
    let mut col = vec![T::zero(); rows * cols];
    gemm(Trans::Yes, Trans::No, rows, cols, x.channels(), weight, x.as_slice(), &mut col, false);
    let mut y = col2im(&col, &g);
    add_bias(&mut y, bias, g.height * g.width);
    FeatureMap::from_vec(out_c, g.height, g.width, y).expect("up-conv output shape is consistent")
}

/// Backward of [`conv_up`]; accumulates weight/bias gradients, returns `dx`.
pub(crate) fn conv_up_backward<T: Scalar>(
    x: &FeatureMap<T>,
    weight: &[T],
    kernel: usize,
    stride: usize,
    dy: &FeatureMap<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> FeatureMap<T> {
    let g = Geometry {
        channels: dy.channels(),
        height: dy.height(),
        width: dy.width(),
        kernel,
        stride,
    };
    let (rows, cols) = (g.col_rows(), g.col_cols());
    accumulate_bias_grad(grad_bias, dy.as_slice(), dy.plane_len());
    let dcol = im2col(dy.as_slice(), &g);
    let in_c = x.channels();
    gemm(Trans::No, Trans::Yes, in_c, rows, cols, x.as_slice(), &dcol, grad_weight, true);
    let mut dx = vec![T::zero(); in_c * cols];
    gemm(Trans::No, Trans::No, in_c, cols, rows, weight, &dcol, &mut dx, false);
    FeatureMap::from_vec(in_c, x.height(), x.width(), dx).expect("up-conv input shape is consistent")
}
