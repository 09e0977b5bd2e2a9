//! Raw numeric kernels behind the graph ops.

use rayon::prelude::*;

/// Row-major matrix view: `rows × cols` with arbitrary strides, so transposes
/// are free.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride as usize + (self.cols - 1) * self.col_stride as usize
    }
}

/// `out = a · b + beta · out`, `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f32, out: &mut [f32]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(out.len(), a.rows * b.cols, "gemm output size");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above bound every element address read from `a`
    // and `b`; `out` is exactly `m × n` with row stride `n`.
    unsafe {
        matrixmultiply::sgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one `c × h × w` image into a `patch_len × out_len` column matrix.
pub(crate) fn im2col(img: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let out_len = g.out_len();
    for c in 0..g.channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * g.height + iy as usize) * g.width..][..g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image gradient.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, img: &mut [f32]) {
    let out_len = g.out_len();
    for c in 0..g.channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.height + iy as usize) * g.width..][..g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. Returns the output and, when `keep_cols`,
/// the unfolded inputs for the backward pass.
pub(crate) fn conv_forward(
    input: &[f32],
    batch: usize,
    kernel: &[f32],
    out_channels: usize,
    bias: Option<&[f32]>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Vec<f32>, Option<Vec<f32>>) {
    let patch = g.patch_len();
    let out_len = g.out_len();
    let col_size = patch * out_len;
    let mut out = vec![0.0f32; batch * out_channels * out_len];
    let mut cols = if keep_cols {
        vec![0.0f32; batch * col_size]
    } else {
        Vec::new()
    };
    let w = MatRef::new(kernel, out_channels, patch);

    let run = |img: &[f32], col: &mut [f32], dst: &mut [f32]| {
        im2col(img, g, col);
        gemm(w, MatRef::new(col, patch, out_len), 0.0, dst);
        if let Some(b) = bias {
            for (o, row) in dst.chunks_mut(out_len).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    };

    if keep_cols {
        out.par_chunks_mut(out_channels * out_len)
            .zip(cols.par_chunks_mut(col_size))
            .enumerate()
            .for_each(|(i, (dst, col))| run(&input[i * g.in_len()..][..g.in_len()], col, dst));
    } else {
        out.par_chunks_mut(out_channels * out_len)
            .enumerate()
            .for_each(|(i, dst)| {
                let mut col = vec![0.0f32; col_size];
                run(&input[i * g.in_len()..][..g.in_len()], &mut col, dst);
            });
    }
    (out, keep_cols.then_some(cols))
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    grad_out: &[f32],
    batch: usize,
    kernel: &[f32],
    out_channels: usize,
    cols: &[f32],
    g: &ConvGeom,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> ConvGrads {
    let patch = g.patch_len();
    let out_len = g.out_len();
    let col_size = patch * out_len;
    let per_out = out_channels * out_len;

    let kernel_grad = want_kernel.then(|| {
        let mut dk = vec![0.0f32; out_channels * patch];
        // Fixed image order keeps the accumulation deterministic.
        for i in 0..batch {
            let dy = MatRef::new(&grad_out[i * per_out..][..per_out], out_channels, out_len);
            let col = MatRef::new(&cols[i * col_size..][..col_size], patch, out_len);
            gemm(dy, col.t(), 1.0, &mut dk);
        }
        dk
    });

    let bias_grad = want_bias.then(|| {
        let mut db = vec![0.0f64; out_channels];
        for i in 0..batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let row = &grad_out[i * per_out + o * out_len..][..out_len];
                *acc += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        db.into_iter().map(|v| v as f32).collect()
    });

    let input_grad = want_input.then(|| {
        let mut dx = vec![0.0f32; batch * g.in_len()];
        let w = MatRef::new(kernel, out_channels, patch);
        dx.par_chunks_mut(g.in_len())
            .enumerate()
            .for_each(|(i, dst)| {
                let dy = MatRef::new(&grad_out[i * per_out..][..per_out], out_channels, out_len);
                let mut dcol = vec![0.0f32; col_size];
                gemm(w.t(), dy, 0.0, &mut dcol);
                col2im(&dcol, g, dst);
            });
        dx
    });

    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}
