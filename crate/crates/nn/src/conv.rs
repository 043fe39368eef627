//! im2col convolution kernels backed by `matrixmultiply::sgemm`.

use crate::Tensor;

/// Stride, zero padding and dilation of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    pub fn strided(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            padding: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        assert!(padded >= span, "convolution input {input} smaller than kernel span {span}");
        (padded - span) / self.stride + 1
    }
}

struct Layout {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Layout {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f32], l: &Layout, col: &mut [f32]) {
    let ConvGeom {
        stride,
        padding,
        dilation,
    } = l.geom;
    let cols = l.cols();
    let mut row = 0;
    for c in 0..l.c {
        let plane = &x[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..l.k {
            for kj in 0..l.k {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..l.ho {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    let out_row = &mut dst[oy * l.wo..(oy + 1) * l.wo];
                    if iy < 0 || iy >= l.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * l.w..(iy as usize + 1) * l.w];
                    let off = (kj * dilation) as isize - padding as isize;
                    if stride == 1 {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *o = if ix >= 0 && ix < l.w as isize { src[ix as usize] } else { 0.0 };
                        }
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + off;
                            *o = if ix >= 0 && ix < l.w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(col: &[f32], l: &Layout, dx: &mut [f32]) {
    let ConvGeom {
        stride,
        padding,
        dilation,
    } = l.geom;
    let cols = l.cols();
    let mut row = 0;
    for c in 0..l.c {
        let plane = &mut dx[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..l.k {
            for kj in 0..l.k {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..l.ho {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= l.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * l.w..(iy as usize + 1) * l.w];
                    let off = (kj * dilation) as isize - padding as isize;
                    for ox in 0..l.wo {
                        let ix = (ox * stride) as isize + off;
                        if ix >= 0 && ix < l.w as isize {
                            dst[ix as usize] += src[oy * l.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c[m×n] = alpha * a[m×k] * b[k×n] + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller guarantees the slices cover the strided extents; every call site
    // below passes dense buffers sized exactly m×k, k×n and m×n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn layout(x: &Tensor, w: &Tensor, geom: ConvGeom) -> (Layout, usize) {
    let (_, c, h, wd) = x.dims4();
    let (cout, cin, k, k2) = w.dims4();
    assert_eq!(cin, c, "conv weight expects {cin} input channels, got {c}");
    assert_eq!(k, k2, "only square kernels are supported");
    let ho = geom.out_len(h, k);
    let wo = geom.out_len(wd, k);
    (
        Layout {
            c,
            h,
            w: wd,
            k,
            ho,
            wo,
            geom,
        },
        cout,
    )
}

pub(crate) fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geom: ConvGeom) -> Tensor {
    let n = x.dims4().0;
    let (l, cout) = layout(x, w, geom);
    let (rows, cols) = (l.rows(), l.cols());
    let mut out = Tensor::zeros(&[n, cout, l.ho, l.wo]);
    let mut col = vec![0.0f32; rows * cols];
    let in_item = l.c * l.h * l.w;
    let out_item = cout * cols;
    for i in 0..n {
        let xi = &x.data()[i * in_item..(i + 1) * in_item];
        let oi = &mut out.data_mut()[i * out_item..(i + 1) * out_item];
        if let Some(b) = b {
            for (o, chunk) in oi.chunks_mut(cols).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        im2col(xi, &l, &mut col);
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(cout, rows, cols, w.data(), (rows as isize, 1), &col, (cols as isize, 1), beta, oi);
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` only when `need_dx`.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dout: &Tensor,
    geom: ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let n = x.dims4().0;
    let (l, cout) = layout(x, w, geom);
    let (rows, cols) = (l.rows(), l.cols());
    let in_item = l.c * l.h * l.w;
    let out_item = cout * cols;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = Tensor::zeros(&[cout]);
    let mut col = vec![0.0f32; rows * cols];
    let mut dcol = vec![0.0f32; rows * cols];
    for i in 0..n {
        let di = &dout.data()[i * out_item..(i + 1) * out_item];
        for (o, chunk) in di.chunks(cols).enumerate() {
            db.data_mut()[o] += chunk.iter().sum::<f32>();
        }
        if let Some(dw) = dw.as_mut() {
            let xi = &x.data()[i * in_item..(i + 1) * in_item];
            im2col(xi, &l, &mut col);
            // dW[cout×rows] += dOut[cout×cols] · colᵀ[cols×rows]
            gemm(cout, cols, rows, di, (cols as isize, 1), &col, (1, cols as isize), 1.0, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[rows×cols] = Wᵀ[rows×cout] · dOut[cout×cols]
            gemm(rows, cout, cols, w.data(), (1, rows as isize), di, (cols as isize, 1), 0.0, &mut dcol);
            col2im(&dcol, &l, &mut dx.data_mut()[i * in_item..(i + 1) * in_item]);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor, w: &Tensor, b: &Tensor, g: ConvGeom) -> Tensor {
        let (n, c, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let ho = g.out_len(h, k);
        let wo = g.out_len(wd, k);
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for i in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((o * c + ci) * k + ki) * k + kj]
                                            * x.data()[((i * c + ci) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((i * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect())
    }

    #[test]
    fn matches_naive_convolution() {
        for geom in [
            ConvGeom::same(3, 1),
            ConvGeom::same(3, 2),
            ConvGeom::strided(3, 2),
            ConvGeom { stride: 1, padding: 0, dilation: 1 },
        ] {
            let x = ramp(&[2, 3, 7, 6], 0.1);
            let w = ramp(&[4, 3, 3, 3], 0.05);
            let b = ramp(&[4], 0.2);
            let fast = conv2d_forward(&x, &w, Some(&b), geom);
            let slow = naive(&x, &w, &b, geom);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-4, "{a} vs {e} for {geom:?}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv_x^T(g)> and likewise for the weights.
        let geom = ConvGeom::strided(3, 2);
        let x = ramp(&[1, 2, 6, 5], 0.1);
        let w = ramp(&[3, 2, 3, 3], 0.07);
        let y = conv2d_forward(&x, &w, None, geom);
        let g = ramp(y.shape(), 0.03);
        let (dx, dw, _) = conv2d_backward(&x, &w, &g, geom, true, true);
        let lhs: f32 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs_x: f32 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let rhs_w: f32 = w.data().iter().zip(dw.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-4);
        assert!((lhs - rhs_w).abs() < 1e-4);
    }
}
