//! Convolution kernels via im2col and GEMM.

use glioaug_core::Scalar;

/// Geometry of a 2D convolution on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// 1x1, stride 1, no padding: the input already is its own column matrix.
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `C x H x W` sample into a `(C*kh*kw) x (Ho*Wo)` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if y < 0 || y >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..(c * g.h + y as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if xx < 0 || xx >= g.w as isize { T::zero() } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a sample gradient.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + y as usize) * g.w;
                    for ox in 0..ow {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dx[base + xx as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = W * cols(x[n]) + b` for every sample.
pub fn forward<T: Scalar>(x: &[T], n: usize, g: &ConvGeom, weight: &[T], out_c: usize, bias: Option<&[T]>) -> Vec<T> {
    let plane = g.out_h() * g.out_w();
    let k = g.patch();
    let in_len = g.c * g.h * g.w;
    let mut y = vec![T::zero(); n * out_c * plane];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let b: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        let ys = &mut y[s * out_c * plane..(s + 1) * out_c * plane];
        T::gemm(out_c, k, plane, T::one(), weight, (k, 1), b, (plane, 1), T::zero(), ys, (plane, 1));
        if let Some(bias) = bias {
            for (o, &bo) in bias.iter().enumerate() {
                ys[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    y
}

/// Gradients requested from [`backward`].
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    out_c: usize,
    dy: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_h() * g.out_w();
    let k = g.patch();
    let in_len = g.c * g.h * g.w;
    let mut dx = want.0.then(|| vec![T::zero(); n * in_len]);
    let mut dw = want.1.then(|| vec![T::zero(); out_c * k]);
    let mut db = want.2.then(|| vec![T::zero(); out_c]);
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcols = if want.0 && !g.pointwise() { vec![T::zero(); k * plane] } else { Vec::new() };
    for s in 0..n {
        let dys = &dy[s * out_c * plane..(s + 1) * out_c * plane];
        if let Some(db) = db.as_mut() {
            for (o, d) in db.iter_mut().enumerate() {
                *d += dys[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let b: &[T] = if g.pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            T::gemm(out_c, plane, k, T::one(), dys, (plane, 1), b, (1, plane), T::one(), dw, (k, 1));
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if g.pointwise() {
                T::gemm(k, out_c, plane, T::one(), weight, (1, k), dys, (plane, 1), T::one(), dxs, (plane, 1));
            } else {
                T::gemm(k, out_c, plane, T::one(), weight, (1, k), dys, (plane, 1), T::zero(), &mut dcols, (plane, 1));
                col2im(&dcols, g, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
