//! Pixel agreement between a real and a synthetic image.
//!
//! Inputs are expected on the 0..255 display range; [`rescale_to_255`] maps
//! arbitrary intensities there first.

use crate::error::{Error, Result};
use crate::image::Image2;
use crate::scalar::Scalar;

pub const PIXEL_RANGE: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims<T>(x: &Image2<T>, y: &Image2<T>) -> Result<()>
where
    T: Copy,
{
    if x.dims() != y.dims() {
        let (a, b, c) = x.dims();
        let (d, e, f) = y.dims();
        return Err(Error::ShapeMismatch {
            left: vec![a, b, c],
            right: vec![d, e, f],
        });
    }
    Ok(())
}

/// Linearly maps `[lo, hi]` onto `[0, 255]`; a flat range maps to 0.
pub fn rescale_to_255<T: Scalar>(values: &[T], lo: T, hi: T) -> Vec<T> {
    let span = hi - lo;
    if span <= T::zero() {
        return vec![T::zero(); values.len()];
    }
    let k = T::lit(PIXEL_RANGE) / span;
    values.iter().map(|&v| (v - lo) * k).collect()
}

/// Rescales using the image's own min and max.
pub fn rescale_image<T: Scalar>(img: &Image2<T>) -> Image2<T> {
    let lo = img.data().iter().copied().fold(T::infinity(), T::min);
    let hi = img.data().iter().copied().fold(T::neg_infinity(), T::max);
    let (c, h, w) = img.dims();
    Image2::new(c, h, w, rescale_to_255(img.data(), lo, hi)).expect("same dims")
}

/// Per-pixel mean squared difference.
pub fn mse<T: Scalar>(x: &Image2<T>, y: &Image2<T>) -> Result<T> {
    check_dims(x, y)?;
    let s: T = x.data().iter().zip(y.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / T::from_usize_lossy(x.data().len()))
}

/// Per-pixel mean absolute difference.
pub fn mae<T: Scalar>(x: &Image2<T>, y: &Image2<T>) -> Result<T> {
    check_dims(x, y)?;
    let s: T = x.data().iter().zip(y.data()).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(s / T::from_usize_lossy(x.data().len()))
}

fn batch<T: Scalar>(pairs: &[(Image2<T>, Image2<T>)], f: fn(&Image2<T>, &Image2<T>) -> Result<T>) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no image pairs".into()));
    }
    let mut s = T::zero();
    for (x, y) in pairs {
        s += f(x, y)?;
    }
    Ok(s / T::from_usize_lossy(pairs.len()))
}

/// Mean of per-pair MSE over `n` pairs.
pub fn batch_mse<T: Scalar>(pairs: &[(Image2<T>, Image2<T>)]) -> Result<T> {
    batch(pairs, mse)
}

pub fn batch_mae<T: Scalar>(pairs: &[(Image2<T>, Image2<T>)]) -> Result<T> {
    batch(pairs, mae)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr_from_mse<T: Scalar>(mse: T, peak: T) -> T {
    if mse == T::zero() {
        return T::infinity();
    }
    -T::lit(10.0) * (mse / (peak * peak)).log10()
}

pub fn psnr<T: Scalar>(x: &Image2<T>, y: &Image2<T>, peak: T) -> Result<T> {
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter keeping only fully covered positions.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over every channel, computed in f64.
pub fn ssim<T: Scalar>(x: &Image2<T>, y: &Image2<T>) -> Result<T> {
    check_dims(x, y)?;
    let (channels, h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            got: (h, w),
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * PIXEL_RANGE).powi(2);
    let c2 = (SSIM_K2 * PIXEL_RANGE).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let a: Vec<f64> = x.plane(c).iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = y.plane(c).iter().map(|v| v.as_f64()).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&a, h, w, &k);
        let my = filter_valid(&b, h, w, &k);
        let mxx = filter_valid(&prod(&a, &a), h, w, &k);
        let myy = filter_valid(&prod(&b, &b), h, w, &k);
        let mxy = filter_valid(&prod(&a, &b), h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(T::lit(total / count as f64))
}

/// Agreement of one synthetic image with its real counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageQuality<T> {
    pub mse: T,
    pub mae: T,
    pub psnr_db: T,
    pub ssim: T,
}

impl<T: Scalar> ImageQuality<T> {
    /// Both images must already be on the 0..255 range.
    pub fn measure(real: &Image2<T>, synthetic: &Image2<T>) -> Result<Self> {
        let m = mse(real, synthetic)?;
        Ok(ImageQuality {
            mse: m,
            mae: mae(real, synthetic)?,
            psnr_db: psnr_from_mse(m, T::lit(PIXEL_RANGE)),
            ssim: ssim(real, synthetic)?,
        })
    }
}
