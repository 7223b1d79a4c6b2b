use crate::error::{Error, Result};

/// Channel-major 2D image: `data[(c * height + row) * width + col]`.
///
/// Columns run along the volume `x` axis (left/right), rows along `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Image2<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::InvalidVolume(format!(
                "image {channels}x{height}x{width} does not fit {} values",
                data.len()
            )));
        }
        Ok(Image2 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Image2 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Stacks single-channel planes (each `height * width`, row-major).
    pub fn stack(height: usize, width: usize, planes: &[&[T]]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::ShapeMismatch {
                    left: vec![height, width],
                    right: vec![p.len()],
                });
            }
            data.extend_from_slice(p);
        }
        Self::new(planes.len(), height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> T {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Reverses column order in every channel.
    pub fn flipped_lr(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Image2 {
            data,
            ..*self
        }
    }

    /// Centre pad (with `fill`) or crop to a square `size x size` canvas.
    pub fn pad_crop(&self, size: usize, fill: T) -> Self {
        let mut out = Image2::filled(self.channels, size, size, fill);
        let (dr, sr, nr) = centre_offsets(self.height, size);
        let (dc, sc, nc) = centre_offsets(self.width, size);
        for c in 0..self.channels {
            for r in 0..nr {
                let src = (c * self.height + sr + r) * self.width + sc;
                let dst = (c * size + dr + r) * size + dc;
                out.data[dst..dst + nc].copy_from_slice(&self.data[src..src + nc]);
            }
        }
        out
    }

    /// Inverse of [`Image2::pad_crop`]: restores a `height x width` canvas.
    pub fn unpad_crop(&self, height: usize, width: usize, fill: T) -> Self {
        let mut out = Image2::filled(self.channels, height, width, fill);
        let (sr, dr, nr) = centre_offsets(height, self.height);
        let (sc, dc, nc) = centre_offsets(width, self.width);
        for c in 0..self.channels {
            for r in 0..nr {
                let src = (c * self.height + sr + r) * self.width + sc;
                let dst = (c * height + dr + r) * width + dc;
                out.data[dst..dst + nc].copy_from_slice(&self.data[src..src + nc]);
            }
        }
        out
    }
}

/// Returns (destination offset, source offset, copied length) for centring a
/// line of `from` samples on a line of `to` samples.
fn centre_offsets(from: usize, to: usize) -> (usize, usize, usize) {
    if from <= to {
        ((to - from) / 2, 0, from)
    } else {
        (0, (from - to) / 2, to)
    }
}

/// Mirrors an image and its label plane across the vertical midline.
pub fn flip_lr<T: Copy, L: Copy>(image: &Image2<T>, labels: &Image2<L>) -> Result<(Image2<T>, Image2<L>)> {
    if image.height != labels.height || image.width != labels.width {
        return Err(Error::ShapeMismatch {
            left: vec![image.height, image.width],
            right: vec![labels.height, labels.width],
        });
    }
    Ok((image.flipped_lr(), labels.flipped_lr()))
}
