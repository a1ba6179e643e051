//! Color raster in the [0,255] value domain.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// H×W×3 image with float channel values in [0,255], stored row-major
/// as (y, x, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(Error::Shape {
                op: "image",
                detail: format!("{}x{} with {} samples", width, height, pixels.len()),
            });
        }
        Ok(Image { width, height, pixels })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Image { width, height, pixels: vec![T::zero(); width * height * 3] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }

    /// Clamps every sample into [0,255] in place.
    pub fn clamp_bytes(&mut self) {
        let hi = lit::<T>(255.0);
        for v in &mut self.pixels {
            *v = v.max(T::zero()).min(hi);
        }
    }

    /// Channel-first tensor with values scaled to [0,1] (the model boundary).
    pub fn to_normalized_tensor(&self) -> Tensor<T> {
        let scale = lit::<T>(1.0 / 255.0);
        let (w, h) = (self.width, self.height);
        let mut data = vec![T::zero(); 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(c * h + y) * w + x] = self.get(x, y, c) * scale;
                }
            }
        }
        Tensor::from_vec(vec![3, h, w], data).expect("image samples are finite")
    }

    /// Inverse of [`Image::to_normalized_tensor`]; does not clamp.
    pub fn from_normalized_tensor(t: &Tensor<T>) -> Result<Self> {
        let [c, h, w] = t.shape()[..] else {
            return Err(Error::Shape {
                op: "image",
                detail: format!("expected 3×H×W tensor, got {:?}", t.shape()),
            });
        };
        if c != 3 {
            return Err(Error::Shape {
                op: "image",
                detail: format!("expected 3 channels, got {}", c),
            });
        }
        let scale = lit::<T>(255.0);
        let mut img = Image::black(w, h);
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    img.set(x, y, ch, t.data()[(ch * h + y) * w + x] * scale);
                }
            }
        }
        Ok(img)
    }
}
