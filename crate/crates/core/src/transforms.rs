//! The non-differentiable sweep transforms applied to byte-domain images:
//! translation, rotation, scaling, zoom, brightness, contrast, grayscale,
//! Gaussian blur, and Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Scalar};

/// Rec. 601 luminance weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    TranslateX,
    TranslateY,
    Rotate,
    ScaleX,
    ScaleY,
    Zoom,
    Brightness,
    Contrast,
    Grayscale,
    GaussianBlur,
    GaussianNoise,
}

pub const ALL_KINDS: [TransformKind; 11] = [
    TransformKind::TranslateX,
    TransformKind::TranslateY,
    TransformKind::Rotate,
    TransformKind::ScaleX,
    TransformKind::ScaleY,
    TransformKind::Zoom,
    TransformKind::Brightness,
    TransformKind::Contrast,
    TransformKind::Grayscale,
    TransformKind::GaussianBlur,
    TransformKind::GaussianNoise,
];

impl TransformKind {
    /// Magnitude at which the transform is the identity map.
    pub fn identity_magnitude(self) -> f64 {
        match self {
            TransformKind::ScaleX
            | TransformKind::ScaleY
            | TransformKind::Zoom
            | TransformKind::Contrast => 1.0,
            _ => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::TranslateX => "translate-x",
            TransformKind::TranslateY => "translate-y",
            TransformKind::Rotate => "rotate",
            TransformKind::ScaleX => "scale-x",
            TransformKind::ScaleY => "scale-y",
            TransformKind::Zoom => "zoom",
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Grayscale => "grayscale",
            TransformKind::GaussianBlur => "blur",
            TransformKind::GaussianNoise => "noise",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Usage(format!("unknown transform kind '{}'", name)))
    }

    /// Applies this transform at magnitude `v`. `seed` is consumed only by
    /// the noise transform.
    pub fn apply<T: Scalar>(self, img: &Image<T>, v: f64, seed: u64) -> Result<Image<T>> {
        match self {
            TransformKind::TranslateX
            | TransformKind::TranslateY
            | TransformKind::Rotate
            | TransformKind::ScaleX
            | TransformKind::ScaleY
            | TransformKind::Zoom => Ok(apply_spatial(self, img, v)),
            TransformKind::Brightness | TransformKind::Contrast | TransformKind::Grayscale => {
                Ok(apply_color(self, img, v))
            }
            TransformKind::GaussianBlur => apply_blur(img, v),
            TransformKind::GaussianNoise => apply_noise(img, v, seed),
        }
    }
}

/// Bilinear interpolation of one channel at real coordinates; reads outside
/// the image domain are 0 (black fill).
pub fn bilinear_sample<T: Scalar>(img: &Image<T>, x: T, y: T, channel: usize) -> T {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (
        x0.to_f64().map(|v| v as isize).unwrap_or(isize::MIN),
        y0.to_f64().map(|v| v as isize).unwrap_or(isize::MIN),
    );
    let at = |xx: isize, yy: isize| -> T {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            T::zero()
        } else {
            img.get(xx as usize, yy as usize, channel)
        }
    };
    let one = T::one();
    (one - fx) * (one - fy) * at(xi, yi)
        + fx * (one - fy) * at(xi + 1, yi)
        + (one - fx) * fy * at(xi, yi + 1)
        + fx * fy * at(xi + 1, yi + 1)
}

/// Degree-domain sine/cosine, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Inverse-mapped coordinate warp with bilinear sampling; result is clamped
/// into [0,255].
pub fn apply_spatial<T: Scalar>(kind: TransformKind, img: &Image<T>, v: f64) -> Image<T> {
    if kind == TransformKind::Zoom {
        // defined as the scale composition
        let sx = apply_spatial(TransformKind::ScaleX, img, v);
        return apply_spatial(TransformKind::ScaleY, &sx, v);
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut out = Image::black(img.width(), img.height());
    let map = |x: f64, y: f64| -> (f64, f64) {
        match kind {
            TransformKind::TranslateX => (x - v * w, y),
            TransformKind::TranslateY => (x, y - v * h),
            TransformKind::Rotate => {
                // source coords rotated by −v degrees about the pixel-grid center
                let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
                let (s, c) = sin_cos_deg(-v);
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            }
            TransformKind::ScaleX => (v * x - (v - 1.0) * w / 2.0, y),
            TransformKind::ScaleY => (x, v * y - (v - 1.0) * h / 2.0),
            _ => unreachable!("non-spatial kind"),
        }
    };
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (sx, sy) = map(x as f64, y as f64);
            for c in 0..3 {
                out.set(x, y, c, bilinear_sample(img, lit::<T>(sx), lit::<T>(sy), c));
            }
        }
    }
    out.clamp_bytes();
    out
}

/// Brightness, contrast, or grayscale mix; result is clamped into [0,255].
pub fn apply_color<T: Scalar>(kind: TransformKind, img: &Image<T>, v: f64) -> Image<T> {
    let mut out = img.clone();
    match kind {
        TransformKind::Brightness => {
            let bias = lit::<T>(255.0 * v);
            if v != 0.0 {
                for p in out.pixels_mut() {
                    *p = *p + bias;
                }
            }
        }
        TransformKind::Contrast => {
            let factor = lit::<T>(v);
            if v != 1.0 {
                for p in out.pixels_mut() {
                    *p = *p * factor;
                }
            }
        }
        TransformKind::Grayscale => {
            // (1−v)·I + v·I_gray; the v-weighted mix is the identity at v=0
            if v != 0.0 {
                let vm = lit::<T>(v);
                let one_m = lit::<T>(1.0 - v);
                let luma: [T; 3] = [lit(LUMA[0]), lit(LUMA[1]), lit(LUMA[2])];
                for px in out.pixels_mut().chunks_exact_mut(3) {
                    let gray = luma[0] * px[0] + luma[1] * px[1] + luma[2] * px[2];
                    for p in px {
                        *p = one_m * *p + vm * gray;
                    }
                }
            }
        }
        _ => unreachable!("non-color kind"),
    }
    if !(kind == TransformKind::Brightness && v == 0.0
        || kind == TransformKind::Contrast && v == 1.0
        || kind == TransformKind::Grayscale && v == 0.0)
    {
        out.clamp_bytes();
    }
    out
}

/// Normalized Gaussian kernel of side 2·ceil(3σ)+1, returned as
/// (radius, row-major entries).
pub fn gaussian_kernel<T: Scalar>(sigma: f64) -> Result<(usize, Vec<T>)> {
    if !(sigma > 0.0) {
        return Err(Error::Domain {
            op: "gaussian_kernel",
            detail: format!("sigma must be positive, got {}", sigma),
        });
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let mut kernel = vec![0.0f64; side * side];
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut total = 0.0;
    for dy in 0..side {
        for dx in 0..side {
            let (rx, ry) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
            let v = (-(rx * rx + ry * ry) * inv).exp();
            kernel[dy * side + dx] = v;
            total += v;
        }
    }
    Ok((radius, kernel.into_iter().map(|v| lit::<T>(v / total)).collect()))
}

/// Per-channel 2-D convolution with the Gaussian kernel; clamp-to-edge
/// padding; σ = 0 is the identity.
pub fn apply_blur<T: Scalar>(img: &Image<T>, sigma: f64) -> Result<Image<T>> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (radius, kernel) = gaussian_kernel::<T>(sigma)?;
    let side = 2 * radius + 1;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Image::black(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = T::zero();
                for ky in 0..side {
                    let sy = (y + ky as isize - radius as isize).clamp(0, h - 1) as usize;
                    for kx in 0..side {
                        let sx = (x + kx as isize - radius as isize).clamp(0, w - 1) as usize;
                        acc = acc + kernel[ky * side + kx] * img.get(sx, sy, c);
                    }
                }
                out.set(x as usize, y as usize, c, acc);
            }
        }
    }
    out.clamp_bytes();
    Ok(out)
}

/// Adds 255·z per sample, z ~ Normal(0, σ) from the seeded generator;
/// clamped into [0,255]. σ = 0 returns the input bit-exactly.
pub fn apply_noise<T: Scalar>(img: &Image<T>, sigma: f64, seed: u64) -> Result<Image<T>> {
    if sigma < 0.0 {
        return Err(Error::Domain {
            op: "apply_noise",
            detail: format!("sigma must be nonnegative, got {}", sigma),
        });
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0f64, sigma).map_err(|e| Error::Domain {
        op: "apply_noise",
        detail: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for p in out.pixels_mut() {
        *p = *p + lit::<T>(255.0 * normal.sample(&mut rng));
    }
    out.clamp_bytes();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> Image<f64> {
        let mut img = Image::black(w, h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(x, y, c, ((x * 37 + y * 91 + c * 53) % 256) as f64);
                }
            }
        }
        img
    }

    #[test]
    fn identity_magnitudes_reproduce_input() {
        let img = checker(6, 5);
        for kind in ALL_KINDS {
            let v = kind.identity_magnitude();
            let out = kind.apply(&img, v, 7).unwrap();
            for (a, b) in img.pixels().iter().zip(out.pixels()) {
                assert!((a - b).abs() <= 1e-6, "{:?} not identity at v={}", kind, v);
            }
        }
    }

    #[test]
    fn color_identities_are_bit_exact() {
        let img = checker(4, 4);
        let cases: [(TransformKind, f64); 5] = [
            (TransformKind::Brightness, 0.0),
            (TransformKind::Contrast, 1.0),
            (TransformKind::Grayscale, 0.0),
            (TransformKind::GaussianNoise, 0.0),
            (TransformKind::GaussianBlur, 0.0),
        ];
        for (kind, v) in cases {
            let out = kind.apply(&img, v, 3).unwrap();
            assert_eq!(img.pixels(), out.pixels(), "{:?}", kind);
        }
    }

    #[test]
    fn translate_quarter_moves_white_pixel() {
        let mut img = Image::black(4, 4);
        for c in 0..3 {
            img.set(1, 1, c, 255.0);
        }
        let out = apply_spatial(TransformKind::TranslateX, &img, 0.25);
        assert_eq!(out.get(2, 1, 0), 255.0);
        assert_eq!(out.get(1, 1, 0), 0.0);
    }

    #[test]
    fn brightness_arithmetic() {
        let img = Image::new(1, 1, vec![100.0; 3]).unwrap();
        let out = apply_color(TransformKind::Brightness, &img, 0.2);
        assert_eq!(out.get(0, 0, 0), 151.0);
    }

    #[test]
    fn grayscale_full_mix_of_red() {
        let img = Image::new(1, 1, vec![255.0f64, 0.0, 0.0]).unwrap();
        let out = apply_color(TransformKind::Grayscale, &img, 1.0);
        for c in 0..3 {
            assert!((out.get(0, 0, c) - 76.245).abs() < 1e-9);
        }
    }

    #[test]
    fn zoom_is_scale_composition_bit_exact() {
        let img = checker(7, 6);
        for v in [0.5, 0.8, 1.3, 2.0] {
            let zoom = apply_spatial(TransformKind::Zoom, &img, v);
            let comp = apply_spatial(
                TransformKind::ScaleY,
                &apply_spatial(TransformKind::ScaleX, &img, v),
                v,
            );
            assert_eq!(zoom.pixels(), comp.pixels(), "v={}", v);
        }
    }

    #[test]
    fn rotate_360_close_to_input() {
        let img = checker(9, 9);
        let out = apply_spatial(TransformKind::Rotate, &img, 360.0);
        let mae: f64 = img
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / img.pixels().len() as f64;
        assert!(mae <= 1.0, "mae {}", mae);
    }

    #[test]
    fn gaussian_kernel_shape_and_center() {
        let (radius, k) = gaussian_kernel::<f64>(1.0).unwrap();
        assert_eq!(radius, 3);
        assert_eq!(k.len(), 49);
        let total: f64 = k.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // center of the normalized 7x7 grid: 1 / (sum_x exp(-x^2/2))^2
        let s1d: f64 = (-3..=3).map(|x| (-(x * x) as f64 / 2.0).exp()).sum();
        assert!((k[3 * 7 + 3] - 1.0 / (s1d * s1d)).abs() < 1e-12, "center {}", k[24]);
    }

    #[test]
    fn gaussian_kernel_is_symmetric() {
        let (radius, k) = gaussian_kernel::<f64>(1.7).unwrap();
        let side = 2 * radius + 1;
        for y in 0..side {
            for x in 0..side {
                assert_eq!(k[y * side + x], k[y * side + (side - 1 - x)]);
                assert_eq!(k[y * side + x], k[(side - 1 - y) * side + x]);
            }
        }
    }

    #[test]
    fn gaussian_kernel_rejects_nonpositive_sigma() {
        assert!(gaussian_kernel::<f64>(0.0).is_err());
        assert!(gaussian_kernel::<f64>(-1.0).is_err());
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::new(6, 6, vec![123.0; 108]).unwrap();
        let out = apply_blur(&img, 1.5).unwrap();
        for p in out.pixels() {
            assert!((*p - 123.0f64).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = checker(8, 8);
        let a = apply_noise(&img, 0.1, 99).unwrap();
        let b = apply_noise(&img, 0.1, 99).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let c = apply_noise(&img, 0.1, 100).unwrap();
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn noise_stddev_matches_sigma() {
        let img = Image::new(64, 64, vec![127.0; 64 * 64 * 3]).unwrap();
        let out = apply_noise(&img, 0.1, 5).unwrap();
        // pre-clamp noise has stddev 25.5; at mid-gray clamping is negligible
        let n = out.pixels().len() as f64;
        let mean: f64 = out.pixels().iter().map(|p| p - 127.0).sum::<f64>() / n;
        let var: f64 = out
            .pixels()
            .iter()
            .map(|p| (p - 127.0 - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        assert!((sd - 25.5).abs() / 25.5 < 0.05, "sd {}", sd);
    }

    #[test]
    fn bilinear_examples() {
        let mut img = Image::black(2, 2);
        for (i, v) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            img.set(i % 2, i / 2, 0, *v);
        }
        assert_eq!(bilinear_sample(&img, 1.0f64, 1.0, 0), 3.0);
        assert!((bilinear_sample(&img, 0.5f64, 0.5, 0) - 1.5).abs() < 1e-12);
        assert_eq!(bilinear_sample(&img, -5.0f64, -5.0, 0), 0.0);
    }

    #[test]
    fn outputs_stay_in_byte_domain() {
        let img = checker(5, 5);
        for kind in ALL_KINDS {
            for v in [-1.5f64, -0.3, 0.0, 0.4, 1.0, 2.5] {
                let v = if matches!(kind, TransformKind::GaussianBlur | TransformKind::GaussianNoise)
                {
                    v.abs()
                } else {
                    v
                };
                let out = kind.apply(&img, v, 1).unwrap();
                for p in out.pixels() {
                    assert!(p.is_finite() && (0.0..=255.0).contains(p), "{:?} v={}", kind, v);
                }
            }
        }
    }
}
