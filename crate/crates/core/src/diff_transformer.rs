//! Differentiable affine warps used inside the invariant transformer:
//! a spatial warp over normalized coordinates (sampled bilinearly) and an
//! affine color map in homogeneous coordinates. Both admit gradients w.r.t.
//! the image and the matrix parameters.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, Tensor};

/// Row-major identity entries of the 2×3 spatial map.
pub const SPATIAL_IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
/// Row-major identity entries of the 3×4 color map (fourth column is the
/// brightness bias).
pub const COLOR_IDENTITY: [f64; 12] =
    [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffineKind {
    Spatial,
    Color,
}

impl AffineKind {
    pub fn rows(self) -> usize {
        match self {
            AffineKind::Spatial => 2,
            AffineKind::Color => 3,
        }
    }

    pub fn cols(self) -> usize {
        match self {
            AffineKind::Spatial => 3,
            AffineKind::Color => 4,
        }
    }
}

/// Rectangular affine matrix: 2×3 spatial or 3×4 color.
#[derive(Clone, Debug)]
pub struct AffineMap<T> {
    kind: AffineKind,
    matrix: Tensor<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn new(kind: AffineKind, matrix: Tensor<T>) -> Result<Self> {
        if matrix.shape() != [kind.rows(), kind.cols()] {
            return Err(Error::Shape {
                op: "affine_map",
                detail: format!("{:?} map must be {}x{}, got {:?}", kind, kind.rows(), kind.cols(), matrix.shape()),
            });
        }
        Ok(AffineMap { kind, matrix })
    }

    pub fn identity(kind: AffineKind) -> Self {
        let data: Vec<T> = match kind {
            AffineKind::Spatial => SPATIAL_IDENTITY.iter().map(|v| lit(*v)).collect(),
            AffineKind::Color => COLOR_IDENTITY.iter().map(|v| lit(*v)).collect(),
        };
        AffineMap {
            kind,
            matrix: Tensor::from_vec(vec![kind.rows(), kind.cols()], data).unwrap(),
        }
    }

    pub fn kind(&self) -> AffineKind {
        self.kind
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    /// Square extension: original rows plus the homogeneous unit row
    /// [0,…,0,1].
    pub fn extend_square(&self) -> Tensor<T> {
        let n = self.kind.cols();
        let mut data = self.matrix.data().to_vec();
        data.extend(homogeneous_row::<T>(n));
        Tensor::from_vec(vec![n, n], data).unwrap()
    }
}

/// The [0,…,0,1] row appended by the square extension.
pub fn homogeneous_row<T: Scalar>(cols: usize) -> Vec<T> {
    let mut row = vec![T::zero(); cols];
    row[cols - 1] = T::one();
    row
}

/// Differentiable affine spatial warp. Source coordinates are
/// `theta · (x_n, y_n, 1)ᵀ` in normalized [−1,1] coordinates, sampled with
/// bilinear interpolation and zero fill outside the image.
pub fn warp_spatial<T: Scalar>(
    tape: &Tape<T>,
    img: &Tensor<T>,
    theta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::Shape {
            op: "warp_spatial",
            detail: format!("image must be C×H×W, got {:?}", img.shape()),
        });
    };
    if theta.shape() != [2, 3] {
        return Err(Error::Shape {
            op: "warp_spatial",
            detail: format!("theta must be 2x3, got {:?}", theta.shape()),
        });
    }
    if w < 2 || h < 2 {
        return Err(Error::Shape {
            op: "warp_spatial",
            detail: "image must be at least 2x2".into(),
        });
    }
    let th: Vec<f64> = theta.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let src = |x: usize, y: usize| -> (f64, f64) {
        let xn = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
        let yn = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
        let xs_n = th[0] * xn + th[1] * yn + th[2];
        let ys_n = th[3] * xn + th[4] * yn + th[5];
        (
            (xs_n + 1.0) / 2.0 * (w - 1) as f64,
            (ys_n + 1.0) / 2.0 * (h - 1) as f64,
        )
    };
    let plane = h * w;
    let fetch = move |data: &[T], ch: usize, px: isize, py: isize| -> T {
        if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
            T::zero()
        } else {
            data[ch * plane + py as usize * w + px as usize]
        }
    };
    let mut out = vec![T::zero(); c * plane];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (lit::<T>(sx - x0), lit::<T>(sy - y0));
            let (xi, yi) = (x0 as isize, y0 as isize);
            let one = T::one();
            for ch in 0..c {
                out[ch * plane + y * w + x] = (one - fx) * (one - fy) * fetch(img.data(), ch, xi, yi)
                    + fx * (one - fy) * fetch(img.data(), ch, xi + 1, yi)
                    + (one - fx) * fy * fetch(img.data(), ch, xi, yi + 1)
                    + fx * fy * fetch(img.data(), ch, xi + 1, yi + 1);
            }
        }
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "warp_spatial" });
    }
    let img_data = img.data().to_vec();
    let shape = img.shape().to_vec();
    Ok(tape.custom(&[img, theta], shape, out, move |g| {
        let mut dimg = vec![T::zero(); c * plane];
        let mut dtheta = vec![0.0f64; 6];
        let half_w = (w - 1) as f64 / 2.0;
        let half_h = (h - 1) as f64 / 2.0;
        for y in 0..h {
            for x in 0..w {
                let xn = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
                let yn = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
                let xs_n = th[0] * xn + th[1] * yn + th[2];
                let ys_n = th[3] * xn + th[4] * yn + th[5];
                let sx = (xs_n + 1.0) / 2.0 * (w - 1) as f64;
                let sy = (ys_n + 1.0) / 2.0 * (h - 1) as f64;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (xi, yi) = (x0 as isize, y0 as isize);
                let mut dsx = 0.0f64;
                let mut dsy = 0.0f64;
                for ch in 0..c {
                    let gv = g[ch * plane + y * w + x].to_f64().unwrap();
                    let v00 = fetch(&img_data, ch, xi, yi).to_f64().unwrap();
                    let v10 = fetch(&img_data, ch, xi + 1, yi).to_f64().unwrap();
                    let v01 = fetch(&img_data, ch, xi, yi + 1).to_f64().unwrap();
                    let v11 = fetch(&img_data, ch, xi + 1, yi + 1).to_f64().unwrap();
                    dsx += gv * ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy);
                    dsy += gv * ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx);
                    // scatter into the four corners
                    let mut add = |px: isize, py: isize, wgt: f64| {
                        if px >= 0 && py >= 0 && px < w as isize && py < h as isize {
                            let idx = ch * plane + py as usize * w + px as usize;
                            dimg[idx] = dimg[idx] + lit::<T>(gv * wgt);
                        }
                    };
                    add(xi, yi, (1.0 - fx) * (1.0 - fy));
                    add(xi + 1, yi, fx * (1.0 - fy));
                    add(xi, yi + 1, (1.0 - fx) * fy);
                    add(xi + 1, yi + 1, fx * fy);
                }
                // chain through the normalized-to-pixel conversion
                let dxs_n = dsx * half_w;
                let dys_n = dsy * half_h;
                dtheta[0] += dxs_n * xn;
                dtheta[1] += dxs_n * yn;
                dtheta[2] += dxs_n;
                dtheta[3] += dys_n * xn;
                dtheta[4] += dys_n * yn;
                dtheta[5] += dys_n;
            }
        }
        vec![dimg, dtheta.into_iter().map(lit::<T>).collect()]
    }))
}

/// Differentiable affine color map: per pixel
/// `(r',g',b')ᵀ = φ·(r,g,b)ᵀ + φ_B` with phi a 3×4 matrix whose fourth
/// column is the bias. No clamping: values stay differentiable.
pub fn warp_color<T: Scalar>(
    tape: &Tape<T>,
    img: &Tensor<T>,
    phi: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::Shape {
            op: "warp_color",
            detail: format!("image must be C×H×W, got {:?}", img.shape()),
        });
    };
    if c != 3 || phi.shape() != [3, 4] {
        return Err(Error::Shape {
            op: "warp_color",
            detail: format!("need 3×H×W image and 3x4 phi, got {:?} and {:?}", img.shape(), phi.shape()),
        });
    }
    let plane = h * w;
    let p = phi.data();
    let mut out = vec![T::zero(); 3 * plane];
    for co in 0..3 {
        let row = &p[co * 4..co * 4 + 4];
        for i in 0..plane {
            out[co * plane + i] = row[0] * img.data()[i]
                + row[1] * img.data()[plane + i]
                + row[2] * img.data()[2 * plane + i]
                + row[3];
        }
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "warp_color" });
    }
    let img_data = img.data().to_vec();
    let phi_data = p.to_vec();
    let shape = img.shape().to_vec();
    Ok(tape.custom(&[img, phi], shape, out, move |g| {
        let mut dimg = vec![T::zero(); 3 * plane];
        let mut dphi = vec![T::zero(); 12];
        for co in 0..3 {
            let grow = &g[co * plane..(co + 1) * plane];
            for ci in 0..3 {
                let pv = phi_data[co * 4 + ci];
                let mut acc = T::zero();
                for (i, gv) in grow.iter().enumerate() {
                    dimg[ci * plane + i] = dimg[ci * plane + i] + *gv * pv;
                    acc = acc + *gv * img_data[ci * plane + i];
                }
                dphi[co * 4 + ci] = acc;
            }
            dphi[co * 4 + 3] = grow.iter().copied().fold(T::zero(), |a, v| a + v);
        }
        vec![dimg, dphi]
    }))
}
