//! Independent brute-force oracles: central finite differences, naive
//! coordinate warps, naive direct convolution. These deliberately share no
//! implementation with the fast paths they check.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{lit, Scalar};

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub failing_coordinate: Option<usize>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error with an absolute floor, |a−f| / max(|a|,|f|,1e−8).
pub fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8)
}

/// Compares an analytic gradient against central finite differences.
pub fn grad_check<T: Scalar>(
    op: &str,
    mut f: impl FnMut(&[T]) -> Result<T>,
    x: &[T],
    analytic: &[T],
    h: f64,
) -> Result<GradCheckReport> {
    let fd = finite_diff_grad(&mut f, x, h)?;
    let mut max_rel = 0.0;
    let mut failing = None;
    for (i, (a, g)) in analytic.iter().zip(&fd).enumerate() {
        let e = rel_error(a.to_f64().unwrap(), g.to_f64().unwrap());
        if e > max_rel {
            max_rel = e;
            failing = Some(i);
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_error: max_rel,
        failing_coordinate: if max_rel > 0.0 { failing } else { None },
    })
}

/// Central differences per coordinate: (f(x+he_i) − f(x−he_i)) / 2h.
pub fn finite_diff_grad<T: Scalar>(
    f: &mut impl FnMut(&[T]) -> Result<T>,
    x: &[T],
    h: f64,
) -> Result<Vec<T>> {
    let hh = lit::<T>(h);
    let two_h = lit::<T>(2.0 * h);
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + hh;
        let up = f(&probe)?;
        probe[i] = x[i] - hh;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain {
                op: "finite_diff_grad",
                detail: format!("non-finite evaluation at coordinate {}", i),
            });
        }
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}

/// Direct double-loop bilinear lookup of explicit per-pixel source
/// coordinates, zero fill outside the domain.
pub fn naive_warp<T: Scalar>(img: &Image<T>, coordinate_map: &[(f64, f64)]) -> Result<Image<T>> {
    if coordinate_map.len() != img.width() * img.height() {
        return Err(Error::Shape {
            op: "naive_warp",
            detail: format!(
                "{} coordinates for {} pixels",
                coordinate_map.len(),
                img.width() * img.height()
            ),
        });
    }
    let (w, h) = (img.width(), img.height());
    let mut out = Image::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = coordinate_map[y * w + x];
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            for c in 0..3 {
                let fetch = |px: f64, py: f64| -> f64 {
                    if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                        0.0
                    } else {
                        img.get(px as usize, py as usize, c).to_f64().unwrap()
                    }
                };
                let v = (1.0 - fx) * (1.0 - fy) * fetch(x0, y0)
                    + fx * (1.0 - fy) * fetch(x0 + 1.0, y0)
                    + (1.0 - fx) * fy * fetch(x0, y0 + 1.0)
                    + fx * fy * fetch(x0 + 1.0, y0 + 1.0);
                out.set(x, y, c, lit::<T>(v));
            }
        }
    }
    Ok(out)
}

/// Direct O(HWk²) per-channel correlation with clamp-to-edge padding.
pub fn naive_conv<T: Scalar>(img: &Image<T>, kernel: &[Vec<T>]) -> Result<Image<T>> {
    let side = kernel.len();
    if side % 2 == 0 || side == 0 || kernel.iter().any(|row| row.len() != side) {
        return Err(Error::Shape {
            op: "naive_conv",
            detail: format!("kernel must be square with odd side, got {} rows", side),
        });
    }
    let radius = side / 2;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Image::black(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = T::zero();
                for (ky, row) in kernel.iter().enumerate() {
                    let sy = (y + ky as isize - radius as isize).clamp(0, h - 1) as usize;
                    for (kx, kv) in row.iter().enumerate() {
                        let sx = (x + kx as isize - radius as isize).clamp(0, w - 1) as usize;
                        acc = acc + *kv * img.get(sx, sy, c);
                    }
                }
                out.set(x as usize, y as usize, c, acc);
            }
        }
    }
    Ok(out)
}


// ── Finite-difference gradient suite ───────────────────────────────

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff_transformer::{warp_color, warp_spatial, AffineKind};
use crate::itn::{loss_hat, loss_k, sample_unit_vectors, FcBlock};
use crate::tensor::{Tape, Tensor};

/// Tolerance of the suite, matched to h = 1e−3 central differences.
pub const SUITE_TOL: f64 = 1e-4;
const H: f64 = 1e-3;

/// Reduces a tensor to a scalar with fixed pseudo-random weights so every
/// output coordinate contributes to the checked gradient.
fn scalarize(tape: &Tape<f64>, t: &Tensor<f64>, w: &[f64]) -> Result<Tensor<f64>> {
    let wt = Tensor::from_vec(vec![t.len()], w.to_vec())?;
    let flat = tape.reshape(t, vec![t.len()])?;
    tape.sum(&tape.mul(&flat, &wt)?)
}

fn mix_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.3..1.7)).collect()
}

/// Checks the gradient of `scalarize(builder(x))` w.r.t. `x`.
fn check_op(
    op: &str,
    shape: Vec<usize>,
    x: &[f64],
    builder: impl Fn(&Tape<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<GradCheckReport> {
    let probe_out = {
        let tape = Tape::new();
        let xt = tape.var(&Tensor::from_vec(shape.clone(), x.to_vec())?);
        builder(&tape, &xt)?
    };
    let w = mix_weights(probe_out.len(), 0x5eed);
    let analytic = {
        let tape = Tape::new();
        let xt = tape.var(&Tensor::from_vec(shape.clone(), x.to_vec())?);
        let out = builder(&tape, &xt)?;
        let s = scalarize(&tape, &out, &w)?;
        let grads = tape.backward(&s)?;
        grads
            .wrt(&xt)
            .ok_or(Error::Domain { op: "gradcheck", detail: "no gradient reached the input".into() })?
            .to_vec()
    };
    grad_check(
        op,
        |xs: &[f64]| {
            let tape = Tape::new();
            let xt = tape.var(&Tensor::from_vec(shape.clone(), xs.to_vec())?);
            let out = builder(&tape, &xt)?;
            Ok(scalarize(&tape, &out, &w)?.item())
        },
        x,
        &analytic,
        H,
    )
}

fn smooth_values(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Shared tiny ITN fixture: 3×4×4 image, hidden-3 FC blocks nudged off the
/// identity, 2-class linear classifier.
struct TinyItn {
    image: Tensor<f64>,
    dense_w: Tensor<f64>,
    dense_b: Tensor<f64>,
    shapes: Vec<Vec<usize>>,
    base: Vec<f64>,
}

impl TinyItn {
    fn new() -> Self {
        let image = Tensor::from_vec(vec![3, 4, 4], smooth_values(48, 21, 0.2, 0.8)).unwrap();
        let dense_w = Tensor::from_vec(vec![2, 48], smooth_values(96, 22, -0.4, 0.4)).unwrap();
        let dense_b = Tensor::from_vec(vec![2], vec![0.05, -0.02]).unwrap();
        // color then spatial block: w1, b1, w2, b2 each
        let shapes = vec![
            vec![3, 2], vec![3], vec![12, 3], vec![12],
            vec![3, 2], vec![3], vec![6, 3], vec![6],
        ];
        let mut base = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (i, sh) in shapes.iter().enumerate() {
            let n: usize = sh.iter().product();
            match i {
                // color block: free random values, its map has no kinks
                0 => base.extend((0..n).map(|_| rng.gen_range(-0.8..0.8))),
                1 => base.extend(std::iter::repeat(0.1).take(n)),
                2 => base.extend((0..n).map(|_| rng.gen_range(-0.04..0.04))),
                3 => base.extend((0..n).map(|_| rng.gen_range(0.03..0.09))),
                // spatial block: fixed values that pin the emitted warp to
                // source coordinates ≥ 0.04 away from the bilinear grid
                // lines, so h = 1e−3 probes never cross a kink
                4 => base.extend([0.4, -0.3, -0.2, 0.5, 0.3, 0.2]),
                5 => base.extend([0.1, 0.1, 0.1]),
                6 => {
                    let mut w2 = vec![0.0; 18];
                    w2[2 * 3 + 1] = 0.04;
                    w2[5 * 3 + 1] = 0.03;
                    base.extend(w2);
                }
                _ => base.extend([-0.1915, -0.0239, -0.0093, -0.0195, -0.1851, -0.0193]),
            }
        }
        TinyItn { image, dense_w, dense_b, shapes, base }
    }

    fn blocks(&self, tape: &Tape<f64>, params: &[f64]) -> Result<(FcBlock<f64>, FcBlock<f64>)> {
        let mut tensors = Vec::new();
        let mut off = 0;
        for sh in &self.shapes {
            let n: usize = sh.iter().product();
            tensors.push(tape.var(&Tensor::from_vec(sh.clone(), params[off..off + n].to_vec())?));
            off += n;
        }
        let mut it = tensors.into_iter();
        let color = FcBlock {
            kind: AffineKind::Color,
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
        };
        let spatial = FcBlock {
            kind: AffineKind::Spatial,
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
        };
        Ok((color, spatial))
    }

    /// Full graph loss for one branch of the gated objective.
    fn loss(&self, tape: &Tape<f64>, params: &[f64], displacement: bool) -> Result<Tensor<f64>> {
        let (color, spatial) = self.blocks(tape, params)?;
        self.loss_from_blocks(tape, &color, &spatial, displacement)
    }

    fn check(&self, op: &str, displacement: bool) -> Result<GradCheckReport> {
        let analytic = {
            let tape = Tape::new();
            // gradient per parameter tensor, concatenated in block order
            let (color, spatial) = self.blocks(&tape, &self.base)?;
            let loss = self.loss_from_blocks(&tape, &color, &spatial, displacement)?;
            let grads = tape.backward(&loss)?;
            let mut g = Vec::with_capacity(self.base.len());
            for t in color.tensors().into_iter().chain(spatial.tensors()) {
                match grads.wrt(t) {
                    Some(slice) => g.extend_from_slice(slice),
                    None => g.extend(std::iter::repeat(0.0).take(t.len())),
                }
            }
            g
        };
        grad_check(
            op,
            |params: &[f64]| {
                let tape = Tape::new();
                Ok(self.loss(&tape, params, displacement)?.item())
            },
            &self.base,
            &analytic,
            H,
        )
    }

    fn loss_from_blocks(
        &self,
        tape: &Tape<f64>,
        color: &FcBlock<f64>,
        spatial: &FcBlock<f64>,
        displacement: bool,
    ) -> Result<Tensor<f64>> {
        let (a_color, _) = color.forward(tape, [0.7, 0.4])?;
        let (a_spatial, _) = spatial.forward(tape, [0.3, 0.9])?;
        if displacement {
            let s_color = sample_unit_vectors::<f64>(4, 8, 31)?;
            let s_spatial = sample_unit_vectors::<f64>(3, 8, 32)?;
            let row4: Vec<f64> = crate::diff_transformer::homogeneous_row(4);
            let row3: Vec<f64> = crate::diff_transformer::homogeneous_row(3);
            let c_hat = tape.append_row(&a_color, &row4)?;
            let s_hat = tape.append_row(&a_spatial, &row3)?;
            let lc = loss_k(tape, [0.7, 0.4], &loss_hat(tape, &c_hat, &s_color)?)?;
            let ls = loss_k(tape, [0.3, 0.9], &loss_hat(tape, &s_hat, &s_spatial)?)?;
            tape.add(&tape.scale(&lc, 10.0)?, &ls)
        } else {
            let x = warp_color(tape, &self.image, &a_color)?;
            let x = warp_spatial(tape, &x, &a_spatial)?;
            let flat = tape.reshape(&x, vec![48, 1])?;
            let scores = tape.matmul(&self.dense_w, &flat)?;
            let scores = tape.reshape(&scores, vec![2])?;
            let logits = tape.add(&scores, &self.dense_b)?;
            let probs = tape.softmax(&logits)?;
            tape.cross_entropy(&probs, 1)
        }
    }
}

/// Runs the finite-difference check of every differentiable operation.
pub fn gradcheck_suite() -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();

    // relu: keep inputs away from the kink at 0
    let x: Vec<f64> = smooth_values(8, 1, 0.2, 1.5)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v } else { -v })
        .collect();
    reports.push(check_op("relu", vec![8], &x, |t, xt| t.relu(xt))?);

    // matmul, both operands
    let a = smooth_values(6, 2, -1.0, 1.0);
    let b = smooth_values(8, 3, -1.0, 1.0);
    let b_fixed = Tensor::from_vec(vec![2, 4], b.clone()).unwrap();
    reports.push(check_op("matmul (lhs)", vec![3, 2], &a, move |t, xt| t.matmul(xt, &b_fixed))?);
    let a_fixed = Tensor::from_vec(vec![3, 2], a.clone()).unwrap();
    reports.push(check_op("matmul (rhs)", vec![2, 4], &b, move |t, xt| t.matmul(&a_fixed, xt))?);

    // conv2d, image and kernel
    let img = smooth_values(3 * 6 * 6, 4, -0.5, 0.5);
    let ker = smooth_values(2 * 3 * 3 * 3, 5, -0.5, 0.5);
    let ker_fixed = Tensor::from_vec(vec![2, 3, 3, 3], ker.clone()).unwrap();
    reports.push(check_op("conv2d (image)", vec![3, 6, 6], &img, move |t, xt| {
        t.conv2d(xt, &ker_fixed, 1, 1)
    })?);
    let img_fixed = Tensor::from_vec(vec![3, 6, 6], img.clone()).unwrap();
    reports.push(check_op("conv2d (kernel)", vec![2, 3, 3, 3], &ker, move |t, xt| {
        t.conv2d(&img_fixed, xt, 1, 1)
    })?);

    // maxpool2d: well-separated values so h never flips a maximum
    let mut pool_x = Vec::new();
    for i in 0..16 {
        pool_x.push((i as f64) * 0.37 - 2.0 + if i % 3 == 0 { 0.11 } else { 0.0 });
    }
    reports.push(check_op("maxpool2d", vec![1, 4, 4], &pool_x, |t, xt| t.maxpool2d(xt, 2))?);

    // softmax + cross-entropy composite
    let logits = smooth_values(5, 6, -1.5, 1.5);
    reports.push(check_op("softmax+cross_entropy", vec![5], &logits, |t, xt| {
        let p = t.softmax(xt)?;
        t.cross_entropy(&p, 2)
    })?);

    // spatial warp: mild contraction keeps samples interior and off the
    // bilinear grid lines
    let wimg = smooth_values(3 * 5 * 5, 7, 0.1, 0.9);
    let theta = vec![0.8144, 0.0563, 0.0147, 0.0005, 0.8073, -0.0401];
    let theta_fixed = Tensor::from_vec(vec![2, 3], theta.clone()).unwrap();
    reports.push(check_op("warp_spatial (image)", vec![3, 5, 5], &wimg, move |t, xt| {
        warp_spatial(t, xt, &theta_fixed)
    })?);
    let wimg_fixed = Tensor::from_vec(vec![3, 5, 5], wimg.clone()).unwrap();
    reports.push(check_op("warp_spatial (theta)", vec![2, 3], &theta, move |t, xt| {
        warp_spatial(t, &wimg_fixed, xt)
    })?);

    // color warp
    let cimg = smooth_values(3 * 4 * 4, 8, 0.1, 0.9);
    let phi = vec![
        1.1, 0.1, -0.05, 0.02,
        0.0, 0.9, 0.1, -0.03,
        0.05, -0.1, 1.05, 0.04,
    ];
    let phi_fixed = Tensor::from_vec(vec![3, 4], phi.clone()).unwrap();
    reports.push(check_op("warp_color (image)", vec![3, 4, 4], &cimg, move |t, xt| {
        warp_color(t, xt, &phi_fixed)
    })?);
    let cimg_fixed = Tensor::from_vec(vec![3, 4, 4], cimg.clone()).unwrap();
    reports.push(check_op("warp_color (phi)", vec![3, 4], &phi, move |t, xt| {
        warp_color(t, &cimg_fixed, xt)
    })?);

    // displacement losses
    for (name, d, seed) in [("loss_hat (3x3)", 3usize, 41u64), ("loss_hat (4x4)", 4, 42)] {
        let s = sample_unit_vectors::<f64>(d, 12, seed)?;
        let mut a = smooth_values(d * d, seed, -0.3, 0.3);
        for i in 0..d {
            a[i * d + i] += 1.0;
        }
        let s_clone = s.detached();
        reports.push(check_op(name, vec![d, d], &a, move |t, xt| loss_hat(t, xt, &s_clone))?);
        if d == 3 {
            let s_clone = s.detached();
            reports.push(check_op("loss_k", vec![d, d], &a, move |t, xt| {
                loss_k(t, [0.6, 0.3], &loss_hat(t, xt, &s_clone)?)
            })?);
        }
    }

    // full gated graph on the tiny fixture, both branches
    let tiny = TinyItn::new();
    reports.push(tiny.check("itn full graph (cross-entropy branch)", false)?);
    reports.push(tiny.check("itn full graph (displacement branch)", true)?);

    Ok(reports)
}
