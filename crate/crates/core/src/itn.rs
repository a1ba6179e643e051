//! Invariant transformer: FC blocks mapping control parameters to affine
//! color and spatial maps, trained against a frozen classifier with a
//! displacement loss gated by batch accuracy.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cnn::{argmax, evaluate, Dataset, ModelWeights};
use crate::diff_transformer::{
    homogeneous_row, warp_color, warp_spatial, AffineKind, COLOR_IDENTITY, SPATIAL_IDENTITY,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::scalar::{lit, Scalar};
use crate::tensor::{sgd_step, Gradients, Tape, Tensor};

/// Largest allowed magnitude of an emitted matrix entry; the displacement
/// loss is unbounded below and the accuracy gate reacts one batch late.
pub const MATRIX_CLAMP: f64 = 10.0;

/// Control parameters of one transformation instance, each in [0,1]².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlVector {
    pub k1: [f64; 2],
    pub k2: [f64; 2],
}

impl ControlVector {
    pub fn new(k1: [f64; 2], k2: [f64; 2]) -> Result<Self> {
        for v in k1.iter().chain(&k2) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Usage(format!(
                    "control components must lie in [0,1], got {}",
                    v
                )));
            }
        }
        Ok(ControlVector { k1, k2 })
    }
}

/// Two dense layers with a rectified-linear activation between them,
/// 2 → hidden → (12 color | 6 spatial). The emitted values are offsets
/// added to the identity map of the block's kind.
#[derive(Clone, Debug)]
pub struct FcBlock<T> {
    pub kind: AffineKind,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> FcBlock<T> {
    /// Identity initialization: the hidden layer is seeded random so
    /// gradients can reach it, the output layer starts at zero so the
    /// emitted map is the exact identity.
    pub fn init(kind: AffineKind, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let out = kind.rows() * kind.cols();
        let w1_data: Vec<T> =
            (0..hidden * 2).map(|_| lit::<T>(normal.sample(&mut rng))).collect();
        FcBlock {
            kind,
            w1: Tensor::from_vec(vec![hidden, 2], w1_data).unwrap(),
            b1: Tensor::from_vec(vec![hidden], vec![lit::<T>(0.1); hidden]).unwrap(),
            w2: Tensor::zeros(vec![out, hidden]),
            b2: Tensor::zeros(vec![out]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn track(&self, tape: &Tape<T>) -> FcBlock<T> {
        FcBlock {
            kind: self.kind,
            w1: tape.var(&self.w1),
            b1: tape.var(&self.b1),
            w2: tape.var(&self.w2),
            b2: tape.var(&self.b2),
        }
    }

    /// Emits the affine matrix for one control pair: identity offset plus
    /// the FC output, entries clamped to ±[`MATRIX_CLAMP`]. Returns the
    /// rows×cols matrix and whether the clamp was active.
    pub fn forward(&self, tape: &Tape<T>, k: [f64; 2]) -> Result<(Tensor<T>, bool)> {
        let k_in = Tensor::from_vec(vec![2, 1], vec![lit::<T>(k[0]), lit::<T>(k[1])])?;
        let h = tape.matmul(&self.w1, &k_in)?;
        let h = tape.reshape(&h, vec![self.hidden()])?;
        let h = tape.add(&h, &self.b1)?;
        let h = tape.relu(&h)?;
        let h = tape.reshape(&h, vec![self.hidden(), 1])?;
        let o = tape.matmul(&self.w2, &h)?;
        let o = tape.reshape(&o, vec![self.w2.shape()[0]])?;
        let o = tape.add(&o, &self.b2)?;
        let identity: Vec<T> = match self.kind {
            AffineKind::Spatial => SPATIAL_IDENTITY.iter().map(|&v| lit::<T>(v)).collect(),
            AffineKind::Color => COLOR_IDENTITY.iter().map(|&v| lit::<T>(v)).collect(),
        };
        let id = Tensor::from_vec(vec![identity.len()], identity)?;
        let m = tape.add(&o, &id)?;
        let lim = lit::<T>(MATRIX_CLAMP);
        let clamped = m.data().iter().any(|v| *v < -lim || *v > lim);
        let m = tape.clamp(&m, -lim, lim)?;
        tape.reshape(&m, vec![self.kind.rows(), self.kind.cols()]).map(|t| (t, clamped))
    }
}

/// Training hyperparameters; all tunables are fields, not constants.
#[derive(Clone, Copy, Debug)]
pub struct ItnConfig {
    /// Weight of the color displacement term in the final loss.
    pub c_theta: f64,
    /// Accuracy gate: below it the batch trains on cross-entropy instead.
    pub acc_orig: f64,
    /// Unit vectors per displacement-loss draw.
    pub s_size: usize,
    pub batch: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Route k₁ to the spatial block and k₂ to the color block.
    pub swap_k: bool,
}

impl Default for ItnConfig {
    fn default() -> Self {
        ItnConfig {
            c_theta: 10.0,
            acc_orig: 0.9,
            s_size: 16,
            batch: 64,
            lr: 1e-3,
            steps: 1000,
            seed: 0,
            hidden: 32,
            swap_k: false,
        }
    }
}

impl ItnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_theta <= 0.0
            || self.s_size == 0
            || self.batch == 0
            || self.lr <= 0.0
            || self.hidden == 0
        {
            return Err(Error::Usage("itn config: all sizes and rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.acc_orig) {
            return Err(Error::Usage("itn config: acc_orig must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Seeded homogeneous unit vectors: isotropic-normal affine part normalized
/// to unit length, final component exactly 1. Returned as an n×d tensor.
pub fn sample_unit_vectors<T: Scalar>(d: usize, n: usize, seed: u64) -> Result<Tensor<T>> {
    if !(d == 3 || d == 4) {
        return Err(Error::Usage(format!("unit vectors: d must be 3 or 4, got {}", d)));
    }
    if n == 0 {
        return Err(Error::Usage("unit vectors: n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        loop {
            let v: Vec<f64> = (0..d - 1).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                data.extend(v.iter().map(|x| lit::<T>(x / norm)));
                data.push(T::one());
                break;
            }
        }
    }
    Tensor::from_vec(vec![n, d], data)
}

/// Displacement loss  L̂(A) = −(1/|S|) Σ_{x∈S} ‖Ax − x‖²  over the rows of
/// `s`; differentiable in the square matrix `a_hat`.
pub fn loss_hat<T: Scalar>(tape: &Tape<T>, a_hat: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, d] = s.shape()[..] else {
        return Err(Error::Shape { op: "loss_hat", detail: format!("S must be n×d, got {:?}", s.shape()) });
    };
    if a_hat.shape() != [d, d] {
        return Err(Error::Shape {
            op: "loss_hat",
            detail: format!("A must be {0}×{0} to act on {0}-vectors, got {1:?}", d, a_hat.shape()),
        });
    }
    // (A − I)·Sᵀ, squared and averaged
    let mut eye = vec![T::zero(); d * d];
    for i in 0..d {
        eye[i * d + i] = T::one();
    }
    let eye = Tensor::from_vec(vec![d, d], eye)?;
    let diff = tape.sub(a_hat, &eye)?;
    let mut st = vec![T::zero(); d * n];
    for r in 0..n {
        for c in 0..d {
            st[c * n + r] = s.data()[r * d + c];
        }
    }
    let st = Tensor::from_vec(vec![d, n], st)?;
    let moved = tape.matmul(&diff, &st)?;
    let sq = tape.mul(&moved, &moved)?;
    let total = tape.sum(&sq)?;
    tape.scale(&total, lit::<T>(-1.0 / n as f64))
}

/// L_{k_i}(A) = (k_{i,0} + k_{i,1}) · L̂(A).
pub fn loss_k<T: Scalar>(tape: &Tape<T>, k_i: [f64; 2], l_hat: &Tensor<T>) -> Result<Tensor<T>> {
    tape.scale(l_hat, lit::<T>(k_i[0] + k_i[1]))
}

/// Which loss a training step optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Cross-entropy of the transformed batch (gate closed).
    Orig,
    /// Weighted displacement losses (gate open).
    Displacement,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Orig => "orig",
            Branch::Displacement => "displacement",
        }
    }
}

/// Gate: cross-entropy until the batch classifies well enough, then the
/// weighted displacement objective c_θ·L_color + L_spatial.
pub fn select_final_loss<T: Scalar>(
    tape: &Tape<T>,
    batch_acc: f64,
    cfg: &ItnConfig,
    l_orig: &Tensor<T>,
    l_color_term: &Tensor<T>,
    l_spatial_term: &Tensor<T>,
) -> Result<(Tensor<T>, Branch)> {
    if batch_acc < cfg.acc_orig {
        Ok((l_orig.clone(), Branch::Orig))
    } else {
        let weighted = tape.scale(l_color_term, lit::<T>(cfg.c_theta))?;
        Ok((tape.add(&weighted, l_spatial_term)?, Branch::Displacement))
    }
}

/// Routes the control pairs to the blocks: k₁ drives color and k₂ spatial
/// unless `swap_k` is set.
pub fn route_controls(k: &ControlVector, swap_k: bool) -> ([f64; 2], [f64; 2]) {
    if swap_k {
        (k.k2, k.k1)
    } else {
        (k.k1, k.k2)
    }
}

/// One forward pass: emit both maps, warp color then space, classify with
/// the frozen model. Returns (logits, A_color, A_spatial, clamp hit).
#[allow(clippy::type_complexity)]
pub fn itn_forward<T: Scalar>(
    tape: &Tape<T>,
    weights: &ModelWeights<T>,
    img: &Tensor<T>,
    k: &ControlVector,
    color: &FcBlock<T>,
    spatial: &FcBlock<T>,
    swap_k: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, bool)> {
    let (k_color, k_spatial) = route_controls(k, swap_k);
    let (a_color, c1) = color.forward(tape, k_color)?;
    let (a_spatial, c2) = spatial.forward(tape, k_spatial)?;
    let x = warp_color(tape, img, &a_color)?;
    let x = warp_spatial(tape, &x, &a_spatial)?;
    let logits = weights.logits(tape, &x)?;
    Ok((logits, a_color, a_spatial, c1 || c2))
}

/// One line of the per-step training log.
#[derive(Clone, Debug)]
pub struct StepLog {
    pub step: usize,
    pub branch: Branch,
    pub loss_orig: f64,
    pub loss_color: f64,
    pub loss_spatial: f64,
    pub batch_acc: f64,
    pub clamped: bool,
}

/// Renders the log as CSV (`step,branch,loss_orig,loss_color,loss_spatial,batch_acc`).
pub fn log_to_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,branch,loss_orig,loss_color,loss_spatial,batch_acc\n");
    for l in log {
        writeln!(
            out,
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e}",
            l.step, l.branch.name(), l.loss_orig, l.loss_color, l.loss_spatial, l.batch_acc
        )
        .unwrap();
    }
    out
}

/// Trains the two FC blocks against the frozen model. Per step: one batch,
/// one (k₁,k₂) draw, fresh unit vectors, gate on batch accuracy, SGD into
/// the blocks only.
pub fn itn_train<T: Scalar>(
    cfg: &ItnConfig,
    weights: &ModelWeights<T>,
    data: &Dataset<T>,
) -> Result<(FcBlock<T>, FcBlock<T>, Vec<StepLog>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("itn_train: empty dataset".into()));
    }
    // The gate never opens if the frozen model can't reach acc_orig cleanly.
    let probe = data.take(data.len().min(512));
    let (clean_acc, _) = evaluate(weights, &probe)?;
    if clean_acc < cfg.acc_orig {
        return Err(Error::Usage(format!(
            "itn_train: frozen model reaches {:.4} clean accuracy, below the {:.4} gate",
            clean_acc, cfg.acc_orig
        )));
    }

    let mut color = FcBlock::<T>::init(AffineKind::Color, cfg.hidden, cfg.seed ^ 0x636f_6c6f);
    let mut spatial = FcBlock::<T>::init(AffineKind::Spatial, cfg.hidden, cfg.seed ^ 0x7370_6174);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    let lr_t = lit::<T>(cfg.lr);
    let normalized: Vec<Tensor<T>> =
        data.images.iter().map(|img| img.to_normalized_tensor()).collect();

    for step in 0..cfg.steps {
        let indices: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..data.len())).collect();
        let k = ControlVector {
            k1: [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)],
            k2: [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)],
        };
        let s_color = sample_unit_vectors::<T>(4, cfg.s_size, rng.gen())?;
        let s_spatial = sample_unit_vectors::<T>(3, cfg.s_size, rng.gen())?;

        let tape = Tape::new();
        let color_t = color.track(&tape);
        let spatial_t = spatial.track(&tape);
        let (k_color, k_spatial) = route_controls(&k, cfg.swap_k);
        let (a_color, c1) = color_t.forward(&tape, k_color)?;
        let (a_spatial, c2) = spatial_t.forward(&tape, k_spatial)?;

        let mut correct = 0usize;
        let mut ce_sum: Option<Tensor<T>> = None;
        for &i in &indices {
            let x = warp_color(&tape, &normalized[i], &a_color)?;
            let x = warp_spatial(&tape, &x, &a_spatial)?;
            let logits = weights.logits(&tape, &x)?;
            let probs = tape.softmax(&logits)?;
            if argmax(probs.data()) == data.labels[i] as usize {
                correct += 1;
            }
            let ce = tape.cross_entropy(&probs, data.labels[i] as usize)?;
            ce_sum = Some(match ce_sum {
                None => ce,
                Some(acc) => tape.add(&acc, &ce)?,
            });
        }
        let batch_acc = correct as f64 / cfg.batch as f64;
        let l_orig = tape.scale(&ce_sum.unwrap(), lit::<T>(1.0 / cfg.batch as f64))?;

        let row_c: Vec<T> = homogeneous_row(4);
        let row_s: Vec<T> = homogeneous_row(3);
        let a_color_hat = tape.append_row(&a_color, &row_c)?;
        let a_spatial_hat = tape.append_row(&a_spatial, &row_s)?;
        let l_hat_color = loss_hat(&tape, &a_color_hat, &s_color)?;
        let l_hat_spatial = loss_hat(&tape, &a_spatial_hat, &s_spatial)?;
        let l_color_term = loss_k(&tape, k_color, &l_hat_color)?;
        let l_spatial_term = loss_k(&tape, k_spatial, &l_hat_spatial)?;

        let (l_final, branch) =
            select_final_loss(&tape, batch_acc, cfg, &l_orig, &l_color_term, &l_spatial_term)?;
        let grads = tape.backward(&l_final)?;
        apply_block_step(&mut color, &color_t, &grads, lr_t)?;
        apply_block_step(&mut spatial, &spatial_t, &grads, lr_t)?;

        log.push(StepLog {
            step,
            branch,
            loss_orig: l_orig.item().to_f64().unwrap(),
            loss_color: l_hat_color.item().to_f64().unwrap(),
            loss_spatial: l_hat_spatial.item().to_f64().unwrap(),
            batch_acc,
            clamped: c1 || c2,
        });
    }
    Ok((color, spatial, log))
}

fn apply_block_step<T: Scalar>(
    block: &mut FcBlock<T>,
    tracked: &FcBlock<T>,
    grads: &Gradients<T>,
    lr: T,
) -> Result<()> {
    let mut params = block.tensors_mut();
    let tracked_refs = tracked.tensors();
    let mut pairs: Vec<(&mut Tensor<T>, &Tensor<T>)> = params
        .iter_mut()
        .zip(tracked_refs.iter())
        .map(|(p, t)| (&mut **p, *t))
        .collect();
    sgd_step(&mut pairs, grads, lr)
}

// ── Block serialization ────────────────────────────────────────────

const BLOCK_NAMES: [&str; 8] = [
    "color_w1", "color_b1", "color_w2", "color_b2",
    "spatial_w1", "spatial_b1", "spatial_w2", "spatial_b2",
];

pub fn save_blocks<T: Scalar>(color: &FcBlock<T>, spatial: &FcBlock<T>, path: &Path) -> Result<()> {
    let tensors: Vec<(&str, &Tensor<T>)> = BLOCK_NAMES
        .iter()
        .copied()
        .zip(color.tensors().into_iter().chain(spatial.tensors()))
        .collect();
    io::save_tensors(&tensors, path)
}

pub fn load_blocks<T: Scalar>(path: &Path) -> Result<(FcBlock<T>, FcBlock<T>)> {
    let mut map = io::load_tensors::<T>(path)?;
    let mut fetch = |name: &str| -> Result<Tensor<T>> {
        map.remove(name).ok_or_else(|| {
            Error::format(path, 0, format!("missing tensor '{}' in block container", name))
        })
    };
    let color = FcBlock {
        kind: AffineKind::Color,
        w1: fetch("color_w1")?,
        b1: fetch("color_b1")?,
        w2: fetch("color_w2")?,
        b2: fetch("color_b2")?,
    };
    let spatial = FcBlock {
        kind: AffineKind::Spatial,
        w1: fetch("spatial_w1")?,
        b1: fetch("spatial_b1")?,
        w2: fetch("spatial_w2")?,
        b2: fetch("spatial_b2")?,
    };
    for (b, out) in [(&color, 12), (&spatial, 6)] {
        if b.w2.shape()[0] != out || b.w1.shape()[1] != 2 {
            return Err(Error::format(path, 0, "block tensor shapes inconsistent".to_string()));
        }
    }
    Ok((color, spatial))
}

// ── Rendering ──────────────────────────────────────────────────────

fn fmt_k(v: f64) -> String {
    format!("{:.2}", v)
}

/// Transforms every image at every control point, writes clamped PPMs named
/// `k1-<a>_<b>__k2-<c>_<d>__<idx>.ppm` plus a `predictions.csv` of
/// per-(k, image) predicted class, its softmax, and the clean prediction.
pub fn itn_render<T: Scalar>(
    color: &FcBlock<T>,
    spatial: &FcBlock<T>,
    weights: &ModelWeights<T>,
    images: &Dataset<T>,
    k_grid: &[ControlVector],
    swap_k: bool,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv =
        String::from("k1_0,k1_1,k2_0,k2_1,image,predicted,softmax,clean_predicted\n");
    let clean: Vec<usize> = images
        .images
        .iter()
        .map(|img| weights.predict(img).map(|p| argmax(&p)))
        .collect::<Result<_>>()?;
    for k in k_grid {
        for (idx, img) in images.images.iter().enumerate() {
            let tape = Tape::new();
            let (k_color, k_spatial) = route_controls(k, swap_k);
            let (a_color, _) = color.forward(&tape, k_color)?;
            let (a_spatial, _) = spatial.forward(&tape, k_spatial)?;
            let x = warp_color(&tape, &img.to_normalized_tensor(), &a_color)?;
            let x = warp_spatial(&tape, &x, &a_spatial)?;
            let logits = weights.logits(&tape, &x)?;
            let probs = tape.softmax(&logits)?;
            let pred = argmax(probs.data());
            let out_img = {
                let h = img.height();
                let w = img.width();
                let mut o = Image::black(w, h);
                let plane = h * w;
                for c in 0..3 {
                    for y in 0..h {
                        for xp in 0..w {
                            let v = x.data()[c * plane + y * w + xp];
                            o.set(xp, y, c, v.max(T::zero()).min(T::one()) * lit::<T>(255.0));
                        }
                    }
                }
                o.clamp_bytes();
                o
            };
            let name = format!(
                "k1-{}_{}__k2-{}_{}__{}.ppm",
                fmt_k(k.k1[0]), fmt_k(k.k1[1]), fmt_k(k.k2[0]), fmt_k(k.k2[1]), idx
            );
            io::write_ppm(&out_img, &out_dir.join(name))?;
            writeln!(
                csv,
                "{},{},{},{},{},{},{:.8e},{}",
                fmt_k(k.k1[0]), fmt_k(k.k1[1]), fmt_k(k.k2[0]), fmt_k(k.k2[1]),
                idx, pred, probs.data()[pred].to_f64().unwrap(), clean[idx]
            )
            .unwrap();
        }
    }
    let csv_path = out_dir.join("predictions.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{ModelConfig, Split, NUM_CLASSES};

    fn noise_dataset(n: usize) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut img = Image::black(32, 32);
            for p in img.pixels_mut() {
                *p = rng.gen_range(0.0f64..255.0);
            }
            images.push(img);
            labels.push((i % NUM_CLASSES) as u8);
        }
        Dataset { images, labels, split: Split::Train }
    }

    #[test]
    fn control_vector_bounds() {
        assert!(ControlVector::new([0.0, 1.0], [0.5, 0.5]).is_ok());
        assert!(ControlVector::new([-0.1, 0.0], [0.0, 0.0]).is_err());
        assert!(ControlVector::new([0.0, 0.0], [0.0, 1.1]).is_err());
    }

    #[test]
    fn unit_vectors_are_homogeneous_and_seeded() {
        for d in [3usize, 4] {
            let s = sample_unit_vectors::<f64>(d, 50, 9).unwrap();
            for row in s.data().chunks(d) {
                let norm: f64 = row[..d - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                assert_eq!(row[d - 1], 1.0);
            }
            let again = sample_unit_vectors::<f64>(d, 50, 9).unwrap();
            assert_eq!(s.data(), again.data());
        }
        assert!(sample_unit_vectors::<f64>(2, 5, 0).is_err());
        assert!(sample_unit_vectors::<f64>(3, 0, 0).is_err());
    }

    #[test]
    fn unit_vector_mean_near_zero() {
        let s = sample_unit_vectors::<f64>(3, 10_000, 123).unwrap();
        let mut mean = [0.0f64; 2];
        for row in s.data().chunks(3) {
            mean[0] += row[0];
            mean[1] += row[1];
        }
        for m in mean {
            assert!((m / 10_000.0).abs() < 0.05);
        }
    }

    #[test]
    fn loss_hat_analytics() {
        let tape = Tape::<f64>::new();
        let s = sample_unit_vectors::<f64>(3, 32, 1).unwrap();
        let eye = Tensor::from_vec(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(loss_hat(&tape, &eye, &s).unwrap().item(), 0.0);

        // diag(2,2,1): ‖Ax − x‖² = ‖x_affine‖² = 1 for every homogeneous row
        let two = Tensor::from_vec(
            vec![3, 3],
            vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        for seed in [1u64, 7, 99] {
            let s = sample_unit_vectors::<f64>(3, 16, seed).unwrap();
            let l = loss_hat(&tape, &two, &s).unwrap().item();
            assert!((l + 1.0).abs() < 1e-9, "seed {} loss {}", seed, l);
        }

        // doubling the displacement quadruples |loss|
        let three = Tensor::from_vec(
            vec![3, 3],
            vec![3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let s = sample_unit_vectors::<f64>(3, 16, 4).unwrap();
        let l2 = loss_hat(&tape, &two, &s).unwrap().item();
        let l3 = loss_hat(&tape, &three, &s).unwrap().item();
        assert!((l3 - 4.0 * l2).abs() < 1e-9);

        let bad = Tensor::from_vec(vec![4, 4], vec![0.0; 16]).unwrap();
        assert!(loss_hat(&tape, &bad, &s).is_err());
    }

    #[test]
    fn loss_k_arithmetic() {
        let tape = Tape::<f64>::new();
        let l = Tensor::scalar(-1.0);
        assert_eq!(loss_k(&tape, [0.0, 0.0], &l).unwrap().item(), 0.0);
        assert_eq!(loss_k(&tape, [1.0, 1.0], &l).unwrap().item(), -2.0);
        assert!((loss_k(&tape, [0.3, 0.2], &l).unwrap().item() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn final_loss_selection() {
        let tape = Tape::<f64>::new();
        let cfg = ItnConfig { c_theta: 2.0, acc_orig: 0.9, ..ItnConfig::default() };
        let orig = Tensor::scalar(3.5);
        let col = Tensor::scalar(-0.5);
        let spa = Tensor::scalar(-1.0);
        let (l, b) = select_final_loss(&tape, 0.0, &cfg, &orig, &col, &spa).unwrap();
        assert_eq!(b, Branch::Orig);
        assert_eq!(l.item(), 3.5);
        let (l, b) = select_final_loss(&tape, 1.0, &cfg, &orig, &col, &spa).unwrap();
        assert_eq!(b, Branch::Displacement);
        assert!((l.item() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_init_preserves_logits() {
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(3);
        let color = FcBlock::<f64>::init(AffineKind::Color, 8, 1);
        let spatial = FcBlock::<f64>::init(AffineKind::Spatial, 8, 2);
        for (i, img) in data.images.iter().enumerate() {
            let x = img.to_normalized_tensor();
            let tape = Tape::new();
            let clean = weights.logits(&tape, &x).unwrap();
            let k = ControlVector::new([i as f64 / 3.0, 0.7], [0.2, 0.9]).unwrap();
            let (logits, a_color, a_spatial, clamped) =
                itn_forward(&tape, &weights, &x, &k, &color, &spatial, false).unwrap();
            assert!(!clamped);
            for (a, b) in logits.data().iter().zip(clean.data()) {
                assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
            assert_eq!(a_color.data(), &COLOR_IDENTITY);
            assert_eq!(a_spatial.data(), &SPATIAL_IDENTITY);
        }
    }

    #[test]
    fn gradients_reach_blocks_not_frozen_weights() {
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(1);
        let mut color = FcBlock::<f64>::init(AffineKind::Color, 8, 1);
        let spatial = FcBlock::<f64>::init(AffineKind::Spatial, 8, 2);
        // nudge the output layer off zero so color gradients are nonzero
        color.w2.data_mut()[0] = 0.05;
        let tape = Tape::new();
        let color_t = color.track(&tape);
        let spatial_t = spatial.track(&tape);
        let k = ControlVector::new([0.4, 0.6], [0.3, 0.8]).unwrap();
        let (a_color, _) = color_t.forward(&tape, k.k1).unwrap();
        let (a_spatial, _) = spatial_t.forward(&tape, k.k2).unwrap();
        let x = warp_color(&tape, &data.images[0].to_normalized_tensor(), &a_color).unwrap();
        let x = warp_spatial(&tape, &x, &a_spatial).unwrap();
        let logits = weights.logits(&tape, &x).unwrap();
        let probs = tape.softmax(&logits).unwrap();
        let loss = tape.cross_entropy(&probs, 0).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.wrt(&weights.conv1).is_none());
        assert!(grads.wrt(&weights.dense_w).is_none());
        let g = grads.wrt(&color_t.w2).expect("color block gradient");
        assert!(g.iter().any(|v| *v != 0.0));
        assert!(grads.wrt(&spatial_t.w2).is_some());
    }

    #[test]
    fn zero_steps_leaves_blocks_at_init() {
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(10);
        let cfg = ItnConfig {
            steps: 0,
            acc_orig: 0.0,
            batch: 2,
            hidden: 4,
            s_size: 4,
            ..ItnConfig::default()
        };
        let (color, spatial, log) = itn_train(&cfg, &weights, &data).unwrap();
        let ref_color = FcBlock::<f64>::init(AffineKind::Color, 4, cfg.seed ^ 0x636f_6c6f);
        assert_eq!(color.w1.data(), ref_color.w1.data());
        assert!(color.w2.data().iter().all(|v| *v == 0.0));
        assert!(spatial.w2.data().iter().all(|v| *v == 0.0));
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(12);
        let cfg = ItnConfig {
            steps: 3,
            acc_orig: 0.0,
            batch: 2,
            hidden: 4,
            s_size: 4,
            ..ItnConfig::default()
        };
        let (c1, s1, l1) = itn_train(&cfg, &weights, &data).unwrap();
        let (c2, s2, l2) = itn_train(&cfg, &weights, &data).unwrap();
        assert_eq!(c1.w2.data(), c2.w2.data());
        assert_eq!(s1.w2.data(), s2.w2.data());
        assert_eq!(log_to_csv(&l1), log_to_csv(&l2));
    }

    #[test]
    fn gate_rejects_weak_model() {
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(20);
        let cfg = ItnConfig { acc_orig: 0.95, ..ItnConfig::default() };
        assert!(itn_train(&cfg, &weights, &data).is_err());
    }

    #[test]
    fn blocks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let color = FcBlock::<f64>::init(AffineKind::Color, 6, 3);
        let spatial = FcBlock::<f64>::init(AffineKind::Spatial, 6, 4);
        let path = dir.path().join("blocks.iltf");
        save_blocks(&color, &spatial, &path).unwrap();
        let (c2, s2) = load_blocks::<f64>(&path).unwrap();
        assert_eq!(color.w1.data(), c2.w1.data());
        assert_eq!(spatial.b2.data(), s2.b2.data());
        assert_eq!(c2.kind, AffineKind::Color);
    }

    #[test]
    fn render_identity_blocks_reproduces_input() {
        let dir = tempfile::tempdir().unwrap();
        let weights = ModelWeights::<f64>::init(&ModelConfig { seed: 8 });
        let data = noise_dataset(2);
        let color = FcBlock::<f64>::init(AffineKind::Color, 4, 1);
        let spatial = FcBlock::<f64>::init(AffineKind::Spatial, 4, 2);
        let k = vec![ControlVector::new([0.0, 0.0], [0.0, 0.0]).unwrap()];
        itn_render(&color, &spatial, &weights, &data, &k, false, dir.path()).unwrap();
        let rendered: Image<f64> =
            io::read_ppm(&dir.path().join("k1-0.00_0.00__k2-0.00_0.00__0.ppm")).unwrap();
        for (a, b) in rendered.pixels().iter().zip(data.images[0].pixels()) {
            assert!((a - b.round()).abs() <= 1.0, "{} vs {}", a, b);
        }
        let csv = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
        assert_eq!(csv.trim_end().lines().count(), 1 + 2);
    }
}
