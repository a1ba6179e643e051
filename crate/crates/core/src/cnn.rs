//! The small frozen classifier probed by both strategies, plus dataset
//! ingestion (IDX and CIFAR-10 binary) and weight serialization.
//!
//! Fixed architecture on 3×32×32 inputs:
//! conv(3→8, 3×3, pad 1) → relu → maxpool 2 → conv(8→16, 3×3, pad 1) →
//! relu → maxpool 2 → flatten → dense(1024→10) → softmax.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::scalar::{lit, Scalar};
use crate::tensor::{sgd_step, Tape, Tensor};

pub const NUM_CLASSES: usize = 10;
pub const INPUT_SIDE: usize = 32;
const FLAT: usize = 16 * 8 * 8;

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    Cifar10,
}

impl DataFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "idx" => Ok(DataFormat::Idx),
            "cifar10" => Ok(DataFormat::Cifar10),
            other => Err(Error::Usage(format!("unknown dataset format '{}'", other))),
        }
    }
}

/// Labeled 3×32×32 images in the [0,255] byte domain.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub images: Vec<Image<T>>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// All samples carrying one class label.
    pub fn filter_class(&self, class_id: u8) -> Dataset<T> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (img, lbl) in self.images.iter().zip(&self.labels) {
            if *lbl == class_id {
                images.push(img.clone());
                labels.push(*lbl);
            }
        }
        Dataset { images, labels, split: self.split }
    }

    /// Deterministic subset of at most `n` samples.
    pub fn take(&self, n: usize) -> Dataset<T> {
        Dataset {
            images: self.images.iter().take(n).cloned().collect(),
            labels: self.labels.iter().take(n).copied().collect(),
            split: self.split,
        }
    }
}

/// Trainable (or frozen) parameters of the fixed architecture.
#[derive(Clone, Debug)]
pub struct ModelWeights<T> {
    pub conv1: Tensor<T>,
    pub bias1: Tensor<T>,
    pub conv2: Tensor<T>,
    pub bias2: Tensor<T>,
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
}

const WEIGHT_NAMES: [&str; 6] = ["conv1", "bias1", "conv2", "bias2", "dense_w", "dense_b"];

impl<T: Scalar> ModelWeights<T> {
    /// Seeded initialization; scaled normal draws per layer.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |shape: Vec<usize>, fan_in: usize| -> Tensor<T> {
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0f64, std).unwrap();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| lit::<T>(normal.sample(&mut rng))).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        ModelWeights {
            conv1: draw(vec![8, 3, 3, 3], 3 * 9),
            bias1: Tensor::zeros(vec![8]),
            conv2: draw(vec![16, 8, 3, 3], 8 * 9),
            bias2: Tensor::zeros(vec![16]),
            dense_w: draw(vec![NUM_CLASSES, FLAT], FLAT),
            dense_b: Tensor::zeros(vec![NUM_CLASSES]),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let expect: [(&str, &[usize]); 6] = [
            ("conv1", &[8, 3, 3, 3]),
            ("bias1", &[8]),
            ("conv2", &[16, 8, 3, 3]),
            ("bias2", &[16]),
            ("dense_w", &[NUM_CLASSES, FLAT]),
            ("dense_b", &[NUM_CLASSES]),
        ];
        for ((name, shape), t) in expect.iter().zip(self.tensors()) {
            if t.shape() != *shape {
                return Err(Error::Shape {
                    op: "model_weights",
                    detail: format!("{}: expected {:?}, got {:?}", name, shape, t.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor<T>; 6] {
        [&self.conv1, &self.bias1, &self.conv2, &self.bias2, &self.dense_w, &self.dense_b]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.conv1,
            &mut self.bias1,
            &mut self.conv2,
            &mut self.bias2,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    /// Registers every parameter on a tape for gradient flow.
    pub fn track(&self, tape: &Tape<T>) -> ModelWeights<T> {
        ModelWeights {
            conv1: tape.var(&self.conv1),
            bias1: tape.var(&self.bias1),
            conv2: tape.var(&self.conv2),
            bias2: tape.var(&self.bias2),
            dense_w: tape.var(&self.dense_w),
            dense_b: tape.var(&self.dense_b),
        }
    }

    /// Logits for one 3×32×32 input in the [0,1] domain. Gradients flow to
    /// whichever of (image, weights) is tape-tracked.
    pub fn logits(&self, tape: &Tape<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
        let c1 = tape.conv2d(img, &self.conv1, 1, 1)?;
        let c1 = tape.add_channel_bias(&c1, &self.bias1)?;
        let a1 = tape.relu(&c1)?;
        let p1 = tape.maxpool2d(&a1, 2)?;
        let c2 = tape.conv2d(&p1, &self.conv2, 1, 1)?;
        let c2 = tape.add_channel_bias(&c2, &self.bias2)?;
        let a2 = tape.relu(&c2)?;
        let p2 = tape.maxpool2d(&a2, 2)?;
        let flat = tape.reshape(&p2, vec![FLAT, 1])?;
        let scores = tape.matmul(&self.dense_w, &flat)?;
        let scores = tape.reshape(&scores, vec![NUM_CLASSES])?;
        let b = tape.reshape(&self.dense_b, vec![NUM_CLASSES])?;
        tape.add(&scores, &b)
    }

    /// Softmax prediction for one byte-domain image (no tape needed).
    pub fn predict(&self, img: &Image<T>) -> Result<Vec<T>> {
        let tape = Tape::new();
        let logits = self.logits(&tape, &img.to_normalized_tensor())?;
        Ok(tape.softmax(&logits)?.data().to_vec())
    }
}

/// Accuracy plus per-sample softmax vectors over a dataset.
pub fn evaluate<T: Scalar>(
    weights: &ModelWeights<T>,
    data: &Dataset<T>,
) -> Result<(f64, Vec<Vec<T>>)> {
    if data.is_empty() {
        return Err(Error::Usage("evaluate: empty dataset".into()));
    }
    let mut correct = 0usize;
    let mut softmaxes = Vec::with_capacity(data.len());
    for (img, label) in data.images.iter().zip(&data.labels) {
        let probs = weights.predict(img)?;
        let pred = argmax(&probs);
        if pred == *label as usize {
            correct += 1;
        }
        softmaxes.push(probs);
    }
    Ok((correct as f64 / data.len() as f64, softmaxes))
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Eval accuracy per epoch when an eval set was supplied.
    pub epoch_eval_accuracy: Vec<f64>,
    pub epochs_run: usize,
}

/// Mini-batch SGD on cross-entropy; deterministic under the config seed.
/// With `stop_at = Some((eval set, target))`, stops after the first epoch
/// whose eval accuracy reaches the target.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    data: &Dataset<T>,
    epochs: usize,
    lr: f64,
    batch: usize,
    stop_at: Option<(&Dataset<T>, f64)>,
) -> Result<(ModelWeights<T>, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Usage("train: empty dataset".into()));
    }
    if batch == 0 {
        return Err(Error::Usage("train: batch must be positive".into()));
    }
    let mut weights = ModelWeights::init(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let lr_t = lit::<T>(lr);
    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch) {
            let tape = Tape::new();
            let tracked = weights.track(&tape);
            let mut batch_loss: Option<Tensor<T>> = None;
            for &i in chunk {
                let logits = tracked.logits(&tape, &data.images[i].to_normalized_tensor())?;
                let probs = tape.softmax(&logits)?;
                let ce = tape.cross_entropy(&probs, data.labels[i] as usize)?;
                batch_loss = Some(match batch_loss {
                    None => ce,
                    Some(acc) => tape.add(&acc, &ce)?,
                });
            }
            let total = batch_loss.expect("non-empty chunk");
            let mean = tape.scale(&total, lit::<T>(1.0 / chunk.len() as f64))?;
            epoch_loss += mean.item().to_f64().unwrap() * chunk.len() as f64;
            let grads = tape.backward(&mean)?;
            let mut params = weights.tensors_mut();
            let tracked_refs = tracked.tensors();
            let mut pairs: Vec<(&mut Tensor<T>, &Tensor<T>)> = params
                .iter_mut()
                .zip(tracked_refs.iter())
                .map(|(p, t)| (&mut **p, *t))
                .collect();
            sgd_step(&mut pairs, &grads, lr_t)?;
        }
        report.epoch_losses.push(epoch_loss / data.len() as f64);
        report.epochs_run += 1;
        if let Some((eval, target)) = stop_at {
            let (acc, _) = evaluate(&weights, eval)?;
            report.epoch_eval_accuracy.push(acc);
            if acc >= target {
                break;
            }
        }
    }
    Ok((weights, report))
}

// ── Weight serialization ───────────────────────────────────────────

pub fn save_weights<T: Scalar>(w: &ModelWeights<T>, path: &Path) -> Result<()> {
    w.check_shapes()?;
    let tensors: Vec<(&str, &Tensor<T>)> =
        WEIGHT_NAMES.iter().copied().zip(w.tensors()).collect();
    io::save_tensors(&tensors, path)
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<ModelWeights<T>> {
    let mut map = io::load_tensors::<T>(path)?;
    let mut fetch = |name: &str| -> Result<Tensor<T>> {
        map.remove(name).ok_or_else(|| {
            Error::format(path, 0, format!("missing tensor '{}' in weight container", name))
        })
    };
    let w = ModelWeights {
        conv1: fetch("conv1")?,
        bias1: fetch("bias1")?,
        conv2: fetch("conv2")?,
        bias2: fetch("bias2")?,
        dense_w: fetch("dense_w")?,
        dense_b: fetch("dense_b")?,
    };
    w.check_shapes()?;
    Ok(w)
}

// ── Dataset ingestion ──────────────────────────────────────────────

/// Loads one split of a dataset directory in the given binary format.
/// Grayscale inputs are replicated to three channels and zero-padded to
/// 32×32 centered.
pub fn load_dataset<T: Scalar>(dir: &Path, format: DataFormat, split: Split) -> Result<Dataset<T>> {
    match format {
        DataFormat::Idx => load_idx(dir, split),
        DataFormat::Cifar10 => load_cifar10(dir, split),
    }
}

fn load_idx<T: Scalar>(dir: &Path, split: Split) -> Result<Dataset<T>> {
    let (img_name, lbl_name) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let img_path = dir.join(img_name);
    let lbl_path = dir.join(lbl_name);
    let img_bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    let lbl_bytes = fs::read(&lbl_path).map_err(|e| Error::io(&lbl_path, e))?;

    let be32 = |bytes: &[u8], at: usize, path: &Path| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(path, at as u64, "truncated header"))
    };
    if be32(&img_bytes, 0, &img_path)? != 0x0000_0803 {
        return Err(Error::format(&img_path, 0, "bad IDX image magic (want 0x00000803)"));
    }
    if be32(&lbl_bytes, 0, &lbl_path)? != 0x0000_0801 {
        return Err(Error::format(&lbl_path, 0, "bad IDX label magic (want 0x00000801)"));
    }
    let count = be32(&img_bytes, 4, &img_path)? as usize;
    let rows = be32(&img_bytes, 8, &img_path)? as usize;
    let cols = be32(&img_bytes, 12, &img_path)? as usize;
    if rows == 0 || cols == 0 || rows > INPUT_SIDE || cols > INPUT_SIDE {
        return Err(Error::format(
            &img_path,
            8,
            format!("unsupported image extent {}x{}", rows, cols),
        ));
    }
    let lbl_count = be32(&lbl_bytes, 4, &lbl_path)? as usize;
    if lbl_count != count {
        return Err(Error::format(
            &lbl_path,
            4,
            format!("{} labels for {} images", lbl_count, count),
        ));
    }
    let need = 16 + count * rows * cols;
    if img_bytes.len() < need {
        return Err(Error::format(
            &img_path,
            img_bytes.len() as u64,
            format!("truncated image payload: need {} bytes", need),
        ));
    }
    if lbl_bytes.len() < 8 + count {
        return Err(Error::format(
            &lbl_path,
            lbl_bytes.len() as u64,
            format!("truncated label payload: need {} bytes", 8 + count),
        ));
    }
    let (oy, ox) = ((INPUT_SIDE - rows) / 2, (INPUT_SIDE - cols) / 2);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = lbl_bytes[8 + i];
        if label as usize >= NUM_CLASSES {
            return Err(Error::format(
                &lbl_path,
                (8 + i) as u64,
                format!("label {} out of range for {} classes", label, NUM_CLASSES),
            ));
        }
        let base = 16 + i * rows * cols;
        let mut img = Image::black(INPUT_SIDE, INPUT_SIDE);
        for y in 0..rows {
            for x in 0..cols {
                let v = lit::<T>(img_bytes[base + y * cols + x] as f64);
                for c in 0..3 {
                    img.set(ox + x, oy + y, c, v);
                }
            }
        }
        images.push(img);
        labels.push(label);
    }
    Ok(Dataset { images, labels, split })
}

const CIFAR_RECORD: usize = 1 + 3 * 1024;

fn load_cifar10<T: Scalar>(dir: &Path, split: Split) -> Result<Dataset<T>> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{}.bin", i)).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                &path,
                bytes.len() as u64,
                format!("file size not a multiple of the {}-byte record", CIFAR_RECORD),
            ));
        }
        for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = chunk[0];
            if label as usize >= NUM_CLASSES {
                return Err(Error::format(
                    &path,
                    (rec * CIFAR_RECORD) as u64,
                    format!("label {} out of range for {} classes", label, NUM_CLASSES),
                ));
            }
            // channel-planar: 1024 R, 1024 G, 1024 B, row-major 32×32
            let mut img = Image::black(INPUT_SIDE, INPUT_SIDE);
            for c in 0..3 {
                for y in 0..INPUT_SIDE {
                    for x in 0..INPUT_SIDE {
                        img.set(x, y, c, lit::<T>(chunk[1 + c * 1024 + y * 32 + x] as f64));
                    }
                }
            }
            images.push(img);
            labels.push(label);
        }
    }
    Ok(Dataset { images, labels, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use tempfile::TempDir;

    fn tiny_dataset(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let label: u8 = rng.gen_range(0..NUM_CLASSES as u8);
            let mut img = Image::black(INPUT_SIDE, INPUT_SIDE);
            // class-coded stripe plus noise so training has signal
            for y in 0..INPUT_SIDE {
                for x in 0..INPUT_SIDE {
                    let stripe = if y / 3 == label as usize { 220.0 } else { 30.0 };
                    for c in 0..3 {
                        img.set(x, y, c, (stripe + rng.gen_range(-20.0f64..20.0)).clamp(0.0, 255.0));
                    }
                }
            }
            images.push(img);
            labels.push(label);
        }
        Dataset { images, labels, split: Split::Train }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelWeights::<f64>::init(&ModelConfig { seed: 5 });
        let b = ModelWeights::<f64>::init(&ModelConfig { seed: 5 });
        assert_eq!(a.conv1.data(), b.conv1.data());
        let c = ModelWeights::<f64>::init(&ModelConfig { seed: 6 });
        assert_ne!(a.conv1.data(), c.conv1.data());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = tiny_dataset(64, 3);
        let cfg = ModelConfig { seed: 11 };
        let (w1, r1) = train(&cfg, &data, 2, 0.05, 16, None).unwrap();
        let (w2, r2) = train(&cfg, &data, 2, 0.05, 16, None).unwrap();
        assert_eq!(w1.conv1.data(), w2.conv1.data());
        assert_eq!(w1.dense_w.data(), w2.dense_w.data());
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert!(r1.epoch_losses[1] < r1.epoch_losses[0]);
    }

    #[test]
    fn zero_lr_leaves_weights_at_init() {
        let data = tiny_dataset(8, 3);
        let cfg = ModelConfig { seed: 11 };
        let (w, _) = train(&cfg, &data, 1, 0.0, 4, None).unwrap();
        let init = ModelWeights::<f64>::init(&cfg);
        assert_eq!(w.conv1.data(), init.conv1.data());
        assert_eq!(w.dense_w.data(), init.dense_w.data());
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let data = Dataset::<f64> { images: vec![], labels: vec![], split: Split::Train };
        assert!(train(&ModelConfig { seed: 1 }, &data, 1, 0.1, 4, None).is_err());
    }

    #[test]
    fn untrained_model_near_chance() {
        // balanced labels over signal-free noise images
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 300;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut img = Image::black(INPUT_SIDE, INPUT_SIDE);
            for p in img.pixels_mut() {
                *p = rng.gen_range(0.0f64..255.0);
            }
            images.push(img);
            labels.push((i % NUM_CLASSES) as u8);
        }
        let data = Dataset { images, labels, split: Split::Test };
        let w = ModelWeights::<f64>::init(&ModelConfig { seed: 2 });
        let (acc, softmax) = evaluate(&w, &data).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "accuracy {}", acc);
        assert_eq!(softmax.len(), n);
    }

    #[test]
    fn evaluate_is_pure() {
        let data = tiny_dataset(10, 4);
        let w = ModelWeights::<f64>::init(&ModelConfig { seed: 2 });
        let a = evaluate(&w, &data).unwrap();
        let b = evaluate(&w, &data).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn weight_round_trip_preserves_predictions() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("w.iltf");
        let data = tiny_dataset(5, 7);
        let w = ModelWeights::<f64>::init(&ModelConfig { seed: 3 });
        save_weights(&w, &path).unwrap();
        let loaded = load_weights::<f64>(&path).unwrap();
        let (a, sa) = evaluate(&w, &data).unwrap();
        let (b, sb) = evaluate(&loaded, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    fn write_idx_pair(dir: &Path, images: &[[u8; 4]], labels: &[u8]) {
        // 2×2 images for compactness
        let mut img = vec![];
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for i in images {
            img.extend_from_slice(i);
        }
        let mut lbl = vec![];
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lbl.extend_from_slice(labels);
        fs::write(dir.join("train-images-idx3-ubyte"), img).unwrap();
        fs::write(dir.join("train-labels-idx1-ubyte"), lbl).unwrap();
    }

    #[test]
    fn idx_loader_contract() {
        let dir = TempDir::new().unwrap();
        let images: Vec<[u8; 4]> = (0..10).map(|i| [i as u8; 4]).collect();
        let labels: Vec<u8> = (0..10).collect();
        write_idx_pair(dir.path(), &images, &labels);
        let ds = load_dataset::<f64>(dir.path(), DataFormat::Idx, Split::Train).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.images[3].width(), 32);
        // centered 2×2 patch replicated across channels
        assert_eq!(ds.images[3].get(15, 15, 0), 3.0);
        assert_eq!(ds.images[3].get(15, 15, 2), 3.0);
        assert_eq!(ds.images[3].get(0, 0, 0), 0.0);
    }

    #[test]
    fn idx_label_out_of_range() {
        let dir = TempDir::new().unwrap();
        write_idx_pair(dir.path(), &[[0u8; 4]], &[12]);
        assert!(load_dataset::<f64>(dir.path(), DataFormat::Idx, Split::Train).is_err());
    }

    #[test]
    fn idx_bad_magic_names_offset() {
        let dir = TempDir::new().unwrap();
        write_idx_pair(dir.path(), &[[0u8; 4]], &[1]);
        let p = dir.path().join("train-images-idx3-ubyte");
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] = 0x99;
        fs::write(&p, bytes).unwrap();
        let err = load_dataset::<f64>(dir.path(), DataFormat::Idx, Split::Train).unwrap_err();
        assert!(err.to_string().contains("magic"), "{}", err);
    }

    #[test]
    fn cifar_record_layout() {
        let dir = TempDir::new().unwrap();
        // one record: label 7, R plane 10, G plane 20, B plane 30
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat(10u8).take(1024));
        rec.extend(std::iter::repeat(20u8).take(1024));
        rec.extend(std::iter::repeat(30u8).take(1024));
        fs::write(dir.path().join("test_batch.bin"), &rec).unwrap();
        let ds = load_dataset::<f64>(dir.path(), DataFormat::Cifar10, Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels[0], 7);
        assert_eq!(ds.images[0].get(5, 9, 0), 10.0);
        assert_eq!(ds.images[0].get(5, 9, 1), 20.0);
        assert_eq!(ds.images[0].get(5, 9, 2), 30.0);
    }

    #[test]
    fn cifar_truncated_record_is_rejected() {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("test_batch.bin"), vec![0u8; 100]).unwrap();
        assert!(load_dataset::<f64>(dir.path(), DataFormat::Cifar10, Split::Test).is_err());
    }
}
