//! Deterministic synthetic glyph dataset in the MNIST binary layout.
//!
//! Ten 28×28 grayscale shape classes with seeded per-sample jitter, written
//! as IDX files so the regular dataset loader exercises the real parser.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnn::Split;
use crate::error::{Error, Result};

pub const GLYPH_SIDE: usize = 28;

/// Rasterizes one glyph class at the given jitter offset and stroke value.
fn draw_glyph(class: u8, dx: i32, dy: i32, ink: u8) -> [u8; GLYPH_SIDE * GLYPH_SIDE] {
    let mut img = [0u8; GLYPH_SIDE * GLYPH_SIDE];
    let n = GLYPH_SIDE as i32;
    let c = n / 2;
    let mut put = |x: i32, y: i32| {
        let (x, y) = (x + dx, y + dy);
        if (0..n).contains(&x) && (0..n).contains(&y) {
            img[(y * n + x) as usize] = ink;
        }
    };
    let thick = 2i32;
    match class {
        // horizontal bar
        0 => {
            for y in c - thick..=c + thick {
                for x in 4..n - 4 {
                    put(x, y);
                }
            }
        }
        // vertical bar
        1 => {
            for x in c - thick..=c + thick {
                for y in 4..n - 4 {
                    put(x, y);
                }
            }
        }
        // filled square
        2 => {
            for y in c - 6..=c + 6 {
                for x in c - 6..=c + 6 {
                    put(x, y);
                }
            }
        }
        // hollow square
        3 => {
            for y in 5..n - 5 {
                for x in 5..n - 5 {
                    if y < 5 + thick || y >= n - 5 - thick || x < 5 + thick || x >= n - 5 - thick {
                        put(x, y);
                    }
                }
            }
        }
        // main diagonal stroke
        4 => {
            for t in 4..n - 4 {
                for w in -thick..=thick {
                    put(t + w, t);
                }
            }
        }
        // anti-diagonal stroke
        5 => {
            for t in 4..n - 4 {
                for w in -thick..=thick {
                    put(n - 1 - t + w, t);
                }
            }
        }
        // plus sign
        6 => {
            for y in c - thick..=c + thick {
                for x in 3..n - 3 {
                    put(x, y);
                    put(y, x);
                }
            }
        }
        // filled disk
        7 => {
            for y in 0..n {
                for x in 0..n {
                    if (x - c) * (x - c) + (y - c) * (y - c) <= 64 {
                        put(x, y);
                    }
                }
            }
        }
        // ring
        8 => {
            for y in 0..n {
                for x in 0..n {
                    let r2 = (x - c) * (x - c) + (y - c) * (y - c);
                    if (36..=81).contains(&r2) {
                        put(x, y);
                    }
                }
            }
        }
        // corner wedge
        9 => {
            for y in 4..n - 4 {
                for x in 4..n - 4 {
                    if x + y < n - 4 {
                        put(x, y);
                    }
                }
            }
        }
        other => panic!("glyph class out of range: {}", other),
    }
    img
}

/// Renders `n` jittered samples, labels cycling over the ten classes.
pub fn generate(n: usize, seed: u64) -> (Vec<[u8; GLYPH_SIDE * GLYPH_SIDE]>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        let dx = rng.gen_range(-2i32..=2);
        let dy = rng.gen_range(-2i32..=2);
        let ink = rng.gen_range(170u8..=255);
        let mut img = draw_glyph(class, dx, dy, ink);
        // sparse salt noise so samples within a class differ
        for _ in 0..12 {
            let p = rng.gen_range(0..img.len());
            img[p] = img[p].saturating_add(rng.gen_range(0u8..=60));
        }
        images.push(img);
        labels.push(class);
    }
    (images, labels)
}

fn idx_images(images: &[[u8; GLYPH_SIDE * GLYPH_SIDE]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * GLYPH_SIDE * GLYPH_SIDE);
    out.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(GLYPH_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(GLYPH_SIDE as u32).to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes one split of a generated dataset into `dir` in the MNIST IDX
/// layout (`train-*` or `t10k-*` file names).
pub fn write_split(dir: &Path, split: Split, n: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (images, labels) = generate(n, seed);
    let (img_name, lbl_name) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let img_path = dir.join(img_name);
    fs::write(&img_path, idx_images(&images)).map_err(|e| Error::io(&img_path, e))?;
    let lbl_path = dir.join(lbl_name);
    fs::write(&lbl_path, idx_labels(&labels)).map_err(|e| Error::io(&lbl_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{load_dataset, DataFormat};

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let (a, la) = generate(40, 7);
        let (b, lb) = generate(40, 7);
        assert_eq!(la, lb);
        assert!(a.iter().zip(&b).all(|(x, y)| x[..] == y[..]));
        for c in 0..10u8 {
            assert_eq!(la.iter().filter(|&&l| l == c).count(), 4);
        }
        let (c, _) = generate(40, 8);
        assert!(a.iter().zip(&c).any(|(x, y)| x[..] != y[..]));
    }

    #[test]
    fn written_split_loads_through_idx_parser() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), Split::Test, 30, 5).unwrap();
        let data = load_dataset::<f64>(dir.path(), DataFormat::Idx, Split::Test).unwrap();
        assert_eq!(data.len(), 30);
        assert_eq!(data.images[0].width(), 32);
        assert_eq!(data.labels[9], 9);
        // padded border stays black, glyph ink lands inside
        assert_eq!(data.images[0].get(0, 0, 0), 0.0);
        assert!(data.images[0].pixels().iter().any(|&p| p > 100.0));
    }
}
