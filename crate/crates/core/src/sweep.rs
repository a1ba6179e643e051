//! Transformation-magnitude sweeps against a frozen classifier.
//!
//! For a grid of magnitudes of one transform kind, every probed image is
//! transformed and evaluated; per-magnitude mean softmax vectors and mean
//! accuracy form the softmax traces from which invariance thresholds are
//! extracted.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{argmax, evaluate, Dataset, ModelWeights, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::transforms::TransformKind;

/// Aggregated sweep over one class and one transform kind.
#[derive(Clone, Debug)]
pub struct SweepResult<T> {
    pub kind: TransformKind,
    pub grid: Vec<f64>,
    pub class_id: u8,
    /// grid × n_classes mean softmax, fixed summation order.
    pub mean_softmax: Vec<Vec<T>>,
    pub mean_accuracy: Vec<f64>,
    pub n_images: usize,
    pub seed: u64,
    /// Per image: smallest grid magnitude (scanning away from identity)
    /// where the predicted class first differs from the clean prediction.
    pub first_argmax_change: Vec<Option<f64>>,
}

/// Index of the identity magnitude within the grid.
fn identity_index(kind: TransformKind, grid: &[f64]) -> Result<usize> {
    let id = kind.identity_magnitude();
    grid.iter().position(|&v| v == id).ok_or_else(|| {
        Error::Usage(format!(
            "sweep grid must contain the identity magnitude {} of {}",
            id,
            kind.name()
        ))
    })
}

/// Grid indices ordered by distance from the identity magnitude, identity
/// first; ties (two-sided grids) break toward the smaller magnitude.
fn scan_order(grid: &[f64], id_idx: usize) -> Vec<usize> {
    let id = grid[id_idx];
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (grid[a] - id).abs();
        let db = (grid[b] - id).abs();
        da.partial_cmp(&db).unwrap().then(grid[a].partial_cmp(&grid[b]).unwrap())
    });
    order
}

/// Runs one sweep. Noise transforms are seeded per image as
/// `seed + image index`; at the identity magnitude the clean evaluation is
/// reused so it stays bit-exact.
pub fn run_sweep<T: Scalar>(
    weights: &ModelWeights<T>,
    images: &Dataset<T>,
    kind: TransformKind,
    grid: &[f64],
    seed: u64,
) -> Result<SweepResult<T>> {
    if images.is_empty() {
        return Err(Error::Usage("run_sweep: empty image set".into()));
    }
    let class_id = images.labels[0];
    if images.labels.iter().any(|&l| l != class_id) {
        return Err(Error::Usage("run_sweep: images must all share one class".into()));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("run_sweep: grid must be non-empty and strictly increasing".into()));
    }
    let id_idx = identity_index(kind, grid)?;

    let n = images.len();
    let mut mean_softmax = Vec::with_capacity(grid.len());
    let mut mean_accuracy = Vec::with_capacity(grid.len());
    // preds[g][i] = predicted class of image i at grid point g
    let mut preds = vec![vec![0usize; n]; grid.len()];
    for (g, &v) in grid.iter().enumerate() {
        let mut sum = vec![T::zero(); NUM_CLASSES];
        let mut correct = 0usize;
        if g == id_idx {
            let (acc, softmaxes) = evaluate(weights, images)?;
            for (i, probs) in softmaxes.iter().enumerate() {
                preds[g][i] = argmax(probs);
                for (s, p) in sum.iter_mut().zip(probs) {
                    *s = *s + *p;
                }
            }
            mean_accuracy.push(acc);
        } else {
            for (i, img) in images.images.iter().enumerate() {
                let transformed = kind.apply(img, v, seed + i as u64)?;
                let probs = weights.predict(&transformed)?;
                let pred = argmax(&probs);
                preds[g][i] = pred;
                if pred == class_id as usize {
                    correct += 1;
                }
                for (s, p) in sum.iter_mut().zip(&probs) {
                    *s = *s + *p;
                }
            }
            mean_accuracy.push(correct as f64 / n as f64);
        }
        let inv = lit::<T>(1.0 / n as f64);
        mean_softmax.push(sum.into_iter().map(|s| s * inv).collect());
    }

    let order = scan_order(grid, id_idx);
    let first_argmax_change = (0..n)
        .map(|i| {
            let clean = preds[id_idx][i];
            order
                .iter()
                .skip(1)
                .find(|&&g| preds[g][i] != clean)
                .map(|&g| grid[g])
        })
        .collect();

    Ok(SweepResult {
        kind,
        grid: grid.to_vec(),
        class_id,
        mean_softmax,
        mean_accuracy,
        n_images: n,
        seed,
        first_argmax_change,
    })
}

/// Named per-class curves: the top-k classes individually, the rest
/// condensed to a pointwise-maximum "others" line.
#[derive(Clone, Debug)]
pub struct TopkCurves<T> {
    /// Class ids of the individual curves, highest peak first.
    pub classes: Vec<usize>,
    /// One curve per entry of `classes`, indexed like the grid.
    pub curves: Vec<Vec<T>>,
    /// Pointwise max over the non-top-k classes; empty when k = n_classes.
    pub others: Vec<T>,
}

/// Selects the k classes with the highest mean softmax anywhere on the grid.
pub fn summarize_topk<T: Scalar>(result: &SweepResult<T>, k: usize) -> Result<TopkCurves<T>> {
    let n_classes = result.mean_softmax[0].len();
    if k < 1 || k > n_classes {
        return Err(Error::Usage(format!(
            "summarize_topk: k must be in 1..={}, got {}",
            n_classes, k
        )));
    }
    let peak = |c: usize| -> T {
        result
            .mean_softmax
            .iter()
            .map(|row| row[c])
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    };
    let mut ranked: Vec<usize> = (0..n_classes).collect();
    ranked.sort_by(|&a, &b| peak(b).partial_cmp(&peak(a)).unwrap().then(a.cmp(&b)));
    let classes: Vec<usize> = ranked[..k].to_vec();
    let rest: Vec<usize> = ranked[k..].to_vec();
    let curves = classes
        .iter()
        .map(|&c| result.mean_softmax.iter().map(|row| row[c]).collect())
        .collect();
    let others = if rest.is_empty() {
        Vec::new()
    } else {
        result
            .mean_softmax
            .iter()
            .map(|row| {
                rest.iter()
                    .map(|&c| row[c])
                    .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
            })
            .collect()
    };
    Ok(TopkCurves { classes, curves, others })
}

/// Smallest magnitude, scanning away from the identity, where mean accuracy
/// drops below `tau` times the identity accuracy; `None` if never crossed.
pub fn extract_threshold<T: Scalar>(result: &SweepResult<T>, tau: f64) -> Result<Option<f64>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Usage(format!("extract_threshold: tau must be in (0,1], got {}", tau)));
    }
    let id_idx = identity_index(result.kind, &result.grid)?;
    let clean = result.mean_accuracy[id_idx];
    Ok(scan_order(&result.grid, id_idx)
        .into_iter()
        .skip(1)
        .find(|&g| result.mean_accuracy[g] < tau * clean)
        .map(|g| result.grid[g]))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSidecar {
    pub kind: String,
    pub class_id: u8,
    pub n_images: usize,
    pub seed: u64,
    pub tau: f64,
    pub threshold: Option<f64>,
    pub first_argmax_change: Vec<Option<f64>>,
}

fn sig9(v: f64) -> String {
    format!("{:.8e}", v)
}

/// Writes `sweep.csv` (curves + accuracy, 9 significant digits) and
/// `sweep.json` (provenance and threshold) under `out_dir`.
pub fn export_result<T: Scalar>(
    result: &SweepResult<T>,
    curves: &TopkCurves<T>,
    tau: f64,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv = String::from("v");
    for &c in &curves.classes {
        csv.push_str(&format!(",class_{}", c));
    }
    csv.push_str(",others,accuracy\n");
    for (g, &v) in result.grid.iter().enumerate() {
        csv.push_str(&sig9(v));
        for curve in &curves.curves {
            csv.push(',');
            csv.push_str(&sig9(curve[g].to_f64().unwrap()));
        }
        csv.push(',');
        let others = curves.others.get(g).map(|o| o.to_f64().unwrap()).unwrap_or(0.0);
        csv.push_str(&sig9(others));
        csv.push(',');
        csv.push_str(&sig9(result.mean_accuracy[g]));
        csv.push('\n');
    }
    let csv_path = out_dir.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let sidecar = SweepSidecar {
        kind: result.kind.name().to_string(),
        class_id: result.class_id,
        n_images: result.n_images,
        seed: result.seed,
        tau,
        threshold: extract_threshold(result, tau)?,
        first_argmax_change: result.first_argmax_change.clone(),
    };
    let json_path = out_dir.join("sweep.json");
    let body = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}
