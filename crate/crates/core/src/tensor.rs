//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation whose inputs are
//! tape-tracked. [`Tape::backward`] replays the records in reverse and
//! accumulates gradients per node. One training step owns one tape.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Handle of a recorded node on a tape.
pub type NodeId = usize;

/// Dense n-dimensional array in row-major order, optionally tied to a tape.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    node: Option<NodeId>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} does not describe {} elements", shape, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor { shape, data, node: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel], node: None }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Detached copy: same values, no tape association.
    pub fn detached(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), node: None }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    inputs: Vec<Option<NodeId>>,
    len: usize,
    backward: BackwardFn<T>,
}

/// Gradients of one backward pass, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. a tracked tensor, if it received one.
    pub fn wrt(&self, t: &Tensor<T>) -> Option<&[T]> {
        t.node.and_then(|id| self.grads.get(id).and_then(|g| g.as_deref()))
    }
}

/// Records operations for one forward pass; single-owner per training step.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, inputs: Vec<Option<NodeId>>, len: usize, backward: BackwardFn<T>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { inputs, len, backward });
        nodes.len() - 1
    }

    /// Registers a tensor as a tracked leaf (gradient target).
    pub fn var(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(vec![], t.data.len(), Box::new(|_| vec![]));
        Tensor { shape: t.shape.clone(), data: t.data.clone(), node: Some(id) }
    }

    /// Records a custom operation. `backward` maps the output gradient to
    /// one gradient vector per input, in input order.
    pub fn custom(
        &self,
        inputs: &[&Tensor<T>],
        shape: Vec<usize>,
        data: Vec<T>,
        backward: impl Fn(&[T]) -> Vec<Vec<T>> + 'static,
    ) -> Tensor<T> {
        let tracked = inputs.iter().any(|t| t.is_tracked());
        let node = if tracked {
            let ids: Vec<_> = inputs.iter().map(|t| t.node).collect();
            Some(self.push(ids, data.len(), Box::new(backward)))
        } else {
            None
        };
        Tensor { shape, data, node }
    }

    /// Reverse accumulation from a scalar loss recorded on this tape.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let root = loss
            .node
            .ok_or_else(|| Error::Usage("backward: loss is not recorded on the tape".into()))?;
        if loss.data.len() != 1 {
            return Err(Error::Usage("backward: loss must be scalar".into()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[root] = Some(vec![T::one()]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            debug_assert_eq!(g.len(), node.len);
            if !node.inputs.is_empty() {
                let contributions = (node.backward)(&g);
                debug_assert_eq!(contributions.len(), node.inputs.len());
                for (slot, contrib) in node.inputs.iter().zip(contributions) {
                    let Some(input_id) = slot else { continue };
                    let buf = grads[*input_id]
                        .get_or_insert_with(|| vec![T::zero(); nodes[*input_id].len]);
                    for (a, b) in buf.iter_mut().zip(&contrib) {
                        *a = *a + *b;
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ── Elementwise and reduction ops ──────────────────────────────

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape != b.shape {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", a.shape, b.shape),
            });
        }
        let data: Vec<T> = a.data.iter().zip(&b.data).map(|(x, y)| *x + *y).collect();
        ensure_finite("add", &data)?;
        Ok(self.custom(&[a, b], a.shape.clone(), data, |g| vec![g.to_vec(), g.to_vec()]))
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape != b.shape {
            return Err(Error::Shape {
                op: "sub",
                detail: format!("{:?} vs {:?}", a.shape, b.shape),
            });
        }
        let data: Vec<T> = a.data.iter().zip(&b.data).map(|(x, y)| *x - *y).collect();
        ensure_finite("sub", &data)?;
        Ok(self.custom(&[a, b], a.shape.clone(), data, |g| {
            vec![g.to_vec(), g.iter().map(|v| -*v).collect()]
        }))
    }

    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape != b.shape {
            return Err(Error::Shape {
                op: "mul",
                detail: format!("{:?} vs {:?}", a.shape, b.shape),
            });
        }
        let data: Vec<T> = a.data.iter().zip(&b.data).map(|(x, y)| *x * *y).collect();
        ensure_finite("mul", &data)?;
        let (av, bv) = (a.data.clone(), b.data.clone());
        Ok(self.custom(&[a, b], a.shape.clone(), data, move |g| {
            vec![
                g.iter().zip(&bv).map(|(gi, y)| *gi * *y).collect(),
                g.iter().zip(&av).map(|(gi, x)| *gi * *x).collect(),
            ]
        }))
    }

    pub fn scale(&self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        let data: Vec<T> = a.data.iter().map(|x| *x * c).collect();
        ensure_finite("scale", &data)?;
        Ok(self.custom(&[a], a.shape.clone(), data, move |g| {
            vec![g.iter().map(|gi| *gi * c).collect()]
        }))
    }

    pub fn sum(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let total = a.data.iter().copied().fold(T::zero(), |acc, v| acc + v);
        ensure_finite("sum", &[total])?;
        let n = a.data.len();
        Ok(self.custom(&[a], vec![1], vec![total], move |g| vec![vec![g[0]; n]]))
    }

    pub fn relu(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let data: Vec<T> = a.data.iter().map(|x| x.max(T::zero())).collect();
        let mask: Vec<bool> = a.data.iter().map(|x| *x > T::zero()).collect();
        Ok(self.custom(&[a], a.shape.clone(), data, move |g| {
            vec![g
                .iter()
                .zip(&mask)
                .map(|(gi, m)| if *m { *gi } else { T::zero() })
                .collect()]
        }))
    }

    /// Clamps entries into [lo, hi]; gradient is 1 inside, 0 outside.
    pub fn clamp(&self, a: &Tensor<T>, lo: T, hi: T) -> Result<Tensor<T>> {
        let data: Vec<T> = a.data.iter().map(|x| x.max(lo).min(hi)).collect();
        let mask: Vec<bool> = a.data.iter().map(|x| *x >= lo && *x <= hi).collect();
        Ok(self.custom(&[a], a.shape.clone(), data, move |g| {
            vec![g
                .iter()
                .zip(&mask)
                .map(|(gi, m)| if *m { *gi } else { T::zero() })
                .collect()]
        }))
    }

    pub fn reshape(&self, a: &Tensor<T>, shape: Vec<usize>) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != a.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} cannot hold {} elements", shape, a.data.len()),
            });
        }
        Ok(self.custom(&[a], shape, a.data.clone(), |g| vec![g.to_vec()]))
    }

    /// Appends one constant row to an m×n matrix; gradient flows to the
    /// original rows only.
    pub fn append_row(&self, a: &Tensor<T>, row: &[T]) -> Result<Tensor<T>> {
        let [m, n] = a.shape[..] else {
            return Err(Error::Shape {
                op: "append_row",
                detail: format!("expected matrix, got {:?}", a.shape),
            });
        };
        if row.len() != n {
            return Err(Error::Shape {
                op: "append_row",
                detail: format!("row of {} for {} columns", row.len(), n),
            });
        }
        let mut data = a.data.clone();
        data.extend_from_slice(row);
        let keep = m * n;
        Ok(self.custom(&[a], vec![m + 1, n], data, move |g| vec![g[..keep].to_vec()]))
    }

    // ── Linear algebra ─────────────────────────────────────────────

    pub fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let ([m, k], [k2, n]) = (
            match a.shape[..] {
                [m, k] => [m, k],
                _ => {
                    return Err(Error::Shape {
                        op: "matmul",
                        detail: format!("lhs is not a matrix: {:?}", a.shape),
                    })
                }
            },
            match b.shape[..] {
                [k2, n] => [k2, n],
                _ => {
                    return Err(Error::Shape {
                        op: "matmul",
                        detail: format!("rhs is not a matrix: {:?}", b.shape),
                    })
                }
            },
        );
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{}x{} times {}x{}", m, k, k2, n),
            });
        }
        let data = matmul_raw(&a.data, &b.data, m, k, n);
        ensure_finite("matmul", &data)?;
        let (av, bv) = (a.data.clone(), b.data.clone());
        Ok(self.custom(&[a, b], vec![m, n], data, move |g| {
            // dA = G·Bᵀ, dB = Aᵀ·G
            let mut da = vec![T::zero(); m * k];
            let mut db = vec![T::zero(); k * n];
            for i in 0..m {
                for j in 0..n {
                    let gij = g[i * n + j];
                    for p in 0..k {
                        da[i * k + p] = da[i * k + p] + gij * bv[p * n + j];
                        db[p * n + j] = db[p * n + j] + av[i * k + p] * gij;
                    }
                }
            }
            vec![da, db]
        }))
    }

    // ── CNN ops ────────────────────────────────────────────────────

    /// 2-D cross-correlation (no kernel flip) over a C×H×W input.
    pub fn conv2d(
        &self,
        input: &Tensor<T>,
        kernels: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let dims = ConvDims::infer(input.shape(), kernels.shape(), stride, padding)?;
        let data = conv2d_raw(&input.data, &kernels.data, &dims);
        ensure_finite("conv2d", &data)?;
        let (xv, kv) = (input.data.clone(), kernels.data.clone());
        Ok(self.custom(
            &[input, kernels],
            vec![dims.c_out, dims.oh, dims.ow],
            data,
            move |g| {
                let (dx, dk) = conv2d_backward_raw(g, &xv, &kv, &dims);
                vec![dx, dk]
            },
        ))
    }

    /// Adds a per-channel bias to a C×H×W tensor.
    pub fn add_channel_bias(&self, input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, h, w] = input.shape[..] else {
            return Err(Error::Shape {
                op: "add_channel_bias",
                detail: format!("expected C×H×W, got {:?}", input.shape),
            });
        };
        if bias.shape != [c] {
            return Err(Error::Shape {
                op: "add_channel_bias",
                detail: format!("bias {:?} for {} channels", bias.shape, c),
            });
        }
        let plane = h * w;
        let mut data = input.data.clone();
        for ci in 0..c {
            let b = bias.data[ci];
            for v in &mut data[ci * plane..(ci + 1) * plane] {
                *v = *v + b;
            }
        }
        ensure_finite("add_channel_bias", &data)?;
        Ok(self.custom(&[input, bias], input.shape.clone(), data, move |g| {
            let db: Vec<T> = (0..c)
                .map(|ci| {
                    g[ci * plane..(ci + 1) * plane]
                        .iter()
                        .copied()
                        .fold(T::zero(), |acc, v| acc + v)
                })
                .collect();
            vec![g.to_vec(), db]
        }))
    }

    /// Non-overlapping max pooling; gradient routes to the first (row-major)
    /// maximum of each window.
    pub fn maxpool2d(&self, input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
        let [c, h, w] = input.shape[..] else {
            return Err(Error::Shape {
                op: "maxpool2d",
                detail: format!("expected C×H×W, got {:?}", input.shape),
            });
        };
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::Shape {
                op: "maxpool2d",
                detail: format!("window {} does not divide {}x{}", window, h, w),
            });
        }
        let (oh, ow) = (h / window, w / window);
        let mut data = vec![T::zero(); c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = ci * h * w + (oy * window) * w + ox * window;
                    let mut best = input.data[best_idx];
                    for wy in 0..window {
                        for wx in 0..window {
                            let idx = ci * h * w + (oy * window + wy) * w + ox * window + wx;
                            if input.data[idx] > best {
                                best = input.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    data[ci * oh * ow + oy * ow + ox] = best;
                    argmax[ci * oh * ow + oy * ow + ox] = best_idx;
                }
            }
        }
        let in_len = input.data.len();
        Ok(self.custom(&[input], vec![c, oh, ow], data, move |g| {
            let mut dx = vec![T::zero(); in_len];
            for (gi, &idx) in g.iter().zip(&argmax) {
                dx[idx] = dx[idx] + *gi;
            }
            vec![dx]
        }))
    }

    // ── Classification head ────────────────────────────────────────

    /// Numerically stable softmax over a vector of logits.
    pub fn softmax(&self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        if logits.shape.len() != 1 || logits.data.is_empty() {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("expected non-empty vector, got {:?}", logits.shape),
            });
        }
        let probs = softmax_raw(&logits.data);
        ensure_finite("softmax", &probs)?;
        let pv = probs.clone();
        Ok(self.custom(&[logits], logits.shape.clone(), probs, move |g| {
            let dot = g
                .iter()
                .zip(&pv)
                .map(|(gi, pi)| *gi * *pi)
                .fold(T::zero(), |acc, v| acc + v);
            vec![g.iter().zip(&pv).map(|(gi, pi)| *pi * (*gi - dot)).collect()]
        }))
    }

    /// −log(probs[label] + ε) with ε = 1e−12.
    pub fn cross_entropy(&self, probs: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
        if label >= probs.data.len() {
            return Err(Error::Index {
                op: "cross_entropy",
                index: label,
                limit: probs.data.len(),
            });
        }
        let eps = lit::<T>(1e-12);
        let p = probs.data[label] + eps;
        let loss = -p.ln();
        ensure_finite("cross_entropy", &[loss])?;
        let n = probs.data.len();
        Ok(self.custom(&[probs], vec![1], vec![loss], move |g| {
            let mut dp = vec![T::zero(); n];
            dp[label] = -g[0] / p;
            vec![dp]
        }))
    }
}

/// One SGD update: p ← p − lr·grad(p). Each pair is (persistent parameter,
/// its tracked mirror on the consumed tape). Fails if any mirror has no
/// gradient.
pub fn sgd_step<T: Scalar>(
    params: &mut [(&mut Tensor<T>, &Tensor<T>)],
    grads: &Gradients<T>,
    lr: T,
) -> Result<()> {
    for (_, tracked) in params.iter() {
        if grads.wrt(tracked).is_none() {
            return Err(Error::Usage("sgd_step: parameter has no gradient".into()));
        }
    }
    for (p, tracked) in params.iter_mut() {
        let g = grads.wrt(tracked).unwrap();
        for (pv, gv) in p.data_mut().iter_mut().zip(g) {
            *pv = *pv - lr * *gv;
        }
    }
    Ok(())
}

// ── Raw kernels (shared by tape ops and inference fast paths) ──────

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * *bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_raw<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(logits[0], T::max);
    let exps: Vec<T> = logits.iter().map(|v| (*v - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |acc, v| acc + v);
    exps.into_iter().map(|v| v / total).collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn infer(
        input: &[usize],
        kernels: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<ConvDims> {
        let [c_in, h, w] = input[..] else {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("input must be C×H×W, got {:?}", input),
            });
        };
        let [c_out, kc, kh, kw] = kernels[..] else {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("kernels must be Cout×Cin×kh×kw, got {:?}", kernels),
            });
        };
        if kc != c_in {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("kernel channels {} vs input channels {}", kc, c_in),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("kernel extents must be odd, got {}x{}", kh, kw),
            });
        }
        if stride == 0 {
            return Err(Error::Shape { op: "conv2d", detail: "stride must be positive".into() });
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0
        {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "output extent not integral: input {}x{}, kernel {}x{}, stride {}, padding {}",
                    h, w, kh, kw, stride, padding
                ),
            });
        }
        Ok(ConvDims {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh: (span_h - kh) / stride + 1,
            ow: (span_w - kw) / stride + 1,
        })
    }
}

pub(crate) fn conv2d_raw<T: Scalar>(x: &[T], k: &[T], d: &ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.c_out * d.oh * d.ow];
    for co in 0..d.c_out {
        for ci in 0..d.c_in {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = k[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = &x[(ci * d.h + iy as usize) * d.w..];
                        let orow = &mut out[(co * d.oh + oy) * d.ow..(co * d.oh + oy + 1) * d.ow];
                        if d.stride == 1 {
                            // valid ox satisfy 0 <= ox + kx - pad < w
                            let lo = d.padding.saturating_sub(kx);
                            let hi = (d.w + d.padding - kx).min(d.ow);
                            let shift = kx as isize - d.padding as isize;
                            for ox in lo..hi {
                                let ix = (ox as isize + shift) as usize;
                                orow[ox] = orow[ox] + wv * xrow[ix];
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if ix >= 0 && ix < d.w as isize {
                                    *o = *o + wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_raw<T: Scalar>(g: &[T], x: &[T], k: &[T], d: &ConvDims) -> (Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); d.c_in * d.h * d.w];
    let mut dk = vec![T::zero(); d.c_out * d.c_in * d.kh * d.kw];
    for co in 0..d.c_out {
        for ci in 0..d.c_in {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let kidx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                    let wv = k[kidx];
                    let mut dkv = T::zero();
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xoff = (ci * d.h + iy as usize) * d.w;
                        let grow = &g[(co * d.oh + oy) * d.ow..(co * d.oh + oy + 1) * d.ow];
                        for (ox, gv) in grow.iter().enumerate() {
                            let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                            if ix >= 0 && ix < d.w as isize {
                                let xi = xoff + ix as usize;
                                dkv = dkv + *gv * x[xi];
                                dx[xi] = dx[xi] + *gv * wv;
                            }
                        }
                    }
                    dk[kidx] = dk[kidx] + dkv;
                }
            }
        }
    }
    (dx, dk)
}
