//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward computation. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! exact gradients for every parameter and variable that influenced it.
//! Graphs are single-use: build one per forward pass and drop it afterwards.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamStore, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    SpectralNorm {
        w: Var,
        u: Vec<f32>,
        v: Vec<f32>,
        sigma: f32,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleShift {
        x: Var,
        scale: f32,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    LogClamped {
        x: Var,
        lo: f32,
        hi: f32,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds sample `b` of `x` into a `[C*kh*kw, out_h*out_w]` patch matrix.
    fn im2col(&self, x: &[f32], b: usize, col: &mut [f32]) {
        let cols = self.col_cols();
        let plane = self.in_h * self.in_w;
        let base = b * self.in_ch * plane;
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            dst[oy * self.out_w + ox] =
                                if iy >= 0 && ix >= 0 && (iy as usize) < self.in_h && (ix as usize) < self.in_w {
                                    x[base + c * plane + iy as usize * self.in_w + ix as usize]
                                } else {
                                    0.0
                                };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back into `dx`.
    fn col2im(&self, col: &[f32], b: usize, dx: &mut [f32]) {
        let cols = self.col_cols();
        let plane = self.in_h * self.in_w;
        let base = b * self.in_ch * plane;
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.in_w {
                                continue;
                            }
                            dx[base + c * plane + iy as usize * self.in_w + ix as usize] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a convolution along one axis, or `None` if the window does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id {
            return Err(Error::Graph("variable belongs to a different (detached) graph".into()));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| Error::Graph("dangling variable".into()))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("variable of another graph").value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers parameter `name` from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let mut t = store.require(name)?.clone();
        t.clear_grad();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers a parameter as a constant (no gradient flows into it).
    pub fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let mut t = store.require(name)?.clone();
        t.clear_grad();
        Ok(self.input(t))
    }

    /// `y = x Wᵀ + b` with `x: [B, in]`, `W: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        let ws = self.node(w)?.value.shape().to_vec();
        if ws.len() != 2 || xs.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(
                "affine input",
                &[xs.first().copied().unwrap_or(0), ws.get(1).copied().unwrap_or(0)],
                &xs,
            ));
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            let bs = self.node(b)?.value.shape();
            if bs != [out] {
                return Err(Error::shape("affine bias", &[out], bs));
            }
        }
        let xv = self.nodes[x.index].value.data();
        let wv = self.nodes[w.index].value.data();
        let mut y = vec![0.0f32; batch * out];
        for bi in 0..batch {
            let xr = &xv[bi * inp..(bi + 1) * inp];
            for o in 0..out {
                y[bi * out + o] = dot(xr, &wv[o * inp..(o + 1) * inp]);
            }
        }
        if let Some(b) = b {
            let bv = self.nodes[b.index].value.data();
            for row in y.chunks_mut(out) {
                for (yi, bi) in row.iter_mut().zip(bv) {
                    *yi += bi;
                }
            }
        }
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(Tensor::new([batch, out], y)?, Op::Affine { x, w, b }, rg))
    }

    /// 2D convolution, `x: [B, C, H, W]`, `w: [O, C, kh, kw]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.node(x)?.value.shape().to_vec();
        let ws = self.node(w)?.value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d input",
                &[0, ws.get(1).copied().unwrap_or(0), 0, 0],
                &xs,
            ));
        }
        let (oh, ow) = match (
            conv_output_extent(xs[2], ws[2], stride, pad),
            conv_output_extent(xs[3], ws[3], stride, pad),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::shape("conv2d window", &ws[2..], &xs[2..]));
            }
        };
        let geom = ConvGeometry {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ws[0],
            kh: ws[2],
            kw: ws[3],
            out_h: oh,
            out_w: ow,
            stride,
            pad,
        };
        if let Some(b) = b {
            let bs = self.node(b)?.value.shape();
            if bs != [geom.out_ch] {
                return Err(Error::shape("conv2d bias", &[geom.out_ch], bs));
            }
        }
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let xv = self.nodes[x.index].value.data();
        let wv = self.nodes[w.index].value.data();
        let bv = b.map(|b| self.nodes[b.index].value.data());
        let mut col = vec![0.0f32; rows * cols];
        let mut y = vec![0.0f32; geom.batch * geom.out_ch * cols];
        for bi in 0..geom.batch {
            geom.im2col(xv, bi, &mut col);
            let out = &mut y[bi * geom.out_ch * cols..(bi + 1) * geom.out_ch * cols];
            for o in 0..geom.out_ch {
                let dst = &mut out[o * cols..(o + 1) * cols];
                if let Some(bv) = bv {
                    dst.fill(bv[o]);
                }
                for q in 0..rows {
                    axpy(wv[o * rows + q], &col[q * cols..(q + 1) * cols], dst);
                }
            }
        }
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        let t = Tensor::new([geom.batch, geom.out_ch, oh, ow], y)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        let n = self.node(x)?;
        let shape = n.value.shape().to_vec();
        let y = n
            .value
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(shape, y)?, Op::LeakyRelu { x, slope }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x)?;
        let shape = n.value.shape().to_vec();
        let y = n.value.data().iter().map(|&v| sigmoid(v)).collect();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(shape, y)?, Op::Sigmoid { x }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x)?;
        let shape = n.value.shape().to_vec();
        let width = *shape.last().ok_or_else(|| Error::shape("softmax", &[1], &shape))?;
        let mut y = n.value.data().to_vec();
        for row in y.chunks_mut(width) {
            softmax_in_place(row);
        }
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(x)?;
        let t = n.value.clone().reshape(shape.to_vec())?;
        let rg = n.requires_grad;
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        let batch = *shape.first().ok_or_else(|| Error::shape("flatten", &[1], &shape))?;
        let rest = shape[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    /// Channel-wise concatenation of `[B, Ca, H, W]` and `[B, Cb, H, W]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.node(a)?.value.shape().to_vec();
        let sb = self.node(b)?.value.shape().to_vec();
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat_channels", &sa, &sb));
        }
        let plane = sa[2] * sa[3];
        let (ca, cb) = (sa[1] * plane, sb[1] * plane);
        let av = self.nodes[a.index].value.data();
        let bv = self.nodes[b.index].value.data();
        let mut y = Vec::with_capacity(sa[0] * (ca + cb));
        for i in 0..sa[0] {
            y.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            y.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        let rg = self.needs(&[a, b]);
        let t = Tensor::new([sa[0], sa[1] + sb[1], sa[2], sa[3]], y)?;
        Ok(self.push(t, Op::ConcatChannels { a, b }, rg))
    }

    /// Nearest-neighbour upsampling of `[B, C, H, W]` by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let n = self.node(x)?;
        let s = n.value.shape().to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(Error::shape("upsample", &[0, 0, 0, 0], &s));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let xv = n.value.data();
        let mut y = vec![0.0f32; s[0] * s[1] * oh * ow];
        for p in 0..s[0] * s[1] {
            for i in 0..oh {
                for j in 0..ow {
                    y[p * oh * ow + i * ow + j] = xv[p * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        let rg = n.requires_grad;
        let t = Tensor::new([s[0], s[1], oh, ow], y)?;
        Ok(self.push(t, Op::Upsample { x, factor }, rg))
    }

    /// Non-overlapping `k × k` average pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let n = self.node(x)?;
        let s = n.value.shape().to_vec();
        if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
            return Err(Error::shape("avg_pool", &[0, 0, k, k], &s));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let xv = n.value.data();
        let norm = 1.0 / (k * k) as f32;
        let mut y = vec![0.0f32; s[0] * s[1] * oh * ow];
        for p in 0..s[0] * s[1] {
            for i in 0..h {
                for j in 0..w {
                    y[p * oh * ow + (i / k) * ow + j / k] += xv[p * h * w + i * w + j] * norm;
                }
            }
        }
        let rg = n.requires_grad;
        let t = Tensor::new([s[0], s[1], oh, ow], y)?;
        Ok(self.push(t, Op::AvgPool { x, k }, rg))
    }

    /// `W / σ` where `σ = uᵀ W v` for fixed unit vectors `u`, `v`
    /// (`W` viewed as `[shape[0], rest]`). Gradient flows through `σ`.
    pub fn spectral_norm(&mut self, w: Var, u: Vec<f32>, v: Vec<f32>, sigma: f32) -> Result<Var> {
        let n = self.node(w)?;
        let s = n.value.shape().to_vec();
        let rows = s.first().copied().unwrap_or(0);
        let cols = n.value.numel() / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return Err(Error::shape(
                "spectral_norm vectors",
                &[rows, cols],
                &[u.len(), v.len()],
            ));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::DegenerateMatrix { sigma: sigma as f64 });
        }
        let y = n.value.data().iter().map(|x| x / sigma).collect();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(s, y)?, Op::SpectralNorm { w, u, v, sigma }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |_, _| Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, |_, _| Op::Mul { a, b })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: impl Fn(Var, Var) -> Op) -> Result<Var> {
        let sa = self.node(a)?.value.shape().to_vec();
        let sb = self.node(b)?.value.shape().to_vec();
        if sa != sb {
            return Err(Error::shape("elementwise", &sa, &sb));
        }
        let av = self.nodes[a.index].value.data();
        let bv = self.nodes[b.index].value.data();
        let y = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(sa, y)?, op(a, b), rg))
    }

    /// `scale · x + shift`, elementwise.
    pub fn scale_shift(&mut self, x: Var, scale: f32, shift: f32) -> Result<Var> {
        let n = self.node(x)?;
        let shape = n.value.shape().to_vec();
        let y = n.value.data().iter().map(|v| scale * v + shift).collect();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(shape, y)?, Op::ScaleShift { x, scale }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x)?;
        let s: f64 = n.value.data().iter().map(|&v| v as f64).sum();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum { x }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x)?;
        if n.value.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s: f64 = n.value.data().iter().map(|&v| v as f64).sum();
        let rg = n.requires_grad;
        let m = (s / n.value.numel() as f64) as f32;
        Ok(self.push(Tensor::scalar(m), Op::Mean { x }, rg))
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        let n = self.node(x)?;
        let shape = n.value.shape().to_vec();
        let y = n.value.data().iter().map(|v| v.clamp(lo, hi).ln()).collect();
        let rg = n.requires_grad;
        Ok(self.push(Tensor::new(shape, y)?, Op::LogClamped { x, lo, hi }, rg))
    }

    /// Mean cross-entropy of `softmax(logits)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = self.node(logits)?;
        let s = n.value.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape("softmax_cross_entropy", &[labels.len(), 0], s));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut total = 0.0f64;
        for (row, &label) in n.value.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>().ln() + max as f64;
            total += lse - row[label] as f64;
        }
        let rg = n.requires_grad;
        let loss = (total / labels.len() as f64) as f32;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        root.value.check_finite("loss")?;
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(vec![1.0]);

        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if !self.nodes[v.index].requires_grad {
                return;
            }
            let slot = grads[v.index].get_or_insert_with(|| vec![0.0; self.nodes[v.index].value.numel()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.index].value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::Affine { x, w, b } => {
                let xs = self.nodes[x.index].value.shape();
                let (batch, inp) = (xs[0], xs[1]);
                let out = self.nodes[w.index].value.shape()[0];
                let (xv, wv) = (val(x), val(w));
                acc(x, &mut |dx| {
                    for bi in 0..batch {
                        let dxr = &mut dx[bi * inp..(bi + 1) * inp];
                        for o in 0..out {
                            axpy(g[bi * out + o], &wv[o * inp..(o + 1) * inp], dxr);
                        }
                    }
                });
                acc(w, &mut |dw| {
                    for bi in 0..batch {
                        let xr = &xv[bi * inp..(bi + 1) * inp];
                        for o in 0..out {
                            axpy(g[bi * out + o], xr, &mut dw[o * inp..(o + 1) * inp]);
                        }
                    }
                });
                if let Some(b) = b {
                    acc(b, &mut |db| {
                        for row in g.chunks(out) {
                            for (d, gi) in db.iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    });
                }
            }
            &Op::Conv2d { x, w, b, geom } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let (xv, wv) = (val(x), val(w));
                let per_out = geom.out_ch * cols;
                let mut col = vec![0.0f32; rows * cols];
                acc(w, &mut |dw| {
                    for bi in 0..geom.batch {
                        geom.im2col(xv, bi, &mut col);
                        let gb = &g[bi * per_out..(bi + 1) * per_out];
                        for o in 0..geom.out_ch {
                            let go = &gb[o * cols..(o + 1) * cols];
                            for q in 0..rows {
                                dw[o * rows + q] += dot(go, &col[q * cols..(q + 1) * cols]);
                            }
                        }
                    }
                });
                acc(x, &mut |dx| {
                    let mut dcol = vec![0.0f32; rows * cols];
                    for bi in 0..geom.batch {
                        dcol.fill(0.0);
                        let gb = &g[bi * per_out..(bi + 1) * per_out];
                        for o in 0..geom.out_ch {
                            let go = &gb[o * cols..(o + 1) * cols];
                            for q in 0..rows {
                                axpy(wv[o * rows + q], go, &mut dcol[q * cols..(q + 1) * cols]);
                            }
                        }
                        geom.col2im(&dcol, bi, dx);
                    }
                });
                if let Some(b) = b {
                    acc(b, &mut |db| {
                        for gb in g.chunks(per_out) {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += gb[o * cols..(o + 1) * cols].iter().sum::<f32>();
                            }
                        }
                    });
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if xi > 0.0 { gi } else { slope * gi };
                    }
                });
            }
            &Op::Sigmoid { x } => {
                let y = node.value.data();
                acc(x, &mut |dx| {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            &Op::Softmax { x } => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                acc(x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let inner = dot(gr, yr);
                        for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - inner);
                        }
                    }
                });
            }
            &Op::Reshape { x } => acc(x, &mut |dx| axpy(1.0, g, dx)),
            &Op::ConcatChannels { a, b } => {
                let sa = self.nodes[a.index].value.shape();
                let sb = self.nodes[b.index].value.shape();
                let plane = sa[2] * sa[3];
                let (ca, cb) = (sa[1] * plane, sb[1] * plane);
                acc(a, &mut |da| {
                    for i in 0..sa[0] {
                        axpy(
                            1.0,
                            &g[i * (ca + cb)..i * (ca + cb) + ca],
                            &mut da[i * ca..(i + 1) * ca],
                        );
                    }
                });
                acc(b, &mut |db| {
                    for i in 0..sa[0] {
                        axpy(
                            1.0,
                            &g[i * (ca + cb) + ca..(i + 1) * (ca + cb)],
                            &mut db[i * cb..(i + 1) * cb],
                        );
                    }
                });
            }
            &Op::Upsample { x, factor } => {
                let s = self.nodes[x.index].value.shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h * factor, w * factor);
                acc(x, &mut |dx| {
                    for p in 0..s[0] * s[1] {
                        for i in 0..oh {
                            for j in 0..ow {
                                dx[p * h * w + (i / factor) * w + j / factor] += g[p * oh * ow + i * ow + j];
                            }
                        }
                    }
                });
            }
            &Op::AvgPool { x, k } => {
                let s = self.nodes[x.index].value.shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / k, w / k);
                let norm = 1.0 / (k * k) as f32;
                acc(x, &mut |dx| {
                    for p in 0..s[0] * s[1] {
                        for i in 0..h {
                            for j in 0..w {
                                dx[p * h * w + i * w + j] += g[p * oh * ow + (i / k) * ow + j / k] * norm;
                            }
                        }
                    }
                });
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wn = node.value.data();
                let inner = dot(g, wn) as f64;
                let cols = v.len();
                let sigma = *sigma;
                acc(*w, &mut |dw| {
                    for (r, &ur) in u.iter().enumerate() {
                        for (c, &vc) in v.iter().enumerate() {
                            let i = r * cols + c;
                            dw[i] += ((g[i] as f64 - inner * ur as f64 * vc as f64) / sigma as f64) as f32;
                        }
                    }
                });
            }
            &Op::Add { a, b } => {
                acc(a, &mut |da| axpy(1.0, g, da));
                acc(b, &mut |db| axpy(1.0, g, db));
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                acc(b, &mut |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            &Op::ScaleShift { x, scale } => acc(x, &mut |dx| axpy(scale, g, dx)),
            &Op::Sum { x } => acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean { x } => {
                let n = self.nodes[x.index].value.numel() as f32;
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            &Op::LogClamped { x, lo, hi } => {
                let xv = val(x);
                acc(x, &mut |dx| {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                        if xi >= lo && xi <= hi {
                            *d += gi / xi;
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let lv = val(*logits);
                let classes = self.nodes[logits.index].value.shape()[1];
                let scale = g[0] / labels.len() as f32;
                acc(*logits, &mut |dl| {
                    let mut p = vec![0.0f32; classes];
                    for ((dr, lr), &label) in dl.chunks_mut(classes).zip(lv.chunks(classes)).zip(labels) {
                        p.copy_from_slice(lr);
                        softmax_in_place(&mut p);
                        for (c, (d, pc)) in dr.iter_mut().zip(&p).enumerate() {
                            let target = if c == label { 1.0 } else { 0.0 };
                            *d += scale * (pc - target);
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not track gradients
    /// or did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&v| self.wrt(v))
    }

    /// Gradients shaped like `store`; parameters off the loss path get zeros.
    pub fn for_params(&self, store: &ParamStore) -> ParamStore {
        let mut out = store.zeros_like();
        for (name, t) in out.iter_mut() {
            if let Some(g) = self.param(name) {
                t.data_mut().copy_from_slice(g.data());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor)]) -> ParamStore {
        let mut p = ParamStore::new();
        for (n, t) in entries {
            p.insert(*n, t.clone()).unwrap();
        }
        p
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
        let p = store(&[("w", Tensor::from_vec(vec![0.3, 0.1, -0.7]))]);
        let mut g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        let xv = g.input(x.clone());
        let prod = g.mul(w, xv).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), x.data());
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let p = store(&[("w", Tensor::scalar(0.0))]);
        let mut g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        let s = g.sigmoid(w).unwrap();
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Graph(_))));
    }

    #[test]
    fn detached_variable_is_rejected() {
        let mut a = Graph::new();
        let mut b = Graph::new();
        let x = a.variable(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::Graph(_))));
        assert!(b.sigmoid(x).is_err());
    }

    #[test]
    fn unused_params_get_zero_gradient() {
        let p = store(&[("a", Tensor::scalar(2.0)), ("b", Tensor::scalar(3.0))]);
        let mut g = Graph::new();
        let a = g.param(&p, "a").unwrap();
        let _ = g.param(&p, "b").unwrap();
        let loss = g.sum(a).unwrap();
        let grads = g.backward(loss).unwrap().for_params(&p);
        assert_eq!(grads.get("a").unwrap().data(), &[1.0]);
        assert_eq!(grads.get("b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn conv_window_sum() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 3, 3], 1.0));
        let w = g.input(Tensor::full([1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_padding_and_stride_shapes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([2, 3, 8, 8]));
        let w = g.input(Tensor::zeros([5, 3, 3, 3]));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 4, 4]);
        let bad = g.input(Tensor::zeros([5, 2, 3, 3]));
        assert!(g.conv2d(x, bad, None, 1, 0).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![-1.0, 2.0]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn upsample_and_pool_are_inverse_on_constants() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let up = g.upsample(x, 2).unwrap();
        assert_eq!(
            g.value(up).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let down = g.avg_pool(up, 2).unwrap();
        assert_eq!(g.value(down).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros([2, 4]));
        let loss = g.softmax_cross_entropy(x, &[0, 3]).unwrap();
        assert!((g.value(loss).item().unwrap() - 4f32.ln()).abs() < 1e-6);
        let grads = g.backward(loss).unwrap();
        let d = grads.wrt(x).unwrap().data();
        assert!((d[0] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
        assert!((d[1] - 0.25 / 2.0).abs() < 1e-7);
        assert!(g.softmax_cross_entropy(x, &[0, 4]).is_err());
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(-1.0));
        let y = g.log_clamped(x, f32::NEG_INFINITY, f32::INFINITY).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonFinite(_))));
    }
}
