use crate::error::{Error, Result};
use crate::tensor::kernels::{conv_backward, conv_forward, gemm, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    ConcatChannels(Var, Var),
    Upsample2x(Var),
    FlipW(Var),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Var },
    GlobalAvgPool(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    MatMulBt(Var, Var),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations as they are evaluated so gradients can be pulled back
/// through them with [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a new gradient-free leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    /// 2-D convolution, NHWC input and `[kh, kw, cin, cout]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, h, wd, cin] = self.value(x).dims4()?;
        let [kh, kw, kcin, cout] = self.value(w).dims4()?;
        if kcin != cin {
            return Err(Error::shape(format!("conv expects {kcin} input channels, got {cin}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(format!("conv bias shape {:?} != [{cout}]", self.shape(b))));
            }
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(format!("conv {kh}x{kw}/{stride} does not fit {h}x{wd}")));
        }
        let geom = ConvGeom {
            n,
            h,
            w: wd,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let out = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(vec![n, geom.oh, geom.ow, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Batch normalization over all but the channel axis using batch
    /// statistics. Returns the output and the biased batch mean and variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let t = self.value(x);
        let c = *t.shape().last().ok_or_else(|| Error::shape("batch norm of a scalar"))?;
        let count = t.len() / c;
        if count == 0 {
            return Err(Error::shape("batch norm over an empty batch"));
        }
        let mut mean = vec![0.0; c];
        for row in t.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for row in t.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= count as f64);
        let out = self.normalize(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed statistics (inference mode).
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.normalize(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let t = self.value(x);
        let c = *t.shape().last().ok_or_else(|| Error::shape("batch norm of a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c || var.len() != c {
            return Err(Error::shape(format!("batch norm parameters do not match {c} channels")));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(t.len());
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        let value = Tensor { shape: t.shape().to_vec(), data: out };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape().to_vec(), data };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Mean(x), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Sum(x), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, h, w, ca] = self.value(a).dims4()?;
        let [nb, hb, wb, cb] = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "cannot concatenate channels of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * h * w * (ca + cb));
        for (ra, rb) in da.chunks_exact(ca).zip(db.chunks_exact(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let value = Tensor::new(vec![n, h, w, ca + cb], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatChannels(a, b), rg))
    }

    /// Nearest-neighbour 2× upsampling of both spatial axes.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut data = vec![0.0; n * 4 * h * w * c];
        for b in 0..n {
            for y in 0..2 * h {
                for xo in 0..2 * w {
                    let s = ((b * h + y / 2) * w + xo / 2) * c;
                    let d = ((b * 2 * h + y) * 2 * w + xo) * c;
                    data[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let value = Tensor::new(vec![n, 2 * h, 2 * w, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample2x(x), rg))
    }

    /// Horizontal mirror of an NHWC tensor.
    pub fn flip_w(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for r in 0..n * h {
            for xo in 0..w {
                let s = (r * w + (w - 1 - xo)) * c;
                let d = (r * w + xo) * c;
                data[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
        let value = Tensor::new(vec![n, h, w, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::FlipW(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `x·w + b` for `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (n, k, m) = match (xs, ws, bs) {
            ([n, k], [k2, m], [m2]) if k == k2 && m == m2 => (*n, *k, *m),
            _ => return Err(Error::shape(format!("linear {xs:?} x {ws:?} + {bs:?}"))),
        };
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(n, k, m, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Spatial mean: `[n, h, w, c] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            for row in src[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
                for (o, v) in out[b * c..(b + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / (h * w) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// Scales each row of `[n, k]` to unit L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let [n, k] = match self.shape(x) {
            [n, k] => [*n, *k],
            s => return Err(Error::shape(format!("normalize_rows expects [n, k], got {s:?}"))),
        };
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * k);
        for row in src.chunks_exact(k) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(norm);
            out.extend(row.iter().map(|v| v / norm));
        }
        let value = Tensor::new(vec![n, k], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::NormalizeRows { x, norms }, rg))
    }

    /// `a·bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k, m) = match (self.shape(a), self.shape(b)) {
            ([n, k], [m, k2]) if k == k2 => (*n, *k, *m),
            (sa, sb) => return Err(Error::shape(format!("matmul_bt {sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), true, 0.0, &mut out);
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulBt(a, b), rg))
    }

    /// Mean softmax cross-entropy of `[n, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = match self.shape(logits) {
            [n, c] => (*n, *c),
            s => return Err(Error::shape(format!("logits must be [n, classes], got {s:?}"))),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= c) {
            return Err(Error::shape("labels do not match logits"));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (row, &label) in self.value(logits).data().chunks_exact(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss -= row[label] - max - z.ln();
            probs.extend(row.iter().map(|v| (v - max).exp() / z));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar. Gradients are returned for every
    /// node that requires one; intermediate gradients are released as soon
    /// as they have been propagated, so only leaves keep theirs.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            self.propagate(i, gy, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data.iter_mut().zip(&g) {
                    *e += x;
                }
            }
            slot @ None => {
                *slot = Some(Tensor { shape: self.shape(v).to_vec(), data: g });
            }
        }
    }

    fn propagate(&self, i: usize, gy: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gyd = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gyd,
                    geom,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let c = inv_std.len();
                let count = (xhat.len() / c) as f64;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (grow, xrow) in gyd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] += grow[ch] * xrow[ch];
                        dbeta[ch] += grow[ch];
                    }
                }
                if self.rg(*x) {
                    let mut dx = Vec::with_capacity(gyd.len());
                    for (grow, xrow) in gyd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            let k = g[ch] * inv_std[ch];
                            if *batch_stats {
                                dx.push(
                                    k * (grow[ch] - dbeta[ch] / count - xrow[ch] * dgamma[ch] / count),
                                );
                            } else {
                                dx.push(k * grow[ch]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Relu(x) => {
                let dx = gyd.iter().zip(y).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let dx = gyd.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { slope * g }).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = gyd.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = gyd.iter().zip(y).map(|(g, v)| g * v * (1.0 - v)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gyd.to_vec());
                self.accumulate(grads, *b, gyd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gyd.to_vec());
                self.accumulate(grads, *b, gyd.iter().map(|g| -g).collect());
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, gyd.iter().map(|g| g * c).collect());
            }
            Op::Offset(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, gyd.to_vec());
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let dx = gyd.iter().zip(xv).map(|(g, &v)| g * sign(v)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let dx = gyd.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gyd[0] / n as f64; n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gyd[0]; n]);
            }
            Op::ConcatChannels(a, b) => {
                let ca = *self.shape(*a).last().expect("4-D");
                let cb = *self.shape(*b).last().expect("4-D");
                let rows = gyd.len() / (ca + cb);
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for row in gyd.chunks_exact(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Upsample2x(x) => {
                let [n, h, w, c] = self.value(*x).dims4().expect("4-D");
                let mut dx = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for yo in 0..2 * h {
                        for xo in 0..2 * w {
                            let s = ((b * 2 * h + yo) * 2 * w + xo) * c;
                            let d = ((b * h + yo / 2) * w + xo / 2) * c;
                            for ch in 0..c {
                                dx[d + ch] += gyd[s + ch];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::FlipW(x) => {
                let [n, h, w, c] = self.value(*x).dims4().expect("4-D");
                let mut dx = vec![0.0; gyd.len()];
                for r in 0..n * h {
                    for xo in 0..w {
                        let s = (r * w + xo) * c;
                        let d = (r * w + (w - 1 - xo)) * c;
                        dx[d..d + c].copy_from_slice(&gyd[s..s + c]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (n, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let m = self.shape(*w)[1];
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * k];
                    gemm(n, m, k, gyd, false, self.value(*w).data(), true, 0.0, &mut dx);
                    self.accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; k * m];
                    gemm(k, n, m, self.value(*x).data(), true, gyd, false, 0.0, &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                let mut db = vec![0.0; m];
                for row in gyd.chunks_exact(m) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(grads, *b, db);
            }
            Op::GlobalAvgPool(x) => {
                let [n, h, w, c] = self.value(*x).dims4().expect("4-D");
                let inv = 1.0 / (h * w) as f64;
                let mut dx = Vec::with_capacity(n * h * w * c);
                for b in 0..n {
                    for _ in 0..h * w {
                        dx.extend(gyd[b * c..(b + 1) * c].iter().map(|g| g * inv));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::NormalizeRows { x, norms } => {
                let k = self.shape(*x)[1];
                let mut dx = Vec::with_capacity(gyd.len());
                for ((grow, yrow), norm) in gyd.chunks_exact(k).zip(y.chunks_exact(k)).zip(norms) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, v)| g * v).sum();
                    dx.extend(grow.iter().zip(yrow).map(|(g, v)| (g - v * dot) / norm));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                if self.rg(*a) {
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, gyd, false, self.value(*b).data(), false, 0.0, &mut da);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; m * k];
                    gemm(m, n, k, gyd, true, self.value(*a).data(), false, 0.0, &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let n = labels.len() as f64;
                let mut d = probs.clone();
                for (row, &label) in d.chunks_exact_mut(c).zip(labels) {
                    row[label] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= gyd[0] / n);
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
