//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation as a node; [`Graph::backward`]
//! walks the tape in reverse and accumulates exact gradients, flushing
//! parameter gradients into the [`ParamStore`]. Graphs are single-threaded
//! and cheap to rebuild per step.

use crate::array::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Array};
use crate::params::{ParamId, ParamStore};
use crate::NnError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Matmul(usize, usize),
    /// A @ B' with B stored (n x k).
    MatmulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Gelu(usize),
    Exp(usize),
    SoftmaxRows(usize),
    LayerNormRows(usize, f64),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    Reshape(usize),
    SumAll(usize),
    MeanAll(usize),
    L1Masked {
        pred: usize,
        target: Array,
        mask: Array,
    },
    KlLoss {
        mu: usize,
        logvar: usize,
    },
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool2(usize),
}

struct Node {
    value: Array,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> Tensor {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub fn value(&self, t: Tensor) -> &Array {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].value.shape
    }

    /// Gradient of the last `backward` call with respect to node `t`, if the
    /// node received one.
    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn input(&mut self, value: Array) -> Tensor {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        let value = store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, NnError> {
        let (m, ka) = self.nodes[a.0].value.dims2();
        let (kb, n) = self.nodes[b.0].value.dims2();
        if ka != kb {
            return Err(NnError::Shape(format!("matmul {m}x{ka} @ {kb}x{n}")));
        }
        let mut out = Array::zeros(&[m, n]);
        matmul_acc(
            &self.nodes[a.0].value.data,
            &self.nodes[b.0].value.data,
            m,
            ka,
            n,
            &mut out.data,
        );
        Ok(self.push(out, Op::Matmul(a.0, b.0)))
    }

    /// `a @ b'` where `b` is stored row-major as (n x k).
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, NnError> {
        let (m, ka) = self.nodes[a.0].value.dims2();
        let (n, kb) = self.nodes[b.0].value.dims2();
        if ka != kb {
            return Err(NnError::Shape(format!("matmul_nt {m}x{ka} @ ({n}x{kb})'")));
        }
        let mut out = Array::zeros(&[m, n]);
        matmul_nt_acc(
            &self.nodes[a.0].value.data,
            &self.nodes[b.0].value.data,
            m,
            ka,
            n,
            &mut out.data,
        );
        Ok(self.push(out, Op::MatmulNt(a.0, b.0)))
    }

    fn same_shape(&self, a: Tensor, b: Tensor, what: &str) -> Result<(), NnError> {
        if self.nodes[a.0].value.shape != self.nodes[b.0].value.shape {
            return Err(NnError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].value.shape, self.nodes[b.0].value.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, NnError> {
        self.same_shape(a, b, "add")?;
        let mut out = self.nodes[a.0].value.clone();
        for (o, &v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, NnError> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.nodes[a.0].value.clone();
        for (o, &v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o -= v;
        }
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, NnError> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.nodes[a.0].value.clone();
        for (o, &v) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    /// `x` is (r x c), `bias` is a length-c vector added to every row.
    pub fn add_row_bias(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor, NnError> {
        let (_, c) = self.nodes[x.0].value.dims2();
        if self.nodes[bias.0].value.len() != c {
            return Err(NnError::Shape(format!(
                "bias of {} for {c} columns",
                self.nodes[bias.0].value.len()
            )));
        }
        let mut out = self.nodes[x.0].value.clone();
        for row in out.data.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&self.nodes[bias.0].value.data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x.0, bias.0)))
    }

    pub fn scale(&mut self, a: Tensor, k: f64) -> Tensor {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o *= k;
        }
        self.push(out, Op::Scale(a.0, k))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(out, Op::Relu(a.0))
    }

    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o = gelu(*o);
        }
        self.push(out, Op::Gelu(a.0))
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        let mut out = self.nodes[a.0].value.clone();
        for o in out.data.iter_mut() {
            *o = o.exp();
        }
        self.push(out, Op::Exp(a.0))
    }

    /// Row-wise softmax of a rank-2 array.
    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor, NnError> {
        let (_, c) = self.nodes[a.0].value.dims2();
        if c == 0 {
            return Err(NnError::Shape("softmax over empty rows".into()));
        }
        let mut out = self.nodes[a.0].value.clone();
        for row in out.data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a.0)))
    }

    /// Row-wise standardization (no affine): `(x - mean) / sqrt(var + eps)`.
    pub fn layer_norm_rows(&mut self, a: Tensor, eps: f64) -> Result<Tensor, NnError> {
        let (_, c) = self.nodes[a.0].value.dims2();
        if c == 0 {
            return Err(NnError::Shape("layer_norm over empty rows".into()));
        }
        let mut out = self.nodes[a.0].value.clone();
        for row in out.data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        Ok(self.push(out, Op::LayerNormRows(a.0, eps)))
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor, NnError> {
        if parts.is_empty() {
            return Err(NnError::Shape("concat of nothing".into()));
        }
        let (_, c) = self.nodes[parts[0].0].value.dims2();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = self.nodes[p.0].value.dims2();
            if pc != c {
                return Err(NnError::Shape(format!("concat_rows widths {pc} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        Ok(self.push(
            Array::from_vec(&[rows, c], data),
            Op::ConcatRows(parts.iter().map(|t| t.0).collect()),
        ))
    }

    pub fn slice_rows(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor, NnError> {
        let (r, c) = self.nodes[a.0].value.dims2();
        if start + len > r {
            return Err(NnError::Shape(format!(
                "slice_rows {start}+{len} of {r}"
            )));
        }
        let data = self.nodes[a.0].value.data[start * c..(start + len) * c].to_vec();
        Ok(self.push(Array::from_vec(&[len, c], data), Op::SliceRows(a.0, start)))
    }

    pub fn slice_cols(&mut self, a: Tensor, start: usize, len: usize) -> Result<Tensor, NnError> {
        let (r, c) = self.nodes[a.0].value.dims2();
        if start + len > c {
            return Err(NnError::Shape(format!(
                "slice_cols {start}+{len} of {c}"
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].value.data[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Array::from_vec(&[r, len], data), Op::SliceCols(a.0, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor, NnError> {
        if parts.is_empty() {
            return Err(NnError::Shape("concat of nothing".into()));
        }
        let (r, _) = self.nodes[parts[0].0].value.dims2();
        let mut width = 0;
        for p in parts {
            let (pr, pc) = self.nodes[p.0].value.dims2();
            if pr != r {
                return Err(NnError::Shape(format!("concat_cols heights {pr} vs {r}")));
            }
            width += pc;
        }
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            for p in parts {
                let (_, pc) = self.nodes[p.0].value.dims2();
                data.extend_from_slice(&self.nodes[p.0].value.data[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(
            Array::from_vec(&[r, width], data),
            Op::ConcatCols(parts.iter().map(|t| t.0).collect()),
        ))
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor, NnError> {
        if shape.iter().product::<usize>() != self.nodes[a.0].value.len() {
            return Err(NnError::Shape(format!(
                "reshape {:?} -> {:?}",
                self.nodes[a.0].value.shape, shape
            )));
        }
        let data = self.nodes[a.0].value.data.clone();
        Ok(self.push(Array::from_vec(shape, data), Op::Reshape(a.0)))
    }

    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Array::scalar(s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Tensor) -> Tensor {
        let n = self.nodes[a.0].value.len().max(1);
        let s = self.nodes[a.0].value.data.iter().sum::<f64>() / n as f64;
        self.push(Array::scalar(s), Op::MeanAll(a.0))
    }

    /// Masked mean absolute error. `mask` is elementwise 0/1 over `pred`'s
    /// shape; masked-out elements contribute neither loss nor count.
    pub fn l1_masked(&mut self, pred: Tensor, target: Array, mask: Array) -> Result<Tensor, NnError> {
        if target.shape != self.nodes[pred.0].value.shape
            || mask.shape != self.nodes[pred.0].value.shape
        {
            return Err(NnError::Shape("l1_masked target/mask shape".into()));
        }
        let count: f64 = mask.data.iter().sum();
        if count <= 0.0 {
            return Err(NnError::Shape("l1_masked: empty mask".into()));
        }
        let mut s = 0.0;
        for ((&p, &t), &m) in self.nodes[pred.0]
            .value
            .data
            .iter()
            .zip(&target.data)
            .zip(&mask.data)
        {
            s += m * (p - t).abs();
        }
        let v = s / count;
        Ok(self.push(Array::scalar(v), Op::L1Masked { pred: pred.0, target, mask }))
    }

    /// KL divergence of a diagonal Gaussian to the standard normal, summed
    /// over dimensions: `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
    pub fn kl_loss(&mut self, mu: Tensor, logvar: Tensor) -> Result<Tensor, NnError> {
        self.same_shape(mu, logvar, "kl_loss")?;
        let mut s = 0.0;
        for (&m, &lv) in self.nodes[mu.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[logvar.0].value.data)
        {
            s += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
        Ok(self.push(
            Array::scalar(s),
            Op::KlLoss {
                mu: mu.0,
                logvar: logvar.0,
            },
        ))
    }

    /// 2D convolution over a CHW input with an OIHW kernel.
    pub fn conv2d(
        &mut self,
        input: Tensor,
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor, NnError> {
        let ishape = self.nodes[input.0].value.shape.clone();
        let kshape = self.nodes[kernel.0].value.shape.clone();
        if ishape.len() != 3 || kshape.len() != 4 || ishape[0] != kshape[1] {
            return Err(NnError::Shape(format!(
                "conv2d input {ishape:?} kernel {kshape:?}"
            )));
        }
        let (ci, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (co, _, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
        if self.nodes[bias.0].value.len() != co {
            return Err(NnError::Shape("conv2d bias".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Array::zeros(&[co, oh, ow]);
        let x = &self.nodes[input.0].value.data;
        let k = &self.nodes[kernel.0].value.data;
        let b = &self.nodes[bias.0].value.data;
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[c * h * w + iy as usize * w + ix as usize]
                                    * k[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                stride,
                pad,
            },
        ))
    }

    /// 2x2 average pooling of a CHW input (dims must be even).
    pub fn avg_pool2(&mut self, a: Tensor) -> Result<Tensor, NnError> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
            return Err(NnError::Shape(format!("avg_pool2 of {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h / 2, w / 2);
        let x = &self.nodes[a.0].value.data;
        let mut out = Array::zeros(&[c, oh, ow]);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = ch * h * w + 2 * oy * w + 2 * ox;
                    out.data[(ch * oh + oy) * ow + ox] =
                        0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
                }
            }
        }
        Ok(self.push(out, Op::AvgPool2(a.0)))
    }

    fn accumulate(&mut self, node: usize, grad: &[f64]) {
        let slot = &mut self.nodes[node].grad;
        match slot {
            Some(g) => {
                for (o, &v) in g.iter_mut().zip(grad) {
                    *o += v;
                }
            }
            None => *slot = Some(grad.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss. Parameter gradients accumulate into
    /// the store (call `store.zero_grads()` to reset between steps).
    pub fn backward(&mut self, loss: Tensor, store: &mut ParamStore) -> Result<(), NnError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NnError::NotScalar(
                self.nodes[loss.0].value.shape.clone(),
            ));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Const => {}
                Op::Param(id) => store.accumulate_grad(id, &grad),
                Op::Matmul(a, b) => {
                    let (m, k) = self.nodes[a].value.dims2();
                    let (_, n) = self.nodes[b].value.dims2();
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(&grad, &self.nodes[b].value.data, m, n, k, &mut da);
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(&self.nodes[a].value.data, &grad, k, m, n, &mut db);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MatmulNt(a, b) => {
                    // C = A @ B', dC is (m x n); dA = dC @ B; dB = dC' @ A
                    let (m, k) = self.nodes[a].value.dims2();
                    let (n, _) = self.nodes[b].value.dims2();
                    let mut da = vec![0.0; m * k];
                    matmul_acc(&grad, &self.nodes[b].value.data, m, n, k, &mut da);
                    let mut db = vec![0.0; n * k];
                    matmul_tn_acc(&grad, &self.nodes[a].value.data, n, m, k, &mut db);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &grad);
                    let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[b].value.data)
                        .map(|(&g, &v)| g * v)
                        .collect();
                    let db: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddRowBias(x, bias) => {
                    let c = self.nodes[bias].value.len();
                    let mut db = vec![0.0; c];
                    for row in grad.chunks(c) {
                        for (o, &g) in db.iter_mut().zip(row) {
                            *o += g;
                        }
                    }
                    self.accumulate(x, &grad);
                    self.accumulate(bias, &db);
                }
                Op::Scale(a, k) => {
                    let da: Vec<f64> = grad.iter().map(|&g| g * k).collect();
                    self.accumulate(a, &da);
                }
                Op::Relu(a) => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Gelu(a) => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[a].value.data)
                        .map(|(&g, &x)| g * gelu_grad(x))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Exp(a) => {
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&self.nodes[i].value.data)
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let (_, c) = self.nodes[i].value.dims2();
                    let y = &self.nodes[i].value.data;
                    let mut da = vec![0.0; y.len()];
                    for (r, gy) in grad.chunks(c).enumerate() {
                        let yr = &y[r * c..(r + 1) * c];
                        let dot: f64 = gy.iter().zip(yr).map(|(&g, &v)| g * v).sum();
                        for j in 0..c {
                            da[r * c + j] = yr[j] * (gy[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNormRows(a, eps) => {
                    let (_, c) = self.nodes[i].value.dims2();
                    let x = &self.nodes[a].value.data;
                    let mut da = vec![0.0; x.len()];
                    for r in 0..x.len() / c {
                        let xr = &x[r * c..(r + 1) * c];
                        let gr = &grad[r * c..(r + 1) * c];
                        let mean = xr.iter().sum::<f64>() / c as f64;
                        let var =
                            xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let ys: Vec<f64> = xr.iter().map(|&v| (v - mean) * inv).collect();
                        let gmean = gr.iter().sum::<f64>() / c as f64;
                        let gydot = gr.iter().zip(&ys).map(|(&g, &y)| g * y).sum::<f64>() / c as f64;
                        for j in 0..c {
                            da[r * c + j] = inv * (gr[j] - gmean - ys[j] * gydot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p].value.len();
                        let slice = grad[offset..offset + len].to_vec();
                        self.accumulate(p, &slice);
                        offset += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (_, c) = self.nodes[a].value.dims2();
                    let mut da = vec![0.0; self.nodes[a].value.len()];
                    da[start * c..start * c + grad.len()].copy_from_slice(&grad);
                    self.accumulate(a, &da);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.nodes[a].value.dims2();
                    let len = grad.len() / r;
                    let mut da = vec![0.0; r * c];
                    for row in 0..r {
                        da[row * c + start..row * c + start + len]
                            .copy_from_slice(&grad[row * len..(row + 1) * len]);
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatCols(parts) => {
                    let r = self.nodes[i].value.dims2().0;
                    let total = self.nodes[i].value.dims2().1;
                    let mut offset = 0;
                    for p in parts {
                        let (_, pc) = self.nodes[p].value.dims2();
                        let mut dp = vec![0.0; r * pc];
                        for row in 0..r {
                            dp[row * pc..(row + 1) * pc].copy_from_slice(
                                &grad[row * total + offset..row * total + offset + pc],
                            );
                        }
                        self.accumulate(p, &dp);
                        offset += pc;
                    }
                }
                Op::Reshape(a) => self.accumulate(a, &grad),
                Op::SumAll(a) => {
                    let da = vec![grad[0]; self.nodes[a].value.len()];
                    self.accumulate(a, &da);
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a].value.len().max(1) as f64;
                    let da = vec![grad[0] / n; self.nodes[a].value.len()];
                    self.accumulate(a, &da);
                }
                Op::L1Masked { pred, target, mask } => {
                    let count: f64 = mask.data.iter().sum();
                    let g = grad[0] / count;
                    let da: Vec<f64> = self.nodes[pred]
                        .value
                        .data
                        .iter()
                        .zip(&target.data)
                        .zip(&mask.data)
                        .map(|((&p, &t), &m)| {
                            if m == 0.0 {
                                0.0
                            } else {
                                g * m * (p - t).signum()
                            }
                        })
                        .collect();
                    self.accumulate(pred, &da);
                }
                Op::KlLoss { mu, logvar } => {
                    let g = grad[0];
                    let dmu: Vec<f64> = self.nodes[mu].value.data.iter().map(|&m| g * m).collect();
                    let dlv: Vec<f64> = self.nodes[logvar]
                        .value
                        .data
                        .iter()
                        .map(|&lv| g * 0.5 * (lv.exp() - 1.0))
                        .collect();
                    self.accumulate(mu, &dmu);
                    self.accumulate(logvar, &dlv);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => {
                    let ishape = &self.nodes[input].value.shape;
                    let kshape = &self.nodes[kernel].value.shape;
                    let (ci, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let (co, kh, kw) = (kshape[0], kshape[2], kshape[3]);
                    let oshape = &self.nodes[i].value.shape;
                    let (oh, ow) = (oshape[1], oshape[2]);
                    let x = self.nodes[input].value.data.clone();
                    let k = self.nodes[kernel].value.data.clone();
                    let mut dx = vec![0.0; x.len()];
                    let mut dk = vec![0.0; k.len()];
                    let mut db = vec![0.0; co];
                    for o in 0..co {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[(o * oh + oy) * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                db[o] += g;
                                for c in 0..ci {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let xi = c * h * w + iy as usize * w + ix as usize;
                                            let ki = ((o * ci + c) * kh + ky) * kw + kx;
                                            dx[xi] += g * k[ki];
                                            dk[ki] += g * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(input, &dx);
                    self.accumulate(kernel, &dk);
                    self.accumulate(bias, &db);
                }
                Op::AvgPool2(a) => {
                    let shape = &self.nodes[a].value.shape;
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let mut da = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = 0.25 * grad[(ch * oh + oy) * ow + ox];
                                let i0 = ch * h * w + 2 * oy * w + 2 * ox;
                                da[i0] += g;
                                da[i0 + 1] += g;
                                da[i0 + w] += g;
                                da[i0 + w + 1] += g;
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }
}
