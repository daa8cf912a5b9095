use std::collections::HashMap;

use super::kernels::{broadcast_index, gemm_nn, gemm_nt, gemm_tn, permute_index};
use super::{GradStore, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Bcast {
    /// The small operand matches a trailing run of the big operand's shape.
    Suffix(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(big: &[usize], small: &[usize], op: &'static str) -> Result<Self> {
        let small_n: usize = small.iter().product();
        let k = small.len();
        if k <= big.len() && big[big.len() - k..] == *small {
            return Ok(Bcast::Suffix(small_n));
        }
        broadcast_index(big, small)
            .map(Bcast::Map)
            .ok_or_else(|| TensorError::Shape {
                op,
                lhs: big.to_vec(),
                rhs: small.to_vec(),
            })
    }

    #[inline]
    fn src(&self, i: usize) -> usize {
        match self {
            Bcast::Suffix(n) => i % n,
            Bcast::Map(m) => m[i],
        }
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var, Bcast),
    MulBcast(Var, Var, Bcast),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        cols: Vec<f64>,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Dynamic tape. Each forward pass records onto a fresh graph; the graph
/// borrows the parameter store immutably, so optimizer updates happen after
/// the graph is dropped. [`Graph::backward`] leaves the tape intact and may be
/// called more than once.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

static EMPTY: ParamStore = ParamStore::const_default();

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// Graph without learnable parameters.
    pub fn detached() -> Graph<'static> {
        Graph::new(&EMPTY)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, t: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !t.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Value::Owned(t),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Differentiable leaf (used for input gradients and gradient checks).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn binary_same(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    /// `a + b` with `b` broadcast (right-aligned, size-1 axes stretched) to `a`'s shape.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Bcast::new(self.shape(a), self.shape(b), "add_bcast")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[bc.src(i)])
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::AddBcast(a, b, bc), rg, "add_bcast")
    }

    /// `a * b` with `b` broadcast to `a`'s shape.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = Bcast::new(self.shape(a), self.shape(b), "mul_bcast")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tb.data()[bc.src(i)])
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MulBcast(a, b, bc), rg, "mul_bcast")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.map(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg, "tanh")
    }

    /// `a[..., m, k] · b[k, n]`; leading axes of `a` are treated as extra rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let t = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MatMul(a, b), rg, "matmul")
    }

    /// Batched product `a[B, m, k] · b[B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_nn(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let t = Tensor::new(&[bs, m, n], out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Bmm(a, b), rg, "bmm")
    }

    /// Output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if perm.len() != sa.len() || perm.iter().any(|&p| p >= sa.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of {} axes", sa.len()),
            });
        }
        let map = permute_index(&sa, perm);
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let shape: Vec<usize> = perm.iter().map(|&p| sa[p]).collect();
        let t = Tensor::new(&shape, data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Permute(a, map), rg, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: "rank must be at least 2".into(),
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg, "reshape")
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let n = *ta.shape().last().expect("non-empty shape");
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
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
        let t = Tensor::new(ta.shape(), out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Softmax(a), rg, "softmax")
    }

    /// Normalizes the last axis to zero mean and unit (population) variance,
    /// then applies `gain` and `bias` of width equal to that axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let h = *tx.shape().last().expect("non-empty shape");
        if self.shape(gain) != [h] || self.shape(bias) != [h] {
            return Err(shape_err("layer_norm", tx.shape(), self.shape(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.numel() / h;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * h..(r + 1) * h];
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..h {
                let xh = (row[j] - mean) * is;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*xs.first().ok_or(TensorError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            })?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", first.len()),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &n)| d != axis && n != first[d])
            {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(xs);
        self.push(t, Op::Concat(xs.to_vec(), axis), rg, "concat")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("[{start}, {}) out of range on axis {axis} of {s:?}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Narrow { x, axis, start }, rg, "narrow")
    }

    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let s = self.shape(x);
        if axis >= s.len() || sizes.iter().sum::<usize>() != s[axis] {
            return Err(TensorError::Invalid {
                op: "split",
                msg: format!("sizes {sizes:?} do not partition axis {axis} of {s:?}"),
            });
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &len in sizes {
            parts.push(self.narrow(x, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg, "mean")
    }

    /// Valid (unpadded), stride-1 2-D convolution.
    /// `x[N, C, H, W]`, `w[O, C, k, k]`, optional `b[O]` -> `[N, O, H-k+1, W-k+1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || sw[2] > sx[2] || sw[3] > sx[3] {
            return Err(shape_err("conv2d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err("conv2d", &sw, self.shape(b)));
            }
        }
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            k: sw[2],
            oh: sx[2] - sw[2] + 1,
            ow: sx[3] - sw[2] + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let p = geom.n * geom.oh * geom.ow;
        let ckk = geom.c * geom.k * geom.k;
        let mut flat = vec![0.0; p * geom.o];
        gemm_nt(p, ckk, geom.o, &cols, self.value(w).data(), &mut flat);
        let bias = b.map(|b| self.value(b).data());
        let plane = geom.oh * geom.ow;
        let mut out = vec![0.0; p * geom.o];
        for n in 0..geom.n {
            for o in 0..geom.o {
                let bo = bias.map_or(0.0, |b| b[o]);
                let dst = &mut out[(n * geom.o + o) * plane..(n * geom.o + o + 1) * plane];
                for (q, d) in dst.iter_mut().enumerate() {
                    *d = flat[(n * plane + q) * geom.o + o] + bo;
                }
            }
        }
        let t = Tensor::new(&[geom.n, geom.o, geom.oh, geom.ow], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(t, Op::Conv2d { x, w, b, cols, geom }, rg, "conv2d")
    }

    /// 2×2 max pooling with stride 2 over `[N, C, H, W]` (odd edges dropped).
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(TensorError::Invalid {
                op: "max_pool2d",
                msg: format!("need [N, C, H>=2, W>=2], got {s:?}"),
            });
        }
        let (oh, ow) = (s[2] / 2, s[3] / 2);
        let src = self.value(x).data();
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * s[2] * s[3];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * s[3] + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * s[3] + 2 * j + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::MaxPool2d { x, argmax }, rg, "max_pool2d")
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Invalid {
                op: "global_avg_pool",
                msg: format!("need rank 4, got {s:?}"),
            });
        }
        let plane = s[2] * s[3];
        let out = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(&[s[0], s[1]], out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::GlobalAvgPool(x), rg, "global_avg_pool")
    }

    /// Mean binary cross entropy between probabilities `pred` and soft
    /// targets in `[0, 1]`; predictions are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(shape_err("bce", p.shape(), &[target.len()]));
        }
        if target.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(TensorError::Invalid {
                op: "bce",
                msg: "targets must lie in [0, 1]".into(),
            });
        }
        let loss = p
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / target.len() as f64;
        let rg = self.rg(&[pred]);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
            rg,
            "bce",
        )
    }

    /// Mean softmax cross entropy of `logits[N, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let s = t.shape();
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(shape_err("softmax_cross_entropy", s, &[labels.len()]));
        }
        let k = s[1];
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            loss -= row[l].max(1e-300).ln();
        }
        loss /= labels.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients are returned for every
    /// node on the path that requires them; the tape itself is not consumed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(ls));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.shape(v);
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        s.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(gd).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] += gd[i] * db[i];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..s.len() {
                        s[i] += gd[i] * da[i];
                    }
                }
            }
            Op::AddBcast(a, b, bc) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (i, &gv) in gd.iter().enumerate() {
                        s[bc.src(i)] += gv;
                    }
                }
            }
            Op::MulBcast(a, b, bc) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] += gd[i] * db[bc.src(i)];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (i, &gv) in gd.iter().enumerate() {
                        s[bc.src(i)] += gv * da[i];
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(x, y)| *x += k * y);
                }
            }
            Op::Relu(a) => {
                let od = out.data();
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        if od[i] > 0.0 {
                            s[i] += gd[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let od = out.data();
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] += gd[i] * od[i] * (1.0 - od[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                let od = out.data();
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..s.len() {
                        s[i] += gd[i] * (1.0 - od[i] * od[i]);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, n) = (tb.shape()[0], tb.shape()[1]);
                let m = ta.numel() / k;
                if let Some(s) = self.slot(grads, *a) {
                    gemm_nt(m, n, k, gd, tb.data(), s);
                }
                if let Some(s) = self.slot(grads, *b) {
                    gemm_tn(k, m, n, ta.data(), gd, s);
                }
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                if let Some(s) = self.slot(grads, *a) {
                    for i in 0..bs {
                        gemm_nt(
                            m,
                            n,
                            k,
                            &gd[i * m * n..(i + 1) * m * n],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            &mut s[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for i in 0..bs {
                        gemm_tn(
                            k,
                            m,
                            n,
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut s[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
            }
            Op::Permute(a, map) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (i, &src) in map.iter().enumerate() {
                        s[src] += gd[i];
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
            }
            Op::Softmax(a) => {
                let od = out.data();
                let n = *out.shape().last().expect("non-empty");
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..od.len() / n {
                        let (y, gr) = (&od[r * n..(r + 1) * n], &gd[r * n..(r + 1) * n]);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            s[r * n + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let h = self.shape(*gain)[0];
                let gv = self.value(*gain).data();
                let rows = xhat.len() / h;
                if let Some(s) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..h {
                            s[j] += gd[r * h + j] * xhat[r * h + j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..h {
                            s[j] += gd[r * h + j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0; h];
                    for r in 0..rows {
                        let xh = &xhat[r * h..(r + 1) * h];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..h {
                            dxhat[j] = gd[r * h + j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xh[j];
                        }
                        m1 /= h as f64;
                        m2 /= h as f64;
                        for j in 0..h {
                            s[r * h + j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let w = self.shape(v)[*axis] * inner;
                    if let Some(s) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + w];
                            s[o * w..(o + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::Narrow { x, axis, start } => {
                let s_in = self.shape(*x).to_vec();
                let len = out.shape()[*axis];
                let outer: usize = s_in[..*axis].iter().product();
                let inner: usize = s_in[axis + 1..].iter().product();
                if let Some(s) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let base = (o * s_in[*axis] + start) * inner;
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        s[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|x| *x += gd[0]);
                }
            }
            Op::MeanAll(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    let k = gd[0] / s.len() as f64;
                    s.iter_mut().for_each(|x| *x += k);
                }
            }
            Op::Conv2d { x, w, b, cols, geom } => {
                let plane = geom.oh * geom.ow;
                let p = geom.n * plane;
                let ckk = geom.c * geom.k * geom.k;
                // gradient in [P, O] layout, matching the forward im2col product
                let mut gflat = vec![0.0; p * geom.o];
                for n in 0..geom.n {
                    for o in 0..geom.o {
                        let src = &gd[(n * geom.o + o) * plane..(n * geom.o + o + 1) * plane];
                        for (q, &v) in src.iter().enumerate() {
                            gflat[(n * plane + q) * geom.o + o] = v;
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *w) {
                    gemm_tn(geom.o, p, ckk, &gflat, cols, s);
                }
                if let Some(bv) = b {
                    if let Some(s) = self.slot(grads, *bv) {
                        for (i, &v) in gflat.iter().enumerate() {
                            s[i % geom.o] += v;
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut gcols = vec![0.0; p * ckk];
                    gemm_nn(p, geom.o, ckk, &gflat, self.value(*w).data(), &mut gcols);
                    if let Some(s) = self.slot(grads, *x) {
                        col2im(&gcols, geom, s);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(s) = self.slot(grads, *x) {
                    for (i, &src) in argmax.iter().enumerate() {
                        s[src] += gd[i];
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let sx = self.shape(*x).to_vec();
                let plane = sx[2] * sx[3];
                if let Some(s) = self.slot(grads, *x) {
                    for (i, chunk) in s.chunks_mut(plane).enumerate() {
                        let k = gd[i] / plane as f64;
                        chunk.iter_mut().for_each(|v| *v += k);
                    }
                }
            }
            Op::Bce { pred, target } => {
                let pd = self.value(*pred).data();
                let n = target.len() as f64;
                if let Some(s) = self.slot(grads, *pred) {
                    for i in 0..s.len() {
                        let p = pd[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                        s[i] += gd[0] * (p - target[i]) / (p * (1.0 - p)) / n;
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
            } => {
                let k = self.shape(*logits)[1];
                let n = labels.len() as f64;
                if let Some(s) = self.slot(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            s[r * k + j] += gd[0] * (probs[r * k + j] - onehot) / n;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) const BCE_EPS: f64 = 1e-7;

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ckk = g.c * g.k * g.k;
    let mut cols = vec![0.0; g.n * g.oh * g.ow * ckk];
    for n in 0..g.n {
        for i in 0..g.oh {
            for j in 0..g.ow {
                let row = ((n * g.oh + i) * g.ow + j) * ckk;
                let mut col = 0;
                for c in 0..g.c {
                    let base = (n * g.c + c) * g.h * g.w;
                    for ki in 0..g.k {
                        let src = base + (i + ki) * g.w + j;
                        cols[row + col..row + col + g.k].copy_from_slice(&x[src..src + g.k]);
                        col += g.k;
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let ckk = g.c * g.k * g.k;
    for n in 0..g.n {
        for i in 0..g.oh {
            for j in 0..g.ow {
                let row = ((n * g.oh + i) * g.ow + j) * ckk;
                let mut col = 0;
                for c in 0..g.c {
                    let base = (n * g.c + c) * g.h * g.w;
                    for ki in 0..g.k {
                        let dst = base + (i + ki) * g.w + j;
                        for kj in 0..g.k {
                            dx[dst + kj] += cols[row + col + kj];
                        }
                        col += g.k;
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` lies on a
    /// differentiable path to the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients in parameter-id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(p, v)| self.grads[v.0].as_ref().map(|g| (p, g)))
    }

    pub fn accumulate_into(&self, store: &mut GradStore, scale: f64) {
        for (p, g) in self.params() {
            store.accumulate(p, g, scale);
        }
    }
}
