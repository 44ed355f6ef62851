//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value and whatever the
//! backward pass needs. `backward` walks the nodes once in reverse creation
//! order; a tape can be differentiated only once.

use super::graph::GraphBatch;
use super::tensor::Tensor;
use super::NumericError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters of one graph-attention layer, already placed on the tape.
#[derive(Debug, Clone, Copy)]
pub struct GatVars {
    /// Node transform shared by source and target, `[F_in, heads * dim]`.
    pub node: Var,
    /// Edge-attribute transform, `[F_edge, heads * dim]`.
    pub edge: Var,
    /// Attention vectors, `[heads, dim]`.
    pub attention: Var,
    /// Output bias, `[heads * dim]`.
    pub bias: Var,
}

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

#[derive(Debug)]
struct GatCache {
    h: Var,
    vars: GatVars,
    heads: usize,
    dim: usize,
    f_in: usize,
    f_edge: usize,
    /// Edges including injected self-loops.
    edges: Vec<(usize, usize)>,
    edge_attr: Vec<f64>,
    incoming: Vec<Vec<usize>>,
    transformed: Vec<f64>,
    pre_act: Vec<f64>,
    alpha: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var, rows: usize, fan_in: usize, fan_out: usize },
    Conv2d { x: Var, k: Var, b: Var, d: ConvDims },
    MaxPool { x: Var, argmax: Vec<usize> },
    Elu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Gat(Box<GatCache>),
    AddPool { x: Var, membership: Vec<usize>, width: usize },
    Reshape { x: Var },
    GatherLast { x: Var, idx: Vec<usize>, width: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Min { a: Var, b: Var },
    Neg { x: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    MulConst { x: Var, c: Vec<f64> },
    Exp { x: Var },
    Square { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    MeanAll { x: Var },
    SumAll { x: Var },
    SumLast { x: Var, width: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` was not reached.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    differentiated: bool,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Adds a leaf; it is differentiable iff the tensor requires gradients.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Adds a differentiable leaf regardless of the tensor's flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var, NumericError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("tape node is well-formed")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// `y = x W + b` for `x` of shape `[in]` or `[rows, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if ws.len() != 2 || xs.is_empty() || xs.len() > 2 || last_dim(&xs) != ws[0] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (fan_in, fan_out) = (ws[0], ws[1]);
        if bs != [fan_out] {
            return Err(shape_err("linear bias", &bs, &[fan_out]));
        }
        let rows = if xs.len() == 2 { xs[0] } else { 1 };
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = Vec::with_capacity(rows * fan_out);
        for r in 0..rows {
            let mut row = bv.clone();
            let xr = &xv[r * fan_in..(r + 1) * fan_in];
            for (i, &xi) in xr.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wr = &wv[i * fan_out..(i + 1) * fan_out];
                for (o, wo) in row.iter_mut().zip(wr) {
                    *o += xi * wo;
                }
            }
            out.extend_from_slice(&row);
        }
        let shape = if xs.len() == 2 { vec![rows, fan_out] } else { vec![fan_out] };
        let needs = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(shape, out, Op::Linear { x, w, b, rows, fan_in, fan_out }, needs))
    }

    /// Valid (unpadded) 2-D convolution. `x` is `[C,H,W]` or `[N,C,H,W]`,
    /// kernels are `[C_out, C_in, k, k]`, bias `[C_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var, NumericError> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        let (batch, c_in, h, w) = match xs.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(shape_err("conv2d", &xs, &ks)),
        };
        if ks.len() != 4 || ks[1] != c_in || stride == 0 {
            return Err(shape_err("conv2d", &xs, &ks));
        }
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h || kw > w {
            return Err(NumericError::KernelTooLarge {
                input: xs.clone(),
                kernel: ks.clone(),
            });
        }
        if self.shape(b) != [c_out] {
            return Err(shape_err("conv2d bias", self.shape(b), &[c_out]));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let d = ConvDims { batch, c_in, h, w, c_out, kh, kw, oh, ow, stride };
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[k.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; batch * c_out * oh * ow];
        for n in 0..batch {
            let xn = &xv[n * c_in * h * w..(n + 1) * c_in * h * w];
            for o in 0..c_out {
                let dst = &mut out[(n * c_out + o) * oh * ow..(n * c_out + o + 1) * oh * ow];
                dst.iter_mut().for_each(|v| *v = bv[o]);
                for c in 0..c_in {
                    let plane = &xn[c * h * w..(c + 1) * h * w];
                    let kern = &kv[((o * c_in + c) * kh) * kw..((o * c_in + c + 1) * kh) * kw];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..kh {
                                let row = (oy * stride + ky) * w + ox * stride;
                                for kx in 0..kw {
                                    acc += kern[ky * kw + kx] * plane[row + kx];
                                }
                            }
                            dst[oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }
        let shape = if xs.len() == 3 { vec![c_out, oh, ow] } else { vec![batch, c_out, oh, ow] };
        let needs = self.ng(x) || self.ng(k) || self.ng(b);
        Ok(self.push(shape, out, Op::Conv2d { x, k, b, d }, needs))
    }

    /// Non-overlapping max pooling over the two trailing axes.
    pub fn maxpool2d(&mut self, x: Var, window: usize) -> Result<Var, NumericError> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 || window == 0 {
            return Err(shape_err("maxpool2d", &xs, &[window, window]));
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        if h < window || w < window {
            return Err(NumericError::KernelTooLarge {
                input: xs.clone(),
                kernel: vec![window, window],
            });
        }
        let planes: usize = xs[..xs.len() - 2].iter().product();
        let (oh, ow) = (h / window, w / window);
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (oy * window) * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * window + dy) * w + ox * window + dx;
                            // strict comparison keeps the first maximum in row-major order
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([oh, ow]);
        let needs = self.ng(x);
        Ok(self.push(shape, out, Op::MaxPool { x, argmax }, needs))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x);
        self.push(shape, out, Op::Elu { x }, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x);
        self.push(shape, out, Op::LeakyRelu { x, slope }, needs)
    }

    /// Softmax along the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let width = last_dim(&shape);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let needs = self.ng(x);
        self.push(shape, out, Op::Softmax { x }, needs)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let width = last_dim(&shape);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let needs = self.ng(x);
        self.push(shape, out, Op::LogSoftmax { x }, needs)
    }

    /// GATv2 convolution with edge attributes and a transform shared between
    /// source and target nodes. Self-loops with all-zero attributes are
    /// injected for every node. Output is `[N, heads * dim]`, heads
    /// concatenated.
    pub fn gatv2(
        &mut self,
        h: Var,
        graph: &GraphBatch,
        vars: GatVars,
        heads: usize,
    ) -> Result<Var, NumericError> {
        graph.validate()?;
        let hs = self.shape(h).to_vec();
        let n = graph.num_nodes();
        if hs.len() != 2 || hs[0] != n {
            return Err(shape_err("gatv2 nodes", &hs, &[n]));
        }
        let f_in = hs[1];
        let ws = self.shape(vars.node).to_vec();
        if ws.len() != 2 || ws[0] != f_in || heads == 0 || ws[1] % heads != 0 {
            return Err(shape_err("gatv2 node transform", &ws, &[f_in]));
        }
        let width = ws[1];
        let dim = width / heads;
        let f_edge = graph.edge_dim();
        if self.shape(vars.edge) != [f_edge, width] {
            return Err(shape_err("gatv2 edge transform", self.shape(vars.edge), &[f_edge, width]));
        }
        if self.shape(vars.attention) != [heads, dim] {
            return Err(shape_err("gatv2 attention", self.shape(vars.attention), &[heads, dim]));
        }
        if self.shape(vars.bias) != [width] {
            return Err(shape_err("gatv2 bias", self.shape(vars.bias), &[width]));
        }

        let mut edges = graph.edges().to_vec();
        let mut edge_attr = graph.edge_attrs().to_vec();
        for v in 0..n {
            edges.push((v, v));
            edge_attr.extend(std::iter::repeat(0.0).take(f_edge));
        }
        let e_total = edges.len();
        let mut incoming = vec![Vec::new(); n];
        for (k, &(_, dst)) in edges.iter().enumerate() {
            incoming[dst].push(k);
        }

        let hv = self.value(h);
        let wv = self.value(vars.node);
        let transformed = matmul(hv, wv, n, f_in, width);
        let we = self.value(vars.edge);
        let edge_t = matmul(&edge_attr, we, e_total, f_edge, width);
        let att = self.value(vars.attention);

        let mut pre_act = vec![0.0; e_total * width];
        let mut scores = vec![0.0; e_total * heads];
        for (k, &(src, dst)) in edges.iter().enumerate() {
            for j in 0..width {
                let z = transformed[src * width + j] + transformed[dst * width + j] + edge_t[k * width + j];
                pre_act[k * width + j] = z;
            }
            for hd in 0..heads {
                let mut s = 0.0;
                for c in 0..dim {
                    let z = pre_act[k * width + hd * dim + c];
                    let l = if z > 0.0 { z } else { GAT_NEGATIVE_SLOPE * z };
                    s += att[hd * dim + c] * l;
                }
                scores[k * heads + hd] = s;
            }
        }
        let mut alpha = vec![0.0; e_total * heads];
        let bias = self.value(vars.bias);
        let mut out = Vec::with_capacity(n * width);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        for (v, inc) in incoming.iter().enumerate() {
            for hd in 0..heads {
                let max = inc.iter().map(|&k| scores[k * heads + hd]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = inc.iter().map(|&k| (scores[k * heads + hd] - max).exp()).sum();
                for &k in inc {
                    let a = (scores[k * heads + hd] - max).exp() / denom;
                    alpha[k * heads + hd] = a;
                    let src = edges[k].0;
                    for c in 0..dim {
                        out[v * width + hd * dim + c] += a * transformed[src * width + hd * dim + c];
                    }
                }
            }
        }
        let needs = self.ng(h) || self.ng(vars.node) || self.ng(vars.edge) || self.ng(vars.attention) || self.ng(vars.bias);
        let cache = GatCache {
            h,
            vars,
            heads,
            dim,
            f_in,
            f_edge,
            edges,
            edge_attr,
            incoming,
            transformed,
            pre_act,
            alpha,
        };
        Ok(self.push(vec![n, width], out, Op::Gat(Box::new(cache)), needs))
    }

    /// Per-graph elementwise sum of node rows.
    pub fn global_add_pool(&mut self, x: Var, membership: &[usize], num_graphs: usize) -> Result<Var, NumericError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != membership.len() {
            return Err(shape_err("global_add_pool", &xs, &[membership.len()]));
        }
        if let Some(&g) = membership.iter().find(|&&g| g >= num_graphs) {
            return Err(NumericError::InvalidGraph(format!("membership {g} >= {num_graphs} graphs")));
        }
        let width = xs[1];
        let xv = self.value(x);
        let mut out = vec![0.0; num_graphs * width];
        for (n, &g) in membership.iter().enumerate() {
            for f in 0..width {
                out[g * width + f] += xv[n * width + f];
            }
        }
        let needs = self.ng(x);
        Ok(self.push(vec![num_graphs, width], out, Op::AddPool { x, membership: membership.to_vec(), width }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let needs = self.ng(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape { x }, needs))
    }

    /// Picks `x[r, idx[r]]` from a `[rows, width]` tensor.
    pub fn gather_last(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let xs = self.shape(x).to_vec();
        let width = last_dim(&xs);
        let rows = self.value(x).len() / width;
        if rows != idx.len() || idx.iter().any(|&i| i >= width) {
            return Err(shape_err("gather_last", &xs, &[idx.len()]));
        }
        let xv = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &i)| xv[r * width + i]).collect();
        let needs = self.ng(x);
        Ok(self.push(vec![rows], out, Op::GatherLast { x, idx: idx.to_vec(), width }, needs))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>), NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((self.shape(a).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (s, v) = self.binary(a, b, "add", |x, y| x + y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(s, v, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (s, v) = self.binary(a, b, "sub", |x, y| x - y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(s, v, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (s, v) = self.binary(a, b, "mul", |x, y| x * y)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(s, v, Op::Mul { a, b }, needs))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (s, v) = self.binary(a, b, "minimum", f64::min)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(s, v, Op::Min { a, b }, needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x);
        self.push(shape, out, op, needs)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Adds a constant (non-differentiable) tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var, NumericError> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("add_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x);
        Ok(self.push(shape, out, Op::AddConst { x }, needs))
    }

    /// Multiplies by a constant (non-differentiable) tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var, NumericError> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x);
        Ok(self.push(shape, out, Op::MulConst { x, c: c.to_vec() }, needs))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.ng(x);
        self.push(vec![1], vec![m], Op::MeanAll { x }, needs)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum::<f64>();
        let needs = self.ng(x);
        self.push(vec![1], vec![s], Op::SumAll { x }, needs)
    }

    /// Sums over the last axis, `[.., w] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let width = last_dim(&shape);
        let out: Vec<f64> = self.value(x).chunks(width).map(|r| r.iter().sum()).collect();
        let new_shape = if shape.len() > 1 { shape[..shape.len() - 1].to_vec() } else { vec![1] };
        let needs = self.ng(x);
        self.push(new_shape, out, Op::SumLast { x, width }, needs)
    }

    /// Differentiates the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericError> {
        if self.differentiated {
            return Err(NumericError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(NumericError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.differentiated = true;
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (g, n) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) && n.needs_grad {
                    return Err(NumericError::NonFinite("gradient"));
                }
            }
        }
        Ok(Gradients { grads, lens })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, rows, fan_in, fan_out } => {
                let (rows, fi, fo) = (*rows, *fan_in, *fan_out);
                let xv = &nodes[x.0].value;
                let wv = &nodes[w.0].value;
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        for i in 0..fi {
                            let wr = &wv[i * fo..(i + 1) * fo];
                            let gr = &g[r * fo..(r + 1) * fo];
                            dx[r * fi + i] += wr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for r in 0..rows {
                        for i in 0..fi {
                            let xi = xv[r * fi + i];
                            if xi == 0.0 {
                                continue;
                            }
                            for o in 0..fo {
                                dw[i * fo + o] += xi * g[r * fo + o];
                            }
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for r in 0..rows {
                        for o in 0..fo {
                            db[o] += g[r * fo + o];
                        }
                    }
                });
            }
            Op::Conv2d { x, k, b, d } => {
                let d = *d;
                let xv = &nodes[x.0].value;
                let kv = &nodes[k.0].value;
                let plane_out = d.oh * d.ow;
                acc(*b, &mut |db| {
                    for n in 0..d.batch {
                        for o in 0..d.c_out {
                            let base = (n * d.c_out + o) * plane_out;
                            db[o] += g[base..base + plane_out].iter().sum::<f64>();
                        }
                    }
                });
                acc(*k, &mut |dk| {
                    for n in 0..d.batch {
                        for o in 0..d.c_out {
                            let gbase = (n * d.c_out + o) * plane_out;
                            for c in 0..d.c_in {
                                let xbase = (n * d.c_in + c) * d.h * d.w;
                                let kbase = (o * d.c_in + c) * d.kh * d.kw;
                                for ky in 0..d.kh {
                                    for kx in 0..d.kw {
                                        let mut s = 0.0;
                                        for oy in 0..d.oh {
                                            for ox in 0..d.ow {
                                                s += g[gbase + oy * d.ow + ox]
                                                    * xv[xbase + (oy * d.stride + ky) * d.w + ox * d.stride + kx];
                                            }
                                        }
                                        dk[kbase + ky * d.kw + kx] += s;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*x, &mut |dx| {
                    for n in 0..d.batch {
                        for o in 0..d.c_out {
                            let gbase = (n * d.c_out + o) * plane_out;
                            for c in 0..d.c_in {
                                let xbase = (n * d.c_in + c) * d.h * d.w;
                                let kbase = (o * d.c_in + c) * d.kh * d.kw;
                                for oy in 0..d.oh {
                                    for ox in 0..d.ow {
                                        let go = g[gbase + oy * d.ow + ox];
                                        if go == 0.0 {
                                            continue;
                                        }
                                        for ky in 0..d.kh {
                                            let row = xbase + (oy * d.stride + ky) * d.w + ox * d.stride;
                                            for kx in 0..d.kw {
                                                dx[row + kx] += go * kv[kbase + ky * d.kw + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |dx| {
                for (gi, &src) in g.iter().zip(argmax) {
                    dx[src] += gi;
                }
            }),
            Op::Elu { x } => {
                let y = &node.value;
                acc(*x, &mut |dx| {
                    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(g) {
                        *d += if yi > 0.0 { gi } else { gi * (yi + 1.0) };
                    }
                })
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, &xi), &gi) in dx.iter_mut().zip(xv).zip(g) {
                        *d += if xi > 0.0 { gi } else { gi * slope };
                    }
                })
            }
            Op::Softmax { x } => {
                let y = &node.value;
                let width = last_dim(&node.shape);
                acc(*x, &mut |dx| {
                    for ((dr, yr), gr) in dx.chunks_mut(width).zip(y.chunks(width)).zip(g.chunks(width)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += yi * (gi - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax { x } => {
                let y = &node.value;
                let width = last_dim(&node.shape);
                acc(*x, &mut |dx| {
                    for ((dr, yr), gr) in dx.chunks_mut(width).zip(y.chunks(width)).zip(g.chunks(width)) {
                        let total: f64 = gr.iter().sum();
                        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += gi - yi.exp() * total;
                        }
                    }
                })
            }
            Op::Gat(cache) => gat_backward(nodes, cache, g, &mut acc),
            Op::AddPool { x, membership, width } => acc(*x, &mut |dx| {
                for (n, &gid) in membership.iter().enumerate() {
                    for f in 0..*width {
                        dx[n * width + f] += g[gid * width + f];
                    }
                }
            }),
            Op::Reshape { x } => acc(*x, &mut |dx| add_into(dx, g)),
            Op::GatherLast { x, idx, width } => acc(*x, &mut |dx| {
                for (r, &i) in idx.iter().enumerate() {
                    dx[r * width + i] += g[r];
                }
            }),
            Op::Add { a, b } => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }
            Op::Mul { a, b } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |d| d.iter_mut().zip(g).zip(bv).for_each(|((d, gi), bi)| *d += gi * bi));
                acc(*b, &mut |d| d.iter_mut().zip(g).zip(av).for_each(|((d, gi), ai)| *d += gi * ai));
            }
            Op::Min { a, b } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        if av[j] <= bv[j] {
                            d[j] += g[j];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for j in 0..d.len() {
                        if av[j] > bv[j] {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Neg { x } => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi)),
            Op::Scale { x, c } => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * c)),
            Op::AddConst { x } => acc(*x, &mut |d| add_into(d, g)),
            Op::MulConst { x, c } => acc(*x, &mut |d| d.iter_mut().zip(g).zip(c).for_each(|((d, gi), ci)| *d += gi * ci)),
            Op::Exp { x } => {
                let y = &node.value;
                acc(*x, &mut |d| d.iter_mut().zip(g).zip(y).for_each(|((d, gi), yi)| *d += gi * yi));
            }
            Op::Square { x } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |d| d.iter_mut().zip(g).zip(xv).for_each(|((d, gi), xi)| *d += 2.0 * gi * xi));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |d| {
                    for ((d, gi), xi) in d.iter_mut().zip(g).zip(xv) {
                        if *xi >= *lo && *xi <= *hi {
                            *d += gi;
                        }
                    }
                });
            }
            Op::MeanAll { x } => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::SumAll { x } => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SumLast { x, width } => acc(*x, &mut |d| {
                for (r, row) in d.chunks_mut(*width).enumerate() {
                    row.iter_mut().for_each(|v| *v += g[r]);
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for i in 0..inner {
            let av = a[r * inner + i];
            if av == 0.0 {
                continue;
            }
            for c in 0..cols {
                out[r * cols + c] += av * b[i * cols + c];
            }
        }
    }
    out
}

fn gat_backward(
    nodes: &[Node],
    cache: &GatCache,
    g: &[f64],
    acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64])),
) {
    let GatCache { h, vars, heads, dim, f_in, f_edge, edges, edge_attr, incoming, transformed, pre_act, alpha } = cache;
    let (heads, dim, f_in, f_edge) = (*heads, *dim, *f_in, *f_edge);
    let width = heads * dim;
    let n = incoming.len();
    let att = &nodes[vars.attention.0].value;

    let mut d_trans = vec![0.0; n * width];
    let mut d_edge_t = vec![0.0; edges.len() * width];
    let mut d_att = vec![0.0; heads * dim];
    let mut d_alpha = Vec::new();
    for (v, inc) in incoming.iter().enumerate() {
        for hd in 0..heads {
            let gv = &g[v * width + hd * dim..v * width + (hd + 1) * dim];
            d_alpha.clear();
            for &k in inc {
                let src = edges[k].0;
                let xs = &transformed[src * width + hd * dim..src * width + (hd + 1) * dim];
                d_alpha.push(gv.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>());
                let a = alpha[k * heads + hd];
                for c in 0..dim {
                    d_trans[src * width + hd * dim + c] += a * gv[c];
                }
            }
            let dot: f64 = inc.iter().zip(&d_alpha).map(|(&k, da)| alpha[k * heads + hd] * da).sum();
            for (&k, da) in inc.iter().zip(&d_alpha) {
                let ds = alpha[k * heads + hd] * (da - dot);
                if ds == 0.0 {
                    continue;
                }
                let (src, dst) = edges[k];
                for c in 0..dim {
                    let j = hd * dim + c;
                    let z = pre_act[k * width + j];
                    let (l, slope) = if z > 0.0 { (z, 1.0) } else { (GAT_NEGATIVE_SLOPE * z, GAT_NEGATIVE_SLOPE) };
                    d_att[hd * dim + c] += ds * l;
                    let dz = ds * att[hd * dim + c] * slope;
                    d_trans[src * width + j] += dz;
                    d_trans[dst * width + j] += dz;
                    d_edge_t[k * width + j] += dz;
                }
            }
        }
    }

    acc(vars.bias, &mut |db| {
        for v in 0..n {
            for j in 0..width {
                db[j] += g[v * width + j];
            }
        }
    });
    acc(vars.attention, &mut |da| add_into(da, &d_att));
    let hv = &nodes[h.0].value;
    acc(vars.node, &mut |dw| {
        for v in 0..n {
            for i in 0..f_in {
                let hi = hv[v * f_in + i];
                if hi == 0.0 {
                    continue;
                }
                for j in 0..width {
                    dw[i * width + j] += hi * d_trans[v * width + j];
                }
            }
        }
    });
    acc(vars.edge, &mut |dwe| {
        for k in 0..edges.len() {
            for i in 0..f_edge {
                let e = edge_attr[k * f_edge + i];
                if e == 0.0 {
                    continue;
                }
                for j in 0..width {
                    dwe[i * width + j] += e * d_edge_t[k * width + j];
                }
            }
        }
    });
    let wv = &nodes[vars.node.0].value;
    acc(*h, &mut |dh| {
        for v in 0..n {
            for i in 0..f_in {
                let wr = &wv[i * width..(i + 1) * width];
                let dr = &d_trans[v * width..(v + 1) * width];
                dh[v * f_in + i] += wr.iter().zip(dr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    });
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
