use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{AutodiffError, ParamId, ParamStore, Real, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Precomputed bilinear lookup into a `[C, H, W]` map: corner `(x0, y0)` and
/// fractional offsets. `x0 + 1` and `y0 + 1` must be in range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap<T> {
    pub x0: u32,
    pub y0: u32,
    pub fx: T,
    pub fy: T,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Variable,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Abs(usize),
    Log(usize),
    Exp(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv2d { x: usize, w: usize, b: Option<usize> },
    AvgPool2(usize),
    Upsample2(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Softmax(usize),
    GatherRows { table: usize, idx: Vec<u32> },
    Bilinear { map: usize, taps: Vec<Option<BilinearTap<T>>> },
    TrilinearBlend { x: usize, w: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended by the forward ops and differentiated
/// in reverse by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, usize>,
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }
}

fn shape_err<S: Into<String>>(s: S) -> AutodiffError {
    AutodiffError::Shape(s.into())
}

fn acc<T: Real>(slot: &mut Option<Vec<T>>, n: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); n])
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(AutodiffError::Usage("variable does not belong to this tape".into()));
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>, AutodiffError> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize], AutodiffError> {
        Ok(&self.nodes[self.idx(v)?].value.shape)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Result<Var, AutodiffError> {
        if value.data.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var { tape: self.id, idx: self.nodes.len() - 1 })
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    /// Input that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, AutodiffError> {
        self.push(t, Op::Constant, false, "constant")
    }

    /// Input whose gradient is reported by [`Tape::gradients`].
    pub fn variable(&mut self, t: Tensor<T>) -> Result<Var, AutodiffError> {
        self.push(t, Op::Variable, true, "variable")
    }

    /// Places a stored parameter on the tape; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var, AutodiffError> {
        if let Some(&i) = self.param_nodes.get(&id) {
            return Ok(Var { tape: self.id, idx: i });
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable, "param")?;
        self.param_nodes.insert(id, v.idx);
        Ok(v)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Tensor<T>, bool), AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (x, y) = (self.val(ia), self.val(ib));
        if x.shape != y.shape {
            return Err(shape_err(format!("{name}: shapes {:?} and {:?} differ", x.shape, y.shape)));
        }
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let ng = self.ng(ia) || self.ng(ib);
        Ok((ia, ib, Tensor { shape: x.shape.clone(), data }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t, ng) = self.binary(a, b, "add", |p, q| p + q)?;
        self.push(t, Op::Add(ia, ib), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t, ng) = self.binary(a, b, "sub", |p, q| p - q)?;
        self.push(t, Op::Sub(ia, ib), ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t, ng) = self.binary(a, b, "mul", |p, q| p * q)?;
        self.push(t, Op::Mul(ia, ib), ng, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib, t, ng) = self.binary(a, b, "div", |p, q| p / q)?;
        self.push(t, Op::Div(ia, ib), ng, "div")
    }

    fn unary(&mut self, a: Var, op: impl FnOnce(usize) -> Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let t = Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&p| f(p)).collect() };
        let ng = self.ng(ia);
        self.push(t, op(ia), ng, name)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        self.unary(a, |i| Op::Scale(i, c), "scale", |p| p * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        self.unary(a, Op::AddScalar, "add_scalar", |p| p + c)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Abs, "abs", |p| p.abs())
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Log, "log", |p| p.ln())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Exp, "exp", |p| p.exp())
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Relu, "relu", |p| if p > T::zero() { p } else { T::zero() })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let s = self.val(ia).data.iter().copied().sum();
        let ng = self.ng(ia);
        self.push(Tensor::scalar(s), Op::Sum(ia), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        if x.data.is_empty() {
            return Err(shape_err("mean of an empty tensor"));
        }
        let s: T = x.data.iter().copied().sum();
        let m = s / T::of(x.data.len() as f64);
        let ng = self.ng(ia);
        self.push(Tensor::scalar(m), Op::Mean(ia), ng, "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let t = Tensor::new(shape, x.data.clone())?;
        let ng = self.ng(ia);
        self.push(t, Op::Reshape(ia), ng, "reshape")
    }

    /// `x·w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let (xs, ws) = (&self.val(ix).shape, &self.val(iw).shape);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err(format!("linear: input {xs:?} and weight {ws:?} do not chain")));
        }
        let (m, k, n) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &self.val(ix).data, false, &self.val(iw).data, false, T::zero(), &mut out);
        if let Some(ib) = ib {
            let bias = self.val(ib);
            if bias.shape != [n] {
                return Err(shape_err(format!("linear: bias {:?} needs [{n}]", bias.shape)));
            }
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(&bias.data).for_each(|(o, &b)| *o += b);
            }
        }
        let ng = self.ng(ix) || self.ng(iw) || ib.is_some_and(|i| self.ng(i));
        self.push(Tensor { shape: vec![m, n], data: out }, Op::Linear { x: ix, w: iw, b: ib }, ng, "linear")
    }

    /// Stride-1 "same" convolution: `x: [N, Cin, H, W]`, `w: [Cout, Cin, k, k]`
    /// with odd `k`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let (xs, ws) = (self.val(ix).shape.clone(), self.val(iw).shape.clone());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(shape_err(format!("conv2d: input {xs:?} and weight {ws:?} are incompatible")));
        }
        let (nb, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        let hw = h * wd;
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); nb * cout * hw];
        let mut col = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
        for n in 0..nb {
            let xn = &self.val(ix).data[n * cin * hw..(n + 1) * cin * hw];
            let src: &[T] = if k == 1 {
                xn
            } else {
                kernels::im2col(xn, cin, h, wd, k, &mut col);
                &col
            };
            T::gemm(cout, ckk, hw, T::one(), &self.val(iw).data, false, src, false, T::zero(), &mut out[n * cout * hw..(n + 1) * cout * hw]);
        }
        if let Some(ib) = ib {
            let bias = &self.val(ib);
            if bias.shape != [cout] {
                return Err(shape_err(format!("conv2d: bias {:?} needs [{cout}]", bias.shape)));
            }
            for (c, plane) in out.chunks_mut(hw).enumerate() {
                let bv = bias.data[c % cout];
                plane.iter_mut().for_each(|o| *o += bv);
            }
        }
        let ng = self.ng(ix) || self.ng(iw) || ib.is_some_and(|i| self.ng(i));
        self.push(Tensor { shape: vec![nb, cout, h, wd], data: out }, Op::Conv2d { x: ix, w: iw, b: ib }, ng, "conv2d")
    }

    /// 2×2 average pooling over the last two axes of `[N, C, H, W]` (H, W even).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let xs = self.val(ix).shape.clone();
        if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
            return Err(shape_err(format!("avg_pool2: shape {xs:?} needs even spatial size")));
        }
        let (h, w) = (xs[2], xs[3]);
        let planes = xs[0] * xs[1];
        let quarter = T::of(0.25);
        let src = &self.val(ix).data;
        let mut out = vec![T::zero(); planes * h * w / 4];
        for p in 0..planes {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let base = p * h * w + 2 * y * w + 2 * xx;
                    out[p * h * w / 4 + y * (w / 2) + xx] = (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter;
                }
            }
        }
        let ng = self.ng(ix);
        self.push(Tensor { shape: vec![xs[0], xs[1], h / 2, w / 2], data: out }, Op::AvgPool2(ix), ng, "avg_pool2")
    }

    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let xs = self.val(ix).shape.clone();
        if xs.len() != 4 {
            return Err(shape_err(format!("upsample2: shape {xs:?} is not 4-d")));
        }
        let (h, w) = (xs[2], xs[3]);
        let planes = xs[0] * xs[1];
        let src = &self.val(ix).data;
        let mut out = vec![T::zero(); planes * h * w * 4];
        for p in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[p * 4 * h * w + y * 2 * w + xx] = src[p * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let ng = self.ng(ix);
        self.push(Tensor { shape: vec![xs[0], xs[1], 2 * h, 2 * w], data: out }, Op::Upsample2(ix), ng, "upsample2")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat of nothing"));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_, _>>()?;
        let first = self.val(idx[0]).shape.clone();
        if axis >= first.len() {
            return Err(shape_err(format!("concat: axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &i in &idx {
            let s = &self.val(i).shape;
            if s.len() != first.len() || s.iter().enumerate().any(|(a, &d)| a != axis && d != first[a]) {
                return Err(shape_err(format!("concat: {s:?} does not match {first:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let t = self.val(i);
                let blk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = idx.iter().any(|&i| self.ng(i));
        self.push(Tensor { shape, data }, Op::Concat { parts: idx, axis }, ng, "concat")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let xs = self.val(ix).shape.clone();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(shape_err(format!("narrow: [{start}, {}) on axis {axis} of {xs:?}", start + len)));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let src = &self.val(ix).data;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * xs[axis] * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let ng = self.ng(ix);
        self.push(Tensor { shape, data }, Op::Narrow { x: ix, axis, start }, ng, "narrow")
    }

    /// Softmax over the last axis, max-shifted for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        let c = *t.shape.last().ok_or_else(|| shape_err("softmax of a scalar"))?;
        let mut data = t.data.clone();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let shape = t.shape.clone();
        let ng = self.ng(ix);
        self.push(Tensor { shape, data }, Op::Softmax(ix), ng, "softmax")
    }

    /// Rows `idx` of a `[R, F]` table, giving `[idx.len(), F]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<u32>) -> Result<Var, AutodiffError> {
        let it = self.idx(table)?;
        let t = self.val(it);
        if t.rank() != 2 {
            return Err(shape_err(format!("gather_rows: table {:?} is not 2-d", t.shape)));
        }
        let (r, f) = (t.shape[0], t.shape[1]);
        if let Some(bad) = idx.iter().find(|&&i| i as usize >= r) {
            return Err(shape_err(format!("gather_rows: row {bad} out of {r}")));
        }
        let mut data = Vec::with_capacity(idx.len() * f);
        for &i in &idx {
            data.extend_from_slice(&t.data[i as usize * f..(i as usize + 1) * f]);
        }
        let ng = self.ng(it);
        let n = idx.len();
        self.push(Tensor { shape: vec![n, f], data }, Op::GatherRows { table: it, idx }, ng, "gather_rows")
    }

    /// Bilinear samples of a `[C, H, W]` map at fixed positions, giving
    /// `[P, C]`. A `None` tap yields a zero row.
    pub fn bilinear_sample(&mut self, map: Var, taps: Vec<Option<BilinearTap<T>>>) -> Result<Var, AutodiffError> {
        let im = self.idx(map)?;
        let t = self.val(im);
        if t.rank() != 3 {
            return Err(shape_err(format!("bilinear_sample: map {:?} is not [C, H, W]", t.shape)));
        }
        let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
        for tap in taps.iter().flatten() {
            if tap.x0 as usize + 1 >= w || tap.y0 as usize + 1 >= h {
                return Err(shape_err(format!("bilinear_sample: tap ({}, {}) outside {w}×{h}", tap.x0, tap.y0)));
            }
        }
        let mut data = vec![T::zero(); taps.len() * c];
        for (row, tap) in data.chunks_mut(c).zip(&taps) {
            let Some(tap) = tap else { continue };
            let wts = kernels::bilinear_weights(tap);
            let base = tap.y0 as usize * w + tap.x0 as usize;
            let offs = [base, base + 1, base + w, base + w + 1];
            for (ch, o) in row.iter_mut().enumerate() {
                let plane = &t.data[ch * h * w..];
                *o = wts[0] * plane[offs[0]] + wts[1] * plane[offs[1]] + wts[2] * plane[offs[2]] + wts[3] * plane[offs[3]];
            }
        }
        let ng = self.ng(im);
        let p = taps.len();
        self.push(Tensor { shape: vec![p, c], data }, Op::Bilinear { map: im, taps }, ng, "bilinear_sample")
    }

    /// Weighted sum of consecutive groups of 8 rows: `x: [P·8, F]`,
    /// `w: [P·8]` constant, giving `[P, F]`.
    pub fn trilinear_blend(&mut self, x: Var, w: Vec<T>) -> Result<Var, AutodiffError> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        if t.rank() != 2 || t.shape[0] % 8 != 0 || w.len() != t.shape[0] {
            return Err(shape_err(format!("trilinear_blend: rows {:?} with {} weights", t.shape, w.len())));
        }
        let (rows, f) = (t.shape[0], t.shape[1]);
        let mut data = vec![T::zero(); rows / 8 * f];
        for (r, &wr) in w.iter().enumerate() {
            let out = &mut data[(r / 8) * f..(r / 8 + 1) * f];
            out.iter_mut().zip(&t.data[r * f..(r + 1) * f]).for_each(|(o, &v)| *o += wr * v);
        }
        let ng = self.ng(ix);
        self.push(Tensor { shape: vec![rows / 8, f], data }, Op::TrilinearBlend { x: ix, w }, ng, "trilinear_blend")
    }

    /// Reverse sweep from a scalar `loss`; returns gradients of every node that
    /// depends on a variable or trainable parameter.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let il = self.idx(loss)?;
        if self.val(il).numel() != 1 {
            return Err(AutodiffError::Usage(format!("loss must be scalar, got shape {:?}", self.val(il).shape)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![T::one()]);
        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    /// Runs [`Tape::gradients`] and adds the gradients of trainable parameters
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>, AutodiffError> {
        let g = self.gradients(loss)?;
        for (&id, &node) in &self.param_nodes {
            if let Some(pg) = &g.grads[node] {
                let p = store.get_mut(id);
                if p.trainable {
                    p.grad.iter_mut().zip(pg).for_each(|(a, &b)| *a += b);
                }
            }
        }
        Ok(g)
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), AutodiffError> {
        let out = &self.nodes[i].value;
        let give = |j: usize, grads: &mut [Option<Vec<T>>], f: &mut dyn FnMut(&mut [T])| {
            if self.ng(j) {
                let n = self.val(j).numel();
                f(acc(&mut grads[j], n));
            }
        };
        match &self.nodes[i].op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::Add(a, b) => {
                give(*a, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                give(*b, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Sub(a, b) => {
                give(*a, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                give(*b, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (x, y) = (&self.val(*a).data, &self.val(*b).data);
                give(*a, grads, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
                give(*b, grads, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * x[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (x, y) = (&self.val(*a).data, &self.val(*b).data);
                give(*a, grads, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / y[k];
                    }
                });
                give(*b, grads, &mut |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * x[k] / (y[k] * y[k]);
                    }
                });
            }
            Op::Scale(a, c) => give(*a, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c)),
            Op::AddScalar(a) | Op::Reshape(a) => give(*a, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g)),
            Op::Abs(a) => {
                let x = &self.val(*a).data;
                give(*a, grads, &mut |d| {
                    for k in 0..d.len() {
                        if x[k] > T::zero() {
                            d[k] += g[k];
                        } else if x[k] < T::zero() {
                            d[k] -= g[k];
                        }
                    }
                });
            }
            Op::Log(a) => {
                let x = &self.val(*a).data;
                give(*a, grads, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / x[k];
                    }
                });
            }
            Op::Exp(a) => give(*a, grads, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out.data[k];
                }
            }),
            Op::Relu(a) => {
                let x = &self.val(*a).data;
                give(*a, grads, &mut |d| {
                    for k in 0..d.len() {
                        if x[k] > T::zero() {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Sum(a) => give(*a, grads, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = T::of(self.val(*a).numel() as f64);
                give(*a, grads, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (&self.val(*x).shape, &self.val(*w).shape);
                let (m, k, n) = (xs[0], xs[1], ws[1]);
                let (xd, wd) = (&self.val(*x).data, &self.val(*w).data);
                give(*x, grads, &mut |d| T::gemm(m, n, k, T::one(), g, false, wd, true, T::one(), d));
                give(*w, grads, &mut |d| T::gemm(k, m, n, T::one(), xd, true, g, false, T::one(), d));
                if let Some(b) = b {
                    give(*b, grads, &mut |d| {
                        for row in g.chunks(n) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b } => {
                let (xs, ws) = (self.val(*x).shape.clone(), self.val(*w).shape.clone());
                let (nb, cin, h, wdt) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, k) = (ws[0], ws[2]);
                let hw = h * wdt;
                let ckk = cin * k * k;
                let (xd, wd) = (&self.val(*x).data, &self.val(*w).data);
                if self.ng(*w) {
                    let mut col = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
                    give(*w, grads, &mut |d| {
                        for n in 0..nb {
                            let xn = &xd[n * cin * hw..(n + 1) * cin * hw];
                            let src: &[T] = if k == 1 {
                                xn
                            } else {
                                kernels::im2col(xn, cin, h, wdt, k, &mut col);
                                &col
                            };
                            T::gemm(cout, hw, ckk, T::one(), &g[n * cout * hw..(n + 1) * cout * hw], false, src, true, T::one(), d);
                        }
                    });
                }
                if self.ng(*x) {
                    let mut dcol = vec![T::zero(); ckk * hw];
                    give(*x, grads, &mut |d| {
                        for n in 0..nb {
                            let gn = &g[n * cout * hw..(n + 1) * cout * hw];
                            let dn = &mut d[n * cin * hw..(n + 1) * cin * hw];
                            if k == 1 {
                                T::gemm(ckk, cout, hw, T::one(), wd, true, gn, false, T::one(), dn);
                            } else {
                                T::gemm(ckk, cout, hw, T::one(), wd, true, gn, false, T::zero(), &mut dcol);
                                kernels::col2im(&dcol, cin, h, wdt, k, dn);
                            }
                        }
                    });
                }
                if let Some(b) = b {
                    give(*b, grads, &mut |d| {
                        for (c, plane) in g.chunks(hw).enumerate() {
                            d[c % cout] += plane.iter().copied().sum();
                        }
                    });
                }
            }
            Op::AvgPool2(a) => {
                let xs = &self.val(*a).shape;
                let (h, w) = (xs[2], xs[3]);
                let planes = xs[0] * xs[1];
                let quarter = T::of(0.25);
                give(*a, grads, &mut |d| {
                    for p in 0..planes {
                        for y in 0..h {
                            for x in 0..w {
                                d[p * h * w + y * w + x] += g[p * h * w / 4 + (y / 2) * (w / 2) + x / 2] * quarter;
                            }
                        }
                    }
                });
            }
            Op::Upsample2(a) => {
                let xs = &self.val(*a).shape;
                let (h, w) = (xs[2], xs[3]);
                let planes = xs[0] * xs[1];
                give(*a, grads, &mut |d| {
                    for p in 0..planes {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                d[p * h * w + (y / 2) * w + x / 2] += g[p * 4 * h * w + y * 2 * w + x];
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let os = &out.shape;
                let outer: usize = os[..*axis].iter().product();
                let inner: usize = os[axis + 1..].iter().product();
                let row = os[*axis] * inner;
                let mut off = 0;
                for &p in parts {
                    let blk = self.val(p).shape[*axis] * inner;
                    give(p, grads, &mut |d| {
                        for o in 0..outer {
                            let src = &g[o * row + off..o * row + off + blk];
                            d[o * blk..(o + 1) * blk].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                        }
                    });
                    off += blk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = &self.val(*x).shape;
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let len = out.shape[*axis];
                give(*x, grads, &mut |d| {
                    for o in 0..outer {
                        let base = o * xs[*axis] * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        d[base..base + len * inner].iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                    }
                });
            }
            Op::Softmax(a) => {
                let c = *out.shape.last().expect("softmax output is not scalar");
                give(*a, grads, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data.chunks(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                        for k in 0..c {
                            dr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::GatherRows { table, idx } => {
                let f = self.val(*table).shape[1];
                give(*table, grads, &mut |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut d[i as usize * f..(i as usize + 1) * f];
                        dst.iter_mut().zip(&g[r * f..(r + 1) * f]).for_each(|(d, &g)| *d += g);
                    }
                });
            }
            Op::Bilinear { map, taps } => {
                let s = &self.val(*map).shape;
                let (c, h, w) = (s[0], s[1], s[2]);
                give(*map, grads, &mut |d| {
                    for (p, tap) in taps.iter().enumerate() {
                        let Some(tap) = tap else { continue };
                        let wts = kernels::bilinear_weights(tap);
                        let base = tap.y0 as usize * w + tap.x0 as usize;
                        let offs = [base, base + 1, base + w, base + w + 1];
                        for ch in 0..c {
                            let gv = g[p * c + ch];
                            let plane = &mut d[ch * h * w..(ch + 1) * h * w];
                            for q in 0..4 {
                                plane[offs[q]] += wts[q] * gv;
                            }
                        }
                    }
                });
            }
            Op::TrilinearBlend { x, w } => {
                let f = self.val(*x).shape[1];
                give(*x, grads, &mut |d| {
                    for (r, &wr) in w.iter().enumerate() {
                        let src = &g[(r / 8) * f..(r / 8 + 1) * f];
                        d[r * f..(r + 1) * f].iter_mut().zip(src).for_each(|(d, &g)| *d += wr * g);
                    }
                });
            }
        }
        Ok(())
    }
}
