//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape is a valid topological
//! order for backpropagation. Parameters are looked up by name and cached
//! per graph: a parameter used by several layers is a single node whose
//! gradient accumulates every use.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Result, StedError};
use crate::kernels;
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulBcast { x: Var, gate: Var },
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Warp { src: Var, disp: Var },
    Upsample2x(Var),
    Clamp { x: Var, lo: T, hi: T },
    AvgPool2(Var),
    MeanAbs(Var),
    MeanSquare(Var),
    TotalVariation(Var),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<BTreeMap<String, Var>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(BTreeMap::new()),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn rg_any(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (used for gradient checks and probes).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter node, created on first use and shared afterwards.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.borrow().get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| StedError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf, store.trainable());
        self.params.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Scalar value of a `[1,1,1,1]` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    /// Names and handles of every parameter used so far.
    pub fn param_vars(&self) -> BTreeMap<String, Var> {
        self.params.borrow().clone()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<[usize; 4]> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(StedError::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    /// Stride-1 convolution with `k/2` zero padding. Weight shape is
    /// `[cout, cin, k, k]`, bias `[1, cout, 1, 1]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, cin, h, wd] = xv.shape();
        let [cout, wcin, k, k2] = wv.shape();
        if wcin != cin || k != k2 || k % 2 == 0 {
            return Err(StedError::shape(format!(
                "conv weight {:?} incompatible with input {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let bv = b.map(|b| self.value(b));
        if let Some(bv) = &bv {
            if bv.numel() != cout {
                return Err(StedError::shape("conv bias length mismatch"));
            }
        }
        let mut out = Tensor::zeros([n, cout, h, wd]);
        let (ip, op) = (cin * h * wd, cout * h * wd);
        let mut scratch = Vec::new();
        for i in 0..n {
            kernels::conv2d_forward(
                &xv.data()[i * ip..(i + 1) * ip],
                wv.data(),
                bv.as_ref().map(|b| b.data()),
                cin,
                cout,
                h,
                wd,
                k,
                &mut scratch,
                &mut out.data_mut()[i * op..(i + 1) * op],
            );
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg_any(&deps);
        Ok(self.push(out, Op::Conv2d { x, w, b, k }, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(&self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), self.rg_any(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(&self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), self.rg_any(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(&self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), self.rg_any(&[a, b])))
    }

    /// `x * gate` with a single-channel `gate` broadcast over channels.
    pub fn mul_bcast(&self, x: Var, gate: Var) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gate);
        let [n, c, h, w] = xv.shape();
        if gv.shape() != [n, 1, h, w] {
            return Err(StedError::shape(format!(
                "broadcast gate {:?} does not fit {:?}",
                gv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.as_ref().clone();
        for i in 0..n {
            let gp = gv.plane(i, 0).to_vec();
            for j in 0..c {
                for (o, &a) in out.plane_mut(i, j).iter_mut().zip(&gp) {
                    *o *= a;
                }
            }
        }
        Ok(self.push(out, Op::MulBcast { x, gate }, self.rg_any(&[x, gate])))
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), self.rg(a))
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), self.rg(a))
    }

    /// `1 - a`
    pub fn one_minus(&self, a: Var) -> Var {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope), self.rg(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a), self.rg(a))
    }

    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_channels(&refs)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), self.rg_any(parts)))
    }

    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.c() || len == 0 {
            return Err(StedError::shape(format!(
                "channel slice {start}..{} out of {}",
                start + len,
                xv.c()
            )));
        }
        let v = xv.channels(start, len);
        Ok(self.push(v, Op::Slice { x, start }, self.rg(x)))
    }

    pub fn reshape(&self, x: Var, shape: [usize; 4]) -> Result<Var> {
        let v = self.value(x).as_ref().clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), self.rg(x)))
    }

    pub fn pixel_unshuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(StedError::shape(format!(
                "pixel_unshuffle: {h}x{w} not divisible by {r}"
            )));
        }
        let mut out = Tensor::zeros([n, c * r * r, h / r, w / r]);
        let per = c * h * w;
        for i in 0..n {
            kernels::pixel_unshuffle(
                &xv.data()[i * per..(i + 1) * per],
                c,
                h,
                w,
                r,
                &mut out.data_mut()[i * per..(i + 1) * per],
            );
        }
        Ok(self.push(out, Op::PixelUnshuffle(x, r), self.rg(x)))
    }

    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if r == 0 || c % (r * r) != 0 {
            return Err(StedError::shape(format!(
                "pixel_shuffle: {c} channels not divisible by {}",
                r * r
            )));
        }
        let oc = c / (r * r);
        let mut out = Tensor::zeros([n, oc, h * r, w * r]);
        let per = c * h * w;
        for i in 0..n {
            kernels::pixel_shuffle(
                &xv.data()[i * per..(i + 1) * per],
                oc,
                h * r,
                w * r,
                r,
                &mut out.data_mut()[i * per..(i + 1) * per],
            );
        }
        Ok(self.push(out, Op::PixelShuffle(x, r), self.rg(x)))
    }

    /// Horizontal backward warp. `disp` has `G` channels and `src` has a
    /// multiple of `G` channels; contiguous channel group `g` is warped by
    /// disparity channel `g`.
    pub fn warp(&self, src: Var, disp: Var) -> Result<Var> {
        let sv = self.value(src);
        let dv = self.value(disp);
        let [n, c, h, w] = sv.shape();
        let [dn, g, dh, dw] = dv.shape();
        if dn != n || dh != h || dw != w {
            return Err(StedError::shape(format!(
                "warp: disparity {:?} vs source {:?}",
                dv.shape(),
                sv.shape()
            )));
        }
        if g == 0 || c % g != 0 {
            return Err(StedError::shape(format!(
                "warp: {c} channels not divisible into {g} groups"
            )));
        }
        if !dv.is_finite() {
            return Err(StedError::Numerical("non-finite disparity".into()));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        let (sp, dp) = (c * h * w, g * h * w);
        for i in 0..n {
            kernels::warp_forward(
                &sv.data()[i * sp..(i + 1) * sp],
                &dv.data()[i * dp..(i + 1) * dp],
                c,
                g,
                h,
                w,
                &mut out.data_mut()[i * sp..(i + 1) * sp],
            );
        }
        Ok(self.push(out, Op::Warp { src, disp }, self.rg_any(&[src, disp])))
    }

    /// Bilinear ×2 upsampling (half-pixel centres).
    pub fn upsample2x(&self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        kernels::upsample2x_forward(xv.data(), n * c, h, w, out.data_mut());
        self.push(out, Op::Upsample2x(x), self.rg(x))
    }

    /// Clamp to `[lo, hi]`. Gradient passes inside the closed interval, and
    /// outside it only when descent would move the input back towards it.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(v, Op::Clamp { x, lo, hi }, self.rg(x))
    }

    /// 2×2 average pooling (odd trailing rows/columns are dropped).
    pub fn avg_pool2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let (oh, ow) = (h / 2, w / 2);
        let q = T::lit(0.25);
        let out = Tensor::from_fn([n, c, oh, ow], |i, j, y, xx| {
            (xv.at(i, j, 2 * y, 2 * xx)
                + xv.at(i, j, 2 * y, 2 * xx + 1)
                + xv.at(i, j, 2 * y + 1, 2 * xx)
                + xv.at(i, j, 2 * y + 1, 2 * xx + 1))
                * q
        });
        self.push(out, Op::AvgPool2(x), self.rg(x))
    }

    /// Mean of absolute values over every element.
    pub fn mean_abs(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|v| v.abs().as_f64()).sum();
        let v = Tensor::scalar(T::lit(s / xv.numel() as f64));
        self.push(v, Op::MeanAbs(x), self.rg(x))
    }

    /// Mean of squares over every element.
    pub fn mean_square(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|v| (*v * *v).as_f64()).sum();
        let v = Tensor::scalar(T::lit(s / xv.numel() as f64));
        self.push(v, Op::MeanSquare(x), self.rg(x))
    }

    /// Anisotropic total variation with forward differences, summed over
    /// both directions and divided by `N*C*H*W`.
    pub fn total_variation(&self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(T::lit(tv_value(&xv)));
        self.push(v, Op::TotalVariation(x), self.rg(x))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(StedError::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&nodes, &node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        nodes: &[Node<T>],
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_inplace(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, k } => {
                let (x, w, k) = (*x, *w, *k);
                let xv = val(x);
                let wv = val(w);
                let [n, cin, h, wd] = xv.shape();
                let cout = wv.shape()[0];
                let hw = h * wd;
                let ckk = cin * k * k;
                let mut dw = Tensor::zeros(wv.shape());
                let mut dx = Tensor::zeros(xv.shape());
                let mut col = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
                let mut dcol = vec![T::zero(); ckk * hw];
                for i in 0..n {
                    let xi = &xv.data()[i * cin * hw..(i + 1) * cin * hw];
                    let gi = &g.data()[i * cout * hw..(i + 1) * cout * hw];
                    if wants(w) {
                        let cols: &[T] = if k == 1 {
                            xi
                        } else {
                            kernels::im2col(xi, cin, h, wd, k, &mut col);
                            &col
                        };
                        T::gemm(
                            cout, hw, ckk, gi, hw as isize, 1, cols, 1, hw as isize, T::one(),
                            dw.data_mut(), ckk as isize, 1,
                        );
                    }
                    if wants(x) {
                        T::gemm(
                            ckk, cout, hw, wv.data(), 1, ckk as isize, gi, hw as isize, 1, T::zero(),
                            &mut dcol, hw as isize, 1,
                        );
                        let dxi = &mut dx.data_mut()[i * cin * hw..(i + 1) * cin * hw];
                        if k == 1 {
                            for (d, &v) in dxi.iter_mut().zip(&dcol) {
                                *d += v;
                            }
                        } else {
                            kernels::col2im(&dcol, cin, h, wd, k, dxi);
                        }
                    }
                }
                if let Some(b) = *b {
                    if wants(b) {
                        let mut db = Tensor::zeros(val(b).shape());
                        for i in 0..n {
                            for o in 0..cout {
                                let s: T = g.data()[(i * cout + o) * hw..(i * cout + o + 1) * hw]
                                    .iter()
                                    .copied()
                                    .sum();
                                db.data_mut()[o] += s;
                            }
                        }
                        acc(b, db);
                    }
                }
                acc(w, dw);
                acc(x, dx);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y).expect("shape"));
                }
                if wants(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y).expect("shape"));
                }
            }
            Op::MulBcast { x, gate } => {
                let (xv, gv) = (val(*x), val(*gate));
                let [n, c, _, _] = xv.shape();
                if wants(*x) {
                    let mut d = g.clone();
                    for i in 0..n {
                        let gp = gv.plane(i, 0);
                        for j in 0..c {
                            for (o, &a) in d.plane_mut(i, j).iter_mut().zip(gp) {
                                *o *= a;
                            }
                        }
                    }
                    acc(*x, d);
                }
                if wants(*gate) {
                    let mut d = Tensor::zeros(gv.shape());
                    for i in 0..n {
                        for j in 0..c {
                            let (gp, xp) = (g.plane(i, j), xv.plane(i, j));
                            for ((o, &a), &b) in d.plane_mut(i, 0).iter_mut().zip(gp).zip(xp) {
                                *o += a * b;
                            }
                        }
                    }
                    acc(*gate, d);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(*a, g.map(|v| v * s));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let d = g
                    .zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { gv * slope })
                    .expect("shape");
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .zip_map(out, |gv, s| gv * s * (T::one() - s))
                    .expect("shape");
                acc(*a, d);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = val(p).c();
                    if wants(p) {
                        acc(p, g.channels(start, c));
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xv = val(*x);
                let [n, c, h, w] = xv.shape();
                let len = g.c();
                let hw = h * w;
                let mut d = Tensor::zeros(xv.shape());
                for i in 0..n {
                    let dst = &mut d.data_mut()[(i * c + start) * hw..(i * c + start + len) * hw];
                    dst.copy_from_slice(&g.data()[i * len * hw..(i + 1) * len * hw]);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => {
                let d = g.clone().reshape(val(*x).shape()).expect("numel");
                acc(*x, d);
            }
            Op::PixelUnshuffle(x, r) => {
                let [n, c, h, w] = val(*x).shape();
                let mut d = Tensor::zeros([n, c, h, w]);
                let per = c * h * w;
                for i in 0..n {
                    kernels::pixel_shuffle(
                        &g.data()[i * per..(i + 1) * per],
                        c,
                        h,
                        w,
                        *r,
                        &mut d.data_mut()[i * per..(i + 1) * per],
                    );
                }
                acc(*x, d);
            }
            Op::PixelShuffle(x, r) => {
                let [n, c, h, w] = val(*x).shape();
                let mut d = Tensor::zeros([n, c, h, w]);
                let per = c * h * w;
                let oc = c / (r * r);
                for i in 0..n {
                    kernels::pixel_unshuffle(
                        &g.data()[i * per..(i + 1) * per],
                        oc,
                        h * r,
                        w * r,
                        *r,
                        &mut d.data_mut()[i * per..(i + 1) * per],
                    );
                }
                acc(*x, d);
            }
            Op::Warp { src, disp } => {
                let (sv, dv) = (val(*src), val(*disp));
                let [n, c, h, w] = sv.shape();
                let gr = dv.c();
                let mut ds = wants(*src).then(|| Tensor::zeros(sv.shape()));
                let mut dd = wants(*disp).then(|| Tensor::zeros(dv.shape()));
                let (sp, dp) = (c * h * w, gr * h * w);
                for i in 0..n {
                    kernels::warp_backward(
                        &sv.data()[i * sp..(i + 1) * sp],
                        &dv.data()[i * dp..(i + 1) * dp],
                        &g.data()[i * sp..(i + 1) * sp],
                        c,
                        gr,
                        h,
                        w,
                        ds.as_mut().map(|t| &mut t.data_mut()[i * sp..(i + 1) * sp]),
                        dd.as_mut().map(|t| &mut t.data_mut()[i * dp..(i + 1) * dp]),
                    );
                }
                if let Some(ds) = ds {
                    acc(*src, ds);
                }
                if let Some(dd) = dd {
                    acc(*disp, dd);
                }
            }
            Op::Upsample2x(x) => {
                let [n, c, h, w] = val(*x).shape();
                let mut d = Tensor::zeros([n, c, h, w]);
                kernels::upsample2x_backward(g.data(), n * c, h, w, d.data_mut());
                acc(*x, d);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let d = g
                    .zip_map(val(*x), |gv, v| {
                        let inward = (v < lo && gv < T::zero()) || (v > hi && gv > T::zero());
                        if (v >= lo && v <= hi) || inward {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .expect("shape");
                acc(*x, d);
            }
            Op::AvgPool2(x) => {
                let xv = val(*x);
                let mut d = Tensor::zeros(xv.shape());
                let [n, c, oh, ow] = g.shape();
                let q = T::lit(0.25);
                for i in 0..n {
                    for j in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = g.at(i, j, y, xx) * q;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let o = d.at(i, j, 2 * y + dy, 2 * xx + dx);
                                    d.set(i, j, 2 * y + dy, 2 * xx + dx, o + v);
                                }
                            }
                        }
                    }
                }
                acc(*x, d);
            }
            Op::MeanAbs(x) => {
                let xv = val(*x);
                let s = g.data()[0] / T::lit(xv.numel() as f64);
                acc(*x, xv.map(|v| s * sign(v)));
            }
            Op::MeanSquare(x) => {
                let xv = val(*x);
                let s = g.data()[0] * T::lit(2.0 / xv.numel() as f64);
                acc(*x, xv.map(|v| s * v));
            }
            Op::TotalVariation(x) => {
                let xv = val(*x);
                let s = g.data()[0] / T::lit(xv.numel() as f64);
                acc(*x, tv_grad(xv, s));
            }
        }
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn tv_value<T: Real>(x: &Tensor<T>) -> f64 {
    let [n, c, h, w] = x.shape();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..c {
            let p = x.plane(i, j);
            for y in 0..h {
                for xx in 0..w {
                    let v = p[y * w + xx];
                    if xx + 1 < w {
                        s += (p[y * w + xx + 1] - v).abs().as_f64();
                    }
                    if y + 1 < h {
                        s += (p[(y + 1) * w + xx] - v).abs().as_f64();
                    }
                }
            }
        }
    }
    s / x.numel() as f64
}

fn tv_grad<T: Real>(x: &Tensor<T>, s: T) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut d = Tensor::zeros(x.shape());
    for i in 0..n {
        for j in 0..c {
            let p = x.plane(i, j).to_vec();
            let dp = d.plane_mut(i, j);
            for y in 0..h {
                for xx in 0..w {
                    let v = p[y * w + xx];
                    if xx + 1 < w {
                        let sg = sign(p[y * w + xx + 1] - v) * s;
                        dp[y * w + xx + 1] += sg;
                        dp[y * w + xx] -= sg;
                    }
                    if y + 1 < h {
                        let sg = sign(p[(y + 1) * w + xx] - v) * s;
                        dp[(y + 1) * w + xx] += sg;
                        dp[y * w + xx] -= sg;
                    }
                }
            }
        }
    }
    d
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every trainable parameter of `graph` (zeros for
    /// parameters the loss does not depend on).
    pub fn named(&self, graph: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        graph
            .param_vars()
            .into_iter()
            .filter(|(_, v)| graph.rg(*v))
            .map(|(name, v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.shape(v)));
                (name, g)
            })
            .collect()
    }
}
