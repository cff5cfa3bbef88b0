use crate::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::{Conv2dCfg, EngineError, Float, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    Upsample2 { x: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Softplus { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Affine { x: usize, scale: F },
    Sqrt { x: usize },
    Ln { x: usize },
    Abs { x: usize },
    Square { x: usize },
    Clamp { x: usize, lo: F, hi: F },
    ChannelScale { x: usize, s: usize },
    Concat { parts: Vec<usize>, axis: usize },
    GlobalAvgPool { x: usize },
    Linear { x: usize, w: usize, b: Option<usize> },
    SumAll { x: usize },
    MeanAll { x: usize },
    SumRows { x: usize },
    Reshape { x: usize },
    OuterCosine { a: usize, b: usize },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A define-by-run computation graph.
///
/// Nodes are appended in evaluation order; [`Graph::backward`] walks them in
/// reverse. Values stay alive until the graph is dropped.
#[derive(Debug, Clone)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    symbolic: bool,
    flops: u64,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(EngineError::Shape(msg))
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            symbolic: false,
            flops: 0,
        }
    }

    /// A graph whose tensors carry shapes only; used for operation counting.
    pub fn symbolic() -> Self {
        Self {
            symbolic: true,
            ..Self::new()
        }
    }

    pub fn is_symbolic(&self) -> bool {
        self.symbolic
    }

    /// Operations counted so far (multiply-adds count as two).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[usize]) -> Var {
        let requires_grad = !self.symbolic && parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn count(&mut self, name: &'static str, flops: Option<u64>) -> Result<()> {
        if self.symbolic {
            match flops {
                Some(f) => self.flops += f,
                None => return Err(EngineError::Uncountable(name)),
            }
        }
        Ok(())
    }

    fn data(&self, i: usize) -> &[F] {
        self.nodes[i].value.data()
    }

    fn sh(&self, i: usize) -> &[usize] {
        self.nodes[i].value.shape()
    }

    /// A leaf. In a symbolic graph only the shape of `t` is kept.
    pub fn input(&mut self, t: Tensor<F>, requires_grad: bool) -> Var {
        let value = if self.symbolic {
            Tensor::symbolic(t.shape().to_vec())
        } else {
            t
        };
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && !self.symbolic,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.input(t, false)
    }

    /// A shape-only leaf (symbolic graphs) or a zero tensor (concrete ones).
    pub fn placeholder(&mut self, shape: &[usize], requires_grad: bool) -> Var {
        let t = if self.symbolic {
            Tensor::symbolic(shape.to_vec())
        } else {
            Tensor::zeros(shape)
        };
        self.input(t, requires_grad)
    }

    /// Copies the value of `v` into a new constant leaf; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn unary(&mut self, x: Var, name: &'static str, flops: Option<u64>, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        self.count(name, flops)?;
        let value = if self.symbolic {
            Tensor::symbolic(self.sh(x.0).to_vec())
        } else {
            self.nodes[x.0].value.map(f)
        };
        Ok(self.push(value, op, &[x.0]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", Some(0), |v| if v < F::zero() { F::zero() } else { v }, Op::Relu { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", Some(0), sigmoid, Op::Sigmoid { x: x.0 })
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "softplus", None, softplus, Op::Softplus { x: x.0 })
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Result<Var> {
        self.unary(x, "affine", None, |v| scale * v + shift, Op::Affine { x: x.0, scale })
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sqrt", None, |v| v.sqrt(), Op::Sqrt { x: x.0 })
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "ln", None, |v| v.ln(), Op::Ln { x: x.0 })
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "abs", None, |v| v.abs(), Op::Abs { x: x.0 })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "square", None, |v| v * v, Op::Square { x: x.0 })
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Result<Var> {
        // comparisons rather than max/min so NaN passes through
        self.unary(
            x,
            "clamp",
            None,
            |v| if v < lo { lo } else if v > hi { hi } else { v },
            Op::Clamp { x: x.0, lo, hi },
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        flops_per_elem: Option<u64>,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<Var> {
        if self.sh(a.0) != self.sh(b.0) {
            return shape_err(format!(
                "{name}: operand shapes differ: {:?} vs {:?}",
                self.sh(a.0),
                self.sh(b.0)
            ));
        }
        let numel = self.nodes[a.0].value.numel() as u64;
        self.count(name, flops_per_elem.map(|f| f * numel))?;
        let value = if self.symbolic {
            Tensor::symbolic(self.sh(a.0).to_vec())
        } else {
            let data = self
                .data(a.0)
                .iter()
                .zip(self.data(b.0))
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(self.sh(a.0).to_vec(), data)?
        };
        Ok(self.push(value, op, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Some(1), |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Some(1), |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Some(1), |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", None, |x, y| x / y, Op::Div { a: a.0, b: b.0 })
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dCfg) -> Result<Var> {
        let geom = ConvGeom::new(self.sh(x.0), self.sh(w.0), cfg)?;
        if let Some(b) = b {
            if self.sh(b.0) != [geom.o] {
                return shape_err(format!("conv2d bias shape {:?}, expected [{}]", self.sh(b.0), geom.o));
            }
        }
        self.count("conv2d", Some(geom.flops(b.is_some())))?;
        let value = if self.symbolic {
            Tensor::symbolic(geom.out_shape())
        } else {
            let out = conv2d_forward(&geom, self.data(x.0), self.data(w.0), b.map(|b| self.data(b.0)));
            Tensor::new(geom.out_shape(), out)?
        };
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
            &parents,
        ))
    }

    /// 2×2 max pooling with stride 2 (trailing odd rows/columns are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.sh(x.0).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return shape_err(format!("max_pool2 expects NCHW with H,W >= 2, got {s:?}"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        self.count("max_pool2", Some(0))?;
        let out_shape = vec![n, c, ho, wo];
        if self.symbolic {
            return Ok(self.push(Tensor::symbolic(out_shape), Op::MaxPool2 { x: x.0, argmax: vec![] }, &[x.0]));
        }
        let src = self.data(x.0);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] || src[idx].is_nan() {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MaxPool2 { x: x.0, argmax }, &[x.0]))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.sh(x.0).to_vec();
        if s.len() != 4 {
            return shape_err(format!("upsample2 expects NCHW, got {s:?}"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        self.count("upsample2", Some(0))?;
        let out_shape = vec![n, c, 2 * h, 2 * w];
        let value = if self.symbolic {
            Tensor::symbolic(out_shape)
        } else {
            let src = self.data(x.0);
            let mut out = vec![F::zero(); n * c * 4 * h * w];
            for plane in 0..n * c {
                let sp = &src[plane * h * w..][..h * w];
                let dp = &mut out[plane * 4 * h * w..][..4 * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dp[y * 2 * w + xx] = sp[(y / 2) * w + xx / 2];
                    }
                }
            }
            Tensor::new(out_shape, out)?
        };
        Ok(self.push(value, Op::Upsample2 { x: x.0 }, &[x.0]))
    }

    /// Multiplies every `H×W` plane of `x: [N,C,H,W]` by `s[n,c]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.sh(x.0).to_vec();
        let ss = self.sh(s.0).to_vec();
        if xs.len() != 4 || ss != [xs[0], xs[1]] {
            return shape_err(format!("channel_scale: x {xs:?} and scale {ss:?} disagree"));
        }
        let numel = xs.iter().product::<usize>() as u64;
        self.count("channel_scale", Some(numel))?;
        let value = if self.symbolic {
            Tensor::symbolic(xs)
        } else {
            let hw = xs[2] * xs[3];
            let sd = self.data(s.0);
            let data = self
                .data(x.0)
                .iter()
                .enumerate()
                .map(|(i, &v)| v * sd[i / hw])
                .collect();
            Tensor::new(xs, data)?
        };
        Ok(self.push(value, Op::ChannelScale { x: x.0, s: s.0 }, &[x.0, s.0]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat of zero tensors".into());
        };
        let base = self.sh(first.0).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.sh(p.0);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return shape_err(format!("concat: {:?} incompatible with {:?} on axis {axis}", s, base));
            }
            total += s[axis];
        }
        self.count("concat", Some(0))?;
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let value = if self.symbolic {
            Tensor::symbolic(out_shape)
        } else {
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for &p in &idx {
                    let len = self.sh(p)[axis] * inner;
                    out.extend_from_slice(&self.data(p)[o * len..(o + 1) * len]);
                }
            }
            Tensor::new(out_shape, out)?
        };
        Ok(self.push(value, Op::Concat { parts: idx.clone(), axis }, &idx))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.sh(x.0).to_vec();
        if s.len() != 4 {
            return shape_err(format!("global_avg_pool expects NCHW, got {s:?}"));
        }
        let numel = s.iter().product::<usize>() as u64;
        self.count("global_avg_pool", Some(numel))?;
        let out_shape = vec![s[0], s[1]];
        let value = if self.symbolic {
            Tensor::symbolic(out_shape)
        } else {
            let hw = s[2] * s[3];
            let inv = F::one() / F::of(hw as f64);
            let data = self
                .data(x.0)
                .chunks(hw)
                .map(|plane| plane.iter().copied().sum::<F>() * inv)
                .collect();
            Tensor::new(out_shape, data)?
        };
        Ok(self.push(value, Op::GlobalAvgPool { x: x.0 }, &[x.0]))
    }

    /// `y = x Wᵀ + b` with `x: [N,I]`, `w: [O,I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.sh(x.0).to_vec();
        let ws = self.sh(w.0).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear: input {xs:?} incompatible with weight {ws:?}"));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.sh(b.0) != [o] {
                return shape_err(format!("linear bias shape {:?}, expected [{o}]", self.sh(b.0)));
            }
        }
        let flops = (n * (2 * i * o + if b.is_some() { o } else { 0 })) as u64;
        self.count("linear", Some(flops))?;
        let value = if self.symbolic {
            Tensor::symbolic(vec![n, o])
        } else {
            let mut out = vec![F::zero(); n * o];
            if let Some(b) = b {
                for row in out.chunks_mut(o) {
                    row.copy_from_slice(self.data(b.0));
                }
            }
            let (xd, wd) = (self.data(x.0), self.data(w.0));
            // SAFETY: x is n×i, wᵀ is i×o (column view of w), out is n×o.
            unsafe {
                F::gemm(
                    n,
                    i,
                    o,
                    F::one(),
                    xd.as_ptr(),
                    i as isize,
                    1,
                    wd.as_ptr(),
                    1,
                    i as isize,
                    F::one(),
                    out.as_mut_ptr(),
                    o as isize,
                    1,
                );
            }
            Tensor::new(vec![n, o], out)?
        };
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        Ok(self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            &parents,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.count("sum_all", None)?;
        let v = self.data(x.0).iter().copied().sum::<F>();
        Ok(self.push(Tensor::scalar(v), Op::SumAll { x: x.0 }, &[x.0]))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.count("mean_all", None)?;
        let n = self.nodes[x.0].value.numel();
        if n == 0 {
            return shape_err("mean of an empty tensor".into());
        }
        let v = self.data(x.0).iter().copied().sum::<F>() / F::of(n as f64);
        Ok(self.push(Tensor::scalar(v), Op::MeanAll { x: x.0 }, &[x.0]))
    }

    /// Sums every axis except the leading one: `[N, ...] -> [N]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.count("sum_rows", None)?;
        let s = self.sh(x.0).to_vec();
        if s.is_empty() || s[0] == 0 {
            return shape_err(format!("sum_rows needs a leading batch axis, got {s:?}"));
        }
        let row: usize = s[1..].iter().product();
        let data = self
            .data(x.0)
            .chunks(row.max(1))
            .map(|r| r.iter().copied().sum::<F>())
            .collect();
        let value = Tensor::new(vec![s[0]], data)?;
        Ok(self.push(value, Op::SumRows { x: x.0 }, &[x.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = if self.symbolic {
            let n: usize = shape.iter().product();
            if n != self.nodes[x.0].value.numel() {
                return shape_err(format!("cannot reshape {:?} into {shape:?}", self.sh(x.0)));
            }
            Tensor::symbolic(shape.to_vec())
        } else {
            self.nodes[x.0].value.clone().reshaped(shape)?
        };
        Ok(self.push(value, Op::Reshape { x: x.0 }, &[x.0]))
    }

    /// Row-wise cosine similarity between the flattened outer products
    /// `a aᵀ` and `b bᵀ` of `a, b: [N, D]`. Both `D×D` matrices are built
    /// explicitly for every row.
    pub fn outer_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.count("outer_cosine", None)?;
        let s = self.sh(a.0).to_vec();
        if s.len() != 2 || self.sh(b.0) != s.as_slice() {
            return shape_err(format!("outer_cosine: shapes {:?} and {:?}", s, self.sh(b.0)));
        }
        let (n, d) = (s[0], s[1]);
        let mut ma = vec![F::zero(); d * d];
        let mut mb = vec![F::zero(); d * d];
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let ar = &self.data(a.0)[r * d..][..d];
            let br = &self.data(b.0)[r * d..][..d];
            outer_into(ar, &mut ma);
            outer_into(br, &mut mb);
            let (dot, na, nb) = flat_stats(&ma, &mb);
            out.push(dot / (na * nb));
        }
        let value = Tensor::new(vec![n], out)?;
        Ok(self.push(value, Op::OuterCosine { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Reverse pass from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.symbolic {
            return Err(EngineError::Symbolic("backward"));
        }
        let ls = self.nodes[loss.0].value.numel();
        if ls != 1 {
            return Err(EngineError::NonScalarLoss(self.sh(loss.0).to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.sh(i).to_vec(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.wants(*x), self.wants(*w), b.map(|b| self.wants(b)).unwrap_or(false));
                let cg = conv2d_backward(geom, self.data(*x), self.data(*w), g, need);
                if let Some(dx) = cg.dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    accumulate(grads, *b, db);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.wants(*x) {
                    let mut dx = vec![F::zero(); self.nodes[*x].value.numel()];
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Upsample2 { x } => {
                if self.wants(*x) {
                    let s = self.sh(*x);
                    let (h, w) = (s[2], s[3]);
                    let mut dx = vec![F::zero(); self.nodes[*x].value.numel()];
                    for plane in 0..s[0] * s[1] {
                        let gp = &g[plane * 4 * h * w..][..4 * h * w];
                        let dp = &mut dx[plane * h * w..][..h * w];
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                dp[(yy / 2) * w + xx / 2] += gp[yy * 2 * w + xx];
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Relu { x } => self.unary_grad(grads, *x, g, |gv, _, yv| if yv > F::zero() { gv } else { F::zero() }, y),
            Op::Sigmoid { x } => self.unary_grad(grads, *x, g, |gv, _, yv| gv * yv * (F::one() - yv), y),
            Op::Softplus { x } => self.unary_grad(grads, *x, g, |gv, xv, _| gv * sigmoid(xv), y),
            Op::Affine { x, scale } => self.unary_grad(grads, *x, g, |gv, _, _| gv * *scale, y),
            // subgradient 0 at the kink keeps sqrt(0) from poisoning the pass
            Op::Sqrt { x } => self.unary_grad(
                grads,
                *x,
                g,
                |gv, _, yv| if yv == F::zero() { F::zero() } else { gv / (yv + yv) },
                y,
            ),
            Op::Ln { x } => self.unary_grad(grads, *x, g, |gv, xv, _| gv / xv, y),
            Op::Abs { x } => self.unary_grad(grads, *x, g, |gv, xv, _| gv * sign(xv), y),
            Op::Square { x } => self.unary_grad(grads, *x, g, |gv, xv, _| gv * (xv + xv), y),
            Op::Clamp { x, lo, hi } => self.unary_grad(
                grads,
                *x,
                g,
                |gv, xv, _| if xv >= *lo && xv <= *hi { gv } else { F::zero() },
                y,
            ),
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(bd).map(|(&gv, &bv)| gv * bv).collect());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.iter().zip(ad).map(|(&gv, &av)| gv * av).collect());
                }
            }
            Op::Div { a, b } => {
                let bd = self.data(*b);
                if self.wants(*a) {
                    accumulate(grads, *a, g.iter().zip(bd).map(|(&gv, &bv)| gv / bv).collect());
                }
                if self.wants(*b) {
                    let dv = g
                        .iter()
                        .zip(bd)
                        .zip(y)
                        .map(|((&gv, &bv), &yv)| -gv * yv / bv)
                        .collect();
                    accumulate(grads, *b, dv);
                }
            }
            Op::ChannelScale { x, s } => {
                let xs = self.sh(*x);
                let hw = xs[2] * xs[3];
                let sd = self.data(*s);
                if self.wants(*x) {
                    let dx = g.iter().enumerate().map(|(k, &gv)| gv * sd[k / hw]).collect();
                    accumulate(grads, *x, dx);
                }
                if self.wants(*s) {
                    let xd = self.data(*x);
                    let ds = g
                        .chunks(hw)
                        .zip(xd.chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<F>())
                        .collect();
                    accumulate(grads, *s, ds);
                }
            }
            Op::Concat { parts, axis } => {
                let base = self.sh(parts[0]);
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total: usize = parts.iter().map(|&p| self.sh(p)[*axis]).sum::<usize>() * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = self.sh(p)[*axis] * inner;
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            dp.extend_from_slice(&g[o * total + offset..][..len]);
                        }
                        accumulate(grads, p, dp);
                    }
                    offset += len;
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.wants(*x) {
                    let s = self.sh(*x);
                    let hw = s[2] * s[3];
                    let inv = F::one() / F::of(hw as f64);
                    let dx = (0..s.iter().product::<usize>()).map(|k| g[k / hw] * inv).collect();
                    accumulate(grads, *x, dx);
                }
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.sh(*x), self.sh(*w));
                let (n, inp, o) = (xs[0], xs[1], ws[0]);
                if self.wants(*x) {
                    // dx (n×i) = g (n×o) · w (o×i)
                    let mut dx = vec![F::zero(); n * inp];
                    unsafe {
                        F::gemm(
                            n,
                            o,
                            inp,
                            F::one(),
                            g.as_ptr(),
                            o as isize,
                            1,
                            self.data(*w).as_ptr(),
                            inp as isize,
                            1,
                            F::zero(),
                            dx.as_mut_ptr(),
                            inp as isize,
                            1,
                        );
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    // dw (o×i) = gᵀ (o×n) · x (n×i)
                    let mut dw = vec![F::zero(); o * inp];
                    unsafe {
                        F::gemm(
                            o,
                            n,
                            inp,
                            F::one(),
                            g.as_ptr(),
                            1,
                            o as isize,
                            self.data(*x).as_ptr(),
                            inp as isize,
                            1,
                            F::zero(),
                            dw.as_mut_ptr(),
                            inp as isize,
                            1,
                        );
                    }
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![F::zero(); o];
                        for row in g.chunks(o) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::SumAll { x } => {
                if self.wants(*x) {
                    accumulate(grads, *x, vec![g[0]; self.nodes[*x].value.numel()]);
                }
            }
            Op::MeanAll { x } => {
                if self.wants(*x) {
                    let n = self.nodes[*x].value.numel();
                    accumulate(grads, *x, vec![g[0] / F::of(n as f64); n]);
                }
            }
            Op::SumRows { x } => {
                if self.wants(*x) {
                    let s = self.sh(*x);
                    let row: usize = s[1..].iter().product::<usize>().max(1);
                    let dx = (0..s[0] * row).map(|k| g[k / row]).collect();
                    accumulate(grads, *x, dx);
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
            }
            Op::OuterCosine { a, b } => {
                let s = self.sh(*a);
                let (n, d) = (s[0], s[1]);
                let mut ma = vec![F::zero(); d * d];
                let mut mb = vec![F::zero(); d * d];
                let mut gm = vec![F::zero(); d * d];
                let mut da = self.wants(*a).then(|| vec![F::zero(); n * d]);
                let mut db = self.wants(*b).then(|| vec![F::zero(); n * d]);
                for r in 0..n {
                    let ar = &self.data(*a)[r * d..][..d];
                    let br = &self.data(*b)[r * d..][..d];
                    outer_into(ar, &mut ma);
                    outer_into(br, &mut mb);
                    let (dot, na, nb) = flat_stats(&ma, &mb);
                    let cos = dot / (na * nb);
                    // d cos / d M_a = M_b/(|M_a||M_b|) - cos M_a/|M_a|^2, then
                    // d M_a / d a contracts a symmetric G as 2 G a.
                    if let Some(da) = da.as_mut() {
                        outer_grad(&ma, &mb, na, nb, cos, &mut gm);
                        sym_contract(&gm, ar, g[r], &mut da[r * d..][..d]);
                    }
                    if let Some(db) = db.as_mut() {
                        outer_grad(&mb, &ma, nb, na, cos, &mut gm);
                        sym_contract(&gm, br, g[r], &mut db[r * d..][..d]);
                    }
                }
                if let Some(da) = da {
                    accumulate(grads, *a, da);
                }
                if let Some(db) = db {
                    accumulate(grads, *b, db);
                }
            }
        }
    }

    fn unary_grad(&self, grads: &mut [Option<Vec<F>>], x: usize, g: &[F], f: impl Fn(F, F, F) -> F, y: &[F]) {
        if !self.wants(x) {
            return;
        }
        let xd = self.data(x);
        let dx = g
            .iter()
            .zip(xd)
            .zip(y)
            .map(|((&gv, &xv), &yv)| f(gv, xv, yv))
            .collect();
        accumulate(grads, x, dx);
    }
}

fn accumulate<F: Float>(grads: &mut [Option<Vec<F>>], i: usize, d: Vec<F>) {
    match grads[i].as_mut() {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        None => grads[i] = Some(d),
    }
}

pub(crate) fn sigmoid<F: Float>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softplus<F: Float>(v: F) -> F {
    v.max(F::zero()) + (-v.abs()).exp().ln_1p()
}

fn sign<F: Float>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn outer_into<F: Float>(v: &[F], m: &mut [F]) {
    let d = v.len();
    for i in 0..d {
        let row = &mut m[i * d..(i + 1) * d];
        for (dst, &vj) in row.iter_mut().zip(v) {
            *dst = v[i] * vj;
        }
    }
}

/// Dot product and the two Frobenius norms of flattened matrices.
fn flat_stats<F: Float>(ma: &[F], mb: &[F]) -> (F, F, F) {
    let (mut dot, mut sa, mut sb) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in ma.iter().zip(mb) {
        dot += x * y;
        sa += x * x;
        sb += y * y;
    }
    (dot, sa.sqrt(), sb.sqrt())
}

fn outer_grad<F: Float>(mx: &[F], my: &[F], nx: F, ny: F, cos: F, out: &mut [F]) {
    let inv = F::one() / (nx * ny);
    let c = cos / (nx * nx);
    for ((o, &x), &y) in out.iter_mut().zip(mx).zip(my) {
        *o = y * inv - c * x;
    }
}

fn sym_contract<F: Float>(gm: &[F], v: &[F], upstream: F, out: &mut [F]) {
    let d = v.len();
    let two = F::one() + F::one();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &gm[i * d..(i + 1) * d];
        let s: F = row.iter().zip(v).map(|(&a, &b)| a * b).sum();
        *o += two * upstream * s;
    }
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
