use super::gemm::{col2im_add, gemm, im2col, ConvGeometry};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside the engine.
///
/// `inputs` are the forward values of the op's inputs in the order they were
/// passed to [`Tape::custom`]. Return one entry per input; `None` (or an
/// input whose `wants` flag is false) contributes nothing.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        out_grad: &[f64],
        wants: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Logistic(Var),
    Softplus(Var),
    Power(Var, f64),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Sum(Var),
    Mean(Var),
    Max {
        x: Var,
        at: usize,
    },
    SumAxis0 {
        x: Var,
        rows: usize,
    },
    MeanAxis0 {
        x: Var,
        rows: usize,
    },
    MaxAxis0 {
        x: Var,
        at: Vec<usize>,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    Softmax {
        x: Var,
        classes: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run record of a forward computation.
///
/// Every operation appends a node; node indices are therefore a topological
/// order and [`Tape::backward`] simply walks them in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` did not influence
    /// the loss.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    /// Adds the gradient of `v` into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        if let Some(g) = self.get(v) {
            for (acc, d) in tensor.grad_mut().iter_mut().zip(g) {
                *acc += d;
            }
        }
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, format!("left {a:?} vs right {b:?}")))
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First element of `v`; meant for scalars.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Copies a tensor onto the tape, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} with {} values", values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, false, Op::Leaf))
    }

    /// A differentiable input that is not backed by a persistent tensor.
    pub fn variable(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "variable",
                format!("shape {shape:?} with {} values", values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, true, Op::Leaf))
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>, bool)> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), value, self.rg(&[a, b])))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>, bool) {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        (self.shape(x).to_vec(), value, self.rg(&[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(s, v, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(s, v, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, rg) = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(s, v, rg, Op::Mul(a, b)))
    }

    /// `c·x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (s, v, rg) = self.map(x, |t| c * t);
        self.push(s, v, rg, Op::Scale(x, c))
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let (s, v, rg) = self.map(x, |t| t + c);
        self.push(s, v, rg, Op::Offset(x))
    }

    /// Matrix product of `a: [m,k]` and `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, m, k, n }))
    }

    /// Same-padded, stride-1 2-D convolution.
    ///
    /// `input` is `[H, W, Cin]`, `kernel` is `[KH, KW, Cin, Cout]` with odd
    /// spatial extents and `bias` (if any) is `[Cout]`. The result is
    /// `[H, W, Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {si:?} must be [H,W,C], kernel {sk:?} must be [KH,KW,Cin,Cout]"),
            ));
        }
        if sk[2] != si[2] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel expects {} input channels, input has {}",
                    sk[2], si[2]
                ),
            ));
        }
        if sk[0] % 2 == 0 || sk[1] % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel extent {sk:?} must be odd"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[3]] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} must be [{}]", self.shape(b), sk[3]),
                ));
            }
        }
        let geom = ConvGeometry {
            height: si[0],
            width: si[1],
            in_channels: si[2],
            out_channels: sk[3],
            kernel_h: sk[0],
            kernel_w: sk[1],
        };
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            im2col(&geom, self.value(input))
        };
        let a: &[f64] = if geom.is_pointwise() {
            self.value(input)
        } else {
            &cols
        };
        let p = geom.pixels();
        let cout = geom.out_channels;
        let mut out = vec![0.0; p * cout];
        let beta = match bias {
            Some(b) => {
                let bv = self.value(b);
                for row in out.chunks_exact_mut(cout) {
                    row.copy_from_slice(bv);
                }
                1.0
            }
            None => 0.0,
        };
        gemm(
            p,
            geom.patch(),
            cout,
            a,
            false,
            self.value(kernel),
            false,
            beta,
            &mut out,
        );
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        Ok(self.push(
            vec![geom.height, geom.width, cout],
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, |t| if t > 0.0 { t } else { 0.0 });
        self.push(s, v, rg, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, f64::exp);
        self.push(s, v, rg, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, f64::ln);
        self.push(s, v, rg, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, f64::tanh);
        self.push(s, v, rg, Op::Tanh(x))
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, logistic);
        self.push(s, v, rg, Op::Logistic(x))
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let (s, v, rg) = self.map(x, softplus);
        self.push(s, v, rg, Op::Softplus(x))
    }

    /// Elementwise `x^p` for a constant exponent.
    pub fn power(&mut self, x: Var, p: f64) -> Var {
        let (s, v, rg) = self.map(x, |t| t.powf(p));
        self.push(s, v, rg, Op::Power(x, p))
    }

    /// Elementwise clamp into `[lo, hi]`. Gradient is zero where the input
    /// lies outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (s, v, rg) = self.map(x, |t| t.clamp(lo, hi));
        self.push(s, v, rg, Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![total], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Vec::new(), vec![m], rg, Op::Mean(x))
    }

    /// Maximum over all elements. Ties go to the lowest flat index.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::shape("max", "empty input"));
        }
        let at = argmax(v.iter().copied());
        let m = v[at];
        let rg = self.rg(&[x]);
        Ok(self.push(Vec::new(), vec![m], rg, Op::Max { x, at }))
    }

    fn rows_cols(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        match self.shape(x) {
            [r, c] if *r > 0 => Ok((*r, *c)),
            s => Err(Error::shape(
                op,
                format!("expected non-empty [rows, cols], got {s:?}"),
            )),
        }
    }

    /// Column sums of a `[rows, cols]` matrix.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols("sum_axis0", x)?;
        let mut out = vec![0.0; cols];
        for row in self.value(x).chunks_exact(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![cols], out, rg, Op::SumAxis0 { x, rows }))
    }

    /// Column means of a `[rows, cols]` matrix.
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols("mean_axis0", x)?;
        let mut out = vec![0.0; cols];
        for row in self.value(x).chunks_exact(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![cols], out, rg, Op::MeanAxis0 { x, rows }))
    }

    /// Column maxima of a `[rows, cols]` matrix; ties go to the lowest row.
    pub fn max_axis0(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols("max_axis0", x)?;
        let v = self.value(x);
        let mut at = Vec::with_capacity(cols);
        let mut out = Vec::with_capacity(cols);
        for c in 0..cols {
            let r = argmax((0..rows).map(|r| v[r * cols + c]));
            at.push(r * cols + c);
            out.push(v[r * cols + c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![cols], out, rg, Op::MaxAxis0 { x, at }))
    }

    /// Gathers the given flat indices of `x` into a 1-D tensor. Gradient is
    /// scattered back to the selected elements only.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(Error::shape(
                "index_select",
                format!("index {bad} out of range for {} elements", v.len()),
            ));
        }
        let out = indices.iter().map(|&i| v[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            vec![indices.len()],
            out,
            rg,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), v, rg, Op::Reshape(x)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let classes = match self.shape(x).last() {
            Some(&c) if c > 0 => c,
            _ => return Err(Error::shape("softmax", format!("{:?}", self.shape(x)))),
        };
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(classes) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for r in row.iter_mut() {
                *r = (*r - m).exp();
                z += *r;
            }
            row.iter_mut().for_each(|r| *r /= z);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, rg, Op::Softmax { x, classes }))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: &[usize],
        value: Vec<f64>,
        op: Box<dyn CustomOp>,
    ) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(Error::shape(
                op.name(),
                format!("{shape:?} with {} values", value.len()),
            ));
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            shape.to_vec(),
            value,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of `v` if `v` wants a gradient.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if n.requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
                f(buf);
            }
        };
        let val = |v: Var| nodes[v.0].value.as_slice();
        let y = node.value.as_slice();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, d)| *o -= d)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, d), w) in ga.iter_mut().zip(g).zip(vb) {
                        *o += d * w;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, d), w) in gb.iter_mut().zip(g).zip(va) {
                        *o += d * w;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(o, d)| *o += c * d)
            }),
            Op::Offset(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| gemm(*m, *n, *k, g, false, vb, true, 1.0, ga));
                acc(*b, &mut |gb| gemm(*k, *m, *n, va, true, g, false, 1.0, gb));
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let p = geom.pixels();
                let patch = geom.patch();
                let cout = geom.out_channels;
                let a: &[f64] = if geom.is_pointwise() {
                    val(*input)
                } else {
                    cols
                };
                acc(*kernel, &mut |gk| {
                    gemm(patch, p, cout, a, true, g, false, 1.0, gk)
                });
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for row in g.chunks_exact(cout) {
                            add_into(gb, row);
                        }
                    });
                }
                let vk = val(*kernel);
                acc(*input, &mut |gi| {
                    if geom.is_pointwise() {
                        gemm(p, cout, patch, g, false, vk, true, 1.0, gi);
                    } else {
                        let mut dcols = vec![0.0; p * patch];
                        gemm(p, cout, patch, g, false, vk, true, 0.0, &mut dcols);
                        col2im_add(geom, &dcols, gi);
                    }
                });
            }
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), t) in gx.iter_mut().zip(g).zip(vx) {
                        if *t > 0.0 {
                            *o += d;
                        }
                    }
                });
            }
            Op::Exp(x) => acc(*x, &mut |gx| {
                for ((o, d), e) in gx.iter_mut().zip(g).zip(y) {
                    *o += d * e;
                }
            }),
            Op::Log(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), t) in gx.iter_mut().zip(g).zip(vx) {
                        *o += d / t;
                    }
                });
            }
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, d), t) in gx.iter_mut().zip(g).zip(y) {
                    *o += d * (1.0 - t * t);
                }
            }),
            Op::Logistic(x) => acc(*x, &mut |gx| {
                for ((o, d), s) in gx.iter_mut().zip(g).zip(y) {
                    *o += d * s * (1.0 - s);
                }
            }),
            Op::Softplus(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), t) in gx.iter_mut().zip(g).zip(vx) {
                        *o += d * logistic(*t);
                    }
                });
            }
            Op::Power(x, p) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), t) in gx.iter_mut().zip(g).zip(vx) {
                        *o += d * p * t.powf(p - 1.0);
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, d), t) in gx.iter_mut().zip(g).zip(vx) {
                        if *t >= *lo && *t <= *hi {
                            *o += d;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => acc(*x, &mut |gx| {
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|o| *o += s);
            }),
            Op::Max { x, at } => acc(*x, &mut |gx| gx[*at] += g[0]),
            Op::SumAxis0 { x, rows } => acc(*x, &mut |gx| {
                for row in gx.chunks_exact_mut(g.len()).take(*rows) {
                    add_into(row, g);
                }
            }),
            Op::MeanAxis0 { x, rows } => acc(*x, &mut |gx| {
                let inv = 1.0 / *rows as f64;
                for row in gx.chunks_exact_mut(g.len()) {
                    for (o, d) in row.iter_mut().zip(g) {
                        *o += d * inv;
                    }
                }
            }),
            Op::MaxAxis0 { x, at } => acc(*x, &mut |gx| {
                for (&i, d) in at.iter().zip(g) {
                    gx[i] += d;
                }
            }),
            Op::IndexSelect { x, indices } => acc(*x, &mut |gx| {
                for (&i, d) in indices.iter().zip(g) {
                    gx[i] += d;
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Softmax { x, classes } => acc(*x, &mut |gx| {
                for ((o, d), s) in gx
                    .chunks_exact_mut(*classes)
                    .zip(g.chunks_exact(*classes))
                    .zip(y.chunks_exact(*classes))
                {
                    let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                    for ((oi, di), si) in o.iter_mut().zip(d).zip(s) {
                        *oi += si * (di - dot);
                    }
                }
            }),
            Op::Custom { inputs, op } => {
                let ins: Vec<&[f64]> = inputs.iter().map(|v| val(*v)).collect();
                let wants: Vec<bool> = inputs.iter().map(|v| nodes[v.0].requires_grad).collect();
                let contributions = op.backward(&ins, y, g, &wants);
                for ((v, want), c) in inputs.iter().zip(&wants).zip(contributions) {
                    if let (true, Some(c)) = (*want, c) {
                        acc(*v, &mut |gv| add_into(gv, &c));
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, d) in dst.iter_mut().zip(src) {
        *o += d;
    }
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v || i == 0 {
            best = i;
            best_v = v;
        }
    }
    best
}
