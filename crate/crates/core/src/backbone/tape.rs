use super::scalar::Scalar;
use super::tensor::Tensor;
use super::EPS_GUARD;

pub type NodeId = usize;

/// Convolution geometry shared by `Conv2d` and `ConvT2d`.
#[derive(Clone, Copy, Debug)]
struct ConvCfg {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    /// ln(x + eps); the guard keeps saturated probabilities finite.
    Log,
    /// sqrt(x + eps).
    Sqrt,
    Square,
    /// a * x + b with scalar constants; only the slope enters the backward
    /// pass.
    ScaleShift {
        a: f64,
    },
    Add,
    Sub,
    Mul,
    /// a / (b + eps).
    Div,
    /// x · wᵀ + b for x [B,in], w [out,in], b [out].
    Linear,
    Conv2d(ConvCfg),
    ConvT2d(ConvCfg),
    SumAll,
    MeanAll,
    /// [B,D] → [B].
    SumRows,
    SoftmaxRows,
    /// Per-row cross-entropy of softmax(logits) against a distribution target.
    SoftmaxXent,
    /// Per-row sum of elementwise Bernoulli NLL, computed from logits.
    BernoulliNllLogits,
    L2NormalizeRows,
    /// v * s for a [1]-shaped node s.
    MulScalarNode,
    /// v + s for a [1]-shaped node s.
    AddScalarNode,
    Reshape,
}

struct Node<F: Scalar> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<F>,
    needs_grad: bool,
    /// Op-specific cache (conv cols, softmax probabilities, row norms).
    aux: Vec<F>,
}

/// Wengert tape: records forward ops, replays them in reverse for gradients.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F: Scalar> {
    by_node: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node that was marked as requiring gradients; zero if the
    /// node never influenced the loss.
    pub fn of(&self, id: NodeId, shape: &[usize]) -> Tensor<F> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].value.shape
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor<F>, aux: Vec<F>) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
            aux,
        });
        self.nodes.len() - 1
    }

    // ----- leaves -----

    pub fn leaf(&mut self, value: Tensor<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            needs_grad,
            aux: vec![],
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(F::from_f64(v)))
    }

    // ----- elementwise unary -----

    fn unary(&mut self, op: Op, a: NodeId, f: impl Fn(F) -> F) -> NodeId {
        let value = self.nodes[a].value.map(f);
        self.push(op, vec![a], value, vec![])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a, |x| if x > F::ZERO { x } else { F::ZERO })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a, sigmoid_stable)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Tanh, a, |x| x.tanh())
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp, a, |x| x.exp())
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let eps = F::from_f64(EPS_GUARD);
        self.unary(Op::Log, a, move |x| (x + eps).ln())
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let eps = F::from_f64(EPS_GUARD);
        self.unary(Op::Sqrt, a, move |x| (x + eps).sqrt())
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a, |x| x * x)
    }

    /// a * x + b, elementwise with scalar constants.
    pub fn scale_shift(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let (fa, fb) = (F::from_f64(a), F::from_f64(b));
        self.unary(Op::ScaleShift { a }, x, move |v| fa * v + fb)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale_shift(x, -1.0, 0.0)
    }

    // ----- elementwise binary -----

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F) -> NodeId {
        assert_eq!(
            self.nodes[a].value.shape, self.nodes[b].value.shape,
            "elementwise op on mismatched shapes"
        );
        let value = self.nodes[a].value.zip(&self.nodes[b].value, f);
        self.push(op, vec![a, b], value, vec![])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let eps = F::from_f64(EPS_GUARD);
        self.binary(Op::Div, a, b, move |x, y| x / (y + eps))
    }

    // ----- affine / conv -----

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xs, ws, bs) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        assert_eq!(xs.len(), 2, "linear input must be [batch, in]");
        assert_eq!(ws.len(), 2, "linear weight must be [out, in]");
        assert_eq!(ws[1], xs[1], "linear in-dim mismatch: {ws:?} vs {xs:?}");
        assert_eq!(bs, vec![ws[0]], "linear bias must be [out]");
        let (batch, in_dim, out_dim) = (xs[0], xs[1], ws[0]);

        let mut out = vec![F::ZERO; batch * out_dim];
        F::gemm(
            batch,
            in_dim,
            out_dim,
            F::ONE,
            &self.nodes[x].value.data,
            in_dim as isize,
            1,
            &self.nodes[w].value.data,
            1,
            in_dim as isize,
            F::ZERO,
            &mut out,
        );
        let bias = &self.nodes[b].value.data;
        for row in out.chunks_mut(out_dim) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += *bv;
            }
        }
        self.push(
            Op::Linear,
            vec![x, w, b],
            Tensor::new(out, vec![batch, out_dim]),
            vec![],
        )
    }

    /// Linear without bias: x · wᵀ.
    pub fn linear_no_bias(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let out_dim = self.shape(w)[0];
        let zero = self.constant(Tensor::zeros(vec![out_dim]));
        self.linear(x, w, zero)
    }

    /// Strided zero-padded convolution.
    /// x [B,Cin,H,W], k [Cout,Cin,kh,kw], b [Cout] → [B,Cout,OH,OW].
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        assert_eq!(xs.len(), 4, "conv input must be [B,C,H,W]");
        assert_eq!(ks.len(), 4, "conv kernel must be [Cout,Cin,kh,kw]");
        assert_eq!(ks[1], xs[1], "conv channel mismatch");
        let cfg = ConvCfg {
            batch: xs[0],
            c_in: xs[1],
            c_out: ks[0],
            h: xs[2],
            w: xs[3],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            oh: (xs[2] + 2 * pad - ks[2]) / stride + 1,
            ow: (xs[3] + 2 * pad - ks[3]) / stride + 1,
        };
        assert_eq!(self.shape(b), &[cfg.c_out], "conv bias must be [Cout]");
        assert!(xs[2] + 2 * pad >= ks[2] && xs[3] + 2 * pad >= ks[3]);

        let kdim = cfg.c_in * cfg.kh * cfg.kw;
        let rows = cfg.batch * cfg.oh * cfg.ow;
        let cols = im2col(
            &self.nodes[x].value.data,
            cfg.batch,
            cfg.c_in,
            cfg.h,
            cfg.w,
            cfg.kh,
            cfg.kw,
            cfg.stride,
            cfg.pad,
            cfg.oh,
            cfg.ow,
        );
        // out_mat [rows, Cout] = cols @ k_flatᵀ
        let mut out_mat = vec![F::ZERO; rows * cfg.c_out];
        F::gemm(
            rows,
            kdim,
            cfg.c_out,
            F::ONE,
            &cols,
            kdim as isize,
            1,
            &self.nodes[k].value.data,
            1,
            kdim as isize,
            F::ZERO,
            &mut out_mat,
        );
        let bias = &self.nodes[b].value.data;
        for row in out_mat.chunks_mut(cfg.c_out) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += *bv;
            }
        }
        let out = rows_to_nchw(&out_mat, cfg.batch, cfg.c_out, cfg.oh, cfg.ow);
        self.push(
            Op::Conv2d(cfg),
            vec![x, k, b],
            Tensor::new(out, vec![cfg.batch, cfg.c_out, cfg.oh, cfg.ow]),
            cols,
        )
    }

    /// Transposed convolution (the adjoint of `conv2d` with the same geometry).
    /// x [B,Cin,H,W], k [Cin,Cout,kh,kw], b [Cout] → [B,Cout,OH,OW]
    /// with OH = (H−1)·stride − 2·pad + kh.
    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        assert_eq!(xs.len(), 4, "conv_t input must be [B,C,H,W]");
        assert_eq!(ks.len(), 4, "conv_t kernel must be [Cin,Cout,kh,kw]");
        assert_eq!(ks[0], xs[1], "conv_t channel mismatch");
        let cfg = ConvCfg {
            batch: xs[0],
            c_in: xs[1],
            c_out: ks[1],
            h: xs[2],
            w: xs[3],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            oh: (xs[2] - 1) * stride + ks[2] - 2 * pad,
            ow: (xs[3] - 1) * stride + ks[3] - 2 * pad,
        };
        assert_eq!(self.shape(b), &[cfg.c_out], "conv_t bias must be [Cout]");

        let n = cfg.c_out * cfg.kh * cfg.kw;
        let rows = cfg.batch * cfg.h * cfg.w;
        let x_mat = nchw_to_rows(
            &self.nodes[x].value.data,
            cfg.batch,
            cfg.c_in,
            cfg.h,
            cfg.w,
        );
        // cols [rows, Cout*kh*kw] = x_mat @ k_flat
        let mut cols = vec![F::ZERO; rows * n];
        F::gemm(
            rows,
            cfg.c_in,
            n,
            F::ONE,
            &x_mat,
            cfg.c_in as isize,
            1,
            &self.nodes[k].value.data,
            n as isize,
            1,
            F::ZERO,
            &mut cols,
        );
        // bias-filled output, then scatter the columns into it
        let mut out = vec![F::ZERO; cfg.batch * cfg.c_out * cfg.oh * cfg.ow];
        let bias = &self.nodes[b].value.data;
        let plane = cfg.oh * cfg.ow;
        for bi in 0..cfg.batch {
            for (co, bv) in bias.iter().enumerate() {
                let base = (bi * cfg.c_out + co) * plane;
                out[base..base + plane].iter_mut().for_each(|v| *v = *bv);
            }
        }
        col2im_add(
            &cols,
            &mut out,
            cfg.batch,
            cfg.c_out,
            cfg.oh,
            cfg.ow,
            cfg.kh,
            cfg.kw,
            cfg.stride,
            cfg.pad,
            cfg.h,
            cfg.w,
        );
        self.push(
            Op::ConvT2d(cfg),
            vec![x, k, b],
            Tensor::new(out, vec![cfg.batch, cfg.c_out, cfg.oh, cfg.ow]),
            vec![],
        )
    }

    // ----- reductions / fused rows ops -----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum();
        self.push(Op::SumAll, vec![a], Tensor::scalar(s), vec![])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len();
        let s = self.nodes[a].value.sum() / F::from_f64(n as f64);
        self.push(Op::MeanAll, vec![a], Tensor::scalar(s), vec![])
    }

    /// [B,D] → [B], summing each row.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        assert_eq!(shape.len(), 2, "sum_rows expects [B,D]");
        let d = shape[1];
        let value: Vec<F> = self.nodes[a]
            .value
            .data
            .chunks(d)
            .map(|row| row.iter().copied().sum())
            .collect();
        self.push(
            Op::SumRows,
            vec![a],
            Tensor::new(value, vec![shape[0]]),
            vec![],
        )
    }

    pub fn softmax_rows(&mut self, logits: NodeId) -> NodeId {
        let shape = self.shape(logits).to_vec();
        assert_eq!(shape.len(), 2, "softmax_rows expects [B,K]");
        let k = shape[1];
        let mut out = Vec::with_capacity(self.nodes[logits].value.len());
        for row in self.nodes[logits].value.data.chunks(k) {
            let m = row.iter().fold(F::from_f64(f64::NEG_INFINITY), |a, &b| a.max(b));
            let exps: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: F = exps.iter().copied().sum();
            out.extend(exps.into_iter().map(|e| e / s));
        }
        self.push(
            Op::SoftmaxRows,
            vec![logits],
            Tensor::new(out, shape),
            vec![],
        )
    }

    /// Per-row `lse(logits) − Σ target·logits`; targets must sum to 1 per row.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        let shape = self.shape(logits).to_vec();
        assert_eq!(shape.len(), 2, "softmax_cross_entropy expects [B,K]");
        assert_eq!(self.shape(targets), &shape[..], "target shape mismatch");
        assert!(
            !self.nodes[targets].needs_grad,
            "gradients w.r.t. cross-entropy targets are unsupported"
        );
        let k = shape[1];
        let mut losses = Vec::with_capacity(shape[0]);
        let mut probs = Vec::with_capacity(shape[0] * k);
        for (row, trow) in self.nodes[logits]
            .value
            .data
            .chunks(k)
            .zip(self.nodes[targets].value.data.chunks(k))
        {
            let m = row.iter().fold(F::from_f64(f64::NEG_INFINITY), |a, &b| a.max(b));
            let sum_exp: F = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            let dot: F = row.iter().zip(trow).map(|(&l, &t)| l * t).sum();
            losses.push(lse - dot);
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        self.push(
            Op::SoftmaxXent,
            vec![logits, targets],
            Tensor::new(losses, vec![shape[0]]),
            probs,
        )
    }

    /// Per-row sum of Bernoulli negative log-likelihood, from logits:
    /// Σ_d max(l,0) − l·x + ln(1 + e^{−|l|}).
    pub fn bernoulli_nll_logits(&mut self, logits: NodeId, targets: NodeId) -> NodeId {
        let shape = self.shape(logits).to_vec();
        assert_eq!(shape.len(), 2, "bernoulli_nll_logits expects [B,D]");
        assert_eq!(self.shape(targets), &shape[..], "target shape mismatch");
        assert!(
            !self.nodes[targets].needs_grad,
            "gradients w.r.t. Bernoulli targets are unsupported"
        );
        let d = shape[1];
        let mut losses = Vec::with_capacity(shape[0]);
        for (row, trow) in self.nodes[logits]
            .value
            .data
            .chunks(d)
            .zip(self.nodes[targets].value.data.chunks(d))
        {
            let mut s = F::ZERO;
            for (&l, &x) in row.iter().zip(trow) {
                s += l.max(F::ZERO) - l * x + ((-l.abs()).exp() + F::ONE).ln();
            }
            losses.push(s);
        }
        self.push(
            Op::BernoulliNllLogits,
            vec![logits, targets],
            Tensor::new(losses, vec![shape[0]]),
            vec![],
        )
    }

    /// Row-wise x / ‖x‖₂ (guarded against zero rows).
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        assert_eq!(shape.len(), 2, "l2_normalize_rows expects [B,D]");
        let d = shape[1];
        let mut out = Vec::with_capacity(self.nodes[a].value.len());
        let mut norms = Vec::with_capacity(shape[0]);
        for row in self.nodes[a].value.data.chunks(d) {
            let sq: F = row.iter().map(|&v| v * v).sum();
            let r = (sq + F::from_f64(EPS_GUARD)).sqrt();
            norms.push(r);
            out.extend(row.iter().map(|&v| v / r));
        }
        self.push(
            Op::L2NormalizeRows,
            vec![a],
            Tensor::new(out, shape),
            norms,
        )
    }

    /// v * s where s is a [1]-shaped node (e.g. a scalar parameter).
    pub fn mul_scalar_node(&mut self, v: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.shape(s), &[1], "mul_scalar_node scale must be [1]");
        let sv = self.nodes[s].value.item();
        let value = self.nodes[v].value.map(|x| x * sv);
        self.push(Op::MulScalarNode, vec![v, s], value, vec![])
    }

    /// v + s where s is a [1]-shaped node.
    pub fn add_scalar_node(&mut self, v: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.shape(s), &[1], "add_scalar_node shift must be [1]");
        let sv = self.nodes[s].value.item();
        let value = self.nodes[v].value.map(|x| x + sv);
        self.push(Op::AddScalarNode, vec![v, s], value, vec![])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> NodeId {
        assert_eq!(
            self.nodes[a].value.len(),
            shape.iter().product::<usize>(),
            "reshape size mismatch"
        );
        let value = Tensor::new(self.nodes[a].value.data.clone(), shape);
        self.push(Op::Reshape, vec![a], value, vec![])
    }

    // ----- backward -----

    /// Reverse pass from a scalar loss node. Gradients accumulate only into
    /// the sub-graph that requires them.
    pub fn backward(&mut self, loss: NodeId) -> Gradients<F> {
        assert_eq!(
            self.nodes[loss].value.len(),
            1,
            "backward expects a scalar loss, got shape {:?}",
            self.nodes[loss].value.shape
        );
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(F::ONE));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { by_node: grads }
    }

    fn accumulate(grads: &mut [Option<Tensor<F>>], id: NodeId, delta: Tensor<F>) {
        match &mut grads[id] {
            Some(g) => {
                debug_assert_eq!(g.shape, delta.shape);
                for (a, b) in g.data.iter_mut().zip(delta.data) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, id: NodeId, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[id];
        let input_needs = |i: usize| self.nodes[node.inputs[i]].needs_grad;
        match &node.op {
            Op::Leaf => {}

            Op::Relu => {
                let a = node.inputs[0];
                let x = &self.nodes[a].value;
                let d = x.zip_with_grad(g, |xv, gv| if xv > F::ZERO { gv } else { F::ZERO });
                Self::accumulate(grads, a, d);
            }
            Op::Sigmoid => {
                let a = node.inputs[0];
                let d = node
                    .value
                    .zip_with_grad(g, |s, gv| gv * s * (F::ONE - s));
                Self::accumulate(grads, a, d);
            }
            Op::Tanh => {
                let a = node.inputs[0];
                let d = node.value.zip_with_grad(g, |t, gv| gv * (F::ONE - t * t));
                Self::accumulate(grads, a, d);
            }
            Op::Exp => {
                let a = node.inputs[0];
                let d = node.value.zip_with_grad(g, |o, gv| gv * o);
                Self::accumulate(grads, a, d);
            }
            Op::Log => {
                let a = node.inputs[0];
                let eps = F::from_f64(EPS_GUARD);
                let x = &self.nodes[a].value;
                let d = x.zip_with_grad(g, |xv, gv| gv / (xv + eps));
                Self::accumulate(grads, a, d);
            }
            Op::Sqrt => {
                let a = node.inputs[0];
                let two = F::from_f64(2.0);
                let d = node.value.zip_with_grad(g, |o, gv| gv / (two * o));
                Self::accumulate(grads, a, d);
            }
            Op::Square => {
                let a = node.inputs[0];
                let two = F::from_f64(2.0);
                let x = &self.nodes[a].value;
                let d = x.zip_with_grad(g, |xv, gv| two * xv * gv);
                Self::accumulate(grads, a, d);
            }
            Op::ScaleShift { a: sa } => {
                let a = node.inputs[0];
                let fa = F::from_f64(*sa);
                let d = g.map(|gv| fa * gv);
                Self::accumulate(grads, a, d);
            }

            Op::Add => {
                if input_needs(0) {
                    Self::accumulate(grads, node.inputs[0], g.clone());
                }
                if input_needs(1) {
                    Self::accumulate(grads, node.inputs[1], g.clone());
                }
            }
            Op::Sub => {
                if input_needs(0) {
                    Self::accumulate(grads, node.inputs[0], g.clone());
                }
                if input_needs(1) {
                    Self::accumulate(grads, node.inputs[1], g.map(|v| -v));
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if input_needs(0) {
                    let d = self.nodes[b].value.zip_with_grad(g, |bv, gv| bv * gv);
                    Self::accumulate(grads, a, d);
                }
                if input_needs(1) {
                    let d = self.nodes[a].value.zip_with_grad(g, |av, gv| av * gv);
                    Self::accumulate(grads, b, d);
                }
            }
            Op::Div => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let eps = F::from_f64(EPS_GUARD);
                if input_needs(0) {
                    let d = self.nodes[b].value.zip_with_grad(g, |bv, gv| gv / (bv + eps));
                    Self::accumulate(grads, a, d);
                }
                if input_needs(1) {
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let mut d = Tensor::zeros(bv.shape.clone());
                    for i in 0..d.data.len() {
                        let den = bv.data[i] + eps;
                        d.data[i] = -g.data[i] * av.data[i] / (den * den);
                    }
                    Self::accumulate(grads, b, d);
                }
            }

            Op::Linear => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = &self.nodes[x].value;
                let ws = &self.nodes[w].value;
                let (batch, in_dim, out_dim) = (xs.shape[0], xs.shape[1], ws.shape[0]);
                if input_needs(0) {
                    // dx [B,in] = g [B,out] @ w [out,in]
                    let mut dx = vec![F::ZERO; batch * in_dim];
                    F::gemm(
                        batch,
                        out_dim,
                        in_dim,
                        F::ONE,
                        &g.data,
                        out_dim as isize,
                        1,
                        &ws.data,
                        in_dim as isize,
                        1,
                        F::ZERO,
                        &mut dx,
                    );
                    Self::accumulate(grads, x, Tensor::new(dx, vec![batch, in_dim]));
                }
                if input_needs(1) {
                    // dw [out,in] = gᵀ [out,B] @ x [B,in]
                    let mut dw = vec![F::ZERO; out_dim * in_dim];
                    F::gemm(
                        out_dim,
                        batch,
                        in_dim,
                        F::ONE,
                        &g.data,
                        1,
                        out_dim as isize,
                        &xs.data,
                        in_dim as isize,
                        1,
                        F::ZERO,
                        &mut dw,
                    );
                    Self::accumulate(grads, w, Tensor::new(dw, vec![out_dim, in_dim]));
                }
                if input_needs(2) {
                    let mut db = vec![F::ZERO; out_dim];
                    for row in g.data.chunks(out_dim) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += *v;
                        }
                    }
                    Self::accumulate(grads, b, Tensor::new(db, vec![out_dim]));
                }
            }

            Op::Conv2d(cfg) => {
                let (x, k, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let kdim = cfg.c_in * cfg.kh * cfg.kw;
                let rows = cfg.batch * cfg.oh * cfg.ow;
                let g_mat = nchw_to_rows(&g.data, cfg.batch, cfg.c_out, cfg.oh, cfg.ow);
                if input_needs(2) {
                    let mut db = vec![F::ZERO; cfg.c_out];
                    for row in g_mat.chunks(cfg.c_out) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += *v;
                        }
                    }
                    Self::accumulate(grads, b, Tensor::new(db, vec![cfg.c_out]));
                }
                if input_needs(1) {
                    // dk [Cout,kdim] = g_matᵀ @ cols
                    let mut dk = vec![F::ZERO; cfg.c_out * kdim];
                    F::gemm(
                        cfg.c_out,
                        rows,
                        kdim,
                        F::ONE,
                        &g_mat,
                        1,
                        cfg.c_out as isize,
                        &node.aux,
                        kdim as isize,
                        1,
                        F::ZERO,
                        &mut dk,
                    );
                    Self::accumulate(
                        grads,
                        k,
                        Tensor::new(dk, vec![cfg.c_out, cfg.c_in, cfg.kh, cfg.kw]),
                    );
                }
                if input_needs(0) {
                    // d_cols [rows,kdim] = g_mat @ k_flat, then scatter
                    let mut d_cols = vec![F::ZERO; rows * kdim];
                    F::gemm(
                        rows,
                        cfg.c_out,
                        kdim,
                        F::ONE,
                        &g_mat,
                        cfg.c_out as isize,
                        1,
                        &self.nodes[k].value.data,
                        kdim as isize,
                        1,
                        F::ZERO,
                        &mut d_cols,
                    );
                    let mut dx = vec![F::ZERO; cfg.batch * cfg.c_in * cfg.h * cfg.w];
                    col2im_add(
                        &d_cols, &mut dx, cfg.batch, cfg.c_in, cfg.h, cfg.w, cfg.kh, cfg.kw,
                        cfg.stride, cfg.pad, cfg.oh, cfg.ow,
                    );
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(dx, vec![cfg.batch, cfg.c_in, cfg.h, cfg.w]),
                    );
                }
            }

            Op::ConvT2d(cfg) => {
                let (x, k, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let n = cfg.c_out * cfg.kh * cfg.kw;
                let rows = cfg.batch * cfg.h * cfg.w;
                if input_needs(2) {
                    let plane = cfg.oh * cfg.ow;
                    let mut db = vec![F::ZERO; cfg.c_out];
                    for bi in 0..cfg.batch {
                        for (co, s) in db.iter_mut().enumerate() {
                            let base = (bi * cfg.c_out + co) * plane;
                            *s += g.data[base..base + plane].iter().copied().sum();
                        }
                    }
                    Self::accumulate(grads, b, Tensor::new(db, vec![cfg.c_out]));
                }
                // gather the output gradient into column layout once
                let g_cols = im2col(
                    &g.data, cfg.batch, cfg.c_out, cfg.oh, cfg.ow, cfg.kh, cfg.kw, cfg.stride,
                    cfg.pad, cfg.h, cfg.w,
                );
                if input_needs(0) {
                    // dx_mat [rows,Cin] = g_cols [rows,n] @ k_flatᵀ [n,Cin]
                    let mut dx_mat = vec![F::ZERO; rows * cfg.c_in];
                    F::gemm(
                        rows,
                        n,
                        cfg.c_in,
                        F::ONE,
                        &g_cols,
                        n as isize,
                        1,
                        &self.nodes[k].value.data,
                        1,
                        n as isize,
                        F::ZERO,
                        &mut dx_mat,
                    );
                    let dx = rows_to_nchw(&dx_mat, cfg.batch, cfg.c_in, cfg.h, cfg.w);
                    Self::accumulate(
                        grads,
                        x,
                        Tensor::new(dx, vec![cfg.batch, cfg.c_in, cfg.h, cfg.w]),
                    );
                }
                if input_needs(1) {
                    // dk [Cin,n] = x_matᵀ @ g_cols
                    let x_mat = nchw_to_rows(
                        &self.nodes[x].value.data,
                        cfg.batch,
                        cfg.c_in,
                        cfg.h,
                        cfg.w,
                    );
                    let mut dk = vec![F::ZERO; cfg.c_in * n];
                    F::gemm(
                        cfg.c_in,
                        rows,
                        n,
                        F::ONE,
                        &x_mat,
                        1,
                        cfg.c_in as isize,
                        &g_cols,
                        n as isize,
                        1,
                        F::ZERO,
                        &mut dk,
                    );
                    Self::accumulate(
                        grads,
                        k,
                        Tensor::new(dk, vec![cfg.c_in, cfg.c_out, cfg.kh, cfg.kw]),
                    );
                }
            }

            Op::SumAll => {
                let a = node.inputs[0];
                let gv = g.item();
                let d = Tensor::new(
                    vec![gv; self.nodes[a].value.len()],
                    self.nodes[a].value.shape.clone(),
                );
                Self::accumulate(grads, a, d);
            }
            Op::MeanAll => {
                let a = node.inputs[0];
                let n = self.nodes[a].value.len();
                let gv = g.item() / F::from_f64(n as f64);
                let d = Tensor::new(vec![gv; n], self.nodes[a].value.shape.clone());
                Self::accumulate(grads, a, d);
            }
            Op::SumRows => {
                let a = node.inputs[0];
                let shape = self.nodes[a].value.shape.clone();
                let d_cols = shape[1];
                let mut d = Tensor::zeros(shape);
                for (r, gv) in g.data.iter().enumerate() {
                    d.data[r * d_cols..(r + 1) * d_cols]
                        .iter_mut()
                        .for_each(|v| *v = *gv);
                }
                Self::accumulate(grads, a, d);
            }
            Op::SoftmaxRows => {
                let a = node.inputs[0];
                let k = node.value.shape[1];
                let mut d = Tensor::zeros(node.value.shape.clone());
                for r in 0..node.value.shape[0] {
                    let p = &node.value.data[r * k..(r + 1) * k];
                    let gr = &g.data[r * k..(r + 1) * k];
                    let dot: F = p.iter().zip(gr).map(|(&pv, &gv)| pv * gv).sum();
                    for j in 0..k {
                        d.data[r * k + j] = p[j] * (gr[j] - dot);
                    }
                }
                Self::accumulate(grads, a, d);
            }
            Op::SoftmaxXent => {
                let logits = node.inputs[0];
                let targets = node.inputs[1];
                let shape = self.nodes[logits].value.shape.clone();
                let k = shape[1];
                let mut d = Tensor::zeros(shape);
                let t = &self.nodes[targets].value.data;
                for (r, gv) in g.data.iter().enumerate() {
                    for j in 0..k {
                        let p = node.aux[r * k + j];
                        d.data[r * k + j] = *gv * (p - t[r * k + j]);
                    }
                }
                Self::accumulate(grads, logits, d);
            }
            Op::BernoulliNllLogits => {
                let logits = node.inputs[0];
                let targets = node.inputs[1];
                let shape = self.nodes[logits].value.shape.clone();
                let d_cols = shape[1];
                let mut d = Tensor::zeros(shape);
                let lv = &self.nodes[logits].value.data;
                let tv = &self.nodes[targets].value.data;
                for (r, gv) in g.data.iter().enumerate() {
                    for j in 0..d_cols {
                        let i = r * d_cols + j;
                        d.data[i] = *gv * (sigmoid_stable(lv[i]) - tv[i]);
                    }
                }
                Self::accumulate(grads, logits, d);
            }
            Op::L2NormalizeRows => {
                let a = node.inputs[0];
                let d_cols = node.value.shape[1];
                let mut d = Tensor::zeros(node.value.shape.clone());
                for r in 0..node.value.shape[0] {
                    let y = &node.value.data[r * d_cols..(r + 1) * d_cols];
                    let gr = &g.data[r * d_cols..(r + 1) * d_cols];
                    let norm = node.aux[r];
                    let dot: F = y.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..d_cols {
                        d.data[r * d_cols + j] = (gr[j] - y[j] * dot) / norm;
                    }
                }
                Self::accumulate(grads, a, d);
            }
            Op::MulScalarNode => {
                let (v, s) = (node.inputs[0], node.inputs[1]);
                let sv = self.nodes[s].value.item();
                if input_needs(0) {
                    Self::accumulate(grads, v, g.map(|gv| gv * sv));
                }
                if input_needs(1) {
                    let dot: F = g
                        .data
                        .iter()
                        .zip(&self.nodes[v].value.data)
                        .map(|(&gv, &vv)| gv * vv)
                        .sum();
                    Self::accumulate(grads, s, Tensor::scalar(dot));
                }
            }
            Op::AddScalarNode => {
                let (v, s) = (node.inputs[0], node.inputs[1]);
                if input_needs(0) {
                    Self::accumulate(grads, v, g.clone());
                }
                if input_needs(1) {
                    Self::accumulate(grads, s, Tensor::scalar(g.sum()));
                }
            }
            Op::Reshape => {
                let a = node.inputs[0];
                let d = Tensor::new(g.data.clone(), self.nodes[a].value.shape.clone());
                Self::accumulate(grads, a, d);
            }
        }
    }
}

impl<F: Scalar> Tensor<F> {
    /// Elementwise combine of self's data with a gradient of identical shape.
    fn zip_with_grad(&self, g: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
        debug_assert_eq!(self.shape, g.shape);
        Tensor {
            data: self
                .data
                .iter()
                .zip(&g.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            shape: self.shape.clone(),
        }
    }
}

fn sigmoid_stable<F: Scalar>(x: F) -> F {
    if x >= F::ZERO {
        F::ONE / (F::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::ONE + e)
    }
}

/// Gather sliding windows into a `[b·oh·ow, c·kh·kw]` matrix, zero padding.
/// Window (i,j) of grid `oh×ow` reads source pixel `(i·stride + ki − pad,
/// j·stride + kj − pad)`.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<F> {
    let kdim = c * kh * kw;
    let mut cols = vec![F::ZERO; b * oh * ow * kdim];
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((bi * oh + i) * ow + j) * kdim;
                for ci in 0..c {
                    let src_plane = (bi * c + ci) * h * w;
                    for ki in 0..kh {
                        let hi = (i * stride + ki) as isize - pad as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let wj = (j * stride + kj) as isize - pad as isize;
                            if wj < 0 || wj >= w as isize {
                                continue;
                            }
                            cols[row + (ci * kh + ki) * kw + kj] =
                                x[src_plane + hi as usize * w + wj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of column layout back into a `[b,c,h,w]` tensor; the adjoint of
/// [`im2col`] with identical geometry.
#[allow(clippy::too_many_arguments)]
fn col2im_add<F: Scalar>(
    cols: &[F],
    out: &mut [F],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let kdim = c * kh * kw;
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((bi * oh + i) * ow + j) * kdim;
                for ci in 0..c {
                    let dst_plane = (bi * c + ci) * h * w;
                    for ki in 0..kh {
                        let hi = (i * stride + ki) as isize - pad as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let wj = (j * stride + kj) as isize - pad as isize;
                            if wj < 0 || wj >= w as isize {
                                continue;
                            }
                            out[dst_plane + hi as usize * w + wj as usize] +=
                                cols[row + (ci * kh + ki) * kw + kj];
                        }
                    }
                }
            }
        }
    }
}

/// [B,C,H,W] → [B·H·W, C] row-major.
fn nchw_to_rows<F: Scalar>(x: &[F], b: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let plane = h * w;
    let mut out = vec![F::ZERO; b * plane * c];
    for bi in 0..b {
        for ci in 0..c {
            let src = (bi * c + ci) * plane;
            for p in 0..plane {
                out[(bi * plane + p) * c + ci] = x[src + p];
            }
        }
    }
    out
}

/// [B·H·W, C] → [B,C,H,W].
fn rows_to_nchw<F: Scalar>(rows: &[F], b: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let plane = h * w;
    let mut out = vec![F::ZERO; b * c * plane];
    for bi in 0..b {
        for p in 0..plane {
            let src = (bi * plane + p) * c;
            for ci in 0..c {
                out[(bi * c + ci) * plane + p] = rows[src + ci];
            }
        }
    }
    out
}
