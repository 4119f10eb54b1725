use super::kernels::{self, ConvGeom, NormCache};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Option<Vec<T>> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: NormCache<T>, batch_stats: bool },
    Silu { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var, dims: [usize; 4] },
    Linear { x: Var, w: Var, b: Var },
    Add { a: Var, b: Var },
    ConcatChannels { parts: Vec<Var> },
    SliceChannels { x: Var, start: usize },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-channel batch statistics observed by a train-mode batch norm, in
/// recording order. `var` is the unbiased estimate.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Reverse-mode tape: operations are recorded in forward order and their
/// backward functions replayed in reverse.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<Var>,
    batch_stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), params: Vec::new(), batch_stats: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf copied from a model parameter; recorded in [`Tape::params`].
    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        let mut t = value.clone();
        t.clear_grad();
        let v = self.push(t, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Parameter leaves in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats<T>> {
        std::mem::take(&mut self.batch_stats)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        if let Some(b) = b {
            if self.value(b).shape() != [geom.out_channels] {
                return Err(Error::dim(
                    "conv2d",
                    format!(
                        "bias shape {:?} does not match output channel axis {}",
                        self.value(b).shape(),
                        geom.out_channels
                    ),
                ));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), bias, &geom);
        let value = Tensor::from_vec(geom.out_shape(), out)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    /// Batch normalization over the channel axis of an NCHW input. In train
    /// mode the batch statistics are recorded for [`Tape::take_batch_stats`].
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        mode: Mode,
        eps: T,
    ) -> Result<Var> {
        let dims = self.value(x).dims4("batch_norm")?;
        let c = dims[1];
        for (name, len) in [
            ("gamma", self.value(gamma).len()),
            ("beta", self.value(beta).len()),
            ("running mean", running_mean.len()),
            ("running variance", running_var.len()),
        ] {
            if len != c {
                return Err(Error::dim("batch_norm", format!("{name} has {len} entries but channel axis (1) is {c}")));
            }
        }
        if eps < T::zero() || !eps.is_finite() {
            return Err(Error::Parameter(format!("batch_norm epsilon must be >= 0, got {eps}")));
        }
        let x_data = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let (out, cache, batch_stats) = match mode {
            Mode::Train => {
                if eps == T::zero() {
                    return Err(Error::Parameter("batch_norm epsilon must be > 0 in train mode".into()));
                }
                let per_channel = dims[0] * dims[2] * dims[3];
                if per_channel < 2 {
                    return Err(Error::dim("batch_norm", "train mode needs at least 2 elements per channel"));
                }
                let (out, cache) = kernels::batchnorm_train(x_data, dims, g, b, eps);
                let bessel = T::from_usize(per_channel).unwrap() / T::from_usize(per_channel - 1).unwrap();
                self.batch_stats.push(BatchStats {
                    mean: cache.mean.clone(),
                    var: cache.var.iter().map(|&v| v * bessel).collect(),
                });
                (out, cache, true)
            }
            Mode::Eval => {
                let (out, cache) = kernels::batchnorm_eval(x_data, dims, g, b, running_mean, running_var, eps);
                (out, cache, false)
            }
        };
        let value = Tensor::from_vec(dims, out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, cache, batch_stats }, needs))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor::from_vec(xv.shape(), kernels::silu_forward(xv.data()))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Silu { x }, needs))
    }

    pub fn max_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        let dims = self.value(x).dims4("max_pool")?;
        let [n, c, h, w] = dims;
        if window == 0 {
            return Err(Error::Parameter("max_pool window must be positive".into()));
        }
        if h % window != 0 || w % window != 0 {
            return Err(Error::dim(
                "max_pool",
                format!("spatial axes (2,3) {h}x{w} are not divisible by window {window}"),
            ));
        }
        let (out, argmax) = kernels::max_pool_forward(self.value(x).data(), dims, window);
        let value = Tensor::from_vec([n, c, h / window, w / window], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, needs))
    }

    /// Mean over each channel map: NCHW → N×C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4("global_avg_pool")?;
        let out = kernels::global_avg_pool_forward(self.value(x).data(), dims);
        let value = Tensor::from_vec([dims[0], dims[1]], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::GlobalAvgPool { x, dims }, needs))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [batch, fan_in] = self.value(x).dims2("linear")?;
        let [w_in, units] = self.value(w).dims2("linear")?;
        if w_in != fan_in {
            return Err(Error::dim(
                "linear",
                format!("input feature axis (1) is {fan_in} but weight axis (0) is {w_in}"),
            ));
        }
        if self.value(b).shape() != [units] {
            return Err(Error::dim(
                "linear",
                format!("bias shape {:?} does not match {units} units", self.value(b).shape()),
            ));
        }
        let out = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            batch,
            fan_in,
            units,
        );
        let value = Tensor::from_vec([batch, units], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                "add",
                format!("shapes {:?} and {:?} differ", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_vec(self.value(a).shape(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_channels", "nothing to concatenate"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut channels = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(
                    "concat_channels",
                    format!("axes (0,2,3) of {:?} differ from {:?}", [pn, ph, pw], [n, h, w]),
                ));
            }
            channels += pc;
        }
        let mut out = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * h * w;
                out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::from_vec([n, channels, h, w], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatChannels { parts: parts.to_vec() }, needs))
    }

    /// Channels `start..start+len` of an NCHW tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::dim(
                "slice_channels",
                format!("channels {start}..{} out of range for axis (1) of {c}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * h * w);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * h * w..(b * c + start + len) * h * w]);
        }
        let value = Tensor::from_vec([n, len, h, w], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceChannels { x, start }, needs))
    }

    /// Mean softmax cross-entropy against one-hot targets; a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let [batch, classes] = self.value(logits).dims2("softmax_cross_entropy")?;
        if targets.shape() != [batch, classes] {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("targets {:?} do not match logits {:?}", targets.shape(), [batch, classes]),
            ));
        }
        if classes < 2 {
            return Err(Error::dim("softmax_cross_entropy", "need at least 2 classes"));
        }
        let hot = kernels::one_hot_rows(targets.data(), classes)?;
        let (loss, probs) = kernels::softmax_cross_entropy_forward(self.value(logits).data(), &hot, classes);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, probs, targets: targets.data().to_vec() },
            needs,
        ))
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, c)| *a = *a + c),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Reverse pass from a scalar node, seeding its gradient with one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!("backward needs a scalar, got shape {:?}", self.value(loss).shape())));
        }
        self.backward_from(loss, vec![T::one()])
    }

    /// Vector-Jacobian product: reverse pass from any node with an explicit
    /// output gradient.
    pub fn backward_from(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::State(format!(
                "seed has {} entries for a node of shape {:?}",
                seed.len(),
                self.value(out).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            let contributions = self.node_backward(i, &dy);
            self.grads[i] = Some(dy);
            for (v, c) in contributions {
                self.accumulate(v, c);
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let grads = kernels::conv2d_backward(
                    dy,
                    self.value(*x).data(),
                    cols.as_deref(),
                    self.value(*w).data(),
                    geom,
                    self.needs(*x),
                );
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                out.push((*w, grads.weight));
                if let Some(b) = b {
                    out.push((*b, grads.bias));
                }
            }
            Op::BatchNorm { x, gamma, beta, cache, batch_stats } => {
                let dims = self.value(*x).dims4("batch_norm").expect("recorded as NCHW");
                let grads = kernels::batchnorm_backward(dy, dims, self.value(*gamma).data(), cache, *batch_stats);
                out.push((*x, grads.input));
                out.push((*gamma, grads.gamma));
                out.push((*beta, grads.beta));
            }
            Op::Silu { x } => out.push((*x, kernels::silu_backward(dy, self.value(*x).data()))),
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&idx, &d) in argmax.iter().zip(dy) {
                    dx[idx] = dx[idx] + d;
                }
                out.push((*x, dx));
            }
            Op::GlobalAvgPool { x, dims } => {
                out.push((*x, kernels::global_avg_pool_backward(dy, *dims)));
            }
            Op::Linear { x, w, b } => {
                let [batch, fan_in] = self.value(*x).dims2("linear").expect("recorded as rank 2");
                let units = self.value(*b).len();
                let grads =
                    kernels::linear_backward(dy, self.value(*x).data(), self.value(*w).data(), batch, fan_in, units);
                out.push((*x, grads.input));
                out.push((*w, grads.weight));
                out.push((*b, grads.bias));
            }
            Op::Add { a, b } => {
                out.push((*a, dy.to_vec()));
                out.push((*b, dy.to_vec()));
            }
            Op::ConcatChannels { parts } => {
                let [n, c, h, w] = node.value.dims4("concat_channels").expect("NCHW");
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    let mut g = Vec::with_capacity(n * pc * h * w);
                    for b in 0..n {
                        g.extend_from_slice(&dy[(b * c + offset) * h * w..(b * c + offset + pc) * h * w]);
                    }
                    offset += pc;
                    out.push((p, g));
                }
            }
            Op::SliceChannels { x, start } => {
                let [n, c, h, w] = self.value(*x).dims4("slice_channels").expect("NCHW");
                let len = node.value.shape()[1];
                let mut g = vec![T::zero(); n * c * h * w];
                for b in 0..n {
                    let dst = (b * c + start) * h * w;
                    g[dst..dst + len * h * w].copy_from_slice(&dy[b * len * h * w..(b + 1) * len * h * w]);
                }
                out.push((*x, g));
            }
            Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                let batch = self.value(*logits).shape()[0];
                let scale = dy[0] / T::from_usize(batch).unwrap();
                let g = probs.iter().zip(targets).map(|(&p, &y)| (p - y) * scale).collect();
                out.push((*logits, g));
            }
        }
        out
    }
}
