use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{C2fBlockSpec, CbsBlockSpec, HeadSpec, BOTTLENECK_KERNEL};
use crate::error::Result;
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};

pub const NORM_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Buffer,
}

/// Walks named tensors in declaration order. The order of `Param` entries is
/// the order in which `forward` registers parameters on the tape.
pub(crate) trait Visit<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>));
}

pub(crate) fn he_normal<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&self.gamma);
        let beta = tape.param(&self.beta);
        tape.batch_norm(
            x,
            gamma,
            beta,
            self.running_mean.data(),
            self.running_var.data(),
            mode,
            T::from_f64_lossy(NORM_EPSILON),
        )
    }
}

impl<T: Scalar> Visit<T> for BatchNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        f(format!("{prefix}.gamma"), TensorKind::Param, &self.gamma);
        f(format!("{prefix}.beta"), TensorKind::Param, &self.beta);
        f(format!("{prefix}.running_mean"), TensorKind::Buffer, &self.running_mean);
        f(format!("{prefix}.running_var"), TensorKind::Buffer, &self.running_var);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        let BatchNorm { gamma, beta, running_mean, running_var } = self;
        f(format!("{prefix}.gamma"), TensorKind::Param, gamma);
        f(format!("{prefix}.beta"), TensorKind::Param, beta);
        f(format!("{prefix}.running_mean"), TensorKind::Buffer, running_mean);
        f(format!("{prefix}.running_var"), TensorKind::Buffer, running_var);
    }
}

/// Conv (no bias) → BatchNorm → SiLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Cbs<T> {
    pub spec: CbsBlockSpec,
    pub weight: Tensor<T>,
    pub norm: BatchNorm<T>,
}

impl<T: Scalar> Cbs<T> {
    pub fn new<R: Rng>(spec: CbsBlockSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        Cbs {
            spec,
            weight: he_normal(&[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel], fan_in, rng),
            norm: BatchNorm::new(spec.out_channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = tape.param(&self.weight);
        let y = tape.conv2d(x, w, None, self.spec.stride, self.spec.padding())?;
        let y = self.norm.forward(tape, y, mode)?;
        tape.silu(y)
    }
}

impl<T: Scalar> Visit<T> for Cbs<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        f(format!("{prefix}.conv.weight"), TensorKind::Param, &self.weight);
        self.norm.visit(&format!("{prefix}.bn"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        f(format!("{prefix}.conv.weight"), TensorKind::Param, &mut self.weight);
        self.norm.visit_mut(&format!("{prefix}.bn"), f);
    }
}

/// Two 3×3 CBS blocks with a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck<T> {
    pub cv1: Cbs<T>,
    pub cv2: Cbs<T>,
}

impl<T: Scalar> Bottleneck<T> {
    fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        Bottleneck {
            cv1: Cbs::new(CbsBlockSpec::new(channels, channels, BOTTLENECK_KERNEL, 1), rng),
            cv2: Cbs::new(CbsBlockSpec::new(channels, channels, 3, 1), rng),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.cv1.forward(tape, x, mode)?;
        let y = self.cv2.forward(tape, y, mode)?;
        tape.add(x, y)
    }
}

impl<T: Scalar> Visit<T> for Bottleneck<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        self.cv1.visit(&format!("{prefix}.cv1"), f);
        self.cv2.visit(&format!("{prefix}.cv2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        self.cv1.visit_mut(&format!("{prefix}.cv1"), f);
        self.cv2.visit_mut(&format!("{prefix}.cv2"), f);
    }
}

/// 1×1 CBS to two halves of `hidden` channels, a bottleneck chain on the
/// second half, concatenation of both halves and every bottleneck output, and
/// a 1×1 CBS fusing back to `features` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct C2f<T> {
    pub spec: C2fBlockSpec,
    pub cv1: Cbs<T>,
    pub bottlenecks: Vec<Bottleneck<T>>,
    pub cv2: Cbs<T>,
}

impl<T: Scalar> C2f<T> {
    pub fn new<R: Rng>(spec: C2fBlockSpec, rng: &mut R) -> Self {
        let hidden = spec.hidden();
        let cv1 = Cbs::new(CbsBlockSpec::new(spec.features, 2 * hidden, 1, 1), rng);
        let bottlenecks = (0..spec.bottleneck_count).map(|_| Bottleneck::new(hidden, rng)).collect();
        let cv2 = Cbs::new(CbsBlockSpec::new((2 + spec.bottleneck_count) * hidden, spec.features, 1, 1), rng);
        C2f { spec, cv1, bottlenecks, cv2 }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let hidden = self.spec.hidden();
        let y = self.cv1.forward(tape, x, mode)?;
        let first = tape.slice_channels(y, 0, hidden)?;
        let mut branch = tape.slice_channels(y, hidden, hidden)?;
        let mut parts = vec![first, branch];
        for b in &self.bottlenecks {
            branch = b.forward(tape, branch, mode)?;
            parts.push(branch);
        }
        let cat = tape.concat_channels(&parts)?;
        self.cv2.forward(tape, cat, mode)
    }
}

impl<T: Scalar> Visit<T> for C2f<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        self.cv1.visit(&format!("{prefix}.cv1"), f);
        for (i, b) in self.bottlenecks.iter().enumerate() {
            b.visit(&format!("{prefix}.m.{i}"), f);
        }
        self.cv2.visit(&format!("{prefix}.cv2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        self.cv1.visit_mut(&format!("{prefix}.cv1"), f);
        for (i, b) in self.bottlenecks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.m.{i}"), f);
        }
        self.cv2.visit_mut(&format!("{prefix}.cv2"), f);
    }
}

/// Fully connected classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub spec: HeadSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new<R: Rng>(spec: HeadSpec, rng: &mut R) -> Self {
        Head {
            spec,
            weight: he_normal(&[spec.input_dim, spec.class_count], spec.input_dim, rng),
            bias: Tensor::zeros([spec.class_count]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, b)
    }
}

impl<T: Scalar> Visit<T> for Head<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        f(format!("{prefix}.weight"), TensorKind::Param, &self.weight);
        f(format!("{prefix}.bias"), TensorKind::Param, &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        let Head { weight, bias, .. } = self;
        f(format!("{prefix}.weight"), TensorKind::Param, weight);
        f(format!("{prefix}.bias"), TensorKind::Param, bias);
    }
}
