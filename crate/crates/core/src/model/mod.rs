//! Classification backbone built from CBS and C2f blocks, swappable heads,
//! backbone transfer between heads, and checkpoint serialization.

mod blocks;
pub mod checkpoint;
mod spec;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::tensor::{BatchStats, Mode, Scalar, Tape, Tensor, Var};

pub use blocks::{BatchNorm, Bottleneck, C2f, Cbs, Head, TensorKind, NORM_EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata, Stage};
pub use spec::{BackboneSpec, C2fBlockSpec, CbsBlockSpec, HeadSpec, StageSpec, BOTTLENECK_KERNEL};

use blocks::Visit;

const HEAD_STREAM: u64 = 0x4845_4144;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneStage<T> {
    pub downsample: Cbs<T>,
    pub c2f: C2f<T>,
}

/// Everything except the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub spec: BackboneSpec,
    pub stem: Cbs<T>,
    pub stages: Vec<BackboneStage<T>>,
}

impl<T: Scalar> Backbone<T> {
    fn new(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng(seed);
        let stem = Cbs::new(spec.stem, &mut r);
        let stages = spec
            .stages
            .iter()
            .map(|s| BackboneStage { downsample: Cbs::new(s.downsample, &mut r), c2f: C2f::new(s.c2f, &mut r) })
            .collect();
        Ok(Backbone { spec: spec.clone(), stem, stages })
    }

    /// Pooled embedding, B×embedding_dim.
    fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let [_, c, _, _] = tape.value(x).dims4("forward")?;
        if c != self.spec.in_channels() {
            return Err(Error::dim(
                "forward",
                format!("input channel axis (1) is {c}, backbone expects {}", self.spec.in_channels()),
            ));
        }
        let mut y = self.stem.forward(tape, x, mode)?;
        for stage in &self.stages {
            y = stage.downsample.forward(tape, y, mode)?;
            y = stage.c2f.forward(tape, y, mode)?;
        }
        tape.global_avg_pool(y)
    }
}

impl<T: Scalar> Visit<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a Tensor<T>)) {
        self.stem.visit(&format!("{prefix}.stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.downsample.visit(&format!("{prefix}.stages.{i}.down"), f);
            s.c2f.visit(&format!("{prefix}.stages.{i}.c2f"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, TensorKind, &'a mut Tensor<T>)) {
        self.stem.visit_mut(&format!("{prefix}.stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.downsample.visit_mut(&format!("{prefix}.stages.{i}.down"), f);
            s.c2f.visit_mut(&format!("{prefix}.stages.{i}.c2f"), f);
        }
    }
}

/// Backbone plus a fully connected head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub backbone: Backbone<T>,
    pub head: Head<T>,
}

impl<T: Scalar> Model<T> {
    /// Deterministic initialization: He-normal conv and linear weights, zero
    /// biases, unit gamma, zero beta, running statistics (0, 1).
    pub fn build(backbone: &BackboneSpec, head: &HeadSpec, init_seed: u64) -> Result<Self> {
        let backbone = Backbone::new(backbone, init_seed)?;
        let head = Self::fresh_head(&backbone.spec, head, init_seed)?;
        Ok(Model { backbone, head })
    }

    fn fresh_head(backbone: &BackboneSpec, head: &HeadSpec, init_seed: u64) -> Result<Head<T>> {
        head.validate()?;
        if head.input_dim != backbone.embedding_dim {
            return Err(Error::Spec(format!(
                "head input_dim {} does not match backbone embedding_dim {}",
                head.input_dim, backbone.embedding_dim
            )));
        }
        Ok(Head::new(*head, &mut rng(derive_seed(init_seed, &[HEAD_STREAM]))))
    }

    /// Copy of this model's backbone (parameters and running statistics)
    /// under a freshly initialized head.
    pub fn transfer_core(&self, new_head: &HeadSpec, init_seed: u64) -> Result<Self> {
        let head = Self::fresh_head(&self.backbone.spec, new_head, init_seed)?;
        Ok(Model { backbone: self.backbone.clone(), head })
    }

    pub fn backbone_spec(&self) -> &BackboneSpec {
        &self.backbone.spec
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head.spec
    }

    pub fn class_count(&self) -> usize {
        self.head.spec.class_count
    }

    /// Records the full forward pass and returns the logits node.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let e = self.backbone.forward(tape, x, mode)?;
        self.head.forward(tape, e)
    }

    /// Records the backbone only and returns the embedding node.
    pub fn forward_embedding(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.backbone.forward(tape, x, mode)
    }

    /// Eval-mode logits, B×class_count.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let y = self.forward(&mut tape, x, Mode::Eval)?;
        let out = tape.value(y).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("forward".into()));
        }
        Ok(out)
    }

    /// Eval-mode pooled representation, B×embedding_dim.
    pub fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let y = self.forward_embedding(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    pub fn named_tensors(&self) -> Vec<(String, TensorKind, &Tensor<T>)> {
        let mut out = Vec::new();
        self.backbone.visit("backbone", &mut |n, k, t| out.push((n, k, t)));
        self.head.visit("head", &mut |n, k, t| out.push((n, k, t)));
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.backbone.visit_mut("backbone", &mut |n, k, t| out.push((n, k, t)));
        self.head.visit_mut("head", &mut |n, k, t| out.push((n, k, t)));
        out
    }

    /// Trainable tensors in the order `forward` registers them.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().filter(|(_, k, _)| *k == TensorKind::Param).map(|(_, _, t)| t).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.named_tensors_mut().into_iter().filter(|(_, k, _)| *k == TensorKind::Param).map(|(_, _, t)| t).collect()
    }

    pub fn backbone_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        self.backbone.visit("backbone", &mut |_, _, t| out.push(t));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Moves the gradients of the tape's parameter leaves onto the parameters.
    pub fn collect_gradients(&mut self, tape: &mut Tape<T>) -> Result<()> {
        let vars = tape.params().to_vec();
        let mut params = self.params_mut();
        if vars.len() != params.len() {
            return Err(Error::State(format!("tape recorded {} parameters, model has {}", vars.len(), params.len())));
        }
        for (p, v) in params.iter_mut().zip(vars) {
            let g = tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); p.len()]);
            p.set_grad(g)?;
        }
        Ok(())
    }

    /// Exponential moving average of the running statistics with the batch
    /// statistics recorded by a train-mode pass.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>], momentum: f64) -> Result<()> {
        let mut buffers: Vec<&mut Tensor<T>> = self
            .named_tensors_mut()
            .into_iter()
            .filter(|(_, k, _)| *k == TensorKind::Buffer)
            .map(|(_, _, t)| t)
            .collect();
        if buffers.len() != 2 * stats.len() {
            return Err(Error::State(format!(
                "{} batch-norm layers but {} recorded batch statistics",
                buffers.len() / 2,
                stats.len()
            )));
        }
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        for (pair, s) in buffers.chunks_mut(2).zip(stats) {
            for (r, &b) in pair[0].data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in pair[1].data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * b;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out: Model<U> =
            Model::build(self.backbone_spec(), self.head_spec(), 0).expect("spec already validated");
        let src = self.named_tensors();
        for ((_, _, dst), (_, _, s)) in out.named_tensors_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        out
    }
}
