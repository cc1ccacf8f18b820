//! Peer-student networks and the peer-teacher ensemble classifier.

mod checkpoint;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use layers::{global_avg_pool, global_avg_pool_backward, BasicBlock, BasicBlockCache, ConvBn, ConvBnCache, Linear, ParamStore};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Input channels every backbone expects.
pub const INPUT_CHANNELS: usize = 3;

/// Channel widths of the three stride-2 stages of `tiny-cnn`.
pub const TINY_CNN_WIDTHS: [usize; 3] = [16, 32, 64];

/// Width of the hidden layer `tiny-cnn` feeds its flattened conv map into.
pub const TINY_CNN_HIDDEN: usize = 128;

/// Side of the last `tiny-cnn` feature map for a 32x32 input.
const TINY_CNN_GRID: usize = 4;

/// Backbone roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arch {
    /// Three stride-2 conv-bn-relu stages, a flattened 4x4 map into a
    /// ReLU hidden layer, linear head.
    TinyCnn,
    /// CIFAR ResNet of depth `6n + 2` (widths 16/32/64).
    ResNet(usize),
    /// Widened CIFAR ResNet `wrn-<depth>-<widen>`, depth `6n + 4`.
    WideResNet(usize, usize),
}

impl Arch {
    /// Penultimate feature width.
    pub fn feature_dim(&self) -> usize {
        match self {
            Arch::TinyCnn => TINY_CNN_HIDDEN,
            Arch::ResNet(_) => 64,
            Arch::WideResNet(_, k) => 64 * k,
        }
    }

    /// Configurations that are accepted but far too slow for desk-scale runs.
    pub fn is_heavy(&self) -> bool {
        match self {
            Arch::TinyCnn => false,
            Arch::ResNet(d) => *d > 32,
            Arch::WideResNet(..) => true,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::TinyCnn => f.write_str("tiny-cnn"),
            Arch::ResNet(d) => write!(f, "resnet-{d}"),
            Arch::WideResNet(d, k) => write!(f, "wrn-{d}-{k}"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Configuration(format!("unknown architecture '{s}'"));
        let s = s.trim().to_ascii_lowercase();
        if s == "tiny-cnn" {
            return Ok(Arch::TinyCnn);
        }
        if let Some(d) = s.strip_prefix("resnet-") {
            let d: usize = d.parse().map_err(|_| bad())?;
            if d >= 8 && (d - 2) % 6 == 0 {
                return Ok(Arch::ResNet(d));
            }
            return Err(bad());
        }
        if let Some(rest) = s.strip_prefix("wrn-") {
            let (d, k) = rest.split_once('-').ok_or_else(bad)?;
            let d: usize = d.parse().map_err(|_| bad())?;
            let k: usize = k.parse().map_err(|_| bad())?;
            if d >= 10 && (d - 4) % 6 == 0 && k >= 1 {
                return Ok(Arch::WideResNet(d, k));
            }
        }
        Err(bad())
    }
}

impl TryFrom<String> for Arch {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Arch> for String {
    fn from(a: Arch) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone)]
enum Block {
    Plain(ConvBn),
    Residual(BasicBlock),
}

#[derive(Debug, Clone)]
enum BlockCache {
    Plain(ConvBnCache),
    Residual(BasicBlockCache),
}

impl Block {
    fn forward_train(&self, store: &mut ParamStore, x: &Array4<f32>) -> (Array4<f32>, BlockCache) {
        match self {
            Block::Plain(l) => {
                let (y, c) = l.forward_train(store, x);
                (y, BlockCache::Plain(c))
            }
            Block::Residual(b) => {
                let (y, c) = b.forward_train(store, x);
                (y, BlockCache::Residual(c))
            }
        }
    }

    fn forward_eval(&self, store: &ParamStore, x: &Array4<f32>) -> Array4<f32> {
        match self {
            Block::Plain(l) => l.forward_eval(store, x),
            Block::Residual(b) => b.forward_eval(store, x),
        }
    }

    fn backward(
        &self,
        store: &mut ParamStore,
        dy: Array4<f32>,
        cache: BlockCache,
        need_input_grad: bool,
    ) -> Option<Array4<f32>> {
        match (self, cache) {
            (Block::Plain(l), BlockCache::Plain(c)) => l.backward(store, dy, c, need_input_grad),
            (Block::Residual(b), BlockCache::Residual(c)) => b.backward(store, dy, c, need_input_grad),
            _ => unreachable!("cache recorded by a different block"),
        }
    }
}

/// Penultimate features and logits of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    /// `[n, feature_dim]`
    pub features: Array2<f32>,
    /// `[n, num_classes]`
    pub logits: Array2<f32>,
}

/// Activations recorded by [`PeerStudent::forward_train`].
#[derive(Debug)]
pub struct Tape {
    caches: Vec<BlockCache>,
    pooled_dims: (usize, usize, usize, usize),
    /// Flattened conv map fed to the hidden layer, when there is one.
    flat: Option<Array2<f32>>,
    features: Array2<f32>,
}

/// One peer network: a convolutional backbone, a feature layer (global
/// pooling, or a flattened hidden layer for `tiny-cnn`) and a linear
/// classifier.
#[derive(Debug, Clone)]
pub struct PeerStudent {
    arch: Arch,
    num_classes: usize,
    store: ParamStore,
    blocks: Vec<Block>,
    hidden: Option<Linear>,
    head: Linear,
}

/// Builds a freshly initialised student (He-normal convolutions, unit/zero
/// batch norm, uniform linear weights with zero bias).
pub fn build_student(arch: Arch, num_classes: usize, seed: u64) -> Result<PeerStudent> {
    PeerStudent::new(arch, num_classes, seed)
}

impl PeerStudent {
    pub fn new(arch: Arch, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Configuration(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = rng::stream(seed, 0, Stream::Other(0xA5C4));
        let mut store = ParamStore::default();
        let mut blocks = Vec::new();
        let mut hidden = None;
        match arch {
            Arch::TinyCnn => {
                let mut in_ch = INPUT_CHANNELS;
                for (i, &w) in TINY_CNN_WIDTHS.iter().enumerate() {
                    blocks.push(Block::Plain(ConvBn::new(
                        &mut store,
                        &format!("stage{i}"),
                        in_ch,
                        w,
                        3,
                        2,
                        true,
                        &mut rng,
                    )));
                    in_ch = w;
                }
                let flat = in_ch * TINY_CNN_GRID * TINY_CNN_GRID;
                hidden = Some(Linear::new(&mut store, "hidden", flat, TINY_CNN_HIDDEN, &mut rng));
            }
            Arch::ResNet(depth) | Arch::WideResNet(depth, _) => {
                let (per_stage, widen) = match arch {
                    Arch::ResNet(_) => ((depth - 2) / 6, 1),
                    Arch::WideResNet(_, k) => ((depth - 4) / 6, k),
                    Arch::TinyCnn => unreachable!(),
                };
                blocks.push(Block::Plain(ConvBn::new(&mut store, "stem", INPUT_CHANNELS, 16, 3, 1, true, &mut rng)));
                let mut in_ch = 16;
                for (stage, base) in [16, 32, 64].into_iter().enumerate() {
                    let out_ch = base * widen;
                    for b in 0..per_stage {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        blocks.push(Block::Residual(BasicBlock::new(
                            &mut store,
                            &format!("stage{stage}.block{b}"),
                            in_ch,
                            out_ch,
                            stride,
                            &mut rng,
                        )));
                        in_ch = out_ch;
                    }
                }
            }
        }
        let head = Linear::new(&mut store, "head", arch.feature_dim(), num_classes, &mut rng);
        Ok(Self {
            arch,
            num_classes,
            store,
            blocks,
            hidden,
            head,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }

    /// Zeroes the classifier weights and bias.
    pub fn zero_head(&mut self) {
        self.store.value_mut(self.head.weight).fill(0.0);
        self.store.value_mut(self.head.bias).fill(0.0);
    }

    /// Applies the student's own classifier to a feature matrix.
    pub fn classify(&self, features: ArrayView2<f32>) -> Array2<f32> {
        self.head.forward(&self.store, features)
    }

    fn channel_major(&self, pixels: &Array4<f32>) -> Result<Array4<f32>> {
        let (n, c, h, w) = pixels.dim();
        if c != INPUT_CHANNELS || n == 0 || h == 0 || w == 0 {
            return Err(Error::Validation(format!(
                "expected [n, {INPUT_CHANNELS}, H, W] pixels, got {:?}",
                pixels.shape()
            )));
        }
        Ok(pixels.view().permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned())
    }

    /// Penultimate features of a `[C, N, H, W]` backbone output, plus the
    /// flattened map when a hidden layer consumed it.
    fn embed(&self, x: &Array4<f32>) -> Result<(Array2<f32>, Option<Array2<f32>>)> {
        let Some(fc) = &self.hidden else {
            return Ok((global_avg_pool(x), None));
        };
        let flat = flatten(x);
        if flat.ncols() != fc.in_dim {
            return Err(Error::Validation(format!(
                "{} expects 32x32 inputs; backbone produced {:?}",
                self.arch,
                x.dim()
            )));
        }
        let mut h = fc.forward(&self.store, flat.view());
        h.mapv_inplace(|v| v.max(0.0));
        Ok((h, Some(flat)))
    }

    /// Evaluation-mode forward pass (running batch-norm statistics, no caching).
    pub fn forward(&self, pixels: &Array4<f32>) -> Result<StudentOutput> {
        let mut x = self.channel_major(pixels)?;
        for block in &self.blocks {
            x = block.forward_eval(&self.store, &x);
        }
        let (features, _) = self.embed(&x)?;
        let logits = self.head.forward(&self.store, features.view());
        Ok(StudentOutput { features, logits })
    }

    /// Training-mode forward pass: batch statistics, running-statistic updates,
    /// and a tape for [`PeerStudent::backward`].
    pub fn forward_train(&mut self, pixels: &Array4<f32>) -> Result<(StudentOutput, Tape)> {
        let mut x = self.channel_major(pixels)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward_train(&mut self.store, &x);
            caches.push(cache);
            x = y;
        }
        let (features, flat) = self.embed(&x)?;
        let logits = self.head.forward(&self.store, features.view());
        let tape = Tape {
            caches,
            pooled_dims: x.dim(),
            flat,
            features: features.clone(),
        };
        Ok((StudentOutput { features, logits }, tape))
    }

    /// Accumulates parameter gradients given `dL/dlogits` and an optional
    /// direct `dL/dfeatures`.
    pub fn backward(&mut self, tape: Tape, d_logits: ArrayView2<f32>, d_features: Option<ArrayView2<f32>>) -> Result<()> {
        if d_logits.dim() != (tape.features.nrows(), self.num_classes) {
            return Err(Error::Validation(format!(
                "logit gradient shape {:?} does not match batch",
                d_logits.dim()
            )));
        }
        let mut df = self.head.backward(&mut self.store, tape.features.view(), d_logits);
        if let Some(extra) = d_features {
            if extra.dim() != df.dim() {
                return Err(Error::Validation(format!(
                    "feature gradient shape {:?}, expected {:?}",
                    extra.dim(),
                    df.dim()
                )));
            }
            df += &extra;
        }
        let mut dx = match (&self.hidden, tape.flat) {
            (Some(fc), Some(flat)) => {
                df.zip_mut_with(&tape.features, |d, &f| {
                    if f <= 0.0 {
                        *d = 0.0;
                    }
                });
                let d_flat = fc.backward(&mut self.store, flat.view(), df.view());
                unflatten(d_flat, tape.pooled_dims)
            }
            _ => global_avg_pool_backward(df.view(), tape.pooled_dims),
        };
        for (i, (block, cache)) in self.blocks.iter().zip(tape.caches).enumerate().rev() {
            match block.backward(&mut self.store, dx, cache, i > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
        Ok(())
    }

    pub fn export_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        export_store(&self.store, prefix)
    }

    pub fn import_tensors(&mut self, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
        import_store(&mut self.store, prefix, tensors)
    }
}

/// `[C, N, H, W] -> [N, C * H * W]`, sample-major.
fn flatten(x: &Array4<f32>) -> Array2<f32> {
    let (c, n, h, w) = x.dim();
    let nchw = x.view().permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned();
    nchw.into_shape_with_order((n, c * h * w)).expect("contiguous")
}

/// Inverse of [`flatten`] for a map of `dims = (C, N, H, W)`.
fn unflatten(d: Array2<f32>, dims: (usize, usize, usize, usize)) -> Array4<f32> {
    let (c, n, h, w) = dims;
    let nchw = d.into_shape_with_order((n, c, h, w)).expect("matching size");
    nchw.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}

/// Convenience wrapper matching the student forward operation.
pub fn student_forward(student: &PeerStudent, pixels: &Array4<f32>) -> Result<StudentOutput> {
    student.forward(pixels)
}

/// Result of a teacher forward pass.
#[derive(Debug, Clone)]
pub struct TeacherOutput {
    pub logits: Array2<f32>,
    input: Array2<f32>,
    detached: bool,
}

/// Linear classifier `g` over the concatenated penultimate features of all
/// peers.
#[derive(Debug, Clone)]
pub struct PeerTeacher {
    store: ParamStore,
    fc: Linear,
    input_dims: Vec<usize>,
    num_classes: usize,
}

impl PeerTeacher {
    pub fn new(input_dims: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if input_dims.is_empty() || input_dims.contains(&0) {
            return Err(Error::Configuration("teacher needs non-empty peer features".into()));
        }
        let mut rng = rng::stream(seed, 0, Stream::TeacherInit);
        let mut store = ParamStore::default();
        let width = input_dims.iter().sum();
        let fc = Linear::new(&mut store, "teacher", width, num_classes, &mut rng);
        Ok(Self {
            store,
            fc,
            input_dims: input_dims.to_vec(),
            num_classes,
        })
    }

    /// Sum of the peer feature widths.
    pub fn input_width(&self) -> usize {
        self.input_dims.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Overwrites the weight (`[K, sum d_j]`, row-major) and bias.
    pub fn set_weights(&mut self, weight: &[f32], bias: &[f32]) -> Result<()> {
        if weight.len() != self.num_classes * self.input_width() || bias.len() != self.num_classes {
            return Err(Error::Validation("teacher weight shape mismatch".into()));
        }
        self.store.value_mut(self.fc.weight).copy_from_slice(weight);
        self.store.value_mut(self.fc.bias).copy_from_slice(bias);
        Ok(())
    }

    /// `logits = W concat(f_1, ..., f_J) + b`. With `detach`, the backward
    /// pass updates only the teacher and returns no feature gradients.
    pub fn forward(&self, features: &[ArrayView2<f32>], detach: bool) -> Result<TeacherOutput> {
        let widths: Vec<usize> = features.iter().map(|f| f.ncols()).collect();
        if widths != self.input_dims {
            return Err(Error::Validation(format!(
                "teacher expects peer widths {:?}, got {widths:?}",
                self.input_dims
            )));
        }
        let n = features[0].nrows();
        if features.iter().any(|f| f.nrows() != n) {
            return Err(Error::Validation("peers disagree on batch size".into()));
        }
        let input = concatenate(Axis(1), features).expect("validated shapes");
        let logits = self.fc.forward(&self.store, input.view());
        Ok(TeacherOutput { logits, input, detached: detach })
    }

    /// Accumulates the teacher's parameter gradients. Returns per-peer feature
    /// gradients unless the forward pass was detached.
    pub fn backward(&mut self, out: &TeacherOutput, d_logits: ArrayView2<f32>) -> Result<Option<Vec<Array2<f32>>>> {
        if d_logits.dim() != out.logits.dim() {
            return Err(Error::Validation("teacher logit gradient shape mismatch".into()));
        }
        let dx = self.fc.backward(&mut self.store, out.input.view(), d_logits);
        if out.detached {
            return Ok(None);
        }
        let mut start = 0;
        let mut grads = Vec::with_capacity(self.input_dims.len());
        for &d in &self.input_dims {
            grads.push(dx.slice(s![.., start..start + d]).to_owned());
            start += d;
        }
        Ok(Some(grads))
    }

    pub fn export_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        export_store(&self.store, prefix)
    }

    pub fn import_tensors(&mut self, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
        import_store(&mut self.store, prefix, tensors)
    }
}

/// Convenience wrapper matching the teacher forward operation.
pub fn teacher_forward(teacher: &PeerTeacher, features: &[ArrayView2<f32>], detach: bool) -> Result<Array2<f32>> {
    teacher.forward(features, detach).map(|o| o.logits)
}

pub(crate) fn export_store(store: &ParamStore, prefix: &str) -> Vec<NamedTensor> {
    store
        .entries()
        .iter()
        .map(|e| NamedTensor {
            name: format!("{prefix}{}", e.name),
            shape: e.shape.clone(),
            data: e.value.clone(),
        })
        .collect()
}

pub(crate) fn import_store(store: &mut ParamStore, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
    for e in store.entries_mut() {
        let name = format!("{prefix}{}", e.name);
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor '{name}'")))?;
        if t.shape != e.shape {
            return Err(Error::Validation(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                t.shape, e.shape
            )));
        }
        e.value.copy_from_slice(&t.data);
    }
    Ok(())
}
