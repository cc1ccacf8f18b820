//! The training loop: per-peer distortion, Cut^nMix, the four-part peer loss,
//! peer-teacher supervision and SGD updates.

mod optim;

use ndarray::{Array2, Array4, ArrayView2};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use optim::{lr_at, OptimConfig, Sgd};

use crate::augment::{apply_mix_plan, base_distort, ImageBatch, MixPlan, SoftLabelBatch};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::harness::eval::evaluate;
use crate::losses::{
    dml_loss_with_grad, mmd_loss_with_grad, pt_loss_with_grad, soft_ce_with_grad, total_loss,
    DistillConfig, LossParts,
};
use crate::models::{Arch, Checkpoint, NamedTensor, PeerStudent, PeerTeacher, StudentOutput, Tape, TeacherOutput};
use crate::rng::{self, Rng, Stream};

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub num_classes: usize,
    pub distill: DistillConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    /// Mix the distorted batches with a shared-ratio, per-peer-mask plan.
    /// With one peer this is plain CutMix.
    pub mixing: bool,
    /// Pad-crop-flip before mixing.
    pub base_distortion: bool,
    /// Fit the peer teacher to the mixed labels after each student update.
    pub train_teacher: bool,
    /// Update peers one at a time, each against a fresh forward pass of the
    /// others, instead of all from one shared snapshot.
    pub alternating: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::TinyCnn,
            num_classes: 10,
            distill: DistillConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 128,
            eval_batch_size: 500,
            seed: 0,
            mixing: true,
            base_distortion: true,
            train_teacher: true,
            alternating: false,
        }
    }
}

impl TrainConfig {
    /// Accepts one peer only when every inter-peer term is switched off.
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        let d = &self.distill;
        if d.num_peers == 0 {
            return Err(Error::Configuration("need at least one peer".into()));
        }
        if d.num_peers == 1 {
            if d.alpha != 0.0 || d.beta != 0.0 || d.gamma != 0.0 || self.train_teacher {
                return Err(Error::Configuration(
                    "a single peer cannot use mutual, feature or teacher terms".into(),
                ));
            }
        } else {
            d.validate()?;
        }
        if self.num_classes < 2 {
            return Err(Error::Configuration(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Configuration(format!(
                "batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Configuration("eval batch size must be positive".into()));
        }
        Ok(())
    }

    fn uses_teacher(&self) -> bool {
        self.distill.num_peers >= 2 && (self.train_teacher || self.distill.gamma > 0.0)
    }
}

/// Per-peer scalars of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PeerStep {
    pub parts: LossParts,
    pub total: f64,
    /// Samples whose argmax matches the dominant mixed label.
    pub correct: usize,
}

/// Scalars reported by [`train_step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub n: usize,
    pub lr: f64,
    /// Mixing ratio of the step, if mixing was on.
    pub lam: Option<f64>,
    pub peers: Vec<PeerStep>,
    pub teacher_ce: Option<f64>,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub peer: usize,
    pub ce: f64,
    pub dml: f64,
    pub mmd: f64,
    pub pt: f64,
    pub total: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

/// Random streams for the current epoch.
#[derive(Debug, Clone)]
struct EpochStreams {
    peers: Vec<Rng>,
    plan: Rng,
}

impl EpochStreams {
    fn new(seed: u64, epoch: usize, num_peers: usize) -> Self {
        Self {
            peers: (0..num_peers)
                .map(|j| rng::stream(seed, epoch as u64, Stream::Peer(j)))
                .collect(),
            plan: rng::stream(seed, epoch as u64, Stream::MixPlan),
        }
    }
}

/// Models, optimiser state and history of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: usize,
    pub peers: Vec<PeerStudent>,
    pub teacher: Option<PeerTeacher>,
    pub history: Vec<MetricRow>,
    peer_opts: Vec<Sgd>,
    teacher_opt: Option<Sgd>,
    streams: EpochStreams,
}

/// Initialisation seed of peer `j` under run seed `seed`.
pub fn peer_init_seed(seed: u64, j: usize) -> u64 {
    rng::stream(seed, 0, Stream::Init(j)).next_u64()
}

impl TrainState {
    /// Freshly initialised peers (and teacher, if the config uses one).
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let j = cfg.distill.num_peers;
        let peers = (0..j)
            .map(|p| PeerStudent::new(cfg.arch, cfg.num_classes, peer_init_seed(cfg.seed, p)))
            .collect::<Result<Vec<_>>>()?;
        let teacher = if cfg.uses_teacher() {
            let dims: Vec<usize> = peers.iter().map(PeerStudent::feature_dim).collect();
            Some(PeerTeacher::new(&dims, cfg.num_classes, cfg.seed)?)
        } else {
            None
        };
        Ok(Self {
            epoch: 0,
            step: 0,
            peer_opts: peers.iter().map(|p| Sgd::new(p.params())).collect(),
            teacher_opt: teacher.as_ref().map(|t| Sgd::new(t.params())),
            peers,
            teacher,
            history: Vec::new(),
            streams: EpochStreams::new(cfg.seed, 0, j),
        })
    }

    /// Re-derives the random streams for `epoch`. Called by [`train`] at the
    /// start of every epoch.
    pub fn begin_epoch(&mut self, cfg: &TrainConfig, epoch: usize) {
        self.epoch = epoch;
        self.streams = EpochStreams::new(cfg.seed, epoch, self.peers.len());
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        for (j, (peer, opt)) in self.peers.iter().zip(&self.peer_opts).enumerate() {
            tensors.extend(peer.export_tensors(&format!("peer{j}.")));
            tensors.extend(momentum_tensors(peer.params(), opt, &format!("peer{j}.momentum.")));
        }
        if let (Some(t), Some(opt)) = (&self.teacher, &self.teacher_opt) {
            tensors.extend(t.export_tensors("teacher."));
            tensors.extend(momentum_tensors(t.params(), opt, "teacher.momentum."));
        }
        let meta = json!({
            "kind": "train-state",
            "epoch": self.epoch,
            "step": self.step,
            "rng": { "seed": cfg.seed, "epoch": self.epoch },
            "config": serde_json::to_value(cfg)?,
            "history": serde_json::to_value(&self.history)?,
        });
        Ok(Checkpoint { meta, tensors })
    }

    /// Rebuilds a state saved at an epoch boundary. The architecture, peer
    /// count, class count and seed must match `cfg`.
    pub fn from_checkpoint(cfg: &TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let saved: TrainConfig = serde_json::from_value(ck.meta["config"].clone())?;
        if saved.arch != cfg.arch
            || saved.distill.num_peers != cfg.distill.num_peers
            || saved.num_classes != cfg.num_classes
            || saved.seed != cfg.seed
            || saved.uses_teacher() != cfg.uses_teacher()
        {
            return Err(Error::Consistency(
                "checkpoint was written by an incompatible run configuration".into(),
            ));
        }
        let mut state = Self::new(cfg)?;
        for (j, (peer, opt)) in state.peers.iter_mut().zip(&mut state.peer_opts).enumerate() {
            peer.import_tensors(&format!("peer{j}."), &ck.tensors)?;
            load_momentum(peer.params(), opt, &format!("peer{j}.momentum."), &ck.tensors)?;
        }
        if let (Some(t), Some(opt)) = (&mut state.teacher, &mut state.teacher_opt) {
            t.import_tensors("teacher.", &ck.tensors)?;
            load_momentum(t.params(), opt, "teacher.momentum.", &ck.tensors)?;
        }
        let field = |k: &str| {
            ck.meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Consistency(format!("checkpoint meta lacks `{k}`")))
        };
        state.step = field("step")?;
        let epoch = field("epoch")?;
        state.history = serde_json::from_value(ck.meta["history"].clone())?;
        state.begin_epoch(cfg, epoch);
        Ok(state)
    }
}

fn momentum_tensors(store: &crate::models::layers::ParamStore, opt: &Sgd, prefix: &str) -> Vec<NamedTensor> {
    store
        .entries()
        .iter()
        .zip(opt.buffers())
        .filter(|(e, _)| e.trainable)
        .map(|(e, b)| NamedTensor {
            name: format!("{prefix}{}", e.name),
            shape: e.shape.clone(),
            data: b.clone(),
        })
        .collect()
}

fn load_momentum(
    store: &crate::models::layers::ParamStore,
    opt: &mut Sgd,
    prefix: &str,
    tensors: &[NamedTensor],
) -> Result<()> {
    for (e, b) in store.entries().iter().zip(opt.buffers_mut()) {
        if !e.trainable {
            continue;
        }
        let name = format!("{prefix}{}", e.name);
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Consistency(format!("checkpoint lacks `{name}`")))?;
        if t.data.len() != b.len() {
            return Err(Error::Consistency(format!("`{name}` has the wrong size")));
        }
        b.copy_from_slice(&t.data);
    }
    Ok(())
}

fn to_f64(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

fn to_f32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

fn check_finite(what: &str, v: f64, state: &TrainState) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            epoch: state.epoch,
            step: state.step,
        })
    }
}

fn count_correct(logits: ArrayView2<f32>, targets: &SoftLabelBatch) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(targets.dominant())
        .filter(|(row, y)| crate::argmax(row.iter().copied()) == *y)
        .count()
}

/// Training-mode forward pass of every peer. With `owner = Some(j)` only peer
/// `j` keeps its tape and updates its batch-norm running statistics; the
/// others run on throwaway copies.
fn forward_peers(
    peers: &mut [PeerStudent],
    inputs: &[Array4<f32>],
    owner: Option<usize>,
) -> Result<(Vec<StudentOutput>, Vec<Option<Tape>>)> {
    let mut outputs = Vec::with_capacity(peers.len());
    let mut tapes = Vec::with_capacity(peers.len());
    for (k, (peer, x)) in peers.iter_mut().zip(inputs).enumerate() {
        if owner.is_none_or(|j| j == k) {
            let (out, tape) = peer.forward_train(x)?;
            outputs.push(out);
            tapes.push(Some(tape));
        } else {
            let (out, _) = peer.clone().forward_train(x)?;
            outputs.push(out);
            tapes.push(None);
        }
    }
    Ok((outputs, tapes))
}

fn teacher_forward(teacher: Option<&PeerTeacher>, outputs: &[StudentOutput]) -> Result<Option<TeacherOutput>> {
    teacher
        .map(|t| {
            let feats: Vec<ArrayView2<f32>> = outputs.iter().map(|o| o.features.view()).collect();
            t.forward(&feats, true)
        })
        .transpose()
}

/// Loss of peer `j` on one snapshot and its gradients with respect to the
/// peer's logits and features. Terms with zero weight are reported but add
/// no gradient.
fn peer_objective(
    j: usize,
    outputs: &[StudentOutput],
    teacher: Option<&TeacherOutput>,
    targets: &SoftLabelBatch,
    d: &DistillConfig,
    state: &TrainState,
) -> Result<(PeerStep, Array2<f32>, Option<Array2<f32>>)> {
    let j_count = outputs.len();
    let logits: Vec<Array2<f64>> = outputs.iter().map(|o| to_f64(&o.logits)).collect();
    let logit_views: Vec<ArrayView2<f64>> = logits.iter().map(|l| l.view()).collect();
    let (ce, mut g_logits) = soft_ce_with_grad(logit_views[j], targets)?;
    let mut parts = LossParts { ce, ..Default::default() };
    let mut g_features = None;
    if j_count >= 2 {
        let (dml, g) = dml_loss_with_grad(&logit_views, j, d.tau)?;
        parts.dml = dml;
        if d.alpha > 0.0 {
            g_logits.scaled_add(d.alpha, &g);
        }
        let features: Vec<Array2<f64>> = outputs.iter().map(|o| to_f64(&o.features)).collect();
        let feature_views: Vec<ArrayView2<f64>> = features.iter().map(|f| f.view()).collect();
        let (mmd, g) = mmd_loss_with_grad(&feature_views, j)?;
        parts.mmd = mmd;
        if d.beta > 0.0 {
            g_features = Some(to_f32(&(g * d.beta)));
        }
    }
    if let Some(t) = teacher {
        let (pt, g) = pt_loss_with_grad(logit_views[j], to_f64(&t.logits).view(), d.tau)?;
        parts.pt = pt;
        if d.gamma > 0.0 {
            g_logits.scaled_add(d.gamma, &g);
        }
    }
    let total = if j_count >= 2 { total_loss(d, &parts) } else { parts.ce };
    check_finite(&format!("peer {j} loss"), total, state)?;
    let step = PeerStep {
        parts,
        total,
        correct: count_correct(outputs[j].logits.view(), targets),
    };
    Ok((step, to_f32(&g_logits), g_features))
}

fn update_peer(
    peer: &mut PeerStudent,
    opt: &mut Sgd,
    tape: Tape,
    g_logits: Array2<f32>,
    g_features: Option<Array2<f32>>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    peer.params_mut().zero_grad();
    peer.backward(tape, g_logits.view(), g_features.as_ref().map(|g| g.view()))?;
    opt.step(peer.params_mut(), &cfg.optim, lr);
    Ok(())
}

/// One optimisation step on `raw`: distort per peer, mix, forward all peers,
/// compute every loss from that snapshot, update the students, then the
/// teacher. With `alternating` set each peer gets its own fresh snapshot and
/// the teacher trains on the first one.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, raw: &ImageBatch) -> Result<StepMetrics> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::BatchSize { required: 2, actual: n });
    }
    let j_count = state.peers.len();
    let lr = lr_at(&cfg.optim, state.epoch)?;
    let d = &cfg.distill;

    let views: Vec<ImageBatch> = if cfg.base_distortion {
        state.streams.peers.iter_mut().map(|r| base_distort(raw, r)).collect()
    } else {
        vec![raw.clone(); j_count]
    };

    let (inputs, targets, lam) = if cfg.mixing {
        let (_, h, w) = raw.image_dims();
        let plan = MixPlan::sample(n, w, h, &mut state.streams.plan, &mut state.streams.peers)?;
        let mixed = apply_mix_plan(&views, &plan)?;
        let targets = mixed[0].soft_labels.clone();
        (mixed.into_iter().map(|m| m.pixels).collect::<Vec<_>>(), targets, Some(plan.lam()))
    } else {
        let targets = raw.one_hot();
        (views.into_iter().map(|v| v.into_parts().0).collect(), targets, None)
    };

    let mut peer_steps = Vec::with_capacity(j_count);
    let mut teacher_snapshot = None;
    if cfg.alternating && j_count >= 2 {
        for j in 0..j_count {
            let (outputs, mut tapes) = forward_peers(&mut state.peers, &inputs, Some(j))?;
            let teacher_out = teacher_forward(state.teacher.as_ref(), &outputs)?;
            let (step, g_logits, g_features) = peer_objective(j, &outputs, teacher_out.as_ref(), &targets, d, state)?;
            peer_steps.push(step);
            let tape = tapes[j].take().expect("owner keeps its tape");
            update_peer(&mut state.peers[j], &mut state.peer_opts[j], tape, g_logits, g_features, cfg, lr)?;
            if j == 0 {
                teacher_snapshot = teacher_out;
            }
        }
    } else {
        let (outputs, tapes) = forward_peers(&mut state.peers, &inputs, None)?;
        let teacher_out = teacher_forward(state.teacher.as_ref(), &outputs)?;
        let mut grads = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let (step, g_logits, g_features) = peer_objective(j, &outputs, teacher_out.as_ref(), &targets, d, state)?;
            peer_steps.push(step);
            grads.push((g_logits, g_features));
        }
        for (j, (tape, (g_logits, g_features))) in tapes.into_iter().zip(grads).enumerate() {
            let tape = tape.expect("every peer keeps its tape");
            update_peer(&mut state.peers[j], &mut state.peer_opts[j], tape, g_logits, g_features, cfg, lr)?;
        }
        teacher_snapshot = teacher_out;
    }
    let teacher_out = teacher_snapshot;
    let teacher_logits = teacher_out.as_ref().map(|t| to_f64(&t.logits));

    let mut teacher_ce = None;
    if cfg.train_teacher {
        if let (Some(t), Some(opt), Some(out), Some(tl)) =
            (&mut state.teacher, &mut state.teacher_opt, &teacher_out, &teacher_logits)
        {
            let (ce, g) = soft_ce_with_grad(tl.view(), &targets)?;
            if !ce.is_finite() {
                return Err(Error::NonFinite {
                    what: "teacher loss".into(),
                    epoch: state.epoch,
                    step: state.step,
                });
            }
            t.params_mut().zero_grad();
            t.backward(out, to_f32(&g).view())?;
            opt.step(t.params_mut(), &cfg.optim, lr);
            teacher_ce = Some(ce);
        }
    }

    state.step += 1;
    Ok(StepMetrics {
        n,
        lr,
        lam,
        peers: peer_steps,
        teacher_ce,
    })
}

/// Runs one epoch and returns its metric rows (one per peer).
pub fn train_epoch(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &Dataset,
    test: &[ImageBatch],
) -> Result<Vec<MetricRow>> {
    let epoch = state.epoch;
    let lr = lr_at(&cfg.optim, epoch)?;
    let j_count = state.peers.len();
    let mut sums = vec![(LossParts::default(), 0.0f64, 0usize); j_count];
    let mut seen = 0usize;
    for batch in data.train_batches(cfg.batch_size, cfg.seed, epoch)? {
        let m = train_step(state, cfg, &batch)?;
        let w = m.n as f64;
        for (acc, p) in sums.iter_mut().zip(&m.peers) {
            acc.0.ce += w * p.parts.ce;
            acc.0.dml += w * p.parts.dml;
            acc.0.mmd += w * p.parts.mmd;
            acc.0.pt += w * p.parts.pt;
            acc.1 += w * p.total;
            acc.2 += p.correct;
        }
        seen += m.n;
    }
    let denom = seen.max(1) as f64;
    let mut rows = Vec::with_capacity(j_count);
    for (j, (parts, total, correct)) in sums.into_iter().enumerate() {
        rows.push(MetricRow {
            epoch,
            peer: j,
            ce: parts.ce / denom,
            dml: parts.dml / denom,
            mmd: parts.mmd / denom,
            pt: parts.pt / denom,
            total: total / denom,
            train_acc: correct as f64 / denom,
            test_acc: evaluate(&state.peers[j], test)?,
            lr,
        });
    }
    Ok(rows)
}

/// Trains from `resume` (or from scratch) up to `cfg.optim.max_epochs`.
/// `on_epoch` sees the state after each epoch together with that epoch's
/// rows, which are also appended to the state's history.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&TrainState, &[MetricRow]) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if data.num_classes != cfg.num_classes {
        return Err(Error::Configuration(format!(
            "dataset has {} classes, config expects {}",
            data.num_classes, cfg.num_classes
        )));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(cfg)?,
    };
    let test = data.test_batches(cfg.eval_batch_size)?;
    for epoch in state.epoch..cfg.optim.max_epochs {
        state.begin_epoch(cfg, epoch);
        let rows = train_epoch(&mut state, cfg, data, &test)?;
        state.history.extend(rows.iter().cloned());
        state.epoch = epoch + 1;
        on_epoch(&state, &rows)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            num_classes: 4,
            batch_size: 8,
            optim: OptimConfig {
                max_epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn raw_batch(n: usize, seed: u64) -> ImageBatch {
        let mut r = rng::seeded(seed);
        let pixels = Array4::from_shape_fn((n, 3, 32, 32), |_| (r.next_u32() % 1000) as f32 / 500.0 - 1.0);
        ImageBatch::new(pixels, (0..n).map(|i| i % 4).collect(), 4).unwrap()
    }

    #[test]
    fn default_step_reports_finite_nonnegative_losses() {
        let cfg = tiny_cfg();
        let mut state = TrainState::new(&cfg).unwrap();
        let m = train_step(&mut state, &cfg, &raw_batch(8, 1)).unwrap();
        assert_eq!(m.peers.len(), 2);
        for p in &m.peers {
            for v in [p.parts.ce, p.parts.dml, p.parts.mmd, p.parts.pt, p.total] {
                assert!(v.is_finite() && v >= 0.0, "{p:?}");
            }
        }
        assert!(m.teacher_ce.is_some());
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_learning_rate_keeps_trainable_parameters() {
        let mut cfg = tiny_cfg();
        cfg.optim.lr0 = 0.0;
        let mut state = TrainState::new(&cfg).unwrap();
        let trainable = |s: &TrainState| -> Vec<Vec<f32>> {
            s.peers
                .iter()
                .flat_map(|p| p.params().entries().iter().filter(|e| e.trainable).map(|e| e.value.clone()))
                .chain(s.teacher.iter().flat_map(|t| t.params().entries().iter().map(|e| e.value.clone())))
                .collect()
        };
        let before = trainable(&state);
        train_step(&mut state, &cfg, &raw_batch(8, 2)).unwrap();
        assert_eq!(before, trainable(&state));
    }

    #[test]
    fn single_peer_rejects_distillation_terms() {
        let mut cfg = tiny_cfg();
        cfg.distill.num_peers = 1;
        assert!(cfg.validate().is_err());
        cfg.distill.alpha = 0.0;
        cfg.distill.beta = 0.0;
        cfg.distill.gamma = 0.0;
        cfg.train_teacher = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let cfg = tiny_cfg();
        let mut state = TrainState::new(&cfg).unwrap();
        assert!(matches!(
            train_step(&mut state, &cfg, &raw_batch(1, 3)),
            Err(Error::BatchSize { .. })
        ));
    }

    #[test]
    fn checkpoint_restores_state() {
        let cfg = tiny_cfg();
        let mut state = TrainState::new(&cfg).unwrap();
        train_step(&mut state, &cfg, &raw_batch(8, 4)).unwrap();
        state.epoch = 1;
        let ck = state.to_checkpoint(&cfg).unwrap();
        let back = TrainState::from_checkpoint(&cfg, &Checkpoint::from_bytes(&ck.to_bytes().unwrap(), "m".as_ref()).unwrap()).unwrap();
        assert_eq!(back.step, 1);
        assert_eq!(back.epoch, 1);
        for (a, b) in state.peers.iter().zip(&back.peers) {
            assert_eq!(a.checksum(), b.checksum());
        }
        assert_eq!(state.peer_opts, back.peer_opts);
        assert_eq!(state.teacher_opt, back.teacher_opt);
        let other = TrainConfig { seed: 9, ..cfg };
        assert!(TrainState::from_checkpoint(&other, &ck).is_err());
    }
}
