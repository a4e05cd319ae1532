//! Losses, the Adam optimizer, the learning-rate schedule, and the
//! training loop with best-model tracking.
//!
//! Training is deterministic in its seed: initialization, shuffling and
//! dropout all derive from it, and gradient accumulation follows one
//! canonical order, so equal seeds give bit-identical checkpoints.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PoseAngles, RawLandmarkSet};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_on_tape, HybridConfig, HybridParams};
use crate::model::{gads_on_tape, ForwardCtx, GadsConfig, GadsParams};
use crate::preprocess::{normalize, group, GroupSpec, GroupedLandmarks, DEFAULT_REFERENCE};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vanilla,
    Hybrid,
}

/// Mean over the batch of the per-sample three-angle mean absolute error,
/// in degrees.
pub fn mae_loss(pred: &[PoseAngles], truth: &[PoseAngles]) -> Result<f64> {
    check_batch(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            ((p.yaw - t.yaw).abs() + (p.pitch - t.pitch).abs() + (p.roll - t.roll).abs()) / 3.0
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean squared error over the batch and the three angles.
pub fn mse_loss(pred: &[PoseAngles], truth: &[PoseAngles]) -> Result<f64> {
    check_batch(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let (dy, dp, dr) = (p.yaw - t.yaw, p.pitch - t.pitch, p.roll - t.roll);
            (dy * dy + dp * dp + dr * dr) / 3.0
        })
        .sum();
    Ok(total / pred.len() as f64)
}

fn check_batch(pred: &[PoseAngles], truth: &[PoseAngles]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Precondition("loss over an empty batch".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Precondition(format!(
            "batch lengths differ: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Adam moment estimates keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. The correction is folded into the step
/// size (`lr·sqrt(1-β₂ᵗ)/(1-β₁ᵗ)`) and epsilon guards the uncorrected
/// second moment. Parameters without a gradient entry are left unchanged.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let lr_t = lr * (1.0 - state.beta2.powi(t)).sqrt() / (1.0 - state.beta1.powi(t));
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != p.shape() {
            return Err(Error::dim(format!(
                "gradient for '{name}' has shape {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros_like(p));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros_like(p));
        let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            *pv -= lr_t * *mv / (vv.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: the base rate is multiplied by `gamma` at every milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            milestones: vec![60, 120],
            gamma: 0.01,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffle stream seed; defaults to the training seed.
    pub shuffle_seed: Option<u64>,
    pub loss: LossKind,
    pub schedule: LrSchedule,
    /// Where to persist the best checkpoint, if anywhere.
    pub checkpoint_path: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 256,
            shuffle_seed: None,
            loss: LossKind::Mae,
            schedule: LrSchedule::default(),
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainSetup {
    pub gads: GadsConfig,
    pub hybrid: HybridConfig,
    pub groups: GroupSpec,
    pub train: TrainConfig,
}

/// Parameters of either model kind, with a uniform tensor-map view.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Vanilla(GadsParams),
    Hybrid(HybridParams),
}

impl ModelParams {
    pub fn init(kind: ModelKind, setup: &TrainSetup, seed: u64) -> Result<Self> {
        let groups = setup.groups.group_count();
        Ok(match kind {
            ModelKind::Vanilla => ModelParams::Vanilla(GadsParams::init(&setup.gads, groups, seed)?),
            ModelKind::Hybrid => ModelParams::Hybrid(HybridParams::init(
                &setup.gads,
                &setup.hybrid,
                groups,
                seed,
            )?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Vanilla(_) => ModelKind::Vanilla,
            ModelParams::Hybrid(_) => ModelKind::Hybrid,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match self {
            ModelParams::Vanilla(p) => p.named_tensors(),
            ModelParams::Hybrid(p) => p.named_tensors(),
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            ModelParams::Vanilla(p) => p.named_tensors_mut(),
            ModelParams::Hybrid(p) => p.named_tensors_mut(),
        }
    }

    pub fn count_params(&self) -> usize {
        match self {
            ModelParams::Vanilla(p) => p.count_params(),
            ModelParams::Hybrid(p) => p.count_params(),
        }
    }

    /// Inference forward; hybrid models need the image tensor.
    pub fn forward(&self, gp: &GroupedLandmarks, image: Option<&Tensor>) -> Result<PoseAngles> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out = match self {
            ModelParams::Vanilla(p) => {
                let nodes = p.register(&mut tape);
                gads_on_tape(&mut tape, &nodes, gp, &mut ctx)?
            }
            ModelParams::Hybrid(p) => {
                let img = image.ok_or_else(|| {
                    Error::Input("hybrid forward needs a face image".into())
                })?;
                let nodes = p.register(&mut tape);
                hybrid_on_tape(&mut tape, &nodes, gp, img, &mut ctx)?
            }
        };
        let v = tape.value(out).data();
        Ok(PoseAngles::new(v[0], v[1], v[2]))
    }
}

/// A sample after preprocessing, ready for the model.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub sample_id: String,
    pub gp: GroupedLandmarks,
    pub image: Option<Tensor>,
    pub truth: PoseAngles,
}

/// Normalizes and groups raw samples. With `need_images`, every sample must
/// carry a loaded image; the error lists all offenders.
pub fn prepare_samples(
    raw: &[RawLandmarkSet],
    spec: &GroupSpec,
    need_images: bool,
) -> Result<Vec<TrainSample>> {
    if need_images {
        let missing: Vec<&str> = raw
            .iter()
            .filter(|s| s.image.is_none())
            .map(|s| s.sample_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Input(format!(
                "hybrid model needs images; samples without one: {}",
                missing.join(", ")
            )));
        }
    }
    raw.iter()
        .map(|s| {
            let gp = group(&normalize(s, DEFAULT_REFERENCE)?, spec)?;
            Ok(TrainSample {
                sample_id: s.sample_id.clone(),
                gp,
                image: s.image.as_ref().map(|i| i.to_tensor()),
                truth: s.pose,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochRow>,
    pub optimizer_steps: u64,
}

fn mix_seed(seed: u64, epoch: u64, batch: u64) -> u64 {
    // splitmix64-style diffusion of the (seed, epoch, batch) triple
    let mut z = seed
        .wrapping_add(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(batch.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean validation MAE of the current parameters, degrees.
pub fn validation_mae(params: &ModelParams, samples: &[TrainSample]) -> Result<f64> {
    let preds: Vec<PoseAngles> = samples
        .iter()
        .map(|s| params.forward(&s.gp, s.image.as_ref()))
        .collect::<Result<_>>()?;
    let truths: Vec<PoseAngles> = samples.iter().map(|s| s.truth).collect();
    mae_loss(&preds, &truths)
}

/// Trains a model and keeps the parameters of the epoch with the lowest
/// validation MAE.
pub fn train(
    kind: ModelKind,
    train_raw: &[RawLandmarkSet],
    val_raw: &[RawLandmarkSet],
    setup: &TrainSetup,
    seed: u64,
) -> Result<TrainOutcome> {
    setup.train.validate()?;
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(Error::Precondition(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let need_images = kind == ModelKind::Hybrid;
    let train_set = prepare_samples(train_raw, &setup.groups, need_images)?;
    let val_set = prepare_samples(val_raw, &setup.groups, need_images)?;

    let mut params = ModelParams::init(kind, setup, seed)?;
    let mut adam = AdamState::new();
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(setup.train.shuffle_seed.unwrap_or(seed));

    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(setup.train.epochs);

    for epoch in 0..setup.train.epochs {
        let lr = setup.train.schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(setup.train.batch_size).enumerate() {
            let loss = train_step(
                &mut params,
                &train_set,
                chunk,
                setup.train.loss,
                &mut adam,
                lr,
                mix_seed(seed, epoch as u64, batch_idx as u64),
            )?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_mae = validation_mae(&params, &val_set)?;
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params = params.clone();
        }
        log.push(EpochRow {
            epoch,
            lr,
            train_loss,
            val_mae,
        });
    }

    let outcome = TrainOutcome {
        params: best_params,
        best_val_mae: best_val,
        best_epoch,
        log,
        optimizer_steps: adam.t,
    };
    if let Some(path) = &setup.train.checkpoint_path {
        let ckpt = crate::checkpoint::Checkpoint {
            kind,
            config: setup.into(),
            best_val_mae: outcome.best_val_mae,
            epoch: outcome.best_epoch,
            params: outcome.params.clone(),
        };
        crate::checkpoint::save_checkpoint(&ckpt, path)?;
    }
    Ok(outcome)
}

/// One optimizer step over a batch: shared parameter nodes, one loss node,
/// one backward pass.
fn train_step(
    params: &mut ModelParams,
    samples: &[TrainSample],
    batch: &[usize],
    loss_kind: LossKind,
    adam: &mut AdamState,
    lr: f64,
    dropout_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx {
        training: true,
        rng: ChaCha8Rng::seed_from_u64(dropout_seed),
    };

    enum Nodes {
        Vanilla(crate::model::GadsNodes),
        Hybrid(crate::hybrid::HybridNodes),
    }
    let nodes = match params {
        ModelParams::Vanilla(p) => Nodes::Vanilla(p.register(&mut tape)),
        ModelParams::Hybrid(p) => Nodes::Hybrid(p.register(&mut tape)),
    };

    let mut outputs = Vec::with_capacity(batch.len());
    let mut truth = Vec::with_capacity(batch.len() * 3);
    for &i in batch {
        let s = &samples[i];
        let out = match &nodes {
            Nodes::Vanilla(n) => gads_on_tape(&mut tape, n, &s.gp, &mut ctx)?,
            Nodes::Hybrid(n) => {
                let img = s.image.as_ref().ok_or_else(|| {
                    Error::Input(format!("sample '{}' is missing an image", s.sample_id))
                })?;
                hybrid_on_tape(&mut tape, n, &s.gp, img, &mut ctx)?
            }
        };
        outputs.push(out);
        truth.extend_from_slice(&s.truth.to_array());
    }
    let preds = tape.concat(&outputs, 0)?;
    let truth = tape.leaf(Tensor::from_vec(&[batch.len(), 3], truth)?);
    let diff = tape.sub(preds, truth)?;
    let loss = match loss_kind {
        LossKind::Mae => {
            let a = tape.abs(diff);
            tape.mean_all(a)
        }
        LossKind::Mse => {
            let sq = tape.mul(diff, diff)?;
            tape.mean_all(sq)
        }
    };
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }

    let grads_by_id = tape.backward(loss)?;
    let ids = tape.param_ids().to_vec();
    let mut named = params.named_tensors_mut();
    debug_assert_eq!(ids.len(), named.len());
    let grads: BTreeMap<String, Tensor> = named
        .iter()
        .zip(&ids)
        .map(|((name, _), id)| (name.clone(), grads_by_id[id].clone()))
        .collect();
    adam_step(&mut named, &grads, adam, lr)?;
    Ok(loss_value)
}
