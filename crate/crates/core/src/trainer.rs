//! Multi-stage training loop.
//!
//! Stage 1 fits the first segment alone; every later stage `k` continues
//! from the previous stage's parameters and minimizes the compensation-
//! weighted loss over segments `1..=k`. When a stage ends, the live factor
//! is averaged over the full training set and frozen for the remaining
//! stages. The whole run is a pure function of `(config, dataset)`: batch
//! order is derived by reseeding from `(seed, stage, epoch)`, so a run
//! resumed from a checkpoint replays the uninterrupted run exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{GraphError, Node, ParamStore};
use crate::backbone::{
    forward, init_params, scaled_stage_loss_node, squash_alpha_node, BackboneConfig, BackboneError,
};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dataset::{NormStats, WindowedDataset};
use crate::metrics::{mpjpe_curve, segment_error, MetricsError};
use crate::objective::{ObjectiveError, PcfState, SegmentSchedule};
use crate::optim::{optimizer_step, OptimError, OptimizerSettings, OptimizerState};
use crate::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset mismatch: {0}")]
    DataMismatch(String),
    #[error("{split} split is empty")]
    EmptyDataset { split: &'static str },
    #[error("non-finite loss at stage {stage}, epoch {epoch}")]
    NonFiniteLoss { stage: usize, epoch: usize },
    #[error("diverged at stage {stage}, epoch {epoch}: loss {loss:.3e} exceeds {factor:.1e} x initial {reference:.3e}")]
    Diverged {
        stage: usize,
        epoch: usize,
        loss: f64,
        reference: f64,
        factor: f64,
    },
    #[error("cannot estimate the compensation factor from an empty sample set")]
    NoSamples,
    #[error("metrics log: {0}")]
    MetricsLog(std::io::Error),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Multi-stage training with the learned compensation factor.
    Tcl,
    /// Multi-stage training with every factor forced to zero.
    MultistageNoAlpha,
    /// Multi-stage training with the fixed per-epoch factor ramp.
    HandCraftedAlpha,
    /// Single stage over the full horizon.
    OneStage,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Tcl => "tcl",
            TrainMode::MultistageNoAlpha => "multistage_no_alpha",
            TrainMode::HandCraftedAlpha => "hand_crafted_alpha",
            TrainMode::OneStage => "one_stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochBudget {
    /// `stage_epochs` are cumulative totals, e.g. `[50, 90, 120]`.
    Cumulative,
    /// `stage_epochs` are per-stage counts.
    PerStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Segment lengths in frames, e.g. `[3, 9, 13]`.
    pub segment_lengths: Vec<usize>,
    pub stage_epochs: Vec<usize>,
    pub epoch_budget: EpochBudget,
    pub learning_rate: f64,
    pub optimizer: OptimizerSettings,
    pub batch_size: usize,
    /// Governs initialization and batch shuffling (derived streams).
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub alpha_head_hidden: usize,
    pub detach_alpha_head: bool,
    /// Abort when a batch loss exceeds this multiple of the stage's first
    /// batch loss.
    pub divergence_factor: f64,
    /// Temperature identifying the frame-summed squared error with a
    /// negative log-likelihood; applied to every squared-error term in the
    /// training loss, in every mode, leaving the factor regularizer
    /// unscaled. Under the adaptive optimizer the factor-free modes are
    /// invariant to it; it only sets the live factor's operating range.
    pub loss_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Tcl,
            segment_lengths: vec![3, 9, 13],
            stage_epochs: vec![50, 90, 120],
            epoch_budget: EpochBudget::Cumulative,
            learning_rate: 1e-3,
            optimizer: OptimizerSettings::default(),
            batch_size: 32,
            seed: 1,
            hidden_dims: vec![128, 128],
            alpha_head_hidden: 64,
            detach_alpha_head: false,
            divergence_factor: 1e6,
            loss_scale: 5e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.segment_lengths.is_empty() || self.segment_lengths.contains(&0) {
            return Err(TrainError::Config(
                "segment_lengths must be non-empty positive".into(),
            ));
        }
        if self.stage_epochs.len() != self.segment_lengths.len() {
            return Err(TrainError::Config(format!(
                "{} stage_epochs for {} segments",
                self.stage_epochs.len(),
                self.segment_lengths.len()
            )));
        }
        if self.divergence_factor <= 1.0 {
            return Err(TrainError::Config("divergence_factor must be > 1".into()));
        }
        if self.loss_scale <= 0.0 {
            return Err(TrainError::Config("loss_scale must be > 0".into()));
        }
        Ok(())
    }

    /// Per-stage epoch counts after resolving the budget convention.
    pub fn resolved_budgets(&self) -> Result<Vec<usize>, TrainError> {
        match self.epoch_budget {
            EpochBudget::PerStage => Ok(self.stage_epochs.clone()),
            EpochBudget::Cumulative => {
                let mut out = Vec::with_capacity(self.stage_epochs.len());
                let mut prev = 0usize;
                for &e in &self.stage_epochs {
                    if e < prev {
                        return Err(TrainError::Config(format!(
                            "cumulative stage_epochs must be non-decreasing, got {:?}",
                            self.stage_epochs
                        )));
                    }
                    out.push(e - prev);
                    prev = e;
                }
                Ok(out)
            }
        }
    }
}

/// Fixed factor ramp: 0.1 at the first epoch of a stage, +0.05 per epoch,
/// capped at 0.5. Stage 1 is defined as 1.0 for completeness, but its loss
/// has no factor term, so the value is never consumed.
pub fn hand_crafted_alpha(stage: usize, epoch_in_stage: usize) -> f64 {
    if stage == 1 {
        return 1.0;
    }
    (0.1 + 0.05 * epoch_in_stage as f64).min(0.5)
}

/// Mean squashed factor over all samples, model unchanged.
pub fn estimate_alpha_hat(
    store: &ParamStore<Real>,
    backbone: &BackboneConfig,
    histories_std: &[Array<Real>],
) -> Result<f64, TrainError> {
    if histories_std.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let mut sum = 0.0;
    for h in histories_std {
        let out = forward(store, backbone, h)?;
        sum += squash_alpha_node(&out.alpha_logit).item();
    }
    Ok(sum / histories_std.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub global_epoch: usize,
    pub stage: usize,
    pub epoch_in_stage: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean live factor this epoch; absent in stage 1.
    pub alpha_mean: Option<f64>,
    /// Validation MPJPE per active task, raw units.
    pub task_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: usize,
    /// Frozen factor for the transition into this stage; present for
    /// stages >= 2 in the modes that use a factor.
    pub alpha_hat: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Validation MPJPE per active task at stage end, raw units.
    pub final_task_errors: Vec<f64>,
}

pub struct TrainOutcome {
    pub stage_results: Vec<StageResult>,
    pub frozen_alphas: Vec<f64>,
    pub store: ParamStore<Real>,
    pub opt_state: OptimizerState<Real>,
    pub norm: NormStats,
    pub backbone: BackboneConfig,
    /// Mode-resolved schedule actually trained (`stage_epochs` holds the
    /// resolved per-stage budgets).
    pub schedule: SegmentSchedule,
}

struct SplitCache {
    hist_std: Vec<Array<Real>>,
    fut_std: Vec<Array<Real>>,
    fut_raw: Vec<Array<Real>>,
}

impl SplitCache {
    fn build(ds: &WindowedDataset, norm: &NormStats) -> Self {
        let mut hist_std = Vec::with_capacity(ds.len());
        let mut fut_std = Vec::with_capacity(ds.len());
        let mut fut_raw = Vec::with_capacity(ds.len());
        for s in &ds.samples {
            hist_std.push(norm.standardize(&s.history));
            fut_std.push(norm.standardize(&s.future));
            fut_raw.push(s.future.clone());
        }
        Self {
            hist_std,
            fut_std,
            fut_raw,
        }
    }
}

/// A training run in progress. Owns the model, the optimizer state, and
/// the stage/epoch cursor; see [`train`] for the one-shot wrapper.
pub struct TrainSession {
    pub config: TrainConfig,
    backbone: BackboneConfig,
    schedule: SegmentSchedule,
    budgets: Vec<usize>,
    norm: NormStats,
    train: SplitCache,
    val: SplitCache,
    joints: usize,
    dims: usize,
    store: ParamStore<Real>,
    opt_state: OptimizerState<Real>,
    stage: usize,
    epoch_in_stage: usize,
    frozen_alphas: Vec<f64>,
    stage_initial_loss: Option<f64>,
    current_epochs: Vec<EpochRecord>,
    stage_results: Vec<StageResult>,
    last_alpha_mean: Option<f64>,
    metrics_path: Option<PathBuf>,
}

impl TrainSession {
    pub fn new(
        config: TrainConfig,
        train_ds: &WindowedDataset,
        val_ds: &WindowedDataset,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        check_compatible(train_ds, val_ds)?;
        if train_ds.is_empty() {
            return Err(TrainError::EmptyDataset { split: "train" });
        }
        if val_ds.is_empty() {
            return Err(TrainError::EmptyDataset { split: "val" });
        }
        let (schedule, budgets) = effective_schedule(&config, train_ds.t_h, train_ds.t_p)?;
        let backbone = backbone_for(&config, train_ds);
        let store = init_params(&backbone)?;
        let opt_state = OptimizerState::new(&store);
        let norm =
            NormStats::fit(train_ds).map_err(|_| TrainError::EmptyDataset { split: "train" })?;
        Ok(Self {
            train: SplitCache::build(train_ds, &norm),
            val: SplitCache::build(val_ds, &norm),
            joints: train_ds.joints,
            dims: train_ds.dims,
            config,
            backbone,
            schedule,
            budgets,
            norm,
            store,
            opt_state,
            stage: 1,
            epoch_in_stage: 0,
            frozen_alphas: Vec::new(),
            stage_initial_loss: None,
            current_epochs: Vec::new(),
            stage_results: Vec::new(),
            last_alpha_mean: None,
            metrics_path: None,
        })
    }

    /// Continue a run from a checkpoint. Per-epoch history restarts at the
    /// resume point; the optimization itself replays the uninterrupted run.
    pub fn from_checkpoint(
        config: TrainConfig,
        train_ds: &WindowedDataset,
        val_ds: &WindowedDataset,
        ckpt: &Checkpoint,
    ) -> Result<Self, TrainError> {
        let mut session = Self::new(config, train_ds, val_ds)?;
        ckpt.verify_backbone(&session.backbone)?;
        if ckpt.optimizer != session.config.optimizer {
            return Err(TrainError::Config(
                "checkpoint optimizer settings differ from config".into(),
            ));
        }
        session.store = ckpt.store.clone_detached();
        session.opt_state = ckpt.opt_state.clone();
        session.norm = ckpt.norm.clone();
        session.train = SplitCache::build(train_ds, &session.norm);
        session.val = SplitCache::build(val_ds, &session.norm);
        session.stage = ckpt.stage;
        session.epoch_in_stage = ckpt.epochs_done_in_stage;
        session.frozen_alphas = ckpt.frozen_alphas.clone();
        Ok(session)
    }

    pub fn set_metrics_path(&mut self, path: impl Into<PathBuf>) {
        self.metrics_path = Some(path.into());
    }

    pub fn store(&self) -> &ParamStore<Real> {
        &self.store
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn schedule(&self) -> &SegmentSchedule {
        &self.schedule
    }

    pub fn frozen_alphas(&self) -> &[f64] {
        &self.frozen_alphas
    }

    pub fn pcf_state(&self) -> PcfState {
        PcfState {
            stage: self.stage.min(self.schedule.num_segments()),
            live_alpha: self.last_alpha_mean.unwrap_or(crate::backbone::ALPHA_INIT),
            frozen_alphas: self
                .frozen_alphas
                .iter()
                .copied()
                .take(self.stage.saturating_sub(2))
                .collect(),
        }
    }

    pub fn finished(&self) -> bool {
        self.stage > self.schedule.num_segments()
    }

    /// Run to completion and hand back the outcome.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        self.advance(usize::MAX)?;
        Ok(self.into_outcome())
    }

    /// Tear down a (usually finished) session into its results.
    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            stage_results: self.stage_results,
            frozen_alphas: self.frozen_alphas,
            store: self.store,
            opt_state: self.opt_state,
            norm: self.norm,
            backbone: self.backbone,
            schedule: self.schedule,
        }
    }

    /// Run at most `max_epochs` training epochs (stage freezes in between
    /// do not count). Returns the number of epochs run.
    pub fn advance(&mut self, max_epochs: usize) -> Result<usize, TrainError> {
        let mut done = 0;
        while !self.finished() {
            let budget = self.budgets[self.stage - 1];
            if self.epoch_in_stage >= budget {
                self.finish_stage()?;
                continue;
            }
            if done >= max_epochs {
                break;
            }
            self.train_epoch()?;
            done += 1;
        }
        Ok(done)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        crate::checkpoint::save(
            path,
            &self.backbone,
            &self.norm,
            self.stage,
            self.epoch_in_stage,
            &self.frozen_alphas,
            &self.config.optimizer,
            &self.store,
            &self.opt_state,
            serde_json::to_value(&self.config).ok(),
        )?;
        Ok(())
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn epoch_in_stage(&self) -> usize {
        self.epoch_in_stage
    }

    pub fn stage_results(&self) -> &[StageResult] {
        &self.stage_results
    }

    /// Records of the stage currently in progress.
    pub fn current_epoch_records(&self) -> &[EpochRecord] {
        &self.current_epochs
    }

    fn train_epoch(&mut self) -> Result<(), TrainError> {
        let k = self.stage;
        let epoch = self.epoch_in_stage;
        let n = self.train.hist_std.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = shuffle_rng(self.config.seed, k, epoch);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut alpha_sum = 0.0;
        let mut alpha_count = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            let mut sample_losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (loss, alpha) =
                    self.sample_loss(&self.train.hist_std[i], &self.train.fut_std[i], k, epoch)?;
                if let Some(a) = alpha {
                    alpha_sum += a;
                    alpha_count += 1;
                }
                sample_losses.push(loss);
            }
            let batch_loss = mean_nodes(&sample_losses)?;
            let value = batch_loss.item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { stage: k, epoch });
            }
            let reference = *self
                .stage_initial_loss
                .get_or_insert_with(|| value.abs().max(1e-12));
            if value.abs() > self.config.divergence_factor * reference {
                return Err(TrainError::Diverged {
                    stage: k,
                    epoch,
                    loss: value,
                    reference,
                    factor: self.config.divergence_factor,
                });
            }
            batch_loss.backward()?;
            optimizer_step(
                &self.store,
                &mut self.opt_state,
                &self.config.optimizer,
                self.config.learning_rate,
            )?;
            self.store.zero_grads();
            loss_sum += value * batch.len() as f64;
        }

        let alpha_mean = if k >= 2 {
            Some(match self.config.mode {
                TrainMode::Tcl => alpha_sum / alpha_count.max(1) as f64,
                TrainMode::HandCraftedAlpha => hand_crafted_alpha(k, epoch),
                TrainMode::MultistageNoAlpha | TrainMode::OneStage => 0.0,
            })
        } else {
            None
        };
        self.last_alpha_mean = alpha_mean;

        let (val_loss, task_errors) = self.validate(k, epoch)?;
        self.epoch_in_stage += 1;
        let record = EpochRecord {
            global_epoch: self.budgets[..k - 1].iter().sum::<usize>() + self.epoch_in_stage,
            stage: k,
            epoch_in_stage: self.epoch_in_stage,
            train_loss: loss_sum / n as f64,
            val_loss,
            alpha_mean,
            task_errors,
        };
        self.append_metrics(&record)?;
        self.current_epochs.push(record);
        Ok(())
    }

    /// Loss graph for one sample under the current mode.
    fn sample_loss(
        &self,
        history_std: &Array<Real>,
        future_std: &Array<Real>,
        stage: usize,
        epoch_in_stage: usize,
    ) -> Result<(Node<Real>, Option<f64>), TrainError> {
        let out = forward(&self.store, &self.backbone, history_std)?;
        self.sample_loss_from_output(&out, future_std, stage, epoch_in_stage)
    }

    /// Validation loss plus per-active-task MPJPE (raw units).
    fn validate(&self, stage: usize, epoch_in_stage: usize) -> Result<(f64, Vec<f64>), TrainError> {
        let n = self.val.hist_std.len();
        let mut loss_sum = 0.0;
        let mut preds_raw = Vec::with_capacity(n);
        for i in 0..n {
            let out = forward(&self.store, &self.backbone, &self.val.hist_std[i])?;
            let (loss, _) =
                self.sample_loss_from_output(&out, &self.val.fut_std[i], stage, epoch_in_stage)?;
            loss_sum += loss.item();
            preds_raw.push(self.norm.destandardize(&out.frames.value()));
        }
        let curve = mpjpe_curve(&preds_raw, &self.val.fut_raw, self.joints, self.dims)?;
        let task_errors = (1..=stage.min(self.schedule.num_segments()))
            .map(|task| segment_error(&curve, self.schedule.segment_rows(task)))
            .collect();
        Ok((loss_sum / n as f64, task_errors))
    }

    fn sample_loss_from_output(
        &self,
        out: &crate::backbone::PredictionOutput,
        future_std: &Array<Real>,
        stage: usize,
        epoch_in_stage: usize,
    ) -> Result<(Node<Real>, Option<f64>), TrainError> {
        if stage == 1 {
            let loss = scaled_stage_loss_node(
                &out.frames,
                future_std,
                &self.schedule,
                1,
                None,
                &[],
                self.config.loss_scale,
            )?;
            return Ok((loss, None));
        }
        let (alpha_node, alpha_value) = match self.config.mode {
            TrainMode::Tcl => {
                let node = squash_alpha_node(&out.alpha_logit);
                let value = node.item();
                (node, value)
            }
            TrainMode::HandCraftedAlpha => {
                let value = hand_crafted_alpha(stage, epoch_in_stage);
                (constant_scalar(value), value)
            }
            TrainMode::MultistageNoAlpha => (constant_scalar(0.0), 0.0),
            TrainMode::OneStage => unreachable!(),
        };
        let loss = scaled_stage_loss_node(
            &out.frames,
            future_std,
            &self.schedule,
            stage,
            Some(&alpha_node),
            &self.frozen_alphas,
            self.config.loss_scale,
        )?;
        Ok((loss, Some(alpha_value)))
    }

    fn finish_stage(&mut self) -> Result<(), TrainError> {
        let k = self.stage;
        // Snapshot the stage-end errors before freezing: the validation
        // loss is the stage-k loss, which expects the pre-freeze list.
        let final_task_errors = match self.current_epochs.last() {
            Some(record) => record.task_errors.clone(),
            None => self.validate(k, 0)?.1,
        };
        let alpha_hat = if k >= 2 {
            match self.config.mode {
                TrainMode::Tcl => Some(estimate_alpha_hat(
                    &self.store,
                    &self.backbone,
                    &self.train.hist_std,
                )?),
                TrainMode::HandCraftedAlpha => {
                    let last_epoch = self.budgets[k - 1].saturating_sub(1);
                    Some(hand_crafted_alpha(k, last_epoch))
                }
                TrainMode::MultistageNoAlpha | TrainMode::OneStage => None,
            }
        } else {
            None
        };
        // The internal frozen list always grows so later stage losses stay
        // uniform across modes; factor-free modes contribute zeros.
        if k >= 2 {
            self.frozen_alphas.push(alpha_hat.unwrap_or(0.0));
        }
        self.stage_results.push(StageResult {
            stage: k,
            alpha_hat,
            epochs: std::mem::take(&mut self.current_epochs),
            final_task_errors,
        });
        self.stage += 1;
        self.epoch_in_stage = 0;
        self.stage_initial_loss = None;
        Ok(())
    }

    fn append_metrics(&self, record: &EpochRecord) -> Result<(), TrainError> {
        let Some(path) = &self.metrics_path else {
            return Ok(());
        };
        let k_total = self.schedule.num_segments();
        let exists = path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(TrainError::MetricsLog)?;
        if !exists {
            let mut header = String::from("epoch,stage,train_loss,val_loss,alpha_mean");
            for t in 1..=k_total {
                let _ = write!(header, ",err_z{t}");
            }
            writeln!(file, "{header}").map_err(TrainError::MetricsLog)?;
        }
        let mut line = format!(
            "{},{},{},{}",
            record.global_epoch, record.stage, record.train_loss, record.val_loss
        );
        match record.alpha_mean {
            Some(a) => {
                let _ = write!(line, ",{a}");
            }
            None => line.push(','),
        }
        for t in 0..k_total {
            match record.task_errors.get(t) {
                Some(e) => {
                    let _ = write!(line, ",{e}");
                }
                None => line.push(','),
            }
        }
        writeln!(file, "{line}").map_err(TrainError::MetricsLog)
    }
}

/// Model config implied by a train config and a dataset's shape.
pub fn backbone_for(config: &TrainConfig, ds: &WindowedDataset) -> BackboneConfig {
    BackboneConfig {
        joints: ds.joints,
        dims: ds.dims,
        t_h: ds.t_h,
        t_p: ds.t_p,
        hidden_dims: config.hidden_dims.clone(),
        alpha_head_hidden: config.alpha_head_hidden,
        detach_alpha_head: config.detach_alpha_head,
        init_seed: config.seed,
    }
}

fn constant_scalar(value: f64) -> Node<Real> {
    Node::constant(Array::from_raw(vec![1], vec![value]))
}

fn mean_nodes(nodes: &[Node<Real>]) -> Result<Node<Real>, GraphError> {
    let mut acc = nodes[0].clone();
    for node in &nodes[1..] {
        acc = acc.add(node)?;
    }
    Ok(acc.scale(1.0 / nodes.len() as f64))
}

fn shuffle_rng(seed: u64, stage: usize, epoch: usize) -> ChaCha20Rng {
    let mix = seed
        ^ 0xa076_1d64_78bd_642fu64.wrapping_mul(stage as u64 + 1)
        ^ 0xe703_7ed1_a0b4_28dbu64.wrapping_mul(epoch as u64 + 1);
    ChaCha20Rng::seed_from_u64(mix)
}

fn check_compatible(a: &WindowedDataset, b: &WindowedDataset) -> Result<(), TrainError> {
    if a.t_h != b.t_h || a.t_p != b.t_p || a.joints != b.joints || a.dims != b.dims {
        return Err(TrainError::DataMismatch(format!(
            "train (t_h={}, t_p={}, J={}, D={}) vs val (t_h={}, t_p={}, J={}, D={})",
            a.t_h, a.t_p, a.joints, a.dims, b.t_h, b.t_p, b.joints, b.dims
        )));
    }
    Ok(())
}

/// Mode-resolved schedule: one-stage collapses to a single segment trained
/// for the whole epoch budget.
fn effective_schedule(
    config: &TrainConfig,
    t_h: usize,
    t_p: usize,
) -> Result<(SegmentSchedule, Vec<usize>), TrainError> {
    let sum: usize = config.segment_lengths.iter().sum();
    if sum != t_p {
        return Err(TrainError::Config(format!(
            "segment_lengths sum to {sum}, dataset horizon is {t_p}"
        )));
    }
    let budgets = config.resolved_budgets()?;
    match config.mode {
        TrainMode::OneStage => {
            let total: usize = budgets.iter().sum();
            let schedule = SegmentSchedule::from_segment_lengths(t_h, &[t_p], vec![total])?;
            Ok((schedule, vec![total]))
        }
        _ => {
            let schedule = SegmentSchedule::from_segment_lengths(
                t_h,
                &config.segment_lengths,
                budgets.clone(),
            )?;
            Ok((schedule, budgets))
        }
    }
}

/// Train from scratch to completion.
pub fn train(
    config: TrainConfig,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
) -> Result<TrainOutcome, TrainError> {
    TrainSession::new(config, train_ds, val_ds)?.run()
}
