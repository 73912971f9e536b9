//! Sequential multitask training with one Adam per parameter group, plus
//! the text2text mixture loop.

use std::collections::BTreeMap;
use std::io::Write;

use log::{debug, info, warn};
use multisum_nn::{Adam, AdamConfig, ParamId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;
use crate::decode::{decode_all, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::{GroupKind, ModelMode, MultitaskModel};
use crate::rouge::{self, RougeScore};
use crate::tasks::{build_abstractive, build_text2text, TaskConfig, TaskExample, TaskId, TaskStreams, Text2TextSource};
use crate::tokenizer::{TextEncoder, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMode {
    /// One optimizer per parameter group.
    Multi,
    /// One optimizer over every parameter, at `encoder_lr`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerGroupConfig {
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub heads_lr: f64,
    /// Rate of the single text2text optimizer.
    pub text2text_lr: f64,
    pub mode: OptimizerMode,
}

impl Default for OptimizerGroupConfig {
    fn default() -> Self {
        Self {
            encoder_lr: 5e-4,
            decoder_lr: 5e-3,
            heads_lr: 5e-5,
            text2text_lr: 1e-3,
            mode: OptimizerMode::Multi,
        }
    }
}

impl OptimizerGroupConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.encoder_lr, self.decoder_lr, self.heads_lr, self.text2text_lr];
        if rates.iter().all(|&r| r > 0.0 && r.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("learning rates must be positive: {self:?}")))
        }
    }

    pub fn uniform(lr: f64, mode: OptimizerMode) -> Self {
        Self {
            encoder_lr: lr,
            decoder_lr: lr,
            heads_lr: lr,
            text2text_lr: lr,
            mode,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMetric {
    /// Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1.
    #[default]
    MeanF1,
    R1,
    R2,
    Rl,
}

impl CheckpointMetric {
    pub fn of(self, s: &RougeScore) -> f64 {
        match self {
            Self::MeanF1 => s.mean_f1(),
            Self::R1 => s.r1.f1,
            Self::R2 => s.r2.f1,
            Self::Rl => s.rl.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Auxiliary tasks; `A` is always trained.
    pub tasks: Vec<TaskId>,
    pub mode: ModelMode,
    pub seed: u64,
    pub task_order: Vec<TaskId>,
    pub optimizers: OptimizerGroupConfig,
    pub grad_clip: Option<f64>,
    /// Leave the encoder group untouched.
    pub freeze_encoder: bool,
    pub decode: DecodeConfig,
    pub checkpoint_metric: CheckpointMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 85,
            batch_size: 8,
            tasks: Vec::new(),
            mode: ModelMode::Heads,
            seed: 0,
            task_order: TaskId::ORDER.to_vec(),
            optimizers: OptimizerGroupConfig::default(),
            grad_clip: Some(1.0),
            freeze_encoder: false,
            decode: DecodeConfig::default(),
            checkpoint_metric: CheckpointMetric::MeanF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.mode == ModelMode::Text2Text && self.tasks.contains(&TaskId::L) {
            return Err(Error::LanguageModelingInText2Text);
        }
        let mut order = self.task_order.clone();
        order.sort();
        order.dedup();
        if order.len() != self.task_order.len() || !TaskId::ORDER.iter().all(|t| order.contains(t)) {
            return Err(Error::Config(format!(
                "task_order must list each of A, E, C, P, L once, got {:?}",
                self.task_order
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.optimizers.validate()?;
        self.decode.validate()
    }

    /// `A` followed by the auxiliary tasks, in training order.
    pub fn active_tasks(&self) -> Vec<TaskId> {
        self.task_order
            .iter()
            .copied()
            .filter(|&t| t == TaskId::A || self.tasks.contains(&t))
            .collect()
    }
}

/// The optimizers of one run, keyed by the group they own.
#[derive(Debug, Clone)]
pub struct Optimizers {
    by_group: BTreeMap<GroupKind, Adam>,
    steps: BTreeMap<GroupKind, usize>,
}

impl Optimizers {
    pub fn new(model: &MultitaskModel, cfg: &OptimizerGroupConfig) -> Result<Self> {
        cfg.validate()?;
        let groups = model.param_groups();
        let mut by_group = BTreeMap::new();
        match (model.config().mode, cfg.mode) {
            (ModelMode::Text2Text, _) => {
                let all = groups.get(GroupKind::All).unwrap_or_default().to_vec();
                by_group.insert(GroupKind::All, Adam::new(AdamConfig::with_lr(cfg.text2text_lr), all));
            }
            (ModelMode::Heads, OptimizerMode::Single) => {
                let all: Vec<ParamId> = model.params().ids().collect();
                by_group.insert(GroupKind::All, Adam::new(AdamConfig::with_lr(cfg.encoder_lr), all));
            }
            (ModelMode::Heads, OptimizerMode::Multi) => {
                for (kind, lr) in [
                    (GroupKind::Encoder, cfg.encoder_lr),
                    (GroupKind::Decoder, cfg.decoder_lr),
                    (GroupKind::Heads, cfg.heads_lr),
                ] {
                    let members = groups.get(kind).unwrap_or_default().to_vec();
                    by_group.insert(kind, Adam::new(AdamConfig::with_lr(lr), members));
                }
            }
        }
        Ok(Self {
            by_group,
            steps: BTreeMap::new(),
        })
    }

    /// Number of steps taken by each optimizer.
    pub fn step_counts(&self) -> &BTreeMap<GroupKind, usize> {
        &self.steps
    }
}

/// What happened in one optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub epoch: usize,
    pub task: TaskId,
    pub batch: usize,
    pub loss: f64,
    /// Parameter groups allowed to change in this update.
    pub groups: Vec<GroupKind>,
}

/// Called after every update, e.g. to snapshot parameters.
pub trait TrainObserver {
    fn after_step(&mut self, event: &StepEvent, model: &MultitaskModel);
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn after_step(&mut self, _: &StepEvent, _: &MultitaskModel) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEpochLog {
    pub epoch: usize,
    pub task: TaskId,
    pub mean_loss: f64,
    pub batches: usize,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: usize,
    pub val: RougeScore,
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub tasks: Vec<TaskEpochLog>,
    pub val: Vec<EpochScore>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,task,mean_loss,batches")?;
        for t in &self.tasks {
            writeln!(w, "{},{},{},{}", t.epoch, t.task, t.mean_loss, t.batches)?;
        }
        Ok(())
    }

    /// `{"best_epoch": .., "val": [..]}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "best_epoch": self.best_epoch,
            "val": self.val,
        })
    }

    /// First loss logged for `task`.
    pub fn first_loss(&self, task: TaskId) -> Option<f64> {
        self.tasks.iter().find(|t| t.task == task && t.updates > 0).map(|t| t.mean_loss)
    }

    pub fn last_loss(&self, task: TaskId) -> Option<f64> {
        self.tasks.iter().rev().find(|t| t.task == task && t.updates > 0).map(|t| t.mean_loss)
    }
}

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((epoch as u64) << 8)
            .wrapping_add(salt),
    )
}

fn shuffled_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Computes gradients for one batch and steps the encoder group plus the
/// task's own group. Returns the loss, or `None` when nothing was
/// supervised.
fn update(
    model: &mut MultitaskModel,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    task: TaskId,
    batch: &[TaskExample],
    epoch: usize,
) -> Result<Option<(f64, Vec<GroupKind>)>> {
    let Some((loss, mut grads)) = model.loss_and_grads(task, batch)? else {
        return Ok(None);
    };
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { task, epoch, loss });
    }
    let mut active = match model.config().mode {
        ModelMode::Text2Text => vec![GroupKind::All],
        ModelMode::Heads => vec![GroupKind::Encoder, model.task_group(task)],
    };
    if cfg.freeze_encoder {
        let groups = model.param_groups();
        let frozen: Vec<ParamId> = match groups.get(GroupKind::Encoder) {
            Some(enc) => enc.to_vec(),
            None => Vec::new(),
        };
        for id in frozen {
            grads.remove(id);
        }
        active.retain(|&g| g != GroupKind::Encoder);
    }
    if let Some(c) = cfg.grad_clip {
        grads.clip_global_norm(c);
    }
    let keys: Vec<GroupKind> = opts.by_group.keys().copied().collect();
    for kind in keys {
        let stepping = kind == GroupKind::All || active.contains(&kind);
        if !stepping {
            continue;
        }
        let adam = opts.by_group.get_mut(&kind).expect("known group");
        adam.step(model.params_mut(), &grads);
        *opts.steps.entry(kind).or_insert(0) += 1;
    }
    Ok(Some((loss, active)))
}

fn run_batches(
    model: &mut MultitaskModel,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    epoch: usize,
    schedule: Vec<(TaskId, Vec<usize>)>,
    streams: &TaskStreams,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<TaskEpochLog>> {
    let mut acc: BTreeMap<TaskId, (f64, usize, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for (bi, (task, idx)) in schedule.into_iter().enumerate() {
        let pool = &streams[&task];
        let batch: Vec<TaskExample> = idx.iter().map(|&i| pool[i].clone()).collect();
        if !acc.contains_key(&task) {
            order.push(task);
        }
        let entry = acc.entry(task).or_insert((0.0, 0, 0));
        entry.1 += 1;
        if let Some((loss, groups)) = update(model, opts, cfg, task, &batch, epoch)? {
            entry.0 += loss;
            entry.2 += 1;
            observer.after_step(
                &StepEvent {
                    epoch,
                    task,
                    batch: bi,
                    loss,
                    groups,
                },
                model,
            );
        }
    }
    Ok(order
        .into_iter()
        .map(|task| {
            let (sum, batches, updates) = acc[&task];
            TaskEpochLog {
                epoch,
                task,
                mean_loss: if updates > 0 { sum / updates as f64 } else { 0.0 },
                batches,
                updates,
            }
        })
        .collect())
}

/// One epoch in heads mode: every task in `cfg.task_order` consumes all of
/// its shuffled batches before the next task starts.
pub fn train_epoch_sequential(
    model: &mut MultitaskModel,
    streams: &TaskStreams,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<TaskEpochLog>> {
    if model.config().mode != ModelMode::Heads {
        return Err(Error::Config("sequential training needs a heads-mode model".into()));
    }
    let mut schedule = Vec::new();
    for task in cfg.active_tasks() {
        let pool = streams.get(&task).map(Vec::as_slice).unwrap_or_default();
        if pool.is_empty() {
            warn!("epoch {epoch}: no {task} examples, skipping task");
            continue;
        }
        let mut rng = epoch_rng(cfg.seed, epoch, task as u64);
        for b in shuffled_batches(pool.len(), cfg.batch_size, &mut rng) {
            schedule.push((task, b));
        }
    }
    run_batches(model, opts, cfg, epoch, schedule, streams, observer)
}

/// Interleaves all batches of every pool in a seeded random order, so each
/// task's share of batches follows its pool size.
pub fn mixture_schedule(
    pool_sizes: &BTreeMap<TaskId, usize>,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<(TaskId, Vec<usize>)> {
    let mut rng = epoch_rng(seed, epoch, 0xA11);
    let mut schedule = Vec::new();
    for (&task, &n) in pool_sizes {
        for b in shuffled_batches(n, batch_size, &mut rng) {
            schedule.push((task, b));
        }
    }
    schedule.shuffle(&mut rng);
    schedule
}

/// One text2text epoch over the task mixture with the single optimizer.
pub fn train_epoch_mixture(
    model: &mut MultitaskModel,
    streams: &TaskStreams,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<TaskEpochLog>> {
    if model.config().mode != ModelMode::Text2Text {
        return Err(Error::Config("mixture training needs a text2text model".into()));
    }
    if streams.values().flatten().any(|ex| ex.task == TaskId::L) || streams.contains_key(&TaskId::L) {
        return Err(Error::LanguageModelingInText2Text);
    }
    let sizes: BTreeMap<TaskId, usize> = streams
        .iter()
        .filter(|(_, pool)| !pool.is_empty())
        .map(|(&t, pool)| (t, pool.len()))
        .collect();
    let schedule = mixture_schedule(&sizes, cfg.batch_size, cfg.seed, epoch);
    run_batches(model, opts, cfg, epoch, schedule, streams, observer)
}

/// Validation documents as encoder inputs plus reference summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationSet {
    pub items: Vec<ValItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValItem {
    pub doc_id: String,
    pub group: String,
    pub source: Vec<TokenId>,
    pub reference: String,
}

impl ValidationSet {
    pub fn build<T: TextEncoder + ?Sized>(
        docs: &[DocumentRecord],
        mode: ModelMode,
        enc: &T,
        cfg: &TaskConfig,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(docs.len());
        for d in docs {
            let ex = match mode {
                ModelMode::Heads => build_abstractive(d, enc, cfg),
                ModelMode::Text2Text => build_text2text(
                    TaskId::A,
                    &Text2TextSource::Document { doc: d, labeling: None },
                    enc,
                    cfg,
                )?,
            };
            items.push(ValItem {
                doc_id: d.doc_id.clone(),
                group: d.group.clone(),
                source: ex.input.ids,
                reference: d.abstractive_ref.clone(),
            });
        }
        Ok(Self { items })
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Decodes every item and returns per-document scores in input order.
    pub fn score<T: TextEncoder + Sync + ?Sized>(
        &self,
        model: &MultitaskModel,
        decode: &DecodeConfig,
        enc: &T,
    ) -> Result<Vec<(ValItem, String, RougeScore)>> {
        let sources: Vec<(String, Vec<TokenId>)> =
            self.items.iter().map(|i| (i.doc_id.clone(), i.source.clone())).collect();
        let decoded = decode_all(model, &sources, decode, enc)?;
        Ok(self
            .items
            .iter()
            .zip(decoded)
            .map(|(item, d)| {
                let s = rouge::score(&d.summary, &item.reference);
                (item.clone(), d.summary, s)
            })
            .collect())
    }
}

/// Best model (by validation metric) and the training log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: MultitaskModel,
    pub log: TrainLog,
    pub step_counts: BTreeMap<GroupKind, usize>,
}

/// Trains for `cfg.epochs`, scoring the validation set after each epoch
/// and keeping the parameters of the best epoch (earliest on ties).
pub fn train<T: TextEncoder + Sync + ?Sized>(
    mut model: MultitaskModel,
    streams: &TaskStreams,
    val: &ValidationSet,
    enc: &T,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if model.config().mode != cfg.mode {
        return Err(Error::Config(format!(
            "model mode {:?} differs from training mode {:?}",
            model.config().mode,
            cfg.mode
        )));
    }
    let mut opts = Optimizers::new(&model, &cfg.optimizers)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, MultitaskModel)> = None;
    for epoch in 1..=cfg.epochs {
        let entries = match cfg.mode {
            ModelMode::Heads => train_epoch_sequential(&mut model, streams, &mut opts, cfg, epoch, observer)?,
            ModelMode::Text2Text => train_epoch_mixture(&mut model, streams, &mut opts, cfg, epoch, observer)?,
        };
        for e in &entries {
            debug!("epoch {epoch} {}: loss {:.4} over {} batches", e.task, e.mean_loss, e.batches);
        }
        log.tasks.extend(entries);
        let scored = val.score(&model, &cfg.decode, enc)?;
        let scores: Vec<RougeScore> = scored.iter().map(|(_, _, s)| *s).collect();
        let mean = RougeScore::mean(&scores).ok_or(Error::Empty("validation set"))?;
        let metric = cfg.checkpoint_metric.of(&mean);
        info!("epoch {epoch}: validation metric {metric:.4}");
        log.val.push(EpochScore {
            epoch,
            val: mean,
            metric,
        });
        if best.as_ref().is_none_or(|(m, _)| metric > *m) {
            best = Some((metric, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let (_, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        log,
        step_counts: opts.steps,
    })
}

/// First candidate reaching the highest score.
pub fn select_best<T: Copy>(candidates: &[T], mut score: impl FnMut(T) -> Result<f64>) -> Result<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for &c in candidates {
        let s = score(c)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.ok_or(Error::Empty("candidates"))
}
