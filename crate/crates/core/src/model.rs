//! Shared transformer encoder with task heads, or a single encoder-decoder
//! for text2text training.
//!
//! Heads mode attaches an LSTM decoder with additive attention for
//! abstractive summarization (A), linear classifiers over the `[CLS]` state
//! for extractive (E) and paraphrase (P) detection, a per-token classifier
//! for concepts (C), and a masked-LM head (L) whose output projection is tied
//! to the input embedding. Text2text mode uses only the encoder and decoder.
//!
//! Every forward pass runs one example at a time inside a per-batch graph,
//! so there is no padding and no attention masking.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::rc::Rc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use multisum_nn::{Grads, Graph, NodeId, ParamId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{TaskExample, TaskId, TaskTarget};
use crate::tokenizer::{TokenId, BOS, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.max_len == 0 || self.vocab_size == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config(
                "encoder max_len, vocab_size and ffn_hidden must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One-layer LSTM decoder with additive attention over encoder states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Heads,
    #[serde(rename = "text2text")]
    Text2Text,
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heads" => Ok(Self::Heads),
            "text2text" => Ok(Self::Text2Text),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub mode: ModelMode,
    /// Heads to build. `A` is implied in both modes.
    pub tasks: Vec<TaskId>,
    pub seed: u64,
}

impl ModelConfig {
    /// Two encoder layers, hidden 64, four attention heads.
    pub fn desk(vocab_size: usize, max_len: usize, mode: ModelMode, tasks: Vec<TaskId>) -> Self {
        Self {
            encoder: EncoderConfig {
                layers: 2,
                hidden: 64,
                heads: 4,
                ffn_hidden: 256,
                max_len,
                vocab_size,
            },
            decoder: DecoderConfig {
                hidden: 64,
                embed: 64,
                attention: 64,
            },
            mode,
            tasks,
            seed: 0,
        }
    }

    pub fn has_task(&self, task: TaskId) -> bool {
        match self.mode {
            ModelMode::Heads => task == TaskId::A || self.tasks.contains(&task),
            ModelMode::Text2Text => task != TaskId::L,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = &self.decoder;
        if d.hidden == 0 || d.embed == 0 || d.attention == 0 {
            return Err(Error::Config("decoder sizes must be >= 1".into()));
        }
        if self.mode == ModelMode::Text2Text && self.tasks.contains(&TaskId::L) {
            return Err(Error::LanguageModelingInText2Text);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Encoder,
    Decoder,
    Heads,
    /// The single group of a text2text model.
    All,
}

/// Partition of all trainable parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroups {
    pub groups: Vec<(GroupKind, Vec<ParamId>)>,
}

impl ParamGroups {
    pub fn get(&self, kind: GroupKind) -> Option<&[ParamId]> {
        self.groups
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, p)| p.as_slice())
    }

    pub fn kinds(&self) -> Vec<GroupKind> {
        self.groups.iter().map(|(k, _)| *k).collect()
    }

    pub fn group_of(&self, id: ParamId) -> Option<GroupKind> {
        self.groups
            .iter()
            .find(|(_, ps)| ps.contains(&id))
            .map(|(k, _)| *k)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderParams {
    tok_emb: ParamId,
    pos_emb: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    layers: Vec<LayerParams>,
}

#[derive(Debug, Clone)]
struct DecoderParams {
    emb: ParamId,
    init_w: ParamId,
    init_b: ParamId,
    att_wk: ParamId,
    att_wq: ParamId,
    att_v: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct MlmParams {
    dense: Linear,
    ln_g: ParamId,
    ln_b: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, Default)]
struct HeadParams {
    extractive: Option<Linear>,
    concept: Option<Linear>,
    paraphrase: Option<Linear>,
    mlm: Option<MlmParams>,
}

/// Per-example model scores for a batch, used to compare outputs without
/// touching the loss. For sequence targets: log-probability of each gold
/// token. For E/P: probability of the positive class. For C: per-token
/// positive probability. For L: log-probability of each original token.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub task: TaskId,
    pub per_example: Vec<Vec<f64>>,
}

/// Result of a forward pass over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub output: TaskOutput,
    /// Mean negative log-likelihood over supervised positions; 0 when the
    /// batch supervises nothing.
    pub loss: f64,
    pub supervised: usize,
}

/// Encoder memory and LSTM state for incremental decoding.
#[derive(Debug, Clone, Default)]
pub struct DecoderState {
    inner: Option<StateInner>,
}

#[derive(Debug, Clone)]
struct StateInner {
    memory: Rc<Tensor>,
    keys: Rc<Tensor>,
    h: Tensor,
    c: Tensor,
}

impl DecoderState {
    pub fn is_initialized(&self) -> bool {
        self.inner.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct MultitaskModel {
    config: ModelConfig,
    params: ParamStore,
    enc: EncoderParams,
    dec: DecoderParams,
    heads: HeadParams,
    groups: ParamGroups,
}

impl MultitaskModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore::new();
        let e = &config.encoder;
        let d = e.hidden;

        let mut encoder_ids = Vec::new();
        let track = |ids: &mut Vec<ParamId>, id: ParamId| {
            ids.push(id);
            id
        };

        let tok_emb = track(&mut encoder_ids, ps.add_xavier("enc.tok_emb", e.vocab_size, d, &mut rng));
        let pos_emb = track(&mut encoder_ids, ps.add_xavier("enc.pos_emb", e.max_len, d, &mut rng));
        let ln_g = track(&mut encoder_ids, ps.add_filled("enc.ln.g", 1, d, 1.0));
        let ln_b = track(&mut encoder_ids, ps.add_zeros("enc.ln.b", 1, d));
        let mut layers = Vec::with_capacity(e.layers);
        for l in 0..e.layers {
            let p = |n: &str| format!("enc.layer{l}.{n}");
            let mut mat = |ps: &mut ParamStore, ids: &mut Vec<ParamId>, n: &str, r: usize, c: usize| {
                let id = ps.add_xavier(p(n), r, c, &mut rng);
                ids.push(id);
                id
            };
            let wq = mat(&mut ps, &mut encoder_ids, "wq", d, d);
            let wk = mat(&mut ps, &mut encoder_ids, "wk", d, d);
            let wv = mat(&mut ps, &mut encoder_ids, "wv", d, d);
            let wo = mat(&mut ps, &mut encoder_ids, "wo", d, d);
            let w1 = mat(&mut ps, &mut encoder_ids, "ffn.w1", d, e.ffn_hidden);
            let w2 = mat(&mut ps, &mut encoder_ids, "ffn.w2", e.ffn_hidden, d);
            let mut zeros = |ps: &mut ParamStore, n: &str, c: usize| {
                let id = ps.add_zeros(p(n), 1, c);
                encoder_ids.push(id);
                id
            };
            let bq = zeros(&mut ps, "bq", d);
            let bk = zeros(&mut ps, "bk", d);
            let bv = zeros(&mut ps, "bv", d);
            let bo = zeros(&mut ps, "bo", d);
            let b1 = zeros(&mut ps, "ffn.b1", e.ffn_hidden);
            let b2 = zeros(&mut ps, "ffn.b2", d);
            let ln1_b = zeros(&mut ps, "ln1.b", d);
            let ln2_b = zeros(&mut ps, "ln2.b", d);
            let ln1_g = ps.add_filled(p("ln1.g"), 1, d, 1.0);
            let ln2_g = ps.add_filled(p("ln2.g"), 1, d, 1.0);
            encoder_ids.extend([ln1_g, ln2_g]);
            layers.push(LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            });
        }
        let enc = EncoderParams {
            tok_emb,
            pos_emb,
            ln_g,
            ln_b,
            layers,
        };

        let dc = &config.decoder;
        let v = e.vocab_size;
        let first_dec = ps.len();
        let dec = DecoderParams {
            emb: ps.add_xavier("dec.emb", v, dc.embed, &mut rng),
            init_w: ps.add_xavier("dec.init.w", d, dc.hidden, &mut rng),
            init_b: ps.add_zeros("dec.init.b", 1, dc.hidden),
            att_wk: ps.add_xavier("dec.att.wk", d, dc.attention, &mut rng),
            att_wq: ps.add_xavier("dec.att.wq", dc.hidden, dc.attention, &mut rng),
            att_v: ps.add_xavier("dec.att.v", dc.attention, 1, &mut rng),
            lstm_w: ps.add_xavier("dec.lstm.w", dc.embed + d + dc.hidden, 4 * dc.hidden, &mut rng),
            lstm_b: {
                // forget-gate bias starts at 1
                let mut b = Tensor::zeros(1, 4 * dc.hidden);
                for x in &mut b.data_mut()[dc.hidden..2 * dc.hidden] {
                    *x = 1.0;
                }
                ps.add("dec.lstm.b", b)
            },
            out_w: ps.add_xavier("dec.out.w", dc.hidden + d, v, &mut rng),
            out_b: ps.add_zeros("dec.out.b", 1, v),
        };
        let decoder_ids: Vec<ParamId> = (first_dec..ps.len()).map(ParamId).collect();

        let first_head = ps.len();
        let mut heads = HeadParams::default();
        if config.mode == ModelMode::Heads {
            let mut linear = |ps: &mut ParamStore, name: &str, i: usize, o: usize| Linear {
                w: ps.add_xavier(format!("head.{name}.w"), i, o, &mut rng),
                b: ps.add_zeros(format!("head.{name}.b"), 1, o),
            };
            for &task in &TaskId::AUXILIARY {
                if !config.tasks.contains(&task) {
                    continue;
                }
                match task {
                    TaskId::E => heads.extractive = Some(linear(&mut ps, "extractive", d, 2)),
                    TaskId::C => heads.concept = Some(linear(&mut ps, "concept", d, 2)),
                    TaskId::P => heads.paraphrase = Some(linear(&mut ps, "paraphrase", d, 2)),
                    TaskId::L => {
                        heads.mlm = Some(MlmParams {
                            dense: linear(&mut ps, "mlm.dense", d, d),
                            ln_g: ps.add_filled("head.mlm.ln.g", 1, d, 1.0),
                            ln_b: ps.add_zeros("head.mlm.ln.b", 1, d),
                            out_b: ps.add_zeros("head.mlm.out.b", 1, v),
                        })
                    }
                    TaskId::A => unreachable!(),
                }
            }
        }
        let head_ids: Vec<ParamId> = (first_head..ps.len()).map(ParamId).collect();

        let groups = match config.mode {
            ModelMode::Heads => ParamGroups {
                groups: vec![
                    (GroupKind::Encoder, encoder_ids),
                    (GroupKind::Decoder, decoder_ids),
                    (GroupKind::Heads, head_ids),
                ],
            },
            ModelMode::Text2Text => ParamGroups {
                groups: vec![(GroupKind::All, ps.ids().collect())],
            },
        };

        Ok(Self {
            config,
            params: ps,
            enc,
            dec,
            heads,
            groups,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_groups(&self) -> &ParamGroups {
        &self.groups
    }

    /// Group stepped alongside the encoder for `task` in heads mode.
    pub fn task_group(&self, task: TaskId) -> GroupKind {
        match (self.config.mode, task) {
            (ModelMode::Text2Text, _) => GroupKind::All,
            (ModelMode::Heads, TaskId::A) => GroupKind::Decoder,
            (ModelMode::Heads, _) => GroupKind::Heads,
        }
    }

    /// Replaces parameters whose names appear in `tensors` (e.g. encoder
    /// weights exported from a pretrained model). Shapes must match.
    pub fn load_named_tensors(&mut self, tensors: &HashMap<String, Tensor>) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in tensors {
            let id = self
                .params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            if self.params.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: {:?} vs {:?}",
                    self.params.get(id).shape(),
                    t.shape()
                )));
            }
            *self.params.get_mut(id) = t.clone();
            loaded += 1;
        }
        Ok(loaded)
    }

    // ---- graph building blocks -------------------------------------------

    fn linear(&self, g: &mut Graph, x: NodeId, l: Linear) -> NodeId {
        let w = g.param(l.w);
        let b = g.param(l.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn encode_graph(&self, g: &mut Graph, ids: &[TokenId]) -> NodeId {
        let e = &self.enc;
        let cfg = &self.config.encoder;
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = g.param(e.tok_emb);
        let pos = g.param(e.pos_emb);
        let te = g.gather_rows(tok, &idx);
        let pe = g.gather_rows(pos, &positions);
        let x = g.add(te, pe);
        let (lg, lb) = (g.param(e.ln_g), g.param(e.ln_b));
        let mut x = g.layer_norm(x, lg, lb);

        let dh = cfg.hidden / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &e.layers {
            let q = self.linear(g, x, Linear { w: l.wq, b: l.bq });
            let k = self.linear(g, x, Linear { w: l.wk, b: l.bk });
            let v = self.linear(g, x, Linear { w: l.wv, b: l.bv });
            let mut outs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let (s, t) = (h * dh, (h + 1) * dh);
                let qh = g.slice_cols(q, s, t);
                let kh = g.slice_cols(k, s, t);
                let vh = g.slice_cols(v, s, t);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let attn = g.softmax_rows(scores);
                outs.push(g.matmul(attn, vh));
            }
            let cat = g.concat_cols(&outs);
            let att = self.linear(g, cat, Linear { w: l.wo, b: l.bo });
            let res = g.add(x, att);
            let (g1, b1) = (g.param(l.ln1_g), g.param(l.ln1_b));
            x = g.layer_norm(res, g1, b1);
            let f = self.linear(g, x, Linear { w: l.w1, b: l.b1 });
            let f = g.gelu(f);
            let f = self.linear(g, f, Linear { w: l.w2, b: l.b2 });
            let res = g.add(x, f);
            let (g2, b2) = (g.param(l.ln2_g), g.param(l.ln2_b));
            x = g.layer_norm(res, g2, b2);
        }
        x
    }

    fn decoder_init(&self, g: &mut Graph, memory: NodeId) -> (NodeId, NodeId, NodeId) {
        let d = &self.dec;
        let wk = g.param(d.att_wk);
        let keys = g.matmul(memory, wk);
        let cls = g.gather_rows(memory, &[0]);
        let h0 = self.linear(g, cls, Linear { w: d.init_w, b: d.init_b });
        let h0 = g.tanh(h0);
        let c0 = g.constant(Tensor::zeros(1, self.config.decoder.hidden));
        (keys, h0, c0)
    }

    /// One decoder step. Returns (logits, h, c).
    fn decoder_step(
        &self,
        g: &mut Graph,
        memory: NodeId,
        keys: NodeId,
        h: NodeId,
        c: NodeId,
        prev: TokenId,
    ) -> (NodeId, NodeId, NodeId) {
        let d = &self.dec;
        let hd = self.config.decoder.hidden;
        let emb = g.param(d.emb);
        let e = g.gather_rows(emb, &[prev as usize]);
        let wq = g.param(d.att_wq);
        let q = g.matmul(h, wq);
        let t = g.add_row(keys, q);
        let t = g.tanh(t);
        let v = g.param(d.att_v);
        let scores = g.matmul(t, v);
        let scores = g.transpose(scores);
        let alpha = g.softmax_rows(scores);
        let ctx = g.matmul(alpha, memory);
        let x = g.concat_cols(&[e, ctx, h]);
        let gates = self.linear(g, x, Linear { w: d.lstm_w, b: d.lstm_b });
        let i = g.slice_cols(gates, 0, hd);
        let f = g.slice_cols(gates, hd, 2 * hd);
        let u = g.slice_cols(gates, 2 * hd, 3 * hd);
        let o = g.slice_cols(gates, 3 * hd, 4 * hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c_new = g.add(fc, iu);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        let feat = g.concat_cols(&[h_new, ctx]);
        let logits = self.linear(g, feat, Linear { w: d.out_w, b: d.out_b });
        (logits, h_new, c_new)
    }

    /// Teacher-forced decoder logits predicting `target[1..]` from
    /// `target[..len-1]`, stacked as rows.
    fn teacher_forced_logits(&self, g: &mut Graph, memory: NodeId, target: &[TokenId]) -> NodeId {
        let (keys, mut h, mut c) = self.decoder_init(g, memory);
        let mut rows = Vec::with_capacity(target.len().saturating_sub(1));
        for &prev in &target[..target.len() - 1] {
            let (logits, h2, c2) = self.decoder_step(g, memory, keys, h, c, prev);
            rows.push(logits);
            h = h2;
            c = c2;
        }
        g.concat_rows(&rows)
    }

    // ---- batches ---------------------------------------------------------

    fn check_batch(&self, task: TaskId, batch: &[TaskExample]) -> Result<()> {
        if self.config.mode == ModelMode::Text2Text && task == TaskId::L {
            return Err(Error::LanguageModelingInText2Text);
        }
        if !self.config.has_task(task) {
            return Err(Error::DisabledTask(task));
        }
        let cfg = &self.config.encoder;
        for ex in batch {
            if ex.task != task {
                return Err(Error::ShapeMismatch(format!(
                    "{}: task {} example in a {task} batch",
                    ex.source_id, ex.task
                )));
            }
            ex.validate()?;
            if ex.input.is_empty() || ex.input.len() > cfg.max_len {
                return Err(Error::ShapeMismatch(format!(
                    "{}: input length {} outside 1..={}",
                    ex.source_id,
                    ex.input.len(),
                    cfg.max_len
                )));
            }
            let oov = |ids: &[TokenId]| ids.iter().any(|&t| t as usize >= cfg.vocab_size);
            let target_oov = match &ex.target {
                TaskTarget::Sequence(s) => oov(&s.ids),
                TaskTarget::Masked { original, .. } => oov(original),
                _ => false,
            };
            if oov(&ex.input.ids) || target_oov {
                return Err(Error::ShapeMismatch(format!(
                    "{}: token id outside vocabulary of {}",
                    ex.source_id, cfg.vocab_size
                )));
            }
            let seq_target = matches!(ex.target, TaskTarget::Sequence(_));
            let wants_seq = self.config.mode == ModelMode::Text2Text || task == TaskId::A;
            if seq_target != wants_seq {
                return Err(Error::ShapeMismatch(format!(
                    "{}: target kind does not fit a {:?} model",
                    ex.source_id, self.config.mode
                )));
            }
        }
        Ok(())
    }

    /// Builds the summed loss over `batch` into `g`. Returns the loss node,
    /// the number of supervised positions and per-example score nodes. The
    /// loss is `None` when nothing is supervised.
    fn batch_graph(
        &self,
        g: &mut Graph,
        task: TaskId,
        batch: &[TaskExample],
    ) -> Result<(Option<NodeId>, usize, Vec<Vec<f64>>)> {
        self.check_batch(task, batch)?;
        let mut losses = Vec::with_capacity(batch.len());
        let mut count = 0usize;
        let mut scores = Vec::with_capacity(batch.len());
        for ex in batch {
            let memory = self.encode_graph(g, &ex.input.ids);
            match &ex.target {
                TaskTarget::Sequence(target) => {
                    let logits = self.teacher_forced_logits(g, memory, &target.ids);
                    let gold: Vec<usize> = target.ids[1..].iter().map(|&t| t as usize).collect();
                    let lsm = g.log_softmax_rows(logits);
                    let lv = g.value(lsm);
                    scores.push(gold.iter().enumerate().map(|(r, &t)| lv.get(r, t)).collect());
                    losses.push(g.cross_entropy_sum(logits, &gold));
                    count += gold.len();
                }
                TaskTarget::Binary(label) => {
                    let head = match task {
                        TaskId::E => self.heads.extractive,
                        _ => self.heads.paraphrase,
                    }
                    .ok_or(Error::DisabledTask(task))?;
                    let cls = g.gather_rows(memory, &[0]);
                    let logits = self.linear(g, cls, head);
                    let probs = g.softmax_rows(logits);
                    scores.push(vec![g.value(probs).get(0, 1)]);
                    losses.push(g.cross_entropy_sum(logits, &[usize::from(*label)]));
                    count += 1;
                }
                TaskTarget::TokenLabels(labels) => {
                    let head = self.heads.concept.ok_or(Error::DisabledTask(task))?;
                    let logits = self.linear(g, memory, head);
                    let probs = g.softmax_rows(logits);
                    let pv = g.value(probs);
                    scores.push((0..labels.len()).map(|r| pv.get(r, 1)).collect());
                    let gold: Vec<usize> = labels.iter().map(|&b| usize::from(b)).collect();
                    losses.push(g.cross_entropy_sum(logits, &gold));
                    count += gold.len();
                }
                TaskTarget::Masked {
                    positions,
                    original,
                } => {
                    let head = self.heads.mlm.as_ref().ok_or(Error::DisabledTask(task))?;
                    if positions.is_empty() {
                        scores.push(Vec::new());
                        continue;
                    }
                    let rows = g.gather_rows(memory, positions);
                    let hdn = self.linear(g, rows, head.dense);
                    let hdn = g.gelu(hdn);
                    let (lg, lb) = (g.param(head.ln_g), g.param(head.ln_b));
                    let hdn = g.layer_norm(hdn, lg, lb);
                    let emb = g.param(self.enc.tok_emb);
                    let logits = g.matmul_t(hdn, emb);
                    let ob = g.param(head.out_b);
                    let logits = g.add_row(logits, ob);
                    let gold: Vec<usize> = original.iter().map(|&t| t as usize).collect();
                    let lsm = g.log_softmax_rows(logits);
                    let lv = g.value(lsm);
                    scores.push(gold.iter().enumerate().map(|(r, &t)| lv.get(r, t)).collect());
                    losses.push(g.cross_entropy_sum(logits, &gold));
                    count += gold.len();
                }
            }
        }
        if count == 0 {
            return Ok((None, 0, scores));
        }
        let all = g.concat_cols(&losses);
        let total = g.sum(all);
        Ok((Some(total), count, scores))
    }

    /// Forward pass without gradients.
    pub fn forward(&self, task: TaskId, batch: &[TaskExample]) -> Result<ForwardResult> {
        let mut g = Graph::new(&self.params);
        let (loss, count, scores) = self.batch_graph(&mut g, task, batch)?;
        let loss = match loss {
            Some(l) => g.value(l).item() / count as f64,
            None => 0.0,
        };
        Ok(ForwardResult {
            output: TaskOutput {
                task,
                per_example: scores,
            },
            loss,
            supervised: count,
        })
    }

    /// Mean loss and its gradients. `None` when the batch supervises no
    /// position (e.g. a language-modeling batch with nothing masked).
    pub fn loss_and_grads(&self, task: TaskId, batch: &[TaskExample]) -> Result<Option<(f64, Grads)>> {
        let mut g = Graph::new(&self.params);
        let (loss, count, _) = self.batch_graph(&mut g, task, batch)?;
        let Some(total) = loss else { return Ok(None) };
        let mean = g.scale(total, 1.0 / count as f64);
        let value = g.value(mean).item();
        Ok(Some((value, g.backward(mean))))
    }

    /// Encoder output for one input sequence.
    pub fn encode(&self, ids: &[TokenId]) -> Result<Tensor> {
        self.check_input(ids)?;
        let mut g = Graph::new(&self.params);
        let out = self.encode_graph(&mut g, ids);
        Ok(g.value(out).clone())
    }

    fn check_input(&self, ids: &[TokenId]) -> Result<()> {
        let cfg = &self.config.encoder;
        if ids.is_empty() || ids.len() > cfg.max_len {
            return Err(Error::ShapeMismatch(format!(
                "input length {} outside 1..={}",
                ids.len(),
                cfg.max_len
            )));
        }
        if ids.iter().any(|&t| t as usize >= cfg.vocab_size) {
            return Err(Error::ShapeMismatch("token id outside vocabulary".into()));
        }
        Ok(())
    }

    /// Encodes `source` and sets up the decoder for the first step.
    pub fn start_decoding(&self, source: &[TokenId]) -> Result<DecoderState> {
        self.check_input(source)?;
        let mut g = Graph::new(&self.params);
        let memory = self.encode_graph(&mut g, source);
        let (keys, h, c) = self.decoder_init(&mut g, memory);
        Ok(DecoderState {
            inner: Some(StateInner {
                memory: Rc::new(g.value(memory).clone()),
                keys: Rc::new(g.value(keys).clone()),
                h: g.value(h).clone(),
                c: g.value(c).clone(),
            }),
        })
    }

    /// Next-token log-probabilities after feeding `prev`.
    pub fn decode_step(&self, state: &DecoderState, prev: TokenId) -> Result<(Vec<f64>, DecoderState)> {
        let st = state.inner.as_ref().ok_or(Error::UninitializedState)?;
        if prev as usize >= self.config.encoder.vocab_size {
            return Err(Error::ShapeMismatch(format!("token {prev} outside vocabulary")));
        }
        let mut g = Graph::new(&self.params);
        let memory = g.constant_rc(st.memory.clone());
        let keys = g.constant_rc(st.keys.clone());
        let h = g.constant(st.h.clone());
        let c = g.constant(st.c.clone());
        let (logits, h2, c2) = self.decoder_step(&mut g, memory, keys, h, c, prev);
        let lsm = g.log_softmax_rows(logits);
        Ok((
            g.value(lsm).data().to_vec(),
            DecoderState {
                inner: Some(StateInner {
                    memory: st.memory.clone(),
                    keys: st.keys.clone(),
                    h: g.value(h2).clone(),
                    c: g.value(c2).clone(),
                }),
            },
        ))
    }

    /// Teacher-forced log-probability rows for `target[1..]`, in one pass.
    pub fn sequence_logprobs(&self, source: &[TokenId], target: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        self.check_input(source)?;
        if target.len() < 2 {
            return Err(Error::ShapeMismatch("target shorter than 2 tokens".into()));
        }
        let mut g = Graph::new(&self.params);
        let memory = self.encode_graph(&mut g, source);
        let logits = self.teacher_forced_logits(&mut g, memory, target);
        let lsm = g.log_softmax_rows(logits);
        let v = g.value(lsm);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }

    pub fn bos(&self) -> TokenId {
        BOS
    }

    pub fn eos(&self) -> TokenId {
        EOS
    }

    // ---- checkpoints -----------------------------------------------------

    pub fn to_checkpoint(&self, vocab: VocabRef) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            vocab,
            params: self
                .params
                .iter()
                .map(|(_, p)| StoredTensor::from_tensor(&p.name, &p.value))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        let mut model = Self::new(ckpt.config.clone())?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                ckpt.params.len()
            )));
        }
        for (id, stored) in model.params.ids().collect::<Vec<_>>().into_iter().zip(&ckpt.params) {
            if model.params.name(id) != stored.name {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` where `{}` was expected",
                    stored.name,
                    model.params.name(id)
                )));
            }
            let t = stored.to_tensor()?;
            if t.shape() != model.params.get(id).shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{}`", stored.name)));
            }
            *model.params.get_mut(id) = t;
        }
        Ok(model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "multisum-checkpoint-v1";

/// Which vocabulary a checkpoint was trained with.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRef {
    pub path: Option<String>,
    pub size: usize,
}

/// Parameter tensor with its data stored as base64 little-endian `f64`s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl StoredTensor {
    fn from_tensor(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        Self {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            data: B64.encode(bytes),
        }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", self.name)))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Checkpoint(format!("`{}`: wrong byte length", self.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor::from_vec(self.rows, self.cols, data))
    }
}

/// Self-describing checkpoint: config, vocabulary reference and every
/// parameter tensor in construction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub vocab: VocabRef,
    pub params: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{TokenSequence, CLS};

    pub(crate) fn tiny_config(mode: ModelMode, tasks: Vec<TaskId>) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                hidden: 8,
                heads: 2,
                ffn_hidden: 16,
                max_len: 16,
                vocab_size: 12,
            },
            decoder: DecoderConfig {
                hidden: 6,
                embed: 5,
                attention: 4,
            },
            mode,
            tasks,
            seed: 3,
        }
    }

    fn summary_example(input: Vec<TokenId>, target: Vec<TokenId>) -> TaskExample {
        TaskExample {
            task: TaskId::A,
            source_id: "d".into(),
            input: TokenSequence::new(input),
            target: TaskTarget::Sequence(TokenSequence::new(target)),
        }
    }

    #[test]
    fn groups_partition_parameters() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, TaskId::AUXILIARY.to_vec())).unwrap();
        let groups = m.param_groups();
        let mut all: Vec<ParamId> = groups.groups.iter().flat_map(|(_, p)| p.clone()).collect();
        all.sort();
        assert_eq!(all, m.params().ids().collect::<Vec<_>>());
        assert_eq!(groups.kinds(), [GroupKind::Encoder, GroupKind::Decoder, GroupKind::Heads]);

        let t = MultitaskModel::new(tiny_config(ModelMode::Text2Text, vec![TaskId::E])).unwrap();
        assert_eq!(t.param_groups().kinds(), [GroupKind::All]);
    }

    #[test]
    fn incremental_decoding_matches_teacher_forcing() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![])).unwrap();
        let src = [CLS, 7, 8, 9, 10];
        let tgt = [BOS, 8, 11, 7, EOS];
        let forced = m.sequence_logprobs(&src, &tgt).unwrap();
        let mut state = m.start_decoding(&src).unwrap();
        for (t, &prev) in tgt[..tgt.len() - 1].iter().enumerate() {
            let (lp, next) = m.decode_step(&state, prev).unwrap();
            for (a, b) in lp.iter().zip(&forced[t]) {
                assert!((a - b).abs() < 1e-12);
            }
            state = next;
        }
    }

    #[test]
    fn uninitialized_state_rejected() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![])).unwrap();
        assert!(matches!(
            m.decode_step(&DecoderState::default(), BOS),
            Err(Error::UninitializedState)
        ));
    }

    #[test]
    fn zero_output_projection_gives_uniform_loss() {
        let mut m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![])).unwrap();
        for name in ["dec.out.w", "dec.out.b"] {
            let id = m.params().find(name).unwrap();
            let (r, c) = m.params().get(id).shape();
            *m.params_mut().get_mut(id) = Tensor::zeros(r, c);
        }
        let ex = summary_example(vec![CLS, 7, 8], vec![BOS, 9, 10, EOS]);
        let out = m.forward(TaskId::A, &[ex]).unwrap();
        assert!((out.loss - 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disabled_head_rejected() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![TaskId::E])).unwrap();
        let ex = TaskExample {
            task: TaskId::P,
            source_id: "p".into(),
            input: TokenSequence::new(vec![CLS, 7]),
            target: TaskTarget::Binary(true),
        };
        assert!(matches!(m.forward(TaskId::P, &[ex]), Err(Error::DisabledTask(TaskId::P))));
    }

    #[test]
    fn nothing_masked_means_no_update() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![TaskId::L])).unwrap();
        let ex = TaskExample {
            task: TaskId::L,
            source_id: String::new(),
            input: TokenSequence::new(vec![7, 8, 9]),
            target: TaskTarget::Masked {
                positions: vec![],
                original: vec![],
            },
        };
        assert!(m.loss_and_grads(TaskId::L, std::slice::from_ref(&ex)).unwrap().is_none());
        assert_eq!(m.forward(TaskId::L, &[ex]).unwrap().loss, 0.0);
    }

    #[test]
    fn oversized_input_rejected() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, vec![])).unwrap();
        let ex = summary_example(vec![7; 17], vec![BOS, EOS]);
        assert!(matches!(m.forward(TaskId::A, &[ex]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = MultitaskModel::new(tiny_config(ModelMode::Heads, TaskId::AUXILIARY.to_vec())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.to_checkpoint(VocabRef { path: None, size: 12 }).save(&path).unwrap();
        let back = MultitaskModel::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }
}
