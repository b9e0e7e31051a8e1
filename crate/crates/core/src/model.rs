//! The label-conditioned attention-LSTM and its variants.
//!
//! A (sentence, label) pair is scored by concatenating the label embedding
//! to every token vector, running a shared forward LSTM, pooling (attention
//! or last state), optionally concatenating an encoding of the label's
//! description, and reading out one probability per taxonomy level.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::tokenize;
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::nn::{dropout, Attention, Dense, Grads, Lstm, NodeId, ParamId, ParamStore, Tape};
use crate::taxonomy::{LabelId, Taxonomy};
use crate::train::ThresholdTable;
use crate::util::{derive_seed_n, seeded, SeededRng};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UPVTAGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    T3,
    T2T3,
    T1T2T3,
}

impl Heads {
    pub fn has_t2(self) -> bool {
        self != Heads::T3
    }

    pub fn has_t1(self) -> bool {
        self == Heads::T1T2T3
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heads::T3 => "t3",
            Heads::T2T3 => "t2t3",
            Heads::T1T2T3 => "t1t2t3",
        }
    }
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Heads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Heads> {
        match s.to_ascii_lowercase().replace(['_', '+', '-'], "").as_str() {
            "t3" => Ok(Heads::T3),
            "t2t3" => Ok(Heads::T2T3),
            "t1t2t3" => Ok(Heads::T1T2T3),
            _ => Err(Error::invalid(format!("unknown head setting `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub use_attention: bool,
    pub use_description: bool,
    pub heads: Heads,
    pub emb_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    /// Rows of the attention's label projection.
    pub att_dim: usize,
    pub max_sample_len: usize,
    pub max_descr_len: usize,
    pub max_label_len: usize,
    pub dropout: f64,
    /// Train a copy of the vector table instead of keeping it fixed.
    pub train_embeddings: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            use_attention: true,
            use_description: true,
            heads: Heads::T1T2T3,
            emb_dim: 300,
            hidden: 128,
            head_hidden: 64,
            att_dim: 128,
            max_sample_len: 25,
            max_descr_len: 15,
            max_label_len: 4,
            dropout: 0.2,
            train_embeddings: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// The plain text variant: no attention, no description, T3 head only.
    pub fn text() -> ModelConfig {
        ModelConfig {
            use_attention: false,
            use_description: false,
            heads: Heads::T3,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("emb_dim", self.emb_dim),
            ("hidden", self.hidden),
            ("head_hidden", self.head_hidden),
            ("att_dim", self.att_dim),
            ("max_sample_len", self.max_sample_len),
            ("max_descr_len", self.max_descr_len),
            ("max_label_len", self.max_label_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the pooled representation fed to the heads.
    pub fn pooled_dim(&self) -> usize {
        if self.use_description {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn variant_name(&self) -> String {
        let mut s = String::from("text");
        if self.use_attention {
            s.push_str("+att");
        }
        if self.use_description {
            s.push_str("+descr");
        }
        format!("{s}/{}", self.heads)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-level probabilities for one (sentence, label) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub t3: f64,
    pub t2: Option<f64>,
    pub t1: Option<f64>,
}

/// Per-level logits recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Logits {
    pub t3: NodeId,
    pub t2: Option<NodeId>,
    pub t1: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
struct HeadLevel {
    hidden: Option<Dense>,
    out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
struct HeadLayers {
    t1: Option<HeadLevel>,
    t2: Option<HeadLevel>,
    t3: HeadLevel,
}

/// Frozen per-label inputs.
#[derive(Clone, Debug)]
struct LabelInputs {
    tokens: Vec<String>,
    embedding: Vec<f64>,
    description: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub dev_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub groups: Vec<ParamGroup>,
    pub total: usize,
}

impl ParamCount {
    pub fn group(&self, name: &str) -> usize {
        self.groups.iter().find(|g| g.name == name).map_or(0, |g| g.count)
    }
}

#[derive(Clone)]
pub struct Model {
    config: ModelConfig,
    tax: Arc<Taxonomy>,
    emb: Arc<EmbeddingTable>,
    labels: Vec<LabelId>,
    label_inputs: HashMap<LabelId, LabelInputs>,
    store: ParamStore,
    embed: Option<ParamId>,
    lstm: Lstm,
    att_text: Option<Attention>,
    att_descr: Option<Attention>,
    heads: HeadLayers,
    pub thresholds: Option<ThresholdTable>,
    pub meta: TrainMeta,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("labels", &self.labels.len())
            .field("params", &self.store.scalar_count())
            .finish()
    }
}

/// Per-tape memo of label-only computations, shared by every instance
/// recorded on the same tape.
#[derive(Default)]
pub struct LabelMemo {
    embedding: HashMap<LabelId, NodeId>,
    description: HashMap<LabelId, NodeId>,
}

impl Model {
    /// Builds a freshly initialized model scoring `labels`.
    pub fn new(config: ModelConfig, tax: Arc<Taxonomy>, emb: Arc<EmbeddingTable>, labels: Vec<LabelId>) -> Result<Model> {
        config.validate()?;
        if emb.dim() != config.emb_dim {
            return Err(Error::Shape(format!(
                "vectors have dimension {}, model expects {}",
                emb.dim(),
                config.emb_dim
            )));
        }
        if labels.is_empty() {
            return Err(Error::NoLabels);
        }
        let mut rng = seeded(config.init_seed);
        let mut store = ParamStore::new();
        let e = config.emb_dim;
        let d = config.hidden;
        let hh = config.head_hidden;

        let embed = if config.train_embeddings && !emb.is_empty() {
            let values = emb.matrix().to_vec();
            Some(store.add("embeddings", emb.len(), e, crate::nn::Init::Values(values), &mut rng))
        } else {
            None
        };
        let lstm = Lstm::new(&mut store, "lstm", 2 * e, d, &mut rng);
        let att_text = config
            .use_attention
            .then(|| Attention::new(&mut store, "att_text", d, e, config.att_dim, &mut rng));
        let att_descr = (config.use_attention && config.use_description)
            .then(|| Attention::new(&mut store, "att_descr", d, e, config.att_dim, &mut rng));

        let p = config.pooled_dim();
        let level = |name: &str, input: usize, store: &mut ParamStore, rng: &mut SeededRng| HeadLevel {
            hidden: Some(Dense::new(store, &format!("head_{name}.hidden"), input, hh, rng)),
            out: Dense::new(store, &format!("head_{name}.out"), hh, 1, rng),
        };
        let heads = match config.heads {
            Heads::T3 => HeadLayers {
                t1: None,
                t2: None,
                t3: HeadLevel {
                    hidden: None,
                    out: Dense::new(&mut store, "head_t3.out", p, 1, &mut rng),
                },
            },
            Heads::T2T3 => {
                let t2 = level("t2", p, &mut store, &mut rng);
                let t3 = level("t3", p + hh, &mut store, &mut rng);
                HeadLayers { t1: None, t2: Some(t2), t3 }
            }
            Heads::T1T2T3 => {
                let t1 = level("t1", p, &mut store, &mut rng);
                let t2 = level("t2", p + hh, &mut store, &mut rng);
                let t3 = level("t3", p + hh, &mut store, &mut rng);
                HeadLayers {
                    t1: Some(t1),
                    t2: Some(t2),
                    t3,
                }
            }
        };

        let mut model = Model {
            config,
            tax,
            emb,
            labels: Vec::new(),
            label_inputs: HashMap::new(),
            store,
            embed,
            lstm,
            att_text,
            att_descr,
            heads,
            thresholds: None,
            meta: TrainMeta::default(),
        };
        model.set_labels(labels)?;
        Ok(model)
    }

    fn set_labels(&mut self, labels: Vec<LabelId>) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut inputs = HashMap::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::DuplicateId(l.to_string()));
            }
            let node = self.tax.node(l)?;
            let mut tokens = self.tax.label_tokens(l)?;
            tokens.truncate(self.config.max_label_len);
            let embedding = crate::embeddings::max_pool(tokens.iter().map(|t| self.emb.lookup(t)), self.emb.dim());
            let mut description = tokenize(&node.description);
            description.truncate(self.config.max_descr_len);
            if description.is_empty() {
                return Err(Error::invalid(format!("label `{l}` has an empty description")));
            }
            inputs.insert(
                l.clone(),
                LabelInputs {
                    tokens,
                    embedding,
                    description,
                },
            );
        }
        self.labels = labels;
        self.label_inputs = inputs;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.tax
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTable> {
        &self.emb
    }

    /// Labels the model was built to score, in a fixed order.
    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn knows(&self, label: &LabelId) -> bool {
        self.label_inputs.contains_key(label)
    }

    fn inputs(&self, label: &LabelId) -> Result<&LabelInputs> {
        self.label_inputs
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    fn token_node(&self, t: &mut Tape, token: &str) -> Result<NodeId> {
        if let Some(p) = self.embed {
            if let Some(r) = self.emb.row_index(token) {
                return t.gather(p, r);
            }
        }
        Ok(t.input_owned(self.emb.lookup(token)))
    }

    fn label_node(&self, t: &mut Tape, label: &LabelId, memo: &mut LabelMemo) -> Result<NodeId> {
        if let Some(&n) = memo.embedding.get(label) {
            return Ok(n);
        }
        let inputs = self.inputs(label)?;
        let n = if self.embed.is_some() {
            let parts = inputs
                .tokens
                .iter()
                .map(|tok| self.token_node(t, tok))
                .collect::<Result<Vec<_>>>()?;
            t.max_pool(&parts)?
        } else {
            t.input(&inputs.embedding)
        };
        memo.embedding.insert(label.clone(), n);
        Ok(n)
    }

    /// Encodes a token sequence through the shared LSTM, pooled by
    /// `attention` or by the last real hidden state.
    fn encode(&self, t: &mut Tape, tokens: &[String], e: NodeId, attention: Option<&Attention>) -> Result<NodeId> {
        let xs = tokens
            .iter()
            .map(|tok| self.token_node(t, tok))
            .collect::<Result<Vec<_>>>()?;
        let mask = vec![true; xs.len()];
        let hs = self.lstm.forward(t, &xs, Some(e), &mask)?;
        match attention {
            Some(att) => Ok(att.forward(t, &hs, e, &mask)?.0),
            None => Ok(*hs.last().expect("non-empty")),
        }
    }

    /// Records the forward computation for one pair and returns the logits.
    /// Dropout is applied only when `rng` is given.
    pub fn record(
        &self,
        t: &mut Tape,
        tokens: &[String],
        label: &LabelId,
        memo: &mut LabelMemo,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Logits> {
        let tokens = &tokens[..tokens.len().min(self.config.max_sample_len)];
        if tokens.is_empty() {
            return Err(Error::invalid("cannot score an empty token sequence"));
        }
        let e = self.label_node(t, label, memo)?;
        let mut h = self.encode(t, tokens, e, self.att_text.as_ref())?;
        if self.config.use_description {
            let hd = match memo.description.get(label) {
                Some(&n) => n,
                None => {
                    let descr = &self.inputs(label)?.description;
                    let n = self.encode(t, descr, e, self.att_descr.as_ref())?;
                    memo.description.insert(label.clone(), n);
                    n
                }
            };
            h = t.concat(&[h, hd]);
        }
        let rate = self.config.dropout;
        let h = dropout(t, h, rate, rng.as_deref_mut())?;

        let level = |t: &mut Tape, lv: &HeadLevel, x: NodeId, rng: Option<&mut SeededRng>| -> Result<(NodeId, NodeId)> {
            let hidden = lv.hidden.as_ref().expect("cascade level has a hidden layer");
            let a = hidden.forward(t, x)?;
            let a = t.tanh(a);
            let a = dropout(t, a, rate, rng)?;
            Ok((a, lv.out.forward(t, a)?))
        };
        let heads = &self.heads;
        let (t1, upper) = match &heads.t1 {
            Some(lv) => {
                let (a, z) = level(t, lv, h, rng.as_deref_mut())?;
                (Some(z), Some(a))
            }
            None => (None, None),
        };
        let (t2, upper) = match &heads.t2 {
            Some(lv) => {
                let x = match upper {
                    Some(a) => t.concat(&[h, a]),
                    None => h,
                };
                let (a, z) = level(t, lv, x, rng.as_deref_mut())?;
                (Some(z), Some(a))
            }
            None => (None, upper),
        };
        let t3 = match upper {
            Some(a) => {
                let x = t.concat(&[h, a]);
                level(t, &heads.t3, x, rng)?.1
            }
            None => heads.t3.out.forward(t, h)?,
        };
        Ok(Logits { t3, t2, t1 })
    }

    /// Scores one pair. In train mode dropout masks come from `rng`.
    pub fn forward(&self, tokens: &[String], label: &LabelId, mode: Mode, rng: Option<&mut SeededRng>) -> Result<Scores> {
        let mut t = Tape::new(&self.store);
        let mut memo = LabelMemo::default();
        let rng = match mode {
            Mode::Train => rng,
            Mode::Infer => None,
        };
        let z = self.record(&mut t, tokens, label, &mut memo, rng)?;
        t.check()?;
        let p = |n: NodeId| crate::nn::sigmoid(t.scalar(n));
        Ok(Scores {
            t3: p(z.t3),
            t2: z.t2.map(p),
            t1: z.t1.map(p),
        })
    }

    /// Inference-mode scores of `tokens` against every trained label, in
    /// [`Model::labels`] order.
    pub fn score_all(&self, tokens: &[String]) -> Result<Vec<Scores>> {
        let mut t = Tape::new(&self.store);
        let mut memo = LabelMemo::default();
        let mut out = Vec::with_capacity(self.labels.len());
        for l in &self.labels {
            let z = self.record(&mut t, tokens, l, &mut memo, None)?;
            let p = |n: NodeId| crate::nn::sigmoid(t.scalar(n));
            out.push(Scores {
                t3: p(z.t3),
                t2: z.t2.map(p),
                t1: z.t1.map(p),
            });
        }
        t.check()?;
        Ok(out)
    }

    /// Records `weight * Σ_levels BCE` for one instance. `targets` is
    /// `[yT3, yT2, yT1]`; levels without a head are skipped.
    #[allow(clippy::too_many_arguments)]
    pub fn record_loss(
        &self,
        t: &mut Tape,
        tokens: &[String],
        label: &LabelId,
        targets: [u8; 3],
        weight: f64,
        memo: &mut LabelMemo,
        rng: Option<&mut SeededRng>,
    ) -> Result<NodeId> {
        let z = self.record(t, tokens, label, memo, rng)?;
        let mut parts = vec![t.bce_logits(z.t3, targets[0] as f64)?];
        if let Some(z2) = z.t2 {
            parts.push(t.bce_logits(z2, targets[1] as f64)?);
        }
        if let Some(z1) = z.t1 {
            parts.push(t.bce_logits(z1, targets[2] as f64)?);
        }
        let sum = t.sum(&parts)?;
        Ok(t.scale(sum, weight))
    }

    /// Mean loss of a batch and its gradient.
    ///
    /// Instances are processed in fixed chunks, one tape each, and chunk
    /// gradients are added in chunk order, so the result does not depend on
    /// how many threads ran the chunks. With `dropout_seed` set, chunk `k`
    /// draws its dropout masks from `derive_seed_n(seed, k)`.
    pub fn batch_gradient<I: LossItem + Sync>(&self, batch: &[I], dropout_seed: Option<u64>) -> Result<(f64, Grads)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let n = batch.len() as f64;
        let chunks: Vec<(usize, &[I])> = batch.chunks(GRAD_CHUNK).enumerate().collect();
        let partial = crate::par::try_map(&chunks, |&(k, items)| {
            let mut t = Tape::new(&self.store);
            let mut memo = LabelMemo::default();
            let mut rng = dropout_seed.map(|s| seeded(derive_seed_n(s, k as u64)));
            let mut losses = Vec::with_capacity(items.len());
            for it in items {
                let (tokens, label, targets, weight) = it.parts();
                losses.push(self.record_loss(&mut t, tokens, label, targets, weight, &mut memo, rng.as_mut())?);
            }
            let total = t.sum(&losses)?;
            let mut g = Grads::zeros_like(&self.store);
            t.backward_into(total, 1.0 / n, &mut g)?;
            Ok((t.scalar(total), g))
        })?;
        let mut iter = partial.into_iter();
        let (mut loss, mut grads) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss / n, grads))
    }

    /// Mean inference-mode loss over `items`.
    pub fn mean_loss<I: LossItem + Sync>(&self, items: &[I]) -> Result<f64> {
        if items.is_empty() {
            return Ok(0.0);
        }
        let chunks: Vec<&[I]> = items.chunks(EVAL_CHUNK).collect();
        let sums = crate::par::try_map(&chunks, |items| {
            let mut t = Tape::new(&self.store);
            let mut memo = LabelMemo::default();
            let mut s = 0.0;
            for it in items.iter() {
                let (tokens, label, targets, weight) = it.parts();
                let l = self.record_loss(&mut t, tokens, label, targets, weight, &mut memo, None)?;
                s += t.scalar(l);
            }
            t.check()?;
            Ok(s)
        })?;
        Ok(sums.iter().sum::<f64>() / items.len() as f64)
    }

    /// Inference-mode scores for many pairs, in input order.
    pub fn score_pairs<I: LossItem + Sync>(&self, items: &[I]) -> Result<Vec<Scores>> {
        let chunks: Vec<&[I]> = items.chunks(EVAL_CHUNK).collect();
        let parts = crate::par::try_map(&chunks, |items| {
            let mut t = Tape::new(&self.store);
            let mut memo = LabelMemo::default();
            let mut out = Vec::with_capacity(items.len());
            for it in items.iter() {
                let (tokens, label, _, _) = it.parts();
                let z = self.record(&mut t, tokens, label, &mut memo, None)?;
                let p = |n: NodeId| crate::nn::sigmoid(t.scalar(n));
                out.push(Scores {
                    t3: p(z.t3),
                    t2: z.t2.map(p),
                    t1: z.t1.map(p),
                });
            }
            t.check()?;
            Ok(out)
        })?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Trainable parameter counts by group. The vector table is counted only
    /// when it is being trained.
    pub fn count_params(&self) -> ParamCount {
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for (_, p) in self.store.iter() {
            let g = p.name.split('.').next().unwrap_or(&p.name).to_string();
            if !groups.contains_key(&g) {
                order.push(g.clone());
            }
            *groups.entry(g).or_insert(0) += p.len();
        }
        let groups: Vec<ParamGroup> = order
            .into_iter()
            .map(|name| ParamGroup {
                count: groups[&name],
                name,
            })
            .collect();
        let total = groups.iter().map(|g| g.count).sum();
        ParamCount { groups, total }
    }

    /// Input width of each head level's first layer, T1 first.
    pub fn head_input_dims(&self) -> Vec<(&'static str, usize)> {
        let first = |lv: &HeadLevel| lv.hidden.as_ref().map_or(lv.out.input, |d| d.input);
        let mut out = Vec::new();
        if let Some(lv) = &self.heads.t1 {
            out.push(("t1", first(lv)));
        }
        if let Some(lv) = &self.heads.t2 {
            out.push(("t2", first(lv)));
        }
        out.push(("t3", first(&self.heads.t3)));
        out
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            labels: self.labels.clone(),
            thresholds: self.thresholds.clone(),
            meta: self.meta.clone(),
            taxonomy: self.tax.to_text(),
            vectors: VectorsInfo {
                digest: self.emb.digest(),
                dim: self.emb.dim(),
                rows: self.emb.len(),
                oov: self.emb.oov_policy(),
            },
            params: self
                .store
                .iter()
                .map(|(_, p)| ParamLayout {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(24 + json.len() + 8 * self.store.scalar_count() + 32);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, p) in self.store.iter() {
            for v in &p.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.save(&mut v)?;
        Ok(v)
    }

    /// Reads a checkpoint. The vector table must be the one the model was
    /// trained with.
    pub fn load<R: Read>(mut r: R, emb: Arc<EmbeddingTable>) -> Result<Model> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (header, blocks) = read_checkpoint(&buf)?;
        if header.vectors.digest != emb.digest() {
            return Err(Error::Checkpoint(format!(
                "vector table differs from the one used in training ({} rows, dim {})",
                header.vectors.rows, header.vectors.dim
            )));
        }
        let tax = Arc::new(Taxonomy::parse(&header.taxonomy)?);
        let mut model = Model::new(header.config, tax, emb, header.labels)?;
        if model.store.len() != header.params.len() {
            return Err(Error::Checkpoint("parameter layout does not match the configuration".into()));
        }
        let mut at = 0;
        for ((id, _), layout) in model.store.iter().map(|(id, p)| (id, p.clone())).collect::<Vec<_>>().into_iter().zip(&header.params) {
            let p = model.store.get_mut(id);
            if p.name != layout.name || p.rows != layout.rows || p.cols != layout.cols {
                return Err(Error::Checkpoint(format!("unexpected parameter `{}`", layout.name)));
            }
            let n = p.len();
            p.values.copy_from_slice(&blocks[at..at + n]);
            at += n;
        }
        model.thresholds = header.thresholds;
        model.meta = header.meta;
        Ok(model)
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_file(path: &std::path::Path, emb: Arc<EmbeddingTable>) -> Result<Model> {
        let f = std::fs::File::open(path)?;
        Model::load(std::io::BufReader::new(f), emb)
    }
}

/// Instances per tape when computing batch gradients.
pub const GRAD_CHUNK: usize = 8;
const EVAL_CHUNK: usize = 64;

/// Anything that can be scored and given a loss: tokens, candidate label,
/// `[yT3, yT2, yT1]` targets and an instance weight.
pub trait LossItem {
    fn parts(&self) -> (&[String], &LabelId, [u8; 3], f64);
}

impl<T: LossItem> LossItem for &T {
    fn parts(&self) -> (&[String], &LabelId, [u8; 3], f64) {
        (**self).parts()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VectorsInfo {
    digest: String,
    dim: usize,
    rows: usize,
    oov: OovPolicy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamLayout {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    labels: Vec<LabelId>,
    thresholds: Option<ThresholdTable>,
    meta: TrainMeta,
    taxonomy: String,
    vectors: VectorsInfo,
    params: Vec<ParamLayout>,
}

/// Summary of a checkpoint's header, readable without the vector table.
#[derive(Clone, Debug, Serialize)]
pub struct CheckpointInfo {
    pub config: ModelConfig,
    pub labels: Vec<LabelId>,
    pub meta: TrainMeta,
    pub has_thresholds: bool,
    pub vectors_digest: String,
}

pub fn inspect_checkpoint(bytes: &[u8]) -> Result<CheckpointInfo> {
    let (h, _) = read_checkpoint(bytes)?;
    Ok(CheckpointInfo {
        config: h.config,
        labels: h.labels,
        meta: h.meta,
        has_thresholds: h.thresholds.is_some(),
        vectors_digest: h.vectors.digest,
    })
}

fn read_checkpoint(buf: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    let truncated = || Error::Checkpoint("file is truncated".into());
    if buf.len() < 8 + 4 + 8 + 32 {
        return Err(truncated());
    }
    if &buf[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("digest mismatch; the file is corrupted".into()));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &body[20..];
    if rest.len() < hlen {
        return Err(truncated());
    }
    let header: CheckpointHeader = serde_json::from_slice(&rest[..hlen])?;
    let data = &rest[hlen..];
    let want: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    if data.len() != want * 8 {
        return Err(truncated());
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Random `tokens` for tests and benchmarks, drawn from the label names and
/// descriptions of `tax`.
pub fn random_tokens<R: Rng + ?Sized>(tax: &Taxonomy, len: usize, rng: &mut R) -> Vec<String> {
    let pool: Vec<String> = tax.nodes().iter().flat_map(|n| tokenize(&n.description)).collect();
    (0..len).map(|_| pool[crate::util::pick(rng, pool.len())].clone()).collect()
}
