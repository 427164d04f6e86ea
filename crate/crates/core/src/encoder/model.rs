use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autodiff::{vecops, Graph, Tensor, TensorError, Var};
use crate::data::tokenizer::{Vocab, PAD};
use crate::task::TaskKind;

use super::lora::{lora_linear_graph, LoraAdapter, LoraPair};
use super::rope::RopeTables;
use super::{EncoderError, ModelConfig};

const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;
const MASKED_LOGIT: f64 = -1e30;

const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

/// Right-padded token ids for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    /// Pads every sequence to the longest one after truncating to `max_len`.
    /// Empty sequences become a single `PAD` position that is masked out.
    pub fn from_sequences(seqs: &[Vec<usize>], max_len: usize) -> Self {
        let len = seqs
            .iter()
            .map(|s| s.len().min(max_len))
            .max()
            .unwrap_or(0)
            .max(1);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let n = s.len().min(max_len);
            ids.extend_from_slice(&s[..n]);
            mask.extend(std::iter::repeat_n(true, n));
            ids.extend(std::iter::repeat_n(PAD, len - n));
            mask.extend(std::iter::repeat_n(false, len - n));
        }
        Self {
            ids,
            mask,
            batch: seqs.len(),
            len,
        }
    }

    /// Builds a batch from explicit ids and mask rows of equal length.
    pub fn from_padded(ids: &[Vec<usize>], mask: &[Vec<bool>]) -> Result<Self, EncoderError> {
        let len = ids.first().map_or(0, Vec::len);
        if ids.len() != mask.len()
            || ids.iter().chain(std::iter::empty()).any(|r| r.len() != len)
            || mask.iter().any(|r| r.len() != len)
            || len == 0
        {
            return Err(TensorError::Shape("ragged or empty token batch".into()).into());
        }
        Ok(Self {
            ids: ids.concat(),
            mask: mask.concat(),
            batch: ids.len(),
            len,
        })
    }

    pub fn row_mask(&self, b: usize) -> &[bool] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }
}

/// Which parameters become grad-enabled leaves when bound to a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    Nothing,
    Base,
    Adapters(Vec<TaskKind>),
}

/// Lazily binds model parameters to graph leaves, once per name.
pub struct Bindings<'m> {
    model: &'m EncoderModel,
    trainable: Trainable,
    vars: BTreeMap<String, Var>,
}

impl<'m> Bindings<'m> {
    pub fn new(model: &'m EncoderModel, trainable: Trainable) -> Self {
        Self {
            model,
            trainable,
            vars: BTreeMap::new(),
        }
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var, EncoderError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let tensor = self
            .model
            .parameter(name)
            .ok_or_else(|| EncoderError::MissingParameter(name.to_string()))?;
        let train = match &self.trainable {
            Trainable::Nothing => false,
            Trainable::Base => !name.starts_with("adapter/"),
            Trainable::Adapters(tasks) => tasks
                .iter()
                .any(|t| name.starts_with(&format!("adapter/{}/", t.as_str()))),
        };
        let v = if train {
            g.param(tensor.clone())
        } else {
            g.constant(tensor.clone())
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Bound grad-enabled parameters, by name.
    pub fn trainable_vars(&self, g: &Graph) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(_, v)| g.requires_grad(**v))
            .map(|(n, v)| (n.clone(), *v))
            .collect()
    }

    pub fn model(&self) -> &'m EncoderModel {
        self.model
    }
}

/// Parameter counts of the base model and of each adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterCounts {
    pub base: usize,
    pub adapters: BTreeMap<TaskKind, usize>,
}

impl ParameterCounts {
    pub fn adapter_total(&self) -> usize {
        self.adapters.values().sum()
    }

    /// Adapter parameters as a percentage of the base model.
    pub fn adapter_share_percent(&self) -> f64 {
        100.0 * self.adapter_total() as f64 / self.base as f64
    }
}

/// Base weights plus a set of per-task LoRA adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: ModelConfig,
    base: BTreeMap<String, Tensor>,
    adapters: BTreeMap<TaskKind, LoraAdapter>,
    /// Highest training stage that has finished on these weights (0 = none).
    pub stage_completed: u8,
}

fn layer_key(layer: usize, proj: &str) -> String {
    format!("layer{layer}/{proj}")
}

fn adapter_name(task: TaskKind, key: &str, factor: &str) -> String {
    format!("adapter/{}/{key}/{factor}", task.as_str())
}

impl EncoderModel {
    pub fn new(config: ModelConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut gauss = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_parts(
                shape.to_vec(),
                (0..n).map(|_| normal.sample(&mut rng)).collect(),
            )
        };
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let mut base = BTreeMap::new();
        base.insert("embed/tokens".to_string(), gauss(&[v, d]));
        for l in 0..config.n_layers {
            for p in PROJECTIONS {
                base.insert(format!("layer{l}/attn/{p}/weight"), gauss(&[d, d]));
                base.insert(format!("layer{l}/attn/{p}/bias"), Tensor::zeros(&[d]));
            }
            for ln in ["ln1", "ln2"] {
                base.insert(format!("layer{l}/{ln}/gain"), Tensor::full(&[d], 1.0));
                base.insert(format!("layer{l}/{ln}/bias"), Tensor::zeros(&[d]));
            }
            base.insert(format!("layer{l}/ffn/w1"), gauss(&[f, d]));
            base.insert(format!("layer{l}/ffn/b1"), Tensor::zeros(&[f]));
            base.insert(format!("layer{l}/ffn/w2"), gauss(&[d, f]));
            base.insert(format!("layer{l}/ffn/b2"), Tensor::zeros(&[d]));
        }
        base.insert("final_ln/gain".to_string(), Tensor::full(&[d], 1.0));
        base.insert("final_ln/bias".to_string(), Tensor::zeros(&[d]));
        base.insert("mlm/bias".to_string(), Tensor::zeros(&[v]));
        Ok(Self {
            config,
            base,
            adapters: BTreeMap::new(),
            stage_completed: 0,
        })
    }

    /// Reassembles a model from named tensors, validating every shape.
    pub fn from_parts(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor>,
        stage_completed: u8,
    ) -> Result<Self, EncoderError> {
        let mut model = Self::new(config)?;
        let mut seen = 0;
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("adapter/") {
                let (task, key, factor) = parse_adapter_name(rest)
                    .ok_or_else(|| EncoderError::MissingParameter(name.clone()))?;
                let entry = model.adapters.entry(task).or_default();
                let pair = entry
                    .matrices
                    .entry(key.to_string())
                    .or_insert_with(|| LoraPair {
                        a: Tensor::zeros(&[1, 1]),
                        b: Tensor::zeros(&[1, 1]),
                    });
                match factor {
                    "A" => pair.a = t,
                    _ => pair.b = t,
                }
            } else {
                let slot = model
                    .base
                    .get_mut(&name)
                    .ok_or_else(|| EncoderError::MissingParameter(name.clone()))?;
                if slot.shape() != t.shape() {
                    return Err(TensorError::Shape(format!(
                        "{name}: expected {:?}, got {:?}",
                        slot.shape(),
                        t.shape()
                    ))
                    .into());
                }
                *slot = t;
                seen += 1;
            }
        }
        if seen != model.base.len() {
            return Err(EncoderError::MissingParameter(format!(
                "{} of {} base tensors present",
                seen,
                model.base.len()
            )));
        }
        let fresh = Self::new(model.config.clone())?;
        for (task, adapter) in &model.adapters {
            let template = fresh.fresh_adapter(*task);
            if template.matrices.len() != adapter.matrices.len() {
                return Err(EncoderError::MissingParameter(format!("adapter/{task}")));
            }
            for (key, pair) in &template.matrices {
                let got = adapter
                    .matrices
                    .get(key)
                    .ok_or_else(|| EncoderError::MissingParameter(adapter_name(*task, key, "A")))?;
                if got.a.shape() != pair.a.shape() || got.b.shape() != pair.b.shape() {
                    return Err(
                        TensorError::Shape(format!("adapter/{task}/{key} factor shapes")).into(),
                    );
                }
            }
        }
        model.stage_completed = stage_completed;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn adapted_matrices(&self) -> Vec<(String, usize, usize)> {
        let (v, d) = (self.config.vocab_size, self.config.d_model);
        let mut out = vec![("embed/tokens".to_string(), d, v)];
        for l in 0..self.config.n_layers {
            for p in PROJECTIONS {
                out.push((layer_key(l, p), d, d));
            }
        }
        out
    }

    fn fresh_adapter(&self, task: TaskKind) -> LoraAdapter {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(task.id() as u64 + 1)),
        );
        let matrices = self
            .adapted_matrices()
            .into_iter()
            .map(|(key, d_out, d_in)| {
                (
                    key,
                    LoraPair::new(d_out, d_in, self.config.lora_rank, &mut rng),
                )
            })
            .collect();
        LoraAdapter { matrices }
    }

    /// Adds a freshly initialised adapter (A Gaussian, B zero) unless one exists.
    pub fn add_adapter(&mut self, task: TaskKind) {
        if !self.adapters.contains_key(&task) {
            let a = self.fresh_adapter(task);
            self.adapters.insert(task, a);
        }
    }

    pub fn adapter(&self, task: TaskKind) -> Option<&LoraAdapter> {
        self.adapters.get(&task)
    }

    pub fn adapter_mut(&mut self, task: TaskKind) -> Option<&mut LoraAdapter> {
        self.adapters.get_mut(&task)
    }

    pub fn adapter_tasks(&self) -> Vec<TaskKind> {
        self.adapters.keys().copied().collect()
    }

    pub fn base_parameters(&self) -> &BTreeMap<String, Tensor> {
        &self.base
    }

    /// Looks up a base tensor or an `adapter/<task>/<key>/{A,B}` factor.
    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        if let Some(rest) = name.strip_prefix("adapter/") {
            let (task, key, factor) = parse_adapter_name(rest)?;
            let pair = self.adapters.get(&task)?.matrices.get(key)?;
            Some(if factor == "A" { &pair.a } else { &pair.b })
        } else {
            self.base.get(name)
        }
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if let Some(rest) = name.strip_prefix("adapter/") {
            let (task, key, factor) = parse_adapter_name(rest)?;
            let pair = self.adapters.get_mut(&task)?.matrices.get_mut(key)?;
            Some(if factor == "A" {
                &mut pair.a
            } else {
                &mut pair.b
            })
        } else {
            self.base.get_mut(name)
        }
    }

    /// Every tensor by its checkpoint name, in sorted order.
    pub fn named_tensors(&self) -> BTreeMap<String, &Tensor> {
        let mut out: BTreeMap<String, &Tensor> =
            self.base.iter().map(|(k, v)| (k.clone(), v)).collect();
        for (task, adapter) in &self.adapters {
            for (key, pair) in &adapter.matrices {
                out.insert(adapter_name(*task, key, "A"), &pair.a);
                out.insert(adapter_name(*task, key, "B"), &pair.b);
            }
        }
        out
    }

    /// SHA-256 over the names and raw bits of all base tensors.
    pub fn base_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.base {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        ParameterCounts {
            base: self.base.values().map(Tensor::numel).sum(),
            adapters: self
                .adapters
                .iter()
                .map(|(t, a)| (*t, a.parameter_count()))
                .collect(),
        }
    }

    fn check_batch(&self, batch: &TokenBatch, task: Option<TaskKind>) -> Result<(), EncoderError> {
        if batch.len > self.config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: batch.len,
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange {
                id: bad,
                vocab: self.config.vocab_size,
            });
        }
        if let Some(t) = task {
            if !self.adapters.contains_key(&t) {
                return Err(EncoderError::MissingAdapter(t));
            }
        }
        Ok(())
    }

    fn linear(
        &self,
        g: &mut Graph,
        bind: &mut Bindings,
        x: Var,
        layer: usize,
        proj: &str,
        task: Option<TaskKind>,
    ) -> Result<Var, EncoderError> {
        let w = bind.get(g, &format!("layer{layer}/attn/{proj}/weight"))?;
        let b = bind.get(g, &format!("layer{layer}/attn/{proj}/bias"))?;
        let adapter = match task {
            Some(t) => {
                let key = layer_key(layer, proj);
                Some((
                    bind.get(g, &adapter_name(t, &key, "A"))?,
                    bind.get(g, &adapter_name(t, &key, "B"))?,
                ))
            }
            None => None,
        };
        let y = lora_linear_graph(g, x, w, adapter, self.config.lora_scale())?;
        Ok(g.add(y, b)?)
    }

    /// Token states `(batch·len) × d_model` after the final layer norm.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &mut Bindings,
        batch: &TokenBatch,
        task: Option<TaskKind>,
        rope_base: f64,
    ) -> Result<Var, EncoderError> {
        self.check_batch(batch, task)?;
        let cfg = &self.config;
        let (d, heads, hd, len) = (cfg.d_model, cfg.n_heads, cfg.head_dim(), batch.len);

        let table = bind.get(g, "embed/tokens")?;
        let mut h = g.gather_rows(table, &batch.ids)?;
        if let Some(t) = task {
            let a = bind.get(g, &adapter_name(t, "embed/tokens", "A"))?;
            let b = bind.get(g, &adapter_name(t, "embed/tokens", "B"))?;
            let at = g.transpose(a)?;
            let low = g.gather_rows(at, &batch.ids)?;
            let bt = g.transpose(b)?;
            let delta = g.matmul(low, bt)?;
            let delta = g.mul_scalar(delta, cfg.lora_scale())?;
            h = g.add(h, delta)?;
        }

        let rope = RopeTables::new(len, d, heads, rope_base);
        let scale = 1.0 / (hd as f64).sqrt();
        for l in 0..cfg.n_layers {
            let gain = bind.get(g, &format!("layer{l}/ln1/gain"))?;
            let bias = bind.get(g, &format!("layer{l}/ln1/bias"))?;
            let x = g.layer_norm(h, gain, bias, LAYER_NORM_EPS)?;
            let q = self.linear(g, bind, x, l, "q", task)?;
            let k = self.linear(g, bind, x, l, "k", task)?;
            let v = self.linear(g, bind, x, l, "v", task)?;
            let q = rope.apply(g, q)?;
            let k = rope.apply(g, k)?;

            let mut seqs = Vec::with_capacity(batch.batch);
            for b in 0..batch.batch {
                let rows = b * len..(b + 1) * len;
                let m = batch.row_mask(b);
                let padded = m.iter().any(|&x| !x);
                let mut head_out = Vec::with_capacity(heads);
                for hh in 0..heads {
                    let cols = hh * hd..(hh + 1) * hd;
                    let qs = g.slice(q, rows.clone(), cols.clone())?;
                    let ks = g.slice(k, rows.clone(), cols.clone())?;
                    let vs = g.slice(v, rows.clone(), cols)?;
                    let kt = g.transpose(ks)?;
                    let scores = g.matmul(qs, kt)?;
                    let mut scores = g.mul_scalar(scores, scale)?;
                    if padded {
                        let key_mask: Vec<bool> = (0..len * len).map(|i| !m[i % len]).collect();
                        scores = g.masked_fill(scores, &key_mask, MASKED_LOGIT)?;
                    }
                    let mut probs = g.softmax(scores)?;
                    if padded {
                        let query_mask: Vec<bool> = (0..len * len).map(|i| !m[i / len]).collect();
                        probs = g.masked_fill(probs, &query_mask, 0.0)?;
                    }
                    head_out.push(g.matmul(probs, vs)?);
                }
                seqs.push(if heads == 1 {
                    head_out[0]
                } else {
                    g.concat(&head_out, 1)?
                });
            }
            let ctx = if seqs.len() == 1 {
                seqs[0]
            } else {
                g.concat(&seqs, 0)?
            };
            let attn = self.linear(g, bind, ctx, l, "o", task)?;
            h = g.add(h, attn)?;

            let gain = bind.get(g, &format!("layer{l}/ln2/gain"))?;
            let bias = bind.get(g, &format!("layer{l}/ln2/bias"))?;
            let x = g.layer_norm(h, gain, bias, LAYER_NORM_EPS)?;
            let w1 = bind.get(g, &format!("layer{l}/ffn/w1"))?;
            let b1 = bind.get(g, &format!("layer{l}/ffn/b1"))?;
            let w2 = bind.get(g, &format!("layer{l}/ffn/w2"))?;
            let b2 = bind.get(g, &format!("layer{l}/ffn/b2"))?;
            let w1t = g.transpose(w1)?;
            let u = g.matmul(x, w1t)?;
            let u = g.add(u, b1)?;
            let u = g.gelu(u)?;
            let w2t = g.transpose(w2)?;
            let y = g.matmul(u, w2t)?;
            let y = g.add(y, b2)?;
            h = g.add(h, y)?;
        }
        let gain = bind.get(g, "final_ln/gain")?;
        let bias = bind.get(g, "final_ln/bias")?;
        Ok(g.layer_norm(h, gain, bias, LAYER_NORM_EPS)?)
    }

    /// Vocabulary logits tied to the token embedding table.
    pub fn mlm_logits(
        &self,
        g: &mut Graph,
        bind: &mut Bindings,
        states: Var,
    ) -> Result<Var, EncoderError> {
        let table = bind.get(g, "embed/tokens")?;
        let bias = bind.get(g, "mlm/bias")?;
        let tt = g.transpose(table)?;
        let logits = g.matmul(states, tt)?;
        Ok(g.add(logits, bias)?)
    }

    /// Forward pass followed by masked mean pooling: `batch × d_model`.
    pub fn pooled(
        &self,
        g: &mut Graph,
        bind: &mut Bindings,
        batch: &TokenBatch,
        task: Option<TaskKind>,
        rope_base: f64,
    ) -> Result<Var, EncoderError> {
        let states = self.forward(g, bind, batch, task, rope_base)?;
        mean_pool_graph(g, states, batch)
    }

    /// Pools a batch whose sequences each carry their own task, in one graph.
    pub fn pooled_routed(
        &self,
        g: &mut Graph,
        bind: &mut Bindings,
        seqs: &[Vec<usize>],
        tasks: &[Option<TaskKind>],
        rope_base: f64,
    ) -> Result<Var, EncoderError> {
        if seqs.len() != tasks.len() || seqs.is_empty() {
            return Err(TensorError::Shape(format!(
                "{} sequences with {} task descriptors",
                seqs.len(),
                tasks.len()
            ))
            .into());
        }
        let mut groups: BTreeMap<Option<TaskKind>, Vec<usize>> = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            groups.entry(*t).or_default().push(i);
        }
        let mut parts = Vec::new();
        let mut order = Vec::new();
        for (task, members) in groups {
            let sub: Vec<Vec<usize>> = members.iter().map(|&i| seqs[i].clone()).collect();
            let tb = TokenBatch::from_sequences(&sub, self.config.max_seq_len);
            parts.push(self.pooled(g, bind, &tb, task, rope_base)?);
            order.extend(members);
        }
        let stacked = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 0)?
        };
        let mut inverse = vec![0; order.len()];
        for (pos, &orig) in order.iter().enumerate() {
            inverse[orig] = pos;
        }
        Ok(g.gather_rows(stacked, &inverse)?)
    }

    /// Token states as a plain `batch × len × d_model` tensor.
    pub fn encode_states(
        &self,
        batch: &TokenBatch,
        task: Option<TaskKind>,
        rope_base: f64,
    ) -> Result<Tensor, EncoderError> {
        let mut g = Graph::new();
        let mut bind = Bindings::new(self, Trainable::Nothing);
        let s = self.forward(&mut g, &mut bind, batch, task, rope_base)?;
        Ok(g.value(s)
            .clone()
            .reshape(vec![batch.batch, batch.len, self.config.d_model])?)
    }

    /// Unit-norm embeddings truncated to `target_dim`.
    pub fn embed(
        &self,
        batch: &TokenBatch,
        task: Option<TaskKind>,
        target_dim: usize,
        rope_base: f64,
    ) -> Result<Vec<Vec<f64>>, EncoderError> {
        if !self.config.mrl_dims.contains(&target_dim) {
            return Err(EncoderError::DimNotAllowed(target_dim));
        }
        let mut g = Graph::new();
        let mut bind = Bindings::new(self, Trainable::Nothing);
        let pooled = self.pooled(&mut g, &mut bind, batch, task, rope_base)?;
        let d = self.config.d_model;
        g.value(pooled)
            .data()
            .chunks(d)
            .enumerate()
            .map(|(row, v)| {
                vecops::normalized(&v[..target_dim])
                    .ok_or(EncoderError::Tensor(TensorError::ZeroNorm { row }))
            })
            .collect()
    }

    /// Tokenizes `texts` (optionally behind the task's instruction prefix) and embeds them.
    pub fn embed_texts(
        &self,
        vocab: &Vocab,
        texts: &[String],
        task: Option<TaskKind>,
        target_dim: usize,
        rope_base: f64,
        instructions: bool,
    ) -> Result<Vec<Vec<f64>>, EncoderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let seqs = tokenize_texts(vocab, texts, task, instructions);
        let batch = TokenBatch::from_sequences(&seqs, self.config.max_seq_len);
        self.embed(&batch, task, target_dim, rope_base)
    }
}

/// Token ids for each text, with the task's instruction prefix when enabled.
pub fn tokenize_texts(
    vocab: &Vocab,
    texts: &[String],
    task: Option<TaskKind>,
    instructions: bool,
) -> Vec<Vec<usize>> {
    let prefix = task
        .filter(|_| instructions)
        .and_then(TaskKind::instruction_prefix)
        .unwrap_or("");
    texts
        .iter()
        .map(|t| {
            if prefix.is_empty() {
                vocab.tokenize(t)
            } else {
                vocab.tokenize(&format!("{prefix}{t}"))
            }
        })
        .collect()
}

fn parse_adapter_name(rest: &str) -> Option<(TaskKind, &str, &str)> {
    let (task, tail) = rest.split_once('/')?;
    let task: TaskKind = task.parse().ok()?;
    let (key, factor) = tail.rsplit_once('/')?;
    matches!(factor, "A" | "B").then_some((task, key, factor))
}

/// Masked mean over the sequence axis: `(batch·len) × d` → `batch × d`.
pub fn mean_pool_graph(
    g: &mut Graph,
    states: Var,
    batch: &TokenBatch,
) -> Result<Var, EncoderError> {
    let mut pool = Tensor::zeros(&[batch.batch, batch.batch * batch.len]);
    for b in 0..batch.batch {
        let m = batch.row_mask(b);
        let count = m.iter().filter(|&&x| x).count();
        if count == 0 {
            return Err(EncoderError::FullyMasked { row: b });
        }
        for (t, &on) in m.iter().enumerate() {
            if on {
                pool.data_mut()[b * batch.batch * batch.len + b * batch.len + t] =
                    1.0 / count as f64;
            }
        }
    }
    let p = g.constant(pool);
    Ok(g.matmul(p, states)?)
}

/// Masked mean pooling of a plain `batch × len × d` tensor.
pub fn mean_pool(states: &Tensor, mask: &[Vec<bool>]) -> Result<Tensor, EncoderError> {
    let [b, len, d] = states.shape() else {
        return Err(
            TensorError::Shape(format!("expected batch×len×d, got {:?}", states.shape())).into(),
        );
    };
    if mask.len() != *b || mask.iter().any(|m| m.len() != *len) {
        return Err(TensorError::Shape("mask does not match states".into()).into());
    }
    let mut out = vec![0.0; b * d];
    for (row, m) in mask.iter().enumerate() {
        let count = m.iter().filter(|&&x| x).count();
        if count == 0 {
            return Err(EncoderError::FullyMasked { row });
        }
        for (t, _) in m.iter().enumerate().filter(|(_, &on)| on) {
            let src = &states.data()[(row * len + t) * d..(row * len + t + 1) * d];
            for (o, s) in out[row * d..(row + 1) * d].iter_mut().zip(src) {
                *o += s / count as f64;
            }
        }
    }
    Ok(Tensor::new(vec![*b, *d], out)?)
}
