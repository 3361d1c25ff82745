//! The sequence-to-general-tree solver network.
//!
//! A bidirectional GRU encodes the problem text. Decoding starts from the
//! encoder summary and repeatedly realizes one pending tree node: it attends
//! over the encoder states with the parent's token embedding and with the
//! knowledge-graph embedding `z` bound to the node's argument position,
//! scores operators, constants and formulas with a linear head and number
//! slots bilinearly against the state, then derives one child state per
//! argument of the chosen token with a sibling GRU.

pub mod decode;
pub mod net;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grad::{
    Checkpoint, CheckpointError, GradError, ParamId, ParamStore, Rng, Tape, Var,
};
use crate::kg::{GcnParams, KgError, KgFile, KnowledgeGraph};
use crate::optree::{
    FormulaRegistry, FormulaSpec, OpTree, ParseError, RegistryError,
};
use crate::optree::EvalError;
use crate::vocab::{extract_numbers, tokenize, NumberSlots, SourceVocab, TargetVocab, VocabError};

pub use decode::{beam, greedy, score_sequence, DecodeError, Decoded, Expander, TableExpander};
pub use net::{attend, bigru, gru_cell, AttnVars, Dropout, GruVars};
pub use train::{answer_matches, train, EpochRecord, Outcome, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("slot position {position} outside a {len}-token input")]
    SlotPosition { position: usize, len: usize },
    #[error("target is not a complete prefix tree")]
    InvalidTarget,
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

/// Network sizes and decoding limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_slots: usize,
    pub max_nodes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 128,
            hidden_dim: 512,
            dropout: 0.5,
            max_slots: 10,
            max_nodes: 50,
        }
    }
}

/// One problem in index form.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Source vocabulary indices of the masked problem tokens.
    pub source: Vec<usize>,
    /// Token position of each number slot.
    pub slot_positions: Vec<usize>,
    pub numbers: Vec<f64>,
    /// Gold prefix in target vocabulary indices; empty when unknown.
    pub target: Vec<usize>,
    pub answer: f64,
}

#[derive(Debug, Clone, Copy)]
struct GruIds {
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
}

impl GruIds {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruIds {
            w_x: store.matrix(&format!("{name}.w_x"), input, 3 * hidden, rng),
            w_h: store.matrix(&format!("{name}.w_h"), hidden, 3 * hidden, rng),
            b_x: store.bias(&format!("{name}.b_x"), 3 * hidden, rng),
            b_h: store.bias(&format!("{name}.b_h"), 3 * hidden, rng),
        }
    }

    fn vars(&self, tape: &mut Tape<'_>) -> GruVars {
        GruVars {
            w_x: tape.param(self.w_x),
            w_h: tape.param(self.w_h),
            b_x: tape.param(self.b_x),
            b_h: tape.param(self.b_h),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    w_q: ParamId,
    w_h: ParamId,
    v: ParamId,
}

impl AttnIds {
    fn new(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut Rng) -> Self {
        AttnIds {
            w_q: store.matrix(&format!("{name}.w_q"), hidden, hidden, rng),
            w_h: store.matrix(&format!("{name}.w_h"), hidden, hidden, rng),
            v: store.matrix(&format!("{name}.v"), hidden, 1, rng),
        }
    }

    fn vars(&self, tape: &mut Tape<'_>) -> AttnVars {
        AttnVars {
            w_q: tape.param(self.w_q),
            w_h: tape.param(self.w_h),
            v: tape.param(self.v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    embed: ParamId,
    enc_fwd: GruIds,
    enc_bwd: GruIds,
    tgt_embed: ParamId,
    start: ParamId,
    w_slot: ParamId,
    att_c: AttnIds,
    att_z: AttnIds,
    w_y: ParamId,
    b_y: ParamId,
    w_n: ParamId,
    child: GruIds,
    w_s: ParamId,
    b_s: ParamId,
    gcn: GcnParams,
}

/// Per-problem encoder results shared by every decoding step.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Encoder states, one row per token.
    pub h: Var,
    /// Initial decoder state.
    pub summary: Var,
    /// Knowledge-graph node embeddings.
    pub z: Var,
    keys_c: Var,
    keys_z: Var,
    /// `H[pos_i] · W_slot`, one row per slot.
    slot_emb: Option<Var>,
    /// `(slot_emb · W_n)ᵀ`, so that slot logits are `s · slot_score`.
    slot_score: Option<Var>,
    slots: usize,
}

/// A tree node waiting to be realized.
#[derive(Debug, Clone, Copy)]
pub struct Pending {
    pub state: Var,
    /// Embedding of the parent's token, or the start embedding at the root.
    pub e_prev: Var,
    pub z: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub registry: FormulaRegistry,
    pub kg: KnowledgeGraph,
    pub src_vocab: SourceVocab,
    pub tgt_vocab: TargetVocab,
    pub store: ParamStore,
    params: Params,
    bind_rows: Vec<Vec<usize>>,
    null_row: usize,
    arities: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    registry: Vec<FormulaSpec>,
    kg: KgFile,
    source_vocab: Vec<String>,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        registry: FormulaRegistry,
        kg: KnowledgeGraph,
        src_vocab: SourceVocab,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let bind_rows = kg.binding.resolve(&registry)?;
        let tgt_vocab = TargetVocab::new(&registry, config.max_slots);
        let (e, h) = (config.emb_dim, config.hidden_dim);
        let mut rng = Rng::new(seed);
        let mut s = ParamStore::new();
        let params = Params {
            embed: s.embedding("enc.embed", src_vocab.len(), e, &mut rng),
            enc_fwd: GruIds::new(&mut s, "enc.fwd", e, h, &mut rng),
            enc_bwd: GruIds::new(&mut s, "enc.bwd", e, h, &mut rng),
            tgt_embed: s.embedding("dec.embed", tgt_vocab.static_len(), h, &mut rng),
            start: s.embedding("dec.start", 1, h, &mut rng),
            w_slot: s.matrix("dec.w_slot", h, h, &mut rng),
            att_c: AttnIds::new(&mut s, "dec.att_c", h, &mut rng),
            att_z: AttnIds::new(&mut s, "dec.att_z", h, &mut rng),
            w_y: s.matrix("dec.w_y", 4 * h, tgt_vocab.static_len(), &mut rng),
            b_y: s.bias("dec.b_y", tgt_vocab.static_len(), &mut rng),
            w_n: s.matrix("dec.w_n", h, h, &mut rng),
            child: GruIds::new(&mut s, "dec.child", 2 * h, h, &mut rng),
            w_s: s.matrix("dec.w_s", h, h, &mut rng),
            b_s: s.bias("dec.b_s", h, &mut rng),
            gcn: GcnParams::new(&mut s, kg.len(), h, &mut rng),
        };
        let arities = (0..tgt_vocab.len())
            .map(|i| tgt_vocab.kind(i).arity(&registry))
            .collect();
        Ok(Model {
            null_row: kg.graph.null_node(),
            config,
            registry,
            kg,
            src_vocab,
            tgt_vocab,
            store: s,
            params,
            bind_rows,
            arities,
        })
    }

    pub fn arity(&self, token: usize) -> usize {
        self.arities[token]
    }

    /// Graph node whose embedding guides child `child` of `token`.
    pub fn child_node(&self, token: usize, child: usize) -> usize {
        if self.tgt_vocab.formulas().contains(&token) {
            self.bind_rows[token - self.tgt_vocab.formulas().start][child]
        } else {
            self.null_row
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        source: &[usize],
        slot_positions: &[usize],
        drop: &mut Dropout,
    ) -> Result<Encoded, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if let Some(&position) = slot_positions.iter().find(|&&p| p >= source.len()) {
            return Err(ModelError::SlotPosition {
                position,
                len: source.len(),
            });
        }
        let p = &self.params;
        let table = tape.param(p.embed);
        let x = tape.gather_rows(table, source)?;
        let x = drop.apply(tape, x)?;
        let fwd = p.enc_fwd.vars(tape);
        let bwd = p.enc_bwd.vars(tape);
        let (h, summary) = bigru(tape, &fwd, &bwd, x)?;
        let h = drop.apply(tape, h)?;
        let att_c = p.att_c.vars(tape);
        let att_z = p.att_z.vars(tape);
        let keys_c = tape.matmul(h, att_c.w_h)?;
        let keys_z = tape.matmul(h, att_z.w_h)?;
        let (slot_emb, slot_score) = if slot_positions.is_empty() {
            (None, None)
        } else {
            let w_slot = tape.param(p.w_slot);
            let w_n = tape.param(p.w_n);
            let hs = tape.gather_rows(h, slot_positions)?;
            let emb = tape.matmul(hs, w_slot)?;
            let proj = tape.matmul(emb, w_n)?;
            (Some(emb), Some(tape.transpose(proj)?))
        };
        let z = crate::kg::gcn_embed(tape, &p.gcn, self.kg.a_hat(), self.kg.len())?;
        Ok(Encoded {
            h,
            summary,
            z,
            keys_c,
            keys_z,
            slot_emb,
            slot_score,
            slots: slot_positions.len(),
        })
    }

    pub fn root(&self, tape: &mut Tape<'_>, enc: &Encoded) -> Result<Pending, ModelError> {
        let e_prev = tape.param(self.params.start);
        let z = tape.gather_rows(enc.z, &[self.null_row])?;
        Ok(Pending {
            state: enc.summary,
            e_prev,
            z,
        })
    }

    /// Log-probabilities (1 × (static + slot count)) for one pending node,
    /// and the context vector `c`.
    pub fn predict(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        node: &Pending,
    ) -> Result<(Var, Var), ModelError> {
        let p = &self.params;
        let att_c = p.att_c.vars(tape);
        let att_z = p.att_z.vars(tape);
        let c = net::attend_keys(tape, &att_c, node.e_prev, enc.h, enc.keys_c)?;
        let zc = net::attend_keys(tape, &att_z, node.z, enc.h, enc.keys_z)?;
        let u = tape.concat(&[node.state, node.e_prev, c, zc])?;
        let w_y = tape.param(p.w_y);
        let b_y = tape.param(p.b_y);
        let st = tape.matmul(u, w_y)?;
        let mut logits = tape.add_row(st, b_y)?;
        if let Some(score) = enc.slot_score {
            let sl = tape.matmul(node.state, score)?;
            logits = tape.concat(&[logits, sl])?;
        }
        Ok((tape.log_softmax(logits)?, c))
    }

    /// Probabilities over the full target vocabulary; slots beyond the
    /// problem's numbers get exactly zero.
    pub fn distribution(&self, tape: &Tape<'_>, log_probs: Var) -> Vec<f64> {
        let mut out: Vec<f64> = tape.value(log_probs).iter().map(|l| l.exp()).collect();
        out.resize(self.tgt_vocab.len(), 0.0);
        out
    }

    pub fn token_embedding(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        token: usize,
    ) -> Result<Var, ModelError> {
        let static_len = self.tgt_vocab.static_len();
        if token < static_len {
            let table = tape.param(self.params.tgt_embed);
            Ok(tape.gather_rows(table, &[token])?)
        } else {
            let slot = token - static_len;
            let emb = enc
                .slot_emb
                .filter(|_| slot < enc.slots)
                .ok_or(VocabError::SlotOutOfRange {
                    index: slot,
                    available: enc.slots,
                })?;
            Ok(tape.gather_rows(emb, &[slot])?)
        }
    }

    /// `s'_i = GRU([e_y; c], s_{i-1})` from `s_0 = state`, then
    /// `s_i = relu(dropout(s'_i)·W_s + b_s)`; returns `s_1 … s_n`.
    pub fn gen_children(
        &self,
        tape: &mut Tape<'_>,
        state: Var,
        e_y: Var,
        c: Var,
        n: usize,
        drop: &mut Dropout,
    ) -> Result<Vec<Var>, ModelError> {
        let g = self.params.child.vars(tape);
        let w_s = tape.param(self.params.w_s);
        let b_s = tape.param(self.params.b_s);
        let x = tape.concat(&[e_y, c])?;
        let gx = g.project_inputs(tape, x)?;
        let mut prev = state;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let raw = net::gru_step(tape, &g, gx, prev)?;
            let raw = drop.apply(tape, raw)?;
            let proj = tape.matmul(raw, w_s)?;
            let proj = tape.add_row(proj, b_s)?;
            let s = tape.relu(proj)?;
            out.push(s);
            prev = s;
        }
        Ok(out)
    }

    /// Pending entries for the children of `token`, leftmost first.
    pub fn expand(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        node: &Pending,
        c: Var,
        token: usize,
        drop: &mut Dropout,
    ) -> Result<Vec<Pending>, ModelError> {
        let n = self.arity(token);
        if n == 0 {
            return Ok(Vec::new());
        }
        let e_y = self.token_embedding(tape, enc, token)?;
        let states = self.gen_children(tape, node.state, e_y, c, n, drop)?;
        states
            .into_iter()
            .enumerate()
            .map(|(i, state)| {
                let z = tape.gather_rows(enc.z, &[self.child_node(token, i)])?;
                Ok(Pending {
                    state,
                    e_prev: e_y,
                    z,
                })
            })
            .collect()
    }

    /// Teacher-forced negative log-likelihood of `ex.target`.
    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        drop: &mut Dropout,
    ) -> Result<Var, ModelError> {
        if ex.target.is_empty() {
            return Err(ModelError::InvalidTarget);
        }
        let enc = self.encode(tape, &ex.source, &ex.slot_positions, drop)?;
        let mut frontier = vec![self.root(tape, &enc)?];
        let mut terms = Vec::with_capacity(ex.target.len());
        for &tok in &ex.target {
            let node = frontier.pop().ok_or(ModelError::InvalidTarget)?;
            let (lp, c) = self.predict(tape, &enc, &node)?;
            if tok >= lp.cols() {
                return Err(VocabError::SlotOutOfRange {
                    index: tok - self.tgt_vocab.static_len(),
                    available: enc.slots,
                }
                .into());
            }
            terms.push(tape.pick(lp, tok)?);
            let children = self.expand(tape, &enc, &node, c, tok, drop)?;
            frontier.extend(children.into_iter().rev());
        }
        if !frontier.is_empty() {
            return Err(ModelError::InvalidTarget);
        }
        let total = tape.add_all(&terms)?;
        Ok(tape.scale(total, -1.0)?)
    }

    /// Adds `scale ·` the loss gradient of one example to `acc` (one buffer
    /// per parameter, see [`Model::grad_buffer`]) and returns the loss.
    pub fn accumulate_loss(
        &self,
        ex: &Example,
        drop: &mut Dropout,
        acc: &mut [Vec<f64>],
        scale: f64,
    ) -> Result<f64, ModelError> {
        let mut tape = Tape::with_params(&self.store);
        let loss = self.loss(&mut tape, ex, drop)?;
        let grads = tape.backward(loss)?;
        for (id, g) in grads.params() {
            for (a, b) in acc[id.index()].iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        Ok(tape.scalar(loss))
    }

    /// Zeroed gradient buffers shaped like the parameters.
    pub fn grad_buffer(&self) -> Vec<Vec<f64>> {
        self.store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect()
    }

    /// Decoder over one problem in evaluation mode.
    pub fn expander(&self, source: &[usize], slot_positions: &[usize]) -> Result<ModelExpander<'_>, ModelError> {
        let mut tape = Tape::with_params(&self.store);
        let mut drop = Dropout::off();
        let enc = self.encode(&mut tape, source, slot_positions, &mut drop)?;
        Ok(ModelExpander {
            model: self,
            tape,
            enc,
            drop,
        })
    }

    /// Greedy decoding for `beam == 1`, beam search otherwise.
    pub fn decode(
        &self,
        source: &[usize],
        slot_positions: &[usize],
        beam_width: usize,
    ) -> Result<Decoded, ModelError> {
        let mut ex = self.expander(source, slot_positions)?;
        let out = if beam_width <= 1 {
            greedy(&mut ex, self.config.max_nodes)?
        } else {
            beam(&mut ex, beam_width, self.config.max_nodes)?
        };
        Ok(out)
    }

    pub fn tree(&self, tokens: &[usize]) -> Result<OpTree, ModelError> {
        Ok(OpTree::from_prefix_kinds(
            &self.tgt_vocab.kinds_of(tokens),
            &self.registry,
        )?)
    }

    /// Tokenizes raw problem text, decodes a tree and executes it.
    pub fn solve(&self, text: &str, beam_width: usize) -> Result<Solution, ModelError> {
        let (tokens, slots) = extract_numbers(&tokenize(text), self.config.max_slots)?;
        let source = self.src_vocab.encode(&tokens);
        let decoded = self.decode(&source, &slots.positions(), beam_width)?;
        let tree = self.tree(&decoded.tokens)?;
        let value = tree.evaluate(&self.registry, &slots.values());
        Ok(Solution {
            tokens,
            slots,
            tree,
            log_prob: decoded.log_prob,
            value,
        })
    }

    pub fn checkpoint(&self, seed: u64, extra: serde_json::Value) -> Checkpoint {
        let meta = ModelMeta {
            config: self.config.clone(),
            registry: self.registry.to_specs(),
            kg: self.kg.to_file(&self.registry),
            source_vocab: self.src_vocab.tokens().to_vec(),
        };
        let meta = serde_json::json!({
            "model": serde_json::to_value(meta).expect("plain data"),
            "extra": extra,
        });
        Checkpoint::from_store(&self.store, seed, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64, extra: serde_json::Value) -> Result<(), ModelError> {
        Ok(self.checkpoint(seed, extra).save(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let meta: ModelMeta = serde_json::from_value(ck.header.meta["model"].clone())
            .map_err(|e| ModelError::Meta(e.to_string()))?;
        let registry = FormulaRegistry::from_specs(&meta.registry)?;
        let kg = KnowledgeGraph::from_file(&meta.kg, &registry)?;
        let vocab = SourceVocab::from_tokens(meta.source_vocab);
        let mut model = Model::new(meta.config, registry, kg, vocab, ck.header.seed)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint), ModelError> {
        let ck = Checkpoint::load(path)?;
        let model = Self::from_checkpoint(&ck)?;
        Ok((model, ck))
    }
}

/// A decoded answer to one free-text problem.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Problem tokens with numbers masked.
    pub tokens: Vec<String>,
    pub slots: NumberSlots,
    pub tree: OpTree,
    pub log_prob: f64,
    pub value: Result<f64, EvalError>,
}

/// [`Expander`] backed by the network in evaluation mode.
pub struct ModelExpander<'m> {
    model: &'m Model,
    tape: Tape<'m>,
    enc: Encoded,
    drop: Dropout,
}

impl ModelExpander<'_> {
    fn err(e: ModelError) -> DecodeError {
        match e {
            ModelError::Grad(g) => DecodeError::Grad(g),
            ModelError::Decode(d) => d,
            _ => DecodeError::InvalidSequence,
        }
    }
}

impl Expander for ModelExpander<'_> {
    type Entry = Pending;
    type Step = Var;

    fn root(&mut self) -> Result<Pending, DecodeError> {
        self.model.root(&mut self.tape, &self.enc).map_err(Self::err)
    }

    fn step(&mut self, node: &Pending) -> Result<(Vec<f64>, Var), DecodeError> {
        let (lp, c) = self
            .model
            .predict(&mut self.tape, &self.enc, node)
            .map_err(Self::err)?;
        let mut scores = self.tape.value(lp).to_vec();
        scores.resize(self.model.tgt_vocab.len(), f64::NEG_INFINITY);
        Ok((scores, c))
    }

    fn arity(&self, token: usize) -> usize {
        self.model.arity(token)
    }

    fn children(&mut self, node: &Pending, c: &Var, token: usize) -> Result<Vec<Pending>, DecodeError> {
        self.model
            .expand(&mut self.tape, &self.enc, node, *c, token, &mut self.drop)
            .map_err(Self::err)
    }
}
