//! Encoder-decoder over grammar derivations: a BiLSTM NL encoder, a two-step
//! BiLSTM environment encoder, a grammar-frontier decoder LSTM with two-step
//! attention, and a supervised copy mechanism mixed into identifier
//! expansions.
//!
//! All forward math runs on a [`Tape`]; [`Model::example_loss`] builds the
//! teacher-forced negative log-likelihood of one example for training, and
//! the same pieces ([`Model::encode`], [`Model::advance`], [`Model::attend`],
//! [`Model::step_distribution`]) drive search in the inference module.

mod config;
mod train;

pub use config::ModelConfig;
pub use train::{train, EpochLog, TrainLog, TrainOptions};
pub(crate) use train::{run_train, TrainSpec};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::vocab::{Vocabulary, UNK};
use crate::corpus::{camel_split, Example};
use crate::grammar::{Grammar, NtId, RuleId};
use crate::tensor::{load_params, save_params, CheckpointError, ParamId, ParamSet, Tape, Tensor, Var};

/// The NL and environment of one example, as the encoder sees it.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub nl: &'a [String],
    pub variables: &'a [(String, String)],
    pub methods: &'a [(String, String)],
}

impl<'a> Query<'a> {
    pub fn from_example(ex: &'a Example) -> Self {
        Query { nl: &ex.nl, variables: &ex.variables, methods: &ex.methods }
    }
}

/// Per-layer decoder LSTM state plus the exposed top hidden vector.
#[derive(Debug, Clone)]
pub struct StepState {
    layers: Vec<(Var, Var)>,
    pub top_h: Var,
}

/// Encoder outputs cached for a whole decode: NL states, environment slot
/// states, their attention projections, and the decoder init state.
pub struct Encoded {
    nl_h: Vec<Var>,
    nl_fh: Vec<Var>,
    env_x: Vec<Var>,
    env_gx: Vec<Var>,
    /// Filtered copyable slot strings in model order.
    pub slot_texts: Vec<String>,
    /// Maps indices of [`Example::env_slots`] to filtered slot positions.
    pub slot_map: Vec<Option<usize>>,
    pub init: StepState,
}

impl Encoded {
    pub fn env_len(&self) -> usize {
        self.env_x.len()
    }
}

/// Attention results and the combined context vector for one decoder step.
pub struct Attn {
    pub alpha: Var,
    pub z: Var,
    /// Environment attention; `None` when the (possibly ablated) environment
    /// is empty.
    pub beta: Option<Var>,
    pub e: Var,
    pub c: Var,
}

/// Mixture pieces of one step's action distribution.
pub struct StepDist {
    /// Probabilities over the whole rule vocabulary, zero outside the
    /// current nonterminal's mask.
    pub gen: Var,
    /// `(copy gate, beta)`: present only at identifier nonterminals with a
    /// nonempty environment and copying enabled.
    pub copy: Option<(Var, Var)>,
}

/// Decoder-step symbol inputs; state references travel separately.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs {
    pub nt: NtId,
    pub prev_rule: Option<RuleId>,
    pub parent_rule: Option<RuleId>,
}

struct LstmIds {
    w: ParamId,
    b: ParamId,
}

struct Pids {
    id_embed: ParamId,
    type_embed: ParamId,
    nt_embed: ParamId,
    rule_embed: ParamId,
    nl: Vec<(LstmIds, LstmIds)>,
    name: (LstmIds, LstmIds),
    pair: (LstmIds, LstmIds),
    dec: Vec<LstmIds>,
    att_f: ParamId,
    att_g: ParamId,
    att_w: ParamId,
    copy_b: ParamId,
    out_r: ParamId,
}

pub struct Model {
    pub config: ModelConfig,
    pub grammar: Grammar,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    pids: Pids,
    /// Per nonterminal: which rule-vocabulary entries may expand it. UNK is
    /// unmasked only where extension can add out-of-vocabulary rules.
    nt_masks: Vec<Vec<bool>>,
    /// Per nonterminal: its real rule-vocabulary entries (UNK excluded) as
    /// (vocabulary index, rule id), in vocabulary order.
    nt_actions: Vec<Vec<(usize, RuleId)>>,
}

impl Model {
    pub fn new(config: ModelConfig, grammar: Grammar, vocab: Vocabulary, seed: u64) -> Self {
        config.validate().expect("invalid model config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = config.hidden;
        let half = h / 2;
        let sym = config.sym_embed;

        let id_embed = params.xavier("embed.id", vocab.identifiers.len(), h, &mut rng);
        let type_embed = params.xavier("embed.type", vocab.types.len(), h, &mut rng);
        let nt_embed = params.xavier("embed.nt", vocab.nonterminals.len(), sym, &mut rng);
        let rule_embed = params.xavier("embed.rule", vocab.prev_rules.len(), sym, &mut rng);

        let mut lstm = |params: &mut ParamSet, name: String, input: usize, hidden: usize| {
            let (w, b) = params.lstm(&name, input, hidden, &mut rng);
            LstmIds { w, b }
        };
        let nl = (0..config.layers)
            .map(|l| {
                (
                    lstm(&mut params, format!("enc.nl.l{l}.fwd"), h, half),
                    lstm(&mut params, format!("enc.nl.l{l}.bwd"), h, half),
                )
            })
            .collect();
        let name = (
            lstm(&mut params, "enc.name.fwd".into(), h, half),
            lstm(&mut params, "enc.name.bwd".into(), h, half),
        );
        let pair = (
            lstm(&mut params, "enc.pair.fwd".into(), h, half),
            lstm(&mut params, "enc.pair.bwd".into(), h, half),
        );
        let dec = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { 3 * sym + h } else { h };
                lstm(&mut params, format!("dec.l{l}"), input, h)
            })
            .collect();

        let att_f = params.xavier("att.f", h, h, &mut rng);
        let att_g = params.xavier("att.g", h, h, &mut rng);
        let att_w = params.xavier("att.w", h, 3 * h, &mut rng);
        let copy_b = params.zeros("copy.b", &[h]);
        let out_r = params.xavier("out.r", vocab.rules.len(), h, &mut rng);

        let nt_masks = build_masks(&grammar, &vocab);
        let nt_actions = actions_by_lhs(&grammar, &vocab);
        Model {
            config,
            grammar,
            vocab,
            params,
            pids: Pids {
                id_embed,
                type_embed,
                nt_embed,
                rule_embed,
                nl,
                name,
                pair,
                dec,
                att_f,
                att_g,
                att_w,
                copy_b,
                out_r,
            },
            nt_masks,
            nt_actions,
        }
    }

    pub fn rule_mask(&self, nt: NtId) -> &[bool] {
        &self.nt_masks[nt]
    }

    /// The in-vocabulary expansions of `nt`, in vocabulary order.
    pub fn vocab_actions(&self, nt: NtId) -> &[(usize, RuleId)] {
        &self.nt_actions[nt]
    }

    /// Runs both encoders and prepares attention caches and the decoder
    /// init state. The NL must be nonempty.
    pub fn encode(&self, tape: &mut Tape, q: &Query) -> Encoded {
        assert!(!q.nl.is_empty(), "cannot encode an empty NL query");
        let half = self.config.hidden / 2;

        let id_table = tape.param(&self.params, self.pids.id_embed);
        let mut states: Vec<Var> = q
            .nl
            .iter()
            .map(|w| tape.embed(id_table, self.vocab.identifiers.lookup(w)))
            .collect();
        let mut finals = Vec::new();
        for (l, (fwd, bwd)) in self.pids.nl.iter().enumerate() {
            if l > 0 {
                for s in &mut states {
                    *s = tape.dropout(*s, self.config.dropout);
                }
            }
            let out = self.bilstm(tape, fwd, bwd, &states, half);
            states = out.states;
            finals.push((
                tape.concat(&[out.fwd_h, out.bwd_h]),
                tape.concat(&[out.fwd_c, out.bwd_c]),
            ));
        }
        let nl_h = states;

        let (env_x, slot_texts, slot_map) = self.encode_env(tape, q, id_table);

        let f = tape.param(&self.params, self.pids.att_f);
        let nl_fh = nl_h.iter().map(|h| tape.matvec(f, *h)).collect();
        let g = tape.param(&self.params, self.pids.att_g);
        let env_gx = env_x.iter().map(|x| tape.matvec(g, *x)).collect();

        let top_h = finals.last().unwrap().0;
        let init = StepState { layers: finals, top_h };
        Encoded { nl_h, nl_fh, env_x, env_gx, slot_texts, slot_map, init }
    }

    /// Environment slots in type/name/return/method-name order, with groups
    /// removed by ablation toggles; returns the states, their strings, and
    /// the map from full slot indices to filtered positions.
    fn encode_env(
        &self,
        tape: &mut Tape,
        q: &Query,
        id_table: Var,
    ) -> (Vec<Var>, Vec<String>, Vec<Option<usize>>) {
        let half = self.config.hidden / 2;
        let type_table = tape.param(&self.params, self.pids.type_embed);

        let encode_group = |tape: &mut Tape, pairs: &[(String, String)]| -> (Vec<Var>, Vec<Var>) {
            // One interleaved sequence [type_1, name_1, type_2, name_2, ...]
            // through the pairing BiLSTM; even positions are type slots.
            let mut seq = Vec::with_capacity(2 * pairs.len());
            for (name, ty) in pairs {
                seq.push(tape.embed(type_table, self.vocab.types.lookup(ty)));
                seq.push(self.encode_name(tape, id_table, name));
            }
            if seq.is_empty() {
                return (Vec::new(), Vec::new());
            }
            let out = self.bilstm(tape, &self.pids.pair.0, &self.pids.pair.1, &seq, half);
            let types = out.states.iter().step_by(2).copied().collect();
            let names = out.states.iter().skip(1).step_by(2).copied().collect();
            (types, names)
        };

        let no_pairs: &[(String, String)] = &[];
        let vars = if self.config.use_variables { q.variables } else { no_pairs };
        let meths = if self.config.use_methods { q.methods } else { no_pairs };
        let (t_hat, v_hat) = encode_group(tape, vars);
        let (r_hat, m_hat) = encode_group(tape, meths);

        let mut env_x = Vec::new();
        let mut texts = Vec::new();
        let mut map = Vec::new();
        let group = |states: Vec<Var>,
                         strings: Vec<&str>,
                         on: bool,
                         env_x: &mut Vec<Var>,
                         texts: &mut Vec<String>,
                         map: &mut Vec<Option<usize>>| {
            for (s, text) in states.into_iter().zip(&strings) {
                map.push(Some(env_x.len()));
                env_x.push(s);
                texts.push(text.to_string());
            }
            if !on {
                map.extend(strings.iter().map(|_| None));
            }
        };
        let var_types: Vec<&str> = q.variables.iter().map(|(_, t)| t.as_str()).collect();
        let var_names: Vec<&str> = q.variables.iter().map(|(n, _)| n.as_str()).collect();
        let ret_types: Vec<&str> = q.methods.iter().map(|(_, r)| r.as_str()).collect();
        let meth_names: Vec<&str> = q.methods.iter().map(|(n, _)| n.as_str()).collect();
        let on_v = self.config.use_variables;
        let on_m = self.config.use_methods;
        group(t_hat, var_types, on_v, &mut env_x, &mut texts, &mut map);
        group(v_hat, var_names, on_v, &mut env_x, &mut texts, &mut map);
        group(r_hat, ret_types, on_m, &mut env_x, &mut texts, &mut map);
        group(m_hat, meth_names, on_m, &mut env_x, &mut texts, &mut map);
        (env_x, texts, map)
    }

    /// Name encoder: camel pieces (or the whole lower-cased name with camel
    /// encoding ablated) through the name BiLSTM; final states concatenated.
    fn encode_name(&self, tape: &mut Tape, id_table: Var, name: &str) -> Var {
        let half = self.config.hidden / 2;
        let pieces = if self.config.use_camel_encoding {
            let p = camel_split(name);
            if p.is_empty() {
                vec![name.to_lowercase()]
            } else {
                p
            }
        } else {
            vec![name.to_lowercase()]
        };
        let embeds: Vec<Var> = pieces
            .iter()
            .map(|p| tape.embed(id_table, self.vocab.identifiers.lookup(p)))
            .collect();
        let out = self.bilstm(tape, &self.pids.name.0, &self.pids.name.1, &embeds, half);
        tape.concat(&[out.fwd_h, out.bwd_h])
    }

    fn bilstm(
        &self,
        tape: &mut Tape,
        fwd: &LstmIds,
        bwd: &LstmIds,
        inputs: &[Var],
        half: usize,
    ) -> BiOut {
        let wf = tape.param(&self.params, fwd.w);
        let bf = tape.param(&self.params, fwd.b);
        let wb = tape.param(&self.params, bwd.w);
        let bb = tape.param(&self.params, bwd.b);
        let zero = tape.constant(Tensor::zeros(&[half]));
        let (mut h, mut c) = (zero, zero);
        let mut fwd_states = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2) = tape.lstm_cell(wf, bf, *x, h, c);
            fwd_states.push(h2);
            h = h2;
            c = c2;
        }
        let (fwd_h, fwd_c) = (h, c);
        let (mut h, mut c) = (zero, zero);
        let mut bwd_states = vec![zero; inputs.len()];
        for (i, x) in inputs.iter().enumerate().rev() {
            let (h2, c2) = tape.lstm_cell(wb, bb, *x, h, c);
            bwd_states[i] = h2;
            h = h2;
            c = c2;
        }
        let states = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(f, b)| tape.concat(&[*f, *b]))
            .collect();
        BiOut { states, fwd_h, fwd_c, bwd_h: h, bwd_c: c }
    }

    /// One decoder LSTM advance. `parent_top_h` is the top hidden state of
    /// the step that pushed this nonterminal (the init state for the root).
    /// `g` resolves rule kinds and may extend [`Model::grammar`] with copy
    /// rules; static rule ids are shared.
    pub fn advance(
        &self,
        tape: &mut Tape,
        g: &Grammar,
        prev: &StepState,
        parent_top_h: Var,
        inputs: StepInputs,
    ) -> StepState {
        let nt_table = tape.param(&self.params, self.pids.nt_embed);
        let rule_table = tape.param(&self.params, self.pids.rule_embed);
        let nt_e = tape.embed(nt_table, self.vocab.nonterminals.index(inputs.nt));
        let prev_e = tape.embed(rule_table, self.vocab.prev_rules.lookup(g, inputs.prev_rule));
        let parent_e =
            tape.embed(rule_table, self.vocab.prev_rules.lookup(g, inputs.parent_rule));
        let mut x = tape.concat(&[nt_e, prev_e, parent_e, parent_top_h]);
        let mut layers = Vec::with_capacity(self.config.layers);
        for (l, ids) in self.pids.dec.iter().enumerate() {
            if l > 0 {
                x = tape.dropout(x, self.config.dropout);
            }
            let w = tape.param(&self.params, ids.w);
            let b = tape.param(&self.params, ids.b);
            let (h_prev, c_prev) = prev.layers[l];
            let (h2, c2) = tape.lstm_cell(w, b, x, h_prev, c_prev);
            layers.push((h2, c2));
            x = h2;
        }
        let top_h = layers.last().unwrap().0;
        StepState { layers, top_h }
    }

    /// Two-step attention and the combined context vector
    /// `c = tanh(W [s : z : e])`, with dropout applied to `c`.
    pub fn attend(&self, tape: &mut Tape, enc: &Encoded, s_top: Var) -> Attn {
        let scores: Vec<Var> = enc.nl_fh.iter().map(|fh| tape.dot(s_top, *fh)).collect();
        let score_vec = tape.concat(&scores);
        let alpha = tape.softmax(score_vec, 0);
        let z = weighted_sum(tape, alpha, &enc.nl_h);

        let (beta, e) = if enc.env_x.is_empty() {
            let zero = tape.constant(Tensor::zeros(&[self.config.hidden]));
            (None, zero)
        } else {
            let query = if self.config.use_two_step_attention { z } else { s_top };
            let scores: Vec<Var> = enc.env_gx.iter().map(|gx| tape.dot(query, *gx)).collect();
            let score_vec = tape.concat(&scores);
            let beta = tape.softmax(score_vec, 0);
            let e = weighted_sum(tape, beta, &enc.env_x);
            (Some(beta), e)
        };

        let w = tape.param(&self.params, self.pids.att_w);
        let cat = tape.concat(&[s_top, z, e]);
        let lin = tape.matvec(w, cat);
        let c = tape.tanh(lin);
        let c = tape.dropout(c, self.config.dropout);
        Attn { alpha, z, beta, e, c }
    }

    /// Generation distribution (lhs-masked softmax over the shared output
    /// matrix) plus the copy pieces where copying applies.
    pub fn step_distribution(&self, tape: &mut Tape, attn: &Attn, nt: NtId) -> StepDist {
        let r = tape.param(&self.params, self.pids.out_r);
        let scores = tape.matvec(r, attn.c);
        let gen = tape.masked_softmax(scores, &self.nt_masks[nt]);
        let copy = match (&attn.beta, self.copies_at(nt)) {
            (Some(beta), true) => {
                let b = tape.param(&self.params, self.pids.copy_b);
                let gate_in = tape.dot(b, attn.c);
                let gate = tape.sigmoid(gate_in);
                Some((gate, *beta))
            }
            _ => None,
        };
        StepDist { gen, copy }
    }

    /// True when the copy pathway applies to expansions of `nt`.
    pub fn copies_at(&self, nt: NtId) -> bool {
        self.config.use_copy && self.grammar.is_identifier_nt(nt)
    }

    /// Teacher-forced negative log-likelihood of one example's derivation.
    pub fn example_loss(&self, tape: &mut Tape, ex: &Example) -> Var {
        let enc = self.encode(tape, &Query::from_example(ex));
        let steps = &ex.target.steps;
        let mut states: Vec<StepState> = Vec::with_capacity(steps.len());
        let mut step_ps = Vec::with_capacity(steps.len());
        for (t, step) in steps.iter().enumerate() {
            let rule = self.grammar.rule(step.rule);
            let inputs = StepInputs {
                nt: rule.lhs,
                prev_rule: if t == 0 { None } else { Some(steps[t - 1].rule) },
                parent_rule: step.parent.map(|p| steps[p].rule),
            };
            let prev_state = if t == 0 { &enc.init } else { &states[t - 1] };
            let parent_top = step.parent.map_or(enc.init.top_h, |p| states[p].top_h);
            let state = self.advance(tape, &self.grammar, prev_state, parent_top, inputs);
            let attn = self.attend(tape, &enc, state.top_h);
            let dist = self.step_distribution(tape, &attn, rule.lhs);

            let vi = self.vocab.rules.lookup(step.rule);
            let p_gen = tape.slice(dist.gen, vi, 1);
            let label = ex.copy_labels[t].and_then(|full| enc.slot_map[full]);
            let p = match (&dist.copy, label) {
                (Some((gate, beta)), Some(j)) => {
                    let beta_j = tape.slice(*beta, j, 1);
                    let copy_part = tape.mul(*gate, beta_j);
                    if vi == UNK {
                        // Out-of-vocabulary rule: copying is the only path
                        // that can actually produce the gold identifier.
                        copy_part
                    } else {
                        let keep = tape.affine(*gate, -1.0, 1.0);
                        let gen_part = tape.mul(keep, p_gen);
                        tape.add(copy_part, gen_part)
                    }
                }
                (Some((gate, _)), None) => {
                    let keep = tape.affine(*gate, -1.0, 1.0);
                    tape.mul(keep, p_gen)
                }
                (None, _) => p_gen,
            };
            step_ps.push(p);
            states.push(state);
        }
        let ps = tape.concat(&step_ps);
        let logs = tape.log(ps);
        let total = tape.sum(logs);
        tape.affine(total, -1.0, 0.0)
    }

    /// Stable content hash of the (config, grammar, vocabulary) triple.
    pub fn meta_hash(config: &ModelConfig, grammar_text: &str, vocab: &Vocabulary) -> u64 {
        let mut h = Fnv::new();
        h.update(serde_json::to_string(config).expect("config serializes").as_bytes());
        h.update(grammar_text.as_bytes());
        h.update(serde_json::to_string(vocab).expect("vocab serializes").as_bytes());
        h.finish()
    }

    /// Writes the checkpoint plus a sidecar recording config, grammar,
    /// vocabulary, and their hash.
    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        save_params(path, &self.params)?;
        let grammar_text = self.grammar.to_text();
        let sidecar = Sidecar {
            hash: Self::meta_hash(&self.config, &grammar_text, &self.vocab),
            config: self.config.clone(),
            grammar: grammar_text,
            vocab: self.vocab.clone(),
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(sidecar_path(path), text)?;
        Ok(())
    }

    /// Rebuilds a model from a checkpoint and its sidecar; fails when the
    /// sidecar hash does not match its own content.
    pub fn load(path: &Path) -> Result<Model, ModelIoError> {
        let text = std::fs::read_to_string(sidecar_path(path))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let recomputed = Self::meta_hash(&sidecar.config, &sidecar.grammar, &sidecar.vocab);
        if recomputed != sidecar.hash {
            return Err(ModelIoError::HashMismatch);
        }
        let grammar = Grammar::from_text(&sidecar.grammar)
            .map_err(|e| ModelIoError::BadGrammar(e.to_string()))?;
        let mut model = Model::new(sidecar.config, grammar, sidecar.vocab, 0);
        load_params(path, &mut model.params)?;
        Ok(model)
    }
}

struct BiOut {
    states: Vec<Var>,
    fwd_h: Var,
    fwd_c: Var,
    bwd_h: Var,
    bwd_c: Var,
}

/// `sum_i weights[i] * vecs[i]` for a probability vector over vectors.
pub(crate) fn weighted_sum(tape: &mut Tape, weights: Var, vecs: &[Var]) -> Var {
    let mut acc: Option<Var> = None;
    for (i, v) in vecs.iter().enumerate() {
        let wi = tape.slice(weights, i, 1);
        let term = tape.scale_by(wi, *v);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    acc.expect("weighted_sum of nothing")
}

pub(crate) fn build_masks(grammar: &Grammar, vocab: &Vocabulary) -> Vec<Vec<bool>> {
    let mut masks = vec![vec![false; vocab.rules.len()]; grammar.nonterminal_count()];
    for (vi, rule) in vocab.rules.entries() {
        masks[grammar.rule(rule).lhs][vi] = true;
    }
    for nt in 0..grammar.nonterminal_count() {
        if grammar.is_open_nt(nt) {
            masks[nt][UNK] = true;
        }
    }
    masks
}

/// Per nonterminal, its in-vocabulary expansions (UNK excluded) as
/// (vocabulary index, rule id), in vocabulary order.
pub(crate) fn actions_by_lhs(grammar: &Grammar, vocab: &Vocabulary) -> Vec<Vec<(usize, RuleId)>> {
    let mut actions = vec![Vec::new(); grammar.nonterminal_count()];
    for (vi, rule) in vocab.rules.entries() {
        actions[grammar.rule(rule).lhs].push((vi, rule));
    }
    actions
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    hash: u64,
    config: ModelConfig,
    grammar: String,
    vocab: Vocabulary,
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("sidecar metadata: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("sidecar hash does not match its content")]
    HashMismatch,
    #[error("sidecar grammar: {0}")]
    BadGrammar(String),
}

/// FNV-1a, 64-bit: stable across runs and platforms.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn update(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::{build_vocab, VocabThresholds};
    use crate::corpus::generate_synthetic;

    fn tiny_model(hidden: usize, seed: u64) -> (Model, Vec<Example>) {
        let ds = generate_synthetic(30, 3);
        let vocab = build_vocab(
            &ds.grammar,
            &ds.examples,
            VocabThresholds { identifiers: 1, types: 1, rules: 1 },
        )
        .unwrap();
        let model = Model::new(ModelConfig::tiny(hidden), ds.grammar, vocab, seed);
        (model, ds.examples)
    }

    #[test]
    fn nl_encoding_is_direction_sensitive() {
        let (model, _) = tiny_model(8, 1);
        let words: Vec<String> = ["set", "the", "count"].iter().map(|s| s.to_string()).collect();
        let rev: Vec<String> = words.iter().rev().cloned().collect();
        let mut tape = Tape::new(false, 0);
        let q = Query { nl: &words, variables: &[], methods: &[] };
        let enc = model.encode(&mut tape, &q);
        let q_rev = Query { nl: &rev, variables: &[], methods: &[] };
        let enc_rev = model.encode(&mut tape, &q_rev);
        assert_eq!(enc.nl_h.len(), 3);
        assert_eq!(tape.value(enc.nl_h[0]).len(), 8);
        let a = tape.data(enc.nl_h[1]).to_vec();
        let b = tape.data(enc_rev.nl_h[1]).to_vec();
        assert_ne!(a, b, "middle state ignored direction");
    }

    #[test]
    fn environment_slots_follow_group_order_and_ablation() {
        let (mut model, _) = tiny_model(8, 2);
        let vars = vec![("vecElements".to_string(), "double[]".to_string())];
        let meths = vec![("size".to_string(), "int".to_string())];
        let q = Query { nl: &["add".into()], variables: &vars, methods: &meths };
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &q);
        assert_eq!(enc.slot_texts, ["double[]", "vecElements", "int", "size"]);
        assert_eq!(enc.slot_map, [Some(0), Some(1), Some(2), Some(3)]);

        model.config.use_variables = false;
        let enc = model.encode(&mut tape, &q);
        assert_eq!(enc.slot_texts, ["int", "size"]);
        assert_eq!(enc.slot_map, [None, None, Some(0), Some(1)]);

        model.config.use_methods = false;
        let enc = model.encode(&mut tape, &q);
        assert_eq!(enc.env_len(), 0);
        assert_eq!(enc.slot_map, [None, None, None, None]);
    }

    #[test]
    fn attention_matches_hand_softmax() {
        // Effectively scalar states: h_1=[1,0], h_2=[2,0], s=[1,0], F=I.
        let (mut model, _) = tiny_model(2, 3);
        let h = model.config.hidden;
        assert_eq!(h, 2);
        let f = model.params.id("att.f").unwrap();
        model.params.value_mut(f).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new(false, 0);
        let h1 = tape.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]));
        let h2 = tape.constant(Tensor::from_vec(&[2], vec![2.0, 0.0]));
        let fv = tape.param(&model.params, f);
        let nl_fh = vec![tape.matvec(fv, h1), tape.matvec(fv, h2)];
        let init = StepState { layers: vec![(h1, h1)], top_h: h1 };
        let enc = Encoded {
            nl_h: vec![h1, h2],
            nl_fh,
            env_x: Vec::new(),
            env_gx: Vec::new(),
            slot_texts: Vec::new(),
            slot_map: Vec::new(),
            init,
        };
        let s = tape.constant(Tensor::from_vec(&[2], vec![1.0, 0.0]));
        let attn = model.attend(&mut tape, &enc, s);
        let alpha = tape.data(attn.alpha);
        assert!((alpha[0] - 0.2689).abs() < 5e-5, "alpha {alpha:?}");
        assert!((alpha[1] - 0.7311).abs() < 5e-5);
        let z = tape.data(attn.z);
        assert!((z[0] - 1.7311).abs() < 5e-5);
        assert_eq!(z[1], 0.0);
        assert!(attn.beta.is_none());
        assert_eq!(tape.data(attn.e), &[0.0, 0.0]);
    }

    #[test]
    fn uniform_nl_states_give_uniform_attention() {
        let (model, _) = tiny_model(4, 4);
        let mut tape = Tape::new(false, 0);
        let same = tape.constant(Tensor::from_vec(&[4], vec![0.3, -0.1, 0.9, 0.2]));
        let f = tape.param(&model.params, model.params.id("att.f").unwrap());
        let fh = tape.matvec(f, same);
        let init = StepState { layers: vec![(same, same)], top_h: same };
        let enc = Encoded {
            nl_h: vec![same; 3],
            nl_fh: vec![fh; 3],
            env_x: Vec::new(),
            env_gx: Vec::new(),
            slot_texts: Vec::new(),
            slot_map: Vec::new(),
            init,
        };
        let s = tape.constant(Tensor::from_vec(&[4], vec![1.0, 2.0, -1.0, 0.5]));
        let attn = model.attend(&mut tape, &enc, s);
        for a in tape.data(attn.alpha) {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_normalize_and_copy_is_identifier_only() {
        let (model, examples) = tiny_model(8, 5);
        let ex = &examples[0];
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &Query::from_example(ex));
        assert!(enc.env_len() > 0);
        let s = enc.init.top_h;
        let attn = model.attend(&mut tape, &enc, s);
        let alpha_sum: f64 = tape.data(attn.alpha).iter().sum();
        assert!((alpha_sum - 1.0).abs() < 1e-6);
        let beta = attn.beta.expect("environment present");
        let beta_sum: f64 = tape.data(beta).iter().sum();
        assert!((beta_sum - 1.0).abs() < 1e-6);

        let ident = model.grammar.nt_id("Identifier").unwrap();
        let dist = model.step_distribution(&mut tape, &attn, ident);
        let (gate, beta) = dist.copy.expect("copy applies at identifiers");
        let gen_sum: f64 = tape.data(dist.gen).iter().sum();
        assert!((gen_sum - 1.0).abs() < 1e-6);
        let g = tape.data(gate)[0];
        let mixture = (1.0 - g) * gen_sum + g * tape.data(beta).iter().sum::<f64>();
        assert!((mixture - 1.0).abs() < 1e-6);

        let start = model.grammar.start();
        let dist = model.step_distribution(&mut tape, &attn, start);
        assert!(dist.copy.is_none(), "copy leaked to a structural nonterminal");
        let gen_sum: f64 = tape.data(dist.gen).iter().sum();
        assert!((gen_sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_copy_bias_gives_half_copy_mass() {
        let (model, examples) = tiny_model(8, 6);
        // copy.b starts at zero, so the gate must sit at exactly 0.5.
        let ex = &examples[0];
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &Query::from_example(ex));
        let attn = model.attend(&mut tape, &enc, enc.init.top_h);
        let ident = model.grammar.nt_id("Identifier").unwrap();
        let dist = model.step_distribution(&mut tape, &attn, ident);
        let (gate, _) = dist.copy.unwrap();
        assert_eq!(tape.data(gate), &[0.5]);
    }

    #[test]
    fn two_step_toggle_keeps_alpha_fixed() {
        let (mut model, examples) = tiny_model(8, 7);
        let ex = &examples[0];
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &Query::from_example(ex));
        let attn_on = model.attend(&mut tape, &enc, enc.init.top_h);
        model.config.use_two_step_attention = false;
        let attn_off = model.attend(&mut tape, &enc, enc.init.top_h);
        assert_eq!(tape.data(attn_on.alpha), tape.data(attn_off.alpha));
        let b_on = tape.data(attn_on.beta.unwrap()).to_vec();
        let b_off = tape.data(attn_off.beta.unwrap()).to_vec();
        assert_ne!(b_on, b_off, "ablation did not change the second step");
    }

    #[test]
    fn masked_output_equals_per_nonterminal_softmax() {
        let (model, examples) = tiny_model(8, 8);
        let ex = &examples[0];
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &Query::from_example(ex));
        let attn = model.attend(&mut tape, &enc, enc.init.top_h);
        let nt = model.grammar.rule(ex.target.steps[0].rule).lhs;
        let dist = model.step_distribution(&mut tape, &attn, nt);

        // Separate per-nonterminal parameterization: gather the masked rows
        // into a dedicated matrix and softmax it.
        let mask = model.rule_mask(nt);
        let live: Vec<usize> = (0..mask.len()).filter(|i| mask[*i]).collect();
        let r = model.params.value(model.params.id("out.r").unwrap());
        let h = model.config.hidden;
        let mut rows = Vec::new();
        for i in &live {
            rows.extend_from_slice(&r.data()[i * h..(i + 1) * h]);
        }
        let w_nt = tape.constant(Tensor::from_vec(&[live.len(), h], rows));
        let scores = tape.matvec(w_nt, attn.c);
        let sub = tape.softmax(scores, 0);

        let full = tape.data(dist.gen);
        for (k, i) in live.iter().enumerate() {
            assert_eq!(full[*i].to_bits(), tape.data(sub)[k].to_bits());
        }
        for (i, m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(full[i], 0.0);
            }
        }
    }

    #[test]
    fn uniform_rows_cost_log_k_per_structural_step() {
        let (mut model, examples) = tiny_model(8, 9);
        let r = model.params.id("out.r").unwrap();
        model.params.value_mut(r).data_mut().fill(0.0);
        let ex = &examples[0];
        let mut tape = Tape::new(false, 0);
        let enc = model.encode(&mut tape, &Query::from_example(ex));
        let attn = model.attend(&mut tape, &enc, enc.init.top_h);
        let nt = model.grammar.start();
        let dist = model.step_distribution(&mut tape, &attn, nt);
        let k = model.rule_mask(nt).iter().filter(|m| **m).count();
        let vi = model.vocab.rules.lookup(ex.target.steps[0].rule);
        let p = tape.data(dist.gen)[vi];
        assert!((p.ln() + (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn example_loss_is_finite_and_positive() {
        let (mut model, examples) = tiny_model(8, 10);
        let mut tape = Tape::new(false, 0);
        let loss = model.example_loss(&mut tape, &examples[0]);
        let v = tape.data(loss)[0];
        assert!(v.is_finite() && v > 0.0, "loss {v}");
        tape.backward(loss, &mut model.params);
        let p = &model.params;
        let any_grad = p.ids().any(|id| p.grad(id).data().iter().any(|g| *g != 0.0));
        assert!(any_grad);
    }

    #[test]
    fn checkpoint_with_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (model, examples) = tiny_model(8, 11);
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(model.config, loaded.config);
        // Bit-identical forward behavior.
        let mut t1 = Tape::new(false, 0);
        let mut t2 = Tape::new(false, 0);
        let l1 = model.example_loss(&mut t1, &examples[2]);
        let l2 = loaded.example_loss(&mut t2, &examples[2]);
        assert_eq!(t1.data(l1)[0].to_bits(), t2.data(l2)[0].to_bits());

        // Tampered sidecar is refused.
        let sc = sidecar_path(&path);
        let text = std::fs::read_to_string(&sc).unwrap().replace("\"hidden\": 8", "\"hidden\": 16");
        std::fs::write(&sc, text).unwrap();
        assert!(matches!(Model::load(&path), Err(ModelIoError::HashMismatch)));
    }
}
