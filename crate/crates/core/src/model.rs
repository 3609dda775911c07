//! The full tracker: encoders, attender and decoder wired per variant.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attender::{AttentionVariant, Attender};
use crate::corpus::{align_value_span, delinearize, normalize_value, EncoderInput, Marker, Pointer, SlotValue, StateFrame, Vocab};
use crate::decoder::{argmax_rows, beam_search, grammar_mask, log_softmax_masked, Decoder, DecodeContext, OutputKind, SeqLabelHead, StepModel};
use crate::encoders::{Encoder, EncoderConfig, EncoderKind, SchemaCache};
use crate::error::{Error, Result};
use crate::schema::{ElementKind, ElementTable};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemaSource {
    /// Description pairs run through the schema encoder.
    Encoder,
    /// One learned embedding per schema element seen in training.
    Learned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub encoder_kind: EncoderKind,
    pub dropout: f64,
    /// Attention width; 0 means the hidden width.
    pub att_hidden: usize,
    pub attention: AttentionVariant,
    pub schema_source: SchemaSource,
    pub pointer: bool,
    pub seqlabel: bool,
    pub shared_embeddings: bool,
    pub beam_size: usize,
    pub decode_max_len: usize,
    pub constrained: bool,
    /// Row budget when packing schema descriptions for the encoder.
    pub schema_chunk: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            layers: 2,
            heads: 4,
            max_len: 96,
            encoder_kind: EncoderKind::SelfAttention,
            dropout: 0.0,
            att_hidden: 0,
            attention: AttentionVariant::Overall,
            schema_source: SchemaSource::Encoder,
            pointer: true,
            seqlabel: false,
            shared_embeddings: false,
            beam_size: 5,
            decode_max_len: 40,
            constrained: false,
            schema_chunk: 128,
        }
    }
}

impl ModelConfig {
    pub fn att(&self) -> usize {
        if self.att_hidden == 0 {
            self.hidden
        } else {
            self.att_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config(1).validate()?;
        if self.seqlabel && (self.schema_source != SchemaSource::Learned || self.attention != AttentionVariant::None) {
            return Err(Error::Config(
                "seqlabel runs without the schema encoder and without schema attention".into(),
            ));
        }
        if self.attention == AttentionVariant::Token && self.schema_source != SchemaSource::Encoder {
            return Err(Error::Config("token-level attention needs the schema encoder".into()));
        }
        if self.constrained && !self.pointer {
            return Err(Error::Config("constrained decoding needs pointer output".into()));
        }
        if self.beam_size == 0 || self.decode_max_len < 2 {
            return Err(Error::Config("beam_size must be >= 1 and decode_max_len >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
            kind: self.encoder_kind,
            dropout: self.dropout,
        }
    }
}

/// Named model variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Overall,
    Token,
    WoSchema,
    SeqLabel,
    WoBert,
    WoAttention,
    WSchemaAtt,
    WUtteranceAtt,
    WoPointer,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Overall,
        Variant::Token,
        Variant::WoSchema,
        Variant::SeqLabel,
        Variant::WoBert,
        Variant::WoAttention,
        Variant::WSchemaAtt,
        Variant::WUtteranceAtt,
        Variant::WoPointer,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Overall => "overall",
            Variant::Token => "token",
            Variant::WoSchema => "w/oSchema",
            Variant::SeqLabel => "seqlabel",
            Variant::WoBert => "w/oBert",
            Variant::WoAttention => "w/oAttention",
            Variant::WSchemaAtt => "w/SchemaAtt",
            Variant::WUtteranceAtt => "w/UtteranceAtt",
            Variant::WoPointer => "w/oPointer",
        }
    }

    /// Adjust `cfg` (taken as the overall configuration) for this variant.
    pub fn apply(self, cfg: &mut ModelConfig) {
        match self {
            Variant::Overall => cfg.attention = AttentionVariant::Overall,
            Variant::Token => cfg.attention = AttentionVariant::Token,
            Variant::WoSchema => {
                cfg.schema_source = SchemaSource::Learned;
                cfg.attention = AttentionVariant::None;
            }
            Variant::SeqLabel => {
                cfg.schema_source = SchemaSource::Learned;
                cfg.attention = AttentionVariant::None;
                cfg.seqlabel = true;
            }
            Variant::WoBert => cfg.encoder_kind = EncoderKind::BiLstm,
            Variant::WoAttention => cfg.attention = AttentionVariant::None,
            Variant::WSchemaAtt => cfg.attention = AttentionVariant::SchemaOnly,
            Variant::WUtteranceAtt => cfg.attention = AttentionVariant::UtteranceOnly,
            Variant::WoPointer => cfg.pointer = false,
        }
    }
}

/// Symbolic schema keys seen in training, used by variants with fixed
/// output or embedding tables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeySpace {
    pub elements: Vec<String>,
    pub slots: Vec<String>,
    pub intents: Vec<String>,
    index: HashMap<String, usize>,
    slot_index: HashMap<String, usize>,
    intent_index: HashMap<String, usize>,
}

impl KeySpace {
    pub fn from_tables<'a>(tables: impl IntoIterator<Item = &'a ElementTable>) -> Self {
        let mut all = BTreeSet::new();
        for t in tables {
            for i in 0..t.len() {
                all.insert(t.key(i));
            }
        }
        Self::from_keys(all.into_iter().collect())
    }

    pub fn from_keys(elements: Vec<String>) -> Self {
        let slots: Vec<String> = elements.iter().filter(|k| k.contains("/slot/")).cloned().collect();
        let intents: Vec<String> = elements.iter().filter(|k| k.contains("/intent/")).cloned().collect();
        let idx = |v: &[String]| v.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        KeySpace {
            index: idx(&elements),
            slot_index: idx(&slots),
            intent_index: idx(&intents),
            elements,
            slots,
            intents,
        }
    }

    pub fn element(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn slot(&self, key: &str) -> Option<usize> {
        self.slot_index.get(key).copied()
    }

    pub fn intent(&self, key: &str) -> Option<usize> {
        self.intent_index.get(key).copied()
    }
}

/// Items of the fixed output vocabulary: markers, element keys, then words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutItem {
    Marker(Marker),
    Element(usize),
    Word(usize),
}

/// Schema rows for one element table inside a graph.
#[derive(Clone, Debug)]
pub struct SchemaReps {
    pub e: Var,
    pub tokens: Vec<Var>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub frame: StateFrame,
    pub malformed: usize,
    pub pointers: Vec<Pointer>,
    /// Sequence-labeling output, one label per utterance token.
    pub labels: Option<Vec<String>>,
    pub log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub keys: KeySpace,
    pub utt: Encoder,
    pub sch: Option<Encoder>,
    pub key_emb: Option<ParamId>,
    pub attender: Option<Attender>,
    pub decoder: Option<Decoder>,
    pub seqlabel: Option<SeqLabelHead>,
}

impl Model {
    /// Register all parameters in `store` (which should be empty) with a
    /// seeded initialization.
    pub fn build<F: Scalar>(cfg: ModelConfig, vocab: Vocab, keys: KeySpace, store: &mut ParamStore<F>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let enc_cfg = cfg.encoder_config(vocab.len());
        let utt = Encoder::new(store, "utt", enc_cfg.clone(), None, &mut rng)?;
        let (sch, key_emb) = match cfg.schema_source {
            SchemaSource::Encoder => {
                let shared = cfg.shared_embeddings.then_some(utt.tok);
                (Some(Encoder::new(store, "sch", enc_cfg, shared, &mut rng)?), None)
            }
            // row 0 stands for any element not seen in training
            SchemaSource::Learned => (None, Some(store.add_uniform("keys.emb", keys.elements.len() + 1, h, &mut rng))),
        };
        let attender = (cfg.attention != AttentionVariant::None).then(|| {
            Attender::new(store, "att", h, cfg.att(), cfg.attention == AttentionVariant::Token, &mut rng)
        });
        let (decoder, seqlabel) = if cfg.seqlabel {
            let head = SeqLabelHead::new(store, "seqlabel", h, keys.slots.len(), keys.intents.len(), &mut rng);
            (None, Some(head))
        } else {
            let output = if cfg.pointer {
                OutputKind::Pointer
            } else {
                OutputKind::Vocabulary(Marker::COUNT + keys.elements.len() + vocab.len())
            };
            (Some(Decoder::new(store, "dec", h, cfg.att(), cfg.dropout, output, &mut rng)), None)
        };
        Ok(Model {
            cfg,
            vocab,
            keys,
            utt,
            sch,
            key_emb,
            attender,
            decoder,
            seqlabel,
        })
    }

    fn want_tokens(&self) -> bool {
        self.cfg.attention == AttentionVariant::Token
    }

    /// Encode the elements of one service block of `table`.
    pub fn encode_service<F: Scalar>(&self, g: &mut Graph<'_, F>, table: &ElementTable, service: usize) -> Result<(Var, Vec<Var>)> {
        let enc = self.sch.as_ref().ok_or_else(|| Error::Config("model has no schema encoder".into()))?;
        let pairs: Vec<_> = table.elements().iter().filter(|e| e.service == service).map(|e| &e.pair).collect();
        enc.encode_pairs(g, &self.vocab, &pairs, self.want_tokens(), self.cfg.schema_chunk)
    }

    /// Schema rows for `table`, encoding each service at most once per
    /// graph through `blocks`.
    pub fn table_reps<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        table: &ElementTable,
        blocks: &mut HashMap<String, (Var, Vec<Var>)>,
    ) -> Result<SchemaReps> {
        if table.is_empty() {
            return Err(Error::Invalid("empty element table".into()));
        }
        if let Some(emb) = self.key_emb {
            let ids: Vec<usize> = (0..table.len())
                .map(|i| self.keys.element(&table.key(i)).map_or(0, |k| k + 1))
                .collect();
            let t = g.param(emb);
            return Ok(SchemaReps {
                e: g.gather(t, &ids)?,
                tokens: Vec::new(),
            });
        }
        let mut es = Vec::new();
        let mut tokens = Vec::new();
        for (si, name) in table.services().iter().enumerate() {
            if !table.elements().iter().any(|e| e.service == si) {
                continue;
            }
            let key = service_key(table, si, name);
            if !blocks.contains_key(&key) {
                let b = self.encode_service(g, table, si)?;
                blocks.insert(key.clone(), b);
            }
            let (e, t) = &blocks[&key];
            es.push(*e);
            tokens.extend_from_slice(t);
        }
        let e = if es.len() == 1 { es[0] } else { g.concat_rows(&es)? };
        Ok(SchemaReps { e, tokens })
    }

    /// Like [`Model::table_reps`] but reusing eval-mode encodings from `cache`.
    pub fn table_reps_cached<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        store: &ParamStore<F>,
        table: &ElementTable,
        cache: &mut SchemaCache<F>,
    ) -> Result<SchemaReps> {
        if self.key_emb.is_some() {
            return self.table_reps(g, table, &mut HashMap::new());
        }
        let mut blocks = HashMap::new();
        for (si, name) in table.services().iter().enumerate() {
            if !table.elements().iter().any(|e| e.service == si) {
                continue;
            }
            let key = service_key(table, si, name);
            let (e, toks) = cache.get_or_encode(&key, store, || {
                let mut sg = Graph::new(store, Mode::Eval, 0);
                let (e, toks) = self.encode_service(&mut sg, table, si)?;
                Ok((sg.value(e).clone(), toks.iter().map(|&t| sg.value(t).clone()).collect()))
            })?;
            let ev = g.constant(e.clone());
            let tv = toks.iter().map(|t| g.constant(t.clone())).collect();
            blocks.insert(key, (ev, tv));
        }
        self.table_reps(g, table, &mut blocks)
    }

    fn decoder(&self) -> Result<&Decoder> {
        self.decoder.as_ref().ok_or_else(|| Error::Config("model has no pointer decoder".into()))
    }

    /// Decoder context for one encoder input.
    pub fn context<F: Scalar>(&self, g: &mut Graph<'_, F>, input: &EncoderInput, schema: &SchemaReps) -> Result<DecodeContext> {
        let d = self.utt.encode_utterance(g, &self.vocab, input)?;
        let (u, s) = match &self.attender {
            Some(a) => a.apply(g, self.cfg.attention, d, schema.e, &schema.tokens)?,
            None => (d, schema.e),
        };
        self.decoder()?.context(g, u, s)
    }

    /// Output-vocabulary id of an item.
    pub fn out_id(&self, item: OutItem) -> usize {
        match item {
            OutItem::Marker(m) => m.index(),
            OutItem::Element(k) => Marker::COUNT + k,
            OutItem::Word(w) => Marker::COUNT + self.keys.elements.len() + w,
        }
    }

    pub fn out_item(&self, id: usize) -> OutItem {
        let k = self.keys.elements.len();
        if id < Marker::COUNT {
            OutItem::Marker(Marker::ALL[id])
        } else if id < Marker::COUNT + k {
            OutItem::Element(id - Marker::COUNT)
        } else {
            OutItem::Word(id - Marker::COUNT - k)
        }
    }

    /// Decoder target ids (BOS first) for a pointer sequence.
    pub fn target_ids(&self, target: &[Pointer], input: &EncoderInput, table: &ElementTable) -> Result<Vec<usize>> {
        let m = table.len();
        let dec = self.decoder()?;
        target
            .iter()
            .map(|&p| match dec.output {
                OutputKind::Pointer => {
                    let c = p.candidate(m);
                    if c >= Marker::COUNT + m + input.len() {
                        return Err(Error::Invalid(format!("pointer {p} outside the candidate list")));
                    }
                    Ok(c)
                }
                OutputKind::Vocabulary(_) => Ok(match p {
                    Pointer::Marker(mk) => self.out_id(OutItem::Marker(mk)),
                    Pointer::Schema(i) => {
                        let k = self.keys.element(&table.key(i)).ok_or_else(|| {
                            Error::Invalid(format!("element {} has no output id", table.key(i)))
                        })?;
                        self.out_id(OutItem::Element(k))
                    }
                    Pointer::Token(t) => self.out_id(OutItem::Word(self.vocab.id(&input.tokens[t]))),
                }),
            })
            .collect()
    }

    /// Teacher-forced loss of one example: mean per-step cross entropy, or
    /// mean per-label cross entropy for the sequence-labeling variant.
    pub fn example_loss<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        input: &EncoderInput,
        table: &ElementTable,
        target: &[Pointer],
        frame: &StateFrame,
        schema: Option<&SchemaReps>,
    ) -> Result<Var> {
        if let Some(head) = &self.seqlabel {
            let (labels, intent) = self.seqlabel_targets(input, frame, table);
            let d = self.utt.encode_utterance(g, &self.vocab, input)?;
            return head.loss(g, d, &labels, intent);
        }
        let schema = schema.ok_or_else(|| Error::Invalid("schema representations required".into()))?;
        let ctx = self.context(g, input, schema)?;
        let ids = self.target_ids(target, input, table)?;
        self.decoder()?.teacher_forced_loss(g, &ctx, &ids)
    }

    /// Gold BIO label ids over the current-utterance tokens and the gold
    /// intent class (0 for none).
    pub fn seqlabel_targets(&self, input: &EncoderInput, frame: &StateFrame, table: &ElementTable) -> (Vec<usize>, usize) {
        let cur = input.current_len();
        let ntok = cur.saturating_sub(2);
        let only_current = EncoderInput {
            tokens: input.tokens[..cur].to_vec(),
            origins: input.origins[..cur].to_vec(),
        };
        let mut labels = vec![0usize; ntok];
        for (&slot, value) in &frame.slots {
            let Some(k) = self.keys.slot(&table.key(slot)) else { continue };
            let text = match value {
                SlotValue::Categorical(v) => table.get(*v).map(|e| e.name.clone()).unwrap_or_default(),
                SlotValue::Text(t) => t.clone(),
            };
            if let Some(span) = align_value_span(&text, &only_current) {
                for (j, p) in span.enumerate() {
                    labels[p - 1] = if j == 0 { 1 + 2 * k } else { 2 + 2 * k };
                }
            }
        }
        let intent = frame
            .intent
            .and_then(|i| self.keys.intent(&table.key(i)))
            .map_or(0, |k| k + 1);
        (labels, intent)
    }

    pub fn label_name(&self, id: usize) -> String {
        if id == 0 {
            "O".into()
        } else {
            let k = (id - 1) / 2;
            let tag = if (id - 1).is_multiple_of(2) { "B" } else { "I" };
            format!("{tag}-{}", self.keys.slots[k])
        }
    }

    /// Decode one input.
    pub fn predict<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        cache: &mut SchemaCache<F>,
        input: &EncoderInput,
        table: &ElementTable,
    ) -> Result<Prediction> {
        let mut g = Graph::new(store, Mode::Eval, 0);
        if let Some(head) = &self.seqlabel {
            let ntok = input.current_len().saturating_sub(2);
            let d = self.utt.encode_utterance(&mut g, &self.vocab, input)?;
            let (zl, zi) = head.forward(&mut g, d, ntok)?;
            let labels = argmax_rows(g.value(zl));
            let intent = argmax_rows(g.value(zi))[0];
            let names: Vec<String> = labels.iter().map(|&l| self.label_name(l)).collect();
            let frame = self.frame_from_labels(input, table, &names, intent);
            return Ok(Prediction {
                frame,
                labels: Some(names),
                ..Default::default()
            });
        }
        let schema = self.table_reps_cached(&mut g, store, table, cache)?;
        let ctx = self.context(&mut g, input, &schema)?;
        let dec = self.decoder()?;
        let mut search = Search {
            g: &mut g,
            model: self,
            dec,
            ctx,
            table,
            input,
        };
        let bos = Marker::Bos.index();
        let eos = Marker::Eos.index();
        let res = beam_search(&mut search, bos, eos, self.cfg.beam_size, self.cfg.decode_max_len)?;
        let mut pointers = vec![Pointer::Marker(Marker::Bos)];
        pointers.extend(self.ids_to_pointers(&res.seq, input, table));
        let (frame, malformed) = delinearize(&pointers, input, table);
        Ok(Prediction {
            frame,
            malformed,
            pointers,
            labels: None,
            log_prob: res.log_prob,
        })
    }

    /// Decoded ids to pointers. Vocabulary output is mapped back through
    /// element keys and by locating word runs in the input; anything that
    /// cannot be mapped becomes an out-of-range pointer.
    pub fn ids_to_pointers(&self, ids: &[usize], input: &EncoderInput, table: &ElementTable) -> Vec<Pointer> {
        let m = table.len();
        let invalid = Pointer::Schema(usize::MAX);
        if self.decoder.as_ref().is_some_and(|d| d.output == OutputKind::Pointer) {
            return ids
                .iter()
                .map(|&c| Pointer::from_candidate(c, m, input.len()).unwrap_or(invalid))
                .collect();
        }
        let by_key: HashMap<String, usize> = (0..m).map(|i| (table.key(i), i)).collect();
        let mut out = Vec::new();
        let mut words: Vec<&str> = Vec::new();
        let flush = |words: &mut Vec<&str>, out: &mut Vec<Pointer>| {
            if words.is_empty() {
                return;
            }
            match align_value_span(&words.join(" "), input) {
                Some(span) => out.extend(span.map(Pointer::Token)),
                None => out.extend(std::iter::repeat_n(invalid, words.len())),
            }
            words.clear();
        };
        for &id in ids {
            match self.out_item(id) {
                OutItem::Word(w) if w < self.vocab.len() => words.push(self.vocab.token(w)),
                OutItem::Word(_) => {
                    flush(&mut words, &mut out);
                    out.push(invalid);
                }
                OutItem::Marker(mk) => {
                    flush(&mut words, &mut out);
                    out.push(Pointer::Marker(mk));
                }
                OutItem::Element(k) => {
                    flush(&mut words, &mut out);
                    out.push(by_key.get(&self.keys.elements[k]).map_or(invalid, |&i| Pointer::Schema(i)));
                }
            }
        }
        flush(&mut words, &mut out);
        out
    }

    /// Frame from BIO labels over the current utterance tokens.
    pub fn frame_from_labels(&self, input: &EncoderInput, table: &ElementTable, labels: &[String], intent: usize) -> StateFrame {
        let mut frame = StateFrame::default();
        if intent > 0 {
            frame.intent = self.keys.intents.get(intent - 1).and_then(|k| element_by_key(table, k));
        }
        for (start, end, key) in crate::metrics::bio_spans(labels) {
            let Some(slot) = element_by_key(table, &key).filter(|&s| table.is_kind(s, ElementKind::Slot)) else {
                continue;
            };
            let text = input.tokens[start + 1..end + 1].join(" ");
            let value = if table.get(slot).is_some_and(|e| e.is_categorical) {
                table.find_value(slot, &text).map(SlotValue::Categorical)
            } else {
                let t = normalize_value(&text);
                (!t.is_empty()).then_some(SlotValue::Text(t))
            };
            if let Some(v) = value {
                frame.slots.insert(slot, v);
            }
        }
        frame
    }
}

fn element_by_key(table: &ElementTable, key: &str) -> Option<usize> {
    let mut parts = key.splitn(3, '/');
    let (svc, kind, name) = (parts.next()?, parts.next()?, parts.next()?);
    match kind {
        "intent" => table.intent(svc, name),
        "slot" => table.slot(svc, name),
        _ => None,
    }
}

fn service_key(table: &ElementTable, si: usize, name: &str) -> String {
    let n = table.elements().iter().filter(|e| e.service == si).count();
    format!("{name}#{n}")
}

struct Search<'a, 'g, 'p, F: Scalar> {
    g: &'g mut Graph<'p, F>,
    model: &'a Model,
    dec: &'a Decoder,
    ctx: DecodeContext,
    table: &'a ElementTable,
    input: &'a EncoderInput,
}

impl<F: Scalar> StepModel for Search<'_, '_, '_, F> {
    type State = (Var, Var);

    fn vocab_size(&self) -> usize {
        self.ctx.candidates
    }

    fn start(&mut self) -> Result<(Var, Var)> {
        Ok((self.ctx.h0, self.ctx.c0))
    }

    fn step(&mut self, state: &(Var, Var), prev: usize, prefix: &[usize]) -> Result<((Var, Var), Vec<f64>)> {
        let (h, c, z) = self.dec.step(self.g, &self.ctx, prev, state.0, state.1)?;
        let logits = self.g.value(z).to_f64_vec();
        let mask = if self.model.cfg.constrained {
            let m = self.table.len();
            let ptrs: Vec<Pointer> = prefix
                .iter()
                .filter_map(|&c| Pointer::from_candidate(c, m, self.input.len()))
                .collect();
            Some(grammar_mask(&ptrs, self.table, self.input))
        } else {
            None
        };
        Ok(((h, c), log_softmax_masked(&logits, mask.as_deref())))
    }
}

/// Probability distribution of one decoding step, for inspection.
pub fn step_distribution<F: Scalar>(g: &Graph<'_, F>, logits: Var) -> Vec<f64> {
    let l = g.value(logits).to_f64_vec();
    log_softmax_masked(&l, None).into_iter().map(f64::exp).collect()
}

/// Copy of a tensor as 64-bit values.
pub fn to_f64<F: Scalar>(t: &Tensor<F>) -> Vec<f64> {
    t.to_f64_vec()
}
