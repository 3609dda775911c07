//! Utterance and schema encoders: small self-attention stacks trained from
//! scratch, or a BiLSTM of the same output width.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use crate::corpus::tokenize::{CLS, SEP};
use crate::corpus::{EncoderInput, Vocab};
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Lstm, TransformerLayer};
use crate::schema::DescriptionPair;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

const MASKED: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    SelfAttention,
    BiLstm,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self-attention" | "self_attention" | "transformer" => Ok(EncoderKind::SelfAttention),
            "bilstm" => Ok(EncoderKind::BiLstm),
            _ => Err(Error::Config(format!("unknown encoder kind {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::SelfAttention => "self-attention",
            EncoderKind::BiLstm => "bilstm",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub kind: EncoderKind,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.kind == EncoderKind::BiLstm && !self.hidden.is_multiple_of(2) {
            return Err(Error::Config("bilstm encoder needs an even hidden width".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    Attention(Vec<TransformerLayer>),
    BiLstm(Vec<(Lstm, Lstm)>),
}

/// Token, position and segment embeddings followed by the encoder body.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    ln: LayerNorm,
    body: Body,
}

/// Packed input: several independent sequences laid end to end.
#[derive(Clone, Debug, Default)]
pub struct Packed {
    pub ids: Vec<usize>,
    pub pos: Vec<usize>,
    pub seg: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
}

impl Packed {
    pub fn push(&mut self, ids: &[usize], seg: &[usize]) {
        let start = self.ids.len();
        self.ids.extend_from_slice(ids);
        self.pos.extend(0..ids.len());
        self.seg.extend_from_slice(seg);
        self.ranges.push(start..self.ids.len());
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Additive block-diagonal mask; `None` for a single sequence.
    fn mask<F: Scalar>(&self) -> Option<Tensor<F>> {
        if self.ranges.len() <= 1 {
            return None;
        }
        let n = self.len();
        let mut m = Tensor::filled(n, n, F::lit(MASKED));
        for r in &self.ranges {
            for i in r.clone() {
                for j in r.clone() {
                    m.set(i, j, F::zero());
                }
            }
        }
        Some(m)
    }
}

impl Encoder {
    /// `shared_tok` reuses an existing token-embedding table.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: EncoderConfig,
        shared_tok: Option<ParamId>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let tok = match shared_tok {
            Some(t) => t,
            None => store.add_uniform(format!("{name}.tok"), cfg.vocab_size, h, rng),
        };
        let pos = store.add_uniform(format!("{name}.pos"), cfg.max_len, h, rng);
        let seg = store.add_uniform(format!("{name}.seg"), 2, h, rng);
        let ln = LayerNorm::new(store, &format!("{name}.emb_ln"), h);
        let body = match cfg.kind {
            EncoderKind::SelfAttention => Body::Attention(
                (0..cfg.layers)
                    .map(|l| TransformerLayer::new(store, &format!("{name}.l{l}"), h, cfg.heads, rng))
                    .collect(),
            ),
            EncoderKind::BiLstm => Body::BiLstm(
                (0..cfg.layers)
                    .map(|l| {
                        (
                            Lstm::new(store, &format!("{name}.l{l}.fwd"), h, h / 2, rng),
                            Lstm::new(store, &format!("{name}.l{l}.bwd"), h, h / 2, rng),
                        )
                    })
                    .collect(),
            ),
        };
        Ok(Encoder {
            cfg,
            tok,
            pos,
            seg,
            ln,
            body,
        })
    }

    /// Encode packed sequences; output row `i` belongs to input position `i`.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<'_, F>, input: &Packed) -> Result<Var> {
        if input.is_empty() {
            return Err(Error::Invalid("encoder input is empty".into()));
        }
        if let Some(&p) = input.pos.iter().max() {
            if p >= self.cfg.max_len {
                return Err(Error::Truncation {
                    needed: p + 1,
                    max_len: self.cfg.max_len,
                });
            }
        }
        let tok = g.param(self.tok);
        let pos = g.param(self.pos);
        let seg = g.param(self.seg);
        let a = g.gather(tok, &input.ids)?;
        let b = g.gather(pos, &input.pos)?;
        let c = g.gather(seg, &input.seg)?;
        let x = g.add(a, b)?;
        let x = g.add(x, c)?;
        let x = self.ln.forward(g, x)?;
        let mut x = g.dropout(x, self.cfg.dropout);
        match &self.body {
            Body::Attention(layers) => {
                let mask = input.mask::<F>().map(|m| g.constant(m));
                for l in layers {
                    x = l.forward(g, x, mask, self.cfg.dropout)?;
                }
            }
            Body::BiLstm(layers) => {
                for (fwd, bwd) in layers {
                    let mut parts = Vec::with_capacity(input.ranges.len());
                    for r in &input.ranges {
                        let xs = g.slice_rows(x, r.start, r.len())?;
                        let f = fwd.run(g, xs, false)?;
                        let b = bwd.run(g, xs, true)?;
                        parts.push(g.concat_cols(&[f, b])?);
                    }
                    x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
                    x = g.dropout(x, self.cfg.dropout);
                }
            }
        }
        Ok(x)
    }

    /// Encode an utterance input: one row per token.
    pub fn encode_utterance<F: Scalar>(&self, g: &mut Graph<'_, F>, vocab: &Vocab, input: &EncoderInput) -> Result<Var> {
        if input.len() > self.cfg.max_len {
            return Err(Error::Truncation {
                needed: input.len(),
                max_len: self.cfg.max_len,
            });
        }
        let cur = input.current_len();
        let seg: Vec<usize> = (0..input.len()).map(|i| usize::from(i >= cur)).collect();
        let mut p = Packed::default();
        p.push(&vocab.encode(&input.tokens), &seg);
        self.encode(g, &p)
    }

    /// Encode `[CLS] first [SEP] second [SEP]` per pair. Row `j` of the
    /// returned matrix is pair `j`'s final [CLS] row; with `want_tokens`, the
    /// rows of each pair's description tokens are returned too.
    pub fn encode_pairs<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        vocab: &Vocab,
        pairs: &[&DescriptionPair],
        want_tokens: bool,
        chunk_rows: usize,
    ) -> Result<(Var, Vec<Var>)> {
        if pairs.is_empty() {
            return Err(Error::Invalid("no schema elements to encode".into()));
        }
        let seqs: Vec<(Vec<usize>, Vec<usize>, usize)> = pairs.iter().map(|p| self.pair_ids(vocab, p)).collect();
        let mut cls_rows = Vec::new();
        let mut tokens = Vec::new();
        let mut i = 0;
        while i < seqs.len() {
            let mut packed = Packed::default();
            let mut members = Vec::new();
            while i < seqs.len() && (packed.is_empty() || packed.len() + seqs[i].0.len() <= chunk_rows) {
                packed.push(&seqs[i].0, &seqs[i].1);
                members.push(i);
                i += 1;
            }
            let out = self.encode(g, &packed)?;
            let starts: Vec<usize> = packed.ranges.iter().map(|r| r.start).collect();
            cls_rows.push(g.gather(out, &starts)?);
            if want_tokens {
                for (k, &m) in members.iter().enumerate() {
                    let r = &packed.ranges[k];
                    // description tokens only: drop [CLS] and both [SEP]s
                    let sep = seqs[m].2;
                    let mut rows: Vec<usize> = (r.start + 1..r.start + sep).collect();
                    rows.extend(r.start + sep + 1..r.end - 1);
                    if rows.is_empty() {
                        return Err(Error::Invalid(format!("schema element {m} has no description tokens")));
                    }
                    tokens.push(g.gather(out, &rows)?);
                }
            }
        }
        let e = if cls_rows.len() == 1 { cls_rows[0] } else { g.concat_rows(&cls_rows)? };
        Ok((e, tokens))
    }

    /// Ids and segments of one pair, clipped to `max_len`; the third value
    /// is the position of the first [SEP].
    fn pair_ids(&self, vocab: &Vocab, p: &DescriptionPair) -> (Vec<usize>, Vec<usize>, usize) {
        let budget = self.cfg.max_len - 3;
        let a_len = p.first.len().min(budget - p.second.len().min(budget / 2));
        let b_len = p.second.len().min(budget - a_len);
        let mut ids = vec![vocab.id(CLS)];
        ids.extend(p.first[..a_len].iter().map(|t| vocab.id(t)));
        let sep = ids.len();
        ids.push(vocab.id(SEP));
        ids.extend(p.second[..b_len].iter().map(|t| vocab.id(t)));
        ids.push(vocab.id(SEP));
        let seg = (0..ids.len()).map(|i| usize::from(i > sep)).collect();
        (ids, seg, sep)
    }
}

/// Element encodings of one service and the token encodings of each element.
pub type ServiceEncoding<F> = (Tensor<F>, Vec<Tensor<F>>);

/// Eval-mode schema encodings keyed by service, tied to one parameter
/// version.
#[derive(Clone, Debug)]
pub struct SchemaCache<F> {
    version: Option<u64>,
    entries: HashMap<String, ServiceEncoding<F>>,
    encode_calls: usize,
}

impl<F: Scalar> Default for SchemaCache<F> {
    fn default() -> Self {
        SchemaCache {
            version: None,
            entries: HashMap::new(),
            encode_calls: 0,
        }
    }
}

impl<F: Scalar> SchemaCache<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of times `encode` has actually run.
    pub fn encode_calls(&self) -> usize {
        self.encode_calls
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached entry for `key`; errors when the parameters have changed since
    /// the cache was filled.
    pub fn get(&self, key: &str, store: &ParamStore<F>) -> Result<Option<&ServiceEncoding<F>>> {
        if let Some(v) = self.version {
            if v != store.version() && !self.entries.is_empty() {
                return Err(Error::StaleCache {
                    cached: v,
                    current: store.version(),
                });
            }
        }
        Ok(self.entries.get(key))
    }

    /// Cached entry for `key`, running `encode` on a miss. A parameter
    /// update since the last fill empties the cache first.
    pub fn get_or_encode(
        &mut self,
        key: &str,
        store: &ParamStore<F>,
        encode: impl FnOnce() -> Result<ServiceEncoding<F>>,
    ) -> Result<&ServiceEncoding<F>> {
        if self.version != Some(store.version()) {
            self.entries.clear();
            self.version = Some(store.version());
        }
        if !self.entries.contains_key(key) {
            let v = encode()?;
            self.encode_calls += 1;
            self.entries.insert(key.to_string(), v);
        }
        Ok(&self.entries[key])
    }
}
