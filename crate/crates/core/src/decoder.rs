//! LSTM state decoder with pointer generation, beam search, and the
//! sequence-labeling head.

use rand::Rng;

use crate::corpus::tokenize::is_reserved;
use crate::corpus::{EncoderInput, Marker, Pointer};
use crate::error::{Error, Result};
use crate::layers::{AdditiveAttention, Linear, Lstm};
use crate::schema::{ElementKind, ElementTable};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// How the decoder scores its next output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// Additive scores against markers, schema elements and tokens.
    Pointer,
    /// Linear softmax over a fixed output vocabulary of the given size.
    Vocabulary(usize),
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub hidden: usize,
    pub dropout: f64,
    pub output: OutputKind,
    pub markers: Option<ParamId>,
    out_emb: Option<ParamId>,
    out_lin: Option<Linear>,
    lstm: Lstm,
    init_h: Linear,
    init_c: Linear,
    attn_u: AdditiveAttention,
    attn_s: AdditiveAttention,
    pub q: Option<ParamId>,
    pub u1: Option<ParamId>,
    pub u2: Option<ParamId>,
}

/// Per-example tensors shared by all decoding steps.
#[derive(Clone, Copy, Debug)]
pub struct DecodeContext {
    u: Var,
    s: Var,
    u_keys: Var,
    s_keys: Var,
    /// Candidate representations `k_w` (pointer output only).
    pub k: Option<Var>,
    k_proj: Option<Var>,
    w_prev: Var,
    w_ctx: Var,
    bias: Var,
    pub h0: Var,
    pub c0: Var,
    pub candidates: usize,
}

impl Decoder {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        hidden: usize,
        att: usize,
        dropout: f64,
        output: OutputKind,
        rng: &mut impl Rng,
    ) -> Self {
        let h = hidden;
        let (markers, out_emb, out_lin, q, u1, u2) = match output {
            OutputKind::Pointer => (
                Some(store.add_uniform(format!("{name}.markers"), Marker::COUNT, h, rng)),
                None,
                None,
                Some(store.add_uniform(format!("{name}.q"), 1, att, rng)),
                Some(store.add_uniform(format!("{name}.u1"), h, att, rng)),
                Some(store.add_uniform(format!("{name}.u2"), h, att, rng)),
            ),
            OutputKind::Vocabulary(v) => (
                None,
                Some(store.add_uniform(format!("{name}.out_emb"), v, h, rng)),
                Some(Linear::new(store, &format!("{name}.out"), h, v, true, rng)),
                None,
                None,
                None,
            ),
        };
        Decoder {
            hidden,
            dropout,
            output,
            markers,
            out_emb,
            out_lin,
            lstm: Lstm::new(store, &format!("{name}.lstm"), 3 * h, h, rng),
            init_h: Linear::new(store, &format!("{name}.init_h"), h, h, true, rng),
            init_c: Linear::new(store, &format!("{name}.init_c"), h, h, true, rng),
            attn_u: AdditiveAttention::new(store, &format!("{name}.attn_u"), h, att, rng),
            attn_s: AdditiveAttention::new(store, &format!("{name}.attn_s"), h, att, rng),
            q,
            u1,
            u2,
        }
    }

    /// `u` holds utterance rows (row 0 is [CLS]); `s` holds schema rows.
    pub fn context<F: Scalar>(&self, g: &mut Graph<'_, F>, u: Var, s: Var) -> Result<DecodeContext> {
        let h = self.hidden;
        let (su, ss) = (g.shape(u), g.shape(s));
        if su[1] != h || ss[1] != h {
            return Err(Error::shape("decoder context", &su, &ss));
        }
        if su[0] == 0 || ss[0] == 0 {
            return Err(Error::Invalid("decoder needs at least one utterance and one schema row".into()));
        }
        let u_keys = self.attn_u.project_keys(g, u)?;
        let s_keys = self.attn_s.project_keys(g, s)?;
        let (k, k_proj, candidates) = match self.output {
            OutputKind::Pointer => {
                let m = g.param(self.markers.expect("pointer decoder"));
                let k = g.concat_rows(&[m, s, u])?;
                let u2 = g.param(self.u2.expect("pointer decoder"));
                let kp = g.matmul(k, u2)?;
                (Some(k), Some(kp), Marker::COUNT + ss[0] + su[0])
            }
            OutputKind::Vocabulary(v) => (None, None, v),
        };
        let w = g.param(self.lstm.input.w);
        let w_prev = g.slice_rows(w, 0, h)?;
        let w_ctx = g.slice_rows(w, h, 2 * h)?;
        let bias = g.param(self.lstm.input.b.expect("lstm bias"));
        let cls = g.slice_rows(u, 0, 1)?;
        let h0 = self.init_h.forward(g, cls)?;
        let h0 = g.tanh(h0);
        let c0 = self.init_c.forward(g, cls)?;
        Ok(DecodeContext {
            u,
            s,
            u_keys,
            s_keys,
            k,
            k_proj,
            w_prev,
            w_ctx,
            bias,
            h0,
            c0,
            candidates,
        })
    }

    /// Representations of previous items (candidate or output-vocabulary ids).
    pub fn prev_reprs<F: Scalar>(&self, g: &mut Graph<'_, F>, ctx: &DecodeContext, ids: &[usize]) -> Result<Var> {
        match self.output {
            OutputKind::Pointer => g.gather(ctx.k.expect("pointer context"), ids),
            OutputKind::Vocabulary(_) => {
                let t = g.param(self.out_emb.expect("vocabulary decoder"));
                g.gather(t, ids)
            }
        }
    }

    /// Context vectors and the recurrent update. `xw` is the projected
    /// previous-item row (bias included).
    fn recur<F: Scalar>(&self, g: &mut Graph<'_, F>, ctx: &DecodeContext, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let u_t = self.attn_u.attend(g, h, ctx.u_keys, ctx.u)?;
        let s_t = self.attn_s.attend(g, h, ctx.s_keys, ctx.s)?;
        let us = g.concat_cols(&[u_t, s_t])?;
        let cw = g.matmul(us, ctx.w_ctx)?;
        let x = g.add(xw, cw)?;
        self.lstm.step(g, x, h, c)
    }

    /// Output logits for each row of hidden states.
    pub fn logits<F: Scalar>(&self, g: &mut Graph<'_, F>, ctx: &DecodeContext, hs: Var) -> Result<Var> {
        match self.output {
            OutputKind::Pointer => {
                let u1 = g.param(self.u1.expect("pointer decoder"));
                let q = g.param(self.q.expect("pointer decoder"));
                let p = g.matmul(hs, u1)?;
                g.additive_scores(p, ctx.k_proj.expect("pointer context"), q)
            }
            OutputKind::Vocabulary(_) => self.out_lin.as_ref().expect("vocabulary decoder").forward(g, hs),
        }
    }

    /// One decoding step from `prev` (a candidate or output id).
    pub fn step<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        ctx: &DecodeContext,
        prev: usize,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var, Var)> {
        if prev >= ctx.candidates {
            return Err(Error::shape("decode_step", &[prev], &[ctx.candidates]));
        }
        let r = self.prev_reprs(g, ctx, &[prev])?;
        let xw = g.matmul(r, ctx.w_prev)?;
        let xw = g.add_row(xw, ctx.bias)?;
        let (h, c) = self.recur(g, ctx, xw, h, c)?;
        let z = self.logits(g, ctx, h)?;
        Ok((h, c, z))
    }

    /// Mean over steps of `-log P(target[t] | target[..t])`; `target[0]` is
    /// the start symbol and is not scored.
    pub fn teacher_forced_loss<F: Scalar>(&self, g: &mut Graph<'_, F>, ctx: &DecodeContext, target: &[usize]) -> Result<Var> {
        if target.len() < 2 {
            return Err(Error::Invalid("target needs a start symbol and at least one item".into()));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= ctx.candidates) {
            return Err(Error::shape("teacher_forced_loss", &[bad], &[ctx.candidates]));
        }
        let steps = target.len() - 1;
        let prev = self.prev_reprs(g, ctx, &target[..steps])?;
        let prev = g.dropout(prev, self.dropout);
        let xw = g.matmul(prev, ctx.w_prev)?;
        let xw = g.add_row(xw, ctx.bias)?;
        let (mut h, mut c) = (ctx.h0, ctx.c0);
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = g.slice_rows(xw, t, 1)?;
            (h, c) = self.recur(g, ctx, x, h, c)?;
            hs.push(h);
        }
        let hs = g.concat_rows(&hs)?;
        let z = self.logits(g, ctx, hs)?;
        let ce = g.cross_entropy(z, &target[1..])?;
        Ok(g.scale(ce, 1.0 / steps as f64))
    }
}

/// Search problem for [`beam_search`].
pub trait StepModel {
    type State: Clone;
    fn vocab_size(&self) -> usize;
    fn start(&mut self) -> Result<Self::State>;
    /// Next state and log-probabilities over the vocabulary after `prev`.
    /// `prefix` lists the items emitted so far. Entries of `-inf` are never
    /// expanded.
    fn step(&mut self, state: &Self::State, prev: usize, prefix: &[usize]) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    /// Emitted items, ending in the end symbol unless force-terminated.
    pub seq: Vec<usize>,
    pub log_prob: f64,
}

struct Hyp<S> {
    seq: Vec<usize>,
    lp: f64,
    state: S,
}

/// Beam search by total log-probability without length normalization.
/// Hypotheses end at `eos` or after `max_len` items. Ties prefer the earlier
/// completion, then the lexically smaller sequence.
pub fn beam_search<M: StepModel>(model: &mut M, bos: usize, eos: usize, beam: usize, max_len: usize) -> Result<BeamResult> {
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut live = vec![Hyp {
        seq: Vec::new(),
        lp: 0.0,
        state: model.start()?,
    }];
    // (log prob, completion step, sequence)
    let mut done: Vec<(f64, usize, Vec<usize>)> = Vec::new();
    for step in 1..=max_len {
        let mut expanded = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let prev = h.seq.last().copied().unwrap_or(bos);
            let (st, lps) = model.step(&h.state, prev, &h.seq)?;
            for (c, &lp) in lps.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((h.lp + lp, hi, c));
                }
            }
            expanded.push(st);
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.1].seq.cmp(&live[b.1].seq))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(beam);
        let mut next = Vec::new();
        for (lp, hi, c) in cands {
            let mut seq = live[hi].seq.clone();
            seq.push(c);
            if c == eos || step == max_len {
                done.push((lp, step, seq));
            } else {
                next.push(Hyp {
                    seq,
                    lp,
                    state: expanded[hi].clone(),
                });
            }
        }
        live = next;
        let best_done = done.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.lp).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_done >= best_live {
            break;
        }
    }
    done.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    let (log_prob, _, seq) = done
        .into_iter()
        .next()
        .ok_or_else(|| Error::Invalid("beam search produced no hypothesis".into()))?;
    Ok(BeamResult { seq, log_prob })
}

/// Log-softmax in 64-bit with disallowed entries set to `-inf`.
pub fn log_softmax_masked(logits: &[f64], allowed: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| ok(i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; logits.len()];
    }
    let lse = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| ok(i))
        .map(|(_, &x)| (x - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if ok(i) { x - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Candidates allowed after `prefix` (emitted items after BOS) by the
/// pointer-sequence grammar.
pub fn grammar_mask(prefix: &[Pointer], table: &ElementTable, input: &EncoderInput) -> Vec<bool> {
    let m = table.len();
    let n = input.len();
    let mut allowed = vec![false; Marker::COUNT + m + n];
    let set = |a: &mut Vec<bool>, p: Pointer| a[p.candidate(m)] = true;

    enum S {
        Open,
        Pairs,
        Value(usize),
        Span(usize),
        Sep,
    }
    let mut st = S::Open;
    let mut used = vec![false; m];
    for &p in prefix {
        st = match (st, p) {
            (S::Open | S::Pairs, Pointer::Schema(i)) if table.is_kind(i, ElementKind::Intent) => S::Pairs,
            (S::Open | S::Pairs, Pointer::Schema(s)) => {
                if s < m {
                    used[s] = true;
                }
                S::Value(s)
            }
            (S::Value(_), Pointer::Token(t)) | (S::Span(_), Pointer::Token(t)) => S::Span(t + 1),
            (S::Value(_), Pointer::Schema(_)) => S::Sep,
            (S::Span(_), Pointer::Marker(Marker::ValueEnd)) => S::Sep,
            (S::Sep, Pointer::Marker(Marker::PairSep)) => S::Pairs,
            (s, _) => s,
        };
    }
    let slots = |a: &mut Vec<bool>| {
        for (i, e) in table.elements().iter().enumerate() {
            if e.kind == ElementKind::Slot && !used[i] {
                a[Pointer::Schema(i).candidate(m)] = true;
            }
        }
    };
    match st {
        S::Open => {
            for (i, e) in table.elements().iter().enumerate() {
                if e.kind == ElementKind::Intent {
                    set(&mut allowed, Pointer::Schema(i));
                }
            }
            slots(&mut allowed);
            set(&mut allowed, Pointer::Marker(Marker::Eos));
        }
        S::Pairs => {
            slots(&mut allowed);
            set(&mut allowed, Pointer::Marker(Marker::Eos));
        }
        S::Value(s) => {
            if table.get(s).is_some_and(|e| e.is_categorical) {
                for &v in table.values_of(s) {
                    set(&mut allowed, Pointer::Schema(v));
                }
            } else {
                for (t, tok) in input.tokens.iter().enumerate() {
                    if !is_reserved(tok) {
                        set(&mut allowed, Pointer::Token(t));
                    }
                }
            }
        }
        S::Span(next) => {
            if next < n && !is_reserved(&input.tokens[next]) {
                set(&mut allowed, Pointer::Token(next));
            }
            set(&mut allowed, Pointer::Marker(Marker::ValueEnd));
        }
        S::Sep => set(&mut allowed, Pointer::Marker(Marker::PairSep)),
    }
    if !allowed.iter().any(|&a| a) {
        set(&mut allowed, Pointer::Marker(Marker::Eos));
    }
    allowed
}

/// Per-token BIO labels over slot keys plus an intent decision from [CLS].
#[derive(Clone, Debug)]
pub struct SeqLabelHead {
    lstm: Lstm,
    labels: Linear,
    intent: Linear,
    pub num_labels: usize,
    pub num_intents: usize,
}

impl SeqLabelHead {
    /// `num_slots` slot keys give `1 + 2 * num_slots` labels; intents get an
    /// extra class 0 for none.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        hidden: usize,
        num_slots: usize,
        num_intents: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let num_labels = 1 + 2 * num_slots;
        SeqLabelHead {
            lstm: Lstm::new(store, &format!("{name}.lstm"), hidden, hidden, rng),
            labels: Linear::new(store, &format!("{name}.labels"), hidden, num_labels, true, rng),
            intent: Linear::new(store, &format!("{name}.intent"), hidden, num_intents + 1, true, rng),
            num_labels,
            num_intents: num_intents + 1,
        }
    }

    /// Label logits (one row per utterance token) and intent logits (1 row).
    /// `d` is the encoder output of `[CLS] tokens [SEP]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, d: Var, num_tokens: usize) -> Result<(Var, Var)> {
        if num_tokens == 0 || g.shape(d)[0] < num_tokens + 1 {
            return Err(Error::shape("seqlabel", &g.shape(d), &[num_tokens + 2]));
        }
        let x = g.slice_rows(d, 1, num_tokens)?;
        let hs = self.lstm.run(g, x, false)?;
        let labels = self.labels.forward(g, hs)?;
        let cls = g.slice_rows(d, 0, 1)?;
        let intent = self.intent.forward(g, cls)?;
        Ok((labels, intent))
    }

    pub fn loss<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        d: Var,
        labels: &[usize],
        intent: usize,
    ) -> Result<Var> {
        let (zl, zi) = self.forward(g, d, labels.len())?;
        let a = g.cross_entropy(zl, labels)?;
        let b = g.cross_entropy(zi, &[intent])?;
        let s = g.add(a, b)?;
        Ok(g.scale(s, 1.0 / (labels.len() + 1) as f64))
    }
}

/// Row-wise argmax of a matrix.
pub fn argmax_rows<F: Scalar>(t: &Tensor<F>) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
