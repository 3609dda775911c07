//! Parameterized building blocks recorded onto a [`Graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.add_zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add_filled(format!("{name}.gain"), 1, width, 1.0),
            bias: store.add_zeros(format!("{name}.bias"), 1, width),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, 1e-5);
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Single-layer LSTM cell with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input: Linear,
    pub recur: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let lin = Linear::new(store, &format!("{name}.x"), input, 4 * hidden, true, rng);
        // forget-gate bias of 1 keeps early gradients alive
        let b = lin.b.expect("bias");
        for v in &mut store.get_mut(b).data_mut()[hidden..2 * hidden] {
            *v = F::one();
        }
        let recur = store.add_uniform(format!("{name}.h"), hidden, 4 * hidden, rng);
        Lstm {
            input: lin,
            recur,
            hidden,
        }
    }

    /// One step given the input projection `xw` (1 x 4h, bias included).
    pub fn step<F: Scalar>(&self, g: &mut Graph<'_, F>, xw: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let u = g.param(self.recur);
        let hu = g.matmul(h, u)?;
        let gates = g.add(xw, hu)?;
        self.gates(g, gates, c)
    }

    pub fn gates<F: Scalar>(&self, g: &mut Graph<'_, F>, gates: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let i = g.slice_cols(gates, 0, n)?;
        let f = g.slice_cols(gates, n, n)?;
        let z = g.slice_cols(gates, 2 * n, n)?;
        let o = g.slice_cols(gates, 3 * n, n)?;
        let (i, f, z, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(z), g.sigmoid(o));
        let keep = g.mul(f, c)?;
        let write = g.mul(i, z)?;
        let c2 = g.add(keep, write)?;
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Run over the rows of `x` from zero state; returns one hidden row per
    /// input row, in input order.
    pub fn run<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, reverse: bool) -> Result<Var> {
        let n = g.shape(x)[0];
        let xw = self.input.forward(g, x)?;
        let mut h = g.constant(Tensor::zeros(1, self.hidden));
        let mut c = g.constant(Tensor::zeros(1, self.hidden));
        let mut out = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xt = g.slice_rows(xw, t, 1)?;
            (h, c) = self.step(g, xt, h, c)?;
            out[t] = h;
        }
        g.concat_rows(&out)
    }
}

/// Additive attention `score_k = v . tanh(W_q q + W_k key_k)` followed by a
/// softmax-weighted sum of values.
#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub v: ParamId,
}

impl AdditiveAttention {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize, att: usize, rng: &mut impl Rng) -> Self {
        AdditiveAttention {
            wq: store.add_uniform(format!("{name}.wq"), width, att, rng),
            wk: store.add_uniform(format!("{name}.wk"), width, att, rng),
            v: store.add_uniform(format!("{name}.v"), 1, att, rng),
        }
    }

    /// `keys W_k`, computed once and reused across queries.
    pub fn project_keys<F: Scalar>(&self, g: &mut Graph<'_, F>, keys: Var) -> Result<Var> {
        let wk = g.param(self.wk);
        g.matmul(keys, wk)
    }

    /// Attention weights (rows of queries by keys) from projected keys.
    pub fn weights<F: Scalar>(&self, g: &mut Graph<'_, F>, queries: Var, keys_proj: Var) -> Result<Var> {
        if g.shape(keys_proj)[0] == 0 {
            return Err(Error::Invalid("attention over zero keys".into()));
        }
        let wq = g.param(self.wq);
        let q = g.matmul(queries, wq)?;
        let v = g.param(self.v);
        let s = g.additive_scores(q, keys_proj, v)?;
        g.softmax_rows(s)
    }

    /// Context rows: one per query row.
    pub fn attend<F: Scalar>(&self, g: &mut Graph<'_, F>, queries: Var, keys_proj: Var, values: Var) -> Result<Var> {
        let w = self.weights(g, queries, keys_proj)?;
        g.matmul(w, values)
    }
}

/// Post-norm transformer block with GELU feed-forward.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub qkv: Linear,
    pub out: Linear,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub heads: usize,
}

impl TransformerLayer {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        TransformerLayer {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, true, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, true, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, 4 * width, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * width, width, true, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width),
            heads,
        }
    }

    /// `mask` is an additive `n x n` constant (0 or a large negative).
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, mask: Option<Var>, dropout: f64) -> Result<Var> {
        let [_, w] = g.shape(x);
        let dh = w / self.heads;
        let qkv = self.qkv.forward(g, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.slice_cols(qkv, h * dh, dh)?;
            let k = g.slice_cols(qkv, w + h * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * w + h * dh, dh)?;
            let s = g.matmul_t(q, false, k, true)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let p = g.softmax_rows(s)?;
            heads.push(g.matmul(p, v)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let a = self.out.forward(g, cat)?;
        let a = g.dropout(a, dropout);
        let r = g.add(x, a)?;
        let x = self.ln1.forward(g, r)?;
        let f = self.ff1.forward(g, x)?;
        let f = g.gelu(f);
        let f = self.ff2.forward(g, f)?;
        let f = g.dropout(f, dropout);
        let r = g.add(x, f)?;
        self.ln2.forward(g, r)
    }
}
