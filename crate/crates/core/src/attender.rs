//! Bidirectional utterance-schema attention.
//!
//! With `D` (`N x h`, one row per token) and `E` (`M x h`, one row per schema
//! element), the similarity matrix `A` is `N x M`. Row-normalizing gives
//! `Ā`, column-normalizing gives `Ã`, and the fused representations are
//! `D_a = Ā E` (`N x h`) and `E_a = Ãᵀ D` (`M x h`).

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::AdditiveAttention;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    Overall,
    Token,
    /// Plain `D` and `E` go to the decoder.
    None,
    /// `D` with `E_a`.
    SchemaOnly,
    /// `D_a` with `E`.
    UtteranceOnly,
}

impl AttentionVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "overall" => AttentionVariant::Overall,
            "token" => AttentionVariant::Token,
            "none" => AttentionVariant::None,
            "schema_only" => AttentionVariant::SchemaOnly,
            "utterance_only" => AttentionVariant::UtteranceOnly,
            _ => return Err(Error::Config(format!("unknown attention variant {s:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Overall => "overall",
            AttentionVariant::Token => "token",
            AttentionVariant::None => "none",
            AttentionVariant::SchemaOnly => "schema_only",
            AttentionVariant::UtteranceOnly => "utterance_only",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub a: Var,
    pub a_row: Var,
    pub a_col: Var,
    pub d_a: Var,
    pub e_a: Var,
}

#[derive(Clone, Debug)]
pub struct Attender {
    pub w1: ParamId,
    pub w2: ParamId,
    pub r: ParamId,
    pub token_attn: Option<AdditiveAttention>,
}

impl Attender {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        att: usize,
        token_level: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Attender {
            w1: store.add_uniform(format!("{name}.w1"), width, att, rng),
            w2: store.add_uniform(format!("{name}.w2"), width, att, rng),
            r: store.add_uniform(format!("{name}.r"), 1, att, rng),
            token_attn: token_level.then(|| AdditiveAttention::new(store, &format!("{name}.tok"), width, att, rng)),
        }
    }

    /// `A[i][j] = r . tanh(W_1 d_i + W_2 e_j)`.
    pub fn similarity_overall<F: Scalar>(&self, g: &mut Graph<'_, F>, d: Var, e: Var) -> Result<Var> {
        let (sd, se) = (g.shape(d), g.shape(e));
        if sd[1] != se[1] {
            return Err(Error::shape("similarity_overall", &sd, &se));
        }
        let (w1, w2, r) = (g.param(self.w1), g.param(self.w2), g.param(self.r));
        let p = g.matmul(d, w1)?;
        let q = g.matmul(e, w2)?;
        g.additive_scores(p, q, r)
    }

    /// Token-level similarity: element `j` is represented, for token `i`, by
    /// the attention-weighted sum of its description tokens `T_j` under the
    /// query `d_i`.
    pub fn similarity_token<F: Scalar>(&self, g: &mut Graph<'_, F>, d: Var, tokens: &[Var]) -> Result<Var> {
        let attn = self
            .token_attn
            .as_ref()
            .ok_or_else(|| Error::Config("attender was built without token-level attention".into()))?;
        if tokens.is_empty() {
            return Err(Error::Invalid("token-level attention over zero schema elements".into()));
        }
        let (w1, w2, r) = (g.param(self.w1), g.param(self.w2), g.param(self.r));
        let p = g.matmul(d, w1)?;
        let mut cols = Vec::with_capacity(tokens.len());
        for (j, &t) in tokens.iter().enumerate() {
            if g.shape(t)[0] == 0 {
                return Err(Error::Invalid(format!("schema element {j} has no tokens")));
            }
            let kp = attn.project_keys(g, t)?;
            let e_j = attn.attend(g, d, kp, t)?;
            let q = g.matmul(e_j, w2)?;
            let s = g.add(p, q)?;
            let s = g.tanh(s);
            cols.push(g.matmul_t(s, false, r, true)?);
        }
        g.concat_cols(&cols)
    }

    /// Normalize `a` by rows and by columns and mix `d` and `e` with it.
    pub fn fuse<F: Scalar>(g: &mut Graph<'_, F>, a: Var, d: Var, e: Var) -> Result<Fused> {
        let [n, m] = g.shape(a);
        if n == 0 || m == 0 {
            return Err(Error::Invalid(format!("cannot fuse an empty {n}x{m} attention matrix")));
        }
        if g.shape(d)[0] != n || g.shape(e)[0] != m {
            return Err(Error::shape("fuse", &[n, m], &[g.shape(d)[0], g.shape(e)[0]]));
        }
        let a_row = g.softmax_rows(a)?;
        let at = g.transpose(a);
        let a_col_t = g.softmax_rows(at)?;
        let a_col = g.transpose(a_col_t);
        let d_a = g.matmul(a_row, e)?;
        let e_a = g.matmul(a_col_t, d)?;
        Ok(Fused {
            a,
            a_row,
            a_col,
            d_a,
            e_a,
        })
    }

    /// Utterance and schema representations handed to the decoder.
    pub fn apply<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        variant: AttentionVariant,
        d: Var,
        e: Var,
        tokens: &[Var],
    ) -> Result<(Var, Var)> {
        let a = match variant {
            AttentionVariant::None => return Ok((d, e)),
            AttentionVariant::Token => self.similarity_token(g, d, tokens)?,
            _ => self.similarity_overall(g, d, e)?,
        };
        let f = Self::fuse(g, a, d, e)?;
        Ok(match variant {
            AttentionVariant::SchemaOnly => (d, f.e_a),
            AttentionVariant::UtteranceOnly => (f.d_a, e),
            _ => (f.d_a, f.e_a),
        })
    }
}
