use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gemm, MatView, ParamId, ParamStore, Scalar, Tensor};
use super::params::Gradients;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<F> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    RepeatRows(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { a: Var, inv_std: Vec<F> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
    Dropout { a: Var, mask: Vec<F> },
    AdditiveScores { p: Var, q: Var, r: Var, tanhs: Vec<F> },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Gelu(..) => "gelu",
            Op::SoftmaxRows(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Dropout { .. } => "dropout",
            Op::AdditiveScores { .. } => "additive_scores",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so the record is topologically sorted
/// by construction and `backward` is a single reverse sweep.
pub struct Graph<'p, F: Scalar> {
    store: Option<&'p ParamStore<F>>,
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    bound: HashMap<ParamId, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl<F: Scalar> Graph<'static, F> {
    /// A graph with no parameter store; only leaves and constants.
    pub fn standalone(mode: Mode) -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(store: &'p ParamStore<F>, mode: Mode, seed: u64) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Bind a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) @ op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (m, k) = if ta { (av.cols(), av.rows()) } else { (av.rows(), av.cols()) };
        let (k2, n) = if tb { (bv.cols(), bv.rows()) } else { (bv.rows(), bv.cols()) };
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(
            F::one(),
            MatView::new(av.data(), av.rows(), av.cols(), ta),
            MatView::new(bv.data(), bv.rows(), bv.cols(), tb),
            F::zero(),
            out.data_mut(),
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = F::lit(s);
        let out = self.map(a, |x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// `a + row` with `row` (1 x c) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(Error::shape("add_row", &sa, &sr));
        }
        let mut out = self.nodes[a.0].value.clone();
        let rv = self.nodes[row.0].value.data().to_vec();
        for r in 0..sa[0] {
            for (x, &y) in out.row_mut(r).iter_mut().zip(&rv) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// `a * row` with `row` (1 x c) broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(Error::shape("mul_row", &sa, &sr));
        }
        let mut out = self.nodes[a.0].value.clone();
        let rv = self.nodes[row.0].value.data().to_vec();
        for r in 0..sa[0] {
            for (x, &y) in out.row_mut(r).iter_mut().zip(&rv) {
                *x *= y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::MulRow(a, row), ng))
    }

    /// `a * col` with `col` (r x 1) broadcast over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc[1] != 1 || sc[0] != sa[0] {
            return Err(Error::shape("mul_col", &sa, &sc));
        }
        let mut out = self.nodes[a.0].value.clone();
        let cv = self.nodes[col.0].value.data().to_vec();
        for (r, &c) in cv.iter().enumerate() {
            for x in out.row_mut(r) {
                *x *= c;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::MulCol(a, col), ng))
    }

    /// Stack `n` copies of a single-row tensor.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa[0] != 1 {
            return Err(Error::shape("repeat_rows", &sa, &[1, sa[1]]));
        }
        let row = self.nodes[a.0].value.data().to_vec();
        let mut data = Vec::with_capacity(n * sa[1]);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_vec(n, sa[1], data)?, Op::RepeatRows(a), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| F::one() / (F::one() + (-x).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k, half) = (F::lit(GELU_C), F::lit(GELU_K), F::lit(0.5));
        let out = self.map(a, |x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    /// Max-shifted softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.cols() == 0 {
            return Err(Error::Invalid("softmax over an empty axis".into()));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let (rows, cols) = (av.rows(), av.cols());
        let n = F::lit(cols as f64);
        let eps = F::lit(eps);
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm { a, inv_std }, ng)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.nodes[table.0].value;
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= tv.rows() {
                return Err(Error::shape("gather", &tv.shape(), &[i]));
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_vec(ids.len(), cols, data)?;
        let ng = self.ng(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            if pv.cols() != cols {
                return Err(Error::shape("concat_rows", &[rows, cols], &pv.shape()));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::from_vec(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(Error::shape("concat_cols", &[rows, cols], &s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if start + len > av.rows() {
            return Err(Error::shape("slice_rows", &av.shape(), &[start, len]));
        }
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows { a, start }, ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if start + len > av.cols() {
            return Err(Error::shape("slice_cols", &av.shape(), &[start, len]));
        }
        let mut out = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols { a, start }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().copied().sum::<F>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`, as a 1x1 tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        if lv.rows() != targets.len() {
            return Err(Error::shape("cross_entropy", &lv.shape(), &[targets.len()]));
        }
        let mut probs = lv.data().to_vec();
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= lv.cols() {
                return Err(Error::shape("cross_entropy", &lv.shape(), &[r, t]));
            }
            let row = &mut probs[r * lv.cols()..(r + 1) * lv.cols()];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            total += lse - row[t];
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Inverted dropout in training mode; identity in evaluation mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if self.mode == Mode::Eval || p <= 0.0 {
            return a;
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let n = self.nodes[a.0].value.len();
        let mask: Vec<F> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::Dropout { a, mask }, ng)
    }

    /// Additive scores `out[i][j] = sum_k r[k] * tanh(p[i][k] + q[j][k])`.
    ///
    /// `p` is `n x w`, `q` is `m x w`, `r` is `1 x w`.
    pub fn additive_scores(&mut self, p: Var, q: Var, r: Var) -> Result<Var> {
        let (sp, sq, sr) = (self.shape(p), self.shape(q), self.shape(r));
        if sp[1] != sq[1] {
            return Err(Error::shape("additive_scores", &sp, &sq));
        }
        if sr != [1, sp[1]] {
            return Err(Error::shape("additive_scores", &sr, &[1, sp[1]]));
        }
        let (n, m, w) = (sp[0], sq[0], sp[1]);
        let pv = self.nodes[p.0].value.data();
        let qv = self.nodes[q.0].value.data();
        let rv = self.nodes[r.0].value.data();
        let mut tanhs = vec![F::zero(); n * m * w];
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let pi = &pv[i * w..(i + 1) * w];
            for j in 0..m {
                let qj = &qv[j * w..(j + 1) * w];
                let t = &mut tanhs[(i * m + j) * w..(i * m + j + 1) * w];
                let mut acc = F::zero();
                for k in 0..w {
                    let v = (pi[k] + qj[k]).tanh();
                    t[k] = v;
                    acc += rv[k] * v;
                }
                out.set(i, j, acc);
            }
        }
        let ng = self.ng(p) || self.ng(q) || self.ng(r);
        Ok(self.push(out, Op::AdditiveScores { p, q, r, tanhs }, ng))
    }

    /// First node whose value holds a NaN or infinity, reported by op name.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::NonFinite {
                    op: node.op.name(),
                    node: i,
                });
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(Error::shape("backward (loss must be 1x1)", &s, &[1, 1]));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(F::one()))])
    }

    /// Reverse sweep seeded with explicit output gradients.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Tensor<F>)]) -> Result<()> {
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::shape("backward seed", &self.shape(*v), &g.shape()));
            }
            accumulate(&mut self.grads[v.0], g.data());
        }
        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            propagate(&self.nodes, &mut self.grads, idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward sweep; `None` when no path reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor<F> {
        let [r, c] = self.shape(v);
        match self.grad(v) {
            Some(g) => Tensor::from_vec(r, c, g.to_vec()).expect("sized"),
            None => Tensor::zeros(r, c),
        }
    }

    /// Add parameter gradients of the last sweep into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Gradients<F>) {
        for (&id, &v) in &self.bound {
            if let Some(g) = self.grad(v) {
                for (o, &x) in out.get_mut(id).iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }
}

fn ig<'a, F: Scalar>(
    nodes: &[Node<F>],
    grads: &'a mut [Option<Vec<F>>],
    v: impl std::borrow::Borrow<Var>,
) -> Option<&'a mut Vec<F>> {
    let v = *v.borrow();
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
}

fn propagate<F: Scalar>(nodes: &[Node<F>], grads: &mut [Option<Vec<F>>], idx: usize, g: &[F]) {
let [rows, cols] = nodes[idx].value.shape();
match &nodes[idx].op {
        Op::Leaf | Op::Param => {}
        Op::MatMul { a, b, ta, tb } => {
            let (a, b, ta, tb) = (*a, *b, *ta, *tb);
            let gv = MatView::new(g, rows, cols, false);
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(ga) = ig(nodes, grads, a) {
                if !ta {
                    let bview = MatView::new(bv.data(), bv.rows(), bv.cols(), !tb);
                    gemm(F::one(), gv, bview, F::one(), ga);
                } else {
                    let bview = MatView::new(bv.data(), bv.rows(), bv.cols(), tb);
                    let gt = MatView::new(g, rows, cols, true);
                    gemm(F::one(), bview, gt, F::one(), ga);
                }
            }
            if let Some(gb) = ig(nodes, grads, b) {
                if !tb {
                    let aview = MatView::new(av.data(), av.rows(), av.cols(), !ta);
                    gemm(F::one(), aview, gv, F::one(), gb);
                } else {
                    let aview = MatView::new(av.data(), av.rows(), av.cols(), ta);
                    let gt = MatView::new(g, rows, cols, true);
                    gemm(F::one(), gt, aview, F::one(), gb);
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = ig(nodes, grads, a) {
                add_into(ga, g);
            }
            if let Some(gb) = ig(nodes, grads, b) {
                add_into(gb, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = ig(nodes, grads, a) {
                add_into(ga, g);
            }
            if let Some(gb) = ig(nodes, grads, b) {
                for (x, &y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].value.data();
                let ga = ig(nodes, grads, a).expect("needs grad");
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(bv.iter()) {
                    *x += gi * y;
                }
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].value.data();
                let gb = ig(nodes, grads, b).expect("needs grad");
                for ((x, &gi), &y) in gb.iter_mut().zip(g).zip(av.iter()) {
                    *x += gi * y;
                }
            }
        }
        Op::Scale(a, s) => {
            let s = *s;
            if let Some(ga) = ig(nodes, grads, a) {
                for (x, &gi) in ga.iter_mut().zip(g) {
                    *x += gi * s;
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = ig(nodes, grads, a) {
                add_into(ga, g);
            }
            if let Some(gr) = ig(nodes, grads, row) {
                for r in 0..rows {
                    add_into(gr, &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::MulRow(a, row) => {
            let (a, row) = (*a, *row);
            if nodes[a.0].needs_grad {
                let rv = nodes[row.0].value.data();
                let ga = ig(nodes, grads, a).expect("needs grad");
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[r * cols + c] * rv[c];
                    }
                }
            }
            if nodes[row.0].needs_grad {
                let av = nodes[a.0].value.data();
                let gr = ig(nodes, grads, row).expect("needs grad");
                for r in 0..rows {
                    for c in 0..cols {
                        gr[c] += g[r * cols + c] * av[r * cols + c];
                    }
                }
            }
        }
        Op::MulCol(a, col) => {
            let (a, col) = (*a, *col);
            if nodes[a.0].needs_grad {
                let cv = nodes[col.0].value.data();
                let ga = ig(nodes, grads, a).expect("needs grad");
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[r * cols + c] * cv[r];
                    }
                }
            }
            if nodes[col.0].needs_grad {
                let av = nodes[a.0].value.data();
                let gc = ig(nodes, grads, col).expect("needs grad");
                for r in 0..rows {
                    for c in 0..cols {
                        gc[r] += g[r * cols + c] * av[r * cols + c];
                    }
                }
            }
        }
        Op::RepeatRows(a) => {
            if let Some(ga) = ig(nodes, grads, a) {
                for r in 0..rows {
                    add_into(ga, &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::Tanh(a) => {
            let y = nodes[idx].value.data();
            if let Some(ga) = ig(nodes, grads, a) {
                for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y.iter()) {
                    *x += gi * (F::one() - yi * yi);
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = nodes[idx].value.data();
            if let Some(ga) = ig(nodes, grads, a) {
                for ((x, &gi), &yi) in ga.iter_mut().zip(g).zip(y.iter()) {
                    *x += gi * yi * (F::one() - yi);
                }
            }
        }
        Op::Gelu(a) => {
            let a = *a;
            if nodes[a.0].needs_grad {
                let xs = nodes[a.0].value.data();
                let (c, k, half, three) = (F::lit(GELU_C), F::lit(GELU_K), F::lit(0.5), F::lit(3.0));
                let ga = ig(nodes, grads, a).expect("needs grad");
                for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(xs.iter()) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let d = half * (F::one() + t)
                        + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x);
                    *o += gi * d;
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let y = nodes[idx].value.data();
            if let Some(ga) = ig(nodes, grads, a) {
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..cols {
                        ga[r * cols + c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
        }
        Op::LayerNorm { a, inv_std } => {
            let y = nodes[idx].value.data();
            let n = F::lit(cols as f64);
            if let Some(ga) = ig(nodes, grads, a) {
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mean_g = gr.iter().copied().sum::<F>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum::<F>() / n;
                    for c in 0..cols {
                        ga[r * cols + c] += inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            if let Some(gt) = ig(nodes, grads, table) {
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                if let Some(gp) = ig(nodes, grads, p) {
                    add_into(gp, &g[off..off + len]);
                }
                off += len;
            }
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for &p in parts {
                let pc = nodes[p.0].value.shape()[1];
                if let Some(gp) = ig(nodes, grads, p) {
                    for r in 0..rows {
                        add_into(&mut gp[r * pc..(r + 1) * pc], &g[r * cols + off..r * cols + off + pc]);
                    }
                }
                off += pc;
            }
        }
        Op::SliceRows { a, start } => {
            let start = *start;
            if let Some(ga) = ig(nodes, grads, a) {
                add_into(&mut ga[start * cols..(start + rows) * cols], g);
            }
        }
        Op::SliceCols { a, start } => {
            let start = *start;
            let ac = nodes[a.0].value.shape()[1];
            if let Some(ga) = ig(nodes, grads, a) {
                for r in 0..rows {
                    add_into(&mut ga[r * ac + start..r * ac + start + cols], &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        Op::Transpose(a) => {
            if let Some(ga) = ig(nodes, grads, a) {
                // input is cols x rows
                for r in 0..rows {
                    for c in 0..cols {
                        ga[c * rows + r] += g[r * cols + c];
                    }
                }
            }
        }
        Op::Sum(a) => {
            let s = g[0];
            if let Some(ga) = ig(nodes, grads, a) {
                for x in ga.iter_mut() {
                    *x += s;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let s = g[0];
            let lc = nodes[logits.0].value.shape()[1];
            if let Some(gl) = ig(nodes, grads, logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..lc {
                        let mut d = probs[r * lc + c];
                        if c == t {
                            d -= F::one();
                        }
                        gl[r * lc + c] += s * d;
                    }
                }
            }
        }
        Op::Dropout { a, mask } => {
            if let Some(ga) = ig(nodes, grads, a) {
                for ((x, &gi), &m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += gi * m;
                }
            }
        }
        Op::AdditiveScores { p, q, r, tanhs } => {
            let (p, q, r) = (*p, *q, *r);
            let (n, m) = (rows, cols);
            let w = nodes[p.0].value.shape()[1];
            let rv = nodes[r.0].value.data();
            let mut gp = vec![F::zero(); n * w];
            let mut gq = vec![F::zero(); m * w];
            let mut gr = vec![F::zero(); w];
            for i in 0..n {
                for j in 0..m {
                    let gij = g[i * m + j];
                    if gij == F::zero() {
                        continue;
                    }
                    let t = &tanhs[(i * m + j) * w..(i * m + j + 1) * w];
                    for k in 0..w {
                        gr[k] += gij * t[k];
                        let ds = gij * rv[k] * (F::one() - t[k] * t[k]);
                        gp[i * w + k] += ds;
                        gq[j * w + k] += ds;
                    }
                }
            }
            if let Some(x) = ig(nodes, grads, p) {
                add_into(x, &gp);
            }
            if let Some(x) = ig(nodes, grads, q) {
                add_into(x, &gq);
            }
            if let Some(x) = ig(nodes, grads, r) {
                add_into(x, &gr);
            }
        }
    }
}


fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Vec<F>>, g: &[F]) {
    match slot {
        Some(v) => add_into(v, g),
        None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let i = g.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(2, 2, &[3.0, -1.5, 2.0, 7.0]));
        let out = g.matmul(i, m).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, -1.5, 2.0, 7.0]);

        let a = g.constant(t(1, 2, &[1.0, 2.0]));
        let b = g.constant(t(2, 1, &[3.0, 4.0]));
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_shifted() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let a = g.constant(t(1, 3, &[0.0, 0.0, 0.0]));
        let s = g.softmax_rows(a).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = g.constant(t(1, 2, &[1000.0, 1000.0]));
        let s = g.softmax_rows(b).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let a = g.constant(Tensor::zeros(2, 0));
        assert!(g.softmax_rows(a).is_err());
    }

    #[test]
    fn tanh_is_odd() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let a = g.constant(t(1, 3, &[0.0, 0.7, -0.7]));
        let y = g.tanh(a);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], -v[2]);
    }

    #[test]
    fn backward_sum_and_dot() {
        let mut g = Graph::<f64>::standalone(Mode::Train);
        let x = g.leaf(t(1, 3, &[0.5, -2.0, 3.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::standalone(Mode::Train);
        let x = g.leaf(t(1, 3, &[0.5, -2.0, 3.0]));
        let d = g.matmul_t(x, false, x, true).unwrap();
        g.backward(d).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::standalone(Mode::Train);
        let x = g.leaf(Tensor::zeros(2, 2));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreached_leaf_has_zero_grad() {
        let mut g = Graph::<f64>::standalone(Mode::Train);
        let x = g.leaf(t(1, 2, &[1.0, 2.0]));
        let y = g.leaf(t(1, 2, &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(y).is_none());
        assert_eq!(g.grad_tensor(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let x = g.leaf(t(1, 2, &[1.0, 2.0]));
        assert_eq!(g.dropout(x, 0.5), x);
    }

    #[test]
    fn check_finite_names_operation() {
        let mut g = Graph::<f64>::standalone(Mode::Eval);
        let x = g.constant(t(1, 1, &[f64::MAX]));
        let y = g.scale(x, 10.0);
        let _ = y;
        let err = g.check_finite().unwrap_err().to_string();
        assert!(err.contains("scale"), "{err}");
    }
}
