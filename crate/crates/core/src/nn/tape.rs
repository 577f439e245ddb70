//! Per-forward reverse-mode tape over the small fixed op set the models need.
//!
//! A tape borrows parameter values read-only; `backward` accumulates into a
//! separate gradient slice so many tapes can run against one `ParamSet`.

use rand::Rng;

use super::ops::{self, axpy, dot, matvec, matvec_t_acc, outer_acc, PROB_FLOOR};
use super::params::ParamId;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, row: usize },
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    AffineRows { w: ParamId, x: Var, rows: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Stack(Vec<Var>),
    Tanh(Var),
    Add(Var, Var),
    Lstm { w: ParamId, b: ParamId, x: Var, h: Var, c: Var, step: Box<ops::LstmStep> },
    RowDot { m: Var, v: Var },
    WeightedRows { p: Var, m: Var },
    Softmax(Var),
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    LogProb { logits: Var, index: usize, probs: Vec<f64> },
    Scaled(Vec<(Var, f64)>),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn param_value(&self, id: ParamId) -> &'p [f64] {
        self.params[id.0].values()
    }

    fn param_cols(&self, id: ParamId) -> usize {
        self.params[id.0].shape2().1
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// Whole parameter as a node value.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.param_value(id).to_vec();
        self.push(value, Op::Param(id))
    }

    /// One row of an embedding table.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let cols = self.param_cols(table);
        let value = self.param_value(table)[row * cols..(row + 1) * cols].to_vec();
        self.push(value, Op::Embed { table, row })
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let cols = self.param_cols(w);
        let wv = self.param_value(w);
        assert_eq!(self.value(x).len(), cols, "affine input width");
        let mut out = vec![0.0; wv.len() / cols];
        matvec(wv, cols, self.value(x), &mut out);
        if let Some(b) = b {
            for (o, bias) in out.iter_mut().zip(self.param_value(b)) {
                *o += bias;
            }
        }
        self.push(out, Op::Affine { w, b, x })
    }

    /// Applies `W` to each row of a row-major `rows x cols` matrix node.
    pub fn affine_rows(&mut self, w: ParamId, x: Var, rows: usize) -> Var {
        let cols = self.param_cols(w);
        let wv = self.param_value(w);
        let out_dim = wv.len() / cols;
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "affine_rows input shape");
        let mut out = vec![0.0; rows * out_dim];
        for (src, dst) in xv.chunks_exact(cols).zip(out.chunks_exact_mut(out_dim)) {
            matvec(wv, cols, src, dst);
        }
        self.push(out, Op::AffineRows { w, x, rows })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x)[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    /// Stacks equal-width vectors into a row-major matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of zero rows");
        let width = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(width * rows.len());
        for r in rows {
            assert_eq!(self.value(*r).len(), width, "stack row width");
            out.extend_from_slice(self.value(*r));
        }
        self.push(out, Op::Stack(rows.to_vec()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(value, Op::Tanh(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(value, Op::Add(a, b))
    }

    /// One LSTM step returning `(h', c')`.
    pub fn lstm(&mut self, w: ParamId, b: ParamId, x: Var, h: Var, c: Var) -> (Var, Var) {
        let dh = self.value(h).len();
        assert_eq!(self.param_cols(w), self.value(x).len() + dh, "lstm input width");
        let step = ops::lstm_forward(
            self.param_value(w),
            self.param_value(b),
            self.value(x),
            self.value(h),
            self.value(c),
        );
        let mut out = Vec::with_capacity(2 * dh);
        out.extend_from_slice(&step.h);
        out.extend_from_slice(&step.c);
        let joint = self.push(out, Op::Lstm { w, b, x, h, c, step: Box::new(step) });
        (self.slice(joint, 0, dh), self.slice(joint, dh, dh))
    }

    /// `out_j = <row_j(m), v>` for a row-major matrix node `m`.
    pub fn row_dot(&mut self, m: Var, v: Var) -> Var {
        let vv = self.value(v);
        let width = vv.len();
        let value = self.value(m).chunks_exact(width).map(|row| dot(row, vv)).collect();
        self.push(value, Op::RowDot { m, v })
    }

    /// `out = sum_j p_j row_j(m)`.
    pub fn weighted_rows(&mut self, p: Var, m: Var) -> Var {
        let pv = self.value(p);
        let mv = self.value(m);
        let width = mv.len() / pv.len();
        let mut out = vec![0.0; width];
        for (&pj, row) in pv.iter().zip(mv.chunks_exact(width)) {
            axpy(pj, row, &mut out);
        }
        self.push(out, Op::WeightedRows { p, m })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = Vec::new();
        ops::softmax_into(self.value(x), &mut out);
        self.push(out, Op::Softmax(x))
    }

    /// Bilinear attention of `query` over the rows of `keys` (`rows x d_k`).
    /// Returns `(context, weights)`.
    pub fn attention(
        &mut self,
        query: Var,
        keys: Var,
        rows: usize,
        w_query: ParamId,
        w_key: ParamId,
    ) -> (Var, Var) {
        assert!(rows >= 1, "attention over zero keys");
        let q = self.affine(w_query, None, query);
        let projected = self.affine_rows(w_key, keys, rows);
        let scores = self.row_dot(projected, q);
        let weights = self.softmax(scores);
        (self.weighted_rows(weights, keys), weights)
    }

    /// Attention against keys whose projection `W_key k_j` was computed once up front
    /// (via [`Tape::affine_rows`]); useful when one key set is attended many times.
    pub fn attention_projected(
        &mut self,
        query: Var,
        w_query: ParamId,
        keys: Var,
        projected_keys: Var,
    ) -> (Var, Var) {
        let q = self.affine(w_query, None, query);
        let scores = self.row_dot(projected_keys, q);
        let weights = self.softmax(scores);
        (self.weighted_rows(weights, keys), weights)
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(value, Op::Dropout { x, mask })
    }

    /// Softmax cross-entropy of `logits` against `target`, with the probability floor.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let mut probs = Vec::new();
        ops::softmax_into(self.value(logits), &mut probs);
        assert!(target < probs.len(), "cross-entropy target out of range");
        let loss = -probs[target].max(PROB_FLOOR).ln();
        self.push(vec![loss], Op::CrossEntropy { logits, target, probs })
    }

    /// `log softmax(logits)[index]`.
    pub fn log_prob(&mut self, logits: Var, index: usize) -> Var {
        let lv = self.value(logits);
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let value = lv[index] - lse;
        let mut probs = Vec::new();
        ops::softmax_into(lv, &mut probs);
        self.push(vec![value], Op::LogProb { logits, index, probs })
    }

    /// `sum_k coef_k * x_k` over equal-length nodes.
    pub fn scaled_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "empty scaled sum");
        let mut out = vec![0.0; self.value(terms[0].0).len()];
        for &(v, coef) in terms {
            axpy(coef, self.value(v), &mut out);
        }
        self.push(out, Op::Scaled(terms.to_vec()))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, terms: &[Var]) -> Var {
        let coef = 1.0 / terms.len() as f64;
        let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, coef)).collect();
        self.scaled_sum(&weighted)
    }

    /// Backpropagates `seed * d(root)` into `grads` (parallel to the tape's parameters).
    pub fn backward(&self, root: Var, seed: f64, grads: &mut [Tensor]) {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape");
        let mut adj: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![seed]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => axpy(1.0, &g, grads[id.0].values_mut()),
                Op::Embed { table, row } => {
                    let cols = g.len();
                    axpy(1.0, &g, &mut grads[table.0].values_mut()[row * cols..(row + 1) * cols]);
                }
                Op::Affine { w, b, x } => {
                    let cols = self.param_cols(*w);
                    let xv = self.value(*x);
                    outer_acc(grads[w.0].values_mut(), cols, &g, xv);
                    if let Some(b) = b {
                        axpy(1.0, &g, grads[b.0].values_mut());
                    }
                    let dx = acc(&mut adj, *x, cols);
                    matvec_t_acc(self.param_value(*w), cols, &g, dx);
                }
                Op::AffineRows { w, x, rows } => {
                    let cols = self.param_cols(*w);
                    let out_dim = g.len() / rows;
                    let xv = self.value(*x);
                    let wv = self.param_value(*w);
                    let dx = acc(&mut adj, *x, rows * cols);
                    for r in 0..*rows {
                        let gr = &g[r * out_dim..(r + 1) * out_dim];
                        matvec_t_acc(wv, cols, gr, &mut dx[r * cols..(r + 1) * cols]);
                    }
                    let dw = grads[w.0].values_mut();
                    for r in 0..*rows {
                        let gr = &g[r * out_dim..(r + 1) * out_dim];
                        outer_acc(dw, cols, gr, &xv[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        axpy(1.0, &g[offset..offset + n], acc(&mut adj, *p, n));
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let dx = acc(&mut adj, *x, n);
                    axpy(1.0, &g, &mut dx[*start..start + g.len()]);
                }
                Op::Stack(rows) => {
                    let width = g.len() / rows.len();
                    for (r, v) in rows.iter().enumerate() {
                        axpy(1.0, &g[r * width..(r + 1) * width], acc(&mut adj, *v, width));
                    }
                }
                Op::Tanh(x) => {
                    let dx = acc(&mut adj, *x, g.len());
                    for ((d, gi), y) in dx.iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, acc(&mut adj, *a, g.len()));
                    axpy(1.0, &g, acc(&mut adj, *b, g.len()));
                }
                Op::Lstm { w, b, x, h, c, step } => {
                    let dh = g.len() / 2;
                    let (gh, gc) = g.split_at(dh);
                    let gates = &step.gates;
                    let cv = self.value(*c);
                    let mut da = vec![0.0; 4 * dh];
                    let mut dc_prev = vec![0.0; dh];
                    for k in 0..dh {
                        let (i, f, gg, o) = (gates[k], gates[dh + k], gates[2 * dh + k], gates[3 * dh + k]);
                        let tc = step.tanh_c[k];
                        let dc = gc[k] + gh[k] * o * (1.0 - tc * tc);
                        da[k] = dc * gg * i * (1.0 - i);
                        da[dh + k] = dc * cv[k] * f * (1.0 - f);
                        da[2 * dh + k] = dc * i * (1.0 - gg * gg);
                        da[3 * dh + k] = gh[k] * tc * o * (1.0 - o);
                        dc_prev[k] = dc * f;
                    }
                    let cols = step.xh.len();
                    outer_acc(grads[w.0].values_mut(), cols, &da, &step.xh);
                    axpy(1.0, &da, grads[b.0].values_mut());
                    let mut dxh = vec![0.0; cols];
                    matvec_t_acc(self.param_value(*w), cols, &da, &mut dxh);
                    let din = cols - dh;
                    axpy(1.0, &dxh[..din], acc(&mut adj, *x, din));
                    axpy(1.0, &dxh[din..], acc(&mut adj, *h, dh));
                    axpy(1.0, &dc_prev, acc(&mut adj, *c, dh));
                }
                Op::RowDot { m, v } => {
                    let vv = self.value(*v);
                    let mv = self.value(*m);
                    let width = vv.len();
                    {
                        let dm = acc(&mut adj, *m, mv.len());
                        for (r, &gr) in g.iter().enumerate() {
                            axpy(gr, vv, &mut dm[r * width..(r + 1) * width]);
                        }
                    }
                    let dv = acc(&mut adj, *v, width);
                    for (&gr, row) in g.iter().zip(mv.chunks_exact(width)) {
                        axpy(gr, row, dv);
                    }
                }
                Op::WeightedRows { p, m } => {
                    let pv = self.value(*p);
                    let mv = self.value(*m);
                    let width = g.len();
                    {
                        let dp = acc(&mut adj, *p, pv.len());
                        for (d, row) in dp.iter_mut().zip(mv.chunks_exact(width)) {
                            *d += dot(row, &g);
                        }
                    }
                    let dm = acc(&mut adj, *m, mv.len());
                    for (&pj, drow) in pv.iter().zip(dm.chunks_exact_mut(width)) {
                        axpy(pj, &g, drow);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let s = dot(&g, y);
                    let dx = acc(&mut adj, *x, y.len());
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += yi * (gi - s);
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = acc(&mut adj, *x, mask.len());
                    for ((d, gi), m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }
                Op::CrossEntropy { logits, target, probs } => {
                    // Below the floor the loss is constant in the logits.
                    if probs[*target] > PROB_FLOOR {
                        let dx = acc(&mut adj, *logits, probs.len());
                        for (k, (d, p)) in dx.iter_mut().zip(probs).enumerate() {
                            let onehot = if k == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (p - onehot);
                        }
                    }
                }
                Op::LogProb { logits, index, probs } => {
                    let dx = acc(&mut adj, *logits, probs.len());
                    for (k, (d, p)) in dx.iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *index { 1.0 } else { 0.0 };
                        *d += g[0] * (onehot - p);
                    }
                }
                Op::Scaled(terms) => {
                    for &(v, coef) in terms {
                        axpy(coef, &g, acc(&mut adj, v, g.len()));
                    }
                }
            }
        }
    }
}
