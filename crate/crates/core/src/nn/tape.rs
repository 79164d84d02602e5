//! Define-by-run reverse-mode differentiation over [`Mat`] values.
//!
//! Every operation computes its value eagerly and records how to
//! propagate gradients. Leaves (parameters, constants) are plain nodes;
//! [`Tape::backward`] returns gradients for every node.

use super::mat::{gemm, sigmoid, Mat, View, ViewMut};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One additive contribution to an LSTM gate pre-activation.
#[derive(Clone, Copy, Debug)]
pub enum LstmInput {
    /// `x·w` with `x: rows×d` and `w: d×4H`.
    Proj { x: Var, w: Var },
    /// An already projected `rows×4H` term (only the first rows are read).
    Direct(Var),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Mat),
    Relu(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    PickRows {
        parts: Vec<(Var, usize)>,
        c0: usize,
    },
    VStack {
        parts: Vec<Var>,
        c0: usize,
    },
    Lstm {
        inputs: Vec<LstmInput>,
        prev: Option<Var>,
        wh: Var,
        b: Var,
        /// i, f, g, o, tanh(c) per row (k×5H).
        acts: Mat,
    },
    Reparam {
        mu: Var,
        logvar: Var,
        noise: Mat,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
    SqErr {
        pred: Var,
        targets: Vec<f64>,
    },
    KlDiag {
        mu: Var,
        logvar: Var,
    },
    WeightedSum(Vec<(Var, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulConst(..) => "mul_const",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Gather { .. } => "gather",
            Op::PickRows { .. } => "pick_rows",
            Op::VStack { .. } => "vstack",
            Op::Lstm { .. } => "lstm_step",
            Op::Reparam { .. } => "reparam",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::SqErr { .. } => "sq_err",
            Op::KlDiag { .. } => "kl_diag",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::MulConst(a, _) | Op::Relu(a) | Op::Tanh(a) | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatCols(p) | Op::VStack { parts: p, .. } => p.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::PickRows { parts, .. } => parts.iter().map(|(v, _)| *v).collect(),
            Op::Lstm {
                inputs, prev, wh, b, ..
            } => {
                let mut v: Vec<Var> = inputs
                    .iter()
                    .flat_map(|i| match i {
                        LstmInput::Proj { x, w } => vec![*x, *w],
                        LstmInput::Direct(d) => vec![*d],
                    })
                    .collect();
                v.extend(prev.iter().copied());
                v.push(*wh);
                v.push(*b);
                v
            }
            Op::Reparam { mu, logvar, .. } | Op::KlDiag { mu, logvar } => vec![*mu, *logvar],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::SqErr { pred, .. } => vec![*pred],
            Op::WeightedSum(p) => p.iter().map(|(v, _)| *v).collect(),
        }
    }
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the differentiated output w.r.t. `v` (None if unreachable).
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    /// Kinds of the recorded operations that read `v`, once per read.
    pub fn consumers(&self, v: Var) -> Vec<&'static str> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let reads = n.op.inputs().iter().filter(|&&i| i == v).count();
                std::iter::repeat_n(n.op.name(), reads)
            })
            .collect()
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_row(self.value(bias));
        self.push(v, Op::AddRow(a, bias))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn mul_const(&mut self, a: Var, mask: Mat) -> Var {
        let src = self.value(a);
        assert_eq!(src.shape(), mask.shape());
        let data = src.data.iter().zip(&mask.data).map(|(x, m)| x * m).collect();
        let v = Mat::from_vec(src.rows, src.cols, data);
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|x| x.max(0.0)).collect());
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|x| x.tanh()).collect());
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let src = self.value(*p);
                assert_eq!(src.rows, rows, "concat_cols row mismatch");
                v.row_mut(r)[c0..c0 + src.cols].copy_from_slice(src.row(r));
                c0 += src.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros(src.rows, c1 - c0);
        for r in 0..src.rows {
            v.row_mut(r).copy_from_slice(&src.row(r)[c0..c1]);
        }
        self.push(v, Op::SliceCols(a, c0))
    }

    /// Embedding lookup: row `ids[r]` of `table` for every `r`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// One row per part, columns `c0..c1`.
    pub fn pick_rows(&mut self, parts: &[(Var, usize)], c0: usize, c1: usize) -> Var {
        let mut v = Mat::zeros(parts.len(), c1 - c0);
        for (r, (p, row)) in parts.iter().enumerate() {
            v.row_mut(r).copy_from_slice(&self.value(*p).row(*row)[c0..c1]);
        }
        self.push(
            v,
            Op::PickRows {
                parts: parts.to_vec(),
                c0,
            },
        )
    }

    /// Stacks columns `c0..c1` of all parts vertically.
    pub fn vstack(&mut self, parts: &[Var], c0: usize, c1: usize) -> Var {
        let rows: usize = parts.iter().map(|p| self.value(*p).rows).sum();
        let mut v = Mat::zeros(rows, c1 - c0);
        let mut r0 = 0;
        for p in parts {
            let src = self.value(*p);
            for r in 0..src.rows {
                v.row_mut(r0 + r).copy_from_slice(&src.row(r)[c0..c1]);
            }
            r0 += src.rows;
        }
        self.push(
            v,
            Op::VStack {
                parts: parts.to_vec(),
                c0,
            },
        )
    }

    /// One LSTM cell step over the first `k` rows of its inputs.
    ///
    /// `prev` is the output of an earlier step (`[h | c]`, at least `k`
    /// rows) or `None` for a zero initial state. The result is `k×2H`
    /// holding the new `[h | c]`. Gate order is input, forget, cell, output.
    pub fn lstm_step(
        &mut self,
        k: usize,
        inputs: &[LstmInput],
        prev: Option<Var>,
        wh: Var,
        b: Var,
    ) -> Var {
        let hidden = self.value(wh).rows;
        let g4 = 4 * hidden;
        let mut pre = Mat::zeros(k, g4);
        for r in 0..k {
            pre.row_mut(r).copy_from_slice(&self.value(b).data);
        }
        for input in inputs {
            match *input {
                LstmInput::Proj { x, w } => {
                    let xm = self.value(x);
                    let wm = self.value(w);
                    assert!(xm.rows >= k && xm.cols == wm.rows && wm.cols == g4);
                    gemm(k, xm.cols, g4, View::of(xm), View::of(wm), 1.0, ViewMut::of(&mut pre));
                }
                LstmInput::Direct(d) => {
                    let dm = self.value(d);
                    assert!(dm.rows >= k && dm.cols == g4);
                    for (p, x) in pre.data.iter_mut().zip(&dm.data[..k * g4]) {
                        *p += x;
                    }
                }
            }
        }
        if let Some(p) = prev {
            let pm = self.value(p);
            assert!(pm.rows >= k && pm.cols == 2 * hidden);
            gemm(k, hidden, g4, View::of(pm), View::of(self.value(wh)), 1.0, ViewMut::of(&mut pre));
        }
        let mut out = Mat::zeros(k, 2 * hidden);
        let mut acts = Mat::zeros(k, 5 * hidden);
        for r in 0..k {
            let c_prev = prev.map(|p| &self.value(p).row(r)[hidden..]);
            let pr = pre.row(r);
            let (o_row, a_row) = (r * 2 * hidden, r * 5 * hidden);
            for j in 0..hidden {
                let i = sigmoid(pr[j]);
                let f = sigmoid(pr[hidden + j]);
                let g = pr[2 * hidden + j].tanh();
                let o = sigmoid(pr[3 * hidden + j]);
                let cp = c_prev.map_or(0.0, |c| c[j]);
                let c = f * cp + i * g;
                let tc = c.tanh();
                out.data[o_row + j] = o * tc;
                out.data[o_row + hidden + j] = c;
                let a = &mut acts.data[a_row..a_row + 5 * hidden];
                a[j] = i;
                a[hidden + j] = f;
                a[2 * hidden + j] = g;
                a[3 * hidden + j] = o;
                a[4 * hidden + j] = tc;
            }
        }
        self.push(
            out,
            Op::Lstm {
                inputs: inputs.to_vec(),
                prev,
                wh,
                b,
                acts,
            },
        )
    }

    /// `μ + exp(½·logvar) ⊙ noise`.
    pub fn reparam(&mut self, mu: Var, logvar: Var, noise: Mat) -> Var {
        let m = self.value(mu);
        let lv = self.value(logvar);
        assert_eq!(m.shape(), noise.shape());
        let data = m
            .data
            .iter()
            .zip(&lv.data)
            .zip(&noise.data)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        let v = Mat::from_vec(m.rows, m.cols, data);
        self.push(v, Op::Reparam { mu, logvar, noise })
    }

    /// Σ over rows of `−log softmax(logits)[target]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows, targets.len());
        let mut probs = Mat::zeros(lm.rows, lm.cols);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lm.row(r);
            let lse = super::mat::log_sum_exp(row);
            total += lse - row[t];
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        self.push(
            Mat::scalar(total),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Σ (pred − target)² over all entries (row-major order).
    pub fn sq_err(&mut self, pred: Var, targets: &[f64]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), targets.len());
        let total = p.data.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(
            Mat::scalar(total),
            Op::SqErr {
                pred,
                targets: targets.to_vec(),
            },
        )
    }

    /// Σ over rows of KL(N(μ, diag exp(logvar)) ‖ N(0, I)).
    pub fn kl_diag(&mut self, mu: Var, logvar: Var) -> Var {
        let m = self.value(mu);
        let lv = self.value(logvar);
        let total = 0.5
            * m.data
                .iter()
                .zip(&lv.data)
                .map(|(m, l)| m * m + l.exp() - l - 1.0)
                .sum::<f64>();
        self.push(Mat::scalar(total), Op::KlDiag { mu, logvar })
    }

    pub fn weighted_sum(&mut self, parts: &[(Var, f64)]) -> Var {
        let total = parts.iter().map(|(v, w)| self.scalar(*v) * w).sum();
        self.push(Mat::scalar(total), Op::WeightedSum(parts.to_vec()))
    }

    /// Gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn grad_mut<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let shape = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let da = self.grad_mut(grads, *a);
                gemm(am.rows, g.cols, am.cols, View::of(g), View::t(bm), 1.0, ViewMut::of(da));
                let db = self.grad_mut(grads, *b);
                gemm(bm.rows, am.rows, bm.cols, View::t(am), View::of(g), 1.0, ViewMut::of(db));
            }
            Op::AddRow(a, b) => {
                self.grad_mut(grads, *a).add_assign(g);
                let db = self.grad_mut(grads, *b);
                for r in 0..g.rows {
                    for (d, x) in db.data.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::MulConst(a, mask) => {
                let da = self.grad_mut(grads, *a);
                for ((d, x), m) in da.data.iter_mut().zip(&g.data).zip(&mask.data) {
                    *d += x * m;
                }
            }
            Op::Relu(a) => {
                let out = &node.value;
                let da = self.grad_mut(grads, *a);
                for ((d, x), o) in da.data.iter_mut().zip(&g.data).zip(&out.data) {
                    if *o > 0.0 {
                        *d += x;
                    }
                }
            }
            Op::Tanh(a) => {
                let out = &node.value;
                let da = self.grad_mut(grads, *a);
                for ((d, x), o) in da.data.iter_mut().zip(&g.data).zip(&out.data) {
                    *d += x * (1.0 - o * o);
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let cols = self.value(*p).cols;
                    let dp = self.grad_mut(grads, *p);
                    for r in 0..g.rows {
                        for (d, x) in dp.row_mut(r).iter_mut().zip(&g.row(r)[c0..c0 + cols]) {
                            *d += x;
                        }
                    }
                    c0 += cols;
                }
            }
            Op::SliceCols(a, c0) => {
                let da = self.grad_mut(grads, *a);
                for r in 0..g.rows {
                    for (d, x) in da.row_mut(r)[*c0..*c0 + g.cols].iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let dt = self.grad_mut(grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::PickRows { parts, c0 } => {
                for (r, (p, row)) in parts.iter().enumerate() {
                    let dp = self.grad_mut(grads, *p);
                    for (d, x) in dp.row_mut(*row)[*c0..*c0 + g.cols].iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::VStack { parts, c0 } => {
                let mut r0 = 0;
                for p in parts {
                    let rows = self.value(*p).rows;
                    let dp = self.grad_mut(grads, *p);
                    for r in 0..rows {
                        for (d, x) in dp.row_mut(r)[*c0..*c0 + g.cols].iter_mut().zip(g.row(r0 + r)) {
                            *d += x;
                        }
                    }
                    r0 += rows;
                }
            }
            Op::Lstm {
                inputs,
                prev,
                wh,
                b,
                acts,
            } => self.lstm_backward(g, inputs, *prev, *wh, *b, acts, grads),
            Op::Reparam { mu, logvar, noise } => {
                self.grad_mut(grads, *mu).add_assign(g);
                let lv = self.value(*logvar).clone();
                let dlv = self.grad_mut(grads, *logvar);
                for i in 0..g.data.len() {
                    dlv.data[i] += g.data[i] * noise.data[i] * 0.5 * (0.5 * lv.data[i]).exp();
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let s = g.data[0];
                let dl = self.grad_mut(grads, *logits);
                for (r, &t) in targets.iter().enumerate() {
                    let row = dl.row_mut(r);
                    for (d, p) in row.iter_mut().zip(probs.row(r)) {
                        *d += s * p;
                    }
                    row[t] -= s;
                }
            }
            Op::SqErr { pred, targets } => {
                let s = g.data[0];
                let p = self.value(*pred).clone();
                let dp = self.grad_mut(grads, *pred);
                for ((d, x), t) in dp.data.iter_mut().zip(&p.data).zip(targets) {
                    *d += s * 2.0 * (x - t);
                }
            }
            Op::KlDiag { mu, logvar } => {
                let s = g.data[0];
                let m = self.value(*mu).clone();
                let lv = self.value(*logvar).clone();
                let dm = self.grad_mut(grads, *mu);
                for (d, x) in dm.data.iter_mut().zip(&m.data) {
                    *d += s * x;
                }
                let dl = self.grad_mut(grads, *logvar);
                for (d, l) in dl.data.iter_mut().zip(&lv.data) {
                    *d += s * 0.5 * (l.exp() - 1.0);
                }
            }
            Op::WeightedSum(parts) => {
                let s = g.data[0];
                for (p, w) in parts {
                    self.grad_mut(grads, *p).data[0] += s * w;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        g: &Mat,
        inputs: &[LstmInput],
        prev: Option<Var>,
        wh: Var,
        b: Var,
        acts: &Mat,
        grads: &mut [Option<Mat>],
    ) {
        let k = g.rows;
        let hidden = g.cols / 2;
        let g4 = 4 * hidden;
        let mut dpre = Mat::zeros(k, g4);
        let mut dc_prev = Mat::zeros(k, hidden);
        for r in 0..k {
            let a = acts.row(r);
            let gr = g.row(r);
            let c_prev = prev.map(|p| &self.value(p).row(r)[hidden..]);
            let dp = dpre.row_mut(r);
            for j in 0..hidden {
                let (i, f, gg, o, tc) = (
                    a[j],
                    a[hidden + j],
                    a[2 * hidden + j],
                    a[3 * hidden + j],
                    a[4 * hidden + j],
                );
                let dh = gr[j];
                let dc = gr[hidden + j] + dh * o * (1.0 - tc * tc);
                let cp = c_prev.map_or(0.0, |c| c[j]);
                dp[j] = dc * gg * i * (1.0 - i);
                dp[hidden + j] = dc * cp * f * (1.0 - f);
                dp[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                dp[3 * hidden + j] = dh * tc * o * (1.0 - o);
                dc_prev.data[r * hidden + j] = dc * f;
            }
        }

        let db = self.grad_mut(grads, b);
        for r in 0..k {
            for (d, x) in db.data.iter_mut().zip(dpre.row(r)) {
                *d += x;
            }
        }
        for input in inputs {
            match *input {
                LstmInput::Proj { x, w } => {
                    let (xm, wm) = (self.value(x), self.value(w));
                    let dx = self.grad_mut(grads, x);
                    gemm(k, g4, xm.cols, View::of(&dpre), View::t(wm), 1.0, ViewMut::of(dx));
                    let dw = self.grad_mut(grads, w);
                    gemm(xm.cols, k, g4, View::t(xm), View::of(&dpre), 1.0, ViewMut::of(dw));
                }
                LstmInput::Direct(d) => {
                    let dd = self.grad_mut(grads, d);
                    for (a, x) in dd.data[..k * g4].iter_mut().zip(&dpre.data) {
                        *a += x;
                    }
                }
            }
        }
        if let Some(p) = prev {
            let (pm, whm) = (self.value(p), self.value(wh));
            let dwh = self.grad_mut(grads, wh);
            // h_prev is the first H columns of the previous [h | c]
            gemm(hidden, k, g4, View::t(pm), View::of(&dpre), 1.0, ViewMut::of(dwh));
            let dprev = self.grad_mut(grads, p);
            gemm(k, g4, hidden, View::of(&dpre), View::t(whm), 1.0, ViewMut::of(dprev));
            for r in 0..k {
                let row = dprev.row_mut(r);
                for j in 0..hidden {
                    row[hidden + j] += dc_prev.data[r * hidden + j];
                }
            }
        }
    }
}
