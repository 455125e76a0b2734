//! Minimal reverse-mode autodiff over row-major matrices.
//!
//! Only the handful of ops the transformer needs, with attention, layer norm
//! and the masked sequence log-likelihood fused into single nodes.

use ndarray::{s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Node(usize),
    Param(usize),
}

/// Which keys each query row may see.
#[derive(Debug, Clone)]
pub enum AttnMask {
    /// Self-attention over concatenated sequences `(start, len)`; row `i` of
    /// a segment sees keys `0..=i` of the same segment.
    Causal(Vec<(usize, usize)>),
    /// Every query sees every key.
    Full,
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        blocks: Vec<Block>,
        probs: Vec<Array2<f64>>,
    },
    ConcatCols(Var, Var),
    MeanRows(Var),
    RepeatRows(Var),
    SeqLogLik {
        logits: Var,
        allowed: Vec<bool>,
        targets: Vec<usize>,
        weights: Vec<f64>,
        entropy: Vec<f64>,
        probs: Array2<f64>,
        ents: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// `(q_start, q_len, k_start, k_len, causal)`.
pub type Block = (usize, usize, usize, usize, bool);

pub fn attention_blocks(mask: &AttnMask, rq: usize, rk: usize) -> Vec<Block> {
    match mask {
        AttnMask::Causal(segs) => segs.iter().map(|&(s, l)| (s, l, s, l, true)).collect(),
        AttnMask::Full => vec![(0, rq, 0, rk, false)],
    }
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - m).exp();
            z += e;
            e
        });
        row.mapv_inplace(|v| v / z);
    }
}

/// Multi-head scaled dot-product attention; also returns the probability
/// matrices (block-major, then head).
pub fn attention_forward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    blocks: &[Block],
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(blocks.len() * heads);
    for &(qs, ql, ks, kl, causal) in blocks {
        for h in 0..heads {
            let c = h * dh..(h + 1) * dh;
            let qh = q.slice(s![qs..qs + ql, c.clone()]);
            let kh = k.slice(s![ks..ks + kl, c.clone()]);
            let vh = v.slice(s![ks..ks + kl, c.clone()]);
            let mut p = qh.dot(&kh.t()) * scale;
            if causal {
                for i in 0..ql {
                    for j in i + 1..kl {
                        p[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut p);
            out.slice_mut(s![qs..qs + ql, c]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (out, probs)
}

/// Row-wise layer norm; returns `(y, x̂, 1/σ)`.
pub fn layer_norm_forward(
    x: ArrayView2<f64>,
    gamma: ArrayView2<f64>,
    beta: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let c = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv.push(is);
    }
    let y = &xhat * &gamma + &beta;
    (y, xhat, inv)
}

/// Log-softmax restricted to `allowed`; disallowed entries are `-∞`.
pub fn masked_log_softmax(z: &[f64], allowed: &[bool]) -> Vec<f64> {
    let m = z
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v));
    let lse = m + z
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| (v - m).exp())
        .sum::<f64>()
        .ln();
    z.iter()
        .zip(allowed)
        .map(|(&v, &a)| if a { v - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match v {
            Var::Node(i) => &self.nodes[i].value,
            Var::Param(i) => &self.params[i],
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var::Node(self.nodes.len() - 1)
    }

    pub fn input(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + 1·b` for a single-row `b`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (y, xhat, inv) =
            layer_norm_forward(self.value(x).view(), self.value(gamma).view(), self.value(beta).view());
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv,
            },
        )
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), ids);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let blocks = attention_blocks(mask, self.value(q).nrows(), self.value(k).nrows());
        let (out, probs) = attention_forward(
            self.value(q).view(),
            self.value(k).view(),
            self.value(v).view(),
            heads,
            &blocks,
        );
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                blocks,
                probs,
            },
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Broadcasts a single row to `r` rows.
    pub fn repeat_rows(&mut self, a: Var, r: usize) -> Var {
        let row = self.value(a);
        let v = row.broadcast((r, row.ncols())).expect("single row").to_owned();
        self.push(v, Op::RepeatRows(a))
    }

    /// `Σ_r w_r log p_r(target_r) + Σ_r e_r H(p_r)` with `p_r` the softmax of
    /// row `r` restricted to its allowed entries. Also returns the per-row
    /// target log-probabilities.
    pub fn seq_loglik(
        &mut self,
        logits: Var,
        allowed: Vec<bool>,
        targets: Vec<usize>,
        weights: Vec<f64>,
        entropy: Vec<f64>,
    ) -> (Var, Vec<f64>) {
        let z = self.value(logits);
        let (r, c) = z.dim();
        let mut probs = Array2::zeros((r, c));
        let mut ents = Vec::with_capacity(r);
        let mut lp = Vec::with_capacity(r);
        let mut total = 0.0;
        for i in 0..r {
            let row = z.row(i);
            let mask = &allowed[i * c..(i + 1) * c];
            let l = masked_log_softmax(row.as_slice().expect("contiguous"), mask);
            let mut h = 0.0;
            for j in 0..c {
                if mask[j] {
                    let p = l[j].exp();
                    probs[[i, j]] = p;
                    if p > 0.0 {
                        h -= p * l[j];
                    }
                }
            }
            lp.push(l[targets[i]]);
            ents.push(h);
            total += weights[i] * l[targets[i]] + entropy[i] * h;
        }
        let v = self.push(
            Array2::from_elem((1, 1), total),
            Op::SeqLogLik {
                logits,
                allowed,
                targets,
                weights,
                entropy,
                probs,
                ents,
            },
        );
        (v, lp)
    }

    /// Gradients of the scalar `out` with respect to every parameter.
    pub fn backward(&self, out: Var) -> Vec<Array2<f64>> {
        let Var::Node(root) = out else {
            panic!("backward from a parameter");
        };
        let mut g: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        let mut pg: Vec<Option<Array2<f64>>> = vec![None; self.params.len()];
        g[root] = Some(Array2::ones(self.nodes[root].value.dim()));

        for i in (0..=root).rev() {
            let Some(gi) = g[i].take() else { continue };
            let mut acc = |v: Var, d: Array2<f64>| {
                let slot = match v {
                    Var::Node(j) => &mut g[j],
                    Var::Param(j) => &mut pg[j],
                };
                match slot {
                    Some(s) => *s += &d,
                    None => *slot = Some(d),
                }
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::MatMul(a, b) => {
                    acc(*a, gi.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&gi));
                }
                Op::Add(a, b) => {
                    acc(*b, gi.clone());
                    acc(*a, gi);
                }
                Op::AddRow(a, b) => {
                    acc(*b, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, gi);
                }
                Op::Relu(a) => {
                    let mut d = gi;
                    ndarray::Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv,
                } => {
                    acc(*beta, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gamma, (&gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &gi * self.value(*gamma);
                    let c = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let s1 = dh.sum();
                        let s2 = dh.dot(&xh);
                        let k = inv[r] / c;
                        for j in 0..xhat.ncols() {
                            dx[[r, j]] = k * (c * dh[j] - s1 - xh[j] * s2);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Gather { table, ids } => {
                    let mut d = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &gi.row(r);
                    }
                    acc(*table, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    blocks,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    let mut pi = 0;
                    for &(qs, ql, ks, kl, _) in blocks {
                        for h in 0..*heads {
                            let c = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            let go = gi.slice(s![qs..qs + ql, c.clone()]);
                            let qh = qv.slice(s![qs..qs + ql, c.clone()]);
                            let kh = kv.slice(s![ks..ks + kl, c.clone()]);
                            let vh = vv.slice(s![ks..ks + kl, c.clone()]);
                            let mut dvs = dv.slice_mut(s![ks..ks + kl, c.clone()]);
                            dvs += &p.t().dot(&go);
                            let dp = go.dot(&vh.t());
                            let mut ds = &dp * p;
                            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                                let sum: f64 = row.sum();
                                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                                    *x -= pv * sum;
                                }
                            }
                            ds *= scale;
                            let mut dqs = dq.slice_mut(s![qs..qs + ql, c.clone()]);
                            dqs += &ds.dot(&kh);
                            let mut dks = dk.slice_mut(s![ks..ks + kl, c]);
                            dks += &ds.t().dot(&qh);
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    acc(*a, gi.slice(s![.., ..ca]).to_owned());
                    acc(*b, gi.slice(s![.., ca..]).to_owned());
                }
                Op::MeanRows(a) => {
                    let r = self.value(*a).nrows();
                    let d = gi.broadcast((r, gi.ncols())).unwrap().to_owned() / r as f64;
                    acc(*a, d);
                }
                Op::RepeatRows(a) => {
                    acc(*a, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SeqLogLik {
                    logits,
                    allowed,
                    targets,
                    weights,
                    entropy,
                    probs,
                    ents,
                } => {
                    let up = gi[[0, 0]];
                    let (r, c) = probs.dim();
                    let mut d = Array2::zeros((r, c));
                    for i in 0..r {
                        let (w, e, h) = (weights[i], entropy[i], ents[i]);
                        for j in 0..c {
                            if !allowed[i * c + j] {
                                continue;
                            }
                            let p = probs[[i, j]];
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            let mut v = w * (onehot - p);
                            if e != 0.0 && p > 0.0 {
                                v -= e * p * (p.ln() + h);
                            }
                            d[[i, j]] = up * v;
                        }
                    }
                    acc(*logits, d);
                }
            }
        }
        pg.into_iter()
            .zip(self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect()
    }
}
