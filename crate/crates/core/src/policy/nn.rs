//! Encoder–decoder transformer: a dynamics encoder, a causal tree-state
//! encoder over `(prev, parent, sibling)` inputs, and a decoder that reads
//! `Linear([F; W])` and cross-attends to the encoded dynamics.
//!
//! Two forward paths share the same parameters: a taped teacher-forced pass
//! for log-probabilities and gradients, and a cached step-by-step pass for
//! sampling.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{attention_forward, layer_norm_forward, AttnMask, Tape, Var};
use super::{ArchConfig, PolicyError};
use crate::dynamics::{SysToken, SystemTokenization};

/// Exponents representable in the dynamics vocabulary.
pub const POW10_RANGE: i32 = 20;
const SYS_FIXED: usize = 8 + 10 + (2 * POW10_RANGE as usize + 1);

pub fn sys_vocab_len(arch: &ArchConfig) -> usize {
    SYS_FIXED + arch.max_vars
}

pub fn sys_token_id(t: SysToken, arch: &ArchConfig) -> Result<usize, PolicyError> {
    Ok(match t {
        SysToken::Sos => 0,
        SysToken::Eos => 1,
        SysToken::Add => 2,
        SysToken::Sub => 3,
        SysToken::Mul => 4,
        SysToken::Neg => 5,
        SysToken::Sin => 6,
        SysToken::Cos => 7,
        SysToken::Digit(d) => 8 + d as usize,
        SysToken::Pow10(e) if e.abs() <= POW10_RANGE => 18 + (e + POW10_RANGE) as usize,
        SysToken::Var(i) if i < arch.max_vars => SYS_FIXED + i,
        other => {
            return Err(PolicyError::VocabularyMismatch(format!(
                "dynamics token {} is outside the encoder vocabulary",
                other.code()
            )))
        }
    })
}

pub fn sys_ids(t: &SystemTokenization, arch: &ArchConfig) -> Result<Vec<usize>, PolicyError> {
    t.tokens.iter().map(|&s| sys_token_id(s, arch)).collect()
}

/// Sinusoidal position encoding.
pub fn position(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let freq = (10000f64).powf(-((j / 2 * 2) as f64) / d as f64);
            let a = t as f64 * freq;
            if j % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

fn positions(ts: impl IntoIterator<Item = usize>, d: usize) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = ts.into_iter().map(|t| position(t, d)).collect();
    let r = rows.len();
    Array2::from_shape_vec((r, d), rows.concat()).expect("shape")
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Mha {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    a: Linear,
    b: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: Norm,
    attn: Mha,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: Norm,
    attn: Mha,
    ln2: Norm,
    cross: Mha,
    ln3: Norm,
    ffn: Ffn,
}

/// Parameter shapes and their indices.
#[derive(Debug, Clone)]
pub struct Net {
    pub arch: ArchConfig,
    pub vocab_len: usize,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    sys_emb: usize,
    dyn_layers: Vec<EncLayer>,
    dyn_ln: Norm,
    f_proj: Linear,
    prev_emb: usize,
    parent_emb: usize,
    sibling_emb: usize,
    tree_layers: Vec<EncLayer>,
    tree_ln: Norm,
    w_proj: Linear,
    in_proj: Linear,
    dec_layers: Vec<DecLayer>,
    dec_ln: Norm,
    out: Linear,
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn param(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, i: usize, o: usize, gain: f64) -> Linear {
        Linear {
            w: self.param(format!("{name}.w"), (i, o), Init::Normal(gain / (i as f64).sqrt())),
            b: self.param(format!("{name}.b"), (1, o), Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.param(format!("{name}.g"), (1, d), Init::Ones),
            b: self.param(format!("{name}.b"), (1, d), Init::Zeros),
        }
    }

    fn mha(&mut self, name: &str, d: usize) -> Mha {
        Mha {
            q: self.linear(&format!("{name}.q"), d, d, 1.0),
            k: self.linear(&format!("{name}.k"), d, d, 1.0),
            v: self.linear(&format!("{name}.v"), d, d, 1.0),
            o: self.linear(&format!("{name}.o"), d, d, 1.0),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, h: usize) -> Ffn {
        Ffn {
            a: self.linear(&format!("{name}.a"), d, h, 1.0),
            b: self.linear(&format!("{name}.b"), h, d, 1.0),
        }
    }

    fn enc(&mut self, name: &str, a: &ArchConfig) -> EncLayer {
        EncLayer {
            ln1: self.norm(&format!("{name}.ln1"), a.d_model),
            attn: self.mha(&format!("{name}.attn"), a.d_model),
            ln2: self.norm(&format!("{name}.ln2"), a.d_model),
            ffn: self.ffn(&format!("{name}.ffn"), a.d_model, a.ff_dim),
        }
    }

    fn dec(&mut self, name: &str, a: &ArchConfig) -> DecLayer {
        DecLayer {
            ln1: self.norm(&format!("{name}.ln1"), a.d_model),
            attn: self.mha(&format!("{name}.attn"), a.d_model),
            ln2: self.norm(&format!("{name}.ln2"), a.d_model),
            cross: self.mha(&format!("{name}.cross"), a.d_model),
            ln3: self.norm(&format!("{name}.ln3"), a.d_model),
            ffn: self.ffn(&format!("{name}.ffn"), a.d_model, a.ff_dim),
        }
    }
}

/// Cached per-system encoder outputs used while sampling.
#[derive(Debug, Clone)]
pub struct Context {
    pub memory: Array2<f64>,
    pub f: Array2<f64>,
    cross: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Flattened teacher-forcing batch.
#[derive(Debug, Clone, Default)]
pub struct Rows {
    pub inputs: Vec<[usize; 3]>,
    pub positions: Vec<usize>,
    pub segments: Vec<(usize, usize)>,
}

impl Net {
    /// Layout plus the initialisers, in parameter order.
    fn build(arch: &ArchConfig, vocab_len: usize) -> (Net, Vec<Init>) {
        let d = arch.d_model;
        let mut b = Builder {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
        };
        let sys_emb = b.param("dyn.emb".into(), (sys_vocab_len(arch), d), Init::Normal(1.0));
        let dyn_layers = (0..arch.dyn_layers)
            .map(|i| b.enc(&format!("dyn.{i}"), arch))
            .collect();
        let dyn_ln = b.norm("dyn.ln", d);
        let f_proj = b.linear("dyn.f", d, arch.latent_p, 1.0);
        let tv = vocab_len + 1;
        let prev_emb = b.param("tree.prev".into(), (tv, d), Init::Normal(1.0));
        let parent_emb = b.param("tree.parent".into(), (tv, d), Init::Normal(1.0));
        let sibling_emb = b.param("tree.sibling".into(), (tv, d), Init::Normal(1.0));
        let tree_layers = (0..arch.tree_layers)
            .map(|i| b.enc(&format!("tree.{i}"), arch))
            .collect();
        let tree_ln = b.norm("tree.ln", d);
        let w_proj = b.linear("tree.w", d, arch.latent_k, 1.0);
        let in_proj = b.linear("dec.in", arch.latent_p + arch.latent_k, d, 1.0);
        let dec_layers = (0..arch.dec_layers)
            .map(|i| b.dec(&format!("dec.{i}"), arch))
            .collect();
        let dec_ln = b.norm("dec.ln", d);
        // A small output gain keeps the initial distribution near uniform.
        let out = b.linear("dec.out", d, vocab_len, 0.1);
        let net = Net {
            arch: arch.clone(),
            vocab_len,
            names: b.names,
            shapes: b.shapes,
            sys_emb,
            dyn_layers,
            dyn_ln,
            f_proj,
            prev_emb,
            parent_emb,
            sibling_emb,
            tree_layers,
            tree_ln,
            w_proj,
            in_proj,
            dec_layers,
            dec_ln,
            out,
        };
        (net, b.inits)
    }

    pub fn layout(arch: &ArchConfig, vocab_len: usize) -> Net {
        Net::build(arch, vocab_len).0
    }

    pub fn init<R: Rng + ?Sized>(arch: &ArchConfig, vocab_len: usize, rng: &mut R) -> (Net, Vec<Array2<f64>>) {
        let (net, inits) = Net::build(arch, vocab_len);
        let params = net
            .shapes
            .iter()
            .zip(inits)
            .map(|(&shape, init)| match init {
                Init::Zeros => Array2::zeros(shape),
                Init::Ones => Array2::ones(shape),
                Init::Normal(sd) => {
                    let n = Normal::new(0.0, sd).expect("positive sd");
                    Array2::from_shape_simple_fn(shape, || n.sample(rng))
                }
            })
            .collect();
        (net, params)
    }

    // ---- taped forward -------------------------------------------------

    fn t_linear(t: &mut Tape, l: Linear, x: Var) -> Var {
        let y = t.matmul(x, Var::Param(l.w));
        t.add_row(y, Var::Param(l.b))
    }

    fn t_norm(t: &mut Tape, n: Norm, x: Var) -> Var {
        t.layer_norm(x, Var::Param(n.g), Var::Param(n.b))
    }

    fn t_mha(&self, t: &mut Tape, m: Mha, xq: Var, xkv: Var, mask: &AttnMask) -> Var {
        let q = Self::t_linear(t, m.q, xq);
        let k = Self::t_linear(t, m.k, xkv);
        let v = Self::t_linear(t, m.v, xkv);
        let a = t.attention(q, k, v, self.arch.heads, mask);
        Self::t_linear(t, m.o, a)
    }

    fn t_ffn(t: &mut Tape, f: Ffn, x: Var) -> Var {
        let h = Self::t_linear(t, f.a, x);
        let h = t.relu(h);
        Self::t_linear(t, f.b, h)
    }

    fn t_enc(&self, t: &mut Tape, l: &EncLayer, x: Var, mask: &AttnMask) -> Var {
        let h = Self::t_norm(t, l.ln1, x);
        let a = self.t_mha(t, l.attn, h, h, mask);
        let x = t.add(x, a);
        let h = Self::t_norm(t, l.ln2, x);
        let f = Self::t_ffn(t, l.ffn, h);
        t.add(x, f)
    }

    /// Encodes the dynamics; returns `(memory, F)`.
    pub fn t_dynamics(&self, t: &mut Tape, ids: &[usize]) -> (Var, Var) {
        let d = self.arch.d_model;
        let e = t.gather(Var::Param(self.sys_emb), ids);
        let p = t.input(positions(0..ids.len(), d));
        let mut x = t.add(e, p);
        for l in &self.dyn_layers {
            x = self.t_enc(t, l, x, &AttnMask::Full);
        }
        let mem = Self::t_norm(t, self.dyn_ln, x);
        let pooled = t.mean_rows(mem);
        let f = Self::t_linear(t, self.f_proj, pooled);
        (mem, f)
    }

    /// Teacher-forced logits for every row.
    pub fn t_decode(&self, t: &mut Tape, mem: Var, f: Var, rows: &Rows) -> Var {
        let d = self.arch.d_model;
        let col = |k: usize| rows.inputs.iter().map(|r| r[k]).collect::<Vec<_>>();
        let a = t.gather(Var::Param(self.prev_emb), &col(0));
        let b = t.gather(Var::Param(self.parent_emb), &col(1));
        let c = t.gather(Var::Param(self.sibling_emb), &col(2));
        let pos = t.input(positions(rows.positions.iter().copied(), d));
        let x = t.add(a, b);
        let x = t.add(x, c);
        let mut x = t.add(x, pos);
        let causal = AttnMask::Causal(rows.segments.clone());
        for l in &self.tree_layers {
            x = self.t_enc(t, l, x, &causal);
        }
        let h = Self::t_norm(t, self.tree_ln, x);
        let w = Self::t_linear(t, self.w_proj, h);
        let fr = t.repeat_rows(f, rows.inputs.len());
        let z = t.concat_cols(fr, w);
        let x = Self::t_linear(t, self.in_proj, z);
        let mut x = t.add(x, pos);
        for l in &self.dec_layers {
            let h = Self::t_norm(t, l.ln1, x);
            let a = self.t_mha(t, l.attn, h, h, &causal);
            x = t.add(x, a);
            let h = Self::t_norm(t, l.ln2, x);
            let a = self.t_mha(t, l.cross, h, mem, &AttnMask::Full);
            x = t.add(x, a);
            let h = Self::t_norm(t, l.ln3, x);
            let ff = Self::t_ffn(t, l.ffn, h);
            x = t.add(x, ff);
        }
        let h = Self::t_norm(t, self.dec_ln, x);
        Self::t_linear(t, self.out, h)
    }

    // ---- cached inference ---------------------------------------------

    pub fn context(&self, params: &[Array2<f64>], ids: &[usize]) -> Context {
        let mut t = Tape::new(params);
        let (mem, f) = self.t_dynamics(&mut t, ids);
        let memory = t.value(mem).clone();
        let cross = self
            .dec_layers
            .iter()
            .map(|l| {
                (
                    linear(params, l.cross.k, memory.view()),
                    linear(params, l.cross.v, memory.view()),
                )
            })
            .collect();
        Context {
            f: t.value(f).clone(),
            memory,
            cross,
        }
    }

    pub fn session<'a>(
        &'a self,
        params: &'a [Array2<f64>],
        ctx: &'a Context,
        batch: usize,
        max_len: usize,
    ) -> Session<'a> {
        let d = self.arch.d_model;
        let cache = |n: usize| {
            (0..n)
                .map(|_| {
                    (
                        Array3::zeros((batch, max_len, d)),
                        Array3::zeros((batch, max_len, d)),
                    )
                })
                .collect()
        };
        Session {
            net: self,
            params,
            ctx,
            tree: cache(self.tree_layers.len()),
            dec: cache(self.dec_layers.len()),
            step: 0,
        }
    }
}

fn linear(params: &[Array2<f64>], l: Linear, x: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&params[l.w]) + &params[l.b]
}

fn norm(params: &[Array2<f64>], n: Norm, x: ArrayView2<f64>) -> Array2<f64> {
    layer_norm_forward(x, params[n.g].view(), params[n.b].view()).0
}

fn ffn(params: &[Array2<f64>], f: Ffn, x: ArrayView2<f64>) -> Array2<f64> {
    let h = linear(params, f.a, x).mapv(|v| v.max(0.0));
    linear(params, f.b, h.view())
}

type Cache = (Array3<f64>, Array3<f64>);

/// Incremental decoding for a fixed batch of sequences advancing in lockstep.
pub struct Session<'a> {
    net: &'a Net,
    params: &'a [Array2<f64>],
    ctx: &'a Context,
    tree: Vec<Cache>,
    dec: Vec<Cache>,
    step: usize,
}

impl Session<'_> {
    /// Causal self-attention of the new rows against each sequence's cache.
    fn self_attend(&mut self, which: (bool, usize), m: Mha, h: &Array2<f64>, seqs: &[usize]) -> Array2<f64> {
        let p = self.params;
        let t = self.step;
        let q = linear(p, m.q, h.view());
        let k = linear(p, m.k, h.view());
        let v = linear(p, m.v, h.view());
        let (kc, vc) = if which.0 {
            &mut self.tree[which.1]
        } else {
            &mut self.dec[which.1]
        };
        let mut out = Array2::zeros(q.dim());
        for (r, &b) in seqs.iter().enumerate() {
            kc.slice_mut(s![b, t, ..]).assign(&k.row(r));
            vc.slice_mut(s![b, t, ..]).assign(&v.row(r));
            let (o, _) = attention_forward(
                q.slice(s![r..r + 1, ..]),
                kc.slice(s![b, ..=t, ..]),
                vc.slice(s![b, ..=t, ..]),
                self.net.arch.heads,
                &[(0, 1, 0, t + 1, false)],
            );
            out.row_mut(r).assign(&o.row(0));
        }
        linear(p, m.o, out.view())
    }

    /// Logits for the next token of each sequence in `seqs`, given their
    /// `(prev, parent, sibling)` ids. Every live sequence must be stepped
    /// together; finished ones may be dropped from `seqs`.
    pub fn step(&mut self, seqs: &[usize], inputs: &[[usize; 3]]) -> Array2<f64> {
        let net = self.net;
        let p = self.params;
        let d = net.arch.d_model;
        let pos = Array2::from_shape_vec((1, d), position(self.step, d)).unwrap();
        let col = |k: usize| inputs.iter().map(|r| r[k]).collect::<Vec<_>>();
        let mut x = p[net.prev_emb].select(ndarray::Axis(0), &col(0))
            + p[net.parent_emb].select(ndarray::Axis(0), &col(1))
            + p[net.sibling_emb].select(ndarray::Axis(0), &col(2))
            + &pos;
        for (i, l) in net.tree_layers.iter().enumerate() {
            let h = norm(p, l.ln1, x.view());
            x = x + self.self_attend((true, i), l.attn, &h, seqs);
            let h = norm(p, l.ln2, x.view());
            x = x + ffn(p, l.ffn, h.view());
        }
        let h = norm(p, net.tree_ln, x.view());
        let w = linear(p, net.w_proj, h.view());
        let fr = self.ctx.f.broadcast((seqs.len(), self.ctx.f.ncols())).unwrap();
        let z = ndarray::concatenate(ndarray::Axis(1), &[fr, w.view()]).unwrap();
        let mut x = linear(p, net.in_proj, z.view()) + &pos;
        for (i, l) in net.dec_layers.iter().enumerate() {
            let h = norm(p, l.ln1, x.view());
            x = x + self.self_attend((false, i), l.attn, &h, seqs);
            let h = norm(p, l.ln2, x.view());
            let q = linear(p, l.cross.q, h.view());
            let (kc, vc) = &self.ctx.cross[i];
            let (o, _) = attention_forward(
                q.view(),
                kc.view(),
                vc.view(),
                net.arch.heads,
                &[(0, q.nrows(), 0, kc.nrows(), false)],
            );
            x = x + linear(p, l.cross.o, o.view());
            let h = norm(p, l.ln3, x.view());
            x = x + ffn(p, l.ffn, h.view());
        }
        let h = norm(p, net.dec_ln, x.view());
        self.step += 1;
        linear(p, net.out, h.view())
    }
}
