//! The conditional generator: a transformer that reads tokenized dynamics
//! and emits prefix traversals of candidate Lyapunov functions token by
//! token.

mod adam;
mod checkpoint;
mod grammar;
mod nn;
pub mod tape;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use grammar::{replay, step_inputs, GenerationState, SampleConfig, Vocab};
pub use nn::{position, sys_ids, Context, Net, Rows, POW10_RANGE};

use crate::dynamics::SystemTokenization;
use crate::expr::{subtract_origin, Expr, Token};
use crate::reward::uses_all_variables;
use crate::rng;
use tape::{masked_log_softmax, Tape};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("every token is masked")]
    AllMasked,
    #[error("illegal sequence at position {pos}: {reason}")]
    IllegalSequence { pos: usize, reason: String },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("gradient shape mismatch")]
    ShapeMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub d_model: usize,
    pub heads: usize,
    pub dyn_layers: usize,
    pub tree_layers: usize,
    pub dec_layers: usize,
    /// Dimension `p` of the dynamics latent `F`.
    pub latent_p: usize,
    /// Dimension `k` of the tree-state latent `W`.
    pub latent_k: usize,
    pub ff_dim: usize,
    /// Largest system dimension the dynamics encoder accepts.
    pub max_vars: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            d_model: 128,
            heads: 2,
            dyn_layers: 2,
            tree_layers: 3,
            dec_layers: 6,
            latent_p: 128,
            latent_k: 128,
            ff_dim: 512,
            max_vars: 32,
        }
    }
}

impl ArchConfig {
    /// A narrow, shallow network for single-core runs.
    pub fn small() -> Self {
        ArchConfig {
            d_model: 32,
            heads: 2,
            dyn_layers: 1,
            tree_layers: 1,
            dec_layers: 2,
            latent_p: 32,
            latent_k: 32,
            ff_dim: 64,
            max_vars: 32,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.d_model,
            self.heads,
            self.latent_p,
            self.latent_k,
            self.ff_dim,
            self.max_vars,
        ];
        if positive.contains(&0) {
            return Err("architecture sizes must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return Err(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        Ok(())
    }
}

/// One sampled token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
    pub complete: bool,
}

impl Sample {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// A sampled candidate after decoding and origin subtraction.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
    pub total_logprob: f64,
    /// The decoded tree, before origin subtraction.
    pub raw: Option<Expr>,
    /// `raw − raw(0)`, simplified.
    pub expr: Option<Expr>,
    pub valid: bool,
    pub reward: f64,
}

impl Candidate {
    /// Decodes a sample. Incomplete traversals, trees that are not finite at
    /// the origin and trees missing a state variable are invalid.
    pub fn from_sample(s: Sample, n: usize) -> Candidate {
        let raw = if s.complete {
            Expr::from_prefix(&s.tokens, n).ok()
        } else {
            None
        };
        let expr = raw.as_ref().and_then(|r| subtract_origin(r, n).ok());
        let valid = expr.as_ref().is_some_and(|e| uses_all_variables(e, n));
        Candidate {
            total_logprob: s.total_logprob(),
            tokens: s.tokens,
            logprobs: s.logprobs,
            raw,
            expr,
            valid,
            reward: 0.0,
        }
    }
}

/// Gradient of a weighted sequence log-likelihood.
#[derive(Debug, Clone)]
pub struct LogLikGrad {
    /// `Σ_i w_i Σ_j log p_ij + Σ_i e_i Σ_j H_ij`.
    pub value: f64,
    pub grads: Vec<Array2<f64>>,
    /// Per-sequence, per-step log-probabilities.
    pub logprobs: Vec<Vec<f64>>,
}

/// One sequence in a teacher-forced batch: tokens, log-likelihood weight
/// and per-step entropy weight.
#[derive(Debug, Clone, Copy)]
pub struct Weighted<'a> {
    pub tokens: &'a [Token],
    pub weight: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct Policy {
    net: Net,
    vocab: Vocab,
    params: Vec<Array2<f64>>,
}

impl Policy {
    pub fn new(arch: &ArchConfig, n: usize, seed: u64) -> Self {
        arch.validate().expect("valid architecture");
        let vocab = Vocab::new(n);
        let mut r = rng::stream(seed, &[0x1417]);
        let (net, params) = Net::init(arch, vocab.len(), &mut r);
        Policy { net, vocab, params }
    }

    pub(crate) fn from_parts(arch: &ArchConfig, n: usize, params: Vec<Array2<f64>>) -> Result<Self, PolicyError> {
        arch.validate().map_err(PolicyError::Checkpoint)?;
        let vocab = Vocab::new(n);
        let net = Net::layout(arch, vocab.len());
        if net.shapes.len() != params.len()
            || net.shapes.iter().zip(&params).any(|(s, p)| *s != p.dim())
        {
            return Err(PolicyError::Checkpoint("parameter shapes do not match the architecture".into()));
        }
        Ok(Policy { net, vocab, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.net.arch
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.vocab.dim()
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.net.names
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn context(&self, t: &SystemTokenization) -> Result<Context, PolicyError> {
        let ids = sys_ids(t, self.arch())?;
        Ok(self.net.context(&self.params, &ids))
    }

    /// The dynamics latent `F ∈ R^p`.
    pub fn encode_dynamics(&self, t: &SystemTokenization) -> Result<Vec<f64>, PolicyError> {
        Ok(self.context(t)?.f.row(0).to_vec())
    }

    /// Next-token distribution after the partial traversal in `state`.
    pub fn next_token_dist(
        &self,
        ctx: &Context,
        state: &GenerationState,
        mask: &[bool],
    ) -> Result<Vec<f64>, PolicyError> {
        if !mask.iter().any(|&m| m) {
            return Err(PolicyError::AllMasked);
        }
        let mut sess = self.net.session(&self.params, ctx, 1, state.len() + 1);
        let mut st = GenerationState::new();
        let mut logits = sess.step(&[0], &[step_inputs(&st, &self.vocab)?]);
        for &t in state.tokens() {
            st.push(t);
            logits = sess.step(&[0], &[step_inputs(&st, &self.vocab)?]);
        }
        let lp = masked_log_softmax(logits.row(0).as_slice().unwrap(), mask);
        Ok(lp.iter().map(|l| l.exp()).collect())
    }

    /// Samples `q` traversals token by token under the grammar masks.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        ctx: &Context,
        cfg: &SampleConfig,
        q: usize,
        rng: &mut R,
    ) -> Vec<Sample> {
        let k = cfg.k_max.max(1);
        let mut states: Vec<GenerationState> = vec![GenerationState::new(); q];
        let mut logps: Vec<Vec<f64>> = vec![Vec::new(); q];
        let mut live: Vec<usize> = (0..q).collect();
        let mut sess = self.net.session(&self.params, ctx, q, k);
        for _ in 0..k {
            if live.is_empty() {
                break;
            }
            let inputs: Vec<[usize; 3]> = live
                .iter()
                .map(|&b| step_inputs(&states[b], &self.vocab).expect("sampled tokens are in vocabulary"))
                .collect();
            let logits = sess.step(&live, &inputs);
            let mut next = Vec::with_capacity(live.len());
            for (r, &b) in live.iter().enumerate() {
                let mask = states[b].mask(&self.vocab, cfg);
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                let lp = masked_log_softmax(logits.row(r).as_slice().unwrap(), &mask);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = None;
                for (i, &l) in lp.iter().enumerate() {
                    if mask[i] {
                        acc += l.exp();
                        pick = Some(i);
                        if u < acc {
                            break;
                        }
                    }
                }
                let i = pick.unwrap();
                states[b].push(self.vocab.token(i));
                logps[b].push(lp[i]);
                if !states[b].is_complete() {
                    next.push(b);
                }
            }
            live = next;
        }
        states
            .into_iter()
            .zip(logps)
            .map(|(s, logprobs)| Sample {
                complete: s.is_complete(),
                tokens: s.tokens().to_vec(),
                logprobs,
            })
            .collect()
    }

    fn rows(&self, seqs: &[&[Token]], cfg: &SampleConfig) -> Result<(Rows, Vec<bool>, Vec<usize>), PolicyError> {
        let mut rows = Rows::default();
        let mut allowed = Vec::new();
        let mut targets = Vec::new();
        for s in seqs {
            let steps = replay(s, &self.vocab, cfg)?;
            rows.segments.push((rows.inputs.len(), steps.len()));
            for (t, (inp, mask, target)) in steps.into_iter().enumerate() {
                rows.inputs.push(inp);
                rows.positions.push(t);
                allowed.extend(mask);
                targets.push(target);
            }
        }
        Ok((rows, allowed, targets))
    }

    /// Teacher-forced value and gradient of a weighted log-likelihood.
    pub fn weighted_loglik(
        &self,
        t: &SystemTokenization,
        seqs: &[Weighted],
        cfg: &SampleConfig,
    ) -> Result<LogLikGrad, PolicyError> {
        self.loglik_inner(t, seqs, cfg, true)
    }

    fn loglik_inner(
        &self,
        t: &SystemTokenization,
        seqs: &[Weighted],
        cfg: &SampleConfig,
        grad: bool,
    ) -> Result<LogLikGrad, PolicyError> {
        let ids = sys_ids(t, self.arch())?;
        let toks: Vec<&[Token]> = seqs.iter().map(|s| s.tokens).collect();
        let (rows, allowed, targets) = self.rows(&toks, cfg)?;
        if rows.inputs.is_empty() {
            return Ok(LogLikGrad {
                value: 0.0,
                grads: self.params.iter().map(|p| Array2::zeros(p.dim())).collect(),
                logprobs: vec![Vec::new(); seqs.len()],
            });
        }
        let mut w = Vec::with_capacity(targets.len());
        let mut e = Vec::with_capacity(targets.len());
        for (s, &(_, len)) in seqs.iter().zip(&rows.segments) {
            w.extend(std::iter::repeat(s.weight).take(len));
            e.extend(std::iter::repeat(s.entropy).take(len));
        }
        let mut tape = Tape::new(&self.params);
        let (mem, f) = self.net.t_dynamics(&mut tape, &ids);
        let logits = self.net.t_decode(&mut tape, mem, f, &rows);
        let (out, lp) = tape.seq_loglik(logits, allowed, targets, w, e);
        let value = tape.value(out)[[0, 0]];
        let grads = if grad {
            tape.backward(out)
        } else {
            Vec::new()
        };
        let logprobs = rows
            .segments
            .iter()
            .map(|&(s, l)| lp[s..s + l].to_vec())
            .collect();
        Ok(LogLikGrad {
            value,
            grads,
            logprobs,
        })
    }

    /// Per-token log-probabilities of `tokens` under the masks of `cfg`.
    pub fn logprob(&self, tokens: &[Token], t: &SystemTokenization, cfg: &SampleConfig) -> Result<Vec<f64>, PolicyError> {
        let seq = [Weighted {
            tokens,
            weight: 0.0,
            entropy: 0.0,
        }];
        Ok(self.loglik_inner(t, &seq, cfg, false)?.logprobs.remove(0))
    }

    /// Batched [`Policy::logprob`].
    pub fn logprob_batch(
        &self,
        seqs: &[&[Token]],
        t: &SystemTokenization,
        cfg: &SampleConfig,
    ) -> Result<Vec<Vec<f64>>, PolicyError> {
        let ws: Vec<Weighted> = seqs
            .iter()
            .map(|s| Weighted {
                tokens: s,
                weight: 0.0,
                entropy: 0.0,
            })
            .collect();
        Ok(self.loglik_inner(t, &ws, cfg, false)?.logprobs)
    }

    /// One optimizer step on `grads`.
    pub fn apply_gradient(&mut self, opt: &mut Adam, grads: &[Array2<f64>]) -> Result<(), PolicyError> {
        opt.step(&mut self.params, grads)
    }
}
