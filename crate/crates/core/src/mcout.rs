//! Latent reasoning over the interleaved sequence.
//!
//! After the initial forward pass, the hidden state of the last non-padded
//! position becomes a continuous thought vector that is appended to the
//! sequence as a new (unembedded) position and forwarded incrementally.
//! Repeating this N_t times deepens the computation without emitting any
//! tokens. Two ways of forming the thought:
//!
//! * [`Variant::Base`]: the thought is the hidden state itself.
//! * [`Variant::Multi`]: the hidden state queries the visual embeddings
//!   through a small multi-head attention block, and the mixed result is
//!   normalized before being appended.
//!
//! Training supervises the answer tokens at every reasoning depth: the
//! total loss is `μ · Σ_k L_aux(k) + L_final`, where each `L_aux(k)` is a
//! teacher-forced cross-entropy of the answer after `k` thoughts and
//! `L_final` is the same quantity at full depth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std-linked builds resolve float math inherently
use num_traits::Float;

use crate::contract_error;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{
    extend_mask, forward_suffix, last_hidden, vocab, BoundModel, DecoderState, InterleavedBatch,
};
use crate::rng::{normal, seeded};
use serde::{Deserialize, Serialize};
use crate::tensor::{Scalar, Tensor};

/// Normalization epsilon for thought embeddings. Kept tiny so normalized
/// thoughts land on the √D sphere even when pre-norm activations are small.
pub const THOUGHT_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Thought = last hidden state, appended unchanged.
    Base,
    /// Thought = normalized cross-attention over visual embeddings.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasoningConfig {
    pub n_t: usize,
    pub variant: Variant,
    /// Keep gradients flowing across reasoning iterations.
    pub backprop_through_loop: bool,
    /// Detach each thought before appending it to the sequence.
    pub detach_thoughts: bool,
}

impl ReasoningConfig {
    pub fn new(n_t: usize, variant: Variant) -> Self {
        Self {
            n_t,
            variant,
            backprop_through_loop: true,
            detach_thoughts: false,
        }
    }
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        Self::new(5, Variant::Multi)
    }
}

// ─── latent attention parameters ───

#[derive(Debug, Clone, PartialEq)]
pub struct LatentAttentionParams<T: Scalar> {
    pub dim: usize,
    pub heads: usize,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub k_w: Tensor<T>,
    pub k_b: Tensor<T>,
    pub v_w: Tensor<T>,
    pub v_b: Tensor<T>,
    pub o_w: Tensor<T>,
    pub o_b: Tensor<T>,
    pub back_w: Tensor<T>,
    pub back_b: Tensor<T>,
    pub norm_g: Tensor<T>,
    pub norm_b: Tensor<T>,
}

impl<T: Scalar> LatentAttentionParams<T> {
    fn shaped(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "latent attention dim {dim} must be divisible by heads {heads}"
            )));
        }
        Ok(Self {
            dim,
            heads,
            proj_w: Tensor::zeros(&[dim, dim]),
            proj_b: Tensor::zeros(&[dim]),
            k_w: Tensor::zeros(&[dim, dim]),
            k_b: Tensor::zeros(&[dim]),
            v_w: Tensor::zeros(&[dim, dim]),
            v_b: Tensor::zeros(&[dim]),
            o_w: Tensor::zeros(&[dim, dim]),
            o_b: Tensor::zeros(&[dim]),
            back_w: Tensor::zeros(&[dim, dim]),
            back_b: Tensor::zeros(&[dim]),
            norm_g: Tensor::ones(&[dim]),
            norm_b: Tensor::zeros(&[dim]),
        })
    }

    /// Seeded init: fan-in scaled normal weights (std `1/sqrt(dim)`), zero
    /// biases, affine norm (1, 0). The mixing path chains two projections
    /// with no norm in between, so the scale must survive both for the
    /// post-norm thought to sit at `sqrt(D)` from the first step.
    pub fn init(dim: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut p = Self::shaped(dim, heads)?;
        let mut rng = seeded(seed);
        let std = 1.0 / (dim as f64).sqrt();
        for t in [
            &mut p.proj_w,
            &mut p.k_w,
            &mut p.v_w,
            &mut p.o_w,
            &mut p.back_w,
        ] {
            for v in t.data_mut() {
                *v = normal(&mut rng, 0.0, std);
            }
        }
        Ok(p)
    }

    pub fn visit(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("latent.proj.w".to_string(), &self.proj_w),
            ("latent.proj.b".to_string(), &self.proj_b),
            ("latent.k.w".to_string(), &self.k_w),
            ("latent.k.b".to_string(), &self.k_b),
            ("latent.v.w".to_string(), &self.v_w),
            ("latent.v.b".to_string(), &self.v_b),
            ("latent.o.w".to_string(), &self.o_w),
            ("latent.o.b".to_string(), &self.o_b),
            ("latent.back.w".to_string(), &self.back_w),
            ("latent.back.b".to_string(), &self.back_b),
            ("latent.norm.g".to_string(), &self.norm_g),
            ("latent.norm.b".to_string(), &self.norm_b),
        ]
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("latent.proj.w".to_string(), &mut self.proj_w),
            ("latent.proj.b".to_string(), &mut self.proj_b),
            ("latent.k.w".to_string(), &mut self.k_w),
            ("latent.k.b".to_string(), &mut self.k_b),
            ("latent.v.w".to_string(), &mut self.v_w),
            ("latent.v.b".to_string(), &mut self.v_b),
            ("latent.o.w".to_string(), &mut self.o_w),
            ("latent.o.b".to_string(), &mut self.o_b),
            ("latent.back.w".to_string(), &mut self.back_w),
            ("latent.back.b".to_string(), &mut self.back_b),
            ("latent.norm.g".to_string(), &mut self.norm_g),
            ("latent.norm.b".to_string(), &mut self.norm_b),
        ]
    }

    pub fn from_named(
        dim: usize,
        heads: usize,
        tensors: &BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        let mut p = Self::shaped(dim, heads)?;
        for (name, slot) in p.visit_mut() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| contract_error!("checkpoint missing tensor {name}"))?;
            if t.shape() != slot.shape() {
                return Err(contract_error!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            *slot = t.clone();
        }
        Ok(p)
    }
}

/// Latent attention parameters registered as graph leaves.
pub struct BoundLatent {
    pub heads: usize,
    pub proj_w: Var,
    pub proj_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub o_w: Var,
    pub o_b: Var,
    pub back_w: Var,
    pub back_b: Var,
    pub norm_g: Var,
    pub norm_b: Var,
    pub ordered: Vec<Var>,
}

impl BoundLatent {
    pub fn bind<T: Scalar>(
        g: &mut Graph<T>,
        params: &LatentAttentionParams<T>,
        trainable: bool,
    ) -> Self {
        let mut ordered = Vec::new();
        let mut leaf = |g: &mut Graph<T>, t: &Tensor<T>| {
            let v = g.leaf(t.clone(), trainable);
            ordered.push(v);
            v
        };
        let proj_w = leaf(g, &params.proj_w);
        let proj_b = leaf(g, &params.proj_b);
        let k_w = leaf(g, &params.k_w);
        let k_b = leaf(g, &params.k_b);
        let v_w = leaf(g, &params.v_w);
        let v_b = leaf(g, &params.v_b);
        let o_w = leaf(g, &params.o_w);
        let o_b = leaf(g, &params.o_b);
        let back_w = leaf(g, &params.back_w);
        let back_b = leaf(g, &params.back_b);
        let norm_g = leaf(g, &params.norm_g);
        let norm_b = leaf(g, &params.norm_b);
        Self {
            heads: params.heads,
            proj_w,
            proj_b,
            k_w,
            k_b,
            v_w,
            v_b,
            o_w,
            o_b,
            back_w,
            back_b,
            norm_g,
            norm_b,
            ordered,
        }
    }

    pub fn gradients<T: Scalar>(&self, g: &Graph<T>) -> Vec<Option<Tensor<T>>> {
        self.ordered.iter().map(|v| g.grad(*v).cloned()).collect()
    }
}

// ─── latent attention forward ───

/// Output of one latent-attention application.
pub struct LatentAttentionOut {
    /// Normalized thought embedding `[B, D]`.
    pub thought: Var,
    /// Mixed embedding before normalization `[B, D]`.
    pub prenorm: Var,
    /// Attention weights `[B·heads, 1, S_m]`; each row sums to 1.
    pub weights: Var,
}

/// `Norm(ProjBack(MultiHeadAttn(Proj(h_l), e_m)))`: the hidden state
/// queries the multimodal embeddings and the mixed result is normalized.
/// `h_l` is `[B, D]`, `e_m` is `[B, S_m, D]`.
pub fn multimodal_latent_attention<T: Scalar>(
    g: &mut Graph<T>,
    latent: &BoundLatent,
    h_l: Var,
    e_m: Var,
) -> Result<LatentAttentionOut> {
    let hs = g.value(h_l).shape().to_vec();
    let es = g.value(e_m).shape().to_vec();
    if hs.len() != 2 || es.len() != 3 || hs[0] != es[0] || hs[1] != es[2] {
        return Err(contract_error!(
            "latent attention needs h_l [B, D] and e_m [B, S, D], got {hs:?} and {es:?}"
        ));
    }
    let (b, d, s_m) = (hs[0], hs[1], es[1]);
    let heads = latent.heads;
    if d % heads != 0 {
        return Err(Error::Config(format!(
            "latent attention dim {d} must be divisible by heads {heads}"
        )));
    }
    let dh = d / heads;

    let q0 = g.matmul(h_l, latent.proj_w)?;
    let q0 = g.add(q0, latent.proj_b)?;
    let q3 = g.reshape(q0, &[b, 1, d])?;
    let q4 = g.reshape(q3, &[b, 1, heads, dh])?;
    let q4 = g.transpose(q4, &[0, 2, 1, 3])?;
    let q = g.reshape(q4, &[b * heads, 1, dh])?;

    let project = |g: &mut Graph<T>, w: Var, bias: Var| -> Result<Var> {
        let y = g.matmul(e_m, w)?;
        let y = g.add(y, bias)?;
        let y4 = g.reshape(y, &[b, s_m, heads, dh])?;
        let y4 = g.transpose(y4, &[0, 2, 1, 3])?;
        g.reshape(y4, &[b * heads, s_m, dh])
    };
    let k = project(g, latent.k_w, latent.k_b)?;
    let v = project(g, latent.v_w, latent.v_b)?;

    let k_t = g.transpose(k, &[0, 2, 1])?;
    let scores = g.matmul(q, k_t)?;
    let scores = g.scale(scores, T::from_f64_lossy(1.0 / (dh as f64).sqrt()));
    let weights = g.softmax(scores, 2)?;
    let ctx = g.matmul(weights, v)?;
    let ctx4 = g.reshape(ctx, &[b, heads, 1, dh])?;
    let ctx4 = g.transpose(ctx4, &[0, 2, 1, 3])?;
    let merged = g.reshape(ctx4, &[b, d])?;
    let mixed = g.matmul(merged, latent.o_w)?;
    let mixed = g.add(mixed, latent.o_b)?;
    let back = g.matmul(mixed, latent.back_w)?;
    let prenorm = g.add(back, latent.back_b)?;
    let thought = g.layer_norm(
        prenorm,
        latent.norm_g,
        latent.norm_b,
        T::from_f64_lossy(THOUGHT_NORM_EPS),
    )?;
    Ok(LatentAttentionOut {
        thought,
        prenorm,
        weights,
    })
}

/// Base-variant thought: the hidden state reshaped to a one-position
/// column `[B, 1, D]`, values bit-identical to the input.
pub fn base_thought<T: Scalar>(g: &mut Graph<T>, h_l: Var) -> Result<Var> {
    let shape = g.value(h_l).shape().to_vec();
    if shape.len() != 2 {
        return Err(contract_error!("thought source must be [B, D], got {shape:?}"));
    }
    g.reshape(h_l, &[shape[0], 1, shape[1]])
}

// ─── reasoning loop ───

/// Sequence state after `k` appended thoughts.
pub struct StepState<T: Scalar> {
    /// Hidden state at the current last non-padded position `[B, D]`.
    pub h_l: Var,
    pub mask: Tensor<T>,
    pub cache: DecoderState,
}

/// Per-iteration snapshot: the hidden state the thought was formed from
/// and the thought that was appended.
pub struct IterationRecord<T: Scalar> {
    /// 1-based iteration index.
    pub k: usize,
    /// `h_l` before this iteration's append (`[B, D]` values).
    pub hl: Tensor<T>,
    /// Appended thought embedding (`[B, D]` values, post-norm for Multi).
    pub ht: Tensor<T>,
    /// Mixed embedding before normalization (Multi only).
    pub ht_prenorm: Option<Tensor<T>>,
}

pub struct ReasoningTrace<T: Scalar> {
    pub records: Vec<IterationRecord<T>>,
}

/// Population statistics of one `[D]` vector, computed in f64.
pub fn vector_stats<T: Scalar>(row: &[T]) -> (f64, f64, f64) {
    let n = row.len() as f64;
    let vals: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
    (mean, var.sqrt(), norm)
}

pub const TRACE_CSV_HEADER: &str =
    "sample_id,k,hl_mean,hl_std,hl_norm,ht_mean,ht_std,ht_norm,aux_loss";

impl<T: Scalar> ReasoningTrace<T> {
    /// One CSV row per (sample, iteration), matching [`TRACE_CSV_HEADER`].
    /// `aux` supplies the per-iteration auxiliary losses (empty cell when
    /// absent); `prenorm` swaps the thought columns to pre-norm values.
    pub fn csv_rows(
        &self,
        sample_ids: &[&str],
        aux: Option<&[f64]>,
        prenorm: bool,
    ) -> Result<Vec<String>> {
        if let Some(aux) = aux {
            if aux.len() != self.records.len() {
                return Err(contract_error!(
                    "{} aux losses for {} iterations",
                    aux.len(),
                    self.records.len()
                ));
            }
        }
        let mut rows = Vec::new();
        for (ri, rec) in self.records.iter().enumerate() {
            let ht = if prenorm {
                rec.ht_prenorm
                    .as_ref()
                    .ok_or_else(|| contract_error!("iteration {} has no pre-norm thought", rec.k))?
            } else {
                &rec.ht
            };
            let b = rec.hl.shape()[0];
            let d = rec.hl.shape()[1];
            if sample_ids.len() != b {
                return Err(contract_error!("{} sample ids for batch of {b}", sample_ids.len()));
            }
            for (i, id) in sample_ids.iter().enumerate() {
                let (hm, hs, hn) = vector_stats(&rec.hl.data()[i * d..(i + 1) * d]);
                let (tm, ts, tn) = vector_stats(&ht.data()[i * d..(i + 1) * d]);
                let aux_cell = match aux {
                    Some(a) => format!("{}", a[ri]),
                    None => String::new(),
                };
                rows.push(format!(
                    "{id},{k},{hm},{hs},{hn},{tm},{ts},{tn},{aux_cell}",
                    k = rec.k
                ));
            }
        }
        Ok(rows)
    }
}

/// Result of the reasoning loop: per-depth sequence states (`steps[k]` is
/// the state after `k` thoughts, so `steps.len() == n_t + 1`) and the
/// iteration trace.
pub struct ReasoningRun<T: Scalar> {
    pub steps: Vec<StepState<T>>,
    pub trace: ReasoningTrace<T>,
}

impl<T: Scalar> ReasoningRun<T> {
    pub fn final_step(&self) -> &StepState<T> {
        self.steps.last().expect("at least the initial step")
    }
}

/// Appends one thought column (`[B, D]`) to the sequence and forwards it
/// incrementally. Returns the new `h_l` and the extended mask.
pub fn reasoning_step<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundModel,
    state: &mut DecoderState,
    mask: &Tensor<T>,
    thought: Var,
) -> Result<(Var, Tensor<T>)> {
    let col = base_thought(g, thought)?;
    let extended = extend_mask(mask, 1);
    let h = forward_suffix(g, bound, col, &extended, state)?;
    let shape = g.value(h).shape().to_vec();
    let h_l = g.reshape(h, &[shape[0], shape[2]])?;
    Ok((h_l, extended))
}

/// Runs the initial forward pass and `cfg.n_t` reasoning iterations.
/// `latent` must be provided for [`Variant::Multi`]. `state` carries any
/// dropout arming; it must be fresh (no cached positions).
pub fn run_reasoning<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundModel,
    latent: Option<&BoundLatent>,
    cfg: &ReasoningConfig,
    batch: &InterleavedBatch<T>,
    mut state: DecoderState,
) -> Result<ReasoningRun<T>> {
    if state.seq_len() != 0 {
        return Err(contract_error!(
            "reasoning needs a fresh decoder state, got {} cached positions",
            state.seq_len()
        ));
    }
    if cfg.variant == Variant::Multi && latent.is_none() {
        return Err(Error::Config(
            "multi variant needs latent attention parameters".into(),
        ));
    }
    let h_all = forward_suffix(g, bound, batch.e_inter, &batch.mask, &mut state)?;
    let mut h_l = last_hidden(g, h_all, &batch.mask)?;
    let mut mask = batch.mask.clone();
    let e_m = g.slice(batch.e_inter, 1, 0, batch.s_v)?;

    let mut steps = vec![StepState {
        h_l,
        mask: mask.clone(),
        cache: state.clone(),
    }];
    let mut records = Vec::with_capacity(cfg.n_t);

    for k in 1..=cfg.n_t {
        let (thought, prenorm) = match cfg.variant {
            Variant::Base => (h_l, None),
            Variant::Multi => {
                let out = multimodal_latent_attention(
                    g,
                    latent.expect("checked above"),
                    h_l,
                    e_m,
                )?;
                (out.thought, Some(out.prenorm))
            }
        };
        let thought = if cfg.detach_thoughts {
            g.detach(thought)
        } else {
            thought
        };
        records.push(IterationRecord {
            k,
            hl: g.value(h_l).clone(),
            ht: g.value(thought).clone(),
            ht_prenorm: prenorm.map(|p| g.value(p).clone()),
        });
        let (h_next, extended) = reasoning_step(g, bound, &mut state, &mask, thought)?;
        h_l = if cfg.backprop_through_loop {
            h_next
        } else {
            g.detach(h_next)
        };
        mask = extended;
        steps.push(StepState {
            h_l,
            mask: mask.clone(),
            cache: state.clone(),
        });
    }
    Ok(ReasoningRun {
        steps,
        trace: ReasoningTrace { records },
    })
}

// ─── training loss ───

/// Loss terms of one training batch. `total = μ · Σ aux + final`; with
/// μ = 0 or depth 0 the auxiliary branches are skipped entirely and
/// `total` is the same graph node as `final_loss`.
pub struct LossBreakdown {
    pub aux: Vec<Var>,
    pub final_loss: Var,
    pub total: Var,
    pub mu: f64,
}

impl LossBreakdown {
    pub fn aux_values<T: Scalar>(&self, g: &Graph<T>) -> Vec<f64> {
        self.aux
            .iter()
            .map(|&v| g.value(v).item().expect("scalar loss").to_f64_lossy())
            .collect()
    }

    pub fn final_value<T: Scalar>(&self, g: &Graph<T>) -> f64 {
        g.value(self.final_loss)
            .item()
            .expect("scalar loss")
            .to_f64_lossy()
    }

    pub fn total_value<T: Scalar>(&self, g: &Graph<T>) -> f64 {
        g.value(self.total)
            .item()
            .expect("scalar loss")
            .to_f64_lossy()
    }
}

/// Teacher-forced cross-entropy of the answer tokens from the state after
/// `k` thoughts: the first answer token is predicted from `h_l`, each later
/// one from its predecessor's appended embedding. Branches run on cloned
/// state, leaving `step` untouched.
fn answer_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundModel,
    step: &StepState<T>,
    answers: &[Vec<u32>],
) -> Result<Var> {
    let b = step.mask.shape()[0];
    if answers.len() != b {
        return Err(contract_error!("{} answers for batch of {b}", answers.len()));
    }
    if answers.iter().any(|a| a.is_empty()) {
        return Err(contract_error!("every answer needs at least one token"));
    }
    for ans in answers {
        if ans.iter().any(|&t| t == vocab::PAD) {
            return Err(contract_error!("answers must not contain the padding id"));
        }
    }
    let d = bound.cfg.decoder.dim;
    let a_in = answers.iter().map(|a| a.len() - 1).max().expect("non-empty");

    let h_pre = base_thought(g, step.h_l)?;
    let h_seq = if a_in == 0 {
        h_pre
    } else {
        let mut mask = step.mask.clone();
        let mut cache = step.cache.clone();
        let s = mask.shape()[1];
        let mut extended = Tensor::zeros(&[b, s + a_in]);
        let mut input_ids = vec![vocab::PAD; b * a_in];
        for i in 0..b {
            extended.data_mut()[i * (s + a_in)..i * (s + a_in) + s]
                .copy_from_slice(&mask.data()[i * s..(i + 1) * s]);
            for j in 0..answers[i].len() - 1 {
                extended.data_mut()[i * (s + a_in) + s + j] = T::one();
                input_ids[i * a_in + j] = answers[i][j];
            }
        }
        mask = extended;
        let emb = g.embedding(bound.tok_emb, &input_ids)?;
        let cols = g.reshape(emb, &[b, a_in, d])?;
        let h_ans = forward_suffix(g, bound, cols, &mask, &mut cache)?;
        g.concat(&[h_pre, h_ans], 1)?
    };
    let logit_rows = g.matmul(h_seq, bound.lm_head)?;
    let mut targets = vec![vocab::PAD; b * (a_in + 1)];
    for i in 0..b {
        for (j, &t) in answers[i].iter().enumerate() {
            targets[i * (a_in + 1) + j] = t;
        }
    }
    let out = g.cross_entropy(logit_rows, &targets, vocab::PAD)?;
    if out.all_ignored {
        return Err(contract_error!("no supervised answer tokens in batch"));
    }
    Ok(out.loss)
}

/// Builds the full training loss `μ · Σ_k L_aux(k) + L_final` over a
/// completed reasoning run. With `mu == 0` only the final branch is built,
/// so the graph (and its gradients) is bit-identical to final-only
/// training.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    bound: &BoundModel,
    run: &ReasoningRun<T>,
    answers: &[Vec<u32>],
    mu: f64,
) -> Result<LossBreakdown> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::Config(format!("mu must be finite and >= 0, got {mu}")));
    }
    let n_t = run.steps.len() - 1;
    if mu == 0.0 || n_t == 0 {
        let final_loss = answer_cross_entropy(g, bound, run.final_step(), answers)?;
        return Ok(LossBreakdown {
            aux: Vec::new(),
            final_loss,
            total: final_loss,
            mu,
        });
    }
    let mut aux = Vec::with_capacity(n_t);
    for k in 1..=n_t {
        aux.push(answer_cross_entropy(g, bound, &run.steps[k], answers)?);
    }
    let final_loss = *aux.last().expect("n_t >= 1");
    let mut sum = aux[0];
    for &a in &aux[1..] {
        sum = g.add(sum, a)?;
    }
    let scaled = g.scale(sum, T::from_f64_lossy(mu));
    let total = g.add(scaled, final_loss)?;
    Ok(LossBreakdown {
        aux,
        final_loss,
        total,
        mu,
    })
}
