//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every executed operation in insertion order, which is
//! by construction a valid topological order: parents always precede their
//! children. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients into every node that needs them; leaves created
//! with `requires_grad` keep their gradient for the caller.
//!
//! Design constraints kept deliberately small:
//! - row-major dense storage, broadcasting only of a trailing-suffix operand
//!   (a `[D]` bias against a `[B, S, D]` activation) and of a rank-2 matmul
//!   operand against a rank-3 batch;
//! - first-order gradients only, one backward pass per graph;
//! - numerically stabilized softmax (max subtraction) and eps-guarded layer
//!   norm, so finite inputs produce finite outputs everywhere.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{strides, Scalar, Tensor};
use crate::{contract_error, dim_error};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Result of [`Graph::cross_entropy`]: the scalar loss plus bookkeeping the
/// caller may want (how many positions actually counted).
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropyOut {
    pub loss: Var,
    /// Number of non-ignored target positions.
    pub counted: usize,
    /// True when every position was ignored; the loss is defined zero and a
    /// warning was logged.
    pub all_ignored: bool,
}

enum Op<T> {
    Leaf,
    Matmul {
        lhs: Var,
        rhs: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        rhs_broadcast: bool,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Gelu {
        input: Var,
    },
    Transpose {
        input: Var,
        perm: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        targets: Vec<u32>,
        ignore_id: u32,
        counted: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation over tensors of element type `T`.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers an input tensor. With `requires_grad`, [`Graph::backward`]
    /// will populate its gradient.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Registers a constant (no gradient ever flows into it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies a node's value into a fresh constant leaf, cutting gradient
    /// flow at this point.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a node after [`Graph::backward`]; `None` if the node did
    /// not participate or backward has not run.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    // ─── elementwise and scaling ───

    /// Elementwise sum. One operand may be a trailing-suffix broadcast of
    /// the other, e.g. `[B, S, D] + [D]`.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out = broadcast_apply(
            self.value(lhs),
            self.value(rhs),
            "add",
            |a, b| a + b,
        )?;
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(out, rg, Op::Add { lhs, rhs }))
    }

    /// Elementwise product with the same broadcast rule as [`Graph::add`].
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out = broadcast_apply(
            self.value(lhs),
            self.value(rhs),
            "mul",
            |a, b| a * b,
        )?;
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(out, rg, Op::Mul { lhs, rhs }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let v = self.value(input);
        let data = v.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(out, rg, Op::Scale { input, factor })
    }

    // ─── matmul ───

    /// Matrix product. Supported shapes: `[m,k] @ [k,n]`, `[b,m,k] @ [k,n]`
    /// (rhs broadcast over the batch) and `[b,m,k] @ [b,k,n]`.
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (ls, rs) = (
            self.value(lhs).shape().to_vec(),
            self.value(rhs).shape().to_vec(),
        );
        let (batch, m, k, n, rhs_broadcast, out_shape) = match (ls.len(), rs.len()) {
            (2, 2) => {
                if ls[1] != rs[0] {
                    return Err(dim_error!("matmul", "inner dims differ: {:?} @ {:?}", ls, rs));
                }
                (1, ls[0], ls[1], rs[1], false, vec![ls[0], rs[1]])
            }
            (3, 2) => {
                if ls[2] != rs[0] {
                    return Err(dim_error!("matmul", "inner dims differ: {:?} @ {:?}", ls, rs));
                }
                (ls[0], ls[1], ls[2], rs[1], true, vec![ls[0], ls[1], rs[1]])
            }
            (3, 3) => {
                if ls[0] != rs[0] || ls[2] != rs[1] {
                    return Err(dim_error!(
                        "matmul",
                        "incompatible batched shapes: {:?} @ {:?}",
                        ls,
                        rs
                    ));
                }
                (ls[0], ls[1], ls[2], rs[2], false, vec![ls[0], ls[1], rs[2]])
            }
            _ => {
                return Err(dim_error!(
                    "matmul",
                    "unsupported ranks: {:?} @ {:?}",
                    ls,
                    rs
                ))
            }
        };
        let a = self.value(lhs).data();
        let b = self.value(rhs).data();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let a_sl = &a[bi * m * k..(bi + 1) * m * k];
            let b_sl = if rhs_broadcast {
                b
            } else {
                &b[bi * k * n..(bi + 1) * k * n]
            };
            matmul_nn(a_sl, b_sl, m, k, n, &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let out = Tensor::new(out_shape, out)?;
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(
            out,
            rg,
            Op::Matmul {
                lhs,
                rhs,
                batch,
                m,
                k,
                n,
                rhs_broadcast,
            },
        ))
    }

    // ─── shape ops ───

    /// Permutes axes; `perm` must be a permutation of `0..rank`.
    pub fn transpose(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(input);
        let out = permute(v, perm)?;
        let rg = self.requires(input);
        Ok(self.push(
            out,
            rg,
            Op::Transpose {
                input,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshaped(shape)?;
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::Reshape { input }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract_error!("concat of zero tensors"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(dim_error!("concat", "axis {} out of range for {:?}", axis, first));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() {
                return Err(dim_error!("concat", "rank mismatch: {:?} vs {:?}", first, s));
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(dim_error!(
                        "concat",
                        "shape mismatch off axis {}: {:?} vs {:?}",
                        axis,
                        first,
                        s
                    ));
                }
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![T::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for &p in parts {
            let v = self.value(p);
            let l = v.shape()[axis];
            let src = v.data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * l * inner;
                data[dst_start..dst_start + l * inner]
                    .copy_from_slice(&src[src_start..src_start + l * inner]);
            }
            offset += l;
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            out,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(input);
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(dim_error!("slice", "axis {} out of range for {:?}", axis, shape));
        }
        if start + len > shape[axis] {
            return Err(dim_error!(
                "slice",
                "range {}..{} out of bounds for axis {} of {:?}",
                start,
                start + len,
                axis,
                shape
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let l = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        let src = v.data();
        for o in 0..outer {
            let src_start = (o * l + start) * inner;
            let dst_start = o * len * inner;
            data[dst_start..dst_start + len * inner]
                .copy_from_slice(&src[src_start..src_start + len * inner]);
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::Slice { input, axis, start }))
    }

    /// Looks up rows of `table` (`[V, D]`) by id. Output shape is
    /// `[ids.len(), D]`; reshape afterwards for batched layouts.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(dim_error!("embedding", "table must be [V, D], got {:?}", t.shape()));
        }
        let (v_rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![T::zero(); ids.len() * dim];
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= v_rows {
                return Err(contract_error!(
                    "embedding id {} out of range for table with {} rows",
                    id,
                    v_rows
                ));
            }
            data[i * dim..(i + 1) * dim].copy_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        let rg = self.requires(table);
        Ok(self.push(
            out,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    // ─── nonlinearities ───

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let data = v.data().iter().map(|&x| gelu_value(x)).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(out, rg, Op::Gelu { input })
    }

    /// Softmax along `axis`, stabilized by subtracting the per-slice max.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let v = self.value(input);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(dim_error!("softmax", "axis {} out of range for {:?}", axis, shape));
        }
        if shape[axis] == 0 {
            return Err(dim_error!("softmax", "axis {} of {:?} is empty", axis, shape));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let l = shape[axis];
        let src = v.data();
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * l + j) * inner + i;
                let mut max = src[at(0)];
                for j in 1..l {
                    max = max.max(src[at(j)]);
                }
                let mut denom = T::zero();
                for j in 0..l {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    denom = denom + e;
                }
                for j in 0..l {
                    data[at(j)] = data[at(j)] / denom;
                }
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::Softmax { input, axis }))
    }

    /// Layer normalization over the last dimension with learned gain/bias.
    /// Population variance, `eps` inside the square root.
    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let v = self.value(input);
        let shape = v.shape().to_vec();
        let d = *shape.last().ok_or_else(|| {
            dim_error!("layer_norm", "input must have rank >= 1")
        })?;
        if d == 0 {
            return Err(dim_error!("layer_norm", "last dim of {:?} is empty", shape));
        }
        let g = self.value(gain);
        let b = self.value(bias);
        if g.shape() != [d] || b.shape() != [d] {
            return Err(dim_error!(
                "layer_norm",
                "gain {:?} / bias {:?} must both be [{}]",
                g.shape(),
                b.shape(),
                d
            ));
        }
        if eps <= T::zero() {
            return Err(Error::Config(alloc::format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = v.numel() / d;
        let src = v.data();
        let gd = g.data().to_vec();
        let bd = b.data().to_vec();
        let mut normalized = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); rows];
        let dn = T::from_usize(d).expect("dim fits scalar");
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &x in row {
                mean = mean + x;
            }
            mean = mean / dn;
            let mut var = T::zero();
            for &x in row {
                let dx = x - mean;
                var = var + dx * dx;
            }
            var = var / dn;
            let isd = (var + eps).sqrt().recip();
            inv_std[r] = isd;
            for (j, &x) in row.iter().enumerate() {
                let xn = (x - mean) * isd;
                normalized[r * d + j] = xn;
                out[r * d + j] = gd[j] * xn + bd[j];
            }
        }
        let normalized = Tensor::new(shape.clone(), normalized)?;
        let out = Tensor::new(shape, out)?;
        let rg = self.requires(input) || self.requires(gain) || self.requires(bias);
        Ok(self.push(
            out,
            rg,
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    // ─── reductions and loss ───

    /// Sum of all elements (rank-0 output).
    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &x in self.value(input).data() {
            acc = acc + x;
        }
        let rg = self.requires(input);
        self.push(Tensor::scalar(acc), rg, Op::Sum { input })
    }

    /// Mean of all elements (rank-0 output).
    pub fn mean(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let n = T::from_usize(v.numel().max(1)).expect("numel fits scalar");
        let mut acc = T::zero();
        for &x in v.data() {
            acc = acc + x;
        }
        let rg = self.requires(input);
        self.push(Tensor::scalar(acc / n), rg, Op::Mean { input })
    }

    /// Mean negative log-likelihood over non-ignored positions.
    ///
    /// `logits` has shape `[..., V]`; `targets` supplies one id per leading
    /// position (row-major). Positions whose target equals `ignore_id`
    /// contribute nothing. If every position is ignored the loss is defined
    /// zero and `all_ignored` is set (a warning is logged).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        ignore_id: u32,
    ) -> Result<CrossEntropyOut> {
        let v = self.value(logits);
        let shape = v.shape();
        let vocab = *shape.last().ok_or_else(|| {
            dim_error!("cross_entropy", "logits must have rank >= 1")
        })?;
        if vocab == 0 {
            return Err(dim_error!("cross_entropy", "vocab dim of {:?} is empty", shape));
        }
        let rows = v.numel() / vocab;
        if targets.len() != rows {
            return Err(dim_error!(
                "cross_entropy",
                "{} target ids for {} logit rows",
                targets.len(),
                rows
            ));
        }
        for &t in targets {
            if t != ignore_id && t as usize >= vocab {
                return Err(contract_error!(
                    "target id {} out of range for vocab {}",
                    t,
                    vocab
                ));
            }
        }
        let src = v.data();
        let mut probs = vec![T::zero(); src.len()];
        let mut counted = 0usize;
        let mut loss_acc = 0.0f64;
        for r in 0..rows {
            let row = &src[r * vocab..(r + 1) * vocab];
            let mut max = row[0];
            for &x in &row[1..] {
                max = max.max(x);
            }
            let mut denom = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[r * vocab + j] = e;
                denom = denom + e;
            }
            for j in 0..vocab {
                probs[r * vocab + j] = probs[r * vocab + j] / denom;
            }
            let t = targets[r];
            if t != ignore_id {
                counted += 1;
                // ln p = (x - max) - ln denom, computed in T then widened.
                let lp = (row[t as usize] - max) - denom.ln();
                loss_acc -= lp.to_f64_lossy();
            }
        }
        let all_ignored = counted == 0;
        let loss_val = if all_ignored {
            log::warn!("cross_entropy: every target position ignored; loss defined 0");
            T::zero()
        } else {
            T::from_f64_lossy(loss_acc / counted as f64)
        };
        let probs = Tensor::new(shape.to_vec(), probs)?;
        let rg = self.requires(logits);
        let loss = self.push(
            Tensor::scalar(loss_val),
            rg,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                ignore_id,
                counted,
            },
        );
        Ok(CrossEntropyOut {
            loss,
            counted,
            all_ignored,
        })
    }

    // ─── backward ───

    /// Reverse pass from a scalar node. Populates gradients on every
    /// participating node whose subtree contains a `requires_grad` leaf.
    /// A second call on the same graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract_error!(
                "backward already ran on this graph; build a fresh graph per pass"
            ));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(contract_error!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            ));
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.accumulate_parents(i, &gy, &mut grads);
            self.nodes[i].grad = Some(
                Tensor::new(self.nodes[i].value.shape().to_vec(), gy).expect("grad shape"),
            );
        }
        Ok(())
    }

    fn accumulate_parents(&self, node: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        // Adds this node's contribution to each parent that needs a gradient.
        let add_into = |grads: &mut [Option<Vec<T>>], this: &Self, v: Var, contrib: Vec<T>| {
            if !this.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a = *a + c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };

        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Add { lhs, rhs } => {
                let ls = self.nodes[lhs.0].value.shape();
                let rs = self.nodes[rhs.0].value.shape();
                add_into(grads, self, *lhs, reduce_to_shape(gy, ls));
                add_into(grads, self, *rhs, reduce_to_shape(gy, rs));
            }
            Op::Mul { lhs, rhs } => {
                let lv = &self.nodes[lhs.0].value;
                let rv = &self.nodes[rhs.0].value;
                let dl = broadcast_apply_raw(gy, rv.data(), lv.numel().max(rv.numel()), |g, b| g * b);
                let dr = broadcast_apply_raw(gy, lv.data(), lv.numel().max(rv.numel()), |g, a| g * a);
                add_into(grads, self, *lhs, reduce_to_shape(&dl, lv.shape()));
                add_into(grads, self, *rhs, reduce_to_shape(&dr, rv.shape()));
            }
            Op::Scale { input, factor } => {
                let contrib = gy.iter().map(|&g| g * *factor).collect();
                add_into(grads, self, *input, contrib);
            }
            Op::Matmul {
                lhs,
                rhs,
                batch,
                m,
                k,
                n,
                rhs_broadcast,
            } => {
                let a = self.nodes[lhs.0].value.data();
                let b = self.nodes[rhs.0].value.data();
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                if self.nodes[lhs.0].requires_grad {
                    let mut da = vec![T::zero(); a.len()];
                    for bi in 0..batch {
                        let gy_sl = &gy[bi * m * n..(bi + 1) * m * n];
                        let b_sl = if *rhs_broadcast {
                            b
                        } else {
                            &b[bi * k * n..(bi + 1) * k * n]
                        };
                        matmul_nt(gy_sl, b_sl, m, n, k, &mut da[bi * m * k..(bi + 1) * m * k]);
                    }
                    add_into(grads, self, *lhs, da);
                }
                if self.nodes[rhs.0].requires_grad {
                    let mut db = vec![T::zero(); b.len()];
                    for bi in 0..batch {
                        let gy_sl = &gy[bi * m * n..(bi + 1) * m * n];
                        let a_sl = &a[bi * m * k..(bi + 1) * m * k];
                        let db_sl = if *rhs_broadcast {
                            &mut db[..]
                        } else {
                            &mut db[bi * k * n..(bi + 1) * k * n]
                        };
                        matmul_tn(a_sl, gy_sl, k, m, n, db_sl);
                    }
                    add_into(grads, self, *rhs, db);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[node].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0usize;
                for &p in parts {
                    let l = self.nodes[p.0].value.shape()[*axis];
                    if self.nodes[p.0].requires_grad {
                        let mut dp = vec![T::zero(); outer * l * inner];
                        for o in 0..outer {
                            let src_start = (o * total + offset) * inner;
                            let dst_start = o * l * inner;
                            dp[dst_start..dst_start + l * inner]
                                .copy_from_slice(&gy[src_start..src_start + l * inner]);
                        }
                        add_into(grads, self, p, dp);
                    }
                    offset += l;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[input.0].value.shape();
                let out_shape = self.nodes[node].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let l = in_shape[*axis];
                let len = out_shape[*axis];
                let mut dx = vec![T::zero(); self.nodes[input.0].value.numel()];
                for o in 0..outer {
                    let dst_start = (o * l + start) * inner;
                    let src_start = o * len * inner;
                    dx[dst_start..dst_start + len * inner]
                        .copy_from_slice(&gy[src_start..src_start + len * inner]);
                }
                add_into(grads, self, *input, dx);
            }
            Op::Embedding { table, ids } => {
                let t = &self.nodes[table.0].value;
                let dim = t.shape()[1];
                let mut dt = vec![T::zero(); t.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    let row = id as usize * dim;
                    for j in 0..dim {
                        dt[row + j] = dt[row + j] + gy[i * dim + j];
                    }
                }
                add_into(grads, self, *table, dt);
            }
            Op::Gelu { input } => {
                let x = self.nodes[input.0].value.data();
                let contrib = x
                    .iter()
                    .zip(gy)
                    .map(|(&xi, &g)| g * gelu_derivative(xi))
                    .collect();
                add_into(grads, self, *input, contrib);
            }
            Op::Transpose { input, perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let gy_t = Tensor::new(self.nodes[node].value.shape().to_vec(), gy.to_vec())
                    .expect("grad shape");
                let dx = permute(&gy_t, &inv).expect("inverse permutation");
                add_into(grads, self, *input, dx.into_data());
            }
            Op::Reshape { input } => {
                add_into(grads, self, *input, gy.to_vec());
            }
            Op::Sum { input } => {
                let g = gy[0];
                let n = self.nodes[input.0].value.numel();
                add_into(grads, self, *input, vec![g; n]);
            }
            Op::Mean { input } => {
                let n = self.nodes[input.0].value.numel().max(1);
                let g = gy[0] / T::from_usize(n).expect("numel fits scalar");
                add_into(grads, self, *input, vec![g; n]);
            }
            Op::Softmax { input, axis } => {
                let y = self.nodes[node].value.data();
                let shape = self.nodes[node].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let l = shape[*axis];
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * l + j) * inner + i;
                        let mut dot = T::zero();
                        for j in 0..l {
                            dot = dot + gy[at(j)] * y[at(j)];
                        }
                        for j in 0..l {
                            dx[at(j)] = y[at(j)] * (gy[at(j)] - dot);
                        }
                    }
                }
                add_into(grads, self, *input, dx);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = *self.nodes[node].value.shape().last().expect("rank >= 1");
                let rows = normalized.numel() / d;
                let xn = normalized.data();
                let gd = self.nodes[gain.0].value.data();
                let dn = T::from_usize(d).expect("dim fits scalar");
                if self.nodes[gain.0].requires_grad || self.nodes[bias.0].requires_grad {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] = dg[j] + gy[r * d + j] * xn[r * d + j];
                            db[j] = db[j] + gy[r * d + j];
                        }
                    }
                    add_into(grads, self, *gain, dg);
                    add_into(grads, self, *bias, db);
                }
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![T::zero(); xn.len()];
                    for r in 0..rows {
                        let mut sum_dxn = T::zero();
                        let mut sum_dxn_xn = T::zero();
                        for j in 0..d {
                            let dxn = gy[r * d + j] * gd[j];
                            sum_dxn = sum_dxn + dxn;
                            sum_dxn_xn = sum_dxn_xn + dxn * xn[r * d + j];
                        }
                        let mean_dxn = sum_dxn / dn;
                        let mean_dxn_xn = sum_dxn_xn / dn;
                        for j in 0..d {
                            let dxn = gy[r * d + j] * gd[j];
                            dx[r * d + j] =
                                inv_std[r] * (dxn - mean_dxn - xn[r * d + j] * mean_dxn_xn);
                        }
                    }
                    add_into(grads, self, *input, dx);
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                ignore_id,
                counted,
            } => {
                if *counted == 0 {
                    return;
                }
                let g = gy[0] / T::from_usize(*counted).expect("count fits scalar");
                let vocab = *probs.shape().last().expect("rank >= 1");
                let p = probs.data();
                let mut dl = vec![T::zero(); p.len()];
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore_id {
                        continue;
                    }
                    let row = r * vocab;
                    for j in 0..vocab {
                        dl[row + j] = g * p[row + j];
                    }
                    dl[row + t as usize] = dl[row + t as usize] - g;
                }
                add_into(grads, self, *logits, dl);
            }
        }
    }
}

// ─── kernels ───

/// `out[m,n] += a[m,k] @ b[k,n]`
fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c = *c + a_ip * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] @ b[n,k]^T`
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out[m,n] += a[k,m]^T @ b[k,n]`
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let c_row = &mut out[i * n..(i + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c = *c + a_pi * bv;
            }
        }
    }
}

fn gelu_value<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_f64_lossy(0.044715);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(0.7978845608028654);
    let a = T::from_f64_lossy(0.044715);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

/// Applies `f` elementwise with trailing-suffix broadcasting: shapes must be
/// equal, or one shape must be a suffix of the other.
fn broadcast_apply<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (big, small, small_is_rhs) = if a.shape() == b.shape() || is_suffix(b.shape(), a.shape()) {
        (a, b, true)
    } else if is_suffix(a.shape(), b.shape()) {
        (b, a, false)
    } else {
        return Err(dim_error!(
            op,
            "shapes {:?} and {:?} are not equal and neither is a trailing suffix of the other",
            a.shape(),
            b.shape()
        ));
    };
    let sn = small.numel().max(1);
    let data = big
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = small.data()[i % sn];
            if small_is_rhs {
                f(x, y)
            } else {
                f(y, x)
            }
        })
        .collect();
    Tensor::new(big.shape().to_vec(), data)
}

/// Elementwise combine where `other` broadcasts cyclically up to `out_len`.
fn broadcast_apply_raw<T: Scalar>(
    gy: &[T],
    other: &[T],
    out_len: usize,
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    debug_assert_eq!(gy.len(), out_len);
    let on = other.len().max(1);
    gy.iter()
        .enumerate()
        .map(|(i, &g)| f(g, other[i % on]))
        .collect()
}

fn is_suffix(needle: &[usize], hay: &[usize]) -> bool {
    needle.len() <= hay.len() && hay[hay.len() - needle.len()..] == *needle
}

/// Sums a gradient buffer down to `target` when it was broadcast up from it.
fn reduce_to_shape<T: Scalar>(gy: &[T], target: &[usize]) -> Vec<T> {
    let tn: usize = target.iter().product::<usize>().max(1);
    if gy.len() == tn {
        return gy.to_vec();
    }
    let mut out = vec![T::zero(); tn];
    for (i, &g) in gy.iter().enumerate() {
        out[i % tn] = out[i % tn] + g;
    }
    out
}

fn permute<T: Scalar>(v: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let shape = v.shape();
    if perm.len() != shape.len() {
        return Err(dim_error!(
            "transpose",
            "permutation {:?} does not match rank of {:?}",
            perm,
            shape
        ));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(dim_error!("transpose", "invalid permutation {:?}", perm));
        }
        seen[p] = true;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut data = vec![T::zero(); v.numel()];
    let src = v.data();
    // out[idx] = in[perm(idx)]: walk output positions in order.
    for (o, slot) in data.iter_mut().enumerate() {
        let mut rem = o;
        let mut src_off = 0usize;
        for (d, &os) in out_strides.iter().enumerate() {
            let coord = rem / os;
            rem %= os;
            src_off += coord * in_strides[perm[d]];
        }
        *slot = src[src_off];
    }
    Tensor::new(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn t2(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_dot_product() {
        let mut g = Graph::new();
        let a = g.constant(t2(1, 2, &[1.0, 2.0]));
        let b = g.constant(t2(2, 1, &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::Dim { op, detail } => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]") && detail.contains("[4, 2]"), "{detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matmul_batched_matches_per_slice() {
        let mut g = Graph::new();
        let a_t = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        let b_t = t2(3, 2, &[1.0, -1.0, 0.5, 2.0, -0.25, 0.0]);
        let a = g.constant(a_t.clone());
        let b = g.constant(b_t.clone());
        let c = g.matmul(a, b).unwrap();
        for bi in 0..2 {
            let mut g2 = Graph::new();
            let a_sl = Tensor::new(
                vec![2, 3],
                a_t.data()[bi * 6..(bi + 1) * 6].to_vec(),
            )
            .unwrap();
            let a2 = g2.constant(a_sl);
            let b2 = g2.constant(b_t.clone());
            let c2 = g2.matmul(a2, b2).unwrap();
            assert_eq!(
                &g.value(c).data()[bi * 4..(bi + 1) * 4],
                g2.value(c2).data()
            );
        }
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_slice(&[0.0f64, 0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        for &p in g.value(y).data() {
            assert_relative_eq!(p, 1.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant_no_overflow() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_slice(&[1000.0f64, 1000.0]));
        let y = g.softmax(x, 0).unwrap();
        assert!(g.value(y).is_finite());
        assert_relative_eq!(g.value(y).data()[0], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn softmax_ln2_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_slice(&[2.0f64.ln(), 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_relative_eq!(g.value(y).data()[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(g.value(y).data()[1], 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn softmax_empty_axis_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 0]));
        assert!(matches!(g.softmax(x, 1), Err(Error::Dim { .. })));
    }

    #[test]
    fn layer_norm_zero_variance() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_slice(&[1.0f64, 1.0, 1.0, 1.0]));
        let gain = g.constant(Tensor::ones(&[4]));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_hand_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_slice(&[1.0f64, 2.0, 3.0, 4.0]));
        let gain = g.constant(Tensor::ones(&[4]));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (&v, &e) in g.value(y).data().iter().zip(&expect) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
    }

    #[test]
    fn layer_norm_unit_norm_sqrt_d() {
        let mut g = Graph::new();
        let vals: Vec<f64> = (0..16).map(|i| (i as f64 * 0.713).sin() * 3.0 + 0.2).collect();
        let x = g.constant(Tensor::new(vec![16], vals).unwrap());
        let gain = g.constant(Tensor::ones(&[16]));
        let bias = g.constant(Tensor::zeros(&[16]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        let norm = g.value(y).l2_norm_f64();
        assert!((norm - 4.0).abs() < 4.0 * 1e-3, "norm {norm}");
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::<f64>::zeros(&[1, 4]));
        let out = g.cross_entropy(logits, &[2], u32::MAX).unwrap();
        assert_relative_eq!(g.value(out.loss).item().unwrap(), 4.0f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn cross_entropy_near_one_hot() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![1, 4], vec![0.0f64, 30.0, 0.0, 0.0]).unwrap());
        let out = g.cross_entropy(logits, &[1], u32::MAX).unwrap();
        assert!(g.value(out.loss).item().unwrap() < 1e-9);
    }

    #[test]
    fn cross_entropy_ignores_padding() {
        let logits_data: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![4, 4], logits_data.clone()).unwrap());
        let out = g.cross_entropy(logits, &[1, 2, 99, 99], 99).unwrap();
        assert_eq!(out.counted, 2);

        let mut g2 = Graph::new();
        let half = g2.constant(Tensor::new(vec![2, 4], logits_data[..8].to_vec()).unwrap());
        let out2 = g2.cross_entropy(half, &[1, 2], 99).unwrap();
        assert_relative_eq!(
            g.value(out.loss).item().unwrap(),
            g2.value(out2.loss).item().unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn cross_entropy_all_ignored_is_zero_with_flag() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::<f64>::zeros(&[2, 3]));
        let out = g.cross_entropy(logits, &[7, 7], 7).unwrap();
        assert!(out.all_ignored);
        assert_eq!(g.value(out.loss).item().unwrap(), 0.0);
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_slice(&[1.0f64, -2.0, 3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_slice(&[1.0f64]), true);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_slice(&[1.0f64, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_slice(&[2.0f64]), true);
        let c = g.constant(Tensor::from_slice(&[5.0f64]));
        let y = g.mul(x, c).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn concat_slice_round_trip_bit_exact() {
        let mut g = Graph::new();
        let a_t = Tensor::new(vec![2, 3], vec![0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let b_t = Tensor::new(vec![2, 2], vec![7.0f64, 8.0, 9.0, 10.0]).unwrap();
        let a = g.constant(a_t.clone());
        let b = g.constant(b_t.clone());
        let c = g.concat(&[a, b], 1).unwrap();
        let a2 = g.slice(c, 1, 0, 3).unwrap();
        let b2 = g.slice(c, 1, 3, 2).unwrap();
        assert_eq!(g.value(a2), &a_t);
        assert_eq!(g.value(b2), &b_t);
    }

    #[test]
    fn transpose_round_trip() {
        let mut g = Graph::new();
        let x_t = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let x = g.constant(x_t.clone());
        let y = g.transpose(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 2, 3]);
        let z = g.transpose(y, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(z), &x_t);
    }

    #[test]
    fn broadcast_add_bias() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![0.0f64; 6]).unwrap(), true);
        let b = g.leaf(Tensor::from_slice(&[1.0f64, 2.0, 3.0]), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_lookup_and_grad() {
        let mut g = Graph::new();
        let table = g.leaf(
            Tensor::new(vec![3, 2], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            true,
        );
        let e = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(e);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_slice(&[3.0f64]), true);
        let d = g.detach(x);
        let y = g.mul(d, d).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
    }
}
