//! Per-semantic spatio-temporal encoders (graph-convolutional GRU cells) and
//! the multi-head graph attention layer used for cluster assignment.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Tape, Trans, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, LEAKY_SLOPE};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Mat;

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalized_adjacency(a: &Mat) -> Result<Mat> {
    if a.rows() != a.cols() {
        return Err(Error::invalid(format!("adjacency must be square, got {:?}", a.shape())));
    }
    let n = a.rows();
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = with_loops
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 })
        .collect();
    Ok(Mat::from_fn(n, n, |i, j| inv_sqrt[i] * with_loops[(i, j)] * inv_sqrt[j]))
}

/// Graph-convolutional GRU cell: every input map is `Â·[x ‖ h]·W`.
#[derive(Clone, Debug)]
pub struct TgcnCell {
    pub hidden: usize,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub cand_w: ParamId,
    pub cand_b: ParamId,
}

impl TgcnCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let width = inputs + hidden;
        TgcnCell {
            hidden,
            gate_w: store.add_glorot(format!("{name}.gate.weight"), ParamKind::Trainable, width, 2 * hidden, rng),
            gate_b: store.add_zeros(format!("{name}.gate.bias"), 1, 2 * hidden),
            cand_w: store.add_glorot(format!("{name}.cand.weight"), ParamKind::Trainable, width, hidden, rng),
            cand_b: store.add_zeros(format!("{name}.cand.bias"), 1, hidden),
        }
    }

    /// One recurrent step. `a_hat` is an already normalised adjacency shared
    /// by the `blocks` graphs stacked row-wise in `x` and `h`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, a_hat: Var, x: Var, h: Var, blocks: usize) -> Var {
        let d = self.hidden;
        let xh = tape.concat_cols(&[x, h]);
        let conv = tape.shared_left_matmul(a_hat, xh, blocks);
        let gw = tape.param(store, self.gate_w);
        let gb = tape.param(store, self.gate_b);
        let gates = tape.matmul(conv, gw);
        let gates = tape.add_row(gates, gb);
        let gates = tape.sigmoid(gates);
        let reset = tape.slice_cols(gates, 0, d);
        let update = tape.slice_cols(gates, d, d);

        let rh = tape.mul(reset, h);
        let xrh = tape.concat_cols(&[x, rh]);
        let conv = tape.shared_left_matmul(a_hat, xrh, blocks);
        let cw = tape.param(store, self.cand_w);
        let cb = tape.param(store, self.cand_b);
        let cand = tape.matmul(conv, cw);
        let cand = tape.add_row(cand, cb);
        let cand = tape.tanh(cand);

        // h' = u ⊙ h + (1 − u) ⊙ c = c + u ⊙ (h − c)
        let diff = tape.sub(h, cand);
        let gated = tape.mul(update, diff);
        tape.add(cand, gated)
    }
}

/// Encoder of one semantic view.
#[derive(Clone, Debug)]
pub struct SemanticEncoder {
    pub cell: TgcnCell,
}

impl SemanticEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        SemanticEncoder { cell: TgcnCell::new(store, name, inputs, hidden, rng) }
    }

    /// Final hidden state after one step per history entry, from `h₀ = 0`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, a_hat: Var, history: &[Var], blocks: usize) -> Var {
        let n = tape.value(a_hat).rows();
        let mut h = tape.constant(Mat::zeros(n * blocks, self.cell.hidden));
        for &x in history {
            h = self.cell.step(tape, store, a_hat, x, h, blocks);
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub weight: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
}

/// Multi-head graph attention: each head aggregates `LeakyReLU(α·ZW)`, the
/// heads are concatenated and projected to the output width.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub projection: Linear,
}

/// Attention may only use nonzero entries of `a` and the diagonal. Also
/// accepts square blocks stacked row-wise.
pub fn attention_mask(a: &Mat) -> Vec<bool> {
    let n = a.cols();
    (0..a.rows() * n).map(|k| (k / n) % n == k % n || a.as_slice()[k] != 0.0).collect()
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        head_dim: usize,
        num_heads: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let heads = (0..num_heads)
            .map(|h| GatHead {
                weight: store.add_glorot(format!("{name}.head{h}.weight"), ParamKind::Trainable, inputs, head_dim, rng),
                att_src: store.add_glorot(format!("{name}.head{h}.att_src"), ParamKind::Trainable, head_dim, 1, rng),
                att_dst: store.add_glorot(format!("{name}.head{h}.att_dst"), ParamKind::Trainable, head_dim, 1, rng),
            })
            .collect();
        let projection = Linear::new(store, &format!("{name}.proj"), num_heads * head_dim, outputs, true, rng);
        GatLayer { heads, projection }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mask: &[bool], z: Var, blocks: usize) -> Var {
        self.forward_with_attention(tape, store, mask, z, blocks).0
    }

    /// Output plus each head's attention matrix, one `N×N` block per graph.
    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mask: &[bool],
        z: Var,
        blocks: usize,
    ) -> (Var, Vec<Var>) {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut atts = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = tape.param(store, head.weight);
            let wh = tape.matmul(z, w);
            let a_src = tape.param(store, head.att_src);
            let a_dst = tape.param(store, head.att_dst);
            let s = tape.matmul(wh, a_src);
            let t = tape.matmul(wh, a_dst);
            let e = tape.block_outer_sum(s, t, blocks);
            let e = tape.leaky_relu(e, LEAKY_SLOPE);
            let att = tape.masked_softmax_rows(e, mask);
            let agg = tape.block_matmul(att, wh, blocks, Trans::None);
            outs.push(tape.leaky_relu(agg, LEAKY_SLOPE));
            atts.push(att);
        }
        let cat = tape.concat_cols(&outs);
        (self.projection.forward(tape, store, cat), atts)
    }
}
