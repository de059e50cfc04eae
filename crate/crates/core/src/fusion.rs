//! Semantic fusion: per-view embeddings plus temporal context become one
//! fused embedding, from which a momentary adjacency is derived and the
//! static views are reconstructed.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Tape, Trans, Var};
use crate::datasets::TEMPORAL_DIM;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::{ParamId, ParamKind, ParamStore};

#[derive(Clone, Debug)]
pub struct FusionModule {
    /// `C·D + 31 → hidden → D`.
    pub fc: Mlp,
    /// `W_f`, `D×D`.
    pub adjacency_w: ParamId,
    /// `W_c` per semantic, `D×D`.
    pub reconstruction_w: Vec<ParamId>,
}

impl FusionModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, semantics: usize, dim: usize, mlp_hidden: usize, rng: &mut R) -> Self {
        let fc = Mlp::new(store, "fusion.fc", semantics * dim + TEMPORAL_DIM, mlp_hidden, dim, rng);
        let adjacency_w = store.add_glorot("fusion.w_f", ParamKind::Trainable, dim, dim, rng);
        let reconstruction_w = (0..semantics)
            .map(|c| store.add_glorot(format!("fusion.w_rec{c}"), ParamKind::Trainable, dim, dim, rng))
            .collect();
        FusionModule { fc, adjacency_w, reconstruction_w }
    }

    /// `Z_f = FC(Z_1 ⊕ … ⊕ Z_C ⊕ T)` with `T` repeated on every node. A
    /// multi-row `temporal` must already hold one row per node.
    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, semantic: &[Var], temporal: Var) -> Result<Var> {
        let n = tape.value(semantic[0]).rows();
        if let Some(bad) = semantic.iter().find(|z| tape.value(**z).rows() != n) {
            return Err(Error::invalid(format!(
                "semantic embeddings disagree on node count: {} vs {n}",
                tape.value(*bad).rows()
            )));
        }
        let t = match tape.value(temporal).rows() {
            1 => tape.broadcast_rows(temporal, n),
            r if r == n => temporal,
            r => return Err(Error::invalid(format!("temporal context has {r} rows for {n} nodes"))),
        };
        let mut parts = semantic.to_vec();
        parts.push(t);
        let cat = tape.concat_cols(&parts);
        Ok(self.fc.forward(tape, store, cat))
    }

    /// `A_f = softmax_rows(ReLU((Z_f W_f)(Z_f W_f)ᵀ))`.
    pub fn fused_adjacency(&self, tape: &mut Tape, store: &ParamStore, z_f: Var, blocks: usize) -> Var {
        let w = tape.param(store, self.adjacency_w);
        fused_adjacency_with(tape, z_f, w, blocks)
    }

    /// `Â_c = Z_f W_c Z_fᵀ`.
    pub fn reconstruct_view(&self, tape: &mut Tape, store: &ParamStore, z_f: Var, view: usize, blocks: usize) -> Var {
        let w = tape.param(store, self.reconstruction_w[view]);
        reconstruct_with(tape, z_f, w, blocks)
    }
}

pub fn fused_adjacency_with(tape: &mut Tape, z_f: Var, w_f: Var, blocks: usize) -> Var {
    let p = tape.matmul(z_f, w_f);
    let logits = tape.block_matmul(p, p, blocks, Trans::B);
    let logits = tape.relu(logits);
    tape.softmax_rows(logits)
}

pub fn reconstruct_with(tape: &mut Tape, z_f: Var, w_c: Var, blocks: usize) -> Var {
    let zw = tape.matmul(z_f, w_c);
    tape.block_matmul(zw, z_f, blocks, Trans::B)
}

/// `(1/C)·Σ_c ‖A_c − Â_c‖²_F / N²`, averaged over stacked blocks.
pub fn reconstruction_loss(tape: &mut Tape, views: &[Var], reconstructed: &[Var]) -> Var {
    assert_eq!(views.len(), reconstructed.len(), "one reconstruction per view");
    assert!(!views.is_empty(), "reconstruction loss needs at least one view");
    let mut terms = Vec::with_capacity(views.len());
    for (a, a_hat) in views.iter().zip(reconstructed) {
        let diff = tape.sub(*a, *a_hat);
        let sq = tape.square(diff);
        terms.push(tape.mean(sq));
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = tape.add(total, *t);
    }
    tape.scale(total, 1.0 / views.len() as f64)
}
