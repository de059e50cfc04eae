//! Learned soft clustering: assignment, coarsening of embeddings, adjacency
//! and labels, and the link-prediction plus entropy regulariser.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Trans, Var};
use crate::encoders::{attention_mask, GatLayer};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Mat;

/// Node counts of the coarser levels, finest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub level_sizes: Vec<usize>,
}

impl ClusterConfig {
    /// `(100, 10)`, for cities of a few hundred cells.
    pub fn paper() -> Self {
        ClusterConfig { level_sizes: alloc::vec![100, 10] }
    }

    /// `(⌈N/4⌉, ⌈N/16⌉)` for small cities.
    pub fn desk(num_nodes: usize) -> Self {
        ClusterConfig { level_sizes: alloc::vec![num_nodes.div_ceil(4), num_nodes.div_ceil(16)] }
    }

    /// No coarsening at all.
    pub fn flat() -> Self {
        ClusterConfig { level_sizes: Vec::new() }
    }

    /// Checks the sizes strictly decrease starting below `num_nodes`.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut prev = num_nodes;
        for &s in &self.level_sizes {
            if s == 0 || s >= prev {
                return Err(Error::invalid(format!(
                    "cluster sizes {:?} must strictly decrease below {num_nodes} nodes",
                    self.level_sizes
                )));
            }
            prev = s;
        }
        Ok(())
    }
}

/// Assignment network of one level: a GAT whose output width is the number
/// of clusters, followed by a row softmax.
#[derive(Clone, Debug)]
pub struct Assigner {
    pub gat: GatLayer,
    pub clusters: usize,
}

impl Assigner {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, level: usize, dim: usize, heads: usize, clusters: usize, rng: &mut R) -> Self {
        let gat = GatLayer::new(store, &format!("cluster{level}.gat"), dim, clusters, heads, clusters, rng);
        Assigner { gat, clusters }
    }

    /// `S = softmax_rows(GAT(A, Z))`.
    pub fn assign(&self, tape: &mut Tape, store: &ParamStore, a: Var, z: Var, blocks: usize) -> Var {
        let mask = attention_mask(tape.value(a));
        let logits = self.gat.forward(tape, store, &mask, z, blocks);
        tape.softmax_rows(logits)
    }
}

/// `Z' = diag(1ᵀS)⁻¹ SᵀZ` (each cluster embedding is the assignment-weighted
/// mean of its members), `A' = SᵀAS`.
pub fn coarsen(tape: &mut Tape, z: Var, a: Var, s: Var, blocks: usize) -> (Var, Var) {
    let n = tape.value(s).rows() / blocks;
    let ones = tape.constant(Mat::filled(n * blocks, 1, 1.0));
    let mass = tape.block_matmul(s, ones, blocks, Trans::A);
    let mass = tape.clamp(mass, CLUSTER_MASS_FLOOR, f64::INFINITY);
    let sums = tape.block_matmul(s, z, blocks, Trans::A);
    let z_next = tape.div_rows(sums, mass);
    let sta = tape.block_matmul(s, a, blocks, Trans::A);
    let a_next = tape.block_matmul(sta, s, blocks, Trans::None);
    (z_next, a_next)
}

/// Smallest soft cluster size used as a mean-pooling divisor.
pub const CLUSTER_MASS_FLOOR: f64 = 1e-8;

/// `Y' = SᵀY`.
pub fn aggregate_labels(tape: &mut Tape, s: Var, y: Var, blocks: usize) -> Var {
    tape.block_matmul(s, y, blocks, Trans::A)
}

/// The two parts of the clustering regulariser.
#[derive(Clone, Copy, Debug)]
pub struct AuxLoss {
    /// `‖A − SSᵀ‖_F / N²`.
    pub link: Var,
    /// Mean row entropy of `S` (natural log).
    pub entropy: Var,
    pub total: Var,
}

/// Both parts are averaged over the `blocks` stacked graphs.
pub fn aux_loss(tape: &mut Tape, a: Var, s: Var, blocks: usize) -> AuxLoss {
    let rows = tape.value(s).rows() as f64;
    let n = rows / blocks as f64;
    let sst = tape.block_matmul(s, s, blocks, Trans::B);
    let diff = tape.sub(a, sst);
    let sq = tape.square(diff);
    let fro_sq = tape.block_sum(sq, blocks);
    let fro = tape.sqrt(fro_sq);
    let fro_total = tape.sum(fro);
    let link = tape.scale(fro_total, 1.0 / (n * n * blocks as f64));
    let plogp = tape.x_ln_x(s);
    let total_plogp = tape.sum(plogp);
    let entropy = tape.scale(total_plogp, -1.0 / rows);
    let total = tape.add(link, entropy);
    AuxLoss { link, entropy, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_rules() {
        assert_eq!(ClusterConfig::desk(36).level_sizes, [9, 3]);
        assert_eq!(ClusterConfig::desk(4).level_sizes, [1, 1]);
        assert!(ClusterConfig::desk(4).validate(4).is_err());
        assert!(ClusterConfig::paper().validate(400).is_ok());
        assert!(ClusterConfig { level_sizes: alloc::vec![2] }.validate(4).is_ok());
    }

    #[test]
    fn assignment_shape_and_stochasticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let asg = Assigner::new(&mut store, 0, 3, 2, 2, &mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(Mat::filled(4, 4, 0.25));
        let z = tape.constant(Mat::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1));
        let s = asg.assign(&mut tape, &store, a, z, 1);
        assert_eq!(tape.value(s).shape(), (4, 2));
        for r in tape.value(s).row_sums() {
            assert!((r - 1.0).abs() < 1e-12);
        }
        store.zero_all();
        let mut tape = Tape::new();
        let a = tape.constant(Mat::filled(4, 4, 0.25));
        let z = tape.constant(Mat::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1));
        let s = asg.assign(&mut tape, &store, a, z, 1);
        assert!(tape.value(s).as_slice().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn hard_partition_means_embeddings_and_sums_labels() {
        let mut tape = Tape::new();
        let s = tape.constant(Mat::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]));
        let z = tape.constant(Mat::from_rows(&[&[1.0], &[2.0], &[3.0]]));
        let a = tape.constant(Mat::from_fn(3, 3, |i, j| (i + j) as f64));
        let (zc, ac) = coarsen(&mut tape, z, a, s, 1);
        assert_eq!(tape.value(zc).as_slice(), &[1.5, 3.0]);
        assert_eq!(tape.value(ac).sum(), tape.value(a).sum());
        let y = aggregate_labels(&mut tape, s, z, 1);
        assert_eq!(tape.value(y).as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn uniform_single_cluster_collapses_mass() {
        let mut tape = Tape::new();
        let s = tape.constant(Mat::filled(2, 1, 1.0));
        let z = tape.constant(Mat::zeros(2, 1));
        let a = tape.constant(Mat::from_rows(&[&[0.5, 1.5], &[2.0, 3.0]]));
        let (_, ac) = coarsen(&mut tape, z, a, s, 1);
        assert_eq!(tape.value(ac).as_slice(), &[7.0]);
        let y = tape.constant(Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let yc = aggregate_labels(&mut tape, s, y, 1);
        assert_eq!(tape.value(yc).as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn aux_loss_limits() {
        let mut tape = Tape::new();
        let onehot = tape.constant(Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]));
        let sst = Mat::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0]]);
        let a = tape.constant(sst);
        let l = aux_loss(&mut tape, a, onehot, 1);
        assert_eq!(tape.scalar(l.entropy), 0.0);
        assert_eq!(tape.scalar(l.link), 0.0);
        assert_eq!(tape.scalar(l.total), 0.0);

        let uniform = tape.constant(Mat::filled(3, 4, 0.25));
        let a = tape.constant(Mat::zeros(3, 3));
        let l = aux_loss(&mut tape, a, uniform, 1);
        assert!((tape.scalar(l.entropy) - libm::log(4.0)).abs() < 1e-15);
    }
}
