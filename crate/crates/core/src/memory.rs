//! Level-wise meta-knowledge memories queried by attention, and the
//! per-level prediction heads.
//!
//! Each level owns `M` common slots shared by both cities and, when
//! configured, `M_p` private slots read only by the target city. Retrieval
//! computes `Q = Z W_q`, `K = I W_k`, `V = I W_v`, a row softmax of `QKᵀ`
//! over the memory slots, and returns `O = αV` together with `Q`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::{ParamId, ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CityRole {
    Source,
    Target,
}

#[derive(Clone, Debug)]
pub struct MemoryLevel {
    pub common: ParamId,
    pub private: Option<ParamId>,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub levels: Vec<MemoryLevel>,
}

/// Result of one retrieval.
#[derive(Clone, Copy, Debug)]
pub struct Retrieval {
    pub output: Var,
    pub query: Var,
    pub attention: Var,
}

impl MemoryBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        levels: usize,
        dim: usize,
        common_slots: usize,
        private_slots: usize,
        rng: &mut R,
    ) -> Self {
        let levels = (0..levels)
            .map(|l| MemoryLevel {
                common: store.add_glorot(format!("memory{l}.common"), ParamKind::CommonMemory, common_slots, dim, rng),
                private: (private_slots > 0).then(|| {
                    store.add_glorot(format!("memory{l}.private"), ParamKind::PrivateMemory, private_slots, dim, rng)
                }),
                w_q: store.add_glorot(format!("memory{l}.w_q"), ParamKind::Trainable, dim, dim, rng),
                w_k: store.add_glorot(format!("memory{l}.w_k"), ParamKind::Trainable, dim, dim, rng),
                w_v: store.add_glorot(format!("memory{l}.w_v"), ParamKind::Trainable, dim, dim, rng),
            })
            .collect();
        MemoryBank { levels }
    }

    /// Number of key/value slots a city reads at a level.
    pub fn slots(&self, store: &ParamStore, level: usize, role: CityRole) -> usize {
        let lvl = &self.levels[level];
        let common = store.value(lvl.common).rows();
        match (role, lvl.private) {
            (CityRole::Target, Some(p)) => common + store.value(p).rows(),
            _ => common,
        }
    }

    pub fn retrieve(&self, tape: &mut Tape, store: &ParamStore, z: Var, level: usize, role: CityRole) -> Result<Retrieval> {
        let lvl = self
            .levels
            .get(level)
            .ok_or_else(|| Error::invalid(format!("memory has {} levels, asked for level {level}", self.levels.len())))?;
        let common = tape.param(store, lvl.common);
        let slots = match (role, lvl.private) {
            (CityRole::Target, Some(p)) => {
                let private = tape.param(store, p);
                tape.concat_rows(&[common, private])
            }
            _ => common,
        };
        let w_q = tape.param(store, lvl.w_q);
        let w_k = tape.param(store, lvl.w_k);
        let w_v = tape.param(store, lvl.w_v);
        let query = tape.matmul(z, w_q);
        let keys = tape.matmul(slots, w_k);
        let values = tape.matmul(slots, w_v);
        Ok(attend(tape, query, keys, values))
    }
}

/// `α = softmax_rows(QKᵀ)`, `O = αV`.
pub fn attend(tape: &mut Tape, query: Var, keys: Var, values: Var) -> Retrieval {
    let kt = tape.transpose(keys);
    let scores = tape.matmul(query, kt);
    let attention = tape.softmax_rows(scores);
    let output = tape.matmul(attention, values);
    Retrieval { output, query, attention }
}

/// Per-level head `D → hidden → F`, applied to every node independently.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub mlp: Mlp,
}

impl PredictionHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, level: usize, dim: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        PredictionHead { mlp: Mlp::new(store, &format!("head{level}"), dim, hidden, outputs, rng) }
    }

    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, o: Var) -> Var {
        self.mlp.forward(tape, store, o)
    }
}

/// Mean squared error over nodes and features.
pub fn prediction_loss(tape: &mut Tape, predicted: Var, labels: Var) -> Var {
    let diff = tape.sub(predicted, labels);
    let sq = tape.square(diff);
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(private: usize) -> (ParamStore, MemoryBank) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let b = MemoryBank::new(&mut store, 2, 4, 3, private, &mut rng);
        (store, b)
    }

    #[test]
    fn identical_slots_give_constant_output() {
        let (mut store, b) = bank(0);
        *store.value_mut(b.levels[0].common) = Mat::from_fn(3, 4, |_, j| j as f64 - 1.5);
        let mut tape = Tape::new();
        let z = tape.constant(Mat::from_fn(5, 4, |i, j| (i as f64) * 0.7 - j as f64));
        let r = b.retrieve(&mut tape, &store, z, 0, CityRole::Source).unwrap();
        let expect = Mat::from_fn(1, 4, |_, j| j as f64 - 1.5).matmul(store.value(b.levels[0].w_v));
        for i in 0..5 {
            for (a, e) in tape.value(r.output).row(i).iter().zip(expect.as_slice()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_softmax_over_two_slots() {
        let mut tape = Tape::new();
        let q = tape.constant(Mat::from_rows(&[&[libm::log(3.0), 0.0]]));
        let k = tape.constant(Mat::identity(2));
        let v = tape.constant(Mat::from_rows(&[&[4.0, 0.0], &[0.0, 8.0]]));
        let r = attend(&mut tape, q, k, v);
        let a = tape.value(r.attention);
        assert!((a[(0, 0)] - 0.75).abs() < 1e-15 && (a[(0, 1)] - 0.25).abs() < 1e-15);
        let o = tape.value(r.output);
        assert!((o[(0, 0)] - 3.0).abs() < 1e-14 && (o[(0, 1)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn target_reads_common_plus_private() {
        let (store, b) = bank(3);
        assert_eq!(b.slots(&store, 0, CityRole::Target), 6);
        assert_eq!(b.slots(&store, 0, CityRole::Source), 3);
        let mut tape = Tape::new();
        let z = tape.constant(Mat::filled(2, 4, 0.3));
        let r = b.retrieve(&mut tape, &store, z, 1, CityRole::Target).unwrap();
        assert_eq!(tape.value(r.attention).shape(), (2, 6));
        let r = b.retrieve(&mut tape, &store, z, 1, CityRole::Source).unwrap();
        assert_eq!(tape.value(r.attention).shape(), (2, 3));
        assert!(matches!(b.retrieve(&mut tape, &store, z, 2, CityRole::Source), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn source_never_reads_private_slots() {
        let (store, b) = bank(3);
        let mut tape = Tape::new();
        let z = tape.constant(Mat::filled(2, 4, 0.3));
        for l in 0..2 {
            b.retrieve(&mut tape, &store, z, l, CityRole::Source).unwrap();
        }
        let used: Vec<ParamId> = tape.params_used().collect();
        for lvl in &b.levels {
            assert!(!used.contains(&lvl.private.unwrap()));
            assert!(used.contains(&lvl.common));
        }
    }

    #[test]
    fn head_and_loss_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let head = PredictionHead::new(&mut store, 0, 4, 8, 2, &mut rng);
        let mut tape = Tape::new();
        let o = tape.constant(Mat::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.1));
        let y = head.predict(&mut tape, &store, o);
        assert_eq!(tape.value(y).shape(), (3, 2));
        // Permuting nodes permutes predictions.
        let perm = [2, 0, 1];
        let op = tape.constant(tape.value(o).select_rows(&perm));
        let yp = head.predict(&mut tape, &store, op);
        assert_eq!(tape.value(yp), &tape.value(y).select_rows(&perm));

        store.zero_all();
        let mut tape = Tape::new();
        let o = tape.constant(Mat::zeros(3, 4));
        let y = head.predict(&mut tape, &store, o);
        assert_eq!(tape.value(y).max_abs(), 0.0);

        let yt = tape.constant(Mat::from_rows(&[&[1.0, 0.0]]));
        let yh = tape.constant(Mat::zeros(1, 2));
        let l = prediction_loss(&mut tape, yh, yt);
        assert_eq!(tape.scalar(l), 0.5);
        let l0 = prediction_loss(&mut tape, yt, yt);
        assert_eq!(tape.scalar(l0), 0.0);
    }
}
