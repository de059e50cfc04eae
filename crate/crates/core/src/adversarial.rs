//! Domain discriminators over retrieval queries, trained through a gradient
//! reversal gate.

use alloc::format;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;

/// Probability clamp keeping the cross-entropy finite.
pub const PROB_EPS: f64 = 1e-7;

/// Identity forward; multiplies the incoming adjoint by `-scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReversalGate {
    pub scale: f64,
}

impl Default for ReversalGate {
    fn default() -> Self {
        ReversalGate { scale: 1.0 }
    }
}

impl ReversalGate {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.reverse_grad(x, self.scale)
    }
}

/// `D → hidden → 1` classifier with a sigmoid output.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub mlp: Mlp,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, level: usize, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Discriminator { mlp: Mlp::new(store, &format!("disc{level}"), dim, hidden, 1, rng) }
    }

    /// Source-probability per row, clamped to `[ε, 1−ε]`.
    pub fn probability(&self, tape: &mut Tape, store: &ParamStore, q: Var) -> Var {
        let logit = self.mlp.forward(tape, store, q);
        let p = tape.sigmoid(logit);
        tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    }

    /// `−mean log D(Q_S) − mean log(1 − D(Q_T))`, each query set passing
    /// through `gate` first. Each city is averaged over its own node count.
    pub fn domain_loss(&self, tape: &mut Tape, store: &ParamStore, gate: ReversalGate, q_source: Var, q_target: Var) -> Result<Var> {
        if tape.value(q_source).rows() == 0 || tape.value(q_target).rows() == 0 {
            return Err(Error::invalid("domain loss needs queries from both cities"));
        }
        let qs = gate.apply(tape, q_source);
        let qt = gate.apply(tape, q_target);
        let ps = self.probability(tape, store, qs);
        let pt = self.probability(tape, store, qt);
        let log_ps = tape.ln(ps);
        let source_term = tape.mean(log_ps);
        let not_pt = tape.affine(pt, -1.0, 1.0);
        let log_not_pt = tape.ln(not_pt);
        let target_term = tape.mean(log_not_pt);
        let sum = tape.add(source_term, target_term);
        Ok(tape.scale(sum, -1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc() -> (ParamStore, Discriminator) {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let d = Discriminator::new(&mut store, 0, 3, 6, &mut rng);
        (store, d)
    }

    #[test]
    fn half_probability_gives_two_ln_two() {
        let (mut store, d) = disc();
        store.zero_all();
        let mut tape = Tape::new();
        let qs = tape.constant(Mat::from_fn(4, 3, |i, j| (i + j) as f64));
        let qt = tape.constant(Mat::from_fn(2, 3, |i, j| (i * j) as f64 - 1.0));
        let l = d.domain_loss(&mut tape, &store, ReversalGate::default(), qs, qt).unwrap();
        assert!((tape.scalar(l) - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_discriminator_hits_clamp_floor() {
        let (mut store, d) = disc();
        store.zero_all();
        // Output bias of +/-40 saturates the sigmoid; the sign picks the city.
        *store.value_mut(d.mlp.second.bias.unwrap()) = Mat::scalar(40.0);
        *store.value_mut(d.mlp.second.weight) = Mat::zeros(6, 1);
        let mut tape = Tape::new();
        let qs = tape.constant(Mat::filled(2, 3, 1.0));
        let qt = tape.constant(Mat::filled(2, 3, 1.0));
        let ps = d.probability(&mut tape, &store, qs);
        assert_eq!(tape.value(ps)[(0, 0)], 1.0 - PROB_EPS);
        let l = d.domain_loss(&mut tape, &store, ReversalGate::default(), qs, qt).unwrap();
        // Source term at the floor, target term at the ceiling.
        let floor = -libm::log(1.0 - PROB_EPS);
        assert!((tape.scalar(l) - (floor - libm::log(PROB_EPS))).abs() < 1e-9);
    }

    #[test]
    fn swapping_cities_changes_loss() {
        let (store, d) = disc();
        let mut tape = Tape::new();
        let a = tape.constant(Mat::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.8));
        let b = tape.constant(Mat::from_fn(2, 3, |i, j| (i + j) as f64 * 0.5));
        let l1 = d.domain_loss(&mut tape, &store, ReversalGate::default(), a, b).unwrap();
        let l2 = d.domain_loss(&mut tape, &store, ReversalGate::default(), b, a).unwrap();
        assert!((tape.scalar(l1) - tape.scalar(l2)).abs() > 1e-6);
    }

    #[test]
    fn empty_batch_rejected() {
        let (store, d) = disc();
        let mut tape = Tape::new();
        let a = tape.constant(Mat::zeros(0, 3));
        let b = tape.constant(Mat::filled(2, 3, 0.5));
        assert!(matches!(d.domain_loss(&mut tape, &store, ReversalGate::default(), a, b), Err(Error::InvalidArgument(_))));
    }
}
