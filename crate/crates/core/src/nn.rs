//! Small building blocks: affine layers and the two-layer LeakyReLU MLP used
//! for the fusion network, prediction heads and discriminators.

use alloc::format;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::params::{ParamId, ParamKind, ParamStore};

/// Negative slope of every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), ParamKind::Trainable, inputs, outputs, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, outputs));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// `Linear → LeakyReLU → Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            first: Linear::new(store, &format!("{name}.0"), inputs, hidden, true, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, outputs, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.first.forward(tape, store, x);
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        self.second.forward(tape, store, h)
    }
}
