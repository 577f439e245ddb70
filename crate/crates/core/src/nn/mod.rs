//! Minimal differentiable numeric core shared by the speaker, navigator and sampler.

mod adam;
mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, MAGIC, META_PREFIX, OPT_PREFIX, VERSION};
pub use gradcheck::{grad_check, FD_STEP};
pub use ops::{attention, cross_entropy, lstm_cell, softmax, PROB_FLOOR};
pub use params::{ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Gate weight and bias handles of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: rand::Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> crate::Result<Self> {
        let fan_in = input + hidden;
        let w = params.insert_uniform(format!("{prefix}/w"), &[4 * hidden, fan_in], fan_in, rng)?;
        let b = params.insert_uniform(format!("{prefix}/b"), &[4 * hidden], fan_in, rng)?;
        Ok(Self { w, b, hidden })
    }

    pub fn lookup(params: &ParamSet, prefix: &str) -> crate::Result<Self> {
        let w = params.require(&format!("{prefix}/w"))?;
        let b = params.require(&format!("{prefix}/b"))?;
        Ok(Self { w, b, hidden: params.value(b).len() / 4 })
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var, c: Var) -> (Var, Var) {
        tape.lstm(self.w, self.b, x, h, c)
    }
}
