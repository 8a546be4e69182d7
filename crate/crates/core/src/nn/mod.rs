//! Dense tensors, the fixed layer set used by both denoisers, Adam and
//! finite-difference gradient verification.

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod layers;
pub mod mlp;
pub mod params;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use attention::{GraphLayerTrace, GraphTransformerLayer};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use layers::{Film, LayerNorm, Linear};
pub use mlp::Mlp;
pub use params::{Grads, Init, NetworkParams, ParamId};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// A network with an explicit forward trace.
pub trait Module {
    type Input;
    type Trace;

    fn forward(&self, p: &NetworkParams, input: &Self::Input) -> Result<(Tensor, Self::Trace)>;

    /// Parameter gradients given the gradient of some scalar with respect to
    /// the forward output.
    fn backward(&self, p: &NetworkParams, trace: &Self::Trace, upstream: &Tensor) -> Result<Grads>;
}

/// Holds the most recent forward trace of a module so that `backward` can be
/// called without threading the trace by hand.
pub struct Tape<'m, M: Module> {
    module: &'m M,
    trace: Option<M::Trace>,
}

impl<'m, M: Module> Tape<'m, M> {
    pub fn new(module: &'m M) -> Self {
        Tape { module, trace: None }
    }

    pub fn forward(&mut self, p: &NetworkParams, input: &M::Input) -> Result<Tensor> {
        let (y, t) = self.module.forward(p, input)?;
        y.ensure_finite("forward output")?;
        self.trace = Some(t);
        Ok(y)
    }

    pub fn backward(&self, p: &NetworkParams, upstream: &Tensor) -> Result<Grads> {
        let trace = self.trace.as_ref().ok_or(Error::MissingTrace)?;
        self.module.backward(p, trace, upstream)
    }
}
