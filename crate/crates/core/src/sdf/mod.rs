//! Neural signed distance field: encoding, MLP and checkpoints.

pub mod checkpoint;
pub mod encoding;
pub mod network;

pub use encoding::{positional_encode, EncodingConfig};
pub use network::{softplus, Evaluator, LayerShape, NetworkConfig, SdfEval, SdfNetwork, Upstream};

use crate::Vec3;

/// Anything that can report a signed distance and its spatial gradient.
pub trait SdfField {
    fn value(&self, x: &Vec3) -> crate::Result<f64>;
    fn value_and_gradient(&self, x: &Vec3) -> crate::Result<SdfEval>;
}

impl SdfField for SdfNetwork {
    fn value(&self, x: &Vec3) -> crate::Result<f64> {
        self.forward(x)
    }

    fn value_and_gradient(&self, x: &Vec3) -> crate::Result<SdfEval> {
        self.forward_with_input_gradient(x)
    }
}
