//! Shape and surface regularizers for 3D Gaussian primitives.
//!
//! Two complementary regularizers are provided:
//!
//! * an effective-rank penalty that pushes every Gaussian toward a
//!   disk-like shape ([`gaussian`]), and
//! * a co-optimized neural signed distance field ([`sdf`]) tied to the
//!   Gaussians through an Eikonal term and an SDF/Gaussian consistency
//!   term ([`losses`]).
//!
//! [`trainer`] runs the joint Adam optimization with a warmup phase,
//! and [`mesh`] extracts and scores a triangle mesh from the learned field.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod losses;
pub mod mesh;
pub mod optim;
pub mod ply;
pub mod sdf;
pub mod shapes;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};
pub use gaussian::{Aabb, ErankTerms, Gaussian, GaussianScene};
pub use losses::{LossBreakdown, LossWeights};
pub use sdf::{EncodingConfig, SdfEval, SdfNetwork};
pub use shapes::Shape;
pub use trainer::{TrainConfig, TrainState};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
