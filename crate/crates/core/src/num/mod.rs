//! Deterministic dense linear algebra, reverse-mode gradients, Adam, and
//! seeded sampling. Everything above this module is built on these pieces.

pub mod rng;
pub mod scalar;
pub mod store;
pub mod tape;
pub mod tensor;

pub use rng::{gumbel_from_uniform, sample_gumbel, Rng};
pub use scalar::Scalar;
pub use store::ParameterStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
