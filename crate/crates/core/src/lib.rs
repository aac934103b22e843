//! Diagram engine for effective Hamiltonians and effective transition
//! operators of many-fermion systems, with an exact dense Fock-space oracle.

pub mod diagram;
pub mod error;
pub mod eval;
pub mod gen;
pub mod golden;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod transform;

pub use error::{Error, Result};
pub use eval::{DiagramValue, EvalOptions, LineRange};
pub use scalar::{Quad, Scalar};

/// Model with `f64` energies and tensors.
pub type Model = model::ModelInstance<f64>;
/// Operator tensor with `f64` coefficients.
pub type Tensor = model::OperatorTensor<f64>;
/// Normal-ordered operator with `f64` coefficients.
pub type Operator = model::OperatorSum<f64>;
/// Evaluation context for `f64` models.
pub type Evaluator = eval::EvalContext<f64>;
