//! Dense f64 tensors, the neural primitives the models need, reverse-mode
//! automatic differentiation, and the finite-difference gradient oracle.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport, ParamCheck};
pub use ops::{gelu, layer_norm, matmul, softmax_rows, RowSoftmax};
pub use optim::{AdamW, AdamWConfig, Params};
pub use rng::derive_rng;
pub use tape::{mask_bias, Gradients, Tape, Var};
pub use tensor::{NumericsError, Tensor, MASKED_LOGIT};
