//! Reverse-mode automatic differentiation, parameter storage, and the Adam
//! optimizer. 64-bit floats throughout.

pub mod gru;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gru::{GruLeaves, GruParams};
pub use optim::{Adam, StepOutcome};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
