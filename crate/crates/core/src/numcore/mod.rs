//! Tensor arithmetic, random streams and reverse-mode autodiff.

pub mod gradcheck;
pub mod precision;
mod rng;
mod tape;
mod tensor;

pub use precision::{precision, set_precision, with_precision, Precision};
pub use rng::RngState;
pub use tape::{concat_cols, concat_rows, softmax_row, Gradients, Tape, Var};
pub use tensor::Tensor;
