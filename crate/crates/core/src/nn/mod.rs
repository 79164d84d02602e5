//! Small dense neural-network toolkit: matrices, a reverse-mode tape,
//! parameter storage and the Adam optimizer.

pub mod mat;
pub mod params;
pub mod tape;

pub use mat::Mat;
pub use params::{Adam, AdamConfig, ParamStore};
pub use tape::{Gradients, LstmInput, Tape, Var};
