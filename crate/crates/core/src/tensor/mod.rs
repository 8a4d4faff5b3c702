//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! arrays, with the Adam and SGD optimizers.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] on a scalar result walks the record in reverse and
//! returns [`Gradients`] for every node that depends on a trainable leaf.
//! Parameters live in a [`ParamSet`]; binding them to a tape borrows their
//! values, so tapes are cheap to build per sample and can run on separate
//! threads against the same weights.

mod array;
pub mod gradcheck;
mod optim;
mod param;
mod tape;

pub use array::Tensor;
pub use optim::{Adam, AdamState, Sgd};
pub use param::{ParamSet, Parameter, TensorRecord, WeightDocument, WEIGHT_FORMAT_VERSION};
pub use tape::{Gradients, Tape, Var};
