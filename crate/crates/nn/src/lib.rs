//! Minimal dense autodiff used by the summarization models.
//!
//! Everything is `f64` and single-threaded so that training runs are
//! bit-reproducible and finite-difference gradient checks are meaningful.

pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{sigmoid, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use params::{xavier_uniform, Grads, Param, ParamId, ParamStore};
pub use tensor::{log_softmax, logsumexp, Tensor};
