//! Dense tensor engine: layer DAGs with forward/backward, losses,
//! optimizers and a finite-difference gradient checker.

mod graph;
mod gradcheck;
mod kernels;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, Objective};
pub use graph::{ForwardCache, Graph, LayerKind, LayerNode, NodeId, ParamId};
pub use loss::{cross_entropy_loss, mse_loss};
pub use optim::{Optimizer, OptimizerConfig};
pub use tensor::{Scalar, Tensor};
