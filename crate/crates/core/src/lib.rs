//! Message-passing graph neural networks whose Update-step linear maps are
//! dense, sparsified by frozen expander masks, or removed altogether.

pub mod autodiff;
pub mod data;
pub mod expander;
pub mod graph;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod train;

pub use expander::{ExpanderMask, MaskDiagnostics};
pub use graph::{block_diagonal_batch, BatchedGraph, Graph, GraphError, Labels};
pub use scalar::{Precision, Scalar};
pub use sparse::SparseMatrix;
pub use models::{Activation, Family, GraphInput, HeadKind, Model, ModelConfig, ModelError, Task, Variant};

pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Tape64 = autodiff::Tape<f64>;
