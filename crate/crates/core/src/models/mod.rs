//! GCN, GIN, GraphSage and PNA in vanilla, expander and activation-only
//! form, plus SGC, mean readout and the prediction heads.

pub mod config;
pub mod input;
pub mod model;
pub mod suite;

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::expander::MaskError;
use crate::graph::GraphError;
use crate::scalar::Scalar;

pub use config::{Activation, Family, HeadKind, ModelConfig, Task, Variant};
pub use input::{log_degree_mean, GraphInput};
pub use model::{Model, ParamCounts, TrainState};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `(Â^K X) W` with `Â^K X` taken from the input's propagation cache.
pub fn sgc_forward<T: Scalar>(input: &GraphInput<T>, k: usize, w: &Array2<T>) -> Result<Array2<T>, ModelError> {
    if k == 0 {
        return Err(ModelError::Config("sgc needs K >= 1".into()));
    }
    let x = input.propagated(k);
    if x.ncols() != w.nrows() {
        return Err(AutodiffError::Shape { op: "sgc_forward", left: x.dim(), right: w.dim() }.into());
    }
    Ok(x.dot(w))
}

/// Row mean of `h` over each range.
pub fn mean_readout<T: Scalar>(h: &Array2<T>, ranges: &[std::ops::Range<usize>]) -> Result<Array2<T>, ModelError> {
    let mut out = Array2::zeros((ranges.len(), h.ncols()));
    for (g, r) in ranges.iter().enumerate() {
        if r.is_empty() || r.end > h.nrows() {
            return Err(AutodiffError::Empty("mean_readout").into());
        }
        let m = h.slice(ndarray::s![r.clone(), ..]).mean_axis(ndarray::Axis(0)).expect("nonempty");
        out.row_mut(g).assign(&m);
    }
    Ok(out)
}
