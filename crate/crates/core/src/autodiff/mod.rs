//! Reverse-mode automatic differentiation, parameters, optimiser and
//! finite-difference gradient checking.

pub mod gradcheck;
pub mod optim;
pub mod param;
pub mod tape;

use thiserror::Error;

pub use gradcheck::{gradcheck, gradcheck_params, relative_error};
pub use optim::{Adam, AdamConfig};
pub use param::{Param, ParamId, ParamRole, ParamStore};
pub use tape::{BatchStats, Extreme, Gradients, Tape, Var};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op}: index {index} out of range")]
    Index { op: &'static str, index: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("parameter file {file}: malformed line {line}")]
    ParamFile { file: String, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for AutodiffError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
