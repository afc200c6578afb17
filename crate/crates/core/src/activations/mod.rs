//! Base activation functions / generating distributions and the TCA built on them.

mod base;
mod tca;

pub use base::{
    base_cdf, base_deriv, base_eval, base_logpartition, base_sample, sigmoid, softplus, BaseKind,
    TAYLOR_CUTOFF,
};
pub use tca::{TcaGrads, TcaParams};
