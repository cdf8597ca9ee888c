//! Differentiable feedback delay networks: transfer-function evaluation,
//! frequency-sampled training, modal analysis and reverb rendering.

pub mod error;
pub mod fdn;
pub mod filters;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod modal;
pub mod optim;
pub mod par;
pub mod param;
pub mod reverb;

pub use error::{Error, Result};
pub use fdn::{eval_transfer, render_ir, FdnConfig, FrequencyPoint, TransferSample};
pub use par::Execution;
pub use param::{FeedbackParam, MatrixKind, StageAbsorption};
