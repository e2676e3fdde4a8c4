pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod lifted;
pub mod linalg;
pub mod measurement;
pub mod monitors;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, LinalgError, SingularPair, SymEig};
pub use measurement::{MeasOp, OpKind, RipEstimate};
pub use lifted::{Hyper, LiftedState, Model, ProblemSpec, Projections};
pub use report::{InvariantReport, ReportItem};
pub use dynamics::{FlowPiece, StepRecord, Tracked};
pub use experiment::ExperimentConfig;
