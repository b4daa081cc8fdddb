//! Diagonal preconditioning: condition number diagnostics, classical and
//! optimal diagonal scalings, random problem generators and the iterative
//! solvers used to compare them.

pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod optimal;
pub mod precondition;
pub mod randomlab;
pub mod solvers;

pub use error::{Block, Error, Result};
pub use linalg::{CondReport, DenseMatrix, SymMatrix};
pub use optimal::{IpmConfig, OptResult};
pub use precondition::DiagScaling;
