//! Linear-algebra building blocks shared by the embedding, fluid and
//! simulation modules.

pub mod csr;
pub mod eigen;
pub mod expm;

pub use csr::CsrMatrix;
pub use eigen::{
    eigensolve_all, eigensolve_symmetric, eigensolve_symmetric_with, worst_residual, EigenPairs, OperatorKind, OperatorMatrix, SolverPath,
    SymmetricOperator, Which,
};
pub use expm::{expm, uniformization_action};
