//! Self-contained numerical kernels: dense matrices, Jacobi SVD, pseudo-inverse,
//! ridge least squares, Tucker/HOSVD, CMA-ES and correlation statistics.

pub mod cmaes;
pub mod matrix;
pub mod stats;
pub mod svd;
pub mod tensor;

pub use cmaes::{cmaes_minimize, CmaResult, CmaState};
pub use matrix::Matrix;
pub use stats::{pearson, Correlation};
pub use svd::{least_squares, pinv, svd, LeastSquares, Svd};
pub use tensor::{hosvd, Tensor3, TuckerFactors};
