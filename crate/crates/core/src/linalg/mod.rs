//! Dense linear algebra on `f64`.

pub mod decompose;
pub mod eigen;
pub mod init;
pub mod matrix;
pub mod norms;
pub mod rng;

pub use decompose::{determinant, qr};
pub use eigen::{dominant_eigen, eigenvalues, spectral_radius, symmetric_eigenvalues, DominantEigen};
pub use init::{init_matrix, random_psd, InitScheme};
pub use matrix::{dot, Matrix};
pub use norms::{frobenius_norm, induced_norm, NormKind};
pub use rng::RandomSource;
