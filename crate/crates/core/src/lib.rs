pub mod cells;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod pretrain;
pub mod verify;

pub use error::{LscError, Result};
