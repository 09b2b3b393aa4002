//! Dense linear algebra, seeded randomness and reverse-mode differentiation.

pub mod linalg;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod tape;

pub use linalg::{eigh_symmetric, matrix_sqrt_psd, principal_angles, pseudoinverse, SymmetricEigen};
pub use matrix::Matrix;
pub use optim::{Adam, InverseSqrtSchedule};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
