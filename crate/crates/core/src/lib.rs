pub mod error;
pub mod linalg;
pub mod lti;
pub mod matrix_phase;
pub mod converter;
pub mod network;
pub mod transforms;
pub mod criteria;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
pub use lti::StateSpace;
