//! Simulation toolkit for a cavity-QED scanning microscope for cold atoms.

pub mod error;
pub mod focusing;
pub mod hilbert;
pub mod homodyne;
pub mod linalg;
pub mod manybody;
pub mod noise;
pub mod scanctl;
pub mod sme;

pub use error::{QscopeError, Result};
