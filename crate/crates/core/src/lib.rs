//! Flux operators of lattice unitaries, their index, quantum leads and
//! Chalker–Coddington networks.

pub mod cc;
pub mod error;
pub mod flux;
pub mod lattice;
pub mod linalg;
pub mod shift;
pub mod tolerance;
pub mod walk;

pub use error::{Error, Result};
pub use flux::{FluxField, IndexReport};
pub use lattice::{BlockField, Direction, LatticeState, LocalUnitary, Site};
pub use tolerance::Tolerances;
