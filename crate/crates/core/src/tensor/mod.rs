//! Dense f64 tensor engine: autodiff tape, parameter storage, Adam, and the
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod fdcheck;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use params::{ParamEntry, ParamGroup, ParamId, ParamSet};
pub use tape::{Tape, TensorId};

#[cfg(test)]
mod tests;
