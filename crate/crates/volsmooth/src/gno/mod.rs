//! The interpolating graph neural operator.
//!
//! A stack of kernel-integral layers maps a discretized input surface
//! (vols at arbitrary `(ρ, z)` points) to vols at arbitrary query points.
//! Kernel integrals are approximated by means over truncated, capped
//! in-neighbor sets organized as a directed graph; the first layer is
//! purely non-local so the architecture never needs the input function at
//! query points, which is what makes it interpolating.
//!
//! Submodules: [`ffn`] (feed-forward blocks), [`graph`] (neighborhoods),
//! [`model`] (parameter layout and initialization), [`forward`] (batched
//! evaluation with a gradient tape), [`backward`] (exact reverse-mode
//! gradients), [`checkpoint`] (JSON serialization).

pub mod backward;
pub mod checkpoint;
pub mod ffn;
pub mod forward;
pub mod graph;
pub mod model;

pub use backward::gno_backward;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ffn::Ffn;
pub use forward::{gno_eval, gno_forward, ForwardOutput, GnoSurface, Tape};
pub use graph::{build_graph, NeighborGraph};
pub use model::{GnoConfig, GnoModel, GradientRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnoError {
    #[error("input has {got} columns, net expects {want}")]
    ShapeError { got: usize, want: usize },
    #[error("output point (rho={rho}, z={z}) has no input within rho_bar")]
    NoNeighbors { rho: f64, z: f64 },
    #[error("graph does not match snapshot/model: {0}")]
    GraphMismatch(String),
    #[error("forward tape does not belong to this model/graph")]
    StaleTape,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
}
