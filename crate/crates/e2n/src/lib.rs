//! Goal-oriented error estimation and anisotropic mesh adaptation for a
//! steady 2D tidal-turbine flow model, with a small feed-forward network
//! that stands in for the expensive enrichment-based error estimator.
//!
//! The crate covers the full loop: meshing, a stabilised P1 finite element
//! momentum solver with turbine drag, the discrete adjoint of the farm power
//! output, dual-weighted-residual error indicators (cheap and enriched),
//! per-element feature extraction, network training and inference, metric
//! construction and a metric-conforming local remesher, plus the fixed-point
//! adaptation pipeline tying it all together.
//!
//! See the `examples/` directory for a runnable tour of each capability.

pub mod dwr;
pub mod error;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod remesh;
pub mod features;
pub mod fem;
pub mod mesh;
pub mod metric;

pub use error::{Error, Result};
