//! Geometry and loss kernels for monocular semantic scene completion on voxel
//! grids: 2D→3D feature lifting and its adjoint, context-relation targets and
//! losses, class-affinity and frustum-proportion losses, completion metrics,
//! and a deterministic synthetic-scene toolkit.

pub mod crp;
pub mod error;
pub mod flosp;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optimize;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{CameraModel, Dims, LogitGrid, ProbGrid, SemanticGrid, FREE, UNKNOWN};
