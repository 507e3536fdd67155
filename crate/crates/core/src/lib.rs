//! Fit a labeled whole-heart template mesh to sparse multi-view 2D contour
//! supervision over a cardiac cycle.
//!
//! The pipeline is:
//!
//! 1. [`mesh`]: labeled triangle meshes and fixed-connectivity sequences.
//! 2. [`plane`]: imaging planes from affine headers, slicing, pixel mapping.
//! 3. [`raster`]: masks, exact distance transforms and contour tracing.
//! 4. [`render`]: the soft plane renderer and boundary loss.
//! 5. [`regularize`]: edge, normal and temporal penalties.
//! 6. [`fit`]: the total objective, Adam fitting and gradient checks.
//! 7. [`metrics`]: evaluation against reference meshes and masks.
//! 8. [`synth`] and [`dataset`]: synthetic phantoms and the on-disk layout.
//!
//! All gradients are analytic. Parallel evaluation is split per frame and
//! reduced in a fixed order, so results do not depend on the thread count.

pub mod contour;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod plane;
pub mod raster;
pub mod regularize;
pub mod render;
pub mod synth;
pub mod vec3;

pub use error::{Error, Result};
pub use fit::{fit, gradcheck, total_loss, FitConfig, FitProblem, FitReport};
pub use mesh::{Component, LabeledMesh, MeshSequence, Structure};
pub use plane::{AffineHeader, PlaneFrame, ViewTag};
pub use render::{RendererConfig, ViewObservation};
pub use synth::{SynthConfig, SynthDataset};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/planes.md")]
    mod planes {}
    #[doc = include_str!("../../../book/src/renderer.md")]
    mod renderer {}
    #[doc = include_str!("../../../book/src/regularizers.md")]
    mod regularizers {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
