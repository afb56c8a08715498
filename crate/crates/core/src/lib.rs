//! Core algorithms for microvessel analysis in intravascular OCT pullbacks.
//!
//! Everything operates in the native polar (r, θ) acquisition geometry: rows of a
//! frame are A-lines (catheter rotation angle), columns are radial depth samples.
//! The pipeline stages are:
//!
//! 1. **imaging** – pullback data model, 16-bit PGM + JSON sidecar I/O, polar→Cartesian
//!    scan conversion.
//! 2. **phantom** – synthetic pullbacks with known lumen, guidewire shadow, speckle,
//!    microvessels and confounders; the ground truth for every downstream stage.
//! 3. **augment** – offset-angle augmentation: re-cut frames from the concatenated
//!    A-line stream at shifted starting angles, losslessly.
//! 4. **preprocess** – guidewire shadow detection, lumen boundary detection (circular
//!    dynamic programming), per-A-line pixel shift, radial ROI crop, Gaussian smoothing.
//! 5. **nn** – a small from-scratch tensor/layer engine (conv / pool / batchnorm /
//!    bilinear resize), weighted softmax cross-entropy, ADAM, LR schedule, early stop.
//! 6. **seg** – scaled-down encoder–decoder segmentation network with an atrous
//!    spatial pyramid pooling block; training loop and mask inference.
//! 7. **candidates** – connected-blob extraction from predicted masks, 30×30 patch
//!    building, the shallow candidate classifier, and mask refinement.
//! 8. **eval** – pixel metrics, grouped k-fold planning, frame-presence agreement,
//!    linear regression, Bland–Altman, paired t-test.
//! 9. **reconstruct** – frame-to-frame candidate linking into 3-D tracks, physical
//!    length/diameter measurement, ASCII PLY export.
//! 10. **pipeline** – the end-to-end cross-validated run producing `report.json`.

pub mod augment;
pub mod candidates;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruct;
pub mod rng;
pub mod seg;

pub use error::{Error, Result};
pub use imaging::{CartesianImage, FrameMask, PolarFrame, PolarPullback, PullbackMeta};
