//! Keyed cancelable template protection for finger-vein-like feature maps.
//!
//! The pipeline runs in four stages, all deterministic:
//!
//! 1. **Locate**: predict the region of interest (box + rotation angle) of a
//!    vein image from pooled features via closed-form ridge regression
//!    ([`locator`]).
//! 2. **Compress**: extract the ROI without quantization loss (real-valued
//!    bilinear alignment), correct rotation, and remove channel redundancy
//!    with the de-redundant convolution ([`compress`]).
//! 3. **Protect**: apply the keyed block-warping-remapping transform. The
//!    compressed map is split into blocks, each block's internal mesh is
//!    randomly warped, a keyed subset of blocks is selected and remapped to
//!    new positions ([`bwr`]). Everything is derived from a 64-bit user key.
//! 4. **Evaluate**: protected-domain matching plus the cancelable-biometrics
//!    metric suite: EER/ROC, IoU, global unlinkability, decidability,
//!    pre-image attack match rate, and the three threat scenarios ([`eval`]).
//!
//! [`synth`] generates labeled synthetic vein images so the whole protocol
//! runs end-to-end without licensed datasets. [`fmap`] holds the dense tensor
//! container and sampling/convolution primitives shared by every stage.
//!
//! All randomness flows through seeded [`rng::SplitMix64`] streams; no
//! operation reads wall-clock time or OS entropy, so every output is a pure
//! function of its inputs and byte-identical across runs, platforms, and
//! thread counts.

pub mod bwr;
pub mod compress;
pub mod config;
pub mod error;
pub mod eval;
pub mod fmap;
pub mod io;
pub mod locator;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use fmap::{ConvSpec, FeatureMap, Image};
