//! Shared sinusoidal channel mixing for YOLOv8-style detectors.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`param`], [`ops`], [`tape`] and [`gradcheck`]: dense
//!   arithmetic with reverse-mode differentiation and a finite-difference
//!   oracle.
//! - [`zoo`]: the layer kinds (Conv, C2f, SPPF, Detect, the QMix block and
//!   its variants) with exact parameter and FLOP counts.
//! - [`arch`]: the architecture file format, width/depth scaling, graph
//!   construction, forward execution and QMix surgery.
//! - [`analysis`]: parameter/FLOP reports, complexity checks, unstructured
//!   sparsification and report rendering.
//! - [`train`]: synthetic data, AdamW, a classification probe, the shared
//!   gradient audit and the ablation runner.

pub mod analysis;
pub mod arch;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/tensors-and-gradients.md")]
    pub struct TensorsAndGradients;
    #[doc = include_str!("../../../book/src/layers.md")]
    pub struct Layers;
    #[doc = include_str!("../../../book/src/architecture-files.md")]
    pub struct ArchitectureFiles;
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub struct Analysis;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
