//! Thorax symmetry analysis on rib and spine segmentation masks.
//!
//! The pipeline recovers the left and right hemithorax regions by fitting an
//! active contour (snake) to the rib mask and splitting the enclosed region
//! along the fitted spine midline. Seven left/right similarity features are
//! then extracted and fed to a majority-vote ensemble of an RBF support
//! vector machine, a multi-layer perceptron and gradient-boosted trees.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the
//! experiment drivers and the command-line tool live in the
//! `thorax-symmetry` companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod classify;
mod error;
pub mod eval;
pub mod features;
pub mod hemithorax;
mod math;
pub mod phantom;
pub mod raster;
pub mod snake;

pub use error::{Error, Result};
pub use features::FeatureVector;
pub use hemithorax::{HemithoraxPair, Side, SpineLine};
pub use raster::{BinaryMask, Ellipse, GrayImage};
pub use snake::{Contour, SnakeParams};
