//! Two-stage echocardiogram analysis: view classification feeding view-specific
//! valve localization, plus the deterministic machinery around it.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`phantom`]: seeded synthetic sector clips with ground-truth geometry and valves.
//! - [`scanconvert`]: trapezoid detection, polar-to-Cartesian resampling, mean/normalization.
//! - [`datasetio`]: clip manifests, timestamp-based patient grouping, leak-free splits,
//!   per-heartbeat frame sampling.
//! - [`annotate`]: three-point valve annotations to fixed-height boxes.
//! - [`augment`]: seeded augmentation with box-consistent geometric transforms.
//! - [`metrics`]: IoU, NMS, detection matching, COCO-style mAP/mAR, confusion matrices.
//! - [`nnet`]: a small from-scratch Inception-style classifier trained with Adadelta.
//! - [`pipeline`]: classify, route to the view's valve detector, filter, render, report.

pub mod annotate;
pub mod augment;
pub mod datasetio;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nnet;
pub mod phantom;
pub mod pipeline;
pub mod scanconvert;
pub(crate) mod util;

pub use error::{Error, Result};
pub use image::{GrayImage, RgbImage, ValueDomain};
