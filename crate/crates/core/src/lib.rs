//! Proximity classification from BLE RSSI and IMU recordings.
//!
//! The crate covers the whole "too close" pipeline: parsing contact-event
//! files, feature extraction (baseline path-loss features, statistical
//! per-axis features, engineered IMU magnitudes, random convolutional
//! kernels, clustering labels), gradient-boosted and ridge classifiers,
//! Gaussian-process hyperparameter search, and the nDCF scoring protocol.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results never depend on the number of worker threads.

pub mod clustering;
pub mod error;
pub mod eval;
pub mod event;
pub mod features;
pub mod learners;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod rocket;
pub mod series;
pub mod tuner;

pub use error::{Error, Result};
