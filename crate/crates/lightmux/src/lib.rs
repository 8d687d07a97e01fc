//! Multiplexed-illumination toolkit: relightable scene models, affine camera
//! noise calibration and synthesis, illumination-matrix selection (greedy
//! accuracy-driven and SNR-optimal), and a grid-HOG + linear-SVM classifier.
//!
//! The pipeline mirrors a light-stage workflow at desk scale: calibrate a
//! noise model once, render noise-accurate relit imagery from per-illuminant
//! scene models, and search for multiplexing matrices that maximize either
//! demultiplexing SNR or downstream classification accuracy.

pub mod classifier;
pub mod config;
pub mod error;
pub mod features;
pub mod greedy;
pub mod image;
pub mod model;
pub mod mux;
pub mod noise;
pub mod pipeline;
pub mod relight;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use image::ImageF;
pub use model::{Dataset, RelightableModel, SceneFamilySpec};
pub use mux::IlluminationMatrix;
pub use noise::{CameraSettings, NoiseModel};
