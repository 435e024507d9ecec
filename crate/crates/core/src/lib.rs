//! Core library for a time-encoding-machine (TEM) codec.
//!
//! The crate covers the full asynchronous-sampling pipeline for band-limited
//! signals:
//!
//! * [`signal`] — sinc-series / segmented-sine / audio test signals with
//!   exact integration and distortion metrics;
//! * [`encoder`] — integrate-and-fire time encoders with either a fixed bias
//!   (IF-TEM) or an adaptive, margin-targeting bias loop (AIF-TEM), plus a
//!   clairvoyant "genie" bias for reference runs;
//! * [`decoder`] — frame-theoretic reconstruction from spike times
//!   (iterative operator recursion and a direct least-squares route) with
//!   windowed segmentation and cross-faded stitching;
//! * [`quantizer`] — classic and per-segment dynamic quantization of firing
//!   intervals, amplitude quantization for periodic baselines, and the
//!   packed stream containers;
//! * [`bounds`] — oversampling and distortion bounds evaluated from train
//!   statistics;
//! * [`experiment`] — reproducible experiment harness behind the CLI.

pub mod bounds;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod quantizer;
pub mod signal;
pub mod stream;

pub use error::{Result, TemError};
pub use signal::{BandlimitedSignal, DistortionReport, SignalKind, SineSegment};
