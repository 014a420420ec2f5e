//! Behavioral simulation of memristive integrating sensors.
//!
//! A TiOx memristor is modelled as a dual-polarity thresholded integrator
//! whose resistive state (RS) follows a saturating second-order exponential
//! of the applied voltage integral. Extracellular recordings are conditioned,
//! played back onto a device in batches with sparse sub-threshold reads, and
//! the resulting ΔRS between reads flags time bins that contain spikes.
//!
//! Module map:
//!
//! * [`device`]: curve model, device state, pulse trains, fitting and
//!   threshold extraction.
//! * [`signal`]: recordings, conditioning, calibration and synthesis.
//! * [`playback`]: batch/read biasing scheme and noise-floor estimation.
//! * [`detect`]: ΔRS event bins, the amplitude-threshold reference detector
//!   and agreement metrics.
//! * [`array`]: multi-pixel simulation, snapshots and activity maps.
//! * [`kv`]: the `key=value` file format shared by configs and sidecars.

pub mod array;
pub mod detect;
pub mod device;
pub mod kv;
pub mod playback;
pub mod signal;

mod error;
mod seed;

pub use error::{Error, Result};
pub use seed::derive_seed;
