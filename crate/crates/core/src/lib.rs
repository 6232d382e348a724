//! Software μ-PMU → LTE cat-M → PDC pipeline.
//!
//! The crate is organised along the measurement path:
//!
//! * [`waveform`] synthesises GPSDO-paced sample blocks (32 samples per nominal cycle).
//! * [`estimator`] turns blocks and zero-crossing edges into synchrophasors.
//! * [`c37codec`] packs synchrophasors into IEEE C37.118.2 data frames (fixed 16-bit formats).
//! * [`catm_sim`] models the cat-M uplink: SI-window access deferral, base delay and loss.
//! * [`pdc`] decodes, realigns and timestamps frames, and reduces them to delay statistics.
//! * [`harness`] wires it all together for simulated and real-UDP experiments.

pub mod c37codec;
pub mod catm_sim;
pub mod estimator;
pub mod harness;
pub mod kv;
pub mod pdc;
pub mod time;
pub mod waveform;
