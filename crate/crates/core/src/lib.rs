//! Symbol-level downlink simulator for cell-free massive MIMO with
//! multi-antenna UEs whose RF chains carry unknown phase offsets.
//!
//! Three transmission modes are compared: coherent with calibrated UEs
//! (`pcal`), coherent with uncalibrated UEs (`uncal`) and differential
//! space-time block coding across the serving APs (`dstbc`), each under
//! ZISI or P-MMSE precoding.

pub mod channel;
pub mod config;
pub mod dstbc;
pub mod error;
pub mod link;
pub mod metrics;
pub mod montecarlo;
pub mod precoding;
pub mod psk;
pub mod rng;
pub mod topology;

pub use num_complex::Complex64 as C64;

pub use config::{DerivedConstants, Mode, PrecoderKind, SystemConfig};
pub use error::SimError;
