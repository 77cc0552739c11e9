//! DTMF-operated pick-and-place arm, in software.
//!
//! Audio carrying key presses is decoded into 4-bit receiver codes
//! ([`detector`]), interpreted as arm commands ([`controller`]) and executed
//! on a simulated arm ([`actuation`]) whose geometry and load limits come from
//! [`kinematics`] and [`statics`].

pub mod actuation;
pub mod batch;
pub mod config;
pub mod controller;
pub mod detector;
pub mod kinematics;
pub mod par;
pub mod protocol;
pub mod signal;
pub mod statics;
pub mod wav;

pub use config::Config;
pub use controller::{run_episode, ArmCommand, Session};
pub use detector::{code_to_key, key_to_code, Code4, DecoderEvent, Detector, DetectorConfig};
pub use signal::{DtmfKey, SampleBuffer, SampleRate, ToneParams};
