//! Network roles for garbled inference: a garbling-device service, an
//! inference-device service, and clients for model, input and result owners.
//! Transport is a plain TCP byte stream; channel encryption is left to the
//! deployment.

pub mod client;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod frame;
pub mod garbler;
pub mod messages;
pub mod net;
pub mod trace;
pub mod volume;

pub use error::{ErrorCode, ProtocolError, Result};
pub use volume::{comm_volume, CommVolume};
