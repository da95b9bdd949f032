pub mod cipher;
pub mod circuit;
pub mod codec;
pub mod crt;
pub mod error;
pub mod gadgets;
pub mod labels;
pub mod layers;
pub mod model_io;

pub use error::{Error, Result};
