pub mod cnn;
pub mod attacks;
pub mod datasets;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod qvc;
pub mod scores;
pub mod sim;
pub mod stealth;

pub use error::{Error, Result};
