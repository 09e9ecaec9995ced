pub mod captioner;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod gradcore;
pub mod objective;
pub mod pairing;
pub mod zeroshot;

pub use error::{Error, Result};
