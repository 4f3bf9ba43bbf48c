pub mod corpus;
pub mod decode;
pub mod error;
pub mod features;
pub mod hmm;
pub mod lexicon;
pub mod manifest;
pub mod nnet;
pub mod ros;

pub use error::{Error, Result};
