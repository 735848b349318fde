pub mod channel;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod datagen;
pub mod decoding;
pub mod error;
pub mod evalkit;
pub mod init;
pub mod model;
pub mod ngram;
pub mod numkit;
pub mod optim;
pub mod seed;
pub mod wordpiece;

pub use error::{Error, Result};
