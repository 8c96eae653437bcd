//! File formats, multi-threaded training and the `mmsg` command line on top
//! of [`mmskipgram_core`].

pub mod commands;
pub mod error;
pub mod formats;
pub mod parallel;

pub use error::{Error, Result};
pub use parallel::train_parallel;
