pub mod attn_scores;
pub mod cli;
pub mod error;
pub mod harness;
pub mod histfilter;
pub mod nn;
pub mod oracle;
pub mod posenc;
pub mod tasks;

pub use error::{PrismError, Result};
