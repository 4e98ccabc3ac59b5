//! File formats: atomic writes, dataset JSONL, model checkpoints, CSV
//! tables. Everything written here embeds the config hash and seeds of
//! the run that produced it.

pub mod atomic;
pub mod checkpoint;
pub mod jsonl;
pub mod table;

pub use atomic::write_atomic;
