//! Command-line front end over the segmentation core: experiment
//! configuration, dataset assembly, and the train / eval / sweep / segment /
//! bench / gradcheck verbs with their CSV, JSON, PGM, and weights artifacts.

pub mod commands;
pub mod config;
pub mod dataset;

/// Independent random streams derived from the experiment seed. Fixed tags
/// per purpose keep artifacts byte-stable when a new consumer of randomness
/// is added somewhere else in the pipeline.
pub mod seeds {
    use ifseg_core::Rng;

    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;

    pub fn stream(seed: u64, tag: u64) -> Rng {
        Rng::new(seed).derive(tag)
    }
}
