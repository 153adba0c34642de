//! Host-side companion to `roiattn-core`: parallel execution, on-disk
//! formats, the attention benchmark, ablation drivers and the self-test
//! table used by the `roiattn` binary.

pub mod ablation;
pub mod bench;
pub mod checkpoint;
pub mod configfile;
pub mod exec;
pub mod ppm;
pub mod report;
pub mod selftest;

pub use exec::Parallel;
