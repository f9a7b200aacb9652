//! Std companion to `eventmem-core`: dataset files, the HTTP provider, the
//! synthetic corpus, benchmark and scaling harnesses, and the CLI plumbing.

pub mod dataset;
pub mod synth;
pub mod bench;
pub mod scale;
pub mod config;
pub mod provider;
pub mod storefile;
