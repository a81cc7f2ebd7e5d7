//! Support code for the `uap` binary that integration tests also use.

pub mod manifest;
