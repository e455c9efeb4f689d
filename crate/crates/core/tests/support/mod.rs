//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod grad;
pub mod sessions;
pub mod svm_oracle;
pub mod tracker_oracle;
