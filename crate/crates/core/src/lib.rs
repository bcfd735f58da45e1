pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod decision_fusion;
pub mod descriptors;
pub mod feature_fusion;
pub mod persist;
pub mod selftest;
pub mod svm;
pub mod synth;
