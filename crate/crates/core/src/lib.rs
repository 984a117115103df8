//! Measure how pixelation, blur and masking of sensitive image regions change
//! content-based image retrieval.
//!
//! Rankings produced after anonymization are compared with pseudo ground truth
//! taken from a baseline model's rankings on the original images, using mAP and
//! mnDCG. Downstream k-NN and linear-probe accuracies can be correlated with
//! those retrieval scores.

pub mod anonymize;
pub mod crops;
pub mod downstream;
pub mod embedder;
pub mod experiment;
pub mod metrics;
mod par;
pub mod retrieval;
pub mod seed;
pub mod store;
pub mod synth;
