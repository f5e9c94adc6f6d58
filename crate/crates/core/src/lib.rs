//! Layer-wise adaptive optimizers for large-batch training.
//!
//! * [`nn`]: a small dense network with hand-written backpropagation and a
//!   finite-difference gradient checker.
//! * [`schedule`]: the time-varying factor used by TVLARS, warm-up plus
//!   cosine, and polynomial decay.
//! * [`optim`]: momentum SGD, LARS, LAMB and TVLARS over per-layer parameter
//!   groups.
//! * [`diagnostics`]: per-layer weight/gradient norm records and the
//!   batch-gradient variance study.
//! * [`data`]: synthetic Gaussian blobs, the CIFAR-10 binary format, batching.
//! * [`harness`]: config files, the training loop and metrics output.
//!
//! Everything is `f64` and single-threaded; identical seeds give identical
//! results bit for bit.

pub mod data;
pub mod diagnostics;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod tensor;
