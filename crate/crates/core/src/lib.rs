//! Frequency-guided diffusion with adversarial perturbation training for
//! skeleton-based video anomaly detection.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod frequency;
pub mod motion_data;
pub mod networks;
pub mod perturbation;
pub mod plot;
pub mod tensor;

pub use error::{Error, Result};

// Tensor-sized allocations are frequent; the system allocator returns them
// to the OS and page-faults them back on every step.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
