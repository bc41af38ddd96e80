//! Continual learning for CSI feedback autoencoders with generative replay.

pub mod channelgen;
pub mod ctgan;
pub mod error;
pub mod expcli;
pub mod feedbacknet;
pub mod memory;
pub mod netcore;

pub use error::{Error, Result};

// Training allocates and frees many large activation buffers per step; the
// system allocator returns them to the OS each time and page-faults them back.
#[cfg(feature = "mimalloc")]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
