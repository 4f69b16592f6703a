//! Multi-coil k-space reconstruction: linear and learned self-consistency methods,
//! synthetic data generation, undersampling and image-quality metrics.

pub mod error;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod sampling;
pub mod scnn;
pub mod spirit;
pub mod sraki;
pub mod tensor;

pub use error::{ReconError, Result};
pub use kspace::{ComplexVolume, Dims, Domain, HybridSlice, NormScale, RealVolume};
pub use sampling::SamplingMask;
