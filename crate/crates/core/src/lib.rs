pub mod audio;
pub mod bitstream;
pub mod config;
pub mod core_codec;
pub mod dataset;
pub mod decoder;
pub mod discriminator;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rvq;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use tensor::Tensor;
