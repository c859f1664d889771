//! Signal processing primitives: STFT, mel filterbanks and the PQMF bank.

pub mod mel;
pub mod pqmf;
pub mod stft;
