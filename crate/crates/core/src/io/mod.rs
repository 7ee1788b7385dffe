//! File formats: WAV audio and the chunked named-array container used for
//! feature files and checkpoints.

pub mod array_file;
pub mod wav;

pub use array_file::{ArrayFile, Chunk};
pub use wav::{parse_wav, read_wav, write_wav, Wav};
