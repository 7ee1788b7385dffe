//! Acoustic analysis/synthesis front end: vocoder features (mel-cepstra, F0,
//! aperiodicity), log-mel spectrograms, F0 statistics, and the log-Gaussian
//! pitch transform.

pub mod cepstrum;
pub mod f0;
pub mod fft;
pub mod mel;
pub mod pitch;
pub mod vocoder;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ArrayFile;

pub use f0::{compute_f0_stats, lg_transform_f0, F0Stats};
pub use mel::{compute_mel_spectrogram, MelConfig, MelSpectrogram};
pub use vocoder::{BuiltinVocoder, ExternalVocoder, VocoderBackend};

/// Per-utterance vocoder features. All planes share the frame count T;
/// `f0 = 0` marks unvoiced frames; aperiodicity values live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatures {
    /// Mel-cepstral coefficients, `[D × T]` with D = 36 in the reference
    /// configuration. Row 0 is the energy-like term.
    pub mceps: Array2<f64>,
    /// Fundamental frequency per frame in Hz, 0 = unvoiced.
    pub f0: Array1<f64>,
    /// Band aperiodicity, `[A × T]`.
    pub aps: Array2<f64>,
    pub frame_shift_ms: f64,
    pub sample_rate_hz: u32,
}

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    format: String,
    version: u32,
    frame_shift_ms: f64,
    sample_rate_hz: u32,
}

impl AcousticFeatures {
    pub fn n_frames(&self) -> usize {
        self.mceps.shape()[1]
    }

    pub fn mcep_dim(&self) -> usize {
        self.mceps.shape()[0]
    }

    pub fn voiced_mask(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_frames();
        if self.f0.len() != t || self.aps.shape()[1] != t {
            return Err(Error::Internal(format!(
                "frame counts disagree: mceps T={t}, f0 T={}, aps T={}",
                self.f0.len(),
                self.aps.shape()[1]
            )));
        }
        if self.f0.iter().any(|&f| f < 0.0 || !f.is_finite()) {
            return Err(Error::Internal("negative or non-finite F0 entry".into()));
        }
        if self
            .aps
            .iter()
            .any(|&a| !(0.0..=1.0).contains(&a) || !a.is_finite())
        {
            return Err(Error::Internal("aperiodicity entry outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Serialize into the named-array container (arrays stored as float32).
    pub fn to_array_file(&self) -> ArrayFile {
        let mut file = ArrayFile::new();
        file.push_array_f32("mceps", &self.mceps.clone().into_dyn());
        file.push_array_f32("f0", &self.f0.clone().into_dyn());
        file.push_array_f32("aps", &self.aps.clone().into_dyn());
        let meta = FeatureMeta {
            format: "stylevc-features".into(),
            version: 1,
            frame_shift_ms: self.frame_shift_ms,
            sample_rate_hz: self.sample_rate_hz,
        };
        file.push_bytes("meta", serde_json::to_vec(&meta).unwrap());
        file
    }

    pub fn from_array_file(file: &ArrayFile, path: &Path) -> Result<Self> {
        let err = |what: &str| Error::format(path, what.to_string());
        let meta: FeatureMeta = serde_json::from_slice(
            file.get_bytes("meta").ok_or_else(|| err("missing meta chunk"))?,
        )
        .map_err(|e| err(&format!("bad meta chunk: {e}")))?;
        if meta.format != "stylevc-features" {
            return Err(err(&format!("unexpected format tag {}", meta.format)));
        }
        let mceps = file
            .get_array_f32("mceps")
            .ok_or_else(|| err("missing mceps chunk"))?;
        let f0 = file
            .get_array_f32("f0")
            .ok_or_else(|| err("missing f0 chunk"))?;
        let aps = file
            .get_array_f32("aps")
            .ok_or_else(|| err("missing aps chunk"))?;
        if mceps.ndim() != 2 || aps.ndim() != 2 || f0.ndim() != 1 {
            return Err(err("feature chunk with unexpected rank"));
        }
        let features = AcousticFeatures {
            mceps: mceps.into_dimensionality().unwrap(),
            f0: f0.into_dimensionality().unwrap(),
            aps: aps.into_dimensionality().unwrap(),
            frame_shift_ms: meta.frame_shift_ms,
            sample_rate_hz: meta.sample_rate_hz,
        };
        features.validate().map_err(|e| err(&e.to_string()))?;
        Ok(features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_array_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = ArrayFile::load(path)?;
        Self::from_array_file(&file, path)
    }
}

/// Analyze a waveform with the given backend; T = floor(samples/shift) + 1.
pub fn analyze_waveform(
    backend: &dyn VocoderBackend,
    waveform: &[f64],
    sample_rate: u32,
    frame_shift_ms: f64,
) -> Result<AcousticFeatures> {
    backend.analyze(waveform, sample_rate, frame_shift_ms)
}

/// Synthesize a waveform from features with the given backend.
pub fn synthesize_waveform(
    backend: &dyn VocoderBackend,
    features: &AcousticFeatures,
) -> Result<Vec<f64>> {
    backend.synthesize(features)
}
