//! Many-to-many spectral conversion: a generator conditioned on target
//! speaker label and emotional style vector, trained adversarially against a
//! conditional discriminator and a speaker classifier.

pub mod losses;
pub mod nets;
pub mod train;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-hot speaker code.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLabel {
    pub speaker_id: String,
    pub one_hot: Vec<f64>,
}

impl SpeakerLabel {
    pub fn new(speaker_id: &str, index: usize, n_speakers: usize) -> Result<Self> {
        if index >= n_speakers {
            return Err(Error::Validation(format!(
                "speaker index {index} out of range for {n_speakers} speakers"
            )));
        }
        let mut one_hot = vec![0.0; n_speakers];
        one_hot[index] = 1.0;
        Ok(SpeakerLabel {
            speaker_id: speaker_id.to_string(),
            one_hot,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ones = self.one_hot.iter().filter(|&&v| v == 1.0).count();
        let zeros = self.one_hot.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != self.one_hot.len() {
            return Err(Error::Validation(format!(
                "speaker label for {} is not one-hot",
                self.speaker_id
            )));
        }
        Ok(())
    }

    pub fn index(&self) -> usize {
        self.one_hot.iter().position(|&v| v == 1.0).unwrap_or(0)
    }
}

/// A fixed-length training minibatch.
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    /// `[B, D, L]`, z-normalized mel-cepstra.
    pub mceps: ArrayD<f64>,
    /// `[B, 64]` source style vectors.
    pub styles: ArrayD<f64>,
    /// `[B, N]` one-hot source speaker labels.
    pub labels: ArrayD<f64>,
    /// `[B, L]`, 1 on real frames, 0 on padding; only the l1 losses use it.
    pub mask: ArrayD<f64>,
    /// Originating utterance ids, for diagnostics.
    pub source_ids: Vec<String>,
}

impl SegmentBatch {
    pub fn batch_size(&self) -> usize {
        self.mceps.shape()[0]
    }

    pub fn crop_len(&self) -> usize {
        self.mceps.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        if b == 0 {
            return Err(Error::Validation("empty batch".into()));
        }
        if self.styles.shape()[0] != b || self.labels.shape()[0] != b || self.mask.shape()[0] != b
        {
            return Err(Error::ShapeMismatch {
                context: "SegmentBatch".into(),
                expected: format!("batch size {b} on every plane"),
                actual: format!(
                    "styles {}, labels {}, mask {}",
                    self.styles.shape()[0],
                    self.labels.shape()[0],
                    self.mask.shape()[0]
                ),
            });
        }
        for i in 0..b {
            let row = self.labels.index_axis(ndarray::Axis(0), i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 {
                return Err(Error::Validation(format!("label row {i} is not one-hot")));
            }
        }
        Ok(())
    }
}

/// Trade-off weights of the generator objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_dom: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dom: 2.0,
            lambda_cyc: 10.0,
            lambda_id: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub mcep_dim: usize,
    pub style_dim: usize,
    pub n_speakers: usize,
    /// Width after the per-frame conditioning-merge projection.
    pub merge_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub discriminator_channels: Vec<usize>,
    pub classifier_channels: Vec<usize>,
    /// The classifier sees only this many low-order cepstral rows.
    pub classifier_slice: usize,
    pub kernel_g: usize,
    pub kernel_dc: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Clamp inside every log.
    pub epsilon: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            mcep_dim: 36,
            style_dim: 64,
            n_speakers: 4,
            merge_channels: 64,
            encoder_channels: vec![64, 128, 256, 128, 10],
            decoder_channels: vec![64, 128, 64, 32],
            discriminator_channels: vec![32, 32, 32, 32, 1],
            classifier_channels: vec![8, 16, 32, 16],
            classifier_slice: 8,
            kernel_g: 9,
            kernel_dc: 3,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            epsilon: 1e-7,
        }
    }
}

impl GanConfig {
    /// Desk-scale configuration for tests and the hermetic pipeline.
    pub fn tiny(n_speakers: usize) -> Self {
        GanConfig {
            n_speakers,
            merge_channels: 16,
            encoder_channels: vec![8, 16, 16, 8, 10],
            decoder_channels: vec![8, 16, 8, 8],
            discriminator_channels: vec![8, 8, 8, 8, 1],
            classifier_channels: vec![4, 8, 8, 8],
            ..Default::default()
        }
    }

    /// Total time downsampling across the encoder (valid L is a multiple).
    pub fn length_multiple(&self) -> usize {
        4
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != 5 {
            return Err(Error::Config(format!(
                "encoder needs 5 blocks, got {}",
                self.encoder_channels.len()
            )));
        }
        if self.decoder_channels.len() != 4 {
            return Err(Error::Config(format!(
                "decoder needs 4 blocks, got {}",
                self.decoder_channels.len()
            )));
        }
        if self.discriminator_channels.len() != 5
            || *self.discriminator_channels.last().unwrap() != 1
        {
            return Err(Error::Config(
                "discriminator needs 5 output channels ending in 1".into(),
            ));
        }
        if self.classifier_channels.len() != 4 {
            return Err(Error::Config(format!(
                "classifier needs 4 blocks, got {}",
                self.classifier_channels.len()
            )));
        }
        if self.classifier_slice > self.mcep_dim {
            return Err(Error::Config(format!(
                "classifier_slice {} exceeds mcep_dim {}",
                self.classifier_slice, self.mcep_dim
            )));
        }
        if self.n_speakers < 1 {
            return Err(Error::Config("need at least one speaker".into()));
        }
        if self.kernel_g % 2 == 0 || self.kernel_dc % 2 == 0 {
            return Err(Error::Config("kernels must be odd for symmetric padding".into()));
        }
        Ok(())
    }
}

pub use nets::{Classifier, Discriminator, Generator, ModelBundle};
pub use train::{train, train_step, LossRecord, NormStats, TrainData, TrainItem, TrainOptions, Trainer};
