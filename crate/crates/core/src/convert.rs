//! Run-time conversion: normalize, map cepstra through the generator over
//! sliding windows, denormalize with the target speaker's statistics,
//! transform F0, copy aperiodicity verbatim, resynthesize.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::features::{lg_transform_f0, AcousticFeatures, F0Stats};
use crate::ser::EmotionStyleFeature;
use crate::stargan::nets::{generator_forward, Mode};
use crate::stargan::{ModelBundle, NormStats};

#[derive(Debug, Clone)]
pub struct ConversionRequest {
    pub source_utterance: String,
    pub target_speaker: String,
    pub target_emotion: String,
    /// Override for the same-emotion requirement.
    pub allow_cross_emotion: bool,
    pub output_path: Option<PathBuf>,
}

/// Everything the conversion path reads: models, normalization statistics,
/// and the per-(speaker, emotion) registries for reference styles and F0.
pub struct ConversionContext<'a> {
    pub bundle: &'a ModelBundle,
    pub norm: &'a NormStats,
    pub speaker_index: BTreeMap<String, usize>,
    pub reference_styles: BTreeMap<(String, String), EmotionStyleFeature>,
    pub f0_stats: BTreeMap<(String, String), F0Stats>,
    /// Sliding-window length in frames (the training crop).
    pub window_frames: usize,
    /// Window hop; window/2 in the reference configuration.
    pub window_hop: usize,
}

/// Maps one fixed-length normalized segment `[1, D, W]`.
pub trait SegmentConverter {
    fn convert(&self, segment: &ArrayD<f64>) -> Result<ArrayD<f64>>;
}

/// The real generator, bound to one conversion target.
pub struct GeneratorSegments<'a> {
    pub bundle: &'a ModelBundle,
    pub style: &'a EmotionStyleFeature,
    pub target_index: usize,
}

impl SegmentConverter for GeneratorSegments<'_> {
    fn convert(&self, segment: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let n = self.bundle.cfg.n_speakers;
        let mut style = ArrayD::<f64>::zeros(IxDyn(&[1, self.bundle.cfg.style_dim]));
        for (j, &v) in self.style.values.iter().enumerate() {
            style[[0, j]] = v;
        }
        let mut label = ArrayD::<f64>::zeros(IxDyn(&[1, n]));
        label[[0, self.target_index]] = 1.0;
        generator_forward(self.bundle, segment, &style, &label, Mode::Eval)
    }
}

/// Pass-through stub for pipeline-identity tests.
pub struct IdentitySegments;

impl SegmentConverter for IdentitySegments {
    fn convert(&self, segment: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(segment.clone())
    }
}

/// Convert a full-length cepstral matrix `[D, T]` with sliding windows of
/// `window` frames and the given hop, triangular overlap-averaging. The
/// window length must be a multiple of 4; T is unrestricted.
pub fn convert_mceps_windowed(
    mapper: &dyn SegmentConverter,
    mceps: &Array2<f64>,
    window: usize,
    hop: usize,
) -> Result<Array2<f64>> {
    let (d, t) = (mceps.shape()[0], mceps.shape()[1]);
    if window % 4 != 0 || window == 0 {
        return Err(Error::Config(format!(
            "conversion window {window} is not a multiple of 4"
        )));
    }
    if hop == 0 || hop > window {
        return Err(Error::Config(format!(
            "conversion hop {hop} must be in 1..={window}"
        )));
    }

    // short utterances: pad to one whole window, convert once, truncate
    if t <= window {
        let padded_len = window;
        let mut seg = ArrayD::<f64>::zeros(IxDyn(&[1, d, padded_len]));
        for tt in 0..padded_len {
            let src = tt.min(t - 1);
            for dd in 0..d {
                seg[[0, dd, tt]] = mceps[[dd, src]];
            }
        }
        let out = mapper.convert(&seg)?;
        check_segment_shape(&out, d, padded_len)?;
        let mut result = Array2::<f64>::zeros((d, t));
        for tt in 0..t {
            for dd in 0..d {
                result[[dd, tt]] = out[[0, dd, tt]];
            }
        }
        return Ok(result);
    }

    let mut offsets: Vec<usize> = (0..).map(|i| i * hop).take_while(|o| o + window <= t).collect();
    if offsets.last().copied().unwrap_or(0) + window < t {
        offsets.push(t - window);
    }
    // triangular weight peaks mid-window
    let tri: Vec<f64> = (0..window)
        .map(|n| (n + 1).min(window - n) as f64)
        .collect();
    let mut acc = Array2::<f64>::zeros((d, t));
    let mut weight = vec![0.0; t];
    let mut seg = ArrayD::<f64>::zeros(IxDyn(&[1, d, window]));
    for &off in &offsets {
        for tt in 0..window {
            for dd in 0..d {
                seg[[0, dd, tt]] = mceps[[dd, off + tt]];
            }
        }
        let out = mapper.convert(&seg)?;
        check_segment_shape(&out, d, window)?;
        for tt in 0..window {
            let dst = off + tt;
            for dd in 0..d {
                acc[[dd, dst]] += out[[0, dd, tt]] * tri[tt];
            }
            weight[dst] += tri[tt];
        }
    }
    for tt in 0..t {
        let w = weight[tt];
        if w <= 0.0 {
            return Err(Error::Internal(format!(
                "conversion window schedule left frame {tt} uncovered"
            )));
        }
        for dd in 0..d {
            acc[[dd, tt]] /= w;
        }
    }
    Ok(acc)
}

fn check_segment_shape(out: &ArrayD<f64>, d: usize, w: usize) -> Result<()> {
    if out.shape() != [1, d, w] {
        return Err(Error::Internal(format!(
            "segment converter returned {:?}, expected [1, {d}, {w}]",
            out.shape()
        )));
    }
    Ok(())
}

/// Full feature-domain conversion. Returns features with the source's frame
/// count, its unvoiced mask, and byte-identical aperiodicity.
pub fn convert_features(
    ctx: &ConversionContext<'_>,
    source: &AcousticFeatures,
    source_speaker: &str,
    source_emotion: &str,
    request: &ConversionRequest,
) -> Result<AcousticFeatures> {
    source.validate()?;
    if request.target_emotion != source_emotion && !request.allow_cross_emotion {
        return Err(Error::Validation(format!(
            "source emotion is {source_emotion} but the request targets {}; \
             pass the cross-emotion override to allow this",
            request.target_emotion
        )));
    }
    let &src_idx = ctx.speaker_index.get(source_speaker).ok_or_else(|| {
        Error::Validation(format!("unknown source speaker {source_speaker}"))
    })?;
    let &tgt_idx = ctx.speaker_index.get(&request.target_speaker).ok_or_else(|| {
        Error::Validation(format!(
            "unknown target speaker {}; known speakers: {:?}",
            request.target_speaker,
            ctx.speaker_index.keys().collect::<Vec<_>>()
        ))
    })?;
    let tgt_cell = (request.target_speaker.clone(), request.target_emotion.clone());
    let style = ctx.reference_styles.get(&tgt_cell).ok_or_else(|| {
        Error::Validation(format!(
            "no reference styles for cell ({}, {})",
            tgt_cell.0, tgt_cell.1
        ))
    })?;
    let src_cell = (source_speaker.to_string(), source_emotion.to_string());
    let src_f0 = ctx.f0_stats.get(&src_cell).ok_or_else(|| {
        Error::Validation(format!("no F0 statistics for cell ({}, {})", src_cell.0, src_cell.1))
    })?;
    let tgt_f0 = ctx.f0_stats.get(&tgt_cell).ok_or_else(|| {
        Error::Validation(format!("no F0 statistics for cell ({}, {})", tgt_cell.0, tgt_cell.1))
    })?;

    let normalized = ctx.norm.normalize(src_idx, &source.mceps);
    let mapper = GeneratorSegments {
        bundle: ctx.bundle,
        style,
        target_index: tgt_idx,
    };
    let converted_norm =
        convert_mceps_windowed(&mapper, &normalized, ctx.window_frames, ctx.window_hop)?;
    let converted = ctx.norm.denormalize(tgt_idx, &converted_norm);

    let f0 = lg_transform_f0(source.f0.as_slice().unwrap(), src_f0, tgt_f0)?;

    let out = AcousticFeatures {
        mceps: converted,
        f0: ndarray::Array1::from_vec(f0),
        aps: source.aps.clone(),
        frame_shift_ms: source.frame_shift_ms,
        sample_rate_hz: source.sample_rate_hz,
    };
    if out.n_frames() != source.n_frames() {
        return Err(Error::Internal(format!(
            "conversion changed the frame count: {} -> {}",
            source.n_frames(),
            out.n_frames()
        )));
    }
    out.validate()?;
    Ok(out)
}

/// Outcome of one batch entry.
#[derive(Debug)]
pub enum BatchOutcome {
    Converted(AcousticFeatures),
    Failed(Error),
}

/// Run requests independently; failures never abort the batch.
pub fn batch_convert(
    ctx: &ConversionContext<'_>,
    requests: &[(ConversionRequest, AcousticFeatures, String, String)],
) -> Vec<BatchOutcome> {
    requests
        .iter()
        .map(|(req, feats, spk, emo)| {
            match convert_features(ctx, feats, spk, emo, req) {
                Ok(f) => BatchOutcome::Converted(f),
                Err(e) => BatchOutcome::Failed(e),
            }
        })
        .collect()
}
