//! Vocoder backends behind a common analyze/synthesize interface.
//!
//! The built-in backend keeps everything hermetic: autocorrelation pitch
//! tracking, mel-cepstral envelope liftering, and pulse-plus-noise
//! overlap-add synthesis. The external adapter shells out to a user-supplied
//! analysis/synthesis tool speaking WAV and the feature container format;
//! if it is not configured or fails, that is an explicit error — backends
//! never fall back silently onto one another.

use std::path::Path;
use std::process::Command;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cepstrum::{alpha_for_rate, McepAnalyzer};
use super::pitch::{track_f0, PitchConfig};
use super::AcousticFeatures;
use crate::error::{Error, Result};
use crate::io::wav;

pub trait VocoderBackend: Send + Sync {
    fn analyze(
        &self,
        waveform: &[f64],
        sample_rate: u32,
        frame_shift_ms: f64,
    ) -> Result<AcousticFeatures>;

    fn synthesize(&self, features: &AcousticFeatures) -> Result<Vec<f64>>;

    fn name(&self) -> &str;
}

// ---------------------------------------------------------------------
// Built-in backend
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BuiltinVocoder {
    pub mcep_order: usize,
    pub fft_size: usize,
    pub ap_bands: usize,
    pub pitch: PitchConfig,
    /// Seed for the noise excitation used in synthesis.
    pub noise_seed: u64,
}

impl Default for BuiltinVocoder {
    fn default() -> Self {
        BuiltinVocoder {
            mcep_order: 36,
            fft_size: 512,
            ap_bands: 5,
            pitch: PitchConfig::default(),
            noise_seed: 0x5eed,
        }
    }
}

pub fn frame_positions(n_samples: usize, shift_samples: usize) -> Vec<usize> {
    let n_frames = n_samples / shift_samples + 1;
    (0..n_frames).map(|i| i * shift_samples).collect()
}

impl VocoderBackend for BuiltinVocoder {
    fn analyze(
        &self,
        waveform: &[f64],
        sample_rate: u32,
        frame_shift_ms: f64,
    ) -> Result<AcousticFeatures> {
        if waveform.is_empty() {
            return Err(Error::Validation("empty waveform".into()));
        }
        if sample_rate != 16000 {
            return Err(Error::Config(format!(
                "unsupported sample rate {sample_rate} Hz; the reference configuration is 16000"
            )));
        }
        let shift = (frame_shift_ms / 1000.0 * sample_rate as f64).round() as usize;
        if shift == 0 {
            return Err(Error::Config("frame shift below one sample".into()));
        }
        let positions = frame_positions(waveform.len(), shift);
        let t_len = positions.len();

        let tracked = track_f0(waveform, sample_rate, &positions, &self.pitch);
        let analyzer = McepAnalyzer::new(self.mcep_order, self.fft_size, alpha_for_rate(sample_rate));

        let mut mceps = Array2::<f64>::zeros((self.mcep_order, t_len));
        let mut f0 = Array1::<f64>::zeros(t_len);
        let mut aps = Array2::<f64>::zeros((self.ap_bands, t_len));
        let half = self.fft_size / 2;
        let mut frame = vec![0.0; self.fft_size];
        for (t, &center) in positions.iter().enumerate() {
            for (i, slot) in frame.iter_mut().enumerate() {
                let src = center as isize - half as isize + i as isize;
                *slot = if src >= 0 && (src as usize) < waveform.len() {
                    waveform[src as usize]
                } else {
                    0.0
                };
            }
            let (hz, periodicity) = tracked[t];
            let mc = analyzer.analyze_frame(&frame, hz, sample_rate as f64);
            for (d, &c) in mc.iter().enumerate() {
                mceps[[d, t]] = c;
            }
            f0[t] = hz;
            let ap = if hz > 0.0 {
                (1.0 - periodicity).clamp(0.0, 1.0)
            } else {
                1.0
            };
            for b in 0..self.ap_bands {
                aps[[b, t]] = ap;
            }
        }

        let features = AcousticFeatures {
            mceps,
            f0,
            aps,
            frame_shift_ms,
            sample_rate_hz: sample_rate,
        };
        features.validate()?;
        Ok(features)
    }

    fn synthesize(&self, features: &AcousticFeatures) -> Result<Vec<f64>> {
        features.validate()?;
        let sr = features.sample_rate_hz as f64;
        let shift = (features.frame_shift_ms / 1000.0 * sr).round() as usize;
        let t_len = features.n_frames();
        let n_out = t_len * shift;
        let order = features.mceps.shape()[0];
        let analyzer = McepAnalyzer::new(order, self.fft_size, alpha_for_rate(features.sample_rate_hz));

        // excitation: pulse train with running phase + seeded noise, mixed by
        // the frame's mean aperiodicity
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let mut excitation = vec![0.0; n_out];
        let mut phase = 0.0f64;
        for n in 0..n_out {
            let t = (n / shift).min(t_len - 1);
            let hz = features.f0[t];
            let ap = features.aps.column(t).mean().unwrap_or(1.0).clamp(0.0, 1.0);
            let noise: f64 = rng.random_range(-1.0..1.0) * 3f64.sqrt().recip();
            let mut e = ap.sqrt() * noise;
            if hz > 0.0 {
                phase += hz / sr;
                if phase >= 1.0 {
                    phase -= 1.0;
                    e += (1.0 - ap).sqrt() * (sr / hz).sqrt();
                }
            } else {
                phase = 0.0;
            }
            excitation[n] = e;
        }

        // per-frame spectral shaping with Hann overlap-add
        let win = self.fft_size;
        let half = win / 2;
        let hann = analyzer.window().to_vec();
        let mut out = vec![0.0; n_out];
        let mut weight = vec![0.0; n_out];
        let mut buf = vec![super::fft::Complex::ZERO; win];
        for t in 0..t_len {
            let center = (t * shift) as isize;
            let mcep: Vec<f64> = features.mceps.column(t).to_vec();
            let env = analyzer.envelope(&mcep);
            for (i, b) in buf.iter_mut().enumerate() {
                let src = center - half as isize + i as isize;
                b.re = if src >= 0 && (src as usize) < n_out {
                    excitation[src as usize] * hann[i]
                } else {
                    0.0
                };
                b.im = 0.0;
            }
            super::fft::fft(&mut buf, false);
            for k in 0..=half {
                let m = env[k];
                buf[k].re *= m;
                buf[k].im *= m;
                if k > 0 && k < half {
                    buf[win - k].re *= m;
                    buf[win - k].im *= m;
                }
            }
            super::fft::fft(&mut buf, true);
            for i in 0..win {
                let dst = center - half as isize + i as isize;
                if dst >= 0 && (dst as usize) < n_out {
                    out[dst as usize] += buf[i].re;
                    weight[dst as usize] += hann[i];
                }
            }
        }
        for (o, &w) in out.iter_mut().zip(&weight) {
            if w > 1e-6 {
                *o /= w;
            }
        }
        // normalize peak to a sane range
        let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if peak > 1.0 {
            let s = 0.95 / peak;
            for o in out.iter_mut() {
                *o *= s;
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "builtin"
    }
}

// ---------------------------------------------------------------------
// External adapter
// ---------------------------------------------------------------------

/// Adapter for an external vocoder implementation. The commands receive
/// `{in}` and `{out}` placeholders; analysis maps WAV -> feature container,
/// synthesis maps feature container -> WAV. See the README ("External
/// vocoder protocol") for the exact contract.
#[derive(Debug, Clone)]
pub struct ExternalVocoder {
    pub analyze_cmd: String,
    pub synthesize_cmd: String,
    pub work_dir: std::path::PathBuf,
}

impl ExternalVocoder {
    fn run(&self, template: &str, input: &Path, output: &Path) -> Result<()> {
        if template.trim().is_empty() {
            return Err(Error::Backend(
                "external vocoder selected but its command is not configured".into(),
            ));
        }
        let cmd_line = template
            .replace("{in}", &input.to_string_lossy())
            .replace("{out}", &output.to_string_lossy());
        let mut parts = cmd_line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Backend("empty external vocoder command".into()))?;
        let status = Command::new(program)
            .args(parts)
            .status()
            .map_err(|e| Error::Backend(format!("failed to launch {program}: {e}")))?;
        if !status.success() {
            return Err(Error::Backend(format!(
                "external vocoder command failed with {status}: {cmd_line}"
            )));
        }
        Ok(())
    }
}

impl VocoderBackend for ExternalVocoder {
    fn analyze(
        &self,
        waveform: &[f64],
        sample_rate: u32,
        frame_shift_ms: f64,
    ) -> Result<AcousticFeatures> {
        let wav_path = self.work_dir.join("external_in.wav");
        let feat_path = self.work_dir.join("external_out.svca");
        wav::write_wav(&wav_path, sample_rate, waveform)?;
        self.run(&self.analyze_cmd, &wav_path, &feat_path)?;
        let features = AcousticFeatures::load(&feat_path)?;
        if (features.frame_shift_ms - frame_shift_ms).abs() > 1e-9 {
            return Err(Error::Backend(format!(
                "external vocoder produced frame shift {} ms, requested {} ms",
                features.frame_shift_ms, frame_shift_ms
            )));
        }
        Ok(features)
    }

    fn synthesize(&self, features: &AcousticFeatures) -> Result<Vec<f64>> {
        let feat_path = self.work_dir.join("external_in.svca");
        let wav_path = self.work_dir.join("external_out.wav");
        features.save(&feat_path)?;
        self.run(&self.synthesize_cmd, &feat_path, &wav_path)?;
        Ok(wav::read_wav(&wav_path)?.samples)
    }

    fn name(&self) -> &str {
        "external"
    }
}
