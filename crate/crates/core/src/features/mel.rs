//! Log-mel spectrograms with delta and delta-delta planes (the SER input).

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::fft::power_spectrum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub mel_bins: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            mel_bins: 40,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            fmin_hz: 40.0,
            fmax_hz: 7600.0,
        }
    }
}

/// 3-plane log-mel tensor: `planes[[0, m, t]]` static, 1 delta, 2 delta-delta.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub planes: Array3<f64>,
}

impl MelSpectrogram {
    pub fn mel_bins(&self) -> usize {
        self.planes.shape()[1]
    }

    pub fn n_frames(&self) -> usize {
        self.planes.shape()[2]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, rows = filters, columns = fft bins.
fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Array2<f64> {
    let n_bins = cfg.fft_size / 2 + 1;
    let fmax = cfg.fmax_hz.min(sample_rate as f64 / 2.0);
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(fmax);
    let centers: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| {
            let mel = mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64;
            mel_to_hz(mel) * cfg.fft_size as f64 / sample_rate as f64
        })
        .collect();
    let mut fb = Array2::<f64>::zeros((cfg.mel_bins, n_bins));
    for m in 0..cfg.mel_bins {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_bins {
            let kf = k as f64;
            let w = if kf >= lo && kf <= mid && mid > lo {
                (kf - lo) / (mid - lo)
            } else if kf > mid && kf <= hi && hi > mid {
                (hi - kf) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Two-frame symmetric regression deltas with replicated edges:
/// `d_t = (1*(x[t+1]-x[t-1]) + 2*(x[t+2]-x[t-2])) / 10`.
pub fn delta(plane: &Array2<f64>) -> Array2<f64> {
    let (m, t_len) = plane.dim();
    let mut out = Array2::<f64>::zeros((m, t_len));
    let clamp = |t: isize| -> usize { t.clamp(0, t_len as isize - 1) as usize };
    for row in 0..m {
        for t in 0..t_len {
            let ti = t as isize;
            let mut acc = 0.0;
            for n in 1..=2isize {
                acc += n as f64 * (plane[[row, clamp(ti + n)]] - plane[[row, clamp(ti - n)]]);
            }
            out[[row, t]] = acc / 10.0;
        }
    }
    out
}

pub fn compute_mel_spectrogram(
    waveform: &[f64],
    sample_rate: u32,
    cfg: &MelConfig,
) -> Result<MelSpectrogram> {
    let win = (cfg.window_ms / 1000.0 * sample_rate as f64).round() as usize;
    let hop = (cfg.hop_ms / 1000.0 * sample_rate as f64).round() as usize;
    if waveform.is_empty() {
        return Err(Error::Validation("empty waveform".into()));
    }
    if waveform.len() < win {
        return Err(Error::Validation(format!(
            "waveform of {} samples is shorter than one analysis window ({} samples)",
            waveform.len(),
            win
        )));
    }
    if win > cfg.fft_size {
        return Err(Error::Config(format!(
            "mel window of {win} samples exceeds fft_size {}",
            cfg.fft_size
        )));
    }
    let n_frames = waveform.len() / hop + 1;
    let fb = mel_filterbank(cfg, sample_rate);
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();

    let mut statics = Array2::<f64>::zeros((cfg.mel_bins, n_frames));
    let mut frame = vec![0.0; win];
    for t in 0..n_frames {
        let center = (t * hop) as isize;
        for (i, slot) in frame.iter_mut().enumerate() {
            let src = center - (win / 2) as isize + i as isize;
            *slot = if src >= 0 && (src as usize) < waveform.len() {
                waveform[src as usize] * hann[i]
            } else {
                0.0
            };
        }
        let ps = power_spectrum(&frame, cfg.fft_size);
        for m in 0..cfg.mel_bins {
            let mut e = 0.0;
            for (k, &p) in ps.iter().enumerate() {
                e += fb[[m, k]] * p;
            }
            statics[[m, t]] = e.max(1e-10).ln();
        }
    }

    let d1 = delta(&statics);
    let d2 = delta(&d1);
    let mut planes = Array3::<f64>::zeros((3, cfg.mel_bins, n_frames));
    planes.index_axis_mut(ndarray::Axis(0), 0).assign(&statics);
    planes.index_axis_mut(ndarray::Axis(0), 1).assign(&d1);
    planes.index_axis_mut(ndarray::Axis(0), 2).assign(&d2);
    Ok(MelSpectrogram { planes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn shape_contract_on_white_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let wave: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let cfg = MelConfig::default();
        let mel = compute_mel_spectrogram(&wave, 16000, &cfg).unwrap();
        assert_eq!(mel.planes.shape()[0], 3);
        assert_eq!(mel.mel_bins(), 40);
        let t = mel.n_frames();
        assert!((48..=52).contains(&t), "T' = {t}, expected about 50");
        assert!(mel.planes.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn delta_of_constant_is_zero() {
        let plane = Array2::<f64>::from_elem((4, 10), 3.25);
        let d = delta(&plane);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_delta_is_delta_applied_twice() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let plane = Array2::<f64>::from_shape_fn((5, 20), |_| rng.random_range(-1.0..1.0));
        let wave: Vec<f64> = (0..8000)
            .map(|i| (i as f64 * 0.05).sin() * 0.3)
            .collect();
        let mel = compute_mel_spectrogram(&wave, 16000, &MelConfig::default()).unwrap();
        let d1 = mel.planes.index_axis(ndarray::Axis(0), 1).to_owned();
        let d2 = mel.planes.index_axis(ndarray::Axis(0), 2).to_owned();
        let recomputed = delta(&d1);
        assert_eq!(d2, recomputed);
        let _ = plane;
    }

    #[test]
    fn too_short_waveform_is_an_error() {
        let err = compute_mel_spectrogram(&[0.0; 100], 16000, &MelConfig::default()).unwrap_err();
        assert!(err.to_string().contains("shorter than one analysis window"));
    }
}
