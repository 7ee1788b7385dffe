//! Mel-cepstral spectral envelopes: log-spectrum warping, cepstral
//! truncation (liftering), and the inverse path used for synthesis.

use std::f64::consts::PI;

use super::fft::{fft, Complex};

/// First-order all-pass frequency warp on [0, pi]. `alpha > 0` stretches the
/// low end (mel-like); the inverse warp is the same map with `-alpha`.
pub fn warp(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin() / (1.0 - alpha * omega.cos())).atan()
}

/// Warp factor approximating the mel scale at a given sample rate.
pub fn alpha_for_rate(sample_rate: u32) -> f64 {
    match sample_rate {
        8000 => 0.31,
        16000 => 0.42,
        22050 => 0.45,
        44100 => 0.53,
        48000 => 0.55,
        _ => 0.42,
    }
}

/// Linear interpolation of `src` at fractional indices.
fn interp(src: &[f64], pos: f64) -> f64 {
    let last = src.len() - 1;
    if pos <= 0.0 {
        return src[0];
    }
    if pos >= last as f64 {
        return src[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    src[i] * (1.0 - frac) + src[i + 1] * frac
}

#[derive(Debug, Clone)]
pub struct McepAnalyzer {
    pub order: usize,
    pub fft_size: usize,
    pub alpha: f64,
    window: Vec<f64>,
    /// Source bin (fractional) for each warped-grid point.
    analysis_pos: Vec<f64>,
    /// Warped-grid position (fractional) for each linear bin.
    synthesis_pos: Vec<f64>,
}

const LOG_POWER_FLOOR: f64 = 1e-12;

impl McepAnalyzer {
    pub fn new(order: usize, fft_size: usize, alpha: f64) -> Self {
        assert!(fft_size.is_power_of_two());
        let half = fft_size / 2;
        let window: Vec<f64> = (0..fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / fft_size as f64).cos())
            .collect();
        // grid j in [0, half] uniform in warped frequency; its source linear
        // frequency comes from the inverse warp
        let analysis_pos = (0..=half)
            .map(|j| {
                let beta = PI * j as f64 / half as f64;
                warp(beta, -alpha) / PI * half as f64
            })
            .collect();
        let synthesis_pos = (0..=half)
            .map(|k| {
                let omega = PI * k as f64 / half as f64;
                warp(omega, alpha) / PI * half as f64
            })
            .collect();
        McepAnalyzer {
            order,
            fft_size,
            alpha,
            window,
            analysis_pos,
            synthesis_pos,
        }
    }

    /// Mel-cepstrum of one frame (any length; windowed/zero-padded to the
    /// FFT size). Returns `order` coefficients, c0 = log-energy term.
    /// A known `f0_hz` enables pitch-adaptive envelope smoothing, which
    /// fills the valleys between harmonics before the cepstrum is taken.
    pub fn analyze_frame(&self, frame: &[f64], f0_hz: f64, sample_rate: f64) -> Vec<f64> {
        let n = self.fft_size;
        let half = n / 2;
        let mut buf = vec![Complex::ZERO; n];
        for i in 0..n.min(frame.len()) {
            buf[i].re = frame[i] * self.window[i];
        }
        fft(&mut buf, false);
        let mut power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sq()).collect();
        if f0_hz > 0.0 {
            let radius = ((f0_hz * n as f64 / sample_rate) * 0.6).round() as isize;
            if radius >= 1 {
                let mut smoothed = vec![0.0; power.len()];
                for (k, slot) in smoothed.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for off in -radius..=radius {
                        let idx = k as isize + off;
                        if idx >= 0 && (idx as usize) < power.len() {
                            acc += power[idx as usize];
                            cnt += 1.0;
                        }
                    }
                    *slot = acc / cnt;
                }
                power = smoothed;
            }
        }
        let log_spec: Vec<f64> = power
            .iter()
            .map(|&p| 0.5 * p.max(LOG_POWER_FLOOR).ln())
            .collect();
        // resample onto the warped grid, then real cepstrum by inverse FFT
        let warped: Vec<f64> = self
            .analysis_pos
            .iter()
            .map(|&p| interp(&log_spec, p))
            .collect();
        let mut sym = vec![Complex::ZERO; n];
        for j in 0..=half {
            sym[j].re = warped[j];
            if j > 0 && j < half {
                sym[n - j].re = warped[j];
            }
        }
        fft(&mut sym, true);
        sym[..self.order.min(n)].iter().map(|c| c.re).collect()
    }

    /// Magnitude envelope on the linear-frequency grid (`fft_size/2 + 1`
    /// bins) reconstructed from a truncated mel-cepstrum.
    pub fn envelope(&self, mcep: &[f64]) -> Vec<f64> {
        let n = self.fft_size;
        let half = n / 2;
        let mut sym = vec![Complex::ZERO; n];
        for (m, &c) in mcep.iter().enumerate() {
            sym[m].re = c;
            if m > 0 && m < half {
                sym[n - m].re = c;
            }
        }
        fft(&mut sym, false);
        let warped_log: Vec<f64> = sym[..=half].iter().map(|c| c.re).collect();
        self.synthesis_pos
            .iter()
            .map(|&p| interp(&warped_log, p).exp())
            .collect()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warp_is_monotonic_and_invertible() {
        let alpha = 0.42;
        let mut prev = -1.0;
        for i in 0..=100 {
            let w = PI * i as f64 / 100.0;
            let b = warp(w, alpha);
            assert!(b > prev);
            prev = b;
            let back = warp(b, -alpha);
            assert!((back - w).abs() < 1e-10, "round trip {w} -> {b} -> {back}");
        }
        assert!(warp(0.0, alpha).abs() < 1e-12);
        assert!((warp(PI, alpha) - PI).abs() < 1e-9);
    }

    #[test]
    fn envelope_reconstructs_smooth_spectrum() {
        // a frame with one broad resonance: cepstra of modest order should
        // reproduce its envelope closely
        let sr = 16000.0;
        let f_res = 800.0;
        let frame: Vec<f64> = (0..512)
            .map(|i| {
                let t = i as f64 / sr;
                (2.0 * PI * f_res * t).sin() * (-(t * 60.0)).exp()
            })
            .collect();
        let an = McepAnalyzer::new(36, 512, 0.42);
        let mcep = an.analyze_frame(&frame, 0.0, sr);
        assert_eq!(mcep.len(), 36);
        let env = an.envelope(&mcep);
        // the strongest envelope bin should sit near the resonance
        let peak_bin = env
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let peak_hz = peak_bin as f64 * sr / 512.0;
        assert!(
            (peak_hz - f_res).abs() < 200.0,
            "envelope peak at {peak_hz} Hz, expected near {f_res}"
        );
    }

    #[test]
    fn silence_yields_finite_cepstra() {
        let an = McepAnalyzer::new(36, 512, 0.42);
        let mcep = an.analyze_frame(&[0.0; 512], 0.0, 16000.0);
        assert!(mcep.iter().all(|c| c.is_finite()));
        assert!(mcep[0] < 0.0, "c0 of silence is very negative");
    }
}
