//! Frame-wise fundamental-frequency estimation by normalized
//! autocorrelation with parabolic peak refinement.

/// Tuning knobs for the built-in pitch tracker.
#[derive(Debug, Clone)]
pub struct PitchConfig {
    pub f0_floor_hz: f64,
    pub f0_ceil_hz: f64,
    /// Analysis window in milliseconds (should cover >= 2 periods at the floor).
    pub window_ms: f64,
    /// Normalized-autocorrelation threshold below which a frame is unvoiced.
    pub voicing_threshold: f64,
    /// RMS below this (relative to full scale 1.0) is silence.
    pub silence_rms: f64,
    /// Penalty per octave above the pitch floor; breaks ties between a
    /// period and its multiples in favour of the shorter lag.
    pub octave_cost: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            f0_floor_hz: 50.0,
            f0_ceil_hz: 500.0,
            window_ms: 40.0,
            voicing_threshold: 0.35,
            silence_rms: 1e-4,
            octave_cost: 0.02,
        }
    }
}

/// Per-frame result: `(f0_hz, periodicity)`. `f0 = 0` marks unvoiced;
/// periodicity is the normalized autocorrelation peak in [0, 1].
pub fn track_f0(
    waveform: &[f64],
    sample_rate: u32,
    frame_positions: &[usize],
    cfg: &PitchConfig,
) -> Vec<(f64, f64)> {
    let sr = sample_rate as f64;
    let half = ((cfg.window_ms / 1000.0 * sr) as usize / 2).max(1);
    let lag_min = (sr / cfg.f0_ceil_hz).floor() as usize;
    let lag_max = (sr / cfg.f0_floor_hz).ceil() as usize;

    frame_positions
        .iter()
        .map(|&center| {
            let start = center.saturating_sub(half);
            let end = (center + half).min(waveform.len());
            let frame = &waveform[start..end];
            estimate_frame(frame, sr, lag_min, lag_max, cfg)
        })
        .collect()
}

fn estimate_frame(
    frame: &[f64],
    sr: f64,
    lag_min: usize,
    lag_max: usize,
    cfg: &PitchConfig,
) -> (f64, f64) {
    if frame.len() < lag_min + 2 {
        return (0.0, 0.0);
    }
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|&v| v - mean).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let rms = (energy / x.len() as f64).sqrt();
    if rms < cfg.silence_rms {
        return (0.0, 0.0);
    }

    let lag_hi = lag_max.min(x.len() - 1);
    let mut corr = vec![0.0; lag_hi + 1];
    for lag in lag_min..=lag_hi {
        let n = x.len() - lag;
        let mut num = 0.0;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for i in 0..n {
            num += x[i] * x[i + lag];
            e1 += x[i] * x[i];
            e2 += x[i + lag] * x[i + lag];
        }
        let denom = (e1 * e2).sqrt();
        corr[lag] = if denom > 0.0 { num / denom } else { 0.0 };
    }
    // candidate = local maximum; octave cost penalizes period multiples,
    // which tie the true period on strongly periodic input
    let mut best_lag = 0usize;
    let mut best_r = 0.0f64;
    let mut best_score = f64::NEG_INFINITY;
    for lag in lag_min..=lag_hi {
        let left = if lag > lag_min { corr[lag - 1] } else { f64::NEG_INFINITY };
        let right = if lag < lag_hi { corr[lag + 1] } else { f64::NEG_INFINITY };
        if corr[lag] < left || corr[lag] < right {
            continue;
        }
        let score = corr[lag] - cfg.octave_cost * (lag as f64 / lag_min as f64).log2();
        if score > best_score {
            best_score = score;
            best_lag = lag;
            best_r = corr[lag];
        }
    }
    if best_r < cfg.voicing_threshold || best_lag == 0 {
        return (0.0, best_r.max(0.0));
    }
    // parabolic refinement around the integer peak
    let lag = best_lag as f64
        + if best_lag > lag_min && best_lag < lag_hi {
            let y0 = corr[best_lag - 1];
            let y1 = corr[best_lag];
            let y2 = corr[best_lag + 1];
            let denom = y0 - 2.0 * y1 + y2;
            if denom.abs() > 1e-12 {
                (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        } else {
            0.0
        };
    ((sr / lag).clamp(cfg.f0_floor_hz, cfg.f0_ceil_hz), best_r)
}
