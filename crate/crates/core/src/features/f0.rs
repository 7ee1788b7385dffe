//! Per-cell F0 statistics and the log-Gaussian normalized pitch transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor on the log-F0 standard deviation; a constant-pitch corpus is an
/// error rather than a division hazard.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    /// Mean of ln(F0) over voiced frames, in log-Hz.
    pub mean_log_f0: f64,
    /// Standard deviation of ln(F0) over voiced frames (> 0).
    pub std_log_f0: f64,
}

/// Pool voiced frames across all contours and compute log-domain statistics.
pub fn compute_f0_stats<'a, I>(contours: I) -> Result<F0Stats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut logs = Vec::new();
    for contour in contours {
        for &f in contour {
            if f > 0.0 {
                logs.push(f.ln());
            }
        }
    }
    if logs.is_empty() {
        return Err(Error::Validation(
            "F0 statistics undefined: no voiced frames in the input contours".into(),
        ));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < SIGMA_FLOOR {
        return Err(Error::Validation(format!(
            "F0 statistics degenerate: std of log-F0 is {std:.3e}, below the {SIGMA_FLOOR:.0e} floor \
             (constant-pitch input?)"
        )));
    }
    Ok(F0Stats {
        mean_log_f0: mean,
        std_log_f0: std,
    })
}

/// Log-Gaussian normalized transform: match source log-F0 statistics to the
/// target's, frame by frame. Unvoiced frames (0) pass through untouched.
pub fn lg_transform_f0(f0: &[f64], src: &F0Stats, tgt: &F0Stats) -> Result<Vec<f64>> {
    if src.std_log_f0 < SIGMA_FLOOR {
        return Err(Error::Validation(format!(
            "source std_log_f0 {:.3e} below the {SIGMA_FLOOR:.0e} floor",
            src.std_log_f0
        )));
    }
    Ok(f0
        .iter()
        .map(|&f| {
            if f <= 0.0 {
                0.0
            } else {
                let z = (f.ln() - src.mean_log_f0) / src.std_log_f0;
                (z * tgt.std_log_f0 + tgt.mean_log_f0).exp()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_contour_mean_is_exact_and_sigma_errors() {
        let contour = vec![100.0; 50];
        let err = compute_f0_stats([contour.as_slice()]).unwrap_err();
        assert!(err.to_string().contains("floor"));
    }

    #[test]
    fn unvoiced_frames_excluded_from_stats() {
        let contour = vec![100.0, 0.0, 200.0];
        // add a second voiced value distribution so sigma clears the floor
        let stats = compute_f0_stats([contour.as_slice()]).unwrap();
        let expect = (100.0f64.ln() + 200.0f64.ln()) / 2.0;
        assert!((stats.mean_log_f0 - expect).abs() < 1e-12);
    }

    #[test]
    fn pooling_matches_concatenation() {
        let a = vec![100.0, 150.0, 0.0];
        let b = vec![200.0, 120.0];
        let pooled = compute_f0_stats([a.as_slice(), b.as_slice()]).unwrap();
        let concat: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let direct = compute_f0_stats([concat.as_slice()]).unwrap();
        assert!((pooled.mean_log_f0 - direct.mean_log_f0).abs() < 1e-12);
        assert!((pooled.std_log_f0 - direct.std_log_f0).abs() < 1e-12);
    }

    #[test]
    fn identity_when_stats_match() {
        let stats = F0Stats {
            mean_log_f0: 5.0,
            std_log_f0: 0.2,
        };
        let f0 = vec![120.0, 0.0, 180.0, 95.5];
        let out = lg_transform_f0(&f0, &stats, &stats).unwrap();
        for (a, b) in f0.iter().zip(&out) {
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn mean_maps_to_mean() {
        let src = F0Stats {
            mean_log_f0: 110.0f64.ln(),
            std_log_f0: 0.15,
        };
        let tgt = F0Stats {
            mean_log_f0: 220.0f64.ln(),
            std_log_f0: 0.3,
        };
        let out = lg_transform_f0(&[110.0], &src, &tgt).unwrap();
        assert!((out[0] - 220.0).abs() < 1e-9);
    }

    #[test]
    fn unvoiced_passthrough() {
        let src = F0Stats {
            mean_log_f0: 4.7,
            std_log_f0: 0.1,
        };
        let tgt = F0Stats {
            mean_log_f0: 5.2,
            std_log_f0: 0.25,
        };
        let out = lg_transform_f0(&[0.0, 100.0, 0.0], &src, &tgt).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[2], 0.0);
        assert!(out[1] > 0.0);
    }
}
