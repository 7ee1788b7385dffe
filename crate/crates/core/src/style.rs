//! Distance analysis between emotional style features: within- and
//! cross-speaker Euclidean/RMSE reports plus a tabular embedding export for
//! external 2-d projection tools.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ser::{EmotionStyleFeature, STYLE_DIM};

/// l2 norm of the difference vector.
pub fn euclidean_distance(a: &EmotionStyleFeature, b: &EmotionStyleFeature) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-coordinate root-mean-square of the difference: euclidean / sqrt(dim).
pub fn rmse(a: &EmotionStyleFeature, b: &EmotionStyleFeature) -> f64 {
    euclidean_distance(a, b) / (STYLE_DIM as f64).sqrt()
}

/// One anchor-vs-speaker aggregate. The anchor's own record (speaker_b ==
/// speaker_a) averages over distinct unordered pairs; cross records average
/// over the full bipartite pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRecord {
    pub speaker_a: String,
    pub speaker_b: String,
    pub emotion: String,
    pub euclidean_mean: f64,
    pub rmse_mean: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DistanceReport {
    pub records: Vec<DistanceRecord>,
    pub warnings: Vec<String>,
}

/// Style sets keyed by (speaker, emotion).
pub type StyleSets = BTreeMap<(String, String), Vec<EmotionStyleFeature>>;

/// Distances from one anchor (speaker, emotion) cell to every other speaker
/// with the same emotion, plus the within-speaker baseline when the anchor
/// has at least two utterances.
pub fn speaker_pair_distances(
    style_sets: &StyleSets,
    anchor: &str,
    emotion: &str,
) -> Result<DistanceReport> {
    let anchor_cell = style_sets
        .get(&(anchor.to_string(), emotion.to_string()))
        .filter(|v| !v.is_empty())
        .ok_or_else(|| {
            Error::Validation(format!("anchor cell ({anchor}, {emotion}) is empty"))
        })?;

    let mut report = DistanceReport::default();

    if anchor_cell.len() >= 2 {
        let mut acc_e = 0.0;
        let mut acc_r = 0.0;
        let mut n = 0usize;
        for i in 0..anchor_cell.len() {
            for j in i + 1..anchor_cell.len() {
                acc_e += euclidean_distance(&anchor_cell[i], &anchor_cell[j]);
                acc_r += rmse(&anchor_cell[i], &anchor_cell[j]);
                n += 1;
            }
        }
        report.records.push(DistanceRecord {
            speaker_a: anchor.to_string(),
            speaker_b: anchor.to_string(),
            emotion: emotion.to_string(),
            euclidean_mean: acc_e / n as f64,
            rmse_mean: acc_r / n as f64,
            n_pairs: n,
        });
    }

    let mut others: Vec<&String> = style_sets
        .keys()
        .filter(|(s, e)| e == emotion && s != anchor)
        .map(|(s, _)| s)
        .collect();
    others.sort();
    others.dedup();
    if others.is_empty() {
        return Err(Error::Validation(format!(
            "no other speaker has utterances with emotion {emotion}"
        )));
    }
    for other in others {
        let cell = &style_sets[&(other.clone(), emotion.to_string())];
        if cell.is_empty() {
            report
                .warnings
                .push(format!("cell ({other}, {emotion}) is empty; record skipped"));
            continue;
        }
        let mut acc_e = 0.0;
        let mut acc_r = 0.0;
        let mut n = 0usize;
        for a in anchor_cell {
            for b in cell {
                acc_e += euclidean_distance(a, b);
                acc_r += rmse(a, b);
                n += 1;
            }
        }
        report.records.push(DistanceRecord {
            speaker_a: anchor.to_string(),
            speaker_b: other.clone(),
            emotion: emotion.to_string(),
            euclidean_mean: acc_e / n as f64,
            rmse_mean: acc_r / n as f64,
            n_pairs: n,
        });
    }
    Ok(report)
}

/// Render a report as stable key-value records.
pub fn report_to_string(report: &DistanceReport) -> String {
    let mut out = String::from("# stylevc-distance-report v1\n");
    for w in &report.warnings {
        out.push_str(&format!("warning\t{w}\n"));
    }
    for r in &report.records {
        out.push_str(&format!(
            "pair\tspeaker_a={}\tspeaker_b={}\temotion={}\teuclidean_mean={:.9}\trmse_mean={:.9}\tn_pairs={}\n",
            r.speaker_a, r.speaker_b, r.emotion, r.euclidean_mean, r.rmse_mean, r.n_pairs
        ));
    }
    out
}

/// Write one row per utterance: id, speaker, emotion, then the 64 feature
/// columns (float32 precision), tab-separated with a fixed header.
pub fn export_embeddings(
    rows: &[(String, String, String, EmotionStyleFeature)],
    path: &Path,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Validation("no style features to export".into()));
    }
    let mut out = String::new();
    out.push_str("utterance_id\tspeaker_id\temotion");
    for i in 0..STYLE_DIM {
        out.push_str(&format!("\te{i:02}"));
    }
    out.push('\n');
    for (utt, spk, emo, style) in rows {
        out.push_str(&format!("{utt}\t{spk}\t{emo}"));
        for &v in &style.values {
            out.push_str(&format!("\t{:e}", v as f32));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back an embedding export (inverse of [`export_embeddings`]).
pub fn import_embeddings(
    path: &Path,
) -> Result<Vec<(String, String, String, EmotionStyleFeature)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty export".to_string()))?;
    let expected_cols = 3 + STYLE_DIM;
    if header.split('\t').count() != expected_cols {
        return Err(Error::format(path, "unexpected header".to_string()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected_cols {
            return Err(Error::format(
                path,
                format!("line {}: expected {expected_cols} columns", i + 2),
            ));
        }
        let values: Vec<f64> = cols[3..]
            .iter()
            .map(|c| c.parse::<f32>().map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        rows.push((
            cols[0].to_string(),
            cols[1].to_string(),
            cols[2].to_string(),
            EmotionStyleFeature::new(values)?,
        ));
    }
    Ok(rows)
}
