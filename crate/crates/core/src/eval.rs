//! Objective evaluation: dynamic time warping and mel-cepstral distortion,
//! aggregated into intra-/inter-gender tables.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Gender;
use crate::error::{Error, Result};

/// dB scaling constant of the distortion: (10 / ln 10) * sqrt(2).
pub fn mcd_constant() -> f64 {
    10.0 / std::f64::consts::LN_10 * 2.0f64.sqrt()
}

/// Squared Euclidean distance between frames over the included coefficients.
fn frame_dist_sq(a: &Array2<f64>, ta: usize, b: &Array2<f64>, tb: usize, skip0: bool) -> f64 {
    let start = usize::from(skip0);
    let mut acc = 0.0;
    for d in start..a.shape()[0] {
        let diff = a[[d, ta]] - b[[d, tb]];
        acc += diff * diff;
    }
    acc
}

/// Monotonic, boundary-complete alignment minimizing cumulative Euclidean
/// frame distance, step set {(1,0), (0,1), (1,1)}.
pub fn dtw_align(a: &Array2<f64>, b: &Array2<f64>, skip0: bool) -> Vec<(usize, usize)> {
    let ta = a.shape()[1];
    let tb = b.shape()[1];
    assert!(ta >= 1 && tb >= 1, "dtw on empty input");
    let mut cost = Array2::<f64>::from_elem((ta, tb), f64::INFINITY);
    // 0 = start, 1 = from (i-1, j), 2 = from (i, j-1), 3 = diagonal
    let mut from = Array2::<u8>::zeros((ta, tb));
    for i in 0..ta {
        for j in 0..tb {
            let d = frame_dist_sq(a, i, b, j, skip0).sqrt();
            if i == 0 && j == 0 {
                cost[[0, 0]] = d;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut arg = 0u8;
            if i > 0 && cost[[i - 1, j]] < best {
                best = cost[[i - 1, j]];
                arg = 1;
            }
            if j > 0 && cost[[i, j - 1]] < best {
                best = cost[[i, j - 1]];
                arg = 2;
            }
            if i > 0 && j > 0 && cost[[i - 1, j - 1]] <= best {
                best = cost[[i - 1, j - 1]];
                arg = 3;
            }
            cost[[i, j]] = best + d;
            from[[i, j]] = arg;
        }
    }
    let mut path = Vec::new();
    let (mut i, mut j) = (ta - 1, tb - 1);
    loop {
        path.push((i, j));
        match from[[i, j]] {
            0 => break,
            1 => i -= 1,
            2 => j -= 1,
            3 => {
                i -= 1;
                j -= 1;
            }
            _ => unreachable!(),
        }
    }
    path.reverse();
    path
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McdOptions {
    pub use_dtw: bool,
    /// Exclude the 0th (energy-like) coefficient.
    pub exclude_c0: bool,
}

impl Default for McdOptions {
    fn default() -> Self {
        McdOptions {
            use_dtw: true,
            exclude_c0: true,
        }
    }
}

/// Mel-cepstral distortion in dB: mean over aligned frames of
/// `(10/ln 10) * sqrt(2 * sum_d (mc_c - mc_t)^2)`. Smaller is better.
pub fn mcd(converted: &Array2<f64>, target: &Array2<f64>, opts: McdOptions) -> Result<f64> {
    if converted.shape()[1] == 0 || target.shape()[1] == 0 {
        return Err(Error::Validation("mcd on empty feature matrix".into()));
    }
    if converted.shape()[0] != target.shape()[0] {
        return Err(Error::ShapeMismatch {
            context: "mcd".into(),
            expected: format!("{} coefficients", converted.shape()[0]),
            actual: format!("{}", target.shape()[0]),
        });
    }
    if converted.shape()[0] <= usize::from(opts.exclude_c0) {
        return Err(Error::Validation(
            "every coefficient excluded from the distortion".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = if opts.use_dtw {
        dtw_align(converted, target, opts.exclude_c0)
    } else {
        if converted.shape()[1] != target.shape()[1] {
            return Err(Error::ShapeMismatch {
                context: "mcd without dtw".into(),
                expected: format!("{} frames", converted.shape()[1]),
                actual: format!("{}", target.shape()[1]),
            });
        }
        (0..converted.shape()[1]).map(|t| (t, t)).collect()
    };
    let scale = 10.0 / std::f64::consts::LN_10;
    let mut acc = 0.0;
    for &(i, j) in &pairs {
        let d2 = frame_dist_sq(converted, i, target, j, opts.exclude_c0);
        acc += scale * (2.0 * d2).sqrt();
    }
    Ok(acc / pairs.len() as f64)
}

/// Gender pairing of a conversion direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenderPairing {
    #[serde(rename = "M-M")]
    MM,
    #[serde(rename = "F-F")]
    FF,
    #[serde(rename = "M-F")]
    MF,
    #[serde(rename = "F-M")]
    FM,
}

impl GenderPairing {
    pub fn of(source: Gender, target: Gender) -> Self {
        match (source, target) {
            (Gender::M, Gender::M) => GenderPairing::MM,
            (Gender::F, Gender::F) => GenderPairing::FF,
            (Gender::M, Gender::F) => GenderPairing::MF,
            (Gender::F, Gender::M) => GenderPairing::FM,
        }
    }

    pub fn is_intra(&self) -> bool {
        matches!(self, GenderPairing::MM | GenderPairing::FF)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GenderPairing::MM => "M-M",
            GenderPairing::FF => "F-F",
            GenderPairing::MF => "M-F",
            GenderPairing::FM => "F-M",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McdCell {
    pub source_speaker: String,
    pub target_speaker: String,
    pub emotion: String,
    pub gender_pairing: GenderPairing,
    pub mcd_db: f64,
    /// MCD between the raw source and target features, for reference.
    pub baseline_mcd_db: f64,
    pub n_utterances: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct McdTable {
    pub cells: Vec<McdCell>,
    pub warnings: Vec<String>,
}

/// One conversion result ready for scoring: converted features plus the
/// parallel target-speaker features of the same sentence, and the raw
/// source features for the baseline column.
pub struct ScoredUtterance {
    pub source_speaker: String,
    pub target_speaker: String,
    pub emotion: String,
    pub converted: Array2<f64>,
    pub target: Array2<f64>,
    pub source: Array2<f64>,
}

/// Aggregate per-utterance distortions into per-cell means.
pub fn evaluate_system(
    utterances: &[ScoredUtterance],
    genders: &std::collections::BTreeMap<String, Gender>,
    opts: McdOptions,
) -> Result<McdTable> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<(String, String, String), (f64, f64, usize)> = BTreeMap::new();
    for u in utterances {
        let d = mcd(&u.converted, &u.target, opts)?;
        let baseline = mcd(&u.source, &u.target, opts)?;
        let entry = acc
            .entry((
                u.source_speaker.clone(),
                u.target_speaker.clone(),
                u.emotion.clone(),
            ))
            .or_insert((0.0, 0.0, 0));
        entry.0 += d;
        entry.1 += baseline;
        entry.2 += 1;
    }
    let mut table = McdTable::default();
    for ((src, tgt, emo), (sum, base_sum, n)) in acc {
        let (Some(&gs), Some(&gt)) = (genders.get(&src), genders.get(&tgt)) else {
            table
                .warnings
                .push(format!("missing gender for {src} or {tgt}; cell skipped"));
            continue;
        };
        table.cells.push(McdCell {
            source_speaker: src,
            target_speaker: tgt,
            emotion: emo,
            gender_pairing: GenderPairing::of(gs, gt),
            mcd_db: sum / n as f64,
            baseline_mcd_db: base_sum / n as f64,
            n_utterances: n,
        });
    }
    Ok(table)
}

/// Machine-readable rendering (tab-separated, stable column order).
pub fn table_to_tsv(table: &McdTable) -> String {
    let mut out = String::from(
        "source_speaker\ttarget_speaker\temotion\tgender_pairing\tmcd_db\tbaseline_mcd_db\tn_utterances\n",
    );
    for c in &table.cells {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
            c.source_speaker,
            c.target_speaker,
            c.emotion,
            c.gender_pairing.as_str(),
            c.mcd_db,
            c.baseline_mcd_db,
            c.n_utterances
        ));
    }
    for w in &table.warnings {
        out.push_str(&format!("# warning: {w}\n"));
    }
    out
}

/// Human-readable rendering grouped into intra- and inter-gender sections.
pub fn table_to_text(table: &McdTable) -> String {
    let mut out = String::new();
    for (title, intra) in [("Intra-gender", true), ("Inter-gender", false)] {
        let rows: Vec<&McdCell> = table
            .cells
            .iter()
            .filter(|c| c.gender_pairing.is_intra() == intra)
            .collect();
        if rows.is_empty() {
            continue;
        }
        out.push_str(&format!("{title} MCD [dB]\n"));
        out.push_str(&format!(
            "{:<10} {:<6} {:<10} {:<10} {:>9} {:>14} {:>6}\n",
            "emotion", "pair", "source", "target", "mcd", "baseline", "n"
        ));
        for c in rows {
            out.push_str(&format!(
                "{:<10} {:<6} {:<10} {:<10} {:>9.3} {:>14.3} {:>6}\n",
                c.emotion,
                c.gender_pairing.as_str(),
                c.source_speaker,
                c.target_speaker,
                c.mcd_db,
                c.baseline_mcd_db,
                c.n_utterances
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randm(rng: &mut ChaCha8Rng, d: usize, t: usize) -> Array2<f64> {
        Array2::from_shape_fn((d, t), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dtw_self_alignment_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randm(&mut rng, 36, 9);
        let path = dtw_align(&a, &a, true);
        assert_eq!(path.len(), 9);
        for (k, &(i, j)) in path.iter().enumerate() {
            assert_eq!((i, j), (k, k));
        }
    }

    #[test]
    fn duplicated_frame_adds_one_horizontal_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randm(&mut rng, 4, 5);
        // b = a with frame 2 duplicated
        let mut b = Array2::<f64>::zeros((4, 6));
        for t in 0..6 {
            let src = if t <= 2 { t } else { t - 1 };
            for d in 0..4 {
                b[[d, t]] = a[[d, src]];
            }
        }
        let path = dtw_align(&a, &b, false);
        assert_eq!(path.len(), 6);
        let horizontal = path
            .windows(2)
            .filter(|w| w[1].0 == w[0].0 && w[1].1 == w[0].1 + 1)
            .count();
        assert_eq!(horizontal, 1, "path {path:?}");
    }

    /// Exhaustive warping-path oracle for tiny sequences.
    fn exhaustive_best_cost(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        fn dist(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
            let mut acc = 0.0;
            for d in 0..a.shape()[0] {
                let diff = a[[d, i]] - b[[d, j]];
                acc += diff * diff;
            }
            acc.sqrt()
        }
        fn rec(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
            let d = dist(a, i, b, j);
            if i == 0 && j == 0 {
                return d;
            }
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(rec(a, b, i - 1, j));
            }
            if j > 0 {
                best = best.min(rec(a, b, i, j - 1));
            }
            if i > 0 && j > 0 {
                best = best.min(rec(a, b, i - 1, j - 1));
            }
            best + d
        }
        rec(a, b, a.shape()[1] - 1, b.shape()[1] - 1)
    }

    #[test]
    fn dtw_cost_matches_exhaustive_oracle_up_to_len6() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for ta in 1..=6 {
            for tb in 1..=6 {
                let a = randm(&mut rng, 3, ta);
                let b = randm(&mut rng, 3, tb);
                let path = dtw_align(&a, &b, false);
                let mut cost = 0.0;
                for &(i, j) in &path {
                    let mut acc = 0.0;
                    for d in 0..3 {
                        let diff = a[[d, i]] - b[[d, j]];
                        acc += diff * diff;
                    }
                    cost += acc.sqrt();
                }
                let oracle = exhaustive_best_cost(&a, &b);
                assert!(
                    (cost - oracle).abs() < 1e-9,
                    "({ta},{tb}): {cost} vs {oracle}"
                );
                // boundary and monotonicity
                assert_eq!(path[0], (0, 0));
                assert_eq!(*path.last().unwrap(), (ta - 1, tb - 1));
                for w in path.windows(2) {
                    let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                    assert!(di <= 1 && dj <= 1 && di + dj >= 1);
                }
            }
        }
    }

    #[test]
    fn mcd_identity_and_unit_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randm(&mut rng, 36, 20);
        assert_eq!(mcd(&a, &a, McdOptions::default()).unwrap(), 0.0);

        // single frame, one included coefficient differing by 1.0
        let x = Array2::<f64>::zeros((36, 1));
        let mut y = Array2::<f64>::zeros((36, 1));
        y[[5, 0]] = 1.0;
        let d = mcd(&x, &y, McdOptions::default()).unwrap();
        let expect = 10.0 / std::f64::consts::LN_10 * 2.0f64.sqrt();
        assert!((d - expect).abs() < 1e-9, "{d} vs {expect}");
        assert!((d - 6.141851).abs() < 1e-5);
    }

    #[test]
    fn mcd_matches_per_frame_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.random_range(1..12);
            let a = randm(&mut rng, 36, t);
            let b = randm(&mut rng, 36, t);
            let opts = McdOptions {
                use_dtw: false,
                exclude_c0: true,
            };
            let got = mcd(&a, &b, opts).unwrap();
            let mut acc = 0.0;
            for tt in 0..t {
                let mut d2 = 0.0;
                for d in 1..36 {
                    let diff = a[[d, tt]] - b[[d, tt]];
                    d2 += diff * diff;
                }
                acc += 10.0 / std::f64::consts::LN_10 * (2.0 * d2).sqrt();
            }
            let oracle = acc / t as f64;
            assert!((got - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn mcd_invariant_to_common_c0_shift_and_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randm(&mut rng, 36, 8);
        let b = randm(&mut rng, 36, 8);
        let opts = McdOptions {
            use_dtw: false,
            exclude_c0: true,
        };
        let base = mcd(&a, &b, opts).unwrap();

        let mut a2 = a.clone();
        let mut b2 = b.clone();
        for t in 0..8 {
            a2[[0, t]] += 5.0;
            b2[[0, t]] -= 3.0;
        }
        assert!((mcd(&a2, &b2, opts).unwrap() - base).abs() < 1e-12);

        let k = 2.5;
        let mut ak = a.clone();
        let mut bk = b.clone();
        for t in 0..8 {
            for d in 1..36 {
                ak[[d, t]] *= k;
                bk[[d, t]] *= k;
            }
        }
        assert!((mcd(&ak, &bk, opts).unwrap() - k * base).abs() < 1e-9);
    }

    #[test]
    fn mcd_symmetric_on_equal_length_without_dtw() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randm(&mut rng, 36, 10);
        let b = randm(&mut rng, 36, 10);
        let opts = McdOptions {
            use_dtw: false,
            exclude_c0: true,
        };
        assert_eq!(mcd(&a, &b, opts).unwrap(), mcd(&b, &a, opts).unwrap());
    }

    #[test]
    fn evaluate_system_zero_on_identical_and_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut genders = std::collections::BTreeMap::new();
        genders.insert("a".to_string(), Gender::M);
        genders.insert("b".to_string(), Gender::F);
        let mut utts = Vec::new();
        for k in 0..4 {
            let target = randm(&mut rng, 36, 10);
            utts.push(ScoredUtterance {
                source_speaker: "a".into(),
                target_speaker: "b".into(),
                emotion: if k % 2 == 0 { "neutral" } else { "happy" }.into(),
                converted: target.clone(),
                target,
                source: randm(&mut rng, 36, 10),
            });
        }
        let table = evaluate_system(&utts, &genders, McdOptions::default()).unwrap();
        assert_eq!(table.cells.len(), 2);
        for c in &table.cells {
            assert_eq!(c.mcd_db, 0.0);
            assert_eq!(c.gender_pairing, GenderPairing::MF);
            assert_eq!(c.n_utterances, 2);
            // brute-force baseline aggregation
            let manual: f64 = utts
                .iter()
                .filter(|u| u.emotion == c.emotion)
                .map(|u| mcd(&u.source, &u.target, McdOptions::default()).unwrap())
                .sum::<f64>()
                / 2.0;
            assert!((c.baseline_mcd_db - manual).abs() < 1e-9);
        }
        let tsv = table_to_tsv(&table);
        assert!(tsv.lines().count() >= 3);
        let text = table_to_text(&table);
        assert!(text.contains("Inter-gender"));
    }
}
