//! Deterministic multi-speaker, multi-emotion synthetic speech corpus.
//!
//! Each speaker is a formant-template voice (base pitch, vocal-tract scale,
//! spectral tilt, trajectory texture); each emotion applies a speaker-
//! dependent modulation (pitch multiplier, tilt shift, tremor), so emotional
//! style is speaker-dependent by construction. Sentences are spectral
//! trajectories shared across speakers, which makes the corpus parallel.
//!
//! Emotion templates are globally separated (a classifier can learn them)
//! while per-speaker deviations stay inside the template margins.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fnv1a, split_corpus, Gender, Manifest, ManifestEntry, Split, SplitSizes};
use crate::error::Result;

pub const SAMPLE_RATE: u32 = 16000;

pub const EMOTION_NAMES: [&str; 5] = ["neutral", "happy", "sad", "angry", "surprise"];

/// name for emotion index k, falling back to a numbered label
pub fn emotion_name(k: usize) -> String {
    EMOTION_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("emotion{k}"))
}

#[derive(Debug, Clone)]
struct SpeakerVoice {
    base_f0: f64,
    formant_scale: f64,
    tilt: f64,
    /// per-frame formant wobble amplitude (temporal roughness)
    jitter: f64,
    /// formant transition time constant in seconds
    transition: f64,
    vibrato_rate: f64,
    vibrato_depth: f64,
    /// speaking-rate multiplier on segment durations
    rate: f64,
    gender: Gender,
}

fn speaker_voice(seed: u64, idx: usize, n_speakers: usize) -> SpeakerVoice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("speaker/{idx}")));
    let gender = if idx % 2 == 0 { Gender::M } else { Gender::F };
    let base_f0 = match gender {
        Gender::M => 100.0 + 30.0 * rng.random_range(0.0..1.0),
        Gender::F => 180.0 + 50.0 * rng.random_range(0.0..1.0),
    };
    // stratify the strong speaker cues so any two speakers stay apart
    let spread = if n_speakers > 1 {
        idx as f64 / (n_speakers - 1) as f64
    } else {
        0.5
    };
    SpeakerVoice {
        base_f0,
        formant_scale: 0.86 + 0.30 * spread + rng.random_range(-0.01..0.01),
        tilt: rng.random_range(-0.6..0.6),
        jitter: 0.003 + 0.022 * spread + rng.random_range(0.0..0.003),
        transition: if idx % 2 == 0 { 0.045 } else { 0.018 },
        vibrato_rate: 3.0 + 3.5 * spread,
        vibrato_depth: 0.008 + 0.01 * rng.random_range(0.0..1.0),
        rate: 0.92 + 0.16 * rng.random_range(0.0..1.0),
        gender,
    }
}

#[derive(Debug, Clone)]
struct EmotionStyle {
    f0_mult: f64,
    tilt_delta: f64,
    tremor_rate: f64,
    tremor_depth: f64,
    formant_shift: f64,
    rate_mult: f64,
}

/// Speaker-dependent realization of an emotion: a shared template plus a
/// per-(speaker, emotion) deviation that stays inside the template margin.
fn emotion_style(seed: u64, speaker: usize, emotion: usize) -> EmotionStyle {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("emotion/{speaker}/{emotion}")));
    let f0_template = [1.0, 1.30, 0.78, 1.15, 1.45];
    let tilt_template = [0.0, 2.5, -2.5, 1.3, 3.6];
    let tremor_rate_template = [0.0, 6.0, 1.8, 8.5, 4.5];
    let tremor_depth_template = [0.0, 0.045, 0.025, 0.06, 0.05];
    let shift_template = [0.0, 0.045, -0.045, 0.02, 0.06];
    let rate_template = [1.0, 0.95, 1.10, 0.97, 0.93];
    let k = emotion.min(4);
    EmotionStyle {
        f0_mult: f0_template[k] * (1.0 + rng.random_range(-0.05..0.05)),
        tilt_delta: tilt_template[k] + rng.random_range(-0.8..0.8),
        tremor_rate: tremor_rate_template[k] * (1.0 + rng.random_range(-0.25..0.25)),
        tremor_depth: tremor_depth_template[k] * (1.0 + rng.random_range(-0.4..0.4)),
        formant_shift: shift_template[k] + rng.random_range(-0.012..0.012),
        rate_mult: rate_template[k] * (1.0 + rng.random_range(-0.03..0.03)),
    }
}

#[derive(Debug, Clone)]
struct Segment {
    f1: f64,
    f2: f64,
    duration: f64,
    voiced: bool,
    /// relative intonation offset on log-F0
    intonation: f64,
}

/// Shared sentence content: a trajectory of formant targets.
fn sentence_segments(seed: u64, sentence: usize) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&format!("sentence/{sentence}")));
    let n = rng.random_range(3..=4);
    (0..n)
        .map(|_| {
            let f1 = 350.0 + 450.0 * rng.random_range(0.0..1.0);
            Segment {
                f1,
                f2: f1 * rng.random_range(2.0..3.0),
                duration: rng.random_range(0.18..0.28),
                voiced: true,
                intonation: rng.random_range(-0.08..0.08),
            }
        })
        .collect()
}

/// Render one utterance. Deterministic in all arguments.
pub fn render_utterance(
    seed: u64,
    speaker: usize,
    n_speakers: usize,
    emotion: usize,
    sentence: usize,
) -> Vec<f64> {
    let voice = speaker_voice(seed, speaker, n_speakers);
    let style = emotion_style(seed, speaker, emotion);
    let segments = sentence_segments(seed, sentence);
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ fnv1a(&format!("utt/{speaker}/{emotion}/{sentence}")),
    );
    let utt_f0_wobble = 1.0 + rng.random_range(-0.02..0.02);

    let sr = SAMPLE_RATE as f64;
    let durations: Vec<f64> = segments
        .iter()
        .map(|s| s.duration * voice.rate * style.rate_mult * (1.0 + rng.random_range(-0.04..0.04)))
        .collect();
    let total_secs: f64 = durations.iter().sum::<f64>() + 0.08;
    let n = (total_secs * sr) as usize;

    // piecewise-constant targets smoothed with the speaker's transition time
    let mut f1_t = vec![0.0; n];
    let mut f2_t = vec![0.0; n];
    let mut voiced_t = vec![false; n];
    let mut intonation_t = vec![0.0; n];
    let mut amp_t = vec![0.0; n];
    {
        let mut t0 = 0.02; // leading silence
        for (seg, dur) in segments.iter().zip(&durations) {
            let a = (t0 * sr) as usize;
            let b = (((t0 + dur) * sr) as usize).min(n);
            for i in a..b {
                let shift = 1.0 + style.formant_shift;
                f1_t[i] = seg.f1 * voice.formant_scale * shift;
                f2_t[i] = seg.f2 * voice.formant_scale * shift;
                voiced_t[i] = seg.voiced;
                intonation_t[i] = seg.intonation;
                // gentle raised-cosine dip between segments keeps the
                // envelope smooth without silent gaps
                let rel = (i - a) as f64 / (b - a).max(1) as f64;
                amp_t[i] = 0.65 + 0.35 * (0.5 - 0.5 * (2.0 * PI * rel).cos());
            }
            t0 += dur;
        }
        // exponential smoothing of formant tracks (transition speed cue)
        let alpha = 1.0 - (-1.0 / (voice.transition * sr)).exp();
        let mut s1 = f1_t.iter().copied().find(|&v| v > 0.0).unwrap_or(500.0);
        let mut s2 = f2_t.iter().copied().find(|&v| v > 0.0).unwrap_or(1500.0);
        for i in 0..n {
            let target1 = if f1_t[i] > 0.0 { f1_t[i] } else { s1 };
            let target2 = if f2_t[i] > 0.0 { f2_t[i] } else { s2 };
            s1 += alpha * (target1 - s1);
            s2 += alpha * (target2 - s2);
            f1_t[i] = s1;
            f2_t[i] = s2;
        }
    }

    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let tilt = voice.tilt + style.tilt_delta;
    let n_harm = 40;
    for i in 0..n {
        let t = i as f64 / sr;
        if amp_t[i] <= 0.0 {
            continue;
        }
        // per-frame formant wobble, the speaker's roughness signature
        let wobble = 1.0 + voice.jitter * rng.random_range(-1.0..1.0);
        let f1 = f1_t[i] * wobble;
        let f2 = f2_t[i] * wobble;
        if voiced_t[i] {
            let vibrato = 1.0 + voice.vibrato_depth * (2.0 * PI * voice.vibrato_rate * t).sin();
            let tremor = 1.0 + style.tremor_depth * (2.0 * PI * style.tremor_rate * t).sin();
            let f0 = voice.base_f0
                * style.f0_mult
                * utt_f0_wobble
                * vibrato
                * tremor
                * (intonation_t[i]).exp();
            phase += f0 / sr;
            let mut s = 0.0;
            for h in 1..=n_harm {
                let fh = f0 * h as f64;
                if fh > 6500.0 {
                    break;
                }
                let res = (-((fh - f1) / 160.0).powi(2)).exp()
                    + 0.7 * (-((fh - f2) / 220.0).powi(2)).exp()
                    + 0.05;
                let tilt_gain = (fh / 500.0).powf(tilt * 0.1);
                s += res * tilt_gain * (2.0 * PI * h as f64 * phase).sin() / h as f64;
            }
            out[i] = amp_t[i] * s * 0.45;
        } else {
            // consonant-ish noise burst shaped around f2
            let noise: f64 = rng.random_range(-1.0..1.0);
            let tilt_gain = (f2 / 500.0).powf(tilt * 0.1);
            out[i] = amp_t[i] * noise * 0.10 * tilt_gain;
        }
    }
    // keep a safe margin from full scale
    let peak = out.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.9 {
        let s = 0.9 / peak;
        for v in out.iter_mut() {
            *v *= s;
        }
    }
    out
}

/// A generated corpus: waveforms keyed by utterance id plus a split manifest.
pub struct SyntheticCorpus {
    pub manifest: Manifest,
    pub waveforms: Vec<(String, Vec<f64>)>,
}

/// Generate `n_speakers x n_emotions x utterances_per_cell` utterances.
/// Sentences are indexed per cell position, shared across speakers, so the
/// corpus is parallel. Paths in the manifest are `<id>.wav`, relative to
/// wherever the caller writes the audio. Cells need at least 3 utterances
/// for the train/eval/reference split.
pub fn generate_synthetic_corpus(
    n_speakers: usize,
    n_emotions: usize,
    utterances_per_cell: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    assert!(n_speakers >= 2, "need at least two speakers");
    assert!(n_emotions >= 2, "need at least two emotions");
    let mut entries = Vec::new();
    let mut waveforms = Vec::new();
    for spk in 0..n_speakers {
        let voice = speaker_voice(seed, spk, n_speakers);
        for emo in 0..n_emotions {
            for utt in 0..utterances_per_cell {
                let id = format!("spk{spk:02}_{}_s{utt:03}", emotion_name(emo));
                let wave = render_utterance(seed, spk, n_speakers, emo, utt);
                entries.push(ManifestEntry {
                    utterance_id: id.clone(),
                    path: format!("{id}.wav").into(),
                    speaker_id: format!("spk{spk:02}"),
                    gender: voice.gender,
                    emotion: emotion_name(emo),
                    split: Split::Train,
                    sentence_id: format!("s{utt:03}"),
                });
                waveforms.push((id, wave));
            }
        }
    }
    let manifest = split_corpus(&entries, SplitSizes::default(), seed, true)?;
    Ok(SyntheticCorpus {
        manifest,
        waveforms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_counts_and_determinism() {
        let c1 = generate_synthetic_corpus(4, 3, 10, 11).unwrap();
        assert_eq!(c1.waveforms.len(), 120);
        assert_eq!(c1.manifest.entries.len(), 120);
        let c2 = generate_synthetic_corpus(4, 3, 10, 11).unwrap();
        for ((id1, w1), (id2, w2)) in c1.waveforms.iter().zip(&c2.waveforms) {
            assert_eq!(id1, id2);
            assert_eq!(w1, w2, "waveform {id1} differs across runs");
        }
        let c3 = generate_synthetic_corpus(4, 3, 10, 12).unwrap();
        assert_ne!(c1.waveforms[0].1, c3.waveforms[0].1);
    }

    #[test]
    fn every_cell_has_all_splits() {
        let c = generate_synthetic_corpus(2, 2, 8, 5).unwrap();
        for spk in ["spk00", "spk01"] {
            for emo in ["neutral", "happy"] {
                assert!(!c.manifest.cell(spk, emo, Split::Train).is_empty());
                assert!(!c.manifest.cell(spk, emo, Split::Eval).is_empty());
                assert!(!c.manifest.cell(spk, emo, Split::Reference).is_empty());
            }
        }
    }

    #[test]
    fn utterances_are_audible_and_bounded() {
        let c = generate_synthetic_corpus(2, 2, 4, 3).unwrap();
        for (id, w) in &c.waveforms {
            let peak = w.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            assert!(peak <= 0.95, "{id} clips");
            assert!(peak > 0.05, "{id} is silent");
            assert!(w.len() > 8000, "{id} too short");
        }
    }
}
