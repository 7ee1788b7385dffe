//! Pipeline orchestration: feature/mel/style caches, per-cell registries,
//! and the dataset builders that connect manifests to training, conversion,
//! and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::config::RunConfig;
use crate::convert::ConversionContext;
use crate::data::{Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::features::{
    compute_f0_stats, compute_mel_spectrogram, AcousticFeatures, BuiltinVocoder, ExternalVocoder,
    F0Stats, MelSpectrogram, VocoderBackend,
};
use crate::io::{wav, ArrayFile};
use crate::ser::{extract_style, EmotionStyleFeature, SerModel, STYLE_DIM};
use crate::stargan::{ModelBundle, NormStats, TrainData, TrainItem};

pub fn features_dir(cache: &Path) -> PathBuf {
    cache.join("features")
}

pub fn mels_dir(cache: &Path) -> PathBuf {
    cache.join("mels")
}

pub fn styles_dir(cache: &Path) -> PathBuf {
    cache.join("styles")
}

pub fn features_path(cache: &Path, utt: &str) -> PathBuf {
    features_dir(cache).join(format!("{utt}.svca"))
}

pub fn mel_path(cache: &Path, utt: &str) -> PathBuf {
    mels_dir(cache).join(format!("{utt}.svca"))
}

pub fn style_path(cache: &Path, utt: &str) -> PathBuf {
    styles_dir(cache).join(format!("{utt}.svca"))
}

/// Vocoder backend selected by the configuration.
pub fn make_backend(cfg: &RunConfig, work_dir: &Path) -> Result<Box<dyn VocoderBackend>> {
    match cfg.features.backend.as_str() {
        "builtin" => Ok(Box::new(BuiltinVocoder {
            mcep_order: cfg.features.mcep_dim,
            ..Default::default()
        })),
        "external" => Ok(Box::new(ExternalVocoder {
            analyze_cmd: cfg.features.external_analyze_cmd.clone(),
            synthesize_cmd: cfg.features.external_synthesize_cmd.clone(),
            work_dir: work_dir.to_path_buf(),
        })),
        other => Err(Error::Config(format!("unknown backend {other:?}"))),
    }
}

/// Hash of the feature-extraction settings; cache entries carry it so a
/// config change invalidates them.
pub fn feature_config_hash(cfg: &RunConfig) -> String {
    config_hash(&serde_json::to_value(&cfg.features).unwrap())
}

fn with_hash(mut file: ArrayFile, hash: &str) -> ArrayFile {
    file.push_bytes("config_hash", hash.as_bytes().to_vec());
    file
}

fn hash_matches(path: &Path, hash: &str) -> bool {
    ArrayFile::load(path)
        .ok()
        .and_then(|f| f.get_bytes("config_hash").map(|b| b == hash.as_bytes()))
        .unwrap_or(false)
}

fn save_mel(mel: &MelSpectrogram, hash: &str, path: &Path) -> Result<()> {
    let mut file = ArrayFile::new();
    file.push_array_f32("planes", &mel.planes.clone().into_dyn());
    with_hash(file, hash).save(path)
}

pub fn load_mel(path: &Path) -> Result<MelSpectrogram> {
    let file = ArrayFile::load(path)?;
    let planes = file
        .get_array_f32("planes")
        .ok_or_else(|| Error::format(path, "missing planes chunk".to_string()))?;
    if planes.ndim() != 3 || planes.shape()[0] != 3 {
        return Err(Error::format(path, "mel planes have unexpected shape".to_string()));
    }
    Ok(MelSpectrogram {
        planes: planes.into_dimensionality::<ndarray::Ix3>().unwrap(),
    })
}

fn save_style(style: &EmotionStyleFeature, path: &Path) -> Result<()> {
    let mut file = ArrayFile::new();
    file.push_f32(
        "style",
        &[STYLE_DIM],
        style.values.iter().map(|&v| v as f32).collect(),
    );
    file.save(path)
}

pub fn load_style(path: &Path) -> Result<EmotionStyleFeature> {
    let file = ArrayFile::load(path)?;
    let arr = file
        .get_array_f32("style")
        .ok_or_else(|| Error::format(path, "missing style chunk".to_string()))?;
    EmotionStyleFeature::new(arr.iter().copied().collect())
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub processed: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

/// Distribute items over `workers` threads, preserving input order in the
/// output.
pub fn run_parallel<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let n = items.len();
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        for (slot_chunk, item_chunk) in results.chunks_mut(chunk).zip(items.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, item) in slot_chunk.iter_mut().zip(item_chunk) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

/// Analyze every manifest entry into the feature and mel caches. Idempotent:
/// entries whose cache files carry the current feature-config hash are
/// skipped. Per-file failures are collected, not fatal.
pub fn extract(cfg: &RunConfig, manifest: &Manifest, workers: usize) -> Result<ExtractSummary> {
    let cache = cfg.effective_cache_dir();
    std::fs::create_dir_all(features_dir(&cache)).map_err(|e| Error::io(&cache, e))?;
    std::fs::create_dir_all(mels_dir(&cache)).map_err(|e| Error::io(&cache, e))?;
    let hash = feature_config_hash(cfg);
    let backend = make_backend(cfg, &cache)?;

    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let results = run_parallel(entries, workers, |entry| -> (String, Option<String>, bool) {
        let utt = entry.utterance_id.clone();
        let fpath = features_path(&cache, &utt);
        let mpath = mel_path(&cache, &utt);
        if hash_matches(&fpath, &hash) && hash_matches(&mpath, &hash) {
            return (utt, None, true);
        }
        let audio_path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            cfg.data.audio_dir.join(&entry.path)
        };
        let run = || -> Result<()> {
            let wav = wav::read_wav(&audio_path)?;
            if wav.sample_rate != cfg.features.sample_rate_hz {
                return Err(Error::Validation(format!(
                    "{}: sample rate {} does not match the configured {}",
                    audio_path.display(),
                    wav.sample_rate,
                    cfg.features.sample_rate_hz
                )));
            }
            let feats = backend.analyze(
                &wav.samples,
                cfg.features.sample_rate_hz,
                cfg.features.frame_shift_ms,
            )?;
            with_hash(feats.to_array_file(), &hash).save(&fpath)?;
            let mel =
                compute_mel_spectrogram(&wav.samples, cfg.features.sample_rate_hz, &cfg.features.mel)?;
            save_mel(&mel, &hash, &mpath)?;
            Ok(())
        };
        match run() {
            Ok(()) => (utt, None, false),
            Err(e) => (utt, Some(e.to_string()), false),
        }
    });

    let mut summary = ExtractSummary::default();
    for (utt, err, skipped) in results {
        match (err, skipped) {
            (Some(e), _) => summary.failures.push((utt, e)),
            (None, true) => summary.skipped += 1,
            (None, false) => summary.processed += 1,
        }
    }
    Ok(summary)
}

pub fn load_features(cache: &Path, utt: &str) -> Result<AcousticFeatures> {
    AcousticFeatures::load(&features_path(cache, utt))
}

/// Extract style vectors for every manifest entry into the style cache.
pub fn build_styles(
    cfg: &RunConfig,
    manifest: &Manifest,
    model: &SerModel,
    workers: usize,
) -> Result<Vec<(String, String)>> {
    let cache = cfg.effective_cache_dir();
    std::fs::create_dir_all(styles_dir(&cache)).map_err(|e| Error::io(&cache, e))?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let results = run_parallel(entries, workers, |entry| -> (String, Option<String>) {
        let utt = entry.utterance_id.clone();
        let run = |utt: &str| -> Result<()> {
            let mel = load_mel(&mel_path(&cache, utt))?;
            let style = extract_style(model, &mel)?;
            save_style(&style, &style_path(&cache, utt))
        };
        let err = run(&utt).err().map(|e| e.to_string());
        (utt, err)
    });
    Ok(results
        .into_iter()
        .filter_map(|(utt, err)| err.map(|e| (utt, e)))
        .collect())
}

/// Mean reference style per (speaker, emotion) cell, from the reference split.
pub fn reference_registry(
    cache: &Path,
    manifest: &Manifest,
) -> Result<BTreeMap<(String, String), EmotionStyleFeature>> {
    let mut grouped: BTreeMap<(String, String), Vec<EmotionStyleFeature>> = BTreeMap::new();
    for entry in manifest.by_split(Split::Reference) {
        let style = load_style(&style_path(cache, &entry.utterance_id))?;
        grouped
            .entry((entry.speaker_id.clone(), entry.emotion.clone()))
            .or_default()
            .push(style);
    }
    let mut out = BTreeMap::new();
    for (cell, styles) in grouped {
        out.insert(cell, crate::ser::mean_style(&styles)?);
    }
    Ok(out)
}

/// Per-cell F0 statistics from the training split. With scope "speaker",
/// every emotion of a speaker shares the pooled statistics.
pub fn f0_registry(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<BTreeMap<(String, String), F0Stats>> {
    let cache = cfg.effective_cache_dir();
    let per_speaker = cfg.features.f0_stats_scope == "speaker";
    let mut contours: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for entry in manifest.by_split(Split::Train) {
        let feats = load_features(&cache, &entry.utterance_id)?;
        let key = if per_speaker {
            (entry.speaker_id.clone(), String::new())
        } else {
            (entry.speaker_id.clone(), entry.emotion.clone())
        };
        contours.entry(key).or_default().push(feats.f0.to_vec());
    }
    let mut out = BTreeMap::new();
    if per_speaker {
        let emotions = manifest.emotions();
        for ((spk, _), c) in contours {
            let slices: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
            let stats = compute_f0_stats(slices.iter().copied())?;
            for emo in &emotions {
                out.insert((spk.clone(), emo.clone()), stats);
            }
        }
    } else {
        for ((spk, emo), c) in contours {
            let slices: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
            out.insert((spk, emo), compute_f0_stats(slices.iter().copied())?);
        }
    }
    Ok(out)
}

/// Assemble normalized training data from the caches.
pub fn build_train_data(cfg: &RunConfig, manifest: &Manifest) -> Result<TrainData> {
    let cache = cfg.effective_cache_dir();
    let speaker_ids = manifest.speakers();
    let emotions = manifest.emotions();
    let spk_index: BTreeMap<&String, usize> =
        speaker_ids.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let emo_index: BTreeMap<&String, usize> =
        emotions.iter().enumerate().map(|(i, e)| (e, i)).collect();

    let mut raw: Vec<(usize, usize, String, Array2<f64>, Vec<f64>)> = Vec::new();
    for entry in manifest.by_split(Split::Train) {
        let feats = load_features(&cache, &entry.utterance_id)?;
        let style = load_style(&style_path(&cache, &entry.utterance_id))?;
        raw.push((
            spk_index[&entry.speaker_id],
            emo_index[&entry.emotion],
            entry.utterance_id.clone(),
            feats.mceps,
            style.values,
        ));
    }
    if raw.is_empty() {
        return Err(Error::Validation(
            "manifest has no train-split entries with cached features".into(),
        ));
    }
    let feats_refs: Vec<(usize, &Array2<f64>)> = raw.iter().map(|r| (r.0, &r.3)).collect();
    let norm = NormStats::compute(&speaker_ids, &feats_refs)?;
    let items = raw
        .iter()
        .map(|(spk, emo, id, mceps, style)| TrainItem {
            utterance_id: id.clone(),
            speaker: *spk,
            emotion: *emo,
            mceps: norm.normalize(*spk, mceps),
            style: style.clone(),
        })
        .collect();
    Ok(TrainData {
        items,
        speaker_ids,
        n_emotions: emotions.len(),
        norm,
    })
}

/// SER training pairs (mel, emotion index) from the train split.
pub fn build_ser_dataset(
    cfg: &RunConfig,
    manifest: &Manifest,
) -> Result<Vec<(MelSpectrogram, usize)>> {
    let cache = cfg.effective_cache_dir();
    let emotions = manifest.emotions();
    let emo_index: BTreeMap<&String, usize> =
        emotions.iter().enumerate().map(|(i, e)| (e, i)).collect();
    let mut out = Vec::new();
    for entry in manifest.by_split(Split::Train) {
        let mel = load_mel(&mel_path(&cache, &entry.utterance_id))?;
        out.push((mel, emo_index[&entry.emotion]));
    }
    Ok(out)
}

/// All style vectors grouped per cell and split, for the distance analysis.
pub fn style_sets(
    cache: &Path,
    manifest: &Manifest,
    split: Split,
) -> Result<crate::style::StyleSets> {
    let mut out = crate::style::StyleSets::new();
    for entry in manifest.entries.iter().filter(|e| e.split == split) {
        let style = load_style(&style_path(cache, &entry.utterance_id))?;
        out.entry((entry.speaker_id.clone(), entry.emotion.clone()))
            .or_default()
            .push(style);
    }
    Ok(out)
}

/// Conversion context backed by the caches and a trained bundle.
pub fn conversion_context<'a>(
    cfg: &RunConfig,
    manifest: &Manifest,
    bundle: &'a ModelBundle,
    norm: &'a NormStats,
) -> Result<ConversionContext<'a>> {
    let cache = cfg.effective_cache_dir();
    let speaker_index = norm
        .speaker_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(ConversionContext {
        bundle,
        norm,
        speaker_index,
        reference_styles: reference_registry(&cache, manifest)?,
        f0_stats: f0_registry(cfg, manifest)?,
        window_frames: cfg.convert.window_frames,
        window_hop: cfg.convert.window_hop,
    })
}

/// Write a mel tensor-independent training log line by line (JSON records).
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}
