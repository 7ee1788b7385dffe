//! Directory-layout adapter for corpora organized as
//! `<root>/<speaker>/<Emotion>/[<split>/]<speaker>_<sentence>.wav`.
//!
//! Gender is not derivable from the layout, so the caller provides a map
//! (e.g. a two-column `speaker<TAB>M|F` file). The sentence id is the
//! numeric suffix of the file stem, which pairs parallel utterances across
//! speakers.

use std::collections::BTreeMap;
use std::path::Path;

use super::{parse_gender_map_line, Gender, ManifestEntry, Split};
use crate::error::{Error, Result};

/// Load a `speaker<TAB>gender` map.
pub fn load_gender_map(path: &Path) -> Result<BTreeMap<String, Gender>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (spk, gender) = parse_gender_map_line(line)
            .ok_or_else(|| Error::format(path, format!("line {}: bad gender row", i + 1)))?;
        map.insert(spk, gender);
    }
    Ok(map)
}

/// Scan the directory tree into manifest entries (split tags assigned later
/// by the split protocol; nested split directories are accepted and
/// ignored for that purpose).
pub fn scan_corpus_dir(
    root: &Path,
    emotions: &[String],
    genders: &BTreeMap<String, Gender>,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let speakers = sorted_dirs(root)?;
    if speakers.is_empty() {
        return Err(Error::Validation(format!(
            "no speaker directories under {}",
            root.display()
        )));
    }
    for speaker_dir in speakers {
        let speaker = dir_name(&speaker_dir);
        let gender = *genders.get(&speaker).ok_or_else(|| {
            Error::Validation(format!("speaker {speaker} missing from the gender map"))
        })?;
        for emotion_dir in sorted_dirs(&speaker_dir)? {
            let emotion_raw = dir_name(&emotion_dir);
            let emotion = emotion_raw.to_lowercase();
            if !emotions.iter().any(|e| *e == emotion) {
                continue; // unconfigured emotions are skipped, not errors
            }
            let mut wavs = Vec::new();
            collect_wavs(&emotion_dir, &mut wavs)?;
            wavs.sort();
            for wav in wavs {
                let stem = wav
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                let sentence_id = stem
                    .rsplit('_')
                    .next()
                    .unwrap_or(&stem)
                    .to_string();
                entries.push(ManifestEntry {
                    utterance_id: format!("{speaker}_{emotion}_{stem}"),
                    path: wav,
                    speaker_id: speaker.clone(),
                    gender,
                    emotion: emotion.clone(),
                    split: Split::Train,
                    sentence_id,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Validation(format!(
            "no wav files for the configured emotions under {}",
            root.display()
        )));
    }
    Ok(entries)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default()
}

fn sorted_dirs(p: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(p, e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn collect_wavs(p: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(p, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scans_nested_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (spk, emo, split, file) in [
            ("0001", "Neutral", Some("train"), "0001_000001.wav"),
            ("0001", "Neutral", Some("test"), "0001_000002.wav"),
            ("0001", "Happy", None, "0001_000003.wav"),
            ("0002", "Neutral", None, "0002_000001.wav"),
        ] {
            let mut p = root.join(spk).join(emo);
            if let Some(s) = split {
                p = p.join(s);
            }
            std::fs::create_dir_all(&p).unwrap();
            std::fs::write(p.join(file), b"").unwrap();
        }
        let mut genders = BTreeMap::new();
        genders.insert("0001".to_string(), Gender::M);
        genders.insert("0002".to_string(), Gender::F);
        let emotions = vec!["neutral".to_string(), "happy".to_string()];
        let entries = scan_corpus_dir(root, &emotions, &genders).unwrap();
        assert_eq!(entries.len(), 4);
        let parallel: Vec<_> = entries
            .iter()
            .filter(|e| e.sentence_id == "000001")
            .collect();
        assert_eq!(parallel.len(), 2);
        assert_ne!(parallel[0].speaker_id, parallel[1].speaker_id);
    }

    #[test]
    fn missing_gender_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("0001").join("Neutral");
        std::fs::create_dir_all(&p).unwrap();
        std::fs::write(p.join("0001_000001.wav"), b"").unwrap();
        let emotions = vec!["neutral".to_string()];
        let err = scan_corpus_dir(dir.path(), &emotions, &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("gender map"));
    }
}
