//! Corpus manifests and the train/eval/reference split protocol.

pub mod esd;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MANIFEST_VERSION_LINE: &str = "# stylevc-manifest v1";
pub const MANIFEST_HEADER: &str =
    "utterance_id\tpath\tspeaker_id\tgender\temotion\tsplit\tsentence_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Eval,
    Reference,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Reference => "reference",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub speaker_id: String,
    pub gender: Gender,
    pub emotion: String,
    pub split: Split,
    /// Utterances sharing a sentence_id carry the same content (parallel
    /// corpus pairing for evaluation).
    pub sentence_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Distinct speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            if seen.insert(e.speaker_id.clone()) {
                out.push(e.speaker_id.clone());
            }
        }
        out
    }

    pub fn emotions(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.entries {
            if seen.insert(e.emotion.clone()) {
                out.push(e.emotion.clone());
            }
        }
        out
    }

    pub fn gender_of(&self, speaker: &str) -> Option<Gender> {
        self.entries
            .iter()
            .find(|e| e.speaker_id == speaker)
            .map(|e| e.gender)
    }

    pub fn by_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Entries of one (speaker, emotion) cell and split.
    pub fn cell(
        &self,
        speaker: &str,
        emotion: &str,
        split: Split,
    ) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.speaker_id == speaker && e.emotion == emotion && e.split == split)
            .collect()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }
}

fn parse_gender(s: &str) -> Option<Gender> {
    match s {
        "M" => Some(Gender::M),
        "F" => Some(Gender::F),
        _ => None,
    }
}

fn parse_split(s: &str) -> Option<Split> {
    match s {
        "train" => Some(Split::Train),
        "eval" => Some(Split::Eval),
        "reference" => Some(Split::Reference),
        _ => None,
    }
}

/// Parse manifest text. `emotions`, when given, is the configured emotion
/// set; names outside it are validation errors. All offending lines are
/// reported together.
pub fn parse_manifest(
    text: &str,
    emotions: Option<&[String]>,
) -> std::result::Result<Manifest, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == MANIFEST_VERSION_LINE => {}
        Some((_, line)) => {
            return Err(format!(
                "line 1: expected version line {MANIFEST_VERSION_LINE:?}, got {line:?}"
            ))
        }
        None => return Err("empty file: missing version line".into()),
    }
    match lines.next() {
        Some((_, line)) if line.trim() == MANIFEST_HEADER => {}
        Some((_, line)) => {
            return Err(format!("line 2: expected column header, got {line:?}"));
        }
        None => return Err("missing column header".into()),
    }

    let mut entries = Vec::new();
    let mut problems = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            problems.push(format!("line {lineno}: expected 7 columns, got {}", cols.len()));
            continue;
        }
        let utterance_id = cols[0].to_string();
        if let Some(first) = seen_ids.get(&utterance_id) {
            problems.push(format!(
                "line {lineno}: duplicate utterance_id {utterance_id} (first seen on line {first})"
            ));
            continue;
        }
        seen_ids.insert(utterance_id.clone(), lineno);
        let Some(gender) = parse_gender(cols[3]) else {
            problems.push(format!("line {lineno}: bad gender {:?} (want M or F)", cols[3]));
            continue;
        };
        let emotion = cols[4].to_string();
        if let Some(set) = emotions {
            if !set.iter().any(|e| e == &emotion) {
                problems.push(format!(
                    "line {lineno}: unknown emotion {emotion:?} (configured: {set:?})"
                ));
                continue;
            }
        }
        let Some(split) = parse_split(cols[5]) else {
            problems.push(format!(
                "line {lineno}: bad split tag {:?} (want train/eval/reference)",
                cols[5]
            ));
            continue;
        };
        entries.push(ManifestEntry {
            utterance_id,
            path: PathBuf::from(cols[1]),
            speaker_id: cols[2].to_string(),
            gender,
            emotion,
            split,
            sentence_id: cols[6].to_string(),
        });
    }
    if !problems.is_empty() {
        return Err(problems.join("\n"));
    }
    Ok(Manifest { entries })
}

pub fn load_manifest(path: &Path, emotions: Option<&[String]>) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, emotions).map_err(|reason| Error::format(path, reason))
}

pub fn manifest_to_string(manifest: &Manifest) -> String {
    let mut out = String::new();
    out.push_str(MANIFEST_VERSION_LINE);
    out.push('\n');
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in &manifest.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.utterance_id,
            e.path.display(),
            e.speaker_id,
            e.gender,
            e.emotion,
            e.split,
            e.sentence_id
        ));
    }
    out
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(manifest)).map_err(|e| Error::io(path, e))
}

/// Target split sizes per (speaker, emotion) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSizes {
    pub train: usize,
    pub eval: usize,
    pub reference: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 300,
            eval: 20,
            reference: 30,
        }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.eval + self.reference
    }

    /// Proportional scaling to a smaller cell, keeping eval and reference
    /// non-empty. A 35-utterance cell under (300, 20, 30) becomes (30, 2, 3).
    /// Cells of 8+ utterances keep at least two eval utterances so
    /// within-speaker distance baselines have a pair to average.
    pub fn scaled_to(&self, available: usize) -> Result<SplitSizes> {
        let total = self.total() as f64;
        let min_eval = if available >= 8 { 2 } else { 1 };
        let eval =
            (((self.eval as f64) * available as f64 / total).round() as usize).max(min_eval);
        let reference =
            (((self.reference as f64) * available as f64 / total).round() as usize).max(1);
        if eval + reference >= available {
            return Err(Error::Validation(format!(
                "cell of {available} utterances is too small to scale the split sizes"
            )));
        }
        Ok(SplitSizes {
            train: available - eval - reference,
            eval,
            reference,
        })
    }
}

/// Assign splits per (speaker, emotion) cell, deterministically per seed.
/// Sentence ids never straddle the train/eval boundary within a cell.
pub fn split_corpus(
    entries: &[ManifestEntry],
    sizes: SplitSizes,
    seed: u64,
    scale: bool,
) -> Result<Manifest> {
    let mut cells: BTreeMap<(String, String), Vec<ManifestEntry>> = BTreeMap::new();
    for e in entries {
        cells
            .entry((e.speaker_id.clone(), e.emotion.clone()))
            .or_default()
            .push(e.clone());
    }
    let mut out = Vec::new();
    for ((speaker, emotion), mut cell) in cells {
        cell.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let sizes = if cell.len() >= sizes.total() {
            sizes
        } else if scale {
            sizes.scaled_to(cell.len())?
        } else {
            return Err(Error::Validation(format!(
                "cell ({speaker}, {emotion}) has {} utterances, need {} \
                 (pass the scaling flag to split proportionally)",
                cell.len(),
                sizes.total()
            )));
        };

        // group by sentence so train and eval stay content-disjoint
        let mut groups: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
        for e in cell {
            groups.entry(e.sentence_id.clone()).or_default().push(e);
        }
        let mut group_list: Vec<(String, Vec<ManifestEntry>)> = groups.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ fnv1a(&format!("split/{speaker}/{emotion}")),
        );
        group_list.shuffle(&mut rng);

        let mut train = Vec::new();
        let mut eval = Vec::new();
        let mut rest = Vec::new();
        for (_, group) in group_list {
            if train.len() + group.len() <= sizes.train {
                train.extend(group);
            } else if eval.len() + group.len() <= sizes.eval {
                eval.extend(group);
            } else {
                rest.extend(group);
            }
        }
        // top up eval/reference from the leftover pool (sentence-level
        // disjointness from train is already guaranteed)
        let mut rest_iter = rest.into_iter();
        while eval.len() < sizes.eval {
            match rest_iter.next() {
                Some(e) => eval.push(e),
                None => break,
            }
        }
        let reference: Vec<ManifestEntry> =
            rest_iter.by_ref().take(sizes.reference).collect();
        if train.len() != sizes.train
            || eval.len() != sizes.eval
            || reference.len() != sizes.reference
        {
            return Err(Error::Validation(format!(
                "cell ({speaker}, {emotion}): could not realize split {}/{}/{} \
                 (got {}/{}/{}); sentence grouping may be too coarse",
                sizes.train,
                sizes.eval,
                sizes.reference,
                train.len(),
                eval.len(),
                reference.len()
            )));
        }
        for (mut e, split) in train
            .into_iter()
            .map(|e| (e, Split::Train))
            .chain(eval.into_iter().map(|e| (e, Split::Eval)))
            .chain(reference.into_iter().map(|e| (e, Split::Reference)))
        {
            e.split = split;
            out.push(e);
        }
    }
    out.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    Ok(Manifest { entries: out })
}

pub(crate) fn parse_gender_map_line(line: &str) -> Option<(String, Gender)> {
    let mut cols = line.split('\t');
    let spk = cols.next()?.trim().to_string();
    let gender = parse_gender(cols.next()?.trim())?;
    Some((spk, gender))
}

/// FNV-1a hash for deterministic sub-seeding (stable across platforms).
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
