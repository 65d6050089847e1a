//! Corpus directories: `index.json`, one little-endian `f32` features file
//! per utterance (row-major `T × D`), and `transcripts.txt` with one line of
//! space-separated labels per utterance, in index order.

use std::fs;
use std::path::Path;

use isib_core::experiment::World;
use isib_core::synthlang::{Lang, Language, Utterance};
use isib_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CORPUS_FORMAT: &str = "isib-corpus";
pub const CORPUS_VERSION: u32 = 1;

pub const TRAIN_L1: &str = "train-l1";
pub const TRAIN_L2: &str = "train-l2";
pub const TEST_L1: &str = "test-l1";
pub const TEST_L2: &str = "test-l2";
pub const TEST_ACCENTED: &str = "test-accented";
pub const TEST_ACCENTED_STRONG: &str = "test-accented-strong";
pub const ADAPT_ACCENTED: &str = "adapt-accented";
pub const LANGUAGES_FILE: &str = "languages.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusIndex {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub lang: Lang,
    pub dim: usize,
    pub utterances: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub file: String,
    pub frames: usize,
    pub accent: f32,
    pub speaker: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Languages {
    pub l1: Language,
    pub l2: Language,
}

pub fn write_corpus(dir: &Path, name: &str, utts: &[Utterance]) -> Result<()> {
    let first = utts.first().ok_or_else(|| CliError::Usage(format!("corpus {name} is empty")))?;
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let mut entries = Vec::with_capacity(utts.len());
    let mut transcripts = String::new();
    for (i, u) in utts.iter().enumerate() {
        let file = format!("{i:06}.f32");
        let path = dir.join(&file);
        fs::write(&path, u.features.to_le_bytes()).map_err(CliError::io(&path))?;
        entries.push(IndexEntry { file, frames: u.features.rows(), accent: u.accent, speaker: u.speaker });
        let labels: Vec<String> = u.transcript.iter().map(u32::to_string).collect();
        transcripts.push_str(&labels.join(" "));
        transcripts.push('\n');
    }
    let index = CorpusIndex {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        name: name.into(),
        lang: first.lang,
        dim: first.features.cols(),
        utterances: entries,
    };
    write_json(&dir.join("index.json"), &index)?;
    let tpath = dir.join("transcripts.txt");
    fs::write(&tpath, transcripts).map_err(CliError::io(&tpath))
}

pub fn read_corpus(dir: &Path) -> Result<Vec<Utterance>> {
    let ipath = dir.join("index.json");
    let index: CorpusIndex = read_json(&ipath)?;
    if index.format != CORPUS_FORMAT || index.version != CORPUS_VERSION {
        return Err(CliError::format(&ipath, format!("unsupported corpus format {} v{}", index.format, index.version)));
    }
    let tpath = dir.join("transcripts.txt");
    let text = fs::read_to_string(&tpath).map_err(CliError::io(&tpath))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != index.utterances.len() {
        return Err(CliError::format(
            &tpath,
            format!("{} transcript lines for {} utterances", lines.len(), index.utterances.len()),
        ));
    }
    index
        .utterances
        .iter()
        .zip(lines)
        .map(|(e, line)| {
            let fpath = dir.join(&e.file);
            let bytes = fs::read(&fpath).map_err(CliError::io(&fpath))?;
            let features = Tensor::from_le_bytes(&[e.frames, index.dim], &bytes).map_err(|err| CliError::format(&fpath, err))?;
            let transcript = line
                .split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|err| CliError::format(&tpath, format!("label {t:?}: {err}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(Utterance { features, transcript, lang: index.lang, accent: e.accent, speaker: e.speaker })
        })
        .collect()
}

/// Writes every corpus of `world` plus the language definitions.
pub fn write_world(data_dir: &Path, world: &World) -> Result<()> {
    fs::create_dir_all(data_dir).map_err(CliError::io(data_dir))?;
    write_json(&data_dir.join(LANGUAGES_FILE), &Languages { l1: world.l1.clone(), l2: world.l2.clone() })?;
    for (name, corpus) in [
        (TRAIN_L1, &world.train_l1),
        (TRAIN_L2, &world.train_l2),
        (TEST_L1, &world.test_l1),
        (TEST_L2, &world.test_l2),
        (TEST_ACCENTED, &world.test_accented),
        (TEST_ACCENTED_STRONG, &world.test_accented_strong),
        (ADAPT_ACCENTED, &world.adapt_pool),
    ] {
        write_corpus(&data_dir.join(name), name, corpus)?;
    }
    Ok(())
}

pub fn read_languages(data_dir: &Path) -> Result<Languages> {
    read_json(&data_dir.join(LANGUAGES_FILE))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}
