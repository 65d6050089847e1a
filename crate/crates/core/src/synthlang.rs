//! Synthetic languages and (accented) speech corpora.
//!
//! A language is a set of Gaussian phones plus a lexicon of short phone
//! strings. An utterance is a random word sequence; every phone occupies a
//! few frames drawn from `N(μ_p, σ² I)` and the transcript is the word ids.
//! Accented L2 speech pulls each L2 phone mean toward its nearest L1 phone.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kmeans::squared_distance;
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which language (and ASR head) an utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Lang {
    L1,
    L2,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::L1 => "l1",
            Lang::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Lang::L1),
            "l2" | "L2" => Ok(Lang::L2),
            other => Err(Error::invalid(alloc::format!("unknown language tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LanguageSpec {
    pub phones: usize,
    pub words: usize,
    pub dim: usize,
    /// Per-dimension emission standard deviation.
    pub sigma: f32,
    /// Standard deviation of the distribution phone means are drawn from.
    pub spread: f32,
    /// Minimum pairwise phone-mean distance, in units of `sigma`.
    pub separation: f32,
    /// Phone means vary only in the first `subspace_dim` coordinates (the
    /// rest are 0), so inventories of different languages crowd the same
    /// low-dimensional region. `0` or `>= dim` means the full space.
    pub subspace_dim: usize,
    pub duration_mean: usize,
    pub duration_jitter: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
}

impl Default for LanguageSpec {
    fn default() -> Self {
        LanguageSpec {
            phones: 12,
            words: 20,
            dim: 8,
            sigma: 0.3,
            spread: 2.0,
            separation: 4.0,
            subspace_dim: 3,
            duration_mean: 3,
            duration_jitter: 1,
            min_word_len: 2,
            max_word_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Language {
    /// `P × D` phone means.
    pub phone_means: Tensor,
    pub sigma: f32,
    pub duration_mean: usize,
    pub duration_jitter: usize,
    /// Each word as a phone string; word `w` has label `w + 1`.
    pub lexicon: Vec<Vec<usize>>,
}

impl Language {
    pub fn phones(&self) -> usize {
        self.phone_means.rows()
    }

    pub fn dim(&self) -> usize {
        self.phone_means.cols()
    }

    /// Label alphabet size (labels are `1..=vocab_size`).
    pub fn vocab_size(&self) -> usize {
        self.lexicon.len()
    }

    pub fn min_phone_distance(&self) -> f32 {
        let mut best = f32::INFINITY;
        for i in 0..self.phones() {
            for j in i + 1..self.phones() {
                let d = squared_distance(self.phone_means.row(i), self.phone_means.row(j));
                best = best.min(d);
            }
        }
        math::sqrt(best as f64) as f32
    }
}

const MEAN_RETRIES: usize = 10_000;
const WORD_RETRIES: usize = 10_000;

/// Draws a language: separated phone means and distinct 2–4 phone words.
pub fn make_language(spec: &LanguageSpec, rng: &mut Rng) -> Result<Language> {
    if spec.phones < 2 || spec.words < 2 {
        return Err(Error::invalid("a language needs at least 2 phones and 2 words"));
    }
    if spec.dim == 0 || !(spec.sigma >= 0.0) || !(spec.spread > 0.0) || spec.duration_mean == 0 {
        return Err(Error::invalid("dim, spread and duration must be positive and sigma non-negative"));
    }
    if spec.min_word_len == 0 || spec.min_word_len > spec.max_word_len {
        return Err(Error::invalid("word length range is empty"));
    }
    let active = if spec.subspace_dim == 0 { spec.dim } else { spec.subspace_dim.min(spec.dim) };
    let min_dist = spec.separation as f64 * spec.sigma as f64;
    let min_d2 = (min_dist * min_dist) as f32;
    let mut means: Vec<f32> = Vec::with_capacity(spec.phones * spec.dim);
    for p in 0..spec.phones {
        let mut placed = false;
        for _ in 0..MEAN_RETRIES {
            let cand: Vec<f32> =
                (0..spec.dim).map(|i| if i < active { (spec.spread as f64 * rng.normal()) as f32 } else { 0.0 }).collect();
            if means.chunks_exact(spec.dim).all(|m| squared_distance(m, &cand) >= min_d2) {
                means.extend(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(alloc::format!(
                "could not place phone {p} at separation {}σ; lower the separation or raise the spread",
                spec.separation
            )));
        }
    }

    let mut lexicon: Vec<Vec<usize>> = Vec::with_capacity(spec.words);
    let mut tries = 0;
    while lexicon.len() < spec.words {
        tries += 1;
        if tries > WORD_RETRIES {
            return Err(Error::Generation("could not draw enough distinct words".into()));
        }
        let len = rng.range_inclusive(spec.min_word_len, spec.max_word_len);
        let word: Vec<usize> = (0..len).map(|_| rng.below(spec.phones)).collect();
        if !lexicon.contains(&word) {
            lexicon.push(word);
        }
    }

    Ok(Language {
        phone_means: Tensor::matrix(spec.phones, spec.dim, means)?,
        sigma: spec.sigma,
        duration_mean: spec.duration_mean,
        duration_jitter: spec.duration_jitter,
        lexicon,
    })
}

/// L2 speech produced with an L1 substrate at accent strength `strength`.
#[derive(Debug, Clone)]
pub struct AccentSpec<'a> {
    pub source: &'a Language,
    pub substrate: &'a Language,
    pub strength: f32,
}

impl AccentSpec<'_> {
    /// Nearest substrate phone for every source phone (lowest index on ties).
    pub fn phone_map(&self) -> Vec<usize> {
        self.source
            .phone_means
            .iter_rows()
            .map(|m| {
                let mut best = (0, f32::INFINITY);
                for (j, q) in self.substrate.phone_means.iter_rows().enumerate() {
                    let d = squared_distance(m, q);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect()
    }
}

/// Source language with each phone mean moved to `(1 − s)·μ_L2 + s·μ_L1(map)`.
pub fn derive_accented(spec: &AccentSpec<'_>) -> Result<Language> {
    let s = spec.strength;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(alloc::format!("accent strength {s} outside [0, 1]")));
    }
    if spec.source.dim() != spec.substrate.dim() {
        return Err(Error::shape("derive_accented", "source and substrate feature dims differ"));
    }
    let map = spec.phone_map();
    let mut out = spec.source.clone();
    for (p, &q) in map.iter().enumerate() {
        let target = spec.substrate.phone_means.row(q);
        for (m, &t) in out.phone_means.row_mut(p).iter_mut().zip(target) {
            *m = if s == 0.0 {
                *m
            } else if s == 1.0 {
                t
            } else {
                (1.0 - s) * *m + s * t
            };
        }
    }
    Ok(out)
}

/// Frame features paired with a word-label transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// `T × D`.
    pub features: Tensor,
    pub transcript: Vec<u32>,
    pub lang: Lang,
    /// 0 for native speech.
    pub accent: f32,
    /// Speaker (group) id used for speaker-disjoint splits.
    pub speaker: u32,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WordsPerUtt {
    pub min: usize,
    pub max: usize,
}

impl Default for WordsPerUtt {
    fn default() -> Self {
        WordsPerUtt { min: 2, max: 5 }
    }
}

/// Generates one utterance from `rng`.
pub fn sample_utterance(lang: &Language, tag: Lang, words: WordsPerUtt, rng: &mut Rng) -> Result<Utterance> {
    if words.min == 0 || words.min > words.max {
        return Err(Error::invalid("words-per-utterance range must be non-empty and start at 1"));
    }
    let d = lang.dim();
    let n_words = rng.range_inclusive(words.min, words.max);
    let mut transcript = Vec::with_capacity(n_words);
    let mut frames: Vec<f32> = Vec::new();
    for _ in 0..n_words {
        let w = rng.below(lang.vocab_size());
        transcript.push(w as u32 + 1);
        for &p in &lang.lexicon[w] {
            let jitter = lang.duration_jitter;
            let dur = (lang.duration_mean + rng.range_inclusive(0, 2 * jitter)).saturating_sub(jitter).max(1);
            let mean = lang.phone_means.row(p);
            for _ in 0..dur {
                frames.extend(mean.iter().map(|&m| m + (lang.sigma as f64 * rng.normal()) as f32));
            }
        }
    }
    let t_len = frames.len() / d;
    Ok(Utterance { features: Tensor::matrix(t_len, d, frames)?, transcript, lang: tag, accent: 0.0, speaker: 0 })
}

/// `n_utts` utterances; utterance `i` uses the stream `Rng::derive(seed, i)`.
pub fn sample_corpus(lang: &Language, tag: Lang, n_utts: usize, words: WordsPerUtt, seed: u64) -> Result<Vec<Utterance>> {
    if n_utts == 0 {
        return Err(Error::invalid("corpus must contain at least one utterance"));
    }
    (0..n_utts).map(|i| sample_utterance(lang, tag, words, &mut Rng::derive(seed, i as u64))).collect()
}

/// Accented speakers around a nominal strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerPool {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub strength: f32,
    /// Each speaker's strength is drawn uniformly from `strength ± jitter`, clamped to `[0, 1]`.
    pub jitter: f32,
    pub words: WordsPerUtt,
}

/// Accented L2 utterances grouped by speaker (speaker id = group index).
pub fn sample_accented_speakers(l2: &Language, l1: &Language, pool: &SpeakerPool, seed: u64) -> Result<Vec<Utterance>> {
    let mut out = Vec::with_capacity(pool.speakers * pool.utts_per_speaker);
    for spk in 0..pool.speakers {
        let mut rng = Rng::derive(seed, spk as u64);
        let s = (pool.strength as f64 + rng.uniform(-1.0, 1.0) * pool.jitter as f64).clamp(0.0, 1.0) as f32;
        let accented = derive_accented(&AccentSpec { source: l2, substrate: l1, strength: s })?;
        let spk_seed = rng.next_u64();
        for i in 0..pool.utts_per_speaker {
            let mut u = sample_utterance(&accented, Lang::L2, pool.words, &mut Rng::derive(spk_seed, i as u64))?;
            u.accent = s;
            u.speaker = spk as u32;
            out.push(u);
        }
    }
    Ok(out)
}
