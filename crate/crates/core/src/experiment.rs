//! Experiment drivers: the native-only scenario (trained L2 head decodes
//! accented speech directly) and the accent-adapted scenario (the trained
//! encoder + codebook tokenize a small accented corpus on which a separate
//! token-level ASR is trained).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::ctc::{ctc_loss, ctc_nll, greedy_decode};
use crate::error::{Error, Result};
use crate::kmeans::LloydConfig;
use crate::layer::{FrameNet, Layer};
use crate::math;
use crate::metrics::{edit_distance, ErrorBreakdown};
use crate::model::{clip_grads, ModelConfig};
use crate::rng::Rng;
use crate::synthlang::{
    make_language, sample_accented_speakers, sample_corpus, Lang, Language, LanguageSpec, SpeakerPool, Utterance,
    WordsPerUtt,
};
use crate::tensor::Tensor;
use crate::train::{init_checkpoint, train_stage1, train_stage2, Checkpoint, TrainConfig};

/// Accented speaker pool parameters (see [`SpeakerPool`]).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct AccentPoolConfig {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub strength: f32,
    pub jitter: f32,
}

impl AccentPoolConfig {
    fn pool(&self, words: WordsPerUtt) -> SpeakerPool {
        SpeakerPool {
            speakers: self.speakers,
            utts_per_speaker: self.utts_per_speaker,
            strength: self.strength,
            jitter: self.jitter,
            words,
        }
    }
}

impl Default for AccentPoolConfig {
    fn default() -> Self {
        AccentPoolConfig { speakers: 20, utts_per_speaker: 10, strength: 0.6, jitter: 0.15 }
    }
}

/// Synthetic languages and corpus sizes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    pub l1: LanguageSpec,
    pub l2: LanguageSpec,
    pub words_per_utt: WordsPerUtt,
    pub train_utts_l1: usize,
    pub train_utts_l2: usize,
    pub test_utts: usize,
    /// Accented test set around the default strength ("all accented speakers").
    pub accented_test: AccentPoolConfig,
    /// Accented test set at high strength ("worst speakers").
    pub strong_accented_test: AccentPoolConfig,
    /// Accented adaptation pool, split 8:1:1 by speaker.
    pub adapt_pool: AccentPoolConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            l1: LanguageSpec { phones: 10, ..LanguageSpec::default() },
            l2: LanguageSpec { phones: 12, ..LanguageSpec::default() },
            words_per_utt: WordsPerUtt::default(),
            train_utts_l1: 2000,
            train_utts_l2: 2000,
            test_utts: 200,
            accented_test: AccentPoolConfig { speakers: 20, utts_per_speaker: 10, strength: 0.6, jitter: 0.15 },
            strong_accented_test: AccentPoolConfig { speakers: 10, utts_per_speaker: 20, strength: 0.85, jitter: 0.05 },
            adapt_pool: AccentPoolConfig { speakers: 250, utts_per_speaker: 10, strength: 0.6, jitter: 0.15 },
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1.dim != self.l2.dim {
            return Err(Error::invalid("L1 and L2 feature dims differ"));
        }
        if self.train_utts_l1 == 0 || self.train_utts_l2 == 0 || self.test_utts == 0 {
            return Err(Error::invalid("corpus sizes must be positive"));
        }
        for p in [&self.accented_test, &self.strong_accented_test, &self.adapt_pool] {
            if p.speakers == 0 || p.utts_per_speaker == 0 || !(0.0..=1.0).contains(&p.strength) || p.jitter < 0.0 {
                return Err(Error::invalid("accent pools need speakers, utterances and a strength in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Languages and every corpus generated for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub l1: Language,
    pub l2: Language,
    pub train_l1: Vec<Utterance>,
    pub train_l2: Vec<Utterance>,
    pub test_l1: Vec<Utterance>,
    pub test_l2: Vec<Utterance>,
    pub test_accented: Vec<Utterance>,
    pub test_accented_strong: Vec<Utterance>,
    pub adapt_pool: Vec<Utterance>,
}

/// Generates the world of `seed`; every corpus has its own derived stream.
pub fn build_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    cfg.validate()?;
    let l1 = make_language(&cfg.l1, &mut Rng::derive(seed, 10))?;
    let l2 = make_language(&cfg.l2, &mut Rng::derive(seed, 11))?;
    let corpus_seed = |tag: u64| Rng::derive(seed, tag).next_u64();
    let w = cfg.words_per_utt;
    Ok(World {
        train_l1: sample_corpus(&l1, Lang::L1, cfg.train_utts_l1, w, corpus_seed(20))?,
        train_l2: sample_corpus(&l2, Lang::L2, cfg.train_utts_l2, w, corpus_seed(21))?,
        test_l1: sample_corpus(&l1, Lang::L1, cfg.test_utts, w, corpus_seed(22))?,
        test_l2: sample_corpus(&l2, Lang::L2, cfg.test_utts, w, corpus_seed(23))?,
        test_accented: sample_accented_speakers(&l2, &l1, &cfg.accented_test.pool(w), corpus_seed(24))?,
        test_accented_strong: sample_accented_speakers(&l2, &l1, &cfg.strong_accented_test.pool(w), corpus_seed(25))?,
        adapt_pool: sample_accented_speakers(&l2, &l1, &cfg.adapt_pool.pool(w), corpus_seed(26))?,
        l1,
        l2,
    })
}

/// Downstream token-level ASR used in the accent-adapted scenario.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct AdaptConfig {
    /// Training-set sizes in utterances (stand-ins for hours of speech).
    pub sizes: Vec<usize>,
    /// Epochs per size (same order as `sizes`); smaller sets train longer.
    pub epochs: Vec<usize>,
    pub lr: f32,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub radius: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            sizes: vec![200, 500, 2000],
            epochs: vec![60, 30, 10],
            lr: 5e-2,
            batch_size: 16,
            clip_norm: 5.0,
            embed_dim: 8,
            radius: 4,
            hidden: 32,
            layers: 2,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid("adaptation sizes must be non-empty and positive"));
        }
        if self.epochs.len() != self.sizes.len() {
            return Err(Error::invalid("adapt.epochs needs one entry per adaptation size"));
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 || !(self.lr >= 0.0) {
            return Err(Error::invalid("downstream model settings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    /// `alpha` and `seed` here are overridden per row and per seed.
    pub train: TrainConfig,
    pub lloyd: LloydConfig,
    pub alphas: Vec<f64>,
    pub inits: Vec<Lang>,
    pub seeds: Vec<u64>,
    pub adapt: AdaptConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            lloyd: LloydConfig::default(),
            alphas: vec![0.0, 0.3, 0.5, 0.7],
            inits: vec![Lang::L1, Lang::L2],
            seeds: vec![1, 2, 3, 4, 5],
            adapt: AdaptConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        if self.model.feature_dim != self.world.l1.dim {
            return Err(Error::invalid("model.feature_dim must equal the language feature dim"));
        }
        if self.seeds.is_empty() || self.inits.is_empty() {
            return Err(Error::invalid("need at least one seed and one init language"));
        }
        for &a in &self.alphas {
            crate::model::check_alpha(a)?;
        }
        Ok(())
    }

    /// Row keys in table order: per init, the k-means baseline then each α.
    pub fn rows(&self) -> Vec<RowKey> {
        let mut rows = Vec::new();
        for &init in &self.inits {
            rows.push(RowKey { init, diffkm: false, alpha: None });
            for &a in &self.alphas {
                rows.push(RowKey { init, diffkm: true, alpha: Some(a) });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RowKey {
    pub init: Lang,
    pub diffkm: bool,
    /// `None` for the vanilla k-means baseline (stage 1 only, single task).
    pub alpha: Option<f64>,
}

impl RowKey {
    pub fn label(&self) -> String {
        match self.alpha {
            None => format!("init-{} kmeans", self.init.as_str()),
            Some(a) => format!("init-{} diffkm alpha={a}", self.init.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SeedOutcome {
    Ok(ErrorBreakdown),
    Failed(String),
}

impl SeedOutcome {
    pub fn rate(&self) -> Option<f64> {
        match self {
            SeedOutcome::Ok(e) => Some(e.rate()),
            SeedOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cell {
    /// One entry per configured seed, in seed order.
    pub per_seed: Vec<SeedOutcome>,
    /// Median error rate over the successful seeds.
    pub median: Option<f64>,
}

impl Cell {
    fn from_outcomes(per_seed: Vec<SeedOutcome>) -> Cell {
        let rates: Vec<f64> = per_seed.iter().filter_map(SeedOutcome::rate).collect();
        Cell { median: math::median(&rates), per_seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportRow {
    pub key: RowKey,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportTable {
    pub title: String,
    pub conditions: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn row(&self, key: &RowKey) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key == *key)
    }

    /// Median rate of `(row, condition)`.
    pub fn median(&self, key: &RowKey, condition: &str) -> Option<f64> {
        let c = self.conditions.iter().position(|c| c == condition)?;
        self.row(key)?.cells[c].median
    }
}

pub const NATIVE_L2: &str = "native-l2";
pub const ACCENTED_ALL: &str = "accented-all";
pub const ACCENTED_STRONG: &str = "accented-strong";
pub const NATIVE_L1: &str = "native-l1";

pub fn native_conditions() -> Vec<String> {
    [NATIVE_L2, ACCENTED_ALL, ACCENTED_STRONG, NATIVE_L1].iter().map(|s| s.to_string()).collect()
}

pub fn adapt_condition(size: usize) -> String {
    format!("adapt-{size}")
}

/// Corpus-level error counts of `model` decoding `corpus` with the `lang` head.
pub fn evaluate(ckpt: &Checkpoint, corpus: &[Utterance], lang: Lang) -> Result<ErrorBreakdown> {
    corpus
        .iter()
        .map(|u| Ok(edit_distance(&u.transcript, &ckpt.model.recognize(&u.features, lang)?)))
        .sum()
}

fn evaluate_native(ckpt: &Checkpoint, world: &World) -> Result<Vec<ErrorBreakdown>> {
    Ok(vec![
        evaluate(ckpt, &world.test_l2, Lang::L2)?,
        evaluate(ckpt, &world.test_accented, Lang::L2)?,
        evaluate(ckpt, &world.test_accented_strong, Lang::L2)?,
        evaluate(ckpt, &world.test_l1, Lang::L1)?,
    ])
}

/// A trained row of one seed, or the error that aborted it.
#[derive(Debug, Clone)]
pub struct TrainedRow {
    pub key: RowKey,
    pub outcome: core::result::Result<(Checkpoint, Vec<ErrorBreakdown>), String>,
}

/// Everything the native-only scenario produced for one (init, seed).
#[derive(Debug, Clone)]
pub struct NativeJob {
    pub init: Lang,
    pub seed: u64,
    pub rows: Vec<TrainedRow>,
}

fn row_train_config(cfg: &ExperimentConfig, alpha: f64, seed: u64) -> TrainConfig {
    TrainConfig { alpha, seed, ..cfg.train.clone() }
}

/// Trains and evaluates every row of one init language for one seed.
///
/// The baseline row is the α = 0 stage-1 model (k-means centroids, frozen
/// encoder, single-task L2 head); every α row continues with stage 2.
/// Failures are recorded per row.
pub fn run_native_job(cfg: &ExperimentConfig, world: &World, init: Lang, seed: u64) -> NativeJob {
    let init_corpus = match init {
        Lang::L1 => &world.train_l1,
        Lang::L2 => &world.train_l2,
    };
    let ckpt0 = match init_checkpoint(
        &cfg.model,
        world.l1.vocab_size(),
        world.l2.vocab_size(),
        init,
        init_corpus,
        &cfg.lloyd,
        seed,
    ) {
        Ok(c) => c,
        Err(e) => {
            let msg = format!("centroid initialization failed: {e}");
            let rows = cfg.rows().into_iter().filter(|k| k.init == init);
            return NativeJob { init, seed, rows: rows.map(|key| TrainedRow { key, outcome: Err(msg.clone()) }).collect() };
        }
    };

    let finish = |key: RowKey, r: Result<Checkpoint>| -> TrainedRow {
        let outcome = r
            .and_then(|c| evaluate_native(&c, world).map(|e| (c, e)))
            .map_err(|e| e.to_string());
        TrainedRow { key, outcome }
    };

    let mut rows = Vec::new();
    let mut stage1_alpha0: Option<Result<Checkpoint>> = None;
    let mut stage1 = |alpha: f64| -> Result<Checkpoint> {
        if alpha == 0.0 {
            if let Some(c) = &stage1_alpha0 {
                return c.clone();
            }
        }
        let r = train_stage1(&ckpt0, &world.train_l1, &world.train_l2, &row_train_config(cfg, alpha, seed)).map(|(c, _)| c);
        if alpha == 0.0 {
            stage1_alpha0 = Some(r.clone());
        }
        r
    };
    rows.push(finish(RowKey { init, diffkm: false, alpha: None }, stage1(0.0)));
    for &alpha in &cfg.alphas {
        let tc = row_train_config(cfg, alpha, seed);
        let r = stage1(alpha).and_then(|s1| {
            train_stage2(&s1, &world.train_l1, &world.train_l2, &cfg.model, &tc).map(|(c, _)| c)
        });
        rows.push(finish(RowKey { init, diffkm: true, alpha: Some(alpha) }, r));
    }
    NativeJob { init, seed, rows }
}

/// Per-seed worlds and native-only jobs for a whole configuration.
#[derive(Debug, Clone)]
pub struct NativeRun {
    pub worlds: Vec<World>,
    /// Indexed `[seed index][init index]`.
    pub jobs: Vec<Vec<NativeJob>>,
}

/// Sequential driver for the native-only scenario.
pub fn run_native_only(cfg: &ExperimentConfig) -> Result<(ReportTable, NativeRun)> {
    cfg.validate()?;
    let mut worlds = Vec::new();
    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        let world = build_world(&cfg.world, seed)?;
        let per_init = cfg.inits.iter().map(|&init| run_native_job(cfg, &world, init, seed)).collect();
        worlds.push(world);
        jobs.push(per_init);
    }
    let run = NativeRun { worlds, jobs };
    Ok((native_table(cfg, &run), run))
}

/// Assembles the native-only report from finished jobs.
pub fn native_table(cfg: &ExperimentConfig, run: &NativeRun) -> ReportTable {
    let conditions = native_conditions();
    let rows = cfg
        .rows()
        .into_iter()
        .map(|key| {
            let cells = (0..conditions.len())
                .map(|c| {
                    let outcomes = run
                        .jobs
                        .iter()
                        .map(|per_init| {
                            let row = per_init.iter().flat_map(|j| &j.rows).find(|r| r.key == key);
                            match row.map(|r| &r.outcome) {
                                Some(Ok((_, errs))) => SeedOutcome::Ok(errs[c]),
                                Some(Err(msg)) => SeedOutcome::Failed(msg.clone()),
                                None => SeedOutcome::Failed("row not run".into()),
                            }
                        })
                        .collect();
                    Cell::from_outcomes(outcomes)
                })
                .collect();
            ReportRow { key, cells }
        })
        .collect();
    ReportTable {
        title: "native-only: trained L2 head on native and accented speech".into(),
        conditions,
        seeds: cfg.seeds.clone(),
        rows,
    }
}

/// Token sequence with its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenUtterance {
    pub tokens: Vec<usize>,
    pub transcript: Vec<u32>,
    pub speaker: u32,
}

/// Learned token embeddings followed by a per-frame network and CTC.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAsr {
    /// `K × E` embedding table.
    pub embedding: Tensor,
    pub head: FrameNet,
}

impl TokenAsr {
    pub fn new(vocab_tokens: usize, vocab_labels: usize, cfg: &AdaptConfig, rng: &mut Rng) -> Result<Self> {
        let embedding = Tensor::from_fn(&[vocab_tokens, cfg.embed_dim], |_| rng.normal() as f32);
        let head = FrameNet::random(cfg.radius, cfg.embed_dim, cfg.hidden, cfg.layers, vocab_labels + 1, rng)?;
        Ok(TokenAsr { embedding, head })
    }

    fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        let e = self.embedding.cols();
        let mut data = Vec::with_capacity(tokens.len() * e);
        for &t in tokens {
            if t >= self.embedding.rows() {
                return Err(Error::invalid(format!("token {t} outside the embedding table")));
            }
            data.extend_from_slice(self.embedding.row(t));
        }
        Tensor::matrix(tokens.len(), e, data)
    }

    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        self.head.infer(&self.embed(tokens)?)
    }

    pub fn recognize(&self, tokens: &[usize]) -> Result<Vec<u32>> {
        Ok(greedy_decode(&self.logits(tokens)?))
    }

    pub fn loss(&self, utt: &TokenUtterance) -> Result<f64> {
        ctc_nll(&self.logits(&utt.tokens)?, &utt.transcript)
    }

    pub fn evaluate(&self, data: &[TokenUtterance]) -> Result<ErrorBreakdown> {
        data.iter().map(|u| Ok(edit_distance(&u.transcript, &self.recognize(&u.tokens)?))).sum()
    }

    fn mean_loss(&self, data: &[TokenUtterance]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        Ok(data.iter().map(|u| self.loss(u)).sum::<Result<f64>>()? / data.len() as f64)
    }

    /// SGD over `train`; keeps the parameters of the epoch with the lowest
    /// validation loss (training loss when `valid` is empty).
    pub fn fit(
        &mut self,
        train: &[TokenUtterance],
        valid: &[TokenUtterance],
        epochs: usize,
        cfg: &AdaptConfig,
        rng: &mut Rng,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::invalid("empty adaptation set"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<(f64, TokenAsr)> = None;
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            for batch in order.chunks(cfg.batch_size) {
                let mut g_emb = Tensor::zeros(self.embedding.shape());
                let mut g_head: Vec<Tensor> = self.head.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
                let scale = 1.0 / batch.len() as f32;
                for &i in batch {
                    let u = &train[i];
                    let (logits, ctx) = self.head.forward(&self.embed(&u.tokens)?)?;
                    let loss = ctc_loss(&logits, &u.transcript)?;
                    if !loss.nll.is_finite() {
                        return Err(Error::NonFinite { what: "downstream loss", step: None });
                    }
                    let b = self.head.backward(&ctx, &loss.grad)?;
                    for (a, g) in g_head.iter_mut().zip(&b.params) {
                        a.add_scaled(g, scale);
                    }
                    for (t, &tok) in u.tokens.iter().enumerate() {
                        for (a, &g) in g_emb.row_mut(tok).iter_mut().zip(b.input.row(t)) {
                            *a += scale * g;
                        }
                    }
                }
                let mut all: Vec<&mut Tensor> = g_head.iter_mut().collect();
                all.push(&mut g_emb);
                clip_grads(&mut all, cfg.clip_norm);
                for (p, g) in self.head.params_mut().into_iter().zip(&g_head) {
                    p.add_scaled(g, -cfg.lr);
                }
                self.embedding.add_scaled(&g_emb, -cfg.lr);
            }
            let score = if valid.is_empty() { self.mean_loss(train)? } else { self.mean_loss(valid)? };
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, self.clone()));
            }
        }
        if let Some((_, m)) = best {
            *self = m;
        }
        Ok(())
    }
}

/// Tokenizes `corpus` with the checkpoint's encoder and codebook.
pub fn tokenize_corpus(ckpt: &Checkpoint, corpus: &[Utterance]) -> Result<Vec<TokenUtterance>> {
    corpus
        .iter()
        .map(|u| {
            Ok(TokenUtterance { tokens: ckpt.model.tokenize(&u.features)?, transcript: u.transcript.clone(), speaker: u.speaker })
        })
        .collect()
}

/// Speaker-disjoint 8:1:1 split; speakers are shuffled with `seed`.
pub fn split_by_speaker<T: Clone>(items: &[T], speaker: impl Fn(&T) -> u32, seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut speakers: Vec<u32> = items.iter().map(&speaker).collect();
    speakers.sort_unstable();
    speakers.dedup();
    Rng::derive(seed, 30).shuffle(&mut speakers);
    let n = speakers.len();
    let n_valid = (n / 10).max(usize::from(n >= 3));
    let n_test = (n / 10).max(usize::from(n >= 3));
    let n_train = n - n_valid - n_test;
    let group = |s: u32| {
        let pos = speakers.iter().position(|&x| x == s).unwrap_or(0);
        if pos < n_train {
            0
        } else if pos < n_train + n_valid {
            1
        } else {
            2
        }
    };
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for it in items {
        match group(speaker(it)) {
            0 => train.push(it.clone()),
            1 => valid.push(it.clone()),
            _ => test.push(it.clone()),
        }
    }
    (train, valid, test)
}

/// Downstream error counts for every adaptation size, for one tokenizer.
pub fn run_adapt_job(cfg: &ExperimentConfig, ckpt: &Checkpoint, world: &World, seed: u64) -> Result<Vec<ErrorBreakdown>> {
    cfg.adapt.validate()?;
    let tokens = tokenize_corpus(ckpt, &world.adapt_pool)?;
    let (mut train, valid, test) = split_by_speaker(&tokens, |u| u.speaker, seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("adaptation pool too small for an 8:1:1 speaker split"));
    }
    Rng::derive(seed, 31).shuffle(&mut train);
    let k = ckpt.model.codebook()?.k();
    let vocab = world.l2.vocab_size();
    cfg.adapt
        .sizes
        .iter()
        .zip(&cfg.adapt.epochs)
        .map(|(&size, &epochs)| {
            let subset = &train[..size.min(train.len())];
            // Same initialization for every tokenizer of a seed.
            let mut asr = TokenAsr::new(k, vocab, &cfg.adapt, &mut Rng::derive(seed, 40 + size as u64))?;
            asr.fit(subset, &valid, epochs, &cfg.adapt, &mut Rng::derive(seed, 50 + size as u64))?;
            asr.evaluate(&test)
        })
        .collect()
}

/// Downstream outcome of one row: error counts per adaptation size.
pub type AdaptOutcome = (RowKey, core::result::Result<Vec<ErrorBreakdown>, String>);

/// Runs [`run_adapt_job`] for a trained row, carrying native failures through.
pub fn adapt_row(cfg: &ExperimentConfig, row: &TrainedRow, world: &World, seed: u64) -> AdaptOutcome {
    let r = match &row.outcome {
        Ok((ckpt, _)) => run_adapt_job(cfg, ckpt, world, seed).map_err(|e| e.to_string()),
        Err(msg) => Err(format!("native training failed: {msg}")),
    };
    (row.key, r)
}

/// Sequential driver for the accent-adapted scenario over a native-only run.
pub fn run_accent_adapted(cfg: &ExperimentConfig, native: &NativeRun) -> Result<ReportTable> {
    cfg.validate()?;
    let results: Vec<Vec<AdaptOutcome>> = cfg
        .seeds
        .iter()
        .enumerate()
        .map(|(si, &seed)| {
            native.jobs[si].iter().flat_map(|j| &j.rows).map(|row| adapt_row(cfg, row, &native.worlds[si], seed)).collect()
        })
        .collect();
    Ok(adapt_table(cfg, &results))
}

/// Assembles the accent-adapted report; `results[seed index]` lists row outcomes.
pub fn adapt_table(cfg: &ExperimentConfig, results: &[Vec<AdaptOutcome>]) -> ReportTable {
    let conditions: Vec<String> = cfg.adapt.sizes.iter().map(|&s| adapt_condition(s)).collect();
    let rows = cfg
        .rows()
        .into_iter()
        .map(|key| {
            let cells = (0..conditions.len())
                .map(|c| {
                    let outcomes = results
                        .iter()
                        .map(|per_seed| match per_seed.iter().find(|(k, _)| *k == key) {
                            Some((_, Ok(errs))) => SeedOutcome::Ok(errs[c]),
                            Some((_, Err(msg))) => SeedOutcome::Failed(msg.clone()),
                            None => SeedOutcome::Failed("row not run".into()),
                        })
                        .collect();
                    Cell::from_outcomes(outcomes)
                })
                .collect();
            ReportRow { key, cells }
        })
        .collect();
    ReportTable {
        title: "accent-adapted: token ASR trained on a small accented corpus".into(),
        conditions,
        seeds: cfg.seeds.clone(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_world_config() -> WorldConfig {
        let pool = AccentPoolConfig { speakers: 10, utts_per_speaker: 2, strength: 0.6, jitter: 0.1 };
        WorldConfig {
            train_utts_l1: 20,
            train_utts_l2: 20,
            test_utts: 5,
            accented_test: pool,
            strong_accented_test: pool,
            adapt_pool: pool,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn split_is_speaker_disjoint_eight_one_one() {
        let items: Vec<u32> = (0..50).flat_map(|s| [s, s]).collect();
        let (train, valid, test) = split_by_speaker(&items, |&s| s, 3);
        assert_eq!((train.len(), valid.len(), test.len()), (80, 10, 10));
        for s in &valid {
            assert!(!train.contains(s) && !test.contains(s));
        }
        assert_eq!(split_by_speaker(&items, |&s| s, 3), (train, valid, test));
    }

    #[test]
    fn token_asr_fits_a_noiseless_mapping() {
        // Word w is always the token run 3w, 3w+1, 3w+2 (two frames each).
        let mut rng = Rng::new(2);
        let data: Vec<TokenUtterance> = (0..40)
            .map(|i| {
                let words: Vec<u32> = (0..rng.range_inclusive(1, 3)).map(|_| 1 + rng.below(4) as u32).collect();
                let tokens = words.iter().flat_map(|&w| (0..3).flat_map(move |p| [3 * (w as usize - 1) + p; 2])).collect();
                TokenUtterance { tokens, transcript: words, speaker: i }
            })
            .collect();
        let cfg = AdaptConfig::default();
        let mut asr = TokenAsr::new(12, 4, &cfg, &mut Rng::new(5)).unwrap();
        let before = asr.evaluate(&data).unwrap().rate();
        asr.fit(&data, &[], 60, &cfg, &mut Rng::new(6)).unwrap();
        let after = asr.evaluate(&data).unwrap().rate();
        assert!(after <= 0.05 && after < before, "{before} -> {after}");
        assert!(matches!(asr.fit(&[], &[], 1, &cfg, &mut Rng::new(6)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rows_follow_init_then_alpha_order() {
        let cfg = ExperimentConfig { alphas: vec![0.0, 0.5], ..ExperimentConfig::default() };
        let labels: Vec<String> = cfg.rows().iter().map(RowKey::label).collect();
        assert_eq!(
            labels,
            ["init-l1 kmeans", "init-l1 diffkm alpha=0", "init-l1 diffkm alpha=0.5", "init-l2 kmeans", "init-l2 diffkm alpha=0", "init-l2 diffkm alpha=0.5"]
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_alpha = ExperimentConfig { alphas: vec![1.2], ..ExperimentConfig::default() };
        assert!(bad_alpha.validate().is_err());
        let mut bad_adapt = ExperimentConfig::default();
        bad_adapt.adapt.epochs.pop();
        assert!(bad_adapt.validate().is_err());
        let no_seeds = ExperimentConfig { seeds: vec![], ..ExperimentConfig::default() };
        assert!(no_seeds.validate().is_err());
    }

    #[test]
    fn failed_rows_are_recorded_not_fatal() {
        // 2 utterances have at most 160 frames, fewer than the centroids requested.
        let world_cfg = WorldConfig { train_utts_l1: 2, ..tiny_world_config() };
        let model = ModelConfig { codebook_size: 200, ..ModelConfig::default() };
        let cfg = ExperimentConfig { world: world_cfg, model, alphas: vec![0.0], seeds: vec![1], ..ExperimentConfig::default() };
        let world = build_world(&cfg.world, 1).unwrap();
        let job = run_native_job(&cfg, &world, Lang::L1, 1);
        assert_eq!(job.rows.len(), 2);
        assert!(job.rows.iter().all(|r| r.outcome.is_err()));
        let run = NativeRun { worlds: vec![world], jobs: vec![vec![job]] };
        let cfg = ExperimentConfig { inits: vec![Lang::L1], ..cfg };
        let table = native_table(&cfg, &run);
        assert!(table.rows.iter().flat_map(|r| &r.cells).all(|c| c.median.is_none()));
        assert!(matches!(table.rows[0].cells[0].per_seed[0], SeedOutcome::Failed(_)));
    }

    #[test]
    fn medians_skip_failed_seeds() {
        let e = |errs: usize| SeedOutcome::Ok(ErrorBreakdown { substitutions: errs, ref_len: 10, ..ErrorBreakdown::default() });
        let cell = Cell::from_outcomes(vec![e(1), SeedOutcome::Failed("x".into()), e(3), e(2)]);
        assert_eq!(cell.median, Some(0.2));
        assert_eq!(Cell::from_outcomes(vec![SeedOutcome::Failed("x".into())]).median, None);
    }
}
