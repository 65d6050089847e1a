//! Two-stage training.
//!
//! Stage 1 freezes the encoder and codebook and trains only the heads;
//! stage 2 fine-tunes everything, the codebook through the DiffKM soft path.
//! Each optimizer step pairs one L1 batch with one L2 batch and applies the
//! α-weighted gradient once (plain SGD, global-norm clipping). An epoch is
//! one pass over the larger corpus; the smaller one cycles.

use alloc::vec::Vec;

use crate::ctc::ctc_loss;
use crate::error::{Error, Result};
use crate::kmeans::LloydConfig;
use crate::layer::Layer;
use crate::model::{check_alpha, clip_grads, combine, multitask_loss, LossReport, Model, ModelConfig, ModelGrads};
use crate::rng::Rng;
use crate::synthlang::{Lang, Utterance};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub alpha: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage1_lr: f32,
    pub stage2_lr: f32,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.0,
            stage1_epochs: 15,
            stage2_epochs: 15,
            stage1_lr: 1e-2,
            stage2_lr: 1e-3,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.stage1_lr >= 0.0 && self.stage2_lr >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Stage {
    /// Codebook fitted with k-means; nothing trained yet.
    Init,
    Stage1,
    Stage2,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Stage::Init),
            "stage1" => Ok(Stage::Stage1),
            "stage2" => Ok(Stage::Stage2),
            _ => Err(Error::invalid(alloc::format!("unknown stage {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

/// Model state plus the training metadata that travels with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stage: Stage,
    /// Language the centroids were initialized on.
    pub init: Lang,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub stage: Stage,
    /// 1-based.
    pub epoch: usize,
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<LossReport>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.epochs.extend(other.epochs);
        self.steps.extend(other.steps);
    }
}

/// Builds a fresh model and fits its codebook on `init_corpus`.
///
/// Parameter initialization depends only on `seed`, so Init-L1 and Init-L2
/// checkpoints of the same seed differ only in their centroids.
pub fn init_checkpoint(
    cfg: &ModelConfig,
    vocab_l1: usize,
    vocab_l2: usize,
    init: Lang,
    init_corpus: &[Utterance],
    lloyd: &LloydConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let mut model = Model::new(cfg, vocab_l1, vocab_l2, &mut Rng::derive(seed, 1))?;
    model.init_codebook(init_corpus, cfg.codebook_size, lloyd, &mut Rng::derive(seed, 2))?;
    Ok(Checkpoint { model, stage: Stage::Init, init, alpha: 0.0 })
}

/// Endless shuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(n: usize, rng: Rng) -> Self {
        let mut c = Cycler { order: (0..n).collect(), pos: n, rng };
        c.reshuffle_if_done();
        c
    }

    fn reshuffle_if_done(&mut self) {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            self.reshuffle_if_done();
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn check_corpus(model: &Model, corpus: &[Utterance], lang: Lang) -> Result<()> {
    for u in corpus {
        if u.features.cols() != model.feature_dim() {
            return Err(Error::state(alloc::format!(
                "{} corpus has {} features, model expects {}",
                lang.as_str(),
                u.features.cols(),
                model.feature_dim()
            )));
        }
        if let Some(&bad) = u.transcript.iter().find(|&&l| l as usize > model.vocab_size(lang)) {
            return Err(Error::state(alloc::format!("{} label {bad} exceeds head vocabulary", lang.as_str())));
        }
    }
    Ok(())
}

/// Loss and head gradients from precomputed bottleneck embeddings.
fn cached_branch(
    model: &Model,
    cache: &[Tensor],
    corpus: &[Utterance],
    batch: &[usize],
    lang: Lang,
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let head = model.head(lang);
    let scale = (weight / batch.len() as f64) as f32;
    let mut total = 0.0;
    for &i in batch {
        let (logits, ctx) = head.forward(&cache[i])?;
        let loss = ctc_loss(&logits, &corpus[i].transcript)?;
        total += loss.nll;
        if weight != 0.0 {
            let b = head.backward(&ctx, &loss.grad)?;
            let acc = match lang {
                Lang::L1 => &mut grads.head_l1,
                Lang::L2 => &mut grads.head_l2,
            };
            for (a, g) in acc.iter_mut().zip(&b.params) {
                a.add_scaled(g, scale);
            }
        }
    }
    Ok(total / batch.len() as f64)
}

fn run_stage(
    ckpt: &Checkpoint,
    corpus_l1: &[Utterance],
    corpus_l2: &[Utterance],
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let l1_used = !corpus_l1.is_empty();
    if (alpha > 0.0 && corpus_l1.is_empty()) || (alpha < 1.0 && corpus_l2.is_empty()) {
        return Err(Error::invalid("a corpus with non-zero loss weight is empty"));
    }
    let mut model = ckpt.model.clone();
    check_corpus(&model, corpus_l1, Lang::L1)?;
    check_corpus(&model, corpus_l2, Lang::L2)?;
    let heads_only = stage == Stage::Stage1;
    let (epochs, lr) = match stage {
        Stage::Stage1 => (cfg.stage1_epochs, cfg.stage1_lr),
        _ => (cfg.stage2_epochs, cfg.stage2_lr),
    };
    let stage_tag = stage as u64;
    let mut cyc1 = Cycler::new(corpus_l1.len(), Rng::derive(cfg.seed, 100 + 2 * stage_tag));
    let mut cyc2 = Cycler::new(corpus_l2.len(), Rng::derive(cfg.seed, 101 + 2 * stage_tag));
    let b = cfg.batch_size;
    let steps_per_epoch = corpus_l1.len().max(corpus_l2.len()).div_ceil(b);

    let (cache1, cache2) = if heads_only {
        let embed = |c: &[Utterance]| c.iter().map(|u| model.embed(&u.features)).collect::<Result<Vec<_>>>();
        (embed(corpus_l1)?, embed(corpus_l2)?)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 1..=epochs {
        let (mut sum_t, mut sum_1, mut sum_2) = (0.0, 0.0, 0.0);
        for _ in 0..steps_per_epoch {
            let idx1 = if l1_used { cyc1.batch(b) } else { Vec::new() };
            let idx2 = cyc2.batch(b);
            let (report, mut grads) = if heads_only {
                let mut grads = model.zero_grads()?;
                let l1 = cached_branch(&model, &cache1, corpus_l1, &idx1, Lang::L1, alpha, &mut grads)?;
                let l2 = cached_branch(&model, &cache2, corpus_l2, &idx2, Lang::L2, 1.0 - alpha, &mut grads)?;
                (LossReport { step, alpha, total: combine(alpha, l1, l2), l1, l2 }, grads)
            } else {
                let b1: Vec<&Utterance> = idx1.iter().map(|&i| &corpus_l1[i]).collect();
                let b2: Vec<&Utterance> = idx2.iter().map(|&i| &corpus_l2[i]).collect();
                let (mut r, g) = multitask_loss(&model, &b1, &b2, alpha, false)?;
                r.step = step;
                (r, g)
            };
            if !report.total.is_finite() {
                return Err(Error::NonFinite { what: "training loss", step: Some(step) });
            }
            apply_sgd(&mut model, &mut grads, lr, cfg.clip_norm, heads_only, step)?;
            sum_t += report.total;
            sum_1 += report.l1;
            sum_2 += report.l2;
            log.steps.push(report);
            step += 1;
        }
        let n = steps_per_epoch.max(1) as f64;
        log.epochs.push(EpochLog { stage, epoch, total: sum_t / n, l1: sum_1 / n, l2: sum_2 / n });
    }
    let out = Checkpoint { model, stage, init: ckpt.init, alpha };
    Ok((out, log))
}

fn apply_sgd(model: &mut Model, grads: &mut ModelGrads, lr: f32, clip: f64, heads_only: bool, step: usize) -> Result<()> {
    let mut trainable: Vec<&mut Tensor> = if heads_only {
        grads.head_l1.iter_mut().chain(grads.head_l2.iter_mut()).collect()
    } else {
        grads.all_mut()
    };
    let norm = clip_grads(&mut trainable, clip);
    if !norm.is_finite() {
        return Err(Error::NonFinite { what: "gradient", step: Some(step) });
    }
    if heads_only {
        let params = model.head_l1.params_mut().into_iter().chain(model.head_l2.params_mut());
        for (p, g) in params.zip(grads.head_l1.iter().chain(grads.head_l2.iter())) {
            p.add_scaled(g, -lr);
        }
    } else {
        for (p, g) in model.params_mut()?.into_iter().zip(grads.all()) {
            p.add_scaled(g, -lr);
        }
    }
    Ok(())
}

/// Trains the heads with encoder and codebook frozen.
pub fn train_stage1(
    ckpt: &Checkpoint,
    corpus_l1: &[Utterance],
    corpus_l2: &[Utterance],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    if ckpt.model.codebook.is_none() {
        return Err(Error::state("stage 1 needs initialized centroids"));
    }
    if ckpt.stage != Stage::Init {
        return Err(Error::state(alloc::format!("stage 1 expects an init checkpoint, got {}", ckpt.stage.as_str())));
    }
    run_stage(ckpt, corpus_l1, corpus_l2, cfg, Stage::Stage1)
}

/// Fine-tunes encoder, codebook and heads jointly.
pub fn train_stage2(
    ckpt: &Checkpoint,
    corpus_l1: &[Utterance],
    corpus_l2: &[Utterance],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    if ckpt.stage != Stage::Stage1 {
        return Err(Error::state(alloc::format!("stage 2 expects a stage-1 checkpoint, got {}", ckpt.stage.as_str())));
    }
    ckpt.model.matches_config(model_cfg)?;
    run_stage(ckpt, corpus_l1, corpus_l2, cfg, Stage::Stage2)
}
