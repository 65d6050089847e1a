//! The trainable system: encoder, shared DiffKM codebook, one CTC head per
//! language, and the α-weighted two-language loss.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ctc::{ctc_loss, greedy_decode};
use crate::diffkm::{diffkm_backward, diffkm_forward, DiffKmContext, Emission};
use crate::error::{Error, Result};
use crate::kmeans::{lloyd_fit, Codebook, LloydConfig};
use crate::layer::{Affine, FrameNet, FrameNetContext, Layer};
use crate::math;
use crate::rng::Rng;
use crate::synthlang::{Lang, Utterance};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum EncoderInit {
    /// Output = the centre frame, plus a random mix of its context scaled by
    /// `encoder_mix_gain`; stands in for a pretrained feature extractor.
    #[default]
    Passthrough,
    /// Plain He initialization.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_radius: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub encoder_init: EncoderInit,
    /// Weight scale of the random context-mixing units in passthrough init.
    pub encoder_mix_gain: f32,
    pub codebook_size: usize,
    pub head_radius: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub tau: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 8,
            encoder_radius: 2,
            encoder_hidden: 32,
            encoder_layers: 2,
            encoder_init: EncoderInit::Passthrough,
            encoder_mix_gain: 0.0,
            codebook_size: 64,
            head_radius: 4,
            head_hidden: 32,
            head_layers: 2,
            tau: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.encoder_hidden == 0 || self.head_hidden == 0 || self.codebook_size == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.encoder_layers == 0 || self.head_layers == 0 {
            return Err(Error::invalid("encoder and heads need at least one layer"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        Ok(())
    }
}

fn passthrough_encoder(cfg: &ModelConfig, rng: &mut Rng) -> Result<FrameNet> {
    let d = cfg.feature_dim;
    let h = cfg.encoder_hidden;
    let width = 2 * cfg.encoder_radius + 1;
    if cfg.encoder_layers < 2 || h < 2 * d {
        return FrameNet::random(cfg.encoder_radius, d, h, cfg.encoder_layers, d, rng);
    }
    let in_w = width * d;
    let centre = cfg.encoder_radius * d;
    let mut layers = Vec::with_capacity(cfg.encoder_layers);

    // Units [0, d) carry relu(x), [d, 2d) carry relu(−x) of the centre frame.
    let mut first = Affine::random(in_w, h, 1.0, rng);
    for r in 0..in_w {
        for c in 0..2 * d {
            first.weight.data_mut()[r * h + c] = 0.0;
        }
    }
    for i in 0..d {
        first.weight.data_mut()[(centre + i) * h + i] = 1.0;
        first.weight.data_mut()[(centre + i) * h + d + i] = -1.0;
    }
    layers.push(first);
    for _ in 1..cfg.encoder_layers - 1 {
        let mut mid = Affine::random(h, h, 1.0, rng);
        for r in 0..h {
            for c in 0..2 * d {
                mid.weight.data_mut()[r * h + c] = if r == c { 1.0 } else { 0.0 };
            }
        }
        for r in 0..2 * d {
            for c in 2 * d..h {
                mid.weight.data_mut()[r * h + c] = 0.0;
            }
        }
        layers.push(mid);
    }
    let mut last = Affine::random(h, d, cfg.encoder_mix_gain as f64, rng);
    for i in 0..d {
        for c in 0..d {
            last.weight.data_mut()[i * d + c] = if i == c { 1.0 } else { 0.0 };
            last.weight.data_mut()[(d + i) * d + c] = if i == c { -1.0 } else { 0.0 };
        }
    }
    layers.push(last);
    FrameNet::new(cfg.encoder_radius, layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: FrameNet,
    /// `None` until centroids are initialized.
    pub codebook: Option<Codebook>,
    pub head_l1: FrameNet,
    pub head_l2: FrameNet,
    pub tau: f32,
    pub emission: Emission,
}

/// Gradient buffers mirroring [`Model`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<Tensor>,
    pub codebook: Tensor,
    pub head_l1: Vec<Tensor>,
    pub head_l2: Vec<Tensor>,
}

impl ModelGrads {
    fn zeros_like(model: &Model) -> Result<Self> {
        let zeros = |ps: Vec<&Tensor>| ps.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(ModelGrads {
            encoder: zeros(model.encoder.params()),
            codebook: Tensor::zeros(model.codebook()?.centroids().shape()),
            head_l1: zeros(model.head_l1.params()),
            head_l2: zeros(model.head_l2.params()),
        })
    }

    pub fn head(&self, lang: Lang) -> &[Tensor] {
        match lang {
            Lang::L1 => &self.head_l1,
            Lang::L2 => &self.head_l2,
        }
    }

    /// All buffers in [`Model::named_params`] order.
    pub fn all(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.iter().collect();
        v.push(&self.codebook);
        v.extend(self.head_l1.iter());
        v.extend(self.head_l2.iter());
        v
    }

    pub fn all_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.encoder.iter_mut().collect();
        v.push(&mut self.codebook);
        v.extend(self.head_l1.iter_mut());
        v.extend(self.head_l2.iter_mut());
        v
    }
}

/// Forward state of one branch, enough to backpropagate into every parameter.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub lang: Lang,
    pub tokens: Vec<usize>,
    pub logits: Tensor,
    encoder: FrameNetContext,
    diffkm: DiffKmContext,
    head: FrameNetContext,
}

/// Per-step record of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub step: usize,
    pub alpha: f64,
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
}

/// `(1 − α)·l2 + α·l1`.
pub fn combine(alpha: f64, l1: f64, l2: f64) -> f64 {
    (1.0 - alpha) * l2 + alpha * l1
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

impl Model {
    /// Fresh model with an uninitialized codebook.
    pub fn new(cfg: &ModelConfig, vocab_l1: usize, vocab_l2: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let encoder = match cfg.encoder_init {
            EncoderInit::Passthrough => passthrough_encoder(cfg, rng)?,
            EncoderInit::Random => {
                FrameNet::random(cfg.encoder_radius, cfg.feature_dim, cfg.encoder_hidden, cfg.encoder_layers, cfg.feature_dim, rng)?
            }
        };
        let head = |vocab: usize, rng: &mut Rng| {
            FrameNet::random(cfg.head_radius, cfg.feature_dim, cfg.head_hidden, cfg.head_layers, vocab + 1, rng)
        };
        let head_l1 = head(vocab_l1, rng)?;
        let head_l2 = head(vocab_l2, rng)?;
        Ok(Model { encoder, codebook: None, head_l1, head_l2, tau: cfg.tau, emission: Emission::Hard })
    }

    pub fn codebook(&self) -> Result<&Codebook> {
        self.codebook.as_ref().ok_or_else(|| Error::state("codebook is not initialized"))
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn head(&self, lang: Lang) -> &FrameNet {
        match lang {
            Lang::L1 => &self.head_l1,
            Lang::L2 => &self.head_l2,
        }
    }

    pub fn vocab_size(&self, lang: Lang) -> usize {
        self.head(lang).out_dim() - 1
    }

    /// Encoder output for every frame.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        self.check_features(features)?;
        self.encoder.infer(features)
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        let (_, d) = features.expect_rank2("model input")?;
        if d != self.feature_dim() {
            return Err(Error::shape(
                "model input",
                format!("utterance has {d} features, encoder expects {}", self.feature_dim()),
            ));
        }
        Ok(())
    }

    /// Fits the codebook with Lloyd's k-means on the encoder features of `corpus`.
    pub fn init_codebook(&mut self, corpus: &[Utterance], k: usize, lloyd: &LloydConfig, rng: &mut Rng) -> Result<Vec<f64>> {
        let frames: Vec<Tensor> = corpus.iter().map(|u| self.encode(&u.features)).collect::<Result<_>>()?;
        let d = self.encoder.out_dim();
        let total: usize = frames.iter().map(Tensor::rows).sum();
        let mut data = Vec::with_capacity(total * d);
        for f in &frames {
            data.extend_from_slice(f.data());
        }
        let points = Tensor::matrix(total, d, data)?;
        let fit = lloyd_fit(&points, k, rng, lloyd)?;
        self.codebook = Some(fit.codebook);
        Ok(fit.inertia_history)
    }

    /// Hard DiffKM tokens of an utterance; the heads are not involved.
    pub fn tokenize(&self, features: &Tensor) -> Result<Vec<usize>> {
        let h = self.encode(features)?;
        let cb = self.codebook()?;
        Ok(h.iter_rows().map(|r| cb.assign(r)).collect())
    }

    /// Bottleneck embeddings as seen by the heads.
    pub fn embed(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.encode(features)?;
        Ok(diffkm_forward(&h, self.codebook()?, self.tau, self.emission)?.0.embeddings)
    }

    pub fn forward_branch(&self, features: &Tensor, lang: Lang) -> Result<(Tensor, BranchTrace)> {
        self.check_features(features)?;
        let (h, enc_ctx) = self.encoder.forward(features)?;
        let (dk, dk_ctx) = diffkm_forward(&h, self.codebook()?, self.tau, self.emission)?;
        let (logits, head_ctx) = self.head(lang).forward(&dk.embeddings)?;
        let trace = BranchTrace {
            lang,
            tokens: dk.tokens,
            logits: logits.clone(),
            encoder: enc_ctx,
            diffkm: dk_ctx,
            head: head_ctx,
        };
        Ok((logits, trace))
    }

    /// Logits of one branch without keeping a trace.
    pub fn logits(&self, features: &Tensor, lang: Lang) -> Result<Tensor> {
        let emb = self.embed(features)?;
        self.head(lang).infer(&emb)
    }

    pub fn recognize(&self, features: &Tensor, lang: Lang) -> Result<Vec<u32>> {
        Ok(greedy_decode(&self.logits(features, lang)?))
    }

    /// Accumulates `scale · ∂loss/∂θ` given `∂loss/∂logits` for a traced branch.
    pub fn backward_branch(
        &self,
        trace: &BranchTrace,
        grad_logits: &Tensor,
        scale: f32,
        heads_only: bool,
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let head = self.head(trace.lang).backward(&trace.head, grad_logits)?;
        let head_grads = match trace.lang {
            Lang::L1 => &mut grads.head_l1,
            Lang::L2 => &mut grads.head_l2,
        };
        for (acc, g) in head_grads.iter_mut().zip(&head.params) {
            acc.add_scaled(g, scale);
        }
        if heads_only {
            return Ok(());
        }
        let (grad_h, grad_m) = diffkm_backward(&trace.diffkm, self.codebook()?, &head.input)?;
        grads.codebook.add_scaled(&grad_m, scale);
        let enc = self.encoder.backward(&trace.encoder, &grad_h)?;
        for (acc, g) in grads.encoder.iter_mut().zip(&enc.params) {
            acc.add_scaled(g, scale);
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Result<ModelGrads> {
        ModelGrads::zeros_like(self)
    }

    /// Parameters with stable names, in checkpoint order.
    pub fn named_params(&self) -> Result<Vec<(String, &Tensor)>> {
        let mut out = Vec::new();
        push_net(&mut out, "encoder", &self.encoder);
        out.push((String::from("codebook"), self.codebook()?.centroids()));
        push_net(&mut out, "head_l1", &self.head_l1);
        push_net(&mut out, "head_l2", &self.head_l2);
        Ok(out)
    }

    pub fn params_mut(&mut self) -> Result<Vec<&mut Tensor>> {
        let cb = self.codebook.as_mut().ok_or_else(|| Error::state("codebook is not initialized"))?;
        let mut v = self.encoder.params_mut();
        v.push(cb.centroids_mut());
        v.extend(self.head_l1.params_mut());
        v.extend(self.head_l2.params_mut());
        Ok(v)
    }

    /// Rebuilds a model from [`Model::named_params`] output; names and shapes
    /// must match the layout `cfg` implies, in order.
    pub fn from_named_params(cfg: &ModelConfig, vocab_l1: usize, vocab_l2: usize, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Model::new(cfg, vocab_l1, vocab_l2, &mut Rng::new(0))?;
        model.codebook = Some(Codebook::new(Tensor::zeros(&[cfg.codebook_size, cfg.feature_dim]))?);
        let expected: Vec<(String, Vec<usize>)> =
            model.named_params()?.into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected.len() != params.len() {
            return Err(Error::state(format!("expected {} tensors, found {}", expected.len(), params.len())));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(&params) {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(Error::state(format!(
                    "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                    got.shape()
                )));
            }
        }
        for (slot, (_, t)) in model.params_mut()?.into_iter().zip(params) {
            *slot = t;
        }
        Ok(model)
    }

    /// Shape summary used to validate checkpoints against a configuration.
    pub fn matches_config(&self, cfg: &ModelConfig) -> Result<()> {
        let cb = self.codebook()?;
        let problems = [
            (cb.k() != cfg.codebook_size, "codebook size"),
            (cb.dim() != cfg.feature_dim, "codebook dim"),
            (self.feature_dim() != cfg.feature_dim, "feature dim"),
            (self.encoder.window.radius != cfg.encoder_radius, "encoder radius"),
            (self.encoder.layers.len() != cfg.encoder_layers, "encoder depth"),
            (self.head_l1.window.radius != cfg.head_radius, "head radius"),
            (self.head_l1.layers.len() != cfg.head_layers, "head depth"),
        ];
        if let Some((_, what)) = problems.iter().find(|(bad, _)| *bad) {
            return Err(Error::state(format!("checkpoint does not match configuration: {what}")));
        }
        Ok(())
    }
}

fn push_net<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, net: &'a FrameNet) {
    for (i, layer) in net.layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), &layer.weight));
        out.push((format!("{prefix}.{i}.bias"), &layer.bias));
    }
}

fn batch_loss(
    model: &Model,
    batch: &[&Utterance],
    lang: Lang,
    weight: f64,
    heads_only: bool,
    grads: &mut ModelGrads,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = (weight / batch.len() as f64) as f32;
    let mut total = 0.0;
    for utt in batch {
        let (logits, trace) = model.forward_branch(&utt.features, lang)?;
        let loss = ctc_loss(&logits, &utt.transcript)?;
        total += loss.nll;
        if weight != 0.0 {
            model.backward_branch(&trace, &loss.grad, scale, heads_only, grads)?;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Combined loss of one L1 batch and one L2 batch, and its gradient.
///
/// Each batch loss is the mean per-utterance CTC negative log-likelihood.
/// With `heads_only`, encoder and codebook gradients stay zero.
pub fn multitask_loss(
    model: &Model,
    batch_l1: &[&Utterance],
    batch_l2: &[&Utterance],
    alpha: f64,
    heads_only: bool,
) -> Result<(LossReport, ModelGrads)> {
    check_alpha(alpha)?;
    if (batch_l1.is_empty() && alpha > 0.0) || (batch_l2.is_empty() && alpha < 1.0) {
        return Err(Error::invalid("a batch with non-zero weight is empty"));
    }
    let mut grads = model.zero_grads()?;
    let l1 = batch_loss(model, batch_l1, Lang::L1, alpha, heads_only, &mut grads)?;
    let l2 = batch_loss(model, batch_l2, Lang::L2, 1.0 - alpha, heads_only, &mut grads)?;
    let report = LossReport { step: 0, alpha, total: combine(alpha, l1, l2), l1, l2 };
    Ok((report, grads))
}

/// Global L2 norm of a set of gradient tensors.
pub fn grad_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    math::sqrt(grads.into_iter().map(Tensor::squared_norm).sum())
}

/// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grads(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grad_norm(grads.iter().map(|g| &**g));
    if norm > max_norm && norm > 0.0 {
        let f = (max_norm / norm) as f32;
        grads.iter_mut().for_each(|g| g.scale(f));
    }
    norm
}
